"""Ready-to-run presets: dissipative Ising chain and self-consistent heat baths."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.linalg as la

from .algebra import SM, SP, SX, SZ, LocalOperator, LocalSuperoperator, Volume, lift
from .errors import ConvergenceError
from .finite_volume import FiniteVolumeGenerator, StationaryState, assemble, stationary_state
from .generators import (InteractionFamily, LindbladSpec, SpectralProfile, build_lindblad,
                         commutator_map, spectral_profile)

__all__ = [
    "LatticeModel",
    "ising_site_generator",
    "ising_model",
    "pinning_boundary",
    "davies_qubit_bath",
    "detailed_balance_residual",
    "gibbs_state",
    "HeatBathChain",
    "CurrentReport",
    "currents",
    "self_consistent_profile",
    "fourier_scaling",
]

LOG2 = math.log(2.0)


@dataclass(eq=False)
class LatticeModel:
    """Single-site generators plus an interaction family on a default volume."""

    name: str
    volume: Volume
    site_generators: object
    interactions: InteractionFamily
    params: dict = field(default_factory=dict)

    def site_generator(self, x) -> LocalSuperoperator:
        sg = self.site_generators
        if isinstance(sg, LocalSuperoperator):
            return sg
        return sg(x) if callable(sg) else sg[x]

    @cached_property
    def profile(self) -> SpectralProfile:
        """Spectral data of the site generator at the first site."""
        return spectral_profile(self.site_generator(self.volume.sites[0]))

    def generator(self, volume: Volume | None = None, boundary: InteractionFamily | None = None,
                  bulk: Volume | None = None) -> FiniteVolumeGenerator:
        return assemble(volume or self.volume, self.site_generators, self.interactions, boundary, bulk)

    def site_operator(self, x, matrix) -> LocalOperator:
        return LocalOperator.site(x, matrix)


def ising_site_generator(h: float, site=0) -> LocalSuperoperator:
    """``i[h sigma3, A] + sigma+ A sigma- - 1/2 {A, sigma+ sigma-}``."""
    return build_lindblad(LindbladSpec(LocalOperator.site(site, h * SZ), (LocalOperator.site(site, SM),)))


def ising_coupling(J: float) -> InteractionFamily:
    edge = Volume.chain(2)
    term = commutator_map(LocalOperator(edge, J * np.kron(SX, SX)))
    return InteractionFamily({edge: term}, 1.0 / (LOG2 + 1.0), translation_invariant=True)


def ising_model(h: float, J: float, N: int, centered: bool = False) -> LatticeModel:
    """Dissipative transverse-field Ising chain of ``N`` sites.

    Sites are ``0..N-1``, or ``-(N//2)..N//2`` when ``centered`` (odd ``N``).
    The coupling family is translation invariant with decay length
    ``1/l = log 2 + 1``.
    """
    if N < 1:
        raise ValueError("chain length must be at least 1")
    vol = Volume.centered_chain(N) if centered else Volume.chain(N)
    gen = ising_site_generator(h)
    fam = ising_coupling(J) if N > 1 or J != 0 else InteractionFamily.empty()
    return LatticeModel("ising", vol, gen, fam, {"h": h, "J": J, "N": N})


def pinning_boundary(kappa: float = 1.0) -> InteractionFamily:
    """Translation-invariant dissipative pinning to spin up, ``sqrt(kappa) sigma+``."""
    site = Volume.of(0)
    k = LocalOperator(site, math.sqrt(kappa) * SP)
    term = build_lindblad(LindbladSpec(LocalOperator(site, np.zeros((2, 2))), (k,)))
    return InteractionFamily({site: term}, 1.0, translation_invariant=True)


def _mean_occupation(T: float, h: float) -> float:
    x = 2.0 * h / T
    return 0.0 if x > 700 else 1.0 / math.expm1(x)


def davies_qubit_bath(T: float, h: float, gamma: float, site=0) -> LindbladSpec:
    """Thermal qubit bath for ``H = h sigma3`` at temperature ``T``.

    Jump operators ``sqrt(gamma(n+1)) sigma-`` and ``sqrt(gamma n) sigma+``
    with ``n = 1/(e^{2h/T} - 1)``.  No Hamiltonian part is included, so the
    generator is self-adjoint in every KMS-weighted inner product.
    """
    if not T > 0:
        raise ValueError(f"temperature must be positive, got {T}")
    if not gamma > 0:
        raise ValueError(f"bath rate must be positive, got {gamma}")
    n = _mean_occupation(T, h)
    kraus = [LocalOperator.site(site, math.sqrt(gamma * (n + 1.0)) * SM)]
    if n > 0:
        kraus.append(LocalOperator.site(site, math.sqrt(gamma * n) * SP))
    return LindbladSpec(LocalOperator.site(site, np.zeros((2, 2))), tuple(kraus))


def gibbs_state(h: float, T: float) -> np.ndarray:
    w = la.expm(-h * SZ / T)
    return w / np.trace(w)


def detailed_balance_residual(g: LocalSuperoperator, rho: np.ndarray, s: float = 0.5) -> float:
    """``|W G - G^* W|`` for the weight ``W(X) = rho^s X rho^{1-s}``."""
    weight = lift(la.fractional_matrix_power(rho, s), la.fractional_matrix_power(rho, 1.0 - s))
    m = g.matrix
    return float(np.abs(weight @ m - m.conj().T @ weight).max())


@dataclass(frozen=True)
class HeatBathChain:
    """Qubit chain with one thermal bath per site and flip-flop coupling."""

    N: int
    temperatures: tuple
    h: float = 0.5
    gamma: float = 0.5
    J: float = 0.05
    kms_s: float = 0.5

    def __post_init__(self):
        temps = tuple(float(t) for t in self.temperatures)
        if len(temps) != self.N:
            raise ValueError(f"need {self.N} temperatures, got {len(temps)}")
        if min(temps) <= 0:
            raise ValueError("temperatures must be positive")
        if not 0 < self.kms_s < 1:
            raise ValueError("kms_s must lie in (0, 1)")
        object.__setattr__(self, "temperatures", temps)

    @property
    def volume(self) -> Volume:
        return Volume.chain(self.N, start=1)

    def with_temperatures(self, temps) -> "HeatBathChain":
        return replace(self, N=len(temps), temperatures=tuple(temps))

    def energy(self, x) -> LocalOperator:
        return LocalOperator.site(x, self.h * SZ)

    def site_generator(self, x) -> LocalSuperoperator:
        t = self.temperatures[x[0] - 1]
        return build_lindblad(davies_qubit_bath(t, self.h, self.gamma, site=x))

    def bond_term(self, x) -> LocalSuperoperator:
        """``i[J(s+ s- + s- s+), .]`` on the bond ``{x, x+1}``."""
        bond = Volume((x, (x[0] + 1,)))
        hop = self.J * (np.kron(SP, SM) + np.kron(SM, SP))
        return commutator_map(LocalOperator(bond, hop))

    @property
    def interactions(self) -> InteractionFamily:
        terms = {}
        for k in range(1, self.N):
            term = self.bond_term((k,))
            terms[term.support] = term
        return InteractionFamily(terms)

    def model(self) -> LatticeModel:
        sites = {x: self.site_generator(x) for x in self.volume}
        return LatticeModel("heatbath", self.volume, sites, self.interactions,
                            {"h": self.h, "gamma": self.gamma, "J": self.J,
                             "temperatures": list(self.temperatures)})

    def generator(self) -> FiniteVolumeGenerator:
        return self.model().generator()

    def product_gibbs(self) -> np.ndarray:
        out = np.ones((1, 1))
        for t in self.temperatures:
            out = np.kron(out, gibbs_state(self.h, t))
        return out


@dataclass(frozen=True)
class CurrentReport:
    """Bond currents ``j_2..j_N``, bath currents ``J_1..J_N`` and residuals.

    ``j_x`` is the energy current from site ``x-1`` into ``x``; the residual at
    ``x`` is ``j_x - j_{x+1} + J_x`` with ``j_1 = j_{N+1} = 0``.
    """

    bond_currents: np.ndarray
    bath_currents: np.ndarray
    conservation_residuals: np.ndarray


def currents(chain: HeatBathChain, state: StationaryState) -> CurrentReport:
    n = chain.N
    bond = np.zeros(n - 1)
    bath = np.zeros(n)
    for k in range(1, n + 1):
        x = (k,)
        e = chain.energy(x)
        bath[k - 1] = state.expectation(chain.site_generator(x)(e)).real
        if k > 1:
            term = chain.bond_term((k - 1,))
            bond[k - 2] = state.expectation(term(e)).real
    padded = np.concatenate([[0.0], bond, [0.0]])
    residual = padded[:-1] - padded[1:] + bath
    return CurrentReport(bond, bath, residual)


def _bulk_currents(template: HeatBathChain, t_left, t_right, bulk):
    chain = template.with_temperatures([t_left, *bulk, t_right])
    state = stationary_state(chain.generator())
    return currents(chain, state), chain, state


def self_consistent_profile(template: HeatBathChain, t_left: float, t_right: float, *,
                            tol: float = 1e-8, max_iter: int = 30, fd_step: float = 1e-6,
                            threads: int = 1):
    """Bulk temperatures with vanishing bulk bath currents.

    Damped Newton with a forward-difference Jacobian, step halving up to 8
    times, linear initial guess.  Returns ``(temperatures, j_sc, report)``.
    """
    n = template.N
    if n < 3:
        raise ValueError("need at least 3 sites")
    guess = np.linspace(t_left, t_right, n)[1:-1]

    def residual(bulk):
        rep, _, _ = _bulk_currents(template, t_left, t_right, bulk)
        return rep.bath_currents[1:-1], rep

    f, rep = residual(guess)
    trace = [float(np.abs(f).max())]
    for _ in range(max_iter):
        if np.abs(f).max() <= tol:
            break
        steps = fd_step * np.maximum(1.0, np.abs(guess))

        def column(k):
            shifted = guess.copy()
            shifted[k] += steps[k]
            return (residual(shifted)[0] - f) / steps[k]

        with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
            jac = np.column_stack(list(pool.map(column, range(n - 2))))
        delta = np.linalg.solve(jac, -f)
        lam = 1.0
        for _ in range(9):
            cand = guess + lam * delta
            if np.all(cand > 0):
                f_new, rep_new = residual(cand)
                if np.abs(f_new).max() < np.abs(f).max():
                    break
            lam /= 2
        else:
            raise ConvergenceError(
                "Newton step failed after 8 halvings; try a smaller temperature difference",
                achieved=trace[-1], trace=trace)
        guess, f, rep = cand, f_new, rep_new
        trace.append(float(np.abs(f).max()))
    else:
        if np.abs(f).max() > tol:
            raise ConvergenceError("Newton iteration did not converge; try a smaller temperature "
                                   "difference", achieved=trace[-1], trace=trace)
    temps = np.concatenate([[t_left], guess, [t_right]])
    j_sc = float(rep.bath_currents[0])
    return temps, j_sc, rep


def fourier_scaling(template: HeatBathChain, t_left: float, t_right: float,
                    n_list: Sequence[int], threads: int = 1) -> list[dict]:
    """Self-consistent current and temperature steps for each chain length."""
    rows = []
    for n in n_list:
        chain = template.with_temperatures([t_left] * n)
        temps, j_sc, rep = self_consistent_profile(chain, t_left, t_right, threads=threads)
        steps = np.diff(temps)
        # conductivity per bond, j = kappa (T_x - T_{x+1})
        kappa = [float(j_sc / -d) if d != 0 else float("nan") for d in steps]
        rows.append({"N": n, "j_sc": j_sc, "max_dT": float(np.abs(steps).max()),
                     "j_sc_N": j_sc * n, "max_dT_N": float(np.abs(steps).max()) * n,
                     "temperatures": temps.tolist(), "kappa": kappa})
    return rows
