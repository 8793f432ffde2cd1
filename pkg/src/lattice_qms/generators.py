"""Single-site quantum Markov generators and interaction families."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.linalg as la

from .algebra import (LocalOperator, LocalSuperoperator, Volume, _random_unitary, ancilla_extension,
                      apply_superoperator, batched_induced_norm, cb_norm, lift, unvec, vec)
from .errors import DegenerateKernelError

__all__ = [
    "LindbladSpec", "build_lindblad", "commutator_map", "QMSReport", "check_qms_generator",
    "SpectralProfile", "spectral_profile", "certify_M", "certify_M_grid",
    "InteractionFamily", "interaction_norm",
]

ZERO_EIGENVALUE_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class LindbladSpec:
    """Hamiltonian and jump operators of a generator in Lindblad form."""

    hamiltonian: LocalOperator
    kraus_ops: tuple = ()


def build_lindblad(spec: LindbladSpec) -> LocalSuperoperator:
    r"""Heisenberg-picture generator
    :math:`G(A) = i[H, A] + \sum_m K_m^* A K_m - \tfrac12\{K_m^* K_m, A\}`.

    Raises
    ------
    ValueError
        If the Hamiltonian is not Hermitian to 1e-12 or the jump operators
        live on a different support.
    """
    h = spec.hamiltonian
    if np.abs(h.matrix - h.matrix.conj().T).max() > 1e-12:
        raise ValueError("non-Hermitian Hamiltonian")
    for k in spec.kraus_ops:
        if k.support != h.support or k.q != h.q:
            raise ValueError(f"jump operator support {k.support} differs from {h.support}")
    d = h.dim
    eye = np.eye(d)
    g = 1j * (lift(h.matrix, eye) - lift(eye, h.matrix))
    for k in spec.kraus_ops:
        km = k.matrix
        kk = km.conj().T @ km
        g = g + lift(km.conj().T, km) - 0.5 * (lift(kk, eye) + lift(eye, kk))
    return LocalSuperoperator(h.support, g, h.q)


def commutator_map(h: LocalOperator) -> LocalSuperoperator:
    """``X -> i[h, X]``."""
    eye = np.eye(h.dim)
    return LocalSuperoperator(h.support, 1j * (lift(h.matrix, eye) - lift(eye, h.matrix)), h.q)


@dataclass(frozen=True)
class QMSReport:
    identity_residual: float
    hermiticity_residual: float
    ccp_min_eigenvalue: float
    verdict: bool


def _choi(s: np.ndarray, d: int) -> np.ndarray:
    """Choi matrix ``sum_ij E_ij (x) S(E_ij)``."""
    units = np.zeros((d * d, d, d), dtype=complex)
    for i in range(d):
        for j in range(d):
            units[i * d + j, i, j] = 1.0
    images = apply_superoperator(s, units)
    c = np.zeros((d * d, d * d), dtype=complex)
    for i in range(d):
        for j in range(d):
            c[i * d:(i + 1) * d, j * d:(j + 1) * d] = images[i * d + j]
    return c


def check_qms_generator(g: LocalSuperoperator, tol: float = 1e-10) -> QMSReport:
    """Diagnose whether ``g`` generates a quantum Markov semigroup.

    Checks identity preservation, Hermiticity preservation and conditional
    complete positivity of the Schrödinger-picture generator (Choi matrix
    compressed to the complement of the maximally entangled vector).
    """
    d = g.hilbert_dim
    s = g.matrix
    ident_res = float(np.linalg.norm(unvec(s @ vec(np.eye(d))), 2))

    herm_res = 0.0
    for i in range(d):
        for j in range(d):
            e = np.zeros((d, d), dtype=complex)
            e[i, j] = 1.0
            a = apply_superoperator(s, e.conj().T)
            b = apply_superoperator(s, e).conj().T
            herm_res = max(herm_res, float(np.abs(a - b).max()))

    choi = _choi(s.conj().T, d)
    omega = np.eye(d).reshape(-1) / np.sqrt(d)
    proj = np.eye(d * d) - np.outer(omega, omega.conj())
    compressed = proj @ choi @ proj
    compressed = 0.5 * (compressed + compressed.conj().T)
    min_eig = float(np.linalg.eigvalsh(compressed).min())

    verdict = ident_res <= tol and herm_res <= tol and min_eig >= -tol
    return QMSReport(ident_res, herm_res, min_eig, bool(verdict))


@dataclass(frozen=True, eq=False)
class SpectralProfile:
    """Relaxation data of one single-site generator.

    ``projection_Q`` maps ``X`` to ``Tr(stationary_state X) * 1``.
    """

    projection_Q: LocalSuperoperator
    stationary_state: np.ndarray
    gap_g: float
    amplitude_M: float
    rate_used: float
    generator: LocalSuperoperator = field(repr=False, default=None)

    @property
    def q(self) -> int:
        return self.generator.q


def _zero_eigenvalues(w):
    return np.flatnonzero(np.abs(w) < ZERO_EIGENVALUE_TOL)


def spectral_profile(g: LocalSuperoperator, rate: float | None = None, certify: bool = True) -> SpectralProfile:
    """Spectral projection, stationary state, gap and decay amplitude.

    Parameters
    ----------
    g : LocalSuperoperator
        Validated single-site generator (Heisenberg picture).
    rate : float, optional
        Decay rate at which ``M`` is certified; defaults to the gap.
    certify : bool
        If False, skip :func:`certify_M` and report ``amplitude_M = nan``.

    Raises
    ------
    DegenerateKernelError
        If 0 is not a simple eigenvalue.
    """
    w = la.eigvals(g.matrix)
    zeros = _zero_eigenvalues(w)
    if len(zeros) != 1:
        raise DegenerateKernelError(
            f"zero eigenvalue has multiplicity {len(zeros)}", multiplicity=len(zeros))
    nonzero = np.delete(w, zeros)
    gap = float(-nonzero.real.max()) if len(nonzero) else np.inf

    wa, va = la.eig(g.matrix.conj().T)
    k = int(np.argmin(np.abs(wa)))
    rho = unvec(va[:, k])
    rho = rho / np.trace(rho)
    rho = 0.5 * (rho + rho.conj().T)
    d = g.hilbert_dim
    q_mat = np.outer(vec(np.eye(d)), vec(rho).conj())
    proj = LocalSuperoperator(g.support, q_mat, g.q)

    rate = gap if rate is None else rate
    m = certify_M(g, rate, proj, gap=gap) if certify else float("nan")
    return SpectralProfile(proj, rho, gap, m, rate, g)


def certify_M_grid(gap: float, n_points: int = 200) -> np.ndarray:
    """Time grid: ``t = 0`` plus geometric points on ``[1e-3/gap, 20/gap]``."""
    return np.concatenate([[0.0], np.geomspace(1e-3 / gap, 20.0 / gap, n_points)])


def _decay_norms(g: LocalSuperoperator, proj: LocalSuperoperator, times, seed: int = 0) -> np.ndarray:
    comp = np.eye(g.matrix.shape[0]) - proj.matrix
    w, v = la.eig(g.matrix)
    if np.linalg.cond(v) < 1e8:
        v_inv = la.inv(v)
        props = np.stack([(v * np.exp(w * t)) @ v_inv for t in times])
    else:
        props = np.stack([la.expm(t * g.matrix) for t in times])
    exts = np.stack([ancilla_extension(p @ comp) for p in props])
    dk = g.hilbert_dim ** 2
    rng = np.random.default_rng(seed)
    best, arg = batched_induced_norm(exts, [np.eye(dk, dtype=complex)], tol=1e-9)
    # seeded random probes at low iteration count, then polish from the best
    probes = [_random_unitary(rng, dk) for _ in range(2)]
    again, arg2 = batched_induced_norm(exts, probes, tol=1e-9, maxiter=20)
    improved = again > best
    best[improved], arg[improved] = again[improved], arg2[improved]
    # neighbouring times have nearby maximizers
    for seeds, cap in ((np.roll(arg, 1, axis=0), 20), (arg, 100)):
        again, arg2 = batched_induced_norm(exts, [seeds], tol=1e-9, maxiter=cap)
        improved = again > best
        best[improved], arg[improved] = again[improved], arg2[improved]
    return best


def certify_M(g: LocalSuperoperator, rate: float, projection: LocalSuperoperator | None = None,
              safety: float = 1.05, gap: float | None = None) -> float:
    r"""Amplitude ``M`` with ``||e^{tG}(1-Q)||_cb <= M e^{-rate t}`` on a time grid.

    The supremum of :math:`e^{rate\,t}\|e^{tG}(1-Q)\|_{cb}` is sampled on
    :func:`certify_M_grid` and inflated by ``safety``.  Beyond the last grid
    point the sampled quantity decays like :math:`e^{-(gap-rate)(t-T_{max})}`
    (no growth), so the grid maximum also covers the tail.

    Raises
    ------
    ValueError
        If ``rate`` exceeds the gap or is negative.
    """
    if projection is None or gap is None:
        prof = spectral_profile(g, certify=False)
        projection = projection or prof.projection_Q
        gap = prof.gap_g if gap is None else gap
    if rate < 0:
        raise ValueError("rate must be non-negative")
    if rate > gap * (1 + 1e-12):
        raise ValueError(f"rate {rate} exceeds the gap {gap}")
    times = certify_M_grid(gap)
    norms = _decay_norms(g, projection, times)
    m = float(np.max(np.exp(rate * times) * norms)) * safety
    return max(m, 1.0)


@dataclass(eq=False)
class InteractionFamily:
    """Local perturbation terms keyed by their (connected) supports.

    With ``translation_invariant=True`` the stored keys are the terms of a
    one-site unit cell and every lattice translate is implied.
    """

    terms: Mapping
    decay_length_l: float = 1.0
    translation_invariant: bool = False
    _cb_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        terms = {}
        for gamma, sop in dict(self.terms).items():
            gamma = gamma if isinstance(gamma, Volume) else Volume(tuple(gamma))
            if len(gamma) == 0 or not gamma.is_connected():
                raise ValueError(f"interaction support {gamma} must be non-empty and connected")
            if sop.support.sites != gamma.sites:
                raise ValueError(f"term support {sop.support} does not match key {gamma}")
            d = sop.hilbert_dim
            if np.abs(sop(np.eye(d))).max() > 1e-12:
                raise ValueError(f"term on {gamma} does not annihilate the identity")
            terms[gamma] = sop
        self.terms = dict(sorted(terms.items(), key=lambda kv: kv[0].key))
        if self.decay_length_l <= 0:
            raise ValueError("decay length must be positive")

    @classmethod
    def empty(cls, l: float = 1.0) -> "InteractionFamily":
        return cls({}, l)

    def __len__(self):
        return len(self.terms)

    def term_cb_norm(self, gamma: Volume) -> float:
        base = self._base_key(gamma)
        if base not in self._cb_cache:
            self._cb_cache[base] = cb_norm(self._base_term(base))
        return self._cb_cache[base]

    def _base_key(self, gamma: Volume):
        if not self.translation_invariant:
            return gamma
        for base in self.terms:
            shift = tuple(a - b for a, b in zip(gamma.sites[0], base.sites[0]))
            if base.translate(shift) == gamma:
                return base
        raise KeyError(gamma)

    def _base_term(self, base):
        return self.terms[base]

    def term(self, gamma: Volume) -> LocalSuperoperator:
        base = self._base_key(gamma)
        sop = self.terms[base]
        return sop if base == gamma else LocalSuperoperator(gamma, sop.matrix, sop.q)

    def terms_within(self, volume: Volume) -> list:
        """All ``(gamma, term)`` pairs with ``gamma`` inside ``volume``."""
        found = {}
        if not self.translation_invariant:
            for gamma, sop in self.terms.items():
                if gamma <= volume:
                    found[gamma] = sop
        else:
            for base, sop in self.terms.items():
                anchor = base.sites[0]
                for x in volume:
                    shift = tuple(a - b for a, b in zip(x, anchor))
                    gamma = base.translate(shift)
                    if gamma <= volume:
                        found[gamma] = LocalSuperoperator(gamma, sop.matrix, sop.q)
        return sorted(found.items(), key=lambda kv: kv[0].key)

    def terms_touching(self, region: Volume) -> list:
        """All ``(gamma, term)`` pairs with ``gamma`` intersecting ``region``."""
        found = {}
        if not self.translation_invariant:
            for gamma, sop in self.terms.items():
                if not gamma.isdisjoint(region):
                    found[gamma] = sop
        else:
            for base, sop in self.terms.items():
                for y in base:
                    for x in region:
                        shift = tuple(a - b for a, b in zip(x, y))
                        gamma = base.translate(shift)
                        found[gamma] = LocalSuperoperator(gamma, sop.matrix, sop.q)
        return sorted(found.items(), key=lambda kv: kv[0].key)

    @property
    def range(self) -> int:
        """Largest lattice diameter of a term support."""
        return max((g.distance(Volume.of(x)) if len(g) == 1 else
                    max(sum(abs(u - v) for u, v in zip(x, y)) for x in g for y in g)
                    for g in self.terms for x in g.sites[:1]), default=0)


def interaction_norm(fam: InteractionFamily, l: float | None = None) -> float:
    r"""Weighted norm :math:`\sup_x \sum_{\Gamma \ni x} e^{|\Gamma|/l} \|V(\Gamma)\|_{cb}`.

    For translation-invariant families the supremum is taken over the one-site
    unit cell: every base term contributes once per site of its support.
    """
    l = fam.decay_length_l if l is None else l
    if l <= 0:
        raise ValueError("decay length must be positive")
    if not fam.terms:
        return 0.0
    if fam.translation_invariant:
        return float(sum(len(g) * np.exp(len(g) / l) * fam.term_cb_norm(g) for g in fam.terms))
    per_site: dict = {}
    for gamma in fam.terms:
        w = np.exp(len(gamma) / l) * fam.term_cb_norm(gamma)
        for x in gamma:
            per_site[x] = per_site.get(x, 0.0) + w
    return float(max(per_site.values()))
