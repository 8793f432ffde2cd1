"""Exact finite-volume dynamics: the small-scale oracle.

Assembled generators are sparse sums of embedded local terms.  Heisenberg
evolution uses :func:`lattice_qms.krylov.expm_action`; stationary states come
from a dense SVD on small volumes, shifted inverse iteration with a sparse
LU factorization on medium ones, and Arnoldi on the short-time propagator
above that.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .algebra import (LocalOperator, LocalSuperoperator, Volume, embed_operator,
                      embed_superoperator_sparse, unvec, vec)
from .certificates import BoundParameters, bound_curves
from .errors import (ConvergenceError, IllConditionedKernelError, LatticeQMSError,
                     SupportError)
from .generators import InteractionFamily
from .krylov import expm_action

__all__ = [
    "FiniteVolumeGenerator",
    "StationaryState",
    "RelaxationTable",
    "assemble",
    "evolve_heisenberg",
    "evolve_schrodinger",
    "stationary_state",
    "spectral_gap",
    "relaxation_profile",
    "volume_convergence",
    "truncated_correlation",
    "boundary_sensitivity",
    "lr_velocity_fit",
    "fit_window",
]

DENSE_LIMIT = 1024
LU_LIMIT = 4096
ZERO_SV = 1e-9
AMBIGUOUS_SV = 1e-7


@dataclass(frozen=True, eq=False)
class FiniteVolumeGenerator:
    volume: Volume
    bulk_volume: Volume
    matrix: sp.csr_matrix
    term_catalog: tuple
    q: int = 2
    terms: tuple = field(default=(), repr=False)

    @property
    def hilbert_dim(self) -> int:
        return self.q ** len(self.volume)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def identity_residual(self) -> float:
        one = vec(np.eye(self.hilbert_dim))
        return float(np.abs(self.matrix @ one).max())

    def schrodinger(self) -> sp.csr_matrix:
        return self.matrix.conj().T.tocsr()

    def resum(self, v: np.ndarray) -> np.ndarray:
        """Apply the generator term by term (diagnostic re-summation)."""
        out = np.zeros_like(v, dtype=complex)
        for positions, m in self.terms:
            out += embed_superoperator_sparse(m, positions, len(self.volume), self.q) @ v
        return out


def _site_generator(site_generators, x) -> LocalSuperoperator:
    if isinstance(site_generators, LocalSuperoperator):
        return site_generators
    if callable(site_generators) and not isinstance(site_generators, Mapping):
        return site_generators(x)
    return site_generators[x]


def assemble(volume: Volume, site_generators, interactions: InteractionFamily | None = None,
             boundary: InteractionFamily | None = None, bulk: Volume | None = None) -> FiniteVolumeGenerator:
    """Sparse generator ``sum_x G(x) + sum_{Gamma in volume} V(Gamma)`` (+ boundary).

    ``site_generators`` is a single-site generator used at every site, a
    mapping from site to generator, or a callable ``site -> generator``.
    Boundary terms are restricted to supports inside ``volume \\ bulk``.
    """
    volume = volume if isinstance(volume, Volume) else Volume(tuple(volume))
    bulk = volume if bulk is None else bulk
    if not bulk <= volume:
        raise SupportError(f"bulk {bulk} is not inside {volume}")
    n = len(volume)
    terms, catalog = [], []
    q = None
    for i, x in enumerate(volume):
        g = _site_generator(site_generators, x)
        if len(g.support) != 1:
            raise SupportError(f"site generator for {x} has support {g.support}")
        q = g.q
        terms.append(((i,), g.matrix))
        catalog.append((Volume.of(x), "free"))
    families = [(interactions, "interaction")]
    if boundary is not None:
        families.append((boundary, "boundary"))
    for fam, kind in families:
        if fam is None:
            continue
        if not fam.translation_invariant:
            for gamma in fam.terms:
                if not gamma <= volume:
                    raise SupportError(f"{kind} term on {gamma} overflows {volume}")
        for gamma, sop in fam.terms_within(volume):
            if kind == "boundary" and not gamma.isdisjoint(bulk):
                if fam.translation_invariant:
                    continue
                raise SupportError(f"boundary term on {gamma} lies inside the bulk {bulk}")
            terms.append((tuple(volume.positions(gamma)), sop.matrix))
            catalog.append((gamma, kind))
    dim = (q or 2) ** (2 * n)
    total = sp.csr_matrix((dim, dim), dtype=complex)
    for positions, m in terms:
        total = total + embed_superoperator_sparse(m, positions, n, q)
    total.sum_duplicates()
    total.eliminate_zeros()
    return FiniteVolumeGenerator(volume, bulk, total.tocsr(), tuple(catalog), q, tuple(terms))


def _as_full(gen: FiniteVolumeGenerator, a) -> np.ndarray:
    if isinstance(a, LocalOperator):
        return embed_operator(a, gen.volume).matrix
    return np.asarray(a, dtype=complex)


def evolve_heisenberg(gen: FiniteVolumeGenerator, a, t: float, tol: float = 1e-9) -> LocalOperator:
    """``e^{tL}(A)`` on ``gen.volume`` via the Krylov action."""
    x = _as_full(gen, a)
    if t == 0:
        return LocalOperator(gen.volume, x, gen.q)
    w = expm_action(gen.matrix, vec(x), t, tol=tol)
    return LocalOperator(gen.volume, unvec(np.asarray(w)), gen.q)


def evolve_schrodinger(gen: FiniteVolumeGenerator, rho: np.ndarray, t: float, tol: float = 1e-9) -> np.ndarray:
    if t == 0:
        return np.array(rho, dtype=complex)
    return unvec(np.asarray(expm_action(gen.schrodinger(), vec(rho), t, tol=tol)))


@dataclass(frozen=True, eq=False)
class StationaryState:
    """Stationary state, or a kernel basis when the kernel is degenerate."""

    density_matrix: np.ndarray | None
    volume: Volume
    kernel_dimension: int
    residual: float
    singular_values: tuple = ()
    kernel_basis: tuple = ()
    q: int = 2

    def expectation(self, a) -> complex:
        if self.density_matrix is None:
            raise LatticeQMSError(f"kernel dimension {self.kernel_dimension}: no unique state")
        x = embed_operator(a, self.volume).matrix if isinstance(a, LocalOperator) else np.asarray(a)
        return complex(np.trace(self.density_matrix @ x))


def _normalize_state(v: np.ndarray) -> np.ndarray:
    rho = unvec(v)
    rho = rho / np.trace(rho)
    return (rho + rho.conj().T) / 2


def _finish(gen, basis_vecs, svals, lstar):
    svals = tuple(float(s) for s in svals)
    kdim = len(basis_vecs)
    if kdim == 1:
        rho = _normalize_state(basis_vecs[0])
        residual = float(np.linalg.norm(lstar @ vec(rho)))
        floor = float(np.linalg.eigvalsh(rho).min())
        if floor < -1e-9:
            raise ConvergenceError(f"stationary state has eigenvalue {floor} below -1e-9",
                                   achieved=floor)
        return StationaryState(rho, gen.volume, 1, residual, svals, (), gen.q)
    basis = tuple(unvec(b) for b in basis_vecs)
    residual = max(float(np.linalg.norm(lstar @ b)) for b in basis_vecs)
    return StationaryState(None, gen.volume, kdim, residual, svals, basis, gen.q)


def _classify(svals):
    svals = np.sort(np.asarray(svals))
    kdim = int(np.sum(svals < ZERO_SV))
    if kdim == 0:
        raise ConvergenceError(f"no kernel found; smallest singular value {svals[0]:.3e}",
                               achieved=float(svals[0]))
    if kdim < len(svals) and svals[kdim] < AMBIGUOUS_SV:
        raise IllConditionedKernelError(
            f"singular value {svals[kdim]:.3e} after a {kdim}-dimensional kernel is below "
            f"{AMBIGUOUS_SV}; uniqueness is ambiguous at working precision")
    return kdim


def _propagator_eigs(mat, k: int, tau: float = 2.0):
    """Rightmost eigenvalues of ``mat`` from Arnoldi on ``exp(tau mat)``.

    The propagator maps the spectrum's right edge to its dominant part, so
    no factorization is needed.  Returns ``(eigenvalues, eigenvectors)`` sorted
    by decreasing real part.
    """
    def matvec(x):
        return np.asarray(expm_action(mat, np.ravel(x), tau, tol=1e-11, m=30))

    op = spla.LinearOperator(mat.shape, matvec=matvec, dtype=complex)
    try:
        mu, vecs = spla.eigs(op, k=k, which="LM", tol=1e-10, v0=np.ones(mat.shape[0], complex))
    except spla.ArpackError as exc:
        raise ConvergenceError(f"eigensolver failed: {exc}") from exc
    lam = np.log(mu) / tau
    order = np.argsort(-lam.real)
    return lam[order], vecs[:, order]


def stationary_state(gen: FiniteVolumeGenerator, *, dense_limit: int = DENSE_LIMIT,
                     lu_limit: int = LU_LIMIT, shift: float = 1e-12, max_iter: int = 20) -> StationaryState:
    """Null space of the Schrodinger generator.

    Dense SVD up to ``dense_limit``; shifted inverse iteration with a sparse
    LU factorization up to ``lu_limit``; above that Arnoldi on the propagator
    followed by relaxation polishing.  ``singular_values`` holds the smallest
    singular values (or eigenvalue moduli on the propagator route).

    Raises
    ------
    IllConditionedKernelError
        When the first non-kernel value is below ``1e-7``.
    """
    lstar = gen.schrodinger()
    if gen.dim <= dense_limit:
        _, s, vh = la.svd(lstar.toarray())
        order = np.argsort(s)
        svals = s[order][:4]
        kdim = _classify(svals)
        vecs = [vh[order[k]].conj() for k in range(kdim)]
        return _finish(gen, vecs, svals, lstar)

    if gen.dim > lu_limit:
        lam, vecs = _propagator_eigs(lstar, k=3)
        svals = np.sort(np.abs(lam))
        kdim = _classify(svals)
        if kdim > 1:
            return _finish(gen, [vecs[:, k] for k in range(kdim)], svals, lstar)
        x = vecs[:, 0]
        for _ in range(max_iter):
            rho = _normalize_state(x)
            if np.linalg.norm(lstar @ vec(rho)) <= 1e-10:
                break
            x = np.asarray(expm_action(lstar, vec(rho), 20.0, tol=1e-12))
        return _finish(gen, [x], svals, lstar)

    shifted = (lstar - shift * sp.identity(gen.dim, format="csr")).tocsc()
    lu = spla.splu(shifted, permc_spec="MMD_AT_PLUS_A")
    inv = spla.LinearOperator(shifted.shape, matvec=lu.solve,
                              rmatvec=lambda x: lu.solve(x, trans="H"), dtype=complex)
    u, s_inv, _ = spla.svds(inv, k=3, which="LM", random_state=0, tol=1e-10)
    order = np.argsort(-s_inv)
    svals = 1.0 / s_inv[order]
    kdim = _classify(svals)
    if kdim > 1:
        vecs = [u[:, order[k]] for k in range(kdim)]
        return _finish(gen, vecs, svals, lstar)
    x = vec(np.eye(gen.hilbert_dim)) / gen.hilbert_dim
    for _ in range(max_iter):
        x = lu.solve(x)
        x = x / np.linalg.norm(x)
        rho = _normalize_state(x)
        if np.linalg.norm(lstar @ vec(rho)) <= 1e-10:
            break
    return _finish(gen, [x], svals, lstar)


def spectral_gap(gen: FiniteVolumeGenerator, *, dense_limit: int = DENSE_LIMIT, k: int = 6) -> float:
    """``-max Re(lambda)`` over eigenvalues with ``|lambda| > 1e-8``."""
    if gen.dim <= dense_limit:
        w = la.eigvals(gen.matrix.toarray())
    else:
        w, _ = _propagator_eigs(gen.matrix, k=min(k, gen.dim - 2))
    nonzero = w[np.abs(w) > 1e-8]
    if nonzero.size == 0:
        return 0.0
    gap = -float(np.max(nonzero.real))
    return 0.0 if abs(gap) < 1e-10 else gap


def fit_window(n: int) -> slice:
    """Drop the first 20% (transient) and the last 10% (noise floor)."""
    return slice(int(np.floor(0.2 * n)), n - int(np.floor(0.1 * n)))


def _fit_rate(times, values, floor=1e-12):
    times, values = np.asarray(times, float), np.asarray(values, float)
    sl = fit_window(len(times))
    t, v = times[sl], values[sl]
    keep = v > floor
    if keep.sum() < 2:
        return float("nan")
    slope = np.polyfit(t[keep], np.log(v[keep]), 1)[0]
    return float(-slope)


@dataclass(frozen=True)
class RelaxationTable:
    times: np.ndarray
    distances: np.ndarray
    bounds: np.ndarray | None
    fitted_rate: float
    dominated: bool | None


def relaxation_profile(gen: FiniteVolumeGenerator, a: LocalOperator, times: Sequence[float],
                       params: BoundParameters | None = None,
                       state: StationaryState | None = None) -> RelaxationTable:
    """``||e^{tL}(A) - rho(A) 1||`` on a time grid, with a fitted rate.

    With ``params`` the curve ``K e^{-g't} C^{|X|} |A|`` is evaluated and
    domination is checked pointwise.
    """
    times = np.asarray(sorted(times), float)
    state = state or stationary_state(gen)
    mean = state.expectation(a)
    # L(1) = 0, so the centered operator carries the whole distance and the
    # relative Krylov tolerance follows it down
    x = _as_full(gen, a) - mean * np.eye(gen.hilbert_dim)
    dist = np.empty(len(times))
    t_prev, cur = 0.0, vec(x)
    for i, t in enumerate(times):
        cur = np.asarray(expm_action(gen.matrix, cur, t - t_prev)) if t > t_prev else cur
        t_prev = t
        dist[i] = np.linalg.norm(unvec(cur), 2)
    bounds = dominated = None
    if params is not None:
        curve = bound_curves(params, len(a.support), norm_a=a.norm()).relaxation
        bounds = np.array([curve(t) for t in times])
        dominated = bool(np.all(dist <= bounds))
    return RelaxationTable(times, dist, bounds, _fit_rate(times, dist), dominated)


def volume_convergence(a: LocalOperator, volumes: Sequence[Volume], t: float,
                       builder: Callable[[Volume], FiniteVolumeGenerator],
                       params: BoundParameters | None = None) -> list[dict]:
    """Successive differences ``||e^{tL_V}(A) - e^{tL_V'}(A)||`` over nested volumes."""
    rows = []
    prev = None
    for vol in volumes:
        if not a.support <= vol:
            raise SupportError(f"observable support {a.support} not inside {vol}")
        cur = evolve_heisenberg(builder(vol), a, t, tol=1e-12)
        if prev is not None:
            if not prev.support <= vol:
                raise SupportError("volumes must be nested")
            diff = float(np.linalg.norm(embed_operator(prev, vol).matrix - cur.matrix, 2))
            dist = prev.support.distance_to_complement(a.support)
            row = {"volume": prev.support, "next_volume": vol, "distance": dist, "difference": diff}
            if params is not None:
                bound = bound_curves(params, len(a.support), norm_a=a.norm()).volume(dist)
                row.update(bound=bound, dominated=diff <= bound)
            rows.append(row)
        prev = cur
    return rows


def truncated_correlation(state: StationaryState, a: LocalOperator, b: LocalOperator) -> complex:
    """``rho(AB) - rho(A) rho(B)`` for disjoint supports."""
    if not a.support.isdisjoint(b.support):
        raise SupportError(f"supports {a.support} and {b.support} overlap")
    return state.expectation(a @ b) - state.expectation(a) * state.expectation(b)


def boundary_sensitivity(a: LocalOperator, bulk: Volume, outer: Volume, site_generators,
                         interactions: InteractionFamily | None, boundary: InteractionFamily) -> dict:
    """``|sigma(A) - rho(A)|`` between the boundary-perturbed and plain generators on ``outer``."""
    if not (a.support <= bulk and bulk <= outer):
        raise SupportError("need supp(A) inside bulk inside outer")
    plain = stationary_state(assemble(outer, site_generators, interactions))
    perturbed = stationary_state(assemble(outer, site_generators, interactions, boundary, bulk))
    dist = bulk.distance_to_complement(a.support)
    ref = plain.expectation(a)
    if perturbed.kernel_dimension == 1:
        return {"difference": abs(perturbed.expectation(a) - ref), "distance": dist,
                "kernel_dimension": 1, "flagged": False}
    x = embed_operator(a, outer).matrix
    values = []
    for basis in perturbed.kernel_basis:
        tr = np.trace(basis)
        if abs(tr) > 1e-8:
            values.append(abs(np.trace(basis @ x) / tr - ref))
    return {"difference": max(values, default=float("nan")), "distance": dist,
            "kernel_dimension": perturbed.kernel_dimension, "flagged": True}


def lr_velocity_fit(a: LocalOperator, times: Sequence[float], volumes: Sequence[tuple[Volume, Volume]],
                    site_generators, interactions: InteractionFamily | None,
                    boundary: InteractionFamily) -> dict:
    """Empirical ``(mu, v)`` from ``log diff = c - mu (d - v t)``.

    Each entry of ``volumes`` is ``(bulk, outer)``; the difference compares the
    outer dynamics with boundary terms against the plain bulk dynamics.
    """
    rows = []
    for bulk, outer in volumes:
        gen_b = assemble(bulk, site_generators, interactions)
        gen_o = assemble(outer, site_generators, interactions, boundary, bulk)
        dist = bulk.distance_to_complement(a.support)
        for t in times:
            inner = evolve_heisenberg(gen_b, a, t, tol=1e-12)
            full = evolve_heisenberg(gen_o, a, t, tol=1e-12)
            diff = float(np.linalg.norm(embed_operator(inner, outer).matrix - full.matrix, 2))
            rows.append((dist, float(t), diff))
    data = np.array(rows)
    if len(data) < 6:
        raise ValueError(f"insufficient data: {len(data)} points, need at least 6")
    keep = data[:, 2] > 1e-13
    if keep.sum() < 6:
        return {"mu": float("nan"), "v": float("nan"), "residual": float("nan"),
                "degenerate": True, "rows": rows}
    d, t, y = data[keep, 0], data[keep, 1], np.log(data[keep, 2])
    design = np.column_stack([np.ones_like(d), d, t])
    coef, res, *_ = np.linalg.lstsq(design, y, rcond=None)
    mu = -coef[1]
    v = coef[2] / mu if mu != 0 else float("nan")
    resid = float(np.sqrt(np.mean((design @ coef - y) ** 2)))
    return {"mu": float(mu), "v": float(v), "residual": resid, "degenerate": False, "rows": rows}
