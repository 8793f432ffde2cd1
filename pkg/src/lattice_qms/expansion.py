"""Diagram expansion of thermodynamic-limit stationary expectations.

A diagram is a sequence of interaction supports ``Gamma_1..Gamma_n`` and
excited sets ``E_1..E_{n+1}`` with

    E_1 ⊆ X,   E_{i+1} \\ Gamma_i = E_i \\ Gamma_i,   E_i ∩ Gamma_i ≠ ∅.

With ``E_{n+1} = ∅`` the fully time-integrated term is a scalar multiple of the
identity.  The nested time integrals collapse to a chain of resolvents

    R(E) = ∫_0^∞ e^{sG} P(E) ds = -(sum_{x in E} G_x)^{-1} on range P(E),

so a stationary term is ``rho_G( V_n R(E_n) ... V_1 R(E_1) (A) )``.  Terms are
evaluated on the minimal volume ``X ∪ D`` (they do not depend on anything
outside it) with operators stored as rc tensors, see
:func:`lattice_qms.algebra.apply_local_rc`.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import reduce
from typing import Iterator, Sequence

import numpy as np
import scipy.linalg as la

from .algebra import (LocalOperator, LocalSuperoperator, Volume, apply_local_rc, embed_operator,
                      embed_superoperator, extend_tensor, superop_rc)
from .certificates import BoundParameters, truncation_tail
from .errors import HypothesisViolation, QuadratureBudgetExceeded, SingularRestrictionError, SupportError
from .generators import InteractionFamily, SpectralProfile, interaction_norm, spectral_profile

__all__ = [
    "Diagram",
    "CertifiedValue",
    "SiteData",
    "check_constraints",
    "projection",
    "enumerate_diagrams",
    "resolvent",
    "resolvent_quadrature",
    "stationary_term",
    "stationary_expectation",
    "quadrature_term",
    "correlation_estimate",
]


@dataclass(frozen=True)
class Diagram:
    gammas: tuple
    ees: tuple

    @property
    def order(self) -> int:
        return len(self.gammas)

    @property
    def domain_D(self) -> Volume:
        return reduce(lambda a, b: a | b, self.gammas, Volume(()))

    @property
    def key(self) -> tuple:
        parts = []
        for i, g in enumerate(self.gammas):
            parts += [self.ees[i].key, g.key]
        parts.append(self.ees[-1].key)
        return tuple(parts)

    @property
    def stationary(self) -> bool:
        return len(self.ees[-1]) == 0


def check_constraints(x: Volume, diag: Diagram) -> bool:
    """Compatibility rules of a diagram relative to the observable support ``x``."""
    n = len(diag.gammas)
    if n < 1 or len(diag.ees) != n + 1:
        return False
    if not diag.ees[0] <= x:
        return False
    for i, gamma in enumerate(diag.gammas):
        e, e_next = diag.ees[i], diag.ees[i + 1]
        if len(gamma) == 0 or len(e) == 0:
            return False
        if (e_next - gamma) != (e - gamma):
            return False
        if e.isdisjoint(gamma):
            return False
        if not e_next <= (e | gamma):
            return False
    return True


@dataclass
class CertifiedValue:
    """Estimate plus its certified truncation bound."""

    value: complex
    truncation_bound: float
    order_used: int
    diagram_count: int
    partial_sums: list = field(default_factory=list)
    pruned_mass: float = 0.0
    certified: bool = True

    def as_dict(self) -> dict:
        return {"value": [self.value.real, self.value.imag],
                "truncation_bound": self.truncation_bound, "order_used": self.order_used,
                "diagram_count": self.diagram_count, "pruned_mass": self.pruned_mass,
                "certified": self.certified,
                "partial_sums": [[c.real, c.imag] for c in self.partial_sums]}


class SiteData:
    """Per-site spectral data of a model, cached by generator identity.

    ``model`` is anything with ``site_generator(x)`` and ``interactions``.
    """

    def __init__(self, model):
        self.model = model
        self.interactions: InteractionFamily = model.interactions
        self._by_gen: dict = {}

    def _entry(self, x):
        g = self.model.site_generator(x)
        key = id(g)
        if key not in self._by_gen:
            prof = spectral_profile(g, certify=False)
            g_rc = superop_rc(g.matrix, 1, g.q)
            q_rc = superop_rc(prof.projection_Q.matrix, 1, g.q)
            lam, vecs = la.eig(g_rc)
            zero = np.abs(lam) < 1e-8
            diag_ok = np.linalg.cond(vecs) < 1e8 and zero.sum() == 1
            entry = {"gen": g, "profile": prof, "q_rc": q_rc, "g_rc": g_rc, "lam": lam,
                     "zero": zero, "diag_ok": diag_ok,
                     "v": vecs, "v_inv": la.inv(vecs) if diag_ok else None,
                     "rho_rc": prof.stationary_state.T.reshape(-1)}
            self._by_gen[key] = (g, entry)
        return self._by_gen[key][1]

    def profile(self, x) -> SpectralProfile:
        return self._entry(x)["profile"]

    def gap(self, sites) -> float:
        return min(self.profile(x).gap_g for x in sites)

    def q(self, x) -> int:
        return self._entry(x)["gen"].q


def _as_volume(v) -> Volume:
    return v if isinstance(v, Volume) else Volume(tuple(v))


# --- dense reference operators ---------------------------------------------------

def projection(e: Volume, vol: Volume, model) -> LocalSuperoperator:
    """``(⊗_{x in E} (1 - Q_x)) ⊗ (⊗_{x in vol \\ E} Q_x)`` on ``vol``."""
    e, vol = _as_volume(e), _as_volume(vol)
    if not e <= vol:
        raise SupportError(f"excited set {e} not inside {vol}")
    data = model if isinstance(model, SiteData) else SiteData(model)
    out = None
    for x in vol:
        qx = data.profile(x).projection_Q
        factor = qx if x not in e else LocalSuperoperator(qx.support, np.eye(qx.matrix.shape[0]) - qx.matrix, qx.q)
        factor = LocalSuperoperator(Volume.of(x), factor.matrix, factor.q)
        out = factor if out is None else out @ factor
    return out


def _free_generator(vol: Volume, data: SiteData) -> np.ndarray:
    total = None
    for x in vol:
        g = data.profile(x).generator
        term = embed_superoperator(LocalSuperoperator(Volume.of(x), g.matrix, g.q), vol).matrix
        total = term if total is None else total + term
    return total


def resolvent(e: Volume, model, *, cond_limit: float = 1e10) -> LocalSuperoperator:
    """``R(E) = -(G_E restricted to range P(E))^{-1} P(E)`` on the support ``E``.

    Solved as ``(G_E - (1 - P(E))) Y = -P(E)``: the shift leaves the excited
    block untouched and keeps the complementary block invertible.

    Raises
    ------
    SingularRestrictionError
        If the restricted generator is numerically singular.
    """
    e = _as_volume(e)
    if len(e) == 0:
        raise ValueError("resolvent needs a non-empty excited set")
    data = model if isinstance(model, SiteData) else SiteData(model)
    g_e = _free_generator(e, data)
    p = projection(e, e, data).matrix
    shifted = g_e - (np.eye(p.shape[0]) - p)
    s = np.linalg.svd(shifted, compute_uv=False)
    if s[-1] < 1e-10 or s[0] / s[-1] > cond_limit:
        raise SingularRestrictionError(
            f"restricted generator on {e} is singular (smallest singular value {s[-1]:.3e})")
    return LocalSuperoperator(e, -np.linalg.solve(shifted, p), data.q(e.sites[0]))


def _gauss_panels(t: float, nodes: int, first: float = 0.5):
    """Composite Gauss-Legendre nodes on ``[0, t]`` with geometric panels."""
    if t <= 0:
        return np.zeros(0), np.zeros(0)
    edges = [0.0]
    h = min(first, t)
    while edges[-1] < t:
        edges.append(min(t, edges[-1] + h))
        h *= 2.0
    x, w = np.polynomial.legendre.leggauss(nodes)
    pts, wts = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        pts.append((b - a) / 2 * x + (a + b) / 2)
        wts.append((b - a) / 2 * w)
    return np.concatenate(pts), np.concatenate(wts)


def _propagator(g: np.ndarray):
    lam, v = la.eig(g)
    if np.linalg.cond(v) < 1e8:
        v_inv = la.inv(v)
        return lambda s: (v * np.exp(s * lam)) @ v_inv
    return lambda s: la.expm(s * g)


def resolvent_quadrature(e: Volume, model, T: float, nodes: int = 20) -> LocalSuperoperator:
    """``∫_0^T e^{sG_E} P(E) ds`` by composite Gauss-Legendre quadrature."""
    e = _as_volume(e)
    data = model if isinstance(model, SiteData) else SiteData(model)
    g_e = _free_generator(e, data)
    p = projection(e, e, data).matrix
    prop = _propagator(g_e)
    pts, wts = _gauss_panels(T, nodes)
    total = sum(w * prop(s) for s, w in zip(pts, wts)) @ p if len(pts) else np.zeros_like(p)
    return LocalSuperoperator(e, total, data.q(e.sites[0]))


# --- fast tensor evaluation -----------------------------------------------------

def _op_tensor(a: LocalOperator) -> np.ndarray:
    return np.asarray(a.matrix).reshape([a.q] * (2 * len(a.support)))


def _apply_projection_rest(y, sites, e, data):
    n = len(sites)
    for p, x in enumerate(sites):
        if x not in e:
            y = apply_local_rc(data._entry(x)["q_rc"], [p], y, n)
    return y


def _apply_resolvent_tensor(y, sites: tuple, e: Volume, data: SiteData) -> np.ndarray:
    """``R(E)`` applied to the rc tensor ``y`` on ``sites`` (``E ⊆ sites``)."""
    n = len(sites)
    y = _apply_projection_rest(y, sites, e, data)
    entries = [(sites.index(x), data._entry(x)) for x in e]
    if not all(ent["diag_ok"] for _, ent in entries):
        vol = Volume(sites)
        r = embed_superoperator(resolvent(e, data), vol)
        q = data.q(sites[0])
        mat = y.reshape(q ** n, q ** n)
        out = r(mat)
        return out.reshape(y.shape)
    for p, ent in entries:
        y = apply_local_rc(ent["v_inv"], [p], y, n)
    q = y.shape[0]
    denom = np.zeros([1] * (2 * n), dtype=complex)
    mask = np.ones([1] * (2 * n), dtype=bool)
    for p, ent in entries:
        shape = [1] * (2 * n)
        shape[p] = shape[n + p] = q
        denom = denom + ent["lam"].reshape(q, q).reshape(shape)
        mask = mask & ~ent["zero"].reshape(q, q).reshape(shape)
    denom = np.broadcast_to(denom, y.shape)
    mask = np.broadcast_to(mask, y.shape)
    if np.any(np.abs(denom[mask]) < 1e-10):
        raise SingularRestrictionError(f"restricted generator on {e} has a vanishing eigenvalue sum")
    safe = np.where(mask, denom, 1.0)
    y = np.where(mask, -y / safe, 0.0)
    for p, ent in entries:
        y = apply_local_rc(ent["v"], [p], y, n)
    return y


def _full_expectation(y, sites, data) -> complex:
    """``rho_G(y)`` for the product of single-site stationary states."""
    n = len(sites)
    perm = [a for p in range(n) for a in (p, n + p)]
    flat = y.transpose(perm).reshape(-1)
    weight = reduce(np.kron, [data._entry(x)["rho_rc"] for x in sites], np.ones(1))
    return complex(flat @ weight)


def _union_sites(sites: tuple, gamma: Volume) -> tuple:
    return tuple(sorted(set(sites) | set(gamma.sites)))


class _Weights:
    """Lemma-type weights ``e^{|Gamma|/l''} |V(Gamma)|_cb / ((g-g')|E|)``."""

    def __init__(self, fam: InteractionFamily, params: BoundParameters | None):
        self.fam = fam
        self.params = params

    def factor(self, gamma: Volume, e_size: int) -> float:
        if self.params is None:
            return float("nan")
        p = self.params
        return math.exp(len(gamma) / p.l_dprime) * self.fam.term_cb_norm(gamma) / ((p.g - p.g_prime) * e_size)

    def max_factor(self) -> float:
        if self.params is None or not self.fam.terms:
            return 0.0
        return max(self.factor(g, 1) for g in self.fam.terms)


def _subsets(vol: Volume):
    return list(vol.subsets())


def _walk(x: Volume, fam: InteractionFamily, n_max: int, weights: _Weights, floor: float,
          e1_list=None) -> Iterator[tuple]:
    """Depth-first traversal yielding ``("node", diagram, weight)`` and ``("pruned", weight, depth)``."""
    max_f = weights.max_factor()
    use_floor = floor > 0 and weights.params is not None

    def can_reach(w, depth):
        # the largest weight any descendant (or the node itself) can still attain
        if not use_floor:
            return True
        best = w * max(1.0, max_f) ** (n_max - depth)
        return best > floor

    def rec(gammas, ees, w):
        depth = len(gammas)
        e = ees[-1]
        if depth == n_max or len(e) == 0:
            return
        for gamma, _ in fam.terms_touching(e):
            wf = w * weights.factor(gamma, len(e)) if weights.params is not None else w
            base = e - gamma
            for s in _subsets(gamma):
                e_next = base | s
                gs, es = gammas + (gamma,), ees + (e_next,)
                if not can_reach(wf, depth + 1):
                    yield ("pruned", wf, depth + 1)
                    continue
                yield ("node", Diagram(gs, es), wf)
                yield from rec(gs, es, wf)

    starts = e1_list if e1_list is not None else [s for s in x.subsets() if len(s) > 0]
    for e1 in starts:
        yield from rec((), (e1,), 1.0)


def enumerate_diagrams(x, interactions: InteractionFamily, n_max: int, weight_floor: float = 0.0,
                       params: BoundParameters | None = None) -> list[Diagram]:
    """All compatible diagrams of order ``<= n_max`` whose weight exceeds the floor.

    ``weight_floor = 0`` disables the filter; a positive floor needs ``params``
    for the weights.  Emission order is by order, then lexicographic key.
    """
    x = _as_volume(x)
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    if weight_floor == math.inf:
        return []
    if weight_floor > 0 and params is None:
        raise ValueError("a positive weight floor needs bound parameters")
    weights = _Weights(interactions, params)
    out = []
    for kind, *rest in _walk(x, interactions, n_max, weights, weight_floor):
        if kind == "node":
            diag, w = rest
            if weight_floor == 0 or w > weight_floor:
                out.append(diag)
    out.sort(key=lambda d: (d.order, d.key))
    return out


def _check_stationary_diagram(x: Volume, diag: Diagram):
    if not diag.stationary:
        raise ValueError("stationary terms need an empty final excited set")
    if not check_constraints(x, diag):
        raise ValueError("diagram violates the compatibility rules")


def stationary_term(diag: Diagram, a: LocalOperator, model, volume: Volume | None = None) -> complex:
    """Scalar ``c`` with ``rho_G(V_n R(E_n) ... V_1 R(E_1)(A)) = c``.

    Dense reference evaluation on ``volume`` (default ``X ∪ D``).
    """
    data = model if isinstance(model, SiteData) else SiteData(model)
    x = a.support
    _check_stationary_diagram(x, diag)
    vol = volume or (x | diag.domain_D)
    if not (x | diag.domain_D) <= vol:
        raise SupportError(f"volume {vol} does not contain X ∪ D")
    fam = data.interactions
    y = embed_operator(a, vol).matrix
    for i, gamma in enumerate(diag.gammas):
        e = diag.ees[i]
        r = embed_superoperator(resolvent(e, data), vol)
        proj_rest = projection(Volume(()), vol - e, data) if len(vol - e) else None
        y = r(y)
        if proj_rest is not None:
            y = embed_superoperator(proj_rest, vol)(y)
        y = embed_superoperator(fam.term(gamma), vol)(y)
    qfull = projection(Volume(()), vol, data)
    out = qfull(y)
    return complex(out[0, 0])


def _params_check(params: BoundParameters, data: SiteData, x: Volume, fam: InteractionFamily):
    if params is None:
        raise HypothesisViolation("certified evaluation needs bound parameters", "params given")
    eps = interaction_norm(fam, params.l)
    if eps > params.epsilon * (1 + 1e-12) + 1e-15:
        raise HypothesisViolation(
            f"declared epsilon {params.epsilon!r} is below the interaction norm {eps!r} at l={params.l!r}",
            "|||V|||_l <= epsilon")
    gap = data.gap(x.sites)
    if params.g > gap * (1 + 1e-10):
        raise HypothesisViolation(f"declared gap {params.g!r} exceeds the single-site gap {gap!r}",
                                  "g <= single-site gap")
    if params.epsilon >= params.g - params.g_prime:
        raise HypothesisViolation(
            f"epsilon {params.epsilon!r} is not below g - g' = {params.g - params.g_prime!r}",
            "epsilon < g - g'")


def _order_terms(x: Volume, a: LocalOperator, data: SiteData, n_max: int, weights: _Weights,
                 floor: float, threads: int = 1):
    """Evaluate all stationary terms; returns ``(terms, count, pruned)``.

    ``terms`` are ``(order, key, value)`` triples, ``pruned`` lists weights
    and depths of cut subtrees and of filtered diagrams.
    """
    fam = data.interactions
    max_f = weights.max_factor()
    use_floor = floor > 0 and weights.params is not None
    q = a.q

    def rec(sites, y, gammas, ees, w, out, pruned):
        depth = len(gammas)
        e = ees[-1]
        if depth == n_max or len(e) == 0:
            return
        y_res = _apply_resolvent_tensor(y, sites, e, data)
        for gamma, term in fam.terms_touching(e):
            wf = w * weights.factor(gamma, len(e)) if weights.params is not None else w
            new_sites = _union_sites(sites, gamma)
            y_ext = extend_tensor(y_res, sites, new_sites, q)
            s_rc = superop_rc(term.matrix, len(gamma), q)
            positions = [new_sites.index(s) for s in gamma.sites]
            z = apply_local_rc(s_rc, positions, y_ext, len(new_sites), q)
            base = e - gamma
            for s in gamma.subsets():
                e_next = base | s
                gs, es = gammas + (gamma,), ees + (e_next,)
                if use_floor and wf * max(1.0, max_f) ** (n_max - depth - 1) <= floor:
                    pruned.append((wf, depth + 1, False))
                    continue
                if len(e_next) == 0:
                    if use_floor and wf <= floor:
                        pruned.append((wf, depth + 1, True))
                        continue
                    val = _full_expectation(z, new_sites, data)
                    out.append((depth + 1, Diagram(gs, es).key, val))
                else:
                    rec(new_sites, z, gs, es, wf, out, pruned)

    y0 = _op_tensor(embed_operator(a, x))
    starts = [s for s in x.subsets() if len(s) > 0]

    def task(e1):
        out, pruned = [], []
        rec(x.sites, y0, (), (e1,), 1.0, out, pruned)
        return out, pruned

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(task, starts))
    else:
        results = [task(e1) for e1 in starts]
    terms = [t for r in results for t in r[0]]
    pruned = [p for r in results for p in r[1]]
    terms.sort(key=lambda t: (t[0], t[1]))
    return terms, pruned


def _csum(values) -> complex:
    values = list(values)
    return complex(math.fsum(v.real for v in values), math.fsum(v.imag for v in values))


def _pruned_mass(pruned, r: float, n_max: int) -> float:
    mass = []
    for w, depth, single in pruned:
        if single:
            mass.append(w)
        else:
            # the cut node and all its continuations up to order n_max
            mass.append(w * sum(r ** m for m in range(n_max - depth + 1)))
    return math.fsum(mass)


def _expand(a: LocalOperator, model, n_max: int, weight_floor: float, params, certify: bool, threads: int):
    data = model if isinstance(model, SiteData) else SiteData(model)
    x = a.support
    fam = data.interactions
    if certify:
        _params_check(params, data, x, fam)
    elif weight_floor > 0 and params is None:
        raise ValueError("a positive weight floor needs bound parameters")
    weights = _Weights(fam, params)
    base = _full_expectation(_op_tensor(embed_operator(a, x)), x.sites, data)
    terms, pruned = _order_terms(x, a, data, n_max, weights, weight_floor, threads)
    partial = [base]
    for k in range(1, n_max + 1):
        partial.append(_csum(v for o, _, v in terms if o == k))
    return data, base, terms, pruned, partial


def stationary_expectation(a: LocalOperator, model, n_max: int, weight_floor: float = 0.0,
                           params: BoundParameters | None = None, *, certify: bool = True,
                           threads: int = 1) -> CertifiedValue:
    """Expansion of the thermodynamic-limit stationary expectation of ``A``.

    ``value = rho_{G,X}(A) + sum of stationary terms up to n_max``.  The bound
    is the geometric tail of the higher orders plus the majorant of pruned or
    filtered diagrams.  With ``certify=False`` the hypotheses are not checked
    and the bound is reported as NaN.

    Raises
    ------
    HypothesisViolation
        When the parameters do not certify convergence.
    """
    if n_max < 0:
        raise ValueError("n_max must be non-negative")
    if n_max == 0:
        data = model if isinstance(model, SiteData) else SiteData(model)
        if certify:
            _params_check(params, data, a.support, data.interactions)
        base = _full_expectation(_op_tensor(embed_operator(a, a.support)), a.support.sites, data)
        bound = truncation_tail(params, 0, len(a.support)) * a.norm() if certify else float("nan")
        return CertifiedValue(base, bound, 0, 0, [base], 0.0, certify)
    data, base, terms, pruned, partial = _expand(a, model, n_max, weight_floor, params, certify, threads)
    value = _csum(partial)
    if certify:
        norm_a = a.norm()
        c_x = params.C_lemma ** len(a.support)
        tail = truncation_tail(params, n_max, len(a.support)) * norm_a
        pruned_mass = c_x * norm_a * _pruned_mass(pruned, params.ratio, n_max)
        bound = tail + pruned_mass
    else:
        bound, pruned_mass = float("nan"), float("nan")
    return CertifiedValue(value, bound, n_max, len(terms), partial, pruned_mass, certify)


def correlation_estimate(a: LocalOperator, b: LocalOperator, model, n_max: int,
                         params: BoundParameters | None = None, *, weight_floor: float = 0.0,
                         certify: bool = True, threads: int = 1) -> CertifiedValue:
    """Expansion of ``rho(AB) - rho(A) rho(B)`` for disjoint supports.

    Order by order ``c_n(AB) - sum_{i+j=n} c_i(A) c_j(B)``; only diagrams that
    connect ``X`` with ``Y`` survive.  When no diagram of order ``<= n_max``
    can connect them the value is exactly 0.
    """
    if not a.support.isdisjoint(b.support):
        raise SupportError(f"supports {a.support} and {b.support} overlap")
    data = model if isinstance(model, SiteData) else SiteData(model)
    fam = data.interactions
    x, y = a.support, b.support
    nx, ny = len(x), len(y)
    reach = max(fam.range, 1) if fam.terms else 0

    def bounds():
        if not certify:
            return float("nan")
        r = params.ratio
        c = (params.C_lemma * 2.0) ** (nx + ny) * a.norm() * b.norm()
        joint = truncation_tail(params, n_max, nx + ny) * a.norm() * b.norm()
        prod = c * r ** (n_max + 1) * ((n_max + 2) - (n_max + 1) * r) / (1 - r) ** 2 if r > 0 else 0.0
        return joint + prod

    if certify:
        _params_check(params, data, x | y, fam)
    if reach == 0 or x.distance(y) > n_max * reach:
        return CertifiedValue(0j, bounds(), n_max, 0, [0j] * (n_max + 1), 0.0, certify)
    ab = a @ b
    _, _, t_ab, pr_ab, p_ab = _expand(ab, data, n_max, weight_floor, params, False, threads)
    _, _, t_a, pr_a, p_a = _expand(a, data, n_max, weight_floor, params, False, threads)
    _, _, t_b, pr_b, p_b = _expand(b, data, n_max, weight_floor, params, False, threads)
    partial = []
    for k in range(n_max + 1):
        prod = _csum(p_a[i] * p_b[k - i] for i in range(k + 1))
        partial.append(p_ab[k] - prod)
    value = _csum(partial)
    bound = bounds()
    pruned_mass = 0.0
    if certify and weight_floor > 0:
        r = params.ratio
        pruned_mass = (params.C_lemma ** (nx + ny) * a.norm() * b.norm() * _pruned_mass(pr_ab, r, n_max)
                       + params.C_lemma ** nx * a.norm() * _pruned_mass(pr_a, r, n_max) * b.norm()
                       * 2 ** ny / (1 - r)
                       + params.C_lemma ** ny * b.norm() * _pruned_mass(pr_b, r, n_max) * a.norm()
                       * 2 ** nx / (1 - r))
        bound += pruned_mass
    return CertifiedValue(value, bound, n_max, len(t_ab), partial, pruned_mass, certify)


def quadrature_term(diag: Diagram, a: LocalOperator, model, t: float, *, nodes: int = 12,
                    budget: int = 400_000) -> LocalOperator:
    """``∫_0^t ds H_t(s, Gamma, E, A)`` by nested composite Gauss-Legendre quadrature.

    The time-ordered integrals over ``0 <= t_1 <= ... <= t_n <= t`` are done
    recursively in the increments ``t_i - t_{i-1}``; the free propagators are
    dense on ``X ∪ D ∪ E_{n+1}``.  Cross-validation tool for order <= 3.
    """
    data = model if isinstance(model, SiteData) else SiteData(model)
    x = a.support
    if diag.order > 3:
        raise ValueError("quadrature is limited to order 3")
    if not check_constraints(x, diag):
        raise ValueError("diagram violates the compatibility rules")
    vol = x | diag.domain_D | diag.ees[-1]
    d = a.q ** len(vol)
    if t <= 0:
        return LocalOperator(vol, np.zeros((d, d)), a.q)
    pts, _ = _gauss_panels(t, nodes)
    if len(pts) ** diag.order > budget:
        raise QuadratureBudgetExceeded(
            f"{len(pts)}^{diag.order} quadrature points exceed the budget {budget}")
    fam = data.interactions
    g_vol = _free_generator(vol, data)
    prop = _propagator(g_vol)
    projs = [embed_superoperator(projection(e, vol, data), vol).matrix if len(vol) else None
             for e in diag.ees]
    terms = [embed_superoperator(fam.term(gm), vol).matrix for gm in diag.gammas]
    n = diag.order
    y0 = np.asarray(embed_operator(a, vol).matrix).T.reshape(-1)  # column-stacked vec

    def integrate(k, v, t_rem):
        # v is the state after V_k; integrate the remaining free evolution
        if k == n:
            return prop(t_rem) @ (projs[n] @ v)
        pts_k, wts_k = _gauss_panels(t_rem, nodes)
        acc = np.zeros_like(v)
        for s, w in zip(pts_k, wts_k):
            nxt = terms[k] @ (prop(s) @ (projs[k] @ v))
            acc = acc + w * integrate(k + 1, nxt, t_rem - s)
        return acc

    out = integrate(0, y0, t)
    return LocalOperator(vol, out.reshape(d, d).T, a.q)
