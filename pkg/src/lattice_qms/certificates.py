"""Explicit constants and feasibility checks for the weak-coupling regime.

Everything here is scalar arithmetic.  Sums go through :func:`math.fsum` so
certificates stay trustworthy close to the hypothesis boundaries.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Callable

from .errors import HypothesisViolation

LOG2 = math.log(2.0)

__all__ = [
    "BoundParameters",
    "BoundCurves",
    "derive_parameters",
    "truncation_tail",
    "series_ratio",
    "finite_range_window",
    "bound_curves",
    "proof_traced_C",
]


def proof_traced_C(M: float) -> float:
    """Conservative locality constant ``max(1, 2(M+1))``.

    Traced through the majorant chain of the convergence proof; it is not a
    stated numeric and is validated only by the domination tests.
    """
    return max(1.0, 2.0 * (M + 1.0))


@dataclass(frozen=True)
class BoundParameters:
    """Constants of the locality/relaxation bounds.

    ``C`` multiplies ``|X|`` in the relaxation, volume and correlation curves.
    ``C_lemma`` is the per-site factor of the diagram majorant: 1 under the
    theorem's conditions, ``M + 1`` in the general setting.
    """

    l: float
    l_prime: float
    l_dprime: float
    g: float
    g_prime: float
    epsilon: float
    M: float
    K: float
    C: float
    C_lemma: float
    mode: str = "theorem"

    @property
    def ratio(self) -> float:
        """Series ratio ``epsilon / (g - g')``."""
        return self.epsilon / (self.g - self.g_prime)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["C_provenance"] = "proof-traced max(1, 2(M+1)); validated by domination tests"
        return d


def _check_common(l, g, g_prime, epsilon, M):
    if not g > 0:
        raise HypothesisViolation(f"gap must be positive, got g={g}", "g > 0")
    if not 0 < g_prime < g:
        raise HypothesisViolation(f"need 0 < g' < g, got g'={g_prime}, g={g}", "0 < g' < g")
    if not l > 0:
        raise HypothesisViolation(f"decay length must be positive, got l={l}", "l > 0")
    if epsilon < 0:
        raise HypothesisViolation(f"interaction norm must be non-negative, got {epsilon}", "epsilon >= 0")
    if M < 1:
        raise HypothesisViolation(f"amplitude M must be at least 1, got {M}", "M >= 1")
    inv_excess = math.fsum([1.0 / l, -LOG2])
    if inv_excess <= 0:
        raise HypothesisViolation(
            f"1/l = {1.0 / l!r} does not exceed log 2 = {LOG2!r}", "1/l > log 2")
    if epsilon >= g - g_prime:
        raise HypothesisViolation(
            f"interaction norm {epsilon!r} is not below g - g' = {g - g_prime!r}; "
            "K = (g-g')/(g-g'-epsilon) is undefined",
            "epsilon < g - g'")
    return inv_excess


def derive_parameters(l: float, g: float, g_prime: float, epsilon: float, M: float = 1.0,
                      mode: str = "theorem") -> BoundParameters:
    """Fill in ``l'``, ``l''``, ``K`` and ``C`` from the hypothesis data.

    In theorem mode ``1/l' = 1/l - log 2`` and ``l'' = l'``.  In general mode
    ``1/l = log 2 + log(M+1)(1 + 1/l')`` is solved for ``l'``; there
    ``1/l'' = log(M+1)(1 + 1/l')`` so that ``1/l = log 2 + 1/l''`` in both.

    Raises
    ------
    HypothesisViolation
        Naming the failing inequality.
    """
    if mode not in ("theorem", "general"):
        raise ValueError(f"unknown mode {mode!r}")
    inv_excess = _check_common(l, g, g_prime, epsilon, M)
    if mode == "theorem":
        l_prime = 1.0 / inv_excess
        l_dprime = l_prime
        c_lemma = 1.0
    else:
        log_m = math.log(M + 1.0)
        inv_lp = inv_excess / log_m - 1.0
        if inv_lp <= 0:
            raise HypothesisViolation(
                f"general mode needs 1/l > log 2 + log(M+1) = {LOG2 + log_m!r}",
                "1/l > log 2 + log(M+1)")
        l_prime = 1.0 / inv_lp
        l_dprime = 1.0 / inv_excess
        c_lemma = M + 1.0
    gap_margin = g - g_prime
    K = gap_margin / (gap_margin - epsilon)
    return BoundParameters(l=l, l_prime=l_prime, l_dprime=l_dprime, g=g, g_prime=g_prime,
                           epsilon=epsilon, M=M, K=K, C=proof_traced_C(M), C_lemma=c_lemma,
                           mode=mode)


def series_ratio(params: BoundParameters) -> float:
    r = params.ratio
    if r >= 1:
        raise HypothesisViolation(f"series ratio {r} >= 1 diverges", "epsilon < g - g'")
    return r


def truncation_tail(params: BoundParameters, n_max: int, x_size: int, C: float | None = None) -> float:
    """Geometric majorant of all orders above ``n_max``.

    ``C^{x} 2^{x} r^{n_max+1} / (1 - r)`` with ``r = epsilon/(g-g')``; ``C``
    defaults to the lemma factor of ``params``.
    """
    r = series_ratio(params)
    if r == 0.0:
        return 0.0
    c = params.C_lemma if C is None else C
    return (c * 2.0) ** x_size * r ** (n_max + 1) / (1.0 - r)


def finite_range_window(range_R: float, l_prime_target: float, g: float, g_prime: float,
                        d: int = 1) -> float:
    """Admissible finite-range interaction strength ``(g-g') exp(-R^d/l')``.

    The asymptotic relation is implemented with constant 1.
    """
    if range_R < 1:
        raise ValueError("range must be at least 1")
    if math.isinf(l_prime_target):
        return g - g_prime
    return (g - g_prime) * math.exp(-(range_R ** d) / l_prime_target)


@dataclass(frozen=True)
class BoundCurves:
    relaxation: Callable[[float], float]
    volume: Callable[[float], float]
    correlation: Callable[[float], float] | None


def bound_curves(params: BoundParameters, x_size: int, y_size: int | None = None,
                 norm_a: float = 1.0, norm_b: float = 1.0) -> BoundCurves:
    """Relaxation, finite-volume and correlation bound shapes."""
    K, C, g1, lp = params.K, params.C, params.g_prime, params.l_prime
    cx = C ** x_size

    def relaxation(t):
        return K * math.exp(-g1 * t) * cx * norm_a

    def volume(dist):
        return (K - 1.0) * math.exp(-dist / lp) * cx * norm_a

    correlation = None
    if y_size is not None:
        cxy = C ** (x_size + y_size)

        def correlation(dist):
            return (K - 1.0) * math.exp(-dist / lp) * cxy * norm_a * norm_b

    return BoundCurves(relaxation, volume, correlation)
