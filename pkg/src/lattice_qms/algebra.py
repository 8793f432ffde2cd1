r"""Operator algebra over finite lattice volumes.

Conventions
-----------
Sites are integer tuples ordered lexicographically and tensor factors always
follow that order.  Operators are vectorized by column stacking,

.. math:: \mathrm{vec}(A X B) = (B^T \otimes A)\,\mathrm{vec}(X),

so a superoperator is the matrix acting on ``vec(X) = X.reshape(-1, order="F")``
and ``lift(A, B) = kron(B.T, A)`` represents ``X -> A X B``.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import SupportError

__all__ = [
    "Site", "Volume", "LocalOperator", "LocalSuperoperator",
    "vec", "unvec", "lift", "apply_superoperator",
    "embed_operator", "embed_superoperator", "embed_superoperator_sparse",
    "operator_norm", "cb_norm", "hs_adjoint", "identity_map",
    "I2", "SX", "SY", "SZ", "SP", "SM",
]

I2 = np.eye(2, dtype=complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
# basis order (up, down): SP|down> = |up>, SM|up> = |down>
SP = np.array([[0, 1], [0, 0]], dtype=complex)
SM = np.array([[0, 0], [1, 0]], dtype=complex)

Site = tuple


def as_site(x) -> tuple:
    """Normalize an int or integer sequence to a site tuple."""
    if isinstance(x, (int, np.integer)):
        return (int(x),)
    return tuple(int(c) for c in x)


def lattice_distance(x: Site, y: Site) -> int:
    """Graph distance on Z^d with nearest-neighbour edges."""
    return sum(abs(a - b) for a, b in zip(x, y))


def _neighbours(x: Site):
    for k in range(len(x)):
        for step in (-1, 1):
            y = list(x)
            y[k] += step
            yield tuple(y)


@dataclass(frozen=True)
class Volume:
    """Finite set of lattice sites in lexicographic order."""

    sites: tuple = ()

    def __post_init__(self):
        raw = [as_site(s) for s in self.sites]
        ordered = tuple(sorted(set(raw)))
        if len(ordered) != len(raw):
            raise ValueError("duplicate sites in volume")
        dims = {len(s) for s in ordered}
        if len(dims) > 1:
            raise ValueError("sites of mixed lattice dimension")
        object.__setattr__(self, "sites", ordered)

    @classmethod
    def of(cls, *sites) -> "Volume":
        return cls(tuple(sites))

    @classmethod
    def chain(cls, n: int, start: int = 0) -> "Volume":
        """Sites ``start, ..., start + n - 1`` of Z^1."""
        return cls(tuple((start + k,) for k in range(n)))

    @classmethod
    def centered_chain(cls, n: int) -> "Volume":
        return cls.chain(n, start=-(n // 2))

    def __len__(self):
        return len(self.sites)

    def __iter__(self):
        return iter(self.sites)

    def __contains__(self, x):
        return as_site(x) in self._set

    def __repr__(self):
        if self.sites and len(self.sites[0]) == 1:
            return "Volume{%s}" % ",".join(str(s[0]) for s in self.sites)
        return "Volume{%s}" % ",".join(map(str, self.sites))

    @cached_property
    def _set(self):
        return frozenset(self.sites)

    @property
    def dimension(self) -> int | None:
        return len(self.sites[0]) if self.sites else None

    def index(self, x) -> int:
        return self.sites.index(as_site(x))

    def positions(self, other: "Volume") -> list[int]:
        """Positions of the sites of ``other`` inside this volume."""
        return [self.sites.index(s) for s in other.sites]

    def __le__(self, other: "Volume"):
        return self._set <= other._set

    def __or__(self, other: "Volume") -> "Volume":
        return Volume(tuple(self._set | other._set))

    def __and__(self, other: "Volume") -> "Volume":
        return Volume(tuple(self._set & other._set))

    def __sub__(self, other: "Volume") -> "Volume":
        return Volume(tuple(self._set - other._set))

    def isdisjoint(self, other: "Volume") -> bool:
        return self._set.isdisjoint(other._set)

    def translate(self, shift) -> "Volume":
        shift = as_site(shift)
        return Volume(tuple(tuple(a + b for a, b in zip(s, shift)) for s in self.sites))

    def distance(self, other: "Volume") -> int:
        """Minimal pairwise lattice distance (0 if the volumes overlap)."""
        if not self.sites or not other.sites:
            raise ValueError("distance to an empty volume is undefined")
        return min(lattice_distance(x, y) for x in self.sites for y in other.sites)

    def distance_to_complement(self, inner: "Volume") -> int:
        """``d(inner, Z^d \\ self)`` by breadth-first search from ``inner``."""
        seen = set(inner.sites)
        queue = deque((x, 0) for x in inner.sites)
        while queue:
            x, dist = queue.popleft()
            if x not in self._set:
                return dist
            for y in _neighbours(x):
                if y not in seen:
                    seen.add(y)
                    queue.append((y, dist + 1))
        raise ValueError("empty inner volume")

    def is_connected(self) -> bool:
        if not self.sites:
            return False
        seen = {self.sites[0]}
        stack = [self.sites[0]]
        while stack:
            x = stack.pop()
            for y in _neighbours(x):
                if y in self._set and y not in seen:
                    seen.add(y)
                    stack.append(y)
        return len(seen) == len(self.sites)

    def subsets(self):
        """All subsets, ordered by size then lexicographically."""
        for k in range(len(self.sites) + 1):
            for combo in combinations(self.sites, k):
                yield Volume(combo)

    @property
    def key(self) -> tuple:
        """Sortable key used for deterministic orderings."""
        return self.sites


def _dim_check(matrix, q, n, power):
    expected = q ** (power * n)
    if matrix.shape != (expected, expected):
        raise ValueError(
            f"matrix shape {matrix.shape} does not match q={q}, |support|={n} "
            f"(expected {expected}x{expected})")


@dataclass(frozen=True, eq=False)
class LocalOperator:
    """Matrix acting on the tensor factors of ``support``."""

    support: Volume
    matrix: np.ndarray
    q: int = 2

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        _dim_check(m, self.q, len(self.support), 1)

    def norm(self) -> float:
        return float(np.linalg.norm(self.matrix, 2))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def __matmul__(self, other: "LocalOperator") -> "LocalOperator":
        vol = self.support | other.support
        a = embed_operator(self, vol).matrix
        b = embed_operator(other, vol).matrix
        return LocalOperator(vol, a @ b, self.q)

    def __add__(self, other: "LocalOperator") -> "LocalOperator":
        vol = self.support | other.support
        return LocalOperator(vol, embed_operator(self, vol).matrix + embed_operator(other, vol).matrix, self.q)

    def __sub__(self, other: "LocalOperator") -> "LocalOperator":
        return self + other.scaled(-1.0)

    def scaled(self, c) -> "LocalOperator":
        return LocalOperator(self.support, c * self.matrix, self.q)

    def dagger(self) -> "LocalOperator":
        return LocalOperator(self.support, self.matrix.conj().T, self.q)

    @classmethod
    def identity(cls, support: Volume, q: int = 2) -> "LocalOperator":
        return cls(support, np.eye(q ** len(support)), q)

    @classmethod
    def site(cls, x, matrix, q: int | None = None) -> "LocalOperator":
        matrix = np.asarray(matrix)
        return cls(Volume.of(x), matrix, q or matrix.shape[0])


@dataclass(frozen=True, eq=False)
class LocalSuperoperator:
    """Linear map on operators over ``support`` in column-stacking convention."""

    support: Volume
    matrix: np.ndarray
    q: int = 2

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        _dim_check(m, self.q, len(self.support), 2)

    @property
    def hilbert_dim(self) -> int:
        return self.q ** len(self.support)

    def __call__(self, op):
        if isinstance(op, LocalOperator):
            if not op.support <= self.support:
                raise SupportError(f"{op.support} not inside {self.support}")
            x = embed_operator(op, self.support).matrix
            return LocalOperator(self.support, apply_superoperator(self.matrix, x), self.q)
        return apply_superoperator(self.matrix, np.asarray(op))

    def __matmul__(self, other: "LocalSuperoperator") -> "LocalSuperoperator":
        vol = self.support | other.support
        a = embed_superoperator(self, vol).matrix
        b = embed_superoperator(other, vol).matrix
        return LocalSuperoperator(vol, a @ b, self.q)

    def __add__(self, other: "LocalSuperoperator") -> "LocalSuperoperator":
        vol = self.support | other.support
        return LocalSuperoperator(
            vol, embed_superoperator(self, vol).matrix + embed_superoperator(other, vol).matrix, self.q)

    def __sub__(self, other):
        return self + other.scaled(-1.0)

    def scaled(self, c) -> "LocalSuperoperator":
        return LocalSuperoperator(self.support, c * self.matrix, self.q)


def vec(x: np.ndarray) -> np.ndarray:
    """Column-stacking vectorization (works on stacks of matrices)."""
    x = np.asarray(x)
    d0, d1 = x.shape[-2:]
    return np.swapaxes(x, -1, -2).reshape(x.shape[:-2] + (d0 * d1,))


def unvec(v: np.ndarray, shape: tuple[int, int] | None = None) -> np.ndarray:
    """Inverse of :func:`vec`; square matrices unless ``shape`` is given."""
    v = np.asarray(v)
    if shape is None:
        d = int(round(np.sqrt(v.shape[-1])))
        shape = (d, d)
    return np.swapaxes(v.reshape(v.shape[:-1] + (shape[1], shape[0])), -1, -2)


def lift(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Superoperator matrix of ``X -> a @ X @ b``."""
    return np.kron(np.asarray(b).T, np.asarray(a))


def apply_superoperator(s, x: np.ndarray) -> np.ndarray:
    """Apply superoperator matrix ``s`` to a matrix or a stack of matrices."""
    v = vec(x)
    out = v @ s.T if not sp.issparse(s) else (s @ v.T).T
    return unvec(out, x.shape[-2:])


def identity_map(support: Volume, q: int = 2) -> LocalSuperoperator:
    return LocalSuperoperator(support, np.eye(q ** (2 * len(support))), q)


def _require_subset(inner: Volume, outer: Volume):
    if not inner <= outer:
        raise SupportError(f"support {inner} is not contained in {outer}")


def _operator_axes(positions: Sequence[int], n_total: int) -> list[int]:
    order = list(positions) + [k for k in range(n_total) if k not in positions]
    inv = [order.index(j) for j in range(n_total)]
    return inv + [n_total + i for i in inv]


def embed_operator(op: LocalOperator, target: Volume) -> LocalOperator:
    """``op`` tensored with identities on ``target \\ op.support``."""
    _require_subset(op.support, target)
    if op.support.sites == target.sites:
        return op
    q, n_total = op.q, len(target)
    rest = q ** (n_total - len(op.support))
    full = np.kron(op.matrix, np.eye(rest))
    axes = _operator_axes(target.positions(op.support), n_total)
    full = full.reshape([q] * (2 * n_total)).transpose(axes)
    dim = q ** n_total
    return LocalOperator(target, full.reshape(dim, dim), q)


def _superop_permutation(positions: Sequence[int], n_total: int, q: int) -> np.ndarray:
    """Map from Kronecker (support, rest) vec ordering to target vec ordering."""
    rest = [k for k in range(n_total) if k not in positions]
    idx = np.arange(q ** (2 * n_total)).reshape([q] * (2 * n_total))
    axes = list(positions) + [n_total + p for p in positions] + rest + [n_total + r for r in rest]
    return idx.transpose(axes).ravel()


def embed_superoperator(sop: LocalSuperoperator, target: Volume) -> LocalSuperoperator:
    """Dense embedding acting as the identity map on ``target \\ sop.support``."""
    _require_subset(sop.support, target)
    if sop.support.sites == target.sites:
        return sop
    q, n_total = sop.q, len(target)
    rest_dim = q ** (2 * (n_total - len(sop.support)))
    perm = _superop_permutation(target.positions(sop.support), n_total, q)
    full = np.kron(sop.matrix, np.eye(rest_dim))
    out = np.empty_like(full)
    out[np.ix_(perm, perm)] = full
    return LocalSuperoperator(target, out, q)


def embed_superoperator_sparse(matrix, positions: Sequence[int], n_total: int, q: int = 2) -> sp.csr_matrix:
    """Sparse version of :func:`embed_superoperator` working on raw matrices."""
    n_local = len(positions)
    rest_dim = q ** (2 * (n_total - n_local))
    perm = _superop_permutation(positions, n_total, q)
    full = sp.kron(sp.coo_matrix(np.asarray(matrix)), sp.identity(rest_dim, format="coo"), format="coo")
    dim = q ** (2 * n_total)
    return sp.csr_matrix((full.data, (perm[full.row], perm[full.col])), shape=(dim, dim))


def hs_adjoint(sop: LocalSuperoperator) -> LocalSuperoperator:
    """Adjoint with respect to the Hilbert-Schmidt product ``Tr(A^* B)``."""
    return LocalSuperoperator(sop.support, sop.matrix.conj().T, sop.q)


# --- induced norms -----------------------------------------------------------

def _polar_unitary(z: np.ndarray) -> np.ndarray:
    w, _, vh = np.linalg.svd(z)
    return w @ vh


def _random_unitary(rng, d):
    z = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return _polar_unitary(z)


def _ascent(apply, apply_adj, x, tol, maxiter):
    """Monotone ascent of ||apply(X)|| over unitaries.

    Each step linearizes the spectral norm at the top singular pair (u, v) of
    ``apply(X)`` and maximizes ``Re <u|apply(X')|v>`` exactly, which is the
    polar factor of ``apply_adj(|u><v|)``.
    """
    value = -1.0
    for _ in range(maxiter):
        u, s, vh = np.linalg.svd(apply(x))
        if s[0] - value <= tol * max(s[0], 1.0):
            return max(value, s[0]), x
        value = s[0]
        z = apply_adj(np.outer(u[:, 0], vh[0].conj()))
        if not np.any(z):
            return value, x
        x = _polar_unitary(z)
    return value, x


def induced_norm(apply: Callable, apply_adj: Callable, dim: int, *, x0=None,
                 n_random: int | None = None, seed: int = 0, tol: float = 1e-10,
                 maxiter: int = 500, identity_start: bool = True) -> tuple[float, np.ndarray]:
    r"""Spectral-to-spectral norm ``sup ||apply(X)|| / ||X||`` of a linear map.

    The unit ball of the spectral norm is the convex hull of the unitaries, so
    the supremum is attained on a unitary.  Several deterministic and seeded
    random starting points are ascended and the best value is kept.

    Returns
    -------
    value : float
    maximizer : ndarray
    """
    if n_random is None:
        n_random = 8 if dim <= 64 else 2
    rng = np.random.default_rng(seed)
    starts = [np.eye(dim, dtype=complex)] if identity_start or x0 is None else []
    if x0 is not None:
        starts.insert(0, np.asarray(x0, dtype=complex))
    starts += [_random_unitary(rng, dim) for _ in range(n_random)]
    best, arg = -1.0, starts[0]
    for x in starts:
        val, xm = _ascent(apply, apply_adj, x, tol, maxiter)
        if val > best:
            best, arg = val, xm
    return float(best), arg


def batched_induced_norm(mats: np.ndarray, starts: Sequence[np.ndarray], tol: float = 1e-10,
                         maxiter: int = 500) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`induced_norm` for a stack of superoperator matrices.

    ``mats`` has shape ``(T, d*d, d*d)``; every start in ``starts`` is either a
    single ``(d, d)`` unitary shared by all maps or a ``(T, d, d)`` stack.
    Returns the per-map best values and maximizers.
    """
    mats = np.asarray(mats)
    n_maps = mats.shape[0]
    d = int(round(np.sqrt(mats.shape[1])))
    mats_t = np.swapaxes(mats, -1, -2)
    adj_t = mats.conj()
    best = np.full(n_maps, -1.0)
    arg = np.zeros((n_maps, d, d), dtype=complex)

    def apply(m_t, x):
        return unvec(np.einsum("ti,tij->tj", vec(x), m_t))

    for x0 in starts:
        x = np.broadcast_to(np.asarray(x0, dtype=complex), (n_maps, d, d)).copy()
        value = np.full(n_maps, -1.0)
        active = np.ones(n_maps, dtype=bool)
        for _ in range(maxiter):
            idx = np.flatnonzero(active)
            if idx.size == 0:
                break
            u, s, vh = np.linalg.svd(apply(mats_t[idx], x[idx]))
            top = s[:, 0]
            done = top - value[idx] <= tol * np.maximum(top, 1.0)
            value[idx] = np.maximum(value[idx], top)
            active[idx[done]] = False
            go = idx[~done]
            if go.size == 0:
                break
            rank_one = u[~done, :, :1] * vh[~done, :1, :].conj()
            z = apply(adj_t[go], rank_one)
            w, _, zvh = np.linalg.svd(z)
            x[go] = w @ zvh
        better = value > best
        best[better] = value[better]
        arg[better] = x[better]
    return best, arg


def operator_norm(sop, **kwargs) -> float:
    """Induced norm of a superoperator w.r.t. the spectral norm on operators.

    Accepts a :class:`LocalSuperoperator` or a raw superoperator matrix.
    """
    s = sop.matrix if isinstance(sop, LocalSuperoperator) else np.asarray(sop)
    d = int(round(np.sqrt(s.shape[0])))
    sa = s.conj().T
    return induced_norm(lambda x: apply_superoperator(s, x),
                        lambda y: apply_superoperator(sa, y), d, **kwargs)[0]


def ancilla_extension(s: np.ndarray, k: int | None = None) -> np.ndarray:
    """Matrix of ``s (x) id_k`` on the column-stacked space of ``H_S (x) C^k``."""
    d = int(round(np.sqrt(s.shape[0])))
    k = d if k is None else k
    dk = d * k
    units = np.eye(dk * dk, dtype=complex).reshape(dk * dk, dk, dk).transpose(0, 2, 1)
    blocks = units.reshape(-1, d, k, d, k).transpose(0, 2, 4, 1, 3)
    out = apply_superoperator(s, blocks)
    images = out.transpose(0, 3, 1, 4, 2).reshape(dk * dk, dk, dk)
    return vec(images).T


def cb_norm(sop, mode: str = "exact", *, return_maximizer: bool = False, **kwargs):
    """Completely bounded norm of a superoperator.

    Parameters
    ----------
    sop : LocalSuperoperator or ndarray
    mode : {"exact", "footnote_bound"}
        ``exact`` evaluates ``||sop (x) id_k||`` with an ancilla of dimension
        ``k = dim(H_S)``, which attains the cb norm.  ``footnote_bound``
        returns ``dim(H_S) * operator_norm(sop)``, an upper bound.
    """
    s = sop.matrix if isinstance(sop, LocalSuperoperator) else np.asarray(sop)
    d = int(round(np.sqrt(s.shape[0])))
    if mode == "footnote_bound":
        return d * operator_norm(s, **kwargs)
    if mode != "exact":
        raise ValueError(f"unknown mode {mode!r}")
    ext = ancilla_extension(s)
    ext_t, ext_adj_t = ext.T, ext.conj()

    def apply(x):
        return unvec(vec(x) @ ext_t)

    def apply_adj(y):
        return unvec(vec(y) @ ext_adj_t)

    value, arg = induced_norm(apply, apply_adj, d * d, **kwargs)
    return (value, arg) if return_maximizer else value


# --- operator tensors ----------------------------------------------------------
# Helpers used by the expansion: an operator on n sites is kept as an ndarray
# of shape (q,)*2n with axes (r_0..r_{n-1}, c_0..c_{n-1}).

def superop_rc(matrix: np.ndarray, n: int, q: int = 2) -> np.ndarray:
    """Reorder a column-stacked superoperator to act on (rows, cols) pairs."""
    t = np.asarray(matrix).reshape([q] * (4 * n))
    cp, rp = list(range(n)), list(range(n, 2 * n))
    c, r = list(range(2 * n, 3 * n)), list(range(3 * n, 4 * n))
    t = t.transpose(rp + cp + r + c)
    return t.reshape(q ** (2 * n), q ** (2 * n))


def apply_local_rc(s_rc: np.ndarray, positions: Sequence[int], x: np.ndarray, n_total: int, q: int = 2) -> np.ndarray:
    """Apply an rc-ordered local superoperator to an operator tensor."""
    k = len(positions)
    axes = list(positions) + [n_total + p for p in positions]
    moved = np.moveaxis(x, axes, list(range(2 * k)))
    shape = moved.shape
    out = (s_rc @ moved.reshape(q ** (2 * k), -1)).reshape(shape)
    return np.moveaxis(out, list(range(2 * k)), axes)


def extend_tensor(x: np.ndarray, sites: tuple, new_sites: tuple, q: int = 2) -> np.ndarray:
    """Embed an operator tensor on ``sites`` into the superset ``new_sites``."""
    if sites == new_sites:
        return x
    n_old, n_new = len(sites), len(new_sites)
    added = [s for s in new_sites if s not in sites]
    eye = np.eye(q ** len(added)).reshape([q] * (2 * len(added)))
    full = np.multiply.outer(x, eye)
    # full axes: r_old, c_old, r_add, c_add
    order = list(sites) + added
    src_r = [order.index(s) for s in new_sites]
    axes = []
    for i in src_r:
        axes.append(i if i < n_old else 2 * n_old + (i - n_old))
    for i in src_r:
        axes.append(n_old + i if i < n_old else 2 * n_old + len(added) + (i - n_old))
    return full.transpose(axes)
