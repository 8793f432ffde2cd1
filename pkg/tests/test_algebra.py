import numpy as np
import pytest
from hypothesis import given, strategies as st

from lattice_qms.algebra import (I2, SM, SP, SX, SZ, LocalOperator, LocalSuperoperator, Volume,
                                 apply_superoperator, cb_norm, embed_operator,
                                 embed_superoperator, hs_adjoint, identity_map, lift,
                                 operator_norm, unvec, vec)
from lattice_qms.errors import SupportError
from lattice_qms.generators import commutator_map
from lattice_qms.models import ising_site_generator

from conftest import random_matrix, random_state

seeds = st.integers(0, 2 ** 32 - 1)


def test_volume_order_and_distance():
    v = Volume.of(3, 1, 2)
    assert v.sites == ((1,), (2,), (3,))
    assert Volume.of(0).distance(Volume.of(4, 7)) == 4
    assert Volume.of(0, 5).distance(Volume.of(2)) == 2
    assert Volume.chain(3).is_connected()
    assert not Volume.of(0, 2).is_connected()
    with pytest.raises(ValueError):
        Volume(((0,), (0,)))


def test_distance_to_complement():
    vol = Volume.centered_chain(5)
    assert vol.distance_to_complement(Volume.of(0)) == 3
    assert vol.distance_to_complement(Volume.of(2)) == 1


def test_embed_padding():
    op = LocalOperator.site(2, SZ)
    out = embed_operator(op, Volume.of(1, 2, 3))
    assert np.array_equal(out.matrix, np.kron(np.kron(I2, SZ), I2))
    assert out.norm() == 1.0
    assert np.array_equal(embed_operator(op, op.support).matrix, op.matrix)


def test_embed_two_site_norm():
    op = LocalOperator(Volume.chain(2), np.kron(SX, SX))
    out = embed_operator(op, Volume.chain(3))
    assert out.dim == 8
    # oracle: spectral norm of the explicit Kronecker product
    assert np.isclose(out.norm(), np.linalg.norm(np.kron(np.kron(SX, SX), I2), 2))
    assert np.isclose(out.norm(), 1.0)


def test_embed_not_contained():
    with pytest.raises(SupportError):
        embed_operator(LocalOperator.site(5, SZ), Volume.chain(3))


def test_embed_superoperator_identity_cases():
    idm = identity_map(Volume.of(0))
    out = embed_superoperator(idm, Volume.chain(2))
    assert np.array_equal(out.matrix, np.eye(16))
    g = ising_site_generator(0.3)
    assert np.array_equal(embed_superoperator(g, g.support).matrix, g.matrix)


def test_commutator_disjoint_site_vanishes():
    c = commutator_map(LocalOperator(Volume.chain(2), np.kron(SX, SX)))
    big = embed_superoperator(c, Volume.chain(3))
    assert big.matrix.shape == (64, 64)
    out = big(LocalOperator.site(2, SZ))
    assert np.abs(out.matrix).max() == 0


@given(seeds)
def test_embed_superoperator_intertwines(seed):
    rng = np.random.default_rng(seed)
    s = LocalSuperoperator(Volume.of(1), random_matrix(rng, 4))
    x = LocalOperator.site(1, random_matrix(rng, 2))
    target = Volume.chain(3)
    lhs = embed_superoperator(s, target)(embed_operator(x, target)).matrix
    rhs = embed_operator(s(x), target).matrix
    assert np.allclose(lhs, rhs, atol=1e-12)


@given(seeds)
def test_embed_functorial_and_isometric(seed):
    rng = np.random.default_rng(seed)
    a = LocalOperator(Volume.of(1, 2), random_matrix(rng, 4))
    mid, big = Volume.chain(3), Volume.chain(5, start=-1)
    twice = embed_operator(embed_operator(a, mid), big).matrix
    once = embed_operator(a, big).matrix
    assert np.array_equal(twice, once)
    assert abs(np.linalg.norm(once, 2) - a.norm()) <= 1e-12 * a.norm()


@given(seeds)
def test_vec_roundtrip_and_lift(seed):
    rng = np.random.default_rng(seed)
    a, x, b = (random_matrix(rng, 3) for _ in range(3))
    assert np.array_equal(unvec(vec(x)), x)
    assert np.allclose(vec(a @ x @ b), lift(a, b) @ vec(x), atol=1e-12)


def test_operator_norm_cases():
    assert np.isclose(operator_norm(identity_map(Volume.of(0)).matrix), 1.0)
    assert np.isclose(operator_norm(2.5j * np.eye(4)), 2.5)
    # commutator-map norm equals the spectral spread of sigma3
    w = np.linalg.eigvalsh(SZ)
    assert np.isclose(operator_norm(commutator_map(LocalOperator.site(0, SZ))), w.max() - w.min(),
                      atol=1e-9)


def test_cb_norm_against_sdp(frozen):
    ref = frozen["cb_norms"]
    c = commutator_map(LocalOperator(Volume.chain(2), 0.05 * np.kron(SX, SX)))
    assert abs(cb_norm(c) - ref["commutator_xx_J0.05"]) < 1e-7
    z = commutator_map(LocalOperator.site(0, SZ))
    assert abs(cb_norm(z) - ref["commutator_z"]) < 1e-7
    assert np.isclose(cb_norm(identity_map(Volume.of(0))), 1.0)


@given(seeds)
def test_cb_exact_below_footnote(seed):
    rng = np.random.default_rng(seed)
    s = random_matrix(rng, 4)
    assert cb_norm(s) <= cb_norm(s, "footnote_bound") * (1 + 1e-9)


@given(seeds)
def test_cb_submultiplicative(seed):
    rng = np.random.default_rng(seed)
    a, b = random_matrix(rng, 4), random_matrix(rng, 4)
    assert cb_norm(a @ b) <= cb_norm(a) * cb_norm(b) * (1 + 1e-8)


def test_hs_adjoint_sandwich():
    k = np.array([[1, 2j], [0.5, -1]])
    s = LocalSuperoperator(Volume.of(0), lift(k.conj().T, k))
    adj = hs_adjoint(s)
    assert np.allclose(adj.matrix, lift(k, k.conj().T))
    assert np.array_equal(hs_adjoint(identity_map(Volume.of(0))).matrix, np.eye(4))


@given(seeds)
def test_hs_adjoint_duality_and_involution(seed):
    rng = np.random.default_rng(seed)
    g = ising_site_generator(0.3)
    rho, a = random_state(rng, 2), random_matrix(rng, 2)
    gs = hs_adjoint(g)
    assert np.isclose(np.trace(rho @ g(a)), np.trace(gs(rho) @ a), atol=1e-12)
    assert np.array_equal(hs_adjoint(gs).matrix, g.matrix)


def test_apply_matches_lift():
    x = np.array([[1, 2], [3, 4]], complex)
    assert np.allclose(apply_superoperator(lift(SP, SM), x), SP @ x @ SM)
