import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from microformer.loadpath import (CYCLIC_MODES, cyclic_path, green_lagrange, random_increment,
                                  random_path, step_norm)


def test_forced_boundary_draw():
    dU = random_increment(np.random.default_rng(0), 5e-5, 2.5e-3, alpha=0.0, R=2.5e-3 ** 2,
                          theta=0.0)
    assert np.allclose(dU, [[2.5e-3, 0], [0, 0]], atol=1e-18)


def test_increment_spectral_structure():
    rng = np.random.default_rng(5)
    dU = random_increment(rng, 5e-5, 2.5e-3)
    assert np.array_equal(dU, dU.T)
    rng = np.random.default_rng(5)
    a = rng.uniform(0, math.pi)
    r = rng.uniform(5e-5 ** 2, 2.5e-3 ** 2)
    t = rng.uniform(0, 2 * math.pi)
    n1 = np.array([math.cos(a), math.sin(a)])
    n2 = np.array([-math.sin(a), math.cos(a)])
    assert np.allclose(dU @ n1, math.sqrt(r) * math.cos(t) * n1, atol=1e-18)
    assert np.allclose(dU @ n2, math.sqrt(r) * math.sin(t) * n2, atol=1e-18)


def test_increment_bounds_monte_carlo():
    rng = np.random.default_rng(123)
    norms = np.array([step_norm(random_increment(rng, 5e-5, 2.5e-3)) for _ in range(10_000)])
    assert norms.min() >= 5e-5 and norms.max() <= 2.5e-3


def test_increment_bad_bounds():
    with pytest.raises(ValueError):
        random_increment(np.random.default_rng(0), 1e-3, 1e-4)


def test_random_path_basics():
    p = random_path(np.random.default_rng(0), 1)
    assert len(p) == 1 and p.strain().shape == (1, 3)
    a = random_path(np.random.default_rng(9)).U
    b = random_path(np.random.default_rng(9)).U
    assert np.array_equal(a, b)
    with pytest.raises(ValueError):
        random_path(np.random.default_rng(0), 101)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_random_path_invariants(seed):
    p = random_path(np.random.default_rng(seed))
    norms = np.sqrt((p.increments() ** 2).sum(axis=(1, 2)))
    assert (norms >= 5e-5).all() and (norms <= 2.5e-3).all()
    assert np.abs(p.U - np.eye(2)).max() <= 0.05
    assert (np.linalg.eigvalsh(p.U) > 0).all()


def test_random_path_truncates_at_cap():
    # every increment has a component above norm/2 = 0.015 > cap
    p = random_path(np.random.default_rng(0), 100, r_min=0.03, r_max=0.04, cap=0.01, max_tries=5)
    assert len(p) == 0 and p.U.shape == (1, 2, 2)


@pytest.mark.parametrize("mode", CYCLIC_MODES)
@pytest.mark.parametrize("seed", range(5))
def test_cyclic_modes(mode, seed):
    p = cyclic_path(np.random.default_rng(seed), mode)
    dU = p.increments()
    norms = np.sqrt((dU ** 2).sum(axis=(1, 2)))
    assert (norms >= 5e-4 - 1e-15).all() and (norms <= 2.5e-3 + 1e-15).all()
    assert np.abs(p.U - np.eye(2)).max() <= 0.05 + 1e-12
    E = p.strain()
    if mode == "uniaxial-x":
        assert np.all(p.U[:, 1, 1] == 1) and np.all(p.U[:, 0, 1] == 0)
    if mode == "shear":
        assert np.all(p.U[:, 0, 0] == 1) and np.all(p.U[:, 1, 1] == 1)
        assert np.allclose(E[:, 0], E[:, 1]) and np.allclose(E[:, 0], 0.5 * E[:, 2] ** 2)
    # the loaded component changes direction at least once
    comp = {"uniaxial-x": (0, 0), "uniaxial-y": (1, 1), "biaxial": (0, 0), "shear": (0, 1)}[mode]
    d = dU[:, comp[0], comp[1]]
    assert (np.sign(d[1:]) != np.sign(d[:-1])).any()


def test_cyclic_determinism_and_mode_choice():
    a = cyclic_path(np.random.default_rng(7))
    b = cyclic_path(np.random.default_rng(7))
    assert a.mode == b.mode and np.array_equal(a.U, b.U)
    with pytest.raises(ValueError):
        cyclic_path(np.random.default_rng(0), "torsion")


def test_green_lagrange_examples():
    assert np.array_equal(green_lagrange(np.eye(2)), [0, 0, 0])
    assert np.allclose(green_lagrange(np.diag([1.1, 1.0])), [0.105, 0, 0])
    assert np.allclose(green_lagrange([[1, 0.01], [0.01, 1]]), [5e-5, 5e-5, 0.01])
    with pytest.raises(ValueError):
        green_lagrange(np.diag([1.0, -0.5]))
    with pytest.raises(ValueError):
        green_lagrange([[1, 0.1], [0.0, 1]])


def test_green_lagrange_offdiagonal_entry():
    U = np.eye(2) + random_increment(np.random.default_rng(2), 5e-5, 2.5e-3)
    E = 0.5 * (U @ U - np.eye(2))
    assert green_lagrange(U)[2] == E[0, 1] == E[1, 0]
