import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from pignpi.errors import ConfigurationError, SingularityError
from pignpi.lj import (UNITS, LjSpec, cutoff_edges, cutoff_pairs, kinetic_temperature, lj_edge_labels,
                       lj_forces, lj_pair, lj_total_energy, maxwell_boltzmann_velocities,
                       minimum_image, simulate_lj)

from oracles import brute_force_min_image, central_diff

BOX = 27.27


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, (3,), elements=st.floats(0, BOX, exclude_max=True)),
       arrays(np.float64, (3,), elements=st.floats(0, BOX, exclude_max=True)))
def test_minimum_image_matches_image_search(ri, rj):
    d = minimum_image(ri, rj, BOX)
    ref = brute_force_min_image(rj - ri, BOX)
    np.testing.assert_allclose(np.linalg.norm(d), np.linalg.norm(ref), atol=1e-9)
    assert np.all(d > -BOX / 2) and np.all(d <= BOX / 2)
    # it is a lattice translate of the raw displacement
    shift = (d - (rj - ri)) / BOX
    np.testing.assert_allclose(shift, np.round(shift), atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (3,), elements=st.floats(-100, 100)))
def test_minimum_image_antisymmetric(d):
    a = minimum_image(np.zeros(3), d, BOX)
    b = minimum_image(d, np.zeros(3), BOX)
    # only exact half-box ties may differ, and then by a full box length
    np.testing.assert_allclose(np.abs(a + b) % BOX, 0, atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 40), st.floats(2.0, 13.0))
def test_cutoff_graph_matches_brute_force(seed, n, cutoff):
    rng = np.random.default_rng(seed)
    pos = rng.uniform(0, BOX, (n, 3))
    recv, send, disp = cutoff_edges(pos, BOX, cutoff)
    expected = set()
    for i in range(n):
        for j in range(n):
            if i != j and np.linalg.norm(brute_force_min_image(pos[j] - pos[i], BOX)) < cutoff:
                expected.add((i, j))
    assert set(zip(recv.tolist(), send.tolist())) == expected
    assert len(expected) == len(recv)
    # receiver-major order and consistent displacements
    assert np.all(np.diff(recv * n + send) > 0)
    np.testing.assert_allclose(disp, minimum_image(pos[recv], pos[send], BOX))


def test_cutoff_pairs_unordered():
    pos = np.array([[0.5, 0.5, 0.5], [26.9, 0.5, 0.5], [13.0, 13.0, 13.0]])
    i, j, disp = cutoff_pairs(pos, BOX, 3.0)
    assert list(zip(i, j)) == [(0, 1)]
    np.testing.assert_allclose(disp[0], [-0.87, 0, 0], atol=1e-12)


def test_lj_pair_hand_values_and_derivative():
    eps, sig, rc = 1.5, 3.4, 10.2
    v, f = lj_pair(sig, eps, sig, rc)
    assert v == 0.0 and f == pytest.approx(24 * eps / sig)
    rmin = 2 ** (1 / 6) * sig
    v, f = lj_pair(rmin, eps, sig, rc)
    assert v == pytest.approx(-eps) and f == pytest.approx(0.0, abs=1e-12)
    for r in (3.2, 4.0, 7.5):
        dv = central_diff(lambda x: lj_pair(float(x[0]), eps, sig, rc)[0], np.array([r]))
        assert lj_pair(r, eps, sig, rc)[1] == pytest.approx(-dv[0], rel=1e-6)
    assert lj_pair(rc, eps, sig, rc) == (0.0, 0.0)
    with pytest.raises(SingularityError):
        lj_pair(0.0, eps, sig, rc)


def test_unit_conversions():
    # 1 kcal/mol = 418.4 internal units (10 J/mol); k_B in internal units per K
    assert UNITS.kcal_per_mol == pytest.approx(418.4)
    assert UNITS.boltzmann == pytest.approx(0.8314462618)
    # 1 kcal/mol = 43.364 meV
    assert UNITS.energy_to_mev(UNITS.kcal_per_mol) == pytest.approx(43.3641, rel=1e-5)
    assert UNITS.energy_from_mev(UNITS.energy_to_mev(3.0)) == pytest.approx(3.0)
    assert LjSpec().epsilon == pytest.approx(0.238 * 418.4)


def test_spec_validation():
    with pytest.raises(ConfigurationError):
        LjSpec(box_length=15.0)
    with pytest.raises(ConfigurationError):
        LjSpec(temperature=0.0)


def test_maxwell_boltzmann():
    m = np.full(20000, 39.9)
    v = maxwell_boltzmann_velocities(100.0, m, seed=1)
    np.testing.assert_allclose(m @ v, 0, atol=1e-8)
    assert kinetic_temperature(v, m) == pytest.approx(100.0, rel=0.02)


def test_forces_are_minus_energy_gradient():
    spec = LjSpec(n_atoms=20, box_length=22.0, n_steps=2)
    rng = np.random.default_rng(0)
    # jittered lattice so no pair is unphysically close
    g = np.stack(np.meshgrid(*[np.arange(3)] * 3, indexing="ij"), -1).reshape(-1, 3)[:20]
    pos = (g + 0.5) * (22.0 / 3) + rng.normal(0, 0.3, (20, 3))
    f, _ = lj_forces(pos, spec)
    num = -central_diff(lambda x: lj_forces(x, spec)[1], pos, h=1e-5)
    np.testing.assert_allclose(f, num, rtol=1e-5, atol=1e-6)
    recv, send, disp, fe, v = lj_edge_labels(pos, spec)
    net = np.zeros_like(pos)
    np.add.at(net, recv, fe)
    np.testing.assert_allclose(net, f, atol=1e-10)
    assert np.sum(v) / 2 == pytest.approx(lj_forces(pos, spec)[1])


def test_short_nve_run_conserves_energy_and_momentum():
    spec = LjSpec(n_steps=200, equilibration_steps=200)
    traj = simulate_lj(spec, seed=0)
    e = lj_total_energy(traj)
    assert np.max(np.abs(e - e[0])) / abs(e[0]) < 5e-3
    p = traj.momentum()
    assert np.max(np.abs(p - p[0])) < 1e-8
    assert np.all((traj.positions >= 0) & (traj.positions < spec.box_length))
