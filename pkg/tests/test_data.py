import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pignpi.data import (FeatureLayout, GraphDataset, analytic_dataset, build_snapshot,
                         corrupt_positions, dataset_manifest, finite_difference_kinematics,
                         lj_dataset, noise_level, split_timesteps)
from pignpi.errors import ConfigurationError, DataError
from pignpi.lj import LjSpec, minimum_image, simulate_lj
from pignpi.sim import simulate_law


def test_layout_columns_and_descriptor():
    lay = FeatureLayout(2)
    assert lay.node_dim == 6 and lay.edge_input_dim == 12
    assert lay.node_names() == ["r_x", "r_y", "v_x", "v_y", "q", "m"]
    assert lay.column("m", "sender") == 11 and lay.column("q") == 4
    assert lay.sender_position == slice(6, 8)
    lj = FeatureLayout(3, include_charge=False, edge_displacement=True)
    assert lj.edge_input_dim == 2 * 7 + 3 and lj.displacement == slice(14, 17)
    with pytest.raises(KeyError):
        lj.column("q")
    assert FeatureLayout.from_descriptor(lj.descriptor()) == lj
    bad = dict(lj.descriptor(), version="0")
    with pytest.raises(ConfigurationError):
        FeatureLayout.from_descriptor(bad)


def test_snapshot_and_batch_contents(spring_small):
    ds = spring_small
    traj = ds.trajectory
    snap = ds.snapshot(7)
    x = snap.edge_inputs()
    e = 3
    i, j = snap.receivers[e], snap.senders[e]
    np.testing.assert_array_equal(x[e, :2], traj.positions[7, i])
    np.testing.assert_array_equal(x[e, 6:8], traj.positions[7, j])
    assert x[e, 5] == traj.masses[i] and x[e, 10] == traj.charges[j]

    b = ds.batch([7, 2, 9])
    assert b.n_graphs == 3 and b.n_nodes == 15 and b.n_edges == 60
    np.testing.assert_array_equal(b.edge_inputs[:20], x)
    np.testing.assert_array_equal(b.targets[5:10], traj.accelerations[2])
    assert b.receivers[20:].min() == 5 and b.receivers.max() == 14
    rev = b.reverse_index()
    np.testing.assert_array_equal(b.receivers[rev], b.senders)
    with pytest.raises(DataError):
        ds.batch([])
    with pytest.raises(DataError):
        ds.snapshot(ds.n_steps)


def test_edge_labels_sum_to_mass_times_acceleration(spring_small):
    ds = spring_small
    for t in (0, 31):
        f, _ = ds.edge_labels(t)
        r, _, _ = ds.edges(t)
        net = np.zeros((ds.n_particles, 2))
        np.add.at(net, r, f)
        np.testing.assert_allclose(net, ds.trajectory.masses[:, None]
                                   * ds.trajectory.accelerations[t], atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(10, 3000), st.integers(0, 100))
def test_split_is_a_disjoint_cover(n, seed):
    sp = split_timesteps(n, seed=seed)
    allsteps = np.concatenate([sp.train, sp.valid, sp.test])
    assert len(np.unique(allsteps)) == n == len(allsteps)
    assert abs(len(sp.train) - 0.7 * n) <= 1
    assert abs(len(sp.valid) - 0.15 * n) <= 1


def test_split_seeded_and_exclusion():
    a = split_timesteps(100, seed=4, exclude=[0, 99])
    b = split_timesteps(100, seed=4, exclude=[0, 99])
    np.testing.assert_array_equal(a.train, b.train)
    assert 0 not in np.concatenate([a.train, a.valid, a.test])
    with pytest.raises(ConfigurationError):
        split_timesteps(100, (0.5, 0.2, 0.2))
    with pytest.raises(ConfigurationError):
        split_timesteps(5)


def test_finite_differences_exact_for_quadratic_motion():
    dt = 0.01
    t = np.arange(20)[:, None, None] * dt
    x = 1.0 + 2.0 * t - 1.5 * t**2 + np.zeros((20, 3, 2))
    v, a = finite_difference_kinematics(x, dt)
    np.testing.assert_allclose(a, -3.0, rtol=1e-6)
    np.testing.assert_allclose(v[1:-1], 2.0 - 3.0 * t[1:-1] + 0 * x[1:-1], rtol=1e-9, atol=1e-9)
    with pytest.raises(DataError):
        finite_difference_kinematics(x[:2], dt)


def test_corruption_keeps_clean_labels(spring_small):
    traj = spring_small.trajectory
    noisy = corrupt_positions(traj, 1e-6, seed=0)
    assert noisy.forces is traj.forces
    assert 0 < np.abs(noisy.positions - traj.positions).max() < 1e-5
    assert noisy.meta["noise_beta"] == 1e-6
    assert corrupt_positions(traj, 0.0) is traj
    with pytest.raises(ConfigurationError):
        corrupt_positions(traj, -1.0)


def test_noise_level_hand_case():
    clean = np.array([[1.0, 0.0], [2.0, -4.0]])
    noisy = np.array([[1.5, 7.0], [1.0, -4.0]])
    # |0.5|/1, |1|/2, 0/4 ; the zero component is skipped
    assert noise_level(clean, noisy) == pytest.approx((0.5 + 0.5 + 0.0) / 3)
    with pytest.raises(DataError):
        noise_level(np.zeros(3), np.ones(3))


def test_lj_cutoff_dataset():
    spec = LjSpec(n_steps=3, equilibration_steps=0)
    traj = simulate_lj(spec, seed=1)
    ds = lj_dataset(traj)
    r, s, disp = ds.edges(1)
    pos = traj.positions[1]
    np.testing.assert_allclose(disp, minimum_image(pos[r], pos[s], spec.box_length))
    assert np.all(np.linalg.norm(disp, axis=1) < spec.cutoff)
    b = ds.batch([0, 2])
    assert b.edge_inputs.shape[1] == ds.layout.edge_input_dim
    f, _ = ds.edge_labels(1)
    net = np.zeros_like(pos)
    np.add.at(net, r, f)
    np.testing.assert_allclose(net, traj.masses[:, None] * traj.accelerations[1], atol=1e-8)
    snap = build_snapshot(traj, 0, "cutoff", cutoff=spec.cutoff)
    assert snap.edge_features is not None


def test_cutoff_without_metadata_refused(spring_small):
    with pytest.raises(ConfigurationError):
        GraphDataset(spring_small.trajectory, FeatureLayout(2), "cutoff", cutoff=1.0)
    with pytest.raises(ConfigurationError):
        build_snapshot(spring_small.trajectory, 0, "cutoff")


def test_manifest_records_layout(spring_small):
    sp = split_timesteps(60)
    m = dataset_manifest("spring", "full", sp, 0.0, spring_small.layout, seed=3)
    assert m["feature_layout"]["edge_inputs"][0] == "r_x_i"
    assert m["seed"] == 3 and m["split_ratios"] == [0.7, 0.15, 0.15]


def test_analytic_dataset_3d():
    ds = analytic_dataset(simulate_law("orbital", 4, 3, 20, seed=0))
    assert ds.layout.edge_input_dim == 2 * 8 and ds.batch([0]).n_edges == 12
