import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coniclpv import AffineLpv, GridLpv, ParameterBounds, ParameterTrajectory, discretize_trajectory
from coniclpv.errors import DomainError, InputError, ShapeError
from coniclpv.lpv import system_from_dict, validate_trajectory


def test_affine_evaluation():
    sys = AffineLpv([[[1.0]], [[-1.0]]], [[1.0]], [[1.0]], [[0.0]], [0.0], [3.0])
    A, B, C, D = sys.evaluate([0.0])
    assert A[0, 0] == 1.0
    A, *_ = sys.evaluate([2.0])
    assert A[0, 0] == -1.0
    assert (sys.n, sys.m, sys.p) == (1, 1, 1)


def test_pure_parameter_scaling():
    sys = AffineLpv([[[0.0]], [[-1.0]]], [[1.0]], [[1.0]], [[0.0]], [0.0], [3.0])
    assert sys.evaluate([2.0])[0][0, 0] == -2.0


def test_extrapolation_refused():
    sys = AffineLpv([[[0.0]], [[-1.0]]], [[1.0]], [[1.0]], [[0.0]], [0.0], [1.0])
    with pytest.raises(DomainError):
        sys.evaluate([1.5])
    with pytest.raises(ShapeError):
        sys.evaluate([0.1, 0.2])


def test_nonsquare_rejected():
    with pytest.raises(ShapeError):
        AffineLpv(np.eye(2), np.ones((2, 1)), np.ones((2, 2)), np.zeros((2, 1)), [0.0], [1.0])


def test_grid_constant_vertices():
    M = np.array([[-1.0, 0.5], [0.0, -2.0]])
    A = np.broadcast_to(M, (3, 2, 2, 2))
    sys = GridLpv([[0, 0.5, 1], [0, 1]], A, np.ones((3, 2, 2, 1)), np.ones((3, 2, 1, 2)), np.zeros((3, 2, 1, 1)))
    for rho in ([0.2, 0.7], [1.0, 0.0], [0.5, 0.5]):
        assert np.allclose(sys.evaluate(rho)[0], M)


def test_grid_vertices_and_interpolation():
    rng = np.random.default_rng(0)
    axes = [[0.0, 1.0, 2.0]]
    A = rng.standard_normal((3, 2, 2))
    sys = GridLpv(axes, A, rng.standard_normal((3, 2, 1)), rng.standard_normal((3, 1, 2)), np.zeros((3, 1, 1)))
    for i, r in enumerate(axes[0]):
        assert np.array_equal(sys.evaluate([r])[0], A[i])
    assert np.allclose(sys.evaluate([0.25])[0], 0.75 * A[0] + 0.25 * A[1])
    back = system_from_dict(sys.to_dict())
    assert np.allclose(back.evaluate([1.3])[0], sys.evaluate([1.3])[0])


def test_bounds_validation():
    with pytest.raises(InputError):
        ParameterBounds([1.0], [0.0])
    b = ParameterBounds([0.0], [1.0])
    assert b.rate_unbounded


def test_constant_trajectory_admissible():
    traj = ParameterTrajectory.constant(0.5, 0, 2)
    rep = validate_trajectory(traj, ParameterBounds([0.0], [1.0], [-1.0], [1.0]))
    assert rep.admissible


def test_rate_violation():
    traj = ParameterTrajectory.ramp(0.0, 1.0, 0.0, 0.5)
    rep = validate_trajectory(traj, ParameterBounds([0.0], [1.0], [-1.0], [1.0]))
    assert not rep.admissible
    assert rep.max_rate_violation == pytest.approx(1.0)
    assert rep.max_range_violation <= 0


def test_cubic_extremum_found_exactly():
    # rho = 4 tau (1 - tau) peaks at exactly 1 at tau = 1/2
    traj = ParameterTrajectory([0.0, 1.0], [[[0.0, 4.0, -4.0]]])
    rep = validate_trajectory(traj, ParameterBounds([0.0], [0.999]), points_per_segment=2)
    assert rep.max_range_violation == pytest.approx(0.001, abs=1e-12)


def test_discrete_skips_rate():
    traj = ParameterTrajectory.piecewise_constant([0, 1, 2], [0.0, 1.0])
    rep = validate_trajectory(traj, ParameterBounds([0.0], [1.0], [-0.1], [0.1]))
    assert rep.admissible and not rep.rate_checked


def test_continuity_enforced():
    with pytest.raises(InputError):
        ParameterTrajectory([0, 1, 2], [[[0.0]], [[1.0]]])


def test_discretize_examples():
    ramp = ParameterTrajectory.ramp(0.0, 1.0)
    d = discretize_trajectory(ramp, 0.5)
    assert d.discrete
    assert np.allclose(d.segment_values()[:, 0], [0.25, 0.75])
    d = discretize_trajectory(ramp, 0.25)
    assert np.allclose(d.segment_values()[:, 0], [0.125, 0.375, 0.625, 0.875])
    const = discretize_trajectory(ParameterTrajectory.constant(0.3), 0.1)
    assert np.allclose(const.segment_values(), 0.3)
    single = discretize_trajectory(ramp, 5.0)
    assert single.breakpoints.size == 2


@settings(max_examples=30, deadline=None)
@given(
    s=st.floats(-3, 3).filter(lambda v: abs(v) > 1e-3),
    k=st.integers(0, 6),
)
def test_mesh_halving_halves_error_on_ramps(s, k):
    # dyadic meshes so that halving the norm doubles the cell count exactly
    h = 0.5**k
    traj = ParameterTrajectory.ramp(0.0, s)
    t = np.linspace(0, 1, 4001)[:-1]

    def err(mesh):
        return np.max(np.abs(discretize_trajectory(traj, mesh)(t) - traj(t)))

    assert err(h / 2) <= 0.5 * err(h) * (1 + 1e-2)


@settings(max_examples=30, deadline=None)
@given(c=st.lists(st.floats(-1, 1), min_size=4, max_size=4), h=st.floats(0.01, 0.5))
def test_discretization_error_within_lipschitz_bound(c, h):
    traj = ParameterTrajectory([0.0, 1.0], [[c]])
    t = np.linspace(0, 1, 4001)[:-1]
    lip = np.max(np.abs(traj.derivative(np.linspace(0, 1, 4001))))
    d = discretize_trajectory(traj, h)
    mesh = np.max(np.diff(d.breakpoints))
    assert mesh <= h + 1e-12
    assert np.max(np.abs(d(t) - traj(t))) <= 0.5 * lip * mesh + 1e-9


def test_discretize_preserves_range():
    traj = ParameterTrajectory([0.0, 1.0], [[[0.0, 4.0, -4.0]]])
    b = ParameterBounds([0.0], [1.0])
    assert validate_trajectory(traj, b).max_range_violation <= 1e-12
    for mesh in (0.3, 0.1, 0.01):
        assert validate_trajectory(discretize_trajectory(traj, mesh), b).max_range_violation <= 1e-12


def test_trajectory_roundtrip():
    traj = ParameterTrajectory.piecewise_linear([0, 1, 3], [0.0, 1.0, 0.5])
    back = ParameterTrajectory.from_dict(traj.to_dict())
    t = np.linspace(0, 3, 7)
    assert np.allclose(back(t), traj(t))
    assert np.allclose(traj.derivative(0.5), 1.0)
