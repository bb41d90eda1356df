import numpy as np
import pytest

from conftest import INPUTS
from coniclpv import AffineLpv, ConicSector, InputClass, ParameterTrajectory, assemble_closed_loop, design_nominal_cone
from coniclpv import realize_conic_controller
from coniclpv.errors import DivergenceError, InputError, ShapeError
from coniclpv.sim import Signal, SignalSpec, empirical_l2_gain, generate_input, simulate_feedback, simulate_open_loop
from coniclpv.lpv import discretize_trajectory


def test_constant_unit_input():
    u = generate_input(SignalSpec("constant", InputClass(1.0, 1.0), seed=3), 2.0)
    assert np.allclose(np.abs(u.values), 1.0)
    assert np.unique(u.values).size == 1


@pytest.mark.parametrize("kind", ["constant", "sinusoid", "noise"])
@pytest.mark.parametrize("m", [1, 3])
def test_inputs_respect_bounds(kind, m):
    u = generate_input(SignalSpec(kind, INPUTS, m=m, seed=11), 5.0)
    nrm = np.linalg.norm(u.values, axis=1)
    assert np.all(nrm >= INPUTS.u_low * (1 - 1e-12)) and np.all(nrm <= INPUTS.u_high * (1 + 1e-12))
    assert u.t[0] == 0 and u.t[-1] == 5.0


def test_input_determinism():
    spec = SignalSpec("noise", INPUTS, seed=5)
    a, b = generate_input(spec, 3.0), generate_input(spec, 3.0)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, generate_input(SignalSpec("noise", INPUTS, seed=6), 3.0).values)


def test_input_spec_errors():
    with pytest.raises(InputError):
        InputClass(0.0, 1.0)
    with pytest.raises(InputError):
        SignalSpec("zero", None)
    with pytest.raises(InputError):
        SignalSpec("chirp", INPUTS)


def lag():
    return AffineLpv.lti([[-1.0]], [[1.0]], [[1.0]], [[0.0]])


def test_zero_input_zero_trace():
    u = generate_input(SignalSpec("zero", None, allow_zero=True), 2.0)
    tr = simulate_open_loop(lag(), ParameterTrajectory.constant(0.0, 0, 2), u)
    assert not np.any(tr.x) and not np.any(tr.y)


def test_step_response():
    traj = ParameterTrajectory.constant(0.0, 0, 5)
    u = Signal.from_function(lambda t: 1.0, 0, 5)
    tr = simulate_open_loop(lag(), traj, u, dt=1e-2)
    assert np.max(np.abs(tr.y[:, 0] - (1 - np.exp(-tr.t)))) <= 1e-6


def test_parameter_ramp_closed_form():
    sys = AffineLpv([[[0.0]], [[-1.0]]], [[0.0]], [[1.0]], [[0.0]], [0.0], [2.0])
    traj = ParameterTrajectory.ramp(0.0, 2.0, 0, 4)
    u = Signal.from_function(lambda t: 0.0, 0, 4)
    tr = simulate_open_loop(sys, traj, u, x0=[1.0], dt=1e-2)
    exact = np.exp(-0.25 * tr.t**2)  # int_0^t s/2 ds
    assert np.max(np.abs(tr.x[:, 0] - exact)) <= 1e-5


def test_jump_handled_at_breakpoint():
    sys = AffineLpv([[[0.0]], [[-1.0]]], [[0.0]], [[1.0]], [[0.0]], [0.0], [2.0])
    traj = ParameterTrajectory.piecewise_constant([0, 0.333, 1], [1.0, 2.0])
    u = Signal.from_function(lambda t: 0.0, 0, 1)
    tr = simulate_open_loop(sys, traj, u, x0=[1.0], dt=0.02)
    assert 0.333 in tr.t
    assert tr.x[-1, 0] == pytest.approx(np.exp(-0.333 - 2 * 0.667), rel=1e-5)


def test_shape_and_coverage_errors():
    traj = ParameterTrajectory.constant(0.0, 0, 2)
    with pytest.raises(ShapeError):
        simulate_open_loop(lag(), traj, generate_input(SignalSpec("constant", INPUTS, m=2), 2.0))
    with pytest.raises(InputError):
        simulate_open_loop(lag(), traj, generate_input(SignalSpec("constant", INPUTS), 1.0))


def _closed_loop():
    plant = AffineLpv([[[-1.0]], [[-1.0]]], [[1.0]], [[1.0]], [[0.0]], [0.0], [1.0])
    from coniclpv import complementary_cone

    sc = complementary_cone(ConicSector(-0.1, 1.1), 0.05)
    return assemble_closed_loop(plant, realize_conic_controller(sc, shrink=0.1))


def test_feedback_zero_trace():
    z = generate_input(SignalSpec("zero", None, allow_zero=True), 2.0)
    tr = simulate_feedback(_closed_loop(), ParameterTrajectory.ramp(0.0, 1.0, 0, 2), z, z)
    assert not np.any(tr.y) and not np.any(tr.e) and not np.any(tr.x_p)


def test_feedback_relations_and_determinism():
    cl = _closed_loop()
    traj = ParameterTrajectory.ramp(0.0, 1.0, 0, 3)
    uc = generate_input(SignalSpec("sinusoid", INPUTS, seed=1), 3.0)
    up = generate_input(SignalSpec("noise", INPUTS, seed=2), 3.0)
    a = simulate_feedback(cl, traj, uc, up)
    b = simulate_feedback(cl, traj, uc, up)
    assert a.relation_error() <= 1e-12 * max(1, np.max(np.abs(a.e)))
    assert np.array_equal(a.y, b.y) and np.array_equal(a.x_c, b.x_c)


def test_designed_loop_bounded_over_long_horizon():
    plant = AffineLpv([[[-1.0]], [[-1.0]]], [[1.0]], [[1.0]], [[0.0]], [0.0], [1.0])
    res = design_nominal_cone(plant, [ParameterTrajectory.ramp(0.0, 1.0, 0, 5)], INPUTS)
    cl = assemble_closed_loop(plant, realize_conic_controller(res.controller_sector, shrink=0.1))
    traj = discretize_trajectory(ParameterTrajectory([0, 50], [[[0.5, 0.0, 0.0, 0.0]]]), 5.0)
    rng = np.random.default_rng(0)
    traj = ParameterTrajectory.piecewise_constant(traj.breakpoints, rng.uniform(0, 1, traj.breakpoints.size - 1))
    uc = generate_input(SignalSpec("sinusoid", INPUTS, seed=1), 50.0)
    up = generate_input(SignalSpec("noise", INPUTS, seed=2), 50.0)
    tr = simulate_feedback(cl, traj, uc, up)
    assert np.max(np.abs(tr.x_p)) < 100


def test_destabilized_loop_diverges():
    # plant pole at +1 while rho = 1; positive static feedback moves it to +3
    plant = AffineLpv([[[-1.0]], [[2.0]]], [[1.0]], [[1.0]], [[0.0]], [0.0], [1.0])
    ctrl = AffineLpv.lti([[-1.0]], [[0.0]], [[0.0]], [[-2.0]])
    cl = assemble_closed_loop(plant, ctrl)
    A = cl.evaluate([1.0])[0]
    assert np.max(np.linalg.eigvals(A).real) > 0
    u = generate_input(SignalSpec("constant", INPUTS), 20.0)
    with pytest.raises(DivergenceError) as exc:
        simulate_feedback(cl, ParameterTrajectory.constant(1.0, 0, 20), u, u, dt=1e-2)
    assert exc.value.time < 20


def test_gain_examples():
    static = AffineLpv.lti([[-1.0]], [[0.0]], [[0.0]], [[0.5]])
    traj = ParameterTrajectory.constant(0.0, 0, 2)
    tr = simulate_open_loop(static, traj, generate_input(SignalSpec("sinusoid", INPUTS, seed=4), 2.0))
    assert empirical_l2_gain([tr]) == pytest.approx(0.5, rel=1e-12)

    lp = AffineLpv.lti([[-10.0]], [[10.0]], [[1.0]], [[0.0]])
    traj = ParameterTrajectory.constant(0.0, 0, 60)
    u = Signal.from_function(lambda t: np.sin(0.2 * t), 0, 60, dt=1e-2)
    tr = simulate_open_loop(lp, traj, u, dt=1e-2)
    assert empirical_l2_gain([tr]) == pytest.approx(1.0, rel=0.05)

    seeds = [simulate_open_loop(lag(), ParameterTrajectory.constant(0.0, 0, 3),
                                generate_input(SignalSpec("noise", INPUTS, seed=s), 3.0)) for s in range(4)]
    full = empirical_l2_gain(seeds)
    assert all(empirical_l2_gain(seeds[:k]) <= full for k in range(1, 4))
    with pytest.raises(InputError):
        empirical_l2_gain([])


def test_csv_export(tmp_path):
    tr = simulate_open_loop(lag(), ParameterTrajectory.constant(0.0, 0, 1),
                            generate_input(SignalSpec("constant", INPUTS), 1.0), dt=0.1)
    path = tmp_path / "t.csv"
    tr.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,x1,u1,y1,rho1"
    assert len(lines) == tr.t.size + 1
