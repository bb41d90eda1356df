import numpy as np
import pytest

from conftest import INPUTS, nyquist_disk
from coniclpv import (
    AffineLpv,
    ConicSector,
    ParameterBounds,
    ParameterTrajectory,
    SectorPair,
    assemble_closed_loop,
    closed_loop_indices,
    complementary_cone,
    design_nominal_cone,
    find_conic_bounds,
    qsr_matrices,
    realize_conic_controller,
)
from coniclpv.conic import eps_at
from coniclpv.errors import WellPosednessError
from coniclpv.sdp import GridSpec
from coniclpv.synthesis import _integrals, evaluate_candidate


def random_plant(rng, n=2, D=False):
    A = [rng.standard_normal((n, n)) - 3 * np.eye(n), 0.3 * rng.standard_normal((n, n))]
    B = [rng.standard_normal((n, 1)), np.zeros((n, 1))]
    C = [rng.standard_normal((1, n)), rng.standard_normal((1, n))]
    Dm = [rng.standard_normal((1, 1)) if D else np.zeros((1, 1)), np.zeros((1, 1))]
    return AffineLpv(A, B, C, Dm, [0.0], [1.0])


def test_zero_feedthrough_block_formula():
    rng = np.random.default_rng(0)
    plant = random_plant(rng)
    ctrl = AffineLpv.lti([[-2.0, 0.3], [0.0, -1.0]], [[1.0], [0.5]], [[0.4, -0.2]], [[0.0]])
    cl = assemble_closed_loop(plant, ctrl)
    Ac, Bc, Cc, _ = ctrl.evaluate([0.0])
    for rho in (0.0, 0.37, 1.0):
        Ap, Bp, Cp, _ = plant.evaluate([rho])
        expect = np.block([[Ap, -Bp @ Cc], [Bc @ Cp, Ac]])
        assert np.allclose(cl.evaluate([rho])[0], expect, atol=1e-14)


def test_zero_controller_is_open_plant():
    rng = np.random.default_rng(1)
    plant = random_plant(rng, D=True)
    zero = AffineLpv.lti([[-1.0]], [[0.0]], [[0.0]], [[0.0]])
    cl = assemble_closed_loop(plant, zero)
    A, B, C, D = cl.evaluate([0.5])
    Ap, Bp, Cp, Dp = plant.evaluate([0.5])
    assert np.allclose(A[:2, :2], Ap) and np.allclose(B[:2, 1:], Bp)
    assert np.allclose(C[1:, :2], Cp) and np.allclose(D[1:, 1:], Dp)
    assert np.allclose(C[:1], 0) and np.allclose(D[:1], 0)


def test_ill_posed_loop():
    plant = AffineLpv.lti([[-1.0]], [[1.0]], [[1.0]], [[1.0]])
    ctrl = AffineLpv.lti([[-1.0]], [[0.0]], [[0.0]], [[-1.0]])
    with pytest.raises(WellPosednessError):
        assemble_closed_loop(plant, ctrl)


def test_realization_unit_lowpass():
    c = realize_conic_controller(ConicSector(-1.0, 1.0), pole_rate=10.0)
    A, B, C, D = c.evaluate([0.0])
    assert (A.item(), B.item(), C.item(), D.item()) == (-10.0, 10.0, 1.0, 0.0)


def test_realization_nyquist_inside_disk():
    c = realize_conic_controller(ConicSector(1.0, 3.0), pole_rate=4.0)
    w = np.logspace(-4, 6, 10_000)
    g = nyquist_disk(*c.evaluate([0.0]), w)
    assert np.max(np.abs(g - 2.0)) <= 1.0 + 1e-9


def test_realization_self_consistent():
    s = ConicSector(-0.4, 1.2)
    sec, _ = find_conic_bounds(realize_conic_controller(s, pole_rate=3.0))
    assert s.a - 1e-3 <= sec.a and sec.b <= s.b + 1e-3


def _stable_pair(plant_sector, delta=0.05):
    sc = complementary_cone(plant_sector, delta)
    return SectorPair(plant_sector, sc), sc


def test_closed_loop_indices_single_node_matches_lti():
    plant = AffineLpv([[[-1.0]], [[-0.5]]], [[1.0]], [[1.0]], [[0.0]], [0.0], [1.0])
    pair, sc = _stable_pair(ConicSector(-0.2, 1.2))
    ctrl = realize_conic_controller(sc, shrink=0.1)
    cl = assemble_closed_loop(plant, ctrl)
    qsr = qsr_matrices(pair)
    cert = closed_loop_indices(cl, qsr, [([0.4], [0.4], True)], grid=GridSpec(5, 3))
    (tab,) = cert.eps_tables
    assert not cert.alpha_tables
    lti = assemble_closed_loop(AffineLpv.lti([[-1.2]], [[1.0]], [[1.0]], [[0.0]]), ctrl)
    ref = eps_at(lti, None, [0.0], qsr=qsr.as_tuple()).value
    assert tab.values.item() == pytest.approx(ref, abs=1e-5)


def test_all_conic_closed_loop_has_no_alpha():
    plant = AffineLpv([[[-1.0]], [[-1.0]]], [[1.0]], [[1.0]], [[0.0]], [0.0], [1.0])
    pair, sc = _stable_pair(ConicSector(-0.1, 1.1))
    cl = assemble_closed_loop(plant, realize_conic_controller(sc, shrink=0.1))
    cert = closed_loop_indices(cl, qsr_matrices(pair), [([0.0], [1.0], True)], grid=GridSpec(3, 3))
    ie, ia, part = _integrals(cert, ParameterTrajectory.ramp(0.0, 1.0, 0, 4))
    assert ia == 0 and part.t_nc == 0


def test_design_degenerate_all_conic():
    plant = AffineLpv([[[-1.0]], [[-1.0]]], [[1.0]], [[1.0]], [[0.0]], [0.0], [1.0])
    trajs = [ParameterTrajectory.ramp(0.0, 1.0, 0, 5)]
    res = design_nominal_cone(plant, trajs, INPUTS)
    tight = res.baseline_sector
    assert res.int_alpha == 0 and res.residual >= 0
    assert res.radius == pytest.approx(tight.radius, abs=1e-3)
    assert res.plant_sector.a <= tight.a + 1e-9 and res.plant_sector.b >= tight.b - 1e-3
    d = res.to_dict()
    assert d["baseline_radius"] == pytest.approx(tight.radius)


def test_candidate_rejects_empty_controller_cone(plant):
    # a cone not straddling zero has no complementary controller
    cand = evaluate_candidate(plant, 1.0, 0.5, [ParameterTrajectory.constant(0.0, 0, 1)], INPUTS)
    assert cand.residual == -np.inf and cand.controller_sector is None
