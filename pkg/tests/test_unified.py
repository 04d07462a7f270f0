import numpy as np
import pytest

from nonsmooth_ggl import (
    BilateralSliderCrank,
    BouncingBall,
    BouncingBallParams,
    GeneralizedState,
    ReferenceStepper,
    SolverConfig,
    UnifiedStepper,
    UnifiedUnknowns,
    UnilateralSliderCrank,
    assemble_jacobian,
    assemble_residual,
    gap_linearization,
    moreau_step,
    reference_step,
    run_simulation,
    step_basis,
    unified_step,
)
from nonsmooth_ggl.unified import _fd_jacobian, _residual

EMPTY = np.zeros(0, dtype=int)


def random_unknowns(rng, model, dt, n_active):
    q = rng.uniform(-0.6, 0.6, model.dof)
    v = rng.uniform(-120.0, 120.0, model.dof) if model.dof > 1 else rng.uniform(-2, 2, 1)
    prev = GeneralizedState(0.0, q, v)
    x = UnifiedUnknowns(
        q_next=q + dt * v + rng.normal(0.0, 1e-4, model.dof),
        v_next=v + rng.normal(0.0, 1e-2, model.dof),
        lambda_red=rng.uniform(-1e-3, 1e-2, n_active),
        psi_red=rng.uniform(-1e-6, 1e-5, n_active),
    )
    return prev, x


def test_residual_empty_active_set_reduces_to_implicit_midpoint():
    model = UnilateralSliderCrank(eps=0.1)
    cfg = SolverConfig(dt=1e-5)
    prev = model.initial_state()
    out, report = unified_step(model, prev, cfg)
    assert report.converged and out.active.size == 0
    x = UnifiedUnknowns(out.state.q, out.state.v, np.zeros(0), np.zeros(0))
    res = assemble_residual(model, prev, x, EMPTY, cfg)
    assert res.size == 2 * model.dof  # rows 3-4 absent
    assert np.max(np.abs(res)) <= cfg.newton_tol


def test_residual_at_moreau_solution_is_second_order():
    # the only difference on a contact-free step is the h evaluation point
    model = UnilateralSliderCrank(eps=0.1)
    cfg = SolverConfig(dt=1e-5)
    prev = model.initial_state()
    out = moreau_step(model, prev, cfg)
    x = UnifiedUnknowns(out.state.q, out.state.v, np.zeros(0), np.zeros(0))
    res = assemble_residual(model, prev, x, EMPTY, cfg)
    assert np.max(np.abs(res)) <= 1e3 * cfg.dt**2


def test_resting_ball_equilibrium_is_exact_root():
    mass = 2.0
    ball = BouncingBall(BouncingBallParams(mass=mass))
    cfg = SolverConfig(dt=1e-3)
    prev = GeneralizedState(0.0, [0.0], [0.0])
    active = np.array([0])
    x = UnifiedUnknowns(
        q_next=np.zeros(1),
        v_next=np.zeros(1),
        lambda_red=np.array([mass * 9.81 * cfg.dt]),
        psi_red=np.zeros(1),
    )
    res = assemble_residual(ball, prev, x, active, cfg)
    assert np.max(np.abs(res)) == 0.0


def test_gap_linearization_drift_prediction():
    # zero multipliers and constant velocity: pure gap drift
    model = UnilateralSliderCrank(eps=0.1)
    cfg = SolverConfig(dt=1e-5)
    prev = model.initial_state()
    x = UnifiedUnknowns(prev.q + cfg.dt * prev.v, prev.v.copy(), np.zeros(0), np.zeros(0))
    g_next, gd_next = gap_linearization(model, prev, x, cfg, active=EMPTY)
    q_mid = 0.5 * (x.q_next + prev.q)
    w = model.constraint_matrix(q_mid)
    assert np.allclose(g_next, model.gaps(prev.q) + cfg.dt * (w.T @ prev.v), atol=1e-15)
    impulse = np.linalg.solve(
        model.mass_matrix(prev.q + 0.5 * cfg.dt * prev.v),
        model.force(q_mid, prev.v) * cfg.dt,
    )
    expected_gd = model.gap_velocities(prev.q, prev.v) + w.T @ impulse
    assert np.allclose(gd_next, expected_gd, atol=1e-14)


def test_gap_linearization_exact_for_ball():
    ball = BouncingBall()
    cfg = SolverConfig(dt=1e-3)
    prev = GeneralizedState(0.0, [1e-4], [-0.3])
    x = UnifiedUnknowns(np.array([5e-5]), np.array([-0.1]), np.array([0.2]), np.array([3e-5]))
    g_next, gd_next = gap_linearization(ball, prev, x, cfg, active=np.array([0]))
    expected_g = 1e-4 + 0.5 * cfg.dt * (-0.1 - 0.3) + 3e-5
    assert g_next[0] == pytest.approx(expected_g, rel=1e-14)
    assert gd_next[0] == pytest.approx(-0.3 + (-9.81 * cfg.dt + 0.2), rel=1e-12)


def test_gap_linearization_close_to_exact_gaps():
    model = UnilateralSliderCrank(eps=0.1)
    cfg = SolverConfig(dt=1e-5)
    rng = np.random.default_rng(31)
    for _ in range(20):
        prev, x = random_unknowns(rng, model, cfg.dt, 0)
        # consistent with row 1 so the midpoint-gradient expansion applies
        x.q_next = prev.q + 0.5 * cfg.dt * (x.v_next + prev.v)
        g_next, _ = gap_linearization(model, prev, x, cfg, active=EMPTY)
        exact = model.gaps(x.q_next)
        assert np.max(np.abs(g_next - exact)) < 1e-8


def test_jacobian_identity_rows_for_separating_contacts():
    ball = BouncingBall(BouncingBallParams(mass=1.0))
    cfg = SolverConfig(dt=1e-3)
    prev = GeneralizedState(0.0, [1e-4], [2.0])  # opening fast
    active = np.array([0])
    x = UnifiedUnknowns(prev.q + cfg.dt * prev.v, prev.v.copy(), np.zeros(1), np.zeros(1))
    jac = assemble_jacobian(ball, prev, x, active, cfg)
    # prox arguments negative: rows 3-4 are identity on (lam, psi)
    assert np.allclose(jac[2], [0.0, 0.0, 1.0, 0.0])
    assert np.allclose(jac[3], [0.0, 0.0, 0.0, 1.0])


def test_jacobian_empty_active_set_tends_to_identity():
    model = UnilateralSliderCrank(eps=0.1)
    cfg = SolverConfig(dt=1e-12)
    prev = model.initial_state()
    x = UnifiedUnknowns(prev.q.copy(), prev.v.copy(), np.zeros(0), np.zeros(0))
    jac = assemble_jacobian(model, prev, x, EMPTY, cfg)
    assert jac.shape == (6, 6)
    assert np.max(np.abs(jac - np.eye(6))) < 1e-6


@pytest.mark.parametrize(
    "model",
    [UnilateralSliderCrank(eps=0.1), BilateralSliderCrank(), BouncingBall()],
)
def test_jacobian_matches_finite_differences(model):
    rng = np.random.default_rng(37)
    cfg = SolverConfig(dt=1e-5)
    for _ in range(10):
        n_active = int(rng.integers(0, model.n_contacts + 1))
        idx = np.sort(rng.choice(model.n_contacts, size=n_active, replace=False))
        prev, x = random_unknowns(rng, model, cfg.dt, n_active)
        basis = step_basis(model, prev, cfg, impact_set=idx, position_set=idx)
        analytic = assemble_jacobian(model, prev, x, idx, cfg, basis=basis)
        fd = _fd_jacobian(model, basis, x.pack(), model.dof, n_active, n_active)
        scale = max(1.0, np.max(np.abs(fd)))
        assert np.max(np.abs(analytic - fd)) / scale < 1e-5


def test_unified_ball_drop_first_impact():
    ball = BouncingBall(BouncingBallParams(mass=1.0, height=0.1, eps=0.5))
    cfg = SolverConfig(dt=1e-4, active_tol=2e-8)
    rec = run_simulation(ball, UnifiedStepper(ball, cfg), ball.initial_state(), 1600)
    hit = np.flatnonzero(rec.lambdas[:, 0] > 0.0)
    assert hit.size > 0
    first = hit[0]
    pre = rec.gap_velocities[first - 1, 0]
    post = rec.gap_velocities[first, 0]
    assert abs(-pre - np.sqrt(2 * 9.81 * 0.1)) / np.sqrt(2 * 9.81 * 0.1) < 0.01
    assert abs(-post / pre - 0.5) < 0.02


def test_unified_resting_ball_stays_at_rest():
    mass = 1.3
    ball = BouncingBall(BouncingBallParams(mass=mass))
    cfg = SolverConfig(dt=1e-3, active_tol=1e-9)
    stepper = UnifiedStepper(ball, cfg)
    state = GeneralizedState(0.0, [0.0], [0.0])
    for _ in range(100):
        out = stepper.step(state)
        state = out.state
        assert out.lam[0] == pytest.approx(mass * 9.81 * cfg.dt, rel=1e-9)
        assert abs(out.psi[0]) < 1e-12
        assert abs(state.q[0]) < 1e-15
    assert abs(state.v[0]) < 1e-15


def test_reference_equals_unified_without_contacts():
    model = UnilateralSliderCrank(eps=0.1)
    cfg = SolverConfig(dt=1e-5)
    prev = model.initial_state()
    a, _ = unified_step(model, prev, cfg)
    b = reference_step(model, prev, cfg)
    assert np.allclose(a.state.q, b.state.q, atol=1e-15)
    assert np.allclose(a.state.v, b.state.v, atol=1e-12)


def test_reference_resting_ball_drifts_negative():
    ball = BouncingBall(BouncingBallParams(mass=1.0, eps=0.5))
    cfg = SolverConfig(dt=1e-3)
    # same contact impulse as the unified scheme on an active step
    prev = GeneralizedState(0.0, [-1e-9], [0.0])
    uni, _ = unified_step(ball, prev, cfg)
    ref = reference_step(ball, prev, cfg)
    assert ref.lam[0] == pytest.approx(uni.lam[0], rel=1e-12)
    assert uni.state.q[0] >= -1e-12
    # without the position rows the resting ball settles below the floor
    stepper = ReferenceStepper(ball, cfg)
    state = GeneralizedState(0.0, [0.0], [0.0])
    qs = []
    for _ in range(200):
        state = stepper.step(state).state
        qs.append(state.q[0])
    assert min(qs) < -1e-6
    assert qs[-1] < -1e-6


def test_newton_report_and_determinism():
    model = UnilateralSliderCrank(eps=0.1)
    cfg = SolverConfig(dt=1e-5)
    state = model.initial_state()
    stepper = UnifiedStepper(model, cfg)
    out = stepper.step(state)
    rep = stepper.last_report
    assert rep.converged and rep.final_residual <= cfg.newton_tol
    assert rep.jacobian_mode == "analytic"
    assert out.iterations == rep.iterations

    rec_a = run_simulation(model, UnifiedStepper(model, cfg), state, 300)
    rec_b = run_simulation(model, UnifiedStepper(model, cfg), state, 300)
    assert np.array_equal(rec_a.qs, rec_b.qs)
    assert np.array_equal(rec_a.vs, rec_b.vs)
    assert np.array_equal(rec_a.lambdas, rec_b.lambdas)


def test_singular_jacobian_falls_back_and_flags():
    class DegenerateContact(BouncingBall):
        # zero constraint direction: the position row cannot be solved
        def constraint_matrix(self, q):
            return np.zeros((1, 1))

        def constraint_tensor(self, q):
            return np.zeros((1, 1, 1))

    model = DegenerateContact(BouncingBallParams(mass=1.0))
    cfg = SolverConfig(dt=1e-3, active_tol=1e-6, max_iter=5, r_mode="unit")
    prev = GeneralizedState(0.0, [-1e-5], [0.0])
    out, report = unified_step(model, prev, cfg)
    assert not report.converged
    assert not out.converged
    assert report.jacobian_mode == "finite-difference"


def test_unknowns_pack_unpack_roundtrip():
    x = UnifiedUnknowns(np.arange(3.0), np.arange(3.0, 6.0), np.array([6.0]), np.array([7.0, 8.0]))
    packed = x.pack()
    y = UnifiedUnknowns.unpack(packed, 3, 1, 2)
    assert np.array_equal(y.q_next, x.q_next)
    assert np.array_equal(y.psi_red, x.psi_red)
    with pytest.raises(ValueError):
        UnifiedUnknowns.unpack(packed, 3, 2, 2)


def test_nonfinite_evaluation_raises():
    model = UnilateralSliderCrank(eps=0.1)
    cfg = SolverConfig(dt=1e-5)
    prev = model.initial_state()
    x = UnifiedUnknowns(
        prev.q + np.array([np.inf, 0, 0]), prev.v.copy(), np.zeros(0), np.zeros(0)
    )
    with pytest.raises((FloatingPointError, ValueError)):
        assemble_residual(model, prev, x, EMPTY, cfg)

    class NanForce(BouncingBall):
        def force(self, q, v):
            return np.array([np.nan])

    ball = NanForce()
    prev = GeneralizedState(0.0, [0.1], [0.0])
    y = UnifiedUnknowns(np.array([0.1]), np.zeros(1), np.zeros(0), np.zeros(0))
    with pytest.raises(FloatingPointError):
        assemble_residual(ball, prev, y, EMPTY, cfg)
