import numpy as np
import pytest

from ddmrc import (
    ControllerGains,
    MatchingInfeasibleError,
    NoiseSpec,
    ReferenceModel,
    StateSpaceModel,
    SynthesisOptions,
    average_snapshots,
    build_snapshots,
    builtin_scenarios,
    check_lyapunov,
    recover_gains,
    reconstruct_closed_loop,
    simulate_open_loop,
    solve_exact,
    solve_relaxed,
    solve_sdp,
    spectral_radius,
    verify_matching,
)
from ddmrc.sdp import export_problem
from ddmrc.synthesis import build_sdp_problem
from helpers import (
    matchable_reference,
    noiseless_snapshots,
    random_stable_system,
    stable_scenario_data,
)


def _star_gains(plant, ref):
    K_x = np.linalg.solve(plant.B, ref.A_M - plant.A)
    K_r = np.linalg.solve(plant.B, ref.B_M)
    return K_x, K_r


# --- exact path ------------------------------------------------------------


def test_exact_recovers_bundled_scenario_gains():
    stable, snap = stable_scenario_data(seed=0)
    out = solve_exact(snap, stable.ref_model)
    assert out.status == "optimal"
    Kx_star, Kr_star = _star_gains(stable.plant, stable.ref_model)
    assert np.linalg.norm(out.gains.K_x - Kx_star, 2) < 1e-6
    assert np.linalg.norm(out.gains.K_r - Kr_star, 2) < 1e-6
    # printed 4-decimal matrices agree to 1e-3
    assert np.linalg.norm(out.gains.K_x - stable.optimal_gains.K_x, 2) < 1e-3


def test_exact_scalar_by_inspection():
    model = StateSpaceModel([[0.5]], [[1.0]])
    rng = np.random.default_rng(0)
    rec = simulate_open_loop(model, rng.uniform(-1, 1, (10, 1)), [1.0])
    out = solve_exact(build_snapshots(rec), ReferenceModel([[0.2]], [[0.8]]))
    assert out.gains.K_x[0, 0] == pytest.approx(-0.3, abs=1e-9)
    assert out.gains.K_r[0, 0] == pytest.approx(0.8, abs=1e-9)


def test_exact_infeasible_when_input_has_no_effect():
    model = StateSpaceModel([[0.5]], [[0.0]])
    rng = np.random.default_rng(1)
    rec = simulate_open_loop(model, rng.uniform(-1, 1, (10, 1)), [1.0])
    snap = build_snapshots(rec)
    out = solve_exact(snap, ReferenceModel([[0.2]], [[0.8]]), require_rank=False)
    assert out.status == "infeasible"
    assert out.gains is None


def test_exact_rejects_rank_deficient_data_by_default():
    model = StateSpaceModel([[0.5]], [[0.0]])
    rec = simulate_open_loop(model, np.ones((10, 1)), [0.0])
    with pytest.raises(MatchingInfeasibleError):
        solve_exact(build_snapshots(rec), ReferenceModel([[0.2]], [[0.8]]))


# --- relaxed path ----------------------------------------------------------


def test_relaxed_zero_objective_when_feasible():
    stable, snap = stable_scenario_data(seed=2)
    out = solve_relaxed(snap, stable.ref_model, SynthesisOptions(mode="relaxed_unstab"))
    assert out.status == "optimal"
    assert out.objective_value < 1e-6
    Kx_star, Kr_star = _star_gains(stable.plant, stable.ref_model)
    assert np.linalg.norm(out.gains.K_x - Kx_star, 2) < 1e-4
    assert np.linalg.norm(out.gains.K_r - Kr_star, 2) < 1e-4


def _rank_deficient_case(seed=3):
    # two inputs entering through collinear columns: B_M below cannot be hit
    rng = np.random.default_rng(seed)
    b = rng.normal(size=(2, 1))
    B = np.hstack([b, 2 * b])
    A = 0.5 * np.eye(2)
    model = StateSpaceModel(A, B)
    ref = ReferenceModel(0.2 * np.eye(2), 0.8 * np.eye(2))
    rec = simulate_open_loop(model, rng.uniform(-2, 2, (20, 2)), rng.normal(size=2))
    return model, ref, build_snapshots(rec)


def test_relaxed_positive_objective_matches_least_squares_oracle():
    model, ref, snap = _rank_deficient_case()
    opts = SynthesisOptions(mode="relaxed_unstab", norm="fro")
    out = solve_relaxed(snap, ref, opts)
    assert out.status == "optimal"
    assert out.objective_value > 1e-3

    # oracle: minimize each term by least squares over the affine feasible
    # sets {G : X0 G = C} parametrized through a particular solution plus
    # the null space of X0
    def ls_min(rhs_consistency, target):
        G0, *_ = np.linalg.lstsq(snap.X0, rhs_consistency, rcond=None)
        _, s, Vt = np.linalg.svd(snap.X0)
        null = Vt[np.sum(s > 1e-10 * s[0]) :].T
        M = snap.X1 @ null
        resid0 = snap.X1 @ G0 - target
        C, *_ = np.linalg.lstsq(M, -resid0, rcond=None)
        return np.linalg.norm(resid0 + M @ C, "fro")

    oracle = ls_min(np.eye(2), ref.A_M) + ls_min(np.zeros((2, 2)), ref.B_M)
    assert out.objective_value == pytest.approx(oracle, rel=1e-4, abs=1e-6)


def test_relaxed_large_lambda_reduces_Bm_residual():
    model, ref, snap = _rank_deficient_case(seed=4)
    out1 = solve_relaxed(snap, ref, SynthesisOptions(mode="relaxed_unstab", lam=1.0))
    out2 = solve_relaxed(snap, ref, SynthesisOptions(mode="relaxed_unstab", lam=100.0))
    assert out2.residual_Bm <= out1.residual_Bm + 1e-9


# --- SDP path --------------------------------------------------------------


def test_sdp_noiseless_equals_exact():
    stable, snap = stable_scenario_data(seed=0)
    exact = solve_exact(snap, stable.ref_model)
    out = solve_sdp(snap, stable.ref_model, SynthesisOptions(mode="sdp"))
    assert out.status == "optimal"
    assert out.objective_value < 1e-6
    assert np.linalg.norm(out.gains.K_x - exact.gains.K_x, 2) < 1e-4
    assert np.linalg.norm(out.gains.K_r - exact.gains.K_r, 2) < 1e-4


def test_sdp_solution_satisfies_lyapunov_by_recheck():
    stable, snap = stable_scenario_data(seed=5)
    out = solve_sdp(snap, stable.ref_model, SynthesisOptions(mode="sdp"))
    assert out.status == "optimal"
    P = out.P
    assert np.linalg.eigvalsh(P).min() > 0
    Acl_data = snap.X1 @ out.Qx @ np.linalg.inv(P)
    assert check_lyapunov(Acl_data, P)


def test_averaged_sdp_stabilizes_unstable_plant_from_noisy_data():
    _, unstable = builtin_scenarios()
    pre = ControllerGains(-np.eye(3), np.eye(3))
    from ddmrc import simulate_closed_loop

    failures = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        refs = rng.uniform(-5, 10, (30, 3))
        sigma = 0.8  # average SNR in the mid-teens dB for this excitation
        snaps = [
            build_snapshots(
                simulate_closed_loop(
                    unstable.plant,
                    pre,
                    refs,
                    np.zeros(3),
                    NoiseSpec(sigma, seed=100 * seed + i),
                )
            )
            for i in range(100)
        ]
        out = solve_sdp(
            average_snapshots(snaps),
            unstable.ref_model,
            SynthesisOptions(mode="averaged_sdp"),
        )
        if out.status != "optimal":
            failures += 1
            continue
        rho = spectral_radius(unstable.plant.A + unstable.plant.B @ out.gains.K_x)
        if rho >= 1:
            failures += 1
    assert failures == 0


def test_averaged_sdp_single_experiment_problem_identical_to_sdp():
    stable, snap = stable_scenario_data(seed=6, sigma=0.05)
    avg = average_snapshots([snap])
    p1 = build_sdp_problem(snap, stable.ref_model, SynthesisOptions(mode="sdp"))
    p2 = build_sdp_problem(avg, stable.ref_model, SynthesisOptions(mode="averaged_sdp"))
    assert export_problem(p1) == export_problem(p2)


# --- gain recovery and reconstruction --------------------------------------


def test_recover_gains_identity_P():
    rng = np.random.default_rng(7)
    U0 = rng.normal(size=(2, 10))
    Qx = rng.normal(size=(10, 3))
    Qr = rng.normal(size=(10, 3))
    gains = recover_gains(Qx, Qr, np.eye(3), U0)
    np.testing.assert_allclose(gains.K_x, U0 @ Qx, atol=1e-12)


def test_recover_gains_undoes_lift():
    rng = np.random.default_rng(8)
    U0 = rng.normal(size=(2, 10))
    Gx = rng.normal(size=(10, 3))
    W = rng.normal(size=(3, 3))
    P = W @ W.T + 0.5 * np.eye(3)
    gains = recover_gains(Gx @ P, Gx @ P, P, U0)
    np.testing.assert_allclose(gains.K_x, U0 @ Gx, atol=1e-9)


def test_recover_gains_matches_dense_inverse():
    rng = np.random.default_rng(9)
    for _ in range(10):
        U0 = rng.normal(size=(3, 12))
        Qx = rng.normal(size=(12, 3))
        Qr = rng.normal(size=(12, 3))
        W = rng.normal(size=(3, 3))
        P = W @ W.T + np.eye(3)
        gains = recover_gains(Qx, Qr, P, U0)
        np.testing.assert_allclose(gains.K_x, U0 @ Qx @ np.linalg.inv(P), atol=1e-10)
        np.testing.assert_allclose(gains.K_r, U0 @ Qr @ np.linalg.inv(P), atol=1e-10)


def test_recover_gains_rejects_indefinite_P():
    with pytest.raises(np.linalg.LinAlgError):
        recover_gains(np.ones((4, 2)), np.ones((4, 2)), -np.eye(2), np.ones((1, 4)))


def test_reconstruct_noiseless_gives_reference_model():
    stable, snap = stable_scenario_data(seed=10)
    out = solve_exact(snap, stable.ref_model)
    A_cl, B_cl = reconstruct_closed_loop(snap, out.Gx, out.Gr)
    np.testing.assert_allclose(A_cl, stable.ref_model.A_M, atol=1e-8)
    np.testing.assert_allclose(B_cl, stable.ref_model.B_M, atol=1e-8)


def test_reconstruct_oracle_mode_equals_true_closed_loop():
    stable, _ = builtin_scenarios()
    rng = np.random.default_rng(11)
    rec = simulate_open_loop(
        stable.plant,
        rng.uniform(-2, 2, (30, 3)),
        np.zeros(3),
        NoiseSpec(0.1, seed=12),
    )
    snap = build_snapshots(rec)
    # any Gx with X0 Gx = I defines a feedback K_x = U0 Gx
    Gx, *_ = np.linalg.lstsq(snap.X0, np.eye(3), rcond=None)
    K_x = snap.U0 @ Gx
    A_cl, _ = reconstruct_closed_loop(snap, Gx, np.zeros_like(Gx), true_model=stable.plant)
    np.testing.assert_allclose(A_cl, stable.plant.A + stable.plant.B @ K_x, atol=1e-8)


def test_reconstruct_oracle_mode_needs_noise_blocks():
    snap_noise_free = noiseless_snapshots(
        random_stable_system(np.random.default_rng(13), 2, 2),
        np.random.default_rng(14),
        T=10,
    )
    snap = type(snap_noise_free)(
        U0=snap_noise_free.U0, X0=snap_noise_free.X0, X1=snap_noise_free.X1
    )
    with pytest.raises(ValueError, match="oracle"):
        reconstruct_closed_loop(
            snap,
            np.zeros((10, 2)),
            np.zeros((10, 2)),
            true_model=StateSpaceModel(np.eye(2), np.eye(2)),
        )


def test_reconstruct_zero_Gr_gives_zero_Bcl():
    stable, snap = stable_scenario_data(seed=15)
    _, B_cl = reconstruct_closed_loop(snap, np.zeros((30, 3)), np.zeros((30, 3)))
    np.testing.assert_array_equal(B_cl, np.zeros((3, 3)))


# --- matching verification -------------------------------------------------


def test_verify_matching_star_gains():
    stable, unstable = builtin_scenarios()
    Kx_star, Kr_star = _star_gains(stable.plant, stable.ref_model)
    res_A, res_B = verify_matching(
        stable.plant, ControllerGains(Kx_star, Kr_star), stable.ref_model
    )
    assert res_A < 1e-12 and res_B < 1e-12

    res_A, res_B = verify_matching(
        unstable.plant, unstable.optimal_gains, unstable.ref_model
    )
    assert res_A < 1e-14 and res_B < 1e-14


def test_verify_matching_zero_gains():
    stable, _ = builtin_scenarios()
    zero = ControllerGains(np.zeros((3, 3)), np.zeros((3, 3)))
    res_A, _ = verify_matching(stable.plant, zero, stable.ref_model)
    assert res_A == pytest.approx(
        np.linalg.norm(stable.plant.A - stable.ref_model.A_M, 2), abs=1e-12
    )


# --- structural properties -------------------------------------------------


def test_data_consistency_maps_to_model_form():
    # any (Gx, Gr) satisfying the consistency equations maps the data picture
    # onto the model picture: X1 Gx = A + B U0 Gx, X1 Gr = B U0 Gr
    rng = np.random.default_rng(16)
    for _ in range(50):
        n = int(rng.integers(1, 4))
        m = int(rng.integers(1, 4))
        model = random_stable_system(rng, n, m)
        snap = noiseless_snapshots(model, rng, T=25)
        T = snap.T
        Gx, *_ = np.linalg.lstsq(snap.X0, np.eye(n), rcond=None)
        Gr = (np.eye(T) - np.linalg.pinv(snap.X0) @ snap.X0) @ rng.normal(size=(T, n))
        assert np.allclose(snap.X0 @ Gr, 0, atol=1e-8)
        np.testing.assert_allclose(
            snap.X1 @ Gx, model.A + model.B @ (snap.U0 @ Gx), atol=1e-8
        )
        np.testing.assert_allclose(snap.X1 @ Gr, model.B @ (snap.U0 @ Gr), atol=1e-8)


def test_gains_invariant_to_data_null_space():
    rng = np.random.default_rng(17)
    model = random_stable_system(rng, 3, 3)
    ref, K_x, K_r = matchable_reference(model, rng)
    snap = noiseless_snapshots(model, rng, T=30)
    out = solve_exact(snap, ref)
    assert out.status == "optimal"
    stack = np.vstack([snap.U0, snap.X0])
    _, s, Vt = np.linalg.svd(stack)
    null = Vt[np.sum(s > 1e-10 * s[0]) :].T
    for _ in range(20):
        Gx_perturbed = out.Gx + null @ rng.normal(size=(null.shape[1], 3))
        np.testing.assert_allclose(
            snap.U0 @ Gx_perturbed, out.gains.K_x, atol=1e-8
        )


def test_noiseless_solution_inherits_reference_spectral_radius():
    rng = np.random.default_rng(18)
    model = random_stable_system(rng, 2, 2)
    ref, *_ = matchable_reference(model, rng)
    snap = noiseless_snapshots(model, rng, T=20)
    out = solve_exact(snap, ref)
    assert out.status == "optimal"
    rho_data = spectral_radius(snap.X1 @ out.Gx)
    assert rho_data == pytest.approx(spectral_radius(ref.A_M), abs=1e-8)
    assert rho_data < 1


def test_schur_complement_equivalence_both_directions():
    rng = np.random.default_rng(19)
    agree = 0
    for trial in range(100):
        n, T = 3, 8
        W = rng.normal(size=(n, n))
        P = W @ W.T + 0.1 * np.eye(n)
        scale = rng.uniform(0.1, 2.0)
        Qx = scale * rng.normal(size=(T, n)) / np.sqrt(T)
        X1 = rng.normal(size=(n, T))
        L = np.block([[P, X1 @ Qx], [(X1 @ Qx).T, P]])
        lmi_pd = np.linalg.eigvalsh((L + L.T) / 2).min() > 0
        A_cl = X1 @ Qx @ np.linalg.inv(P)
        lyap = (
            np.linalg.eigvalsh(P).min() > 0
            and np.linalg.eigvalsh(A_cl @ P @ A_cl.T - P).max() < 0
        )
        assert lmi_pd == lyap, trial
        agree += 1
    assert agree == 100
