"""Shared generators for the randomized tests."""

import numpy as np

from ddmrc import (
    NoiseSpec,
    ReferenceModel,
    StateSpaceModel,
    build_snapshots,
    builtin_scenarios,
    simulate_open_loop,
)


def random_stable_system(rng, n, m, radius=0.7):
    """Random controllable plant with spectral radius scaled to `radius`."""
    while True:
        A = rng.normal(size=(n, n))
        rho = np.max(np.abs(np.linalg.eigvals(A)))
        A = A * (radius / max(rho, 1e-12))
        B = rng.normal(size=(n, m))
        ctrb = np.hstack([np.linalg.matrix_power(A, k) @ B for k in range(n)])
        if np.linalg.matrix_rank(ctrb) == n:
            return StateSpaceModel(A, B)


def noiseless_snapshots(model, rng, T=30, lo=-2.0, hi=2.0):
    inputs = rng.uniform(lo, hi, size=(T, model.m))
    x0 = rng.normal(size=model.n)
    record = simulate_open_loop(model, inputs, x0, NoiseSpec())
    return build_snapshots(record)


def stable_scenario_data(seed=0, T=30, sigma=0.0):
    """Noiseless (or noisy) open-loop data from the bundled stable system."""
    stable, _ = builtin_scenarios()
    rng = np.random.default_rng(seed)
    inputs = rng.uniform(-2.0, 2.0, size=(T, stable.plant.m))
    record = simulate_open_loop(
        stable.plant, inputs, np.zeros(stable.plant.n), NoiseSpec(sigma, seed=seed)
    )
    return stable, build_snapshots(record)


def matchable_reference(model, rng):
    """A stable reference model the plant can match exactly; needs square B."""
    n = model.n
    assert model.m == n, "matchable_reference assumes a square input map"
    A_M = 0.2 * np.eye(n) + 0.05 * rng.normal(size=(n, n))
    while np.max(np.abs(np.linalg.eigvals(A_M))) >= 0.9:
        A_M = 0.2 * np.eye(n) + 0.05 * rng.normal(size=(n, n))
    K_x = np.linalg.solve(model.B, A_M - model.A)
    K_r = rng.normal(size=(n, n))
    B_M = model.B @ K_r
    return ReferenceModel(A_M, B_M), K_x, K_r
