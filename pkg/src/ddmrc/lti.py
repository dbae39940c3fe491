"""Discrete-time LTI plants, reference models and static control laws.

Simulation is exact iteration of the difference equations; measurement noise
is additive i.i.d. Gaussian on the state, drawn from a seeded PCG64 generator
so that every experiment can be replayed bit-identically.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "StateSpaceModel",
    "ReferenceModel",
    "ControllerGains",
    "NoiseSpec",
    "ExperimentRecord",
    "simulate_open_loop",
    "simulate_closed_loop",
    "reference_response",
    "spectral_radius",
    "dc_gain",
    "write_trajectory_csv",
    "read_trajectory_csv",
]

#: spectral-radius slack used when validating reference-model stability
_STABILITY_TOL = 1e-9


def _as_matrix(M, name: str) -> np.ndarray:
    M = np.asarray(M, dtype=float)
    if M.ndim != 2:
        raise ValueError(f"{name} must be a 2-D matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} contains non-finite entries")
    return M


def spectral_radius(Mtx) -> float:
    """Largest eigenvalue modulus of a square matrix."""
    Mtx = _as_matrix(Mtx, "matrix")
    if Mtx.shape[0] != Mtx.shape[1]:
        raise ValueError(f"spectral radius needs a square matrix, got {Mtx.shape}")
    return float(np.max(np.abs(np.linalg.eigvals(Mtx))))


def dc_gain(A, Bmap) -> np.ndarray:
    """Steady-state gain (I - A)^-1 B of a discrete-time system."""
    A = _as_matrix(A, "A")
    Bmap = _as_matrix(Bmap, "B")
    n = A.shape[0]
    IA = np.eye(n) - A
    if np.linalg.matrix_rank(IA) < n:
        raise np.linalg.LinAlgError("I - A is singular; DC gain undefined")
    return np.linalg.solve(IA, Bmap)


@dataclass(frozen=True)
class StateSpaceModel:
    """Plant x(t+1) = A x(t) + B u(t) with fully measurable state."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = _as_matrix(self.B, "B")
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise ValueError(f"B has {B.shape[0]} rows, expected {A.shape[0]}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]


@dataclass(frozen=True)
class ReferenceModel:
    """Stable target dynamics x_d(t+1) = A_M x_d(t) + B_M r(t).

    Construction rejects reference models whose state matrix is not strictly
    Schur stable (spectral radius below 1 with slack 1e-9).
    """

    A_M: np.ndarray
    B_M: np.ndarray

    def __post_init__(self):
        A_M = _as_matrix(self.A_M, "A_M")
        B_M = _as_matrix(self.B_M, "B_M")
        if A_M.shape[0] != A_M.shape[1]:
            raise ValueError(f"A_M must be square, got {A_M.shape}")
        if B_M.shape != A_M.shape:
            raise ValueError(
                f"B_M must be {A_M.shape} (same order as the plant), got {B_M.shape}"
            )
        rho = spectral_radius(A_M)
        if rho >= 1.0 - _STABILITY_TOL:
            raise ValueError(f"reference model is not stable: spectral radius {rho:.6g}")
        object.__setattr__(self, "A_M", A_M)
        object.__setattr__(self, "B_M", B_M)

    @property
    def n(self) -> int:
        return self.A_M.shape[0]


@dataclass(frozen=True)
class ControllerGains:
    """Static law u(t) = K_x x(t) + K_r r(t)."""

    K_x: np.ndarray
    K_r: np.ndarray

    def __post_init__(self):
        K_x = _as_matrix(self.K_x, "K_x")
        K_r = _as_matrix(self.K_r, "K_r")
        if K_x.shape != K_r.shape:
            raise ValueError(f"K_x {K_x.shape} and K_r {K_r.shape} must share shape")
        object.__setattr__(self, "K_x", K_x)
        object.__setattr__(self, "K_r", K_r)


@dataclass(frozen=True)
class NoiseSpec:
    """Per-channel i.i.d. Gaussian measurement noise, v ~ N(0, sigma^2 I)."""

    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"sigma must be nonnegative, got {self.sigma}")

    def draw(self, steps: int, n: int) -> np.ndarray:
        """Noise samples v(0)..v(steps-1), one n-vector per row."""
        rng = np.random.Generator(np.random.PCG64(self.seed))
        if self.sigma == 0.0:
            return np.zeros((steps, n))
        return self.sigma * rng.standard_normal((steps, n))


@dataclass(frozen=True)
class ExperimentRecord:
    """One experiment: inputs (T rows) and measured states (T+1 rows).

    When produced by simulation, the clean trajectory and the noise samples
    are retained so that oracle-only quantities (true noise blocks, SNR) can
    be computed downstream; measured = clean + noise always holds.
    """

    inputs: np.ndarray
    states_measured: np.ndarray
    states_clean: Optional[np.ndarray] = None
    noise: Optional[np.ndarray] = None
    seed: Optional[int] = field(default=None, compare=False)

    def __post_init__(self):
        u = _as_matrix(self.inputs, "inputs")
        x = _as_matrix(self.states_measured, "states_measured")
        if x.shape[0] != u.shape[0] + 1:
            raise ValueError(
                f"states_measured has {x.shape[0]} rows, expected T+1={u.shape[0] + 1}"
            )
        object.__setattr__(self, "inputs", u)
        object.__setattr__(self, "states_measured", x)
        for name in ("states_clean", "noise"):
            val = getattr(self, name)
            if val is not None:
                val = _as_matrix(val, name)
                if val.shape != x.shape:
                    raise ValueError(f"{name} shape {val.shape} != {x.shape}")
                object.__setattr__(self, name, val)
        if self.states_clean is not None and self.noise is not None:
            if not np.array_equal(self.states_measured, self.states_clean + self.noise):
                raise ValueError("measured states must equal clean states plus noise")

    @property
    def T(self) -> int:
        return self.inputs.shape[0]

    @property
    def n(self) -> int:
        return self.states_measured.shape[1]

    @property
    def m(self) -> int:
        return self.inputs.shape[1]

    def without_oracle(self) -> "ExperimentRecord":
        """Copy with clean-state and noise fields dropped (export default)."""
        return ExperimentRecord(
            inputs=self.inputs, states_measured=self.states_measured, seed=self.seed
        )


def _check_vector(v, n: int, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.shape[0] != n:
        raise ValueError(f"{name} has length {v.shape[0]}, expected {n}")
    return v


def simulate_open_loop(
    model: StateSpaceModel,
    inputs,
    x0,
    noise: NoiseSpec = NoiseSpec(),
) -> ExperimentRecord:
    """Run the plant open loop and return the (possibly noisy) record.

    The clean trajectory iterates x(t+1) = A x(t) + B u(t) exactly; measured
    states add the drawn noise samples channel by channel.
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    if inputs.shape[1] != model.m:
        inputs = inputs.reshape(-1, model.m)
    if inputs.size == 0:
        raise ValueError("input sequence is empty")
    if inputs.shape[1] != model.m:
        raise ValueError(f"inputs have {inputs.shape[1]} channels, expected {model.m}")
    T = inputs.shape[0]
    x0 = _check_vector(x0, model.n, "x0")

    clean = np.empty((T + 1, model.n))
    clean[0] = x0
    for t in range(T):
        clean[t + 1] = model.A @ clean[t] + model.B @ inputs[t]
    v = noise.draw(T + 1, model.n)
    return ExperimentRecord(
        inputs=inputs,
        states_measured=clean + v,
        states_clean=clean,
        noise=v,
        seed=noise.seed,
    )


def simulate_closed_loop(
    model: StateSpaceModel,
    gains: ControllerGains,
    refs,
    x0,
    noise: NoiseSpec = NoiseSpec(),
) -> ExperimentRecord:
    """Run the plant under u(t) = K_x x(t) + K_r r(t) with measured states.

    Noise enters the loop through the feedback channel: the applied input is
    computed from the noisy measurement x(t) = x_clean(t) + v(t), so the
    clean trajectory obeys
    x(t+1) = (A + B K_x) x(t) + B K_r r(t) + B K_x v(t).
    """
    refs = np.atleast_2d(np.asarray(refs, dtype=float))
    if refs.shape[1] != model.n:
        refs = refs.reshape(-1, model.n)
    if refs.size == 0:
        raise ValueError("reference sequence is empty")
    if refs.shape[1] != model.n:
        raise ValueError(f"references have {refs.shape[1]} channels, expected {model.n}")
    if gains.K_x.shape != (model.m, model.n):
        raise ValueError(
            f"K_x shape {gains.K_x.shape} incompatible with plant ({model.m},{model.n})"
        )
    T = refs.shape[0]
    x0 = _check_vector(x0, model.n, "x0")

    v = noise.draw(T + 1, model.n)
    clean = np.empty((T + 1, model.n))
    inputs = np.empty((T, model.m))
    clean[0] = x0
    for t in range(T):
        measured_t = clean[t] + v[t]
        inputs[t] = gains.K_x @ measured_t + gains.K_r @ refs[t]
        clean[t + 1] = model.A @ clean[t] + model.B @ inputs[t]
    return ExperimentRecord(
        inputs=inputs,
        states_measured=clean + v,
        states_clean=clean,
        noise=v,
        seed=noise.seed,
    )


def reference_response(ref: ReferenceModel, refs, xd0) -> np.ndarray:
    """Desired trajectory: exact iteration of x_d(t+1) = A_M x_d(t) + B_M r(t)."""
    refs = np.atleast_2d(np.asarray(refs, dtype=float))
    if refs.shape[1] != ref.n:
        refs = refs.reshape(-1, ref.n)
    if refs.shape[1] != ref.n:
        raise ValueError(f"references have {refs.shape[1]} channels, expected {ref.n}")
    xd0 = _check_vector(xd0, ref.n, "xd0")
    T = refs.shape[0]
    xd = np.empty((T + 1, ref.n))
    xd[0] = xd0
    for t in range(T):
        xd[t + 1] = ref.A_M @ xd[t] + ref.B_M @ refs[t]
    return xd


# --- trajectory CSV i/o ----------------------------------------------------
#
# Layout: t,u_1..u_m,x_1..x_n[,xo_1..xo_n,v_1..v_n]; rows t = 0..T, input
# cells left empty on the final row (no input is applied at time T).


def write_trajectory_csv(record: ExperimentRecord, path, oracle: bool = False) -> None:
    """Write a record as CSV with >= 15 significant digits per value."""
    m, n, T = record.m, record.n, record.T
    with_oracle = oracle and record.states_clean is not None and record.noise is not None
    header = (
        ["t"]
        + [f"u_{j + 1}" for j in range(m)]
        + [f"x_{j + 1}" for j in range(n)]
    )
    if with_oracle:
        header += [f"xo_{j + 1}" for j in range(n)] + [f"v_{j + 1}" for j in range(n)]

    def fmt(x: float) -> str:
        return format(x, ".17g")

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t in range(T + 1):
            row = [str(t)]
            row += [fmt(v) for v in record.inputs[t]] if t < T else [""] * m
            row += [fmt(v) for v in record.states_measured[t]]
            if with_oracle:
                row += [fmt(v) for v in record.states_clean[t]]
                row += [fmt(v) for v in record.noise[t]]
            writer.writerow(row)


def read_trajectory_csv(path) -> ExperimentRecord:
    """Read a trajectory CSV written by :func:`write_trajectory_csv`."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    m = sum(1 for h in header if h.startswith("u_"))
    n = sum(1 for h in header if h.startswith("x_") and not h.startswith("xo_"))
    has_oracle = any(h.startswith("xo_") for h in header)
    T = len(rows) - 1
    if T < 1:
        raise ValueError(f"trajectory file {path} has no time steps")
    inputs = np.array([[float(v) for v in r[1 : 1 + m]] for r in rows[:T]])
    x_lo = 1 + m
    states = np.array([[float(v) for v in r[x_lo : x_lo + n]] for r in rows])
    clean = noise_arr = None
    if has_oracle:
        clean = np.array([[float(v) for v in r[x_lo + n : x_lo + 2 * n]] for r in rows])
        noise_arr = np.array(
            [[float(v) for v in r[x_lo + 2 * n : x_lo + 3 * n]] for r in rows]
        )
        # roundoff from the decimal round trip must not break measured=clean+noise
        states = clean + noise_arr
    return ExperimentRecord(
        inputs=inputs, states_measured=states, states_clean=clean, noise=noise_arr
    )
