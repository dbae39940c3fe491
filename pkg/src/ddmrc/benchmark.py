"""Monte Carlo benchmark harness for the two built-in scenarios.

For each run, noise level and experiment count N, the harness collects N
repeated experiments (same input sequence and initial state, fresh noise),
averages the snapshot blocks, synthesizes gains through the stability-
constrained program and scores the result against the known optimal gains.
Noise levels are specified as target average SNRs in dB and calibrated from
a noiseless pilot trajectory.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from .lti import (
    ControllerGains,
    ExperimentRecord,
    NoiseSpec,
    ReferenceModel,
    StateSpaceModel,
    simulate_closed_loop,
    simulate_open_loop,
    spectral_radius,
)
from .snapshots import average_snapshots, build_snapshots
from .synthesis import SynthesisOptions, solve_sdp

__all__ = [
    "OpenLoopUniform",
    "ClosedLoopCollection",
    "ScenarioConfig",
    "RunResult",
    "BenchmarkReport",
    "compute_snr",
    "gain_error",
    "run_monte_carlo",
    "builtin_scenarios",
    "write_report_csv",
    "write_report_summary_json",
    "write_trend_csv",
]

#: closed loop counted as unstable when the spectral radius reaches this level
INSTABILITY_THRESHOLD = 1.0 - 1e-9


@dataclass(frozen=True)
class OpenLoopUniform:
    """Excite the plant open loop with i.i.d. uniform[lo, hi] inputs."""

    lo: float = -2.0
    hi: float = 2.0


@dataclass(frozen=True)
class ClosedLoopCollection:
    """Collect data in closed loop under a known stabilizing pre-controller,
    tracking i.i.d. uniform[ref_lo, ref_hi] references."""

    K_x0: np.ndarray
    K_r0: np.ndarray
    ref_lo: float = -5.0
    ref_hi: float = 10.0


InputLaw = Union[OpenLoopUniform, ClosedLoopCollection]


@dataclass
class ScenarioConfig:
    plant: StateSpaceModel
    ref_model: ReferenceModel
    optimal_gains: ControllerGains
    T: int
    N_list: List[int]
    snr_targets_db: List[float]
    runs: int
    input_law: InputLaw
    seed: int = 0
    name: str = "scenario"
    synthesis: SynthesisOptions = field(
        default_factory=lambda: SynthesisOptions(mode="averaged_sdp")
    )

    def __post_init__(self):
        if self.T < self.plant.n + self.plant.m:
            raise ValueError(
                f"T={self.T} is too short: need at least n+m={self.plant.n + self.plant.m}"
            )
        if self.runs < 1:
            raise ValueError("runs must be >= 1")

    def to_json(self) -> str:
        law = self.input_law
        if isinstance(law, OpenLoopUniform):
            law_json = {"kind": "open_loop_uniform", "lo": law.lo, "hi": law.hi}
        else:
            law_json = {
                "kind": "closed_loop",
                "K_x0": law.K_x0.tolist(),
                "K_r0": law.K_r0.tolist(),
                "ref_lo": law.ref_lo,
                "ref_hi": law.ref_hi,
            }
        return json.dumps(
            {
                "name": self.name,
                "A": self.plant.A.tolist(),
                "B": self.plant.B.tolist(),
                "A_M": self.ref_model.A_M.tolist(),
                "B_M": self.ref_model.B_M.tolist(),
                "K_x_star": self.optimal_gains.K_x.tolist(),
                "K_r_star": self.optimal_gains.K_r.tolist(),
                "T": self.T,
                "N_list": self.N_list,
                "snr_targets_db": self.snr_targets_db,
                "runs": self.runs,
                "seed": self.seed,
                "input_law": law_json,
                "synthesis": {
                    "mode": self.synthesis.mode,
                    "lam": self.synthesis.lam,
                    "lam1": self.synthesis.lam1,
                    "dc_gain_weight": self.synthesis.dc_gain_weight,
                    "norm": self.synthesis.norm,
                    "lmi_margin": self.synthesis.lmi_margin,
                },
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        data = json.loads(text)
        law_json = data["input_law"]
        if law_json["kind"] == "open_loop_uniform":
            law: InputLaw = OpenLoopUniform(law_json["lo"], law_json["hi"])
        elif law_json["kind"] == "closed_loop":
            law = ClosedLoopCollection(
                K_x0=np.array(law_json["K_x0"]),
                K_r0=np.array(law_json["K_r0"]),
                ref_lo=law_json["ref_lo"],
                ref_hi=law_json["ref_hi"],
            )
        else:
            raise ValueError(f"unknown input law kind {law_json['kind']!r}")
        syn = data.get("synthesis", {})
        return cls(
            plant=StateSpaceModel(np.array(data["A"]), np.array(data["B"])),
            ref_model=ReferenceModel(np.array(data["A_M"]), np.array(data["B_M"])),
            optimal_gains=ControllerGains(
                np.array(data["K_x_star"]), np.array(data["K_r_star"])
            ),
            T=data["T"],
            N_list=list(data["N_list"]),
            snr_targets_db=list(data["snr_targets_db"]),
            runs=data["runs"],
            input_law=law,
            seed=data.get("seed", 0),
            name=data.get("name", "scenario"),
            synthesis=SynthesisOptions(
                mode=syn.get("mode", "averaged_sdp"),
                lam=syn.get("lam", 1.0),
                lam1=syn.get("lam1", 0.0),
                dc_gain_weight=syn.get("dc_gain_weight", 0.0),
                norm=syn.get("norm", "l1"),
                lmi_margin=syn.get("lmi_margin", 1e-10),
            ),
        )


@dataclass
class RunResult:
    run: int
    sigma: float
    snr_target_db: float
    snr_db: float
    N: int
    err_Kx: float
    err_Kr: float
    rho_cl: float
    stable: bool
    status: str
    ms: float


@dataclass
class BenchmarkReport:
    config_name: str
    rows: List[RunResult]

    def aggregates(self) -> List[dict]:
        """Mean/std of gain errors over the stable runs, and unstable counts,
        per (snr target, N)."""
        out = []
        keys = sorted({(r.snr_target_db, r.N) for r in self.rows})
        for snr_t, N in keys:
            sel = [r for r in self.rows if r.snr_target_db == snr_t and r.N == N]
            stable = [r for r in sel if r.stable]
            agg = {
                "snr_target_db": snr_t,
                "N": N,
                "runs": len(sel),
                "n_stable": len(stable),
                "n_unstable": len(sel) - len(stable),
                "snr_db_mean": float(np.mean([r.snr_db for r in sel])),
            }
            for key, attr in (("err_Kx", "err_Kx"), ("err_Kr", "err_Kr")):
                vals = [getattr(r, attr) for r in stable if np.isfinite(getattr(r, attr))]
                agg[f"{key}_mean"] = float(np.mean(vals)) if vals else None
                agg[f"{key}_std"] = float(np.std(vals)) if vals else None
                agg[f"{key}_median"] = float(np.median(vals)) if vals else None
            out.append(agg)
        return out


def compute_snr(clean: np.ndarray, noise: np.ndarray) -> np.ndarray:
    """Per-channel SNR in dB: 10 log10(sum x_clean^2 / sum v^2).

    Channels with zero noise energy report +inf.
    """
    clean = np.atleast_2d(np.asarray(clean, float))
    noise = np.atleast_2d(np.asarray(noise, float))
    if clean.shape != noise.shape:
        raise ValueError(f"shape mismatch {clean.shape} vs {noise.shape}")
    sig = np.sum(clean**2, axis=0)
    nse = np.sum(noise**2, axis=0)
    with np.errstate(divide="ignore"):
        return np.where(nse > 0, 10.0 * np.log10(np.divide(sig, np.maximum(nse, 1e-300))), np.inf)


def gain_error(K: np.ndarray, Kstar: np.ndarray) -> float:
    """Spectral norm of the gain deviation."""
    K = np.asarray(K, float)
    Kstar = np.asarray(Kstar, float)
    if K.shape != Kstar.shape:
        raise ValueError(f"gain shapes differ: {K.shape} vs {Kstar.shape}")
    return float(np.linalg.norm(K - Kstar, 2))


def _pilot_energy_db(config: ScenarioConfig, inputs_or_refs: np.ndarray, x0) -> float:
    """Mean per-channel signal energy (dB) of the noiseless pilot trajectory."""
    record = _collect(config, inputs_or_refs, x0, sigma=0.0, noise_seed=0)
    energy = np.sum(record.states_clean**2, axis=0)
    return float(np.mean(10.0 * np.log10(np.maximum(energy, 1e-300))))


def _sigma_for_snr(config: ScenarioConfig, inputs_or_refs, x0, target_db: float) -> float:
    """Invert the SNR definition using the pilot energy: expected noise energy
    per channel is sigma^2 (T+1)."""
    sig_db = _pilot_energy_db(config, inputs_or_refs, x0)
    noise_energy_db = sig_db - target_db
    return float(np.sqrt(10.0 ** (noise_energy_db / 10.0) / (config.T + 1)))


def _collect(
    config: ScenarioConfig, inputs_or_refs: np.ndarray, x0, sigma: float, noise_seed: int
) -> ExperimentRecord:
    noise = NoiseSpec(sigma=sigma, seed=noise_seed)
    law = config.input_law
    if isinstance(law, OpenLoopUniform):
        return simulate_open_loop(config.plant, inputs_or_refs, x0, noise)
    return simulate_closed_loop(
        config.plant,
        ControllerGains(law.K_x0, law.K_r0),
        inputs_or_refs,
        x0,
        noise,
    )


def run_monte_carlo(config: ScenarioConfig) -> BenchmarkReport:
    """Full sweep over (run, noise level, N); deterministic for a fixed seed.

    Solver failures are recorded as rows with status != optimal (counted as
    unstable instances) and never abort the sweep.
    """
    rows: List[RunResult] = []
    root_ss = np.random.SeedSequence(config.seed)
    run_seeds = root_ss.spawn(config.runs)
    N_max = max(config.N_list)
    n = config.plant.n
    x0 = np.zeros(n)

    for run_idx in range(config.runs):
        rng = np.random.default_rng(run_seeds[run_idx])
        law = config.input_law
        if isinstance(law, OpenLoopUniform):
            excitation = rng.uniform(law.lo, law.hi, size=(config.T, config.plant.m))
        else:
            excitation = rng.uniform(law.ref_lo, law.ref_hi, size=(config.T, n))

        for snr_target in config.snr_targets_db:
            sigma = _sigma_for_snr(config, excitation, x0, snr_target)
            noise_seeds = [int(s) for s in rng.integers(0, 2**63 - 1, size=N_max)]
            records = [
                _collect(config, excitation, x0, sigma, noise_seeds[i])
                for i in range(N_max)
            ]
            snaps = [build_snapshots(rec) for rec in records]
            snrs = [
                np.mean(compute_snr(rec.states_clean, rec.noise)) for rec in records
            ]
            for N in config.N_list:
                t0 = time.perf_counter()
                avg = average_snapshots(snaps[:N])
                outcome = solve_sdp(avg, config.ref_model, config.synthesis)
                ms = (time.perf_counter() - t0) * 1e3
                if outcome.status == "optimal" and outcome.gains is not None:
                    K_x, K_r = outcome.gains.K_x, outcome.gains.K_r
                    rho = spectral_radius(config.plant.A + config.plant.B @ K_x)
                    rows.append(
                        RunResult(
                            run=run_idx,
                            sigma=sigma,
                            snr_target_db=snr_target,
                            snr_db=float(np.mean(snrs[:N])),
                            N=N,
                            err_Kx=gain_error(K_x, config.optimal_gains.K_x),
                            err_Kr=gain_error(K_r, config.optimal_gains.K_r),
                            rho_cl=rho,
                            stable=bool(rho < INSTABILITY_THRESHOLD),
                            status=outcome.status,
                            ms=ms,
                        )
                    )
                else:
                    rows.append(
                        RunResult(
                            run=run_idx,
                            sigma=sigma,
                            snr_target_db=snr_target,
                            snr_db=float(np.mean(snrs[:N])),
                            N=N,
                            err_Kx=np.nan,
                            err_Kr=np.nan,
                            rho_cl=np.nan,
                            stable=False,
                            status=outcome.status,
                            ms=ms,
                        )
                    )
    return BenchmarkReport(config_name=config.name, rows=rows)


def builtin_scenarios() -> tuple[ScenarioConfig, ScenarioConfig]:
    """The two bundled benchmark systems: open-loop stable and unstable."""
    A_stable = np.array(
        [
            [0.1344, 0.2155, -0.1084],
            [0.4585, 0.0797, 0.0857],
            [-0.5647, -0.3269, 0.8946],
        ]
    )
    B_stable = np.array(
        [
            [0.9298, 0.9143, -0.7162],
            [-0.6848, -0.0292, -0.1565],
            [0.9412, 0.6006, 0.8315],
        ]
    )
    Kx_stable = np.array(
        [
            [0.6308, -0.2920, 0.3080],
            [-0.3814, 0.4011, -0.7166],
            [0.2405, 0.4340, -0.6664],
        ]
    )
    Kr_stable = np.array(
        [
            [0.0768, -1.3126, -0.1809],
            [0.4654, 1.5957, 0.7012],
            [-0.4231, 0.3332, 0.6604],
        ]
    )
    stable = ScenarioConfig(
        plant=StateSpaceModel(A_stable, B_stable),
        ref_model=ReferenceModel(0.2 * np.eye(3), 0.8 * np.eye(3)),
        optimal_gains=ControllerGains(Kx_stable, Kr_stable),
        T=30,
        N_list=[1, 2, 10, 100],
        snr_targets_db=[25.0, 15.9, 12.7, 7.7],
        runs=20,
        input_law=OpenLoopUniform(-2.0, 2.0),
        seed=2024,
        name="stable",
    )

    A_unstable = np.array(
        [
            [1.01, 0.01, 0.0],
            [0.01, 1.01, 0.01],
            [0.0, 0.01, 1.01],
        ]
    )
    A_M = 0.9 * np.eye(3)
    unstable = ScenarioConfig(
        plant=StateSpaceModel(A_unstable, np.eye(3)),
        ref_model=ReferenceModel(A_M, 0.1 * np.eye(3)),
        optimal_gains=ControllerGains(A_M - A_unstable, 0.1 * np.eye(3)),
        T=30,
        N_list=[1, 2, 10, 100],
        snr_targets_db=[25.0, 15.9, 12.7, 7.7],
        runs=20,
        input_law=ClosedLoopCollection(
            K_x0=-np.eye(3), K_r0=np.eye(3), ref_lo=-5.0, ref_hi=10.0
        ),
        seed=2025,
        name="unstable",
    )
    return stable, unstable


# --- report files ----------------------------------------------------------

_CSV_FIELDS = [
    "run",
    "sigma",
    "snr_target_db",
    "snr_db",
    "N",
    "err_Kx",
    "err_Kr",
    "rho_cl",
    "stable",
    "status",
    "ms",
]


def write_report_csv(report: BenchmarkReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_CSV_FIELDS)
        for r in report.rows:
            writer.writerow(
                [
                    r.run,
                    format(r.sigma, ".17g"),
                    format(r.snr_target_db, ".17g"),
                    format(r.snr_db, ".17g"),
                    r.N,
                    format(r.err_Kx, ".17g"),
                    format(r.err_Kr, ".17g"),
                    format(r.rho_cl, ".17g"),
                    int(r.stable),
                    r.status,
                    format(r.ms, ".6g"),
                ]
            )


def write_report_summary_json(report: BenchmarkReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(
            {"scenario": report.config_name, "aggregates": report.aggregates()},
            fh,
            indent=2,
        )


def write_trend_csv(report: BenchmarkReport, path) -> None:
    """Plot-ready aggregate table: mean/std of gain errors vs SNR, per N."""
    aggs = report.aggregates()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            [
                "snr_target_db",
                "snr_db_mean",
                "N",
                "err_Kx_mean",
                "err_Kx_std",
                "err_Kr_mean",
                "err_Kr_std",
                "n_stable",
                "n_unstable",
            ]
        )
        for a in aggs:
            writer.writerow(
                [
                    a["snr_target_db"],
                    a["snr_db_mean"],
                    a["N"],
                    a["err_Kx_mean"],
                    a["err_Kx_std"],
                    a["err_Kr_mean"],
                    a["err_Kr_std"],
                    a["n_stable"],
                    a["n_unstable"],
                ]
            )
