"""Snapshot data matrices, experiment averaging and informativity checks."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .lti import ExperimentRecord

__all__ = [
    "SnapshotMatrices",
    "RankReport",
    "build_snapshots",
    "average_snapshots",
    "check_rank_condition",
    "check_persistent_excitation",
    "snapshots_to_json",
    "snapshots_from_json",
    "write_snapshots_csv",
    "read_snapshots_csv",
]

#: default relative threshold for numerical-rank decisions
DEFAULT_RANK_TOL = 1e-8

_OPTIONAL_BLOCKS = ("V0", "V1", "X0_clean", "X1_clean")


@dataclass(frozen=True)
class SnapshotMatrices:
    """Columnwise input/state data blocks over one experiment window.

    U0 is m x T, X0/X1 are n x T; the optional noise and clean-state blocks
    exist only when the source record carried oracle data, and then satisfy
    X0 = X0_clean + V0 and X1 = X1_clean + V1.
    """

    U0: np.ndarray
    X0: np.ndarray
    X1: np.ndarray
    V0: Optional[np.ndarray] = None
    V1: Optional[np.ndarray] = None
    X0_clean: Optional[np.ndarray] = None
    X1_clean: Optional[np.ndarray] = None

    def __post_init__(self):
        T = self.U0.shape[1]
        for name in ("X0", "X1") + _OPTIONAL_BLOCKS:
            blk = getattr(self, name)
            if blk is None:
                continue
            if blk.shape[1] != T:
                raise ValueError(
                    f"block {name} has {blk.shape[1]} columns, expected T={T}"
                )
            if blk.shape[0] != self.X0.shape[0]:
                raise ValueError(f"block {name} has wrong row count {blk.shape[0]}")
        if self.V0 is not None and self.X0_clean is not None:
            if not np.allclose(self.X0, self.X0_clean + self.V0, atol=1e-12):
                raise ValueError("X0 must equal X0_clean + V0")
        if self.V1 is not None and self.X1_clean is not None:
            if not np.allclose(self.X1, self.X1_clean + self.V1, atol=1e-12):
                raise ValueError("X1 must equal X1_clean + V1")

    @property
    def T(self) -> int:
        return self.U0.shape[1]

    @property
    def n(self) -> int:
        return self.X0.shape[0]

    @property
    def m(self) -> int:
        return self.U0.shape[0]

    @property
    def has_oracle(self) -> bool:
        return self.V0 is not None and self.V1 is not None

    def blocks(self) -> dict:
        out = {"U0": self.U0, "X0": self.X0, "X1": self.X1}
        for name in _OPTIONAL_BLOCKS:
            blk = getattr(self, name)
            if blk is not None:
                out[name] = blk
        return out


@dataclass(frozen=True)
class RankReport:
    """Outcome of the stacked [U0; X0] rank condition."""

    stacked_rank: int
    required: int
    singular_values: np.ndarray
    satisfied: bool


def build_snapshots(record: ExperimentRecord, detrend: bool = False) -> SnapshotMatrices:
    """Arrange one record into the columnwise data blocks.

    Column t of U0/X0 holds u(t)/x(t) for t = 0..T-1 and column t of X1
    holds x(t+1). With ``detrend`` the per-channel empirical mean of the
    measured states (over all T+1 samples) is subtracted from X0 and X1,
    which restores the zero-mean noise hypothesis for biased measurements.
    """
    if record.T < 1:
        raise ValueError("record must contain at least one step")
    x = record.states_measured
    offset = x.mean(axis=0) if detrend else np.zeros(record.n)
    xs = x - offset
    kwargs = {}
    if record.states_clean is not None and record.noise is not None:
        clean = record.states_clean - offset
        kwargs = {
            "V0": record.noise[:-1].T.copy(),
            "V1": record.noise[1:].T.copy(),
            "X0_clean": clean[:-1].T.copy(),
            "X1_clean": clean[1:].T.copy(),
        }
    return SnapshotMatrices(
        U0=record.inputs.T.copy(),
        X0=xs[:-1].T.copy(),
        X1=xs[1:].T.copy(),
        **kwargs,
    )


def average_snapshots(snaps: Sequence[SnapshotMatrices]) -> SnapshotMatrices:
    """Blockwise arithmetic mean over N experiments.

    Optional blocks are averaged only when present in every member.
    """
    if len(snaps) == 0:
        raise ValueError("cannot average an empty list of snapshots")
    first = snaps[0]
    for s in snaps[1:]:
        if (s.m, s.n, s.T) != (first.m, first.n, first.T):
            raise ValueError("snapshot matrices are not dimensionally identical")
    out = {
        name: np.mean([getattr(s, name) for s in snaps], axis=0)
        for name in ("U0", "X0", "X1")
    }
    for name in _OPTIONAL_BLOCKS:
        if all(getattr(s, name) is not None for s in snaps):
            out[name] = np.mean([getattr(s, name) for s in snaps], axis=0)
    return SnapshotMatrices(**out)


def _numerical_rank(M: np.ndarray, rel_tol: float) -> tuple[int, np.ndarray]:
    sv = np.linalg.svd(M, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return 0, sv
    thresh = rel_tol * sv[0] * max(M.shape)
    return int(np.sum(sv > thresh)), sv


def check_rank_condition(
    snap: SnapshotMatrices, rel_tol: float = DEFAULT_RANK_TOL
) -> RankReport:
    """Numerical rank of the stacked [U0; X0] block against n + m."""
    stacked = np.vstack([snap.U0, snap.X0])
    rank, sv = _numerical_rank(stacked, rel_tol)
    required = snap.n + snap.m
    return RankReport(
        stacked_rank=rank,
        required=required,
        singular_values=sv,
        satisfied=rank == required,
    )


def check_persistent_excitation(
    inputs, order: int, rel_tol: float = DEFAULT_RANK_TOL
) -> bool:
    """True iff the depth-`order` block-Hankel matrix of the inputs has full
    row rank m * order."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    if inputs.shape[0] == 1 and inputs.shape[1] > 1:
        inputs = inputs.T
    T, m = inputs.shape
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    cols = T - order + 1
    if cols < 1:
        raise ValueError(f"sequence of length {T} admits no depth-{order} Hankel column")
    H = np.zeros((m * order, cols))
    for k in range(order):
        H[k * m : (k + 1) * m, :] = inputs[k : k + cols].T
    rank, _ = _numerical_rank(H, rel_tol)
    return rank == m * order


# --- i/o -------------------------------------------------------------------


def snapshots_to_json(snap: SnapshotMatrices) -> str:
    """Single JSON container {U0: [[..]], X0: .., X1: .., ...}."""
    return json.dumps({k: v.tolist() for k, v in snap.blocks().items()})


def snapshots_from_json(text: str) -> SnapshotMatrices:
    data = json.loads(text)
    return SnapshotMatrices(
        **{k: np.asarray(v, dtype=float) for k, v in data.items()}
    )


def write_snapshots_csv(snap: SnapshotMatrices, directory) -> None:
    """One CSV file per block (U0.csv, X0.csv, ...) in `directory`."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, blk in snap.blocks().items():
        with open(directory / f"{name}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            for row in blk:
                writer.writerow([format(v, ".17g") for v in row])


def read_snapshots_csv(directory) -> SnapshotMatrices:
    directory = Path(directory)
    blocks = {}
    for name in ("U0", "X0", "X1") + _OPTIONAL_BLOCKS:
        path = directory / f"{name}.csv"
        if not path.exists():
            if name in ("U0", "X0", "X1"):
                raise FileNotFoundError(f"required snapshot block file missing: {path}")
            continue
        with open(path, newline="") as fh:
            blocks[name] = np.array(
                [[float(v) for v in row] for row in csv.reader(fh) if row]
            )
    return SnapshotMatrices(**blocks)
