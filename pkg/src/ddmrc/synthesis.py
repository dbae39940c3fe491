"""Controller synthesis from snapshot data.

Four routes to the gains:

* ``exact``          -- stacked least squares on the noiseless matching
                        equations; feasibility detected by relative residual.
* ``relaxed_unstab`` -- matching constraints lifted to a norm objective, no
                        stability guarantee.
* ``sdp``            -- norm objective over lifted variables (Qx, Qr, P)
                        with the Schur-complement Lyapunov LMI.
* ``averaged_sdp``   -- the same program fed with experiment-averaged
                        snapshot blocks (certainty-equivalence design).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import sdp
from .lti import ControllerGains, ReferenceModel, StateSpaceModel
from .sdp import AffineExpr, ConicProblem, NormTerm, PsdBlock, TraceTerm, VarSpec
from .snapshots import SnapshotMatrices, check_rank_condition

__all__ = [
    "SynthesisOptions",
    "SynthesisOutcome",
    "MatchingInfeasibleError",
    "solve_exact",
    "solve_relaxed",
    "solve_sdp",
    "recover_gains",
    "reconstruct_closed_loop",
    "verify_matching",
]

#: relative residual above which the exact linear system is declared inconsistent
EXACT_RESIDUAL_TOL = 1e-6

DEFAULT_LMI_MARGIN = 1e-10


class MatchingInfeasibleError(RuntimeError):
    """The selected reference model cannot be matched from these data."""


@dataclass(frozen=True)
class SynthesisOptions:
    mode: str = "sdp"
    lam: float = 1.0
    lam1: float = 0.0
    dc_gain_weight: float = 0.0
    norm: str = "l1"
    lmi_margin: float = DEFAULT_LMI_MARGIN

    def __post_init__(self):
        if self.mode not in ("exact", "relaxed_unstab", "sdp", "averaged_sdp"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.lam <= 0:
            raise ValueError("lam must be positive")
        if self.lam1 < 0 or self.dc_gain_weight < 0:
            raise ValueError("lam1 and dc_gain_weight must be nonnegative")
        if self.norm not in ("l1", "fro"):
            raise ValueError(f"unknown norm {self.norm!r}")


@dataclass
class SynthesisOutcome:
    gains: Optional[ControllerGains]
    status: str
    objective_value: float = np.nan
    residual_Am: float = np.nan
    residual_Bm: float = np.nan
    Gx: Optional[np.ndarray] = None
    Gr: Optional[np.ndarray] = None
    Qx: Optional[np.ndarray] = None
    Qr: Optional[np.ndarray] = None
    P: Optional[np.ndarray] = None
    certificate_inputs: Optional[tuple] = None  # (X1, Qx, P) for the certificate path

    def to_json(self) -> str:
        payload = {
            "status": self.status,
            "objective_value": _jsonable(self.objective_value),
            "residual_Am": _jsonable(self.residual_Am),
            "residual_Bm": _jsonable(self.residual_Bm),
        }
        if self.gains is not None:
            payload["K_x"] = self.gains.K_x.tolist()
            payload["K_r"] = self.gains.K_r.tolist()
        for name in ("Gx", "Gr", "Qx", "Qr", "P"):
            val = getattr(self, name)
            if val is not None:
                payload[name] = val.tolist()
        return json.dumps(payload)

    @classmethod
    def from_json(cls, text: str) -> "SynthesisOutcome":
        data = json.loads(text)
        gains = None
        if "K_x" in data:
            gains = ControllerGains(np.array(data["K_x"]), np.array(data["K_r"]))
        arrays = {
            name: np.array(data[name]) for name in ("Gx", "Gr", "Qx", "Qr", "P")
            if name in data
        }
        return cls(
            gains=gains,
            status=data["status"],
            objective_value=_unjsonable(data.get("objective_value")),
            residual_Am=_unjsonable(data.get("residual_Am")),
            residual_Bm=_unjsonable(data.get("residual_Bm")),
            **arrays,
        )


def _jsonable(x: float):
    return None if x is None or not np.isfinite(x) else float(x)


def _unjsonable(x) -> float:
    return np.nan if x is None else float(x)


def _specnorm(M: np.ndarray) -> float:
    return float(np.linalg.norm(M, 2))


def solve_exact(
    snap: SnapshotMatrices, ref: ReferenceModel, require_rank: bool = True
) -> SynthesisOutcome:
    """Solve the noiseless matching equations by stacked least squares.

    Gx solves [X1; X0] Gx = [A_M; I] and Gr solves [X1; X0] Gr = [B_M; 0];
    the gains follow as K_x = U0 Gx and K_r = U0 Gr. The system is declared
    infeasible when the relative residual exceeds 1e-6.
    """
    if require_rank and not check_rank_condition(snap).satisfied:
        raise MatchingInfeasibleError(
            "stacked [U0; X0] does not have rank n+m; collect richer data "
            "or pass require_rank=False to override"
        )
    stack = np.vstack([snap.X1, snap.X0])
    rhs_x = np.vstack([ref.A_M, np.eye(snap.n)])
    rhs_r = np.vstack([ref.B_M, np.zeros((snap.n, snap.n))])
    Gx, *_ = np.linalg.lstsq(stack, rhs_x, rcond=None)
    Gr, *_ = np.linalg.lstsq(stack, rhs_r, rcond=None)

    res_x = np.linalg.norm(stack @ Gx - rhs_x)
    res_r = np.linalg.norm(stack @ Gr - rhs_r)
    rel = max(
        res_x / max(1.0, np.linalg.norm(rhs_x)),
        res_r / max(1.0, np.linalg.norm(rhs_r)),
    )
    residual_Am = _specnorm(snap.X1 @ Gx - ref.A_M)
    residual_Bm = _specnorm(snap.X1 @ Gr - ref.B_M)
    if rel > EXACT_RESIDUAL_TOL:
        return SynthesisOutcome(
            gains=None,
            status="infeasible",
            residual_Am=residual_Am,
            residual_Bm=residual_Bm,
            Gx=Gx,
            Gr=Gr,
        )
    return SynthesisOutcome(
        gains=ControllerGains(snap.U0 @ Gx, snap.U0 @ Gr),
        status="optimal",
        objective_value=residual_Am + residual_Bm,
        residual_Am=residual_Am,
        residual_Bm=residual_Bm,
        Gx=Gx,
        Gr=Gr,
    )


def _norm_terms(opts: SynthesisOptions, expr_A: AffineExpr, expr_B: AffineExpr):
    return [
        NormTerm(1.0, expr_A, opts.norm),
        NormTerm(opts.lam, expr_B, opts.norm),
    ]


def solve_relaxed(
    snap: SnapshotMatrices, ref: ReferenceModel, opts: SynthesisOptions
) -> SynthesisOutcome:
    """Minimize the matching residual over (Gx, Gr) under the consistency
    constraints; returns a best-effort controller with no stability claim."""
    if opts.mode != "relaxed_unstab":
        raise ValueError(f"solve_relaxed requires mode 'relaxed_unstab', got {opts.mode!r}")
    n, T = snap.n, snap.T
    I_T = np.eye(T)
    problem = ConicProblem(
        variables={
            "Gx": VarSpec("Gx", T, n),
            "Gr": VarSpec("Gr", T, n),
        },
        objective=_norm_terms(
            opts,
            AffineExpr.term(snap.X1, "Gx", np.eye(n)) - AffineExpr.const(ref.A_M),
            AffineExpr.term(snap.X1, "Gr", np.eye(n)) - AffineExpr.const(ref.B_M),
        ),
        equalities=[
            AffineExpr.term(snap.X0, "Gx", np.eye(n)) - AffineExpr.const(np.eye(n)),
            AffineExpr.term(snap.X0, "Gr", np.eye(n)),
        ],
        psd_constraints=[],
    )
    sol = sdp.solve(problem)
    if sol.status != "optimal":
        return SynthesisOutcome(gains=None, status=sol.status)
    Gx, Gr = sol.values["Gx"], sol.values["Gr"]
    return SynthesisOutcome(
        gains=ControllerGains(snap.U0 @ Gx, snap.U0 @ Gr),
        status="optimal",
        objective_value=sol.objective_value,
        residual_Am=_specnorm(snap.X1 @ Gx - ref.A_M),
        residual_Bm=_specnorm(snap.X1 @ Gr - ref.B_M),
        Gx=Gx,
        Gr=Gr,
    )


def build_sdp_problem(
    snap: SnapshotMatrices, ref: ReferenceModel, opts: SynthesisOptions
) -> ConicProblem:
    """Assemble the Lyapunov-constrained matching program over (Qx, Qr, P).

    The decision scale is pinned by trace(P) = n: the program is positively
    homogeneous in (Qx, Qr, P), so without the normalization the optimizer
    drives the solution down to the LMI-margin scale and gain recovery loses
    all precision. The recovered gains are invariant to this scaling.
    """
    n, T = snap.n, snap.T
    I_n = np.eye(n)
    variables = {
        "Qx": VarSpec("Qx", T, n),
        "Qr": VarSpec("Qr", T, n),
        "P": VarSpec("P", n, n, symmetric=True),
    }
    X1Qx = AffineExpr.term(snap.X1, "Qx", I_n)
    X1Qr = AffineExpr.term(snap.X1, "Qr", I_n)
    P_expr = AffineExpr.term(I_n, "P", I_n)
    objective = _norm_terms(
        opts,
        X1Qx - AffineExpr.term(ref.A_M, "P", I_n),
        X1Qr - AffineExpr.term(ref.B_M, "P", I_n),
    )
    if opts.dc_gain_weight > 0:
        objective.append(
            NormTerm(opts.dc_gain_weight, P_expr - X1Qx - X1Qr, opts.norm)
        )
    equalities = [
        AffineExpr.term(snap.X0, "Qx", I_n) - P_expr,
        AffineExpr.term(snap.X0, "Qr", I_n),
        # scale normalization: trace(P) = n
        AffineExpr(
            (1, 1),
            tuple(
                sdp.MatMulTerm(I_n[i : i + 1, :], "P", I_n[:, i : i + 1])
                for i in range(n)
            ),
            -float(n) * np.ones((1, 1)),
        ),
    ]
    X1Qx_T = AffineExpr.term(I_n, "Qx", snap.X1.T, transpose_var=True)
    psd = [PsdBlock([[P_expr, X1Qx], [X1Qx_T, P_expr]])]
    if opts.lam1 > 0:
        # epigraph of M = Qx P^-1 Qx': Z ⪰ M via Schur complement, penalized
        # through its trace
        variables["Z"] = VarSpec("Z", T, T, symmetric=True)
        Z_expr = AffineExpr.term(np.eye(T), "Z", np.eye(T))
        Qx_expr = AffineExpr.term(np.eye(T), "Qx", I_n)
        Qx_T = AffineExpr.term(I_n, "Qx", np.eye(T), transpose_var=True)
        psd.append(PsdBlock([[Z_expr, Qx_expr], [Qx_T, P_expr]]))
        objective.append(TraceTerm(opts.lam1, Z_expr))
    return ConicProblem(
        variables=variables,
        objective=objective,
        equalities=equalities,
        psd_constraints=psd,
        margin=opts.lmi_margin,
    )


def solve_sdp(
    snap: SnapshotMatrices, ref: ReferenceModel, opts: SynthesisOptions
) -> SynthesisOutcome:
    """Solve the stability-constrained matching program.

    For mode ``averaged_sdp`` the caller passes experiment-averaged blocks;
    the program itself is identical to the single-experiment one.
    """
    if opts.mode not in ("sdp", "averaged_sdp"):
        raise ValueError(f"solve_sdp requires mode 'sdp' or 'averaged_sdp', got {opts.mode!r}")
    problem = build_sdp_problem(snap, ref, opts)
    sol = sdp.solve(problem)
    if sol.status != "optimal":
        return SynthesisOutcome(gains=None, status=sol.status)
    Qx, Qr, P = sol.values["Qx"], sol.values["Qr"], sol.values["P"]
    gains = recover_gains(Qx, Qr, P, snap.U0)
    KxP = np.linalg.solve(P.T, (snap.X1 @ Qx).T).T  # X1 Qx P^-1
    KrP = np.linalg.solve(P.T, (snap.X1 @ Qr).T).T
    return SynthesisOutcome(
        gains=gains,
        status="optimal",
        objective_value=sol.objective_value,
        residual_Am=_specnorm(KxP - ref.A_M),
        residual_Bm=_specnorm(KrP - ref.B_M),
        Qx=Qx,
        Qr=Qr,
        P=P,
        certificate_inputs=(snap.X1.copy(), Qx, P),
    )


def recover_gains(Qx: np.ndarray, Qr: np.ndarray, P: np.ndarray, U0: np.ndarray) -> ControllerGains:
    """K_x = U0 Qx P^-1 and K_r = U0 Qr P^-1 via linear solves against P."""
    eigs = np.linalg.eigvalsh((P + P.T) / 2)
    if eigs[0] <= 1e-12 * max(eigs[-1], 0.0):
        raise np.linalg.LinAlgError(
            f"P is not numerically positive definite (eigs {eigs[0]:.3g}..{eigs[-1]:.3g})"
        )
    K_x = np.linalg.solve(P.T, (U0 @ Qx).T).T
    K_r = np.linalg.solve(P.T, (U0 @ Qr).T).T
    return ControllerGains(K_x, K_r)


def reconstruct_closed_loop(
    snap: SnapshotMatrices,
    Gx: np.ndarray,
    Gr: np.ndarray,
    true_model: Optional[StateSpaceModel] = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Closed-loop matrices implied by the data and a candidate (Gx, Gr).

    Noiseless data give (X1 Gx, X1 Gr). With `true_model` supplied (oracle
    mode) the noise correction W0 = A V0 - V1 is applied, which requires the
    record's noise blocks.
    """
    X1 = snap.X1
    if true_model is not None:
        if not snap.has_oracle:
            raise ValueError("oracle mode requested but snapshots carry no noise blocks")
        W0 = true_model.A @ snap.V0 - snap.V1
        X1 = X1 + W0
    return X1 @ Gx, X1 @ Gr


def verify_matching(
    model: StateSpaceModel, gains: ControllerGains, ref: ReferenceModel
) -> tuple[float, float]:
    """Spectral-norm residuals of A + B K_x = A_M and B K_r = B_M.

    Needs the true plant, so this is a simulation-only oracle check.
    """
    res_A = _specnorm(model.A + model.B @ gains.K_x - ref.A_M)
    res_B = _specnorm(model.B @ gains.K_r - ref.B_M)
    return res_A, res_B
