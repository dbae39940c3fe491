"""Noise-robust closed-loop stability machinery.

Covers the noise-energy (signal-to-noise) conditions with minimal
multipliers, the alpha/beta constants tied to a synthesis solution, the
combined stability verdict, the finite-sample Gaussian averaging bound and
the plain Lyapunov decrease check.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .snapshots import SnapshotMatrices

__all__ = [
    "NoiseEnergyReport",
    "StabilityCertificate",
    "CertificateUnavailableError",
    "check_noise_energy",
    "compute_alpha_beta",
    "theorem4_certificate",
    "gaussian_average_bound",
    "check_lyapunov",
]

#: relative eigenvalue threshold for rank-aware pseudo-inversion
RANGE_TOL = 1e-10

#: floor applied to beta when Qx = 0 makes the quadratic form vanish
BETA_FLOOR = 1e-12


class CertificateUnavailableError(RuntimeError):
    """No certificate can exist for the supplied quantities."""


@dataclass
class NoiseEnergyReport:
    """Minimal multipliers of the two noise-energy orderings.

    gamma1 is the smallest scalar with [0; V0][0; V0]' ⪯ gamma1 [U0; X0][U0; X0]'
    and gamma2 the analogue for V1 V1' ⪯ gamma2 X1 X1'; both are computed on
    the averaged blocks when averaged snapshots are supplied.
    """

    gamma1: float
    gamma2: float
    gamma1_ok: bool
    both_hold: bool

    def to_json(self) -> str:
        return json.dumps(
            {
                "gamma1": self.gamma1,
                "gamma2": self.gamma2,
                "gamma1_ok": self.gamma1_ok,
                "both_hold": self.both_hold,
            }
        )


@dataclass
class StabilityCertificate:
    alpha: float
    beta: float
    Xi: np.ndarray
    Mmat: np.ndarray
    lhs: float = np.nan
    rhs: float = np.nan
    certified: bool = False
    reason: str = ""

    def to_json(self) -> str:
        return json.dumps(
            {
                "alpha": self.alpha,
                "beta": self.beta,
                "lhs": None if math.isnan(self.lhs) else self.lhs,
                "rhs": None if math.isnan(self.rhs) else self.rhs,
                "certified": self.certified,
                "reason": self.reason,
                "Xi": self.Xi.tolist(),
                "M": self.Mmat.tolist(),
            }
        )


def _range_basis(B: np.ndarray, rel_tol: float = RANGE_TOL):
    """Whitened basis W of range(B) for a symmetric PSD B: W' B W = I."""
    B = (B + B.T) / 2
    w, V = np.linalg.eigh(B)
    thresh = rel_tol * max(w[-1], 0.0)
    keep = w > thresh
    if not np.any(keep):
        return None, V, w, keep
    return V[:, keep] / np.sqrt(w[keep]), V, w, keep


def minimal_multiplier(A: np.ndarray, B: np.ndarray, rel_tol: float = RANGE_TOL) -> float:
    """Smallest gamma with A ⪯ gamma B for symmetric PSD A, B.

    Computed as the largest generalized eigenvalue of the pencil (A, B)
    restricted to range(B); returns inf when A has energy outside range(B).
    """
    A = (A + A.T) / 2
    W, V, w, keep = _range_basis(B, rel_tol)
    scale = max(np.abs(A).max(), 1e-30)
    null = V[:, ~keep]
    if null.size and np.abs(null.T @ A @ null).max() > rel_tol * scale:
        return np.inf
    if W is None:
        return 0.0
    return max(float(np.linalg.eigvalsh(W.T @ A @ W)[-1]), 0.0)


def check_noise_energy(snap: SnapshotMatrices, averaged: bool = True) -> NoiseEnergyReport:
    """Minimal gamma1/gamma2 for the noise-energy conditions.

    Requires oracle noise blocks, so this is only available in simulation;
    pass averaged snapshot blocks for the multi-experiment setting (the
    `averaged` flag is informational and does not change the computation).
    """
    if not snap.has_oracle:
        raise CertificateUnavailableError(
            "noise-energy check needs oracle noise blocks V0/V1"
        )
    m, T = snap.m, snap.T
    Z0 = np.vstack([np.zeros((m, T)), snap.V0])
    W = np.vstack([snap.U0, snap.X0])
    gamma1 = minimal_multiplier(Z0 @ Z0.T, W @ W.T)
    gamma2 = minimal_multiplier(snap.V1 @ snap.V1.T, snap.X1 @ snap.X1.T)
    gamma1_ok = gamma1 < 0.5  # gamma1 = 0 is the noiseless boundary, accepted
    return NoiseEnergyReport(
        gamma1=gamma1,
        gamma2=gamma2,
        gamma1_ok=gamma1_ok,
        both_hold=bool(gamma1_ok and np.isfinite(gamma2)),
    )


def compute_alpha_beta(
    X1bar: np.ndarray, Qx: np.ndarray, P: np.ndarray
) -> StabilityCertificate:
    """Constants (alpha, beta) and matrices (Xi, M) for a synthesis solution.

    M = Qx P^-1 Qx' and Xi = X1 M X1' - P; beta is the largest eigenvalue of
    M (the minimal valid choice) and alpha the largest scalar keeping
    Xi + alpha X1 X1' ⪯ 0, a generalized eigenvalue of (-Xi, X1 X1')
    restricted to the range of X1 X1'. Requires Xi ≺ 0.
    """
    P = (P + P.T) / 2
    Mmat = Qx @ np.linalg.solve(P, Qx.T)
    Mmat = (Mmat + Mmat.T) / 2
    Xi = X1bar @ Mmat @ X1bar.T - P
    Xi = (Xi + Xi.T) / 2
    xi_max = float(np.linalg.eigvalsh(Xi)[-1])
    if xi_max >= 0:
        raise CertificateUnavailableError(
            f"Xi is not negative definite (max eigenvalue {xi_max:.3g}); "
            "no positive alpha exists"
        )
    beta = max(float(np.linalg.eigvalsh(Mmat)[-1]), BETA_FLOOR)
    B = X1bar @ X1bar.T
    Wb, _, _, _ = _range_basis(B)
    if Wb is None:
        alpha = np.inf  # X1 = 0: the constraint on alpha is vacuous
    else:
        alpha = float(np.linalg.eigvalsh(Wb.T @ (-Xi) @ Wb)[0])
    return StabilityCertificate(alpha=alpha, beta=beta, Xi=Xi, Mmat=Mmat)


def theorem4_certificate(
    report: NoiseEnergyReport, cert: StabilityCertificate
) -> StabilityCertificate:
    """Combine noise-energy and solution constants into the final verdict.

    Certified iff (6 g1 + 3 g2) / (1 - 2 g1) < alpha^2 / (2 beta (2 beta + alpha))
    with gamma1 below one half.
    """
    if not report.gamma1_ok:
        return StabilityCertificate(
            alpha=cert.alpha,
            beta=cert.beta,
            Xi=cert.Xi,
            Mmat=cert.Mmat,
            certified=False,
            reason=f"noise-energy condition violated: gamma1={report.gamma1:.4g} >= 0.5",
        )
    g1, g2 = report.gamma1, report.gamma2
    lhs = (6 * g1 + 3 * g2) / (1 - 2 * g1)
    a, b = cert.alpha, cert.beta
    rhs = np.inf if np.isinf(a) else a * a / (2 * b * (2 * b + a))
    certified = bool(lhs < rhs)
    return StabilityCertificate(
        alpha=a,
        beta=b,
        Xi=cert.Xi,
        Mmat=cert.Mmat,
        lhs=lhs,
        rhs=rhs,
        certified=certified,
        reason="" if certified else f"inequality fails: lhs={lhs:.4g} >= rhs={rhs:.4g}",
    )


def gaussian_average_bound(
    sigma: float, T: int, N: int, n: int, mu: float
) -> tuple[float, float]:
    """High-probability spectral-norm bound on an N-averaged Gaussian block.

    Returns (sigma sqrt(T/N) (1 + mu + sqrt(n/T)), 1 - exp(-T mu^2 / 2)).
    """
    if T <= 0 or N <= 0 or n <= 0 or mu <= 0:
        raise ValueError("T, N, n and mu must all be positive")
    bound = sigma * math.sqrt(T / N) * (1 + mu + math.sqrt(n / T))
    confidence = 1 - math.exp(-T * mu * mu / 2)
    return bound, confidence


def check_lyapunov(A_cl: np.ndarray, P: np.ndarray) -> bool:
    """True iff A_cl P A_cl' - P is negative definite (strictly, tol 1e-12)."""
    P = (P + P.T) / 2
    D = A_cl @ P @ A_cl.T - P
    return bool(np.linalg.eigvalsh((D + D.T) / 2)[-1] < -1e-12)
