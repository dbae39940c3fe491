"""Small dense conic programs: linear objectives with norm epigraphs, affine
equality constraints and PSD constraints over named matrix variables.

Solving is delegated to cvxpy (CLARABEL, with SCS as fallback); the returned
solution is always re-verified numerically, independently of the solver, and
problems can be exported in SDPA sparse format so an external solver can
cross-check any instance.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "VarSpec",
    "MatMulTerm",
    "AffineExpr",
    "PsdBlock",
    "NormTerm",
    "TraceTerm",
    "ConicProblem",
    "ConicSolution",
    "solve",
    "export_problem",
    "import_problem",
    "SdpaData",
]

DEFAULT_FEAS_TOL = 1e-8
DEFAULT_OPT_TOL = 1e-8


@dataclass(frozen=True)
class VarSpec:
    """Shape declaration of one matrix decision variable."""

    name: str
    rows: int
    cols: int
    symmetric: bool = False

    def __post_init__(self):
        if self.symmetric and self.rows != self.cols:
            raise ValueError(f"symmetric variable {self.name} must be square")


@dataclass(frozen=True)
class MatMulTerm:
    """One term left @ X @ right (or left @ X' @ right) of an affine expression."""

    left: np.ndarray
    var: str
    right: np.ndarray
    transpose_var: bool = False


class AffineExpr:
    """Affine matrix expression sum_k L_k X_k R_k + C over named variables."""

    def __init__(self, shape, terms=(), constant=None):
        self.shape = tuple(shape)
        self.terms = tuple(terms)
        self.constant = (
            np.zeros(self.shape) if constant is None else np.asarray(constant, float)
        )
        if self.constant.shape != self.shape:
            raise ValueError(
                f"constant shape {self.constant.shape} != expression shape {self.shape}"
            )

    @classmethod
    def const(cls, C) -> "AffineExpr":
        C = np.atleast_2d(np.asarray(C, float))
        return cls(C.shape, (), C)

    @classmethod
    def term(cls, left, var: str, right, transpose_var: bool = False) -> "AffineExpr":
        left = np.atleast_2d(np.asarray(left, float))
        right = np.atleast_2d(np.asarray(right, float))
        return cls(
            (left.shape[0], right.shape[1]),
            (MatMulTerm(left, var, right, transpose_var),),
        )

    def __add__(self, other: "AffineExpr") -> "AffineExpr":
        if self.shape != other.shape:
            raise ValueError(f"shape mismatch {self.shape} + {other.shape}")
        return AffineExpr(
            self.shape, self.terms + other.terms, self.constant + other.constant
        )

    def __sub__(self, other: "AffineExpr") -> "AffineExpr":
        return self + (-other)

    def __neg__(self) -> "AffineExpr":
        return AffineExpr(
            self.shape,
            tuple(
                MatMulTerm(-t.left, t.var, t.right, t.transpose_var) for t in self.terms
            ),
            -self.constant,
        )

    def value(self, values: dict) -> np.ndarray:
        out = self.constant.copy()
        for t in self.terms:
            X = values[t.var]
            out += t.left @ (X.T if t.transpose_var else X) @ t.right
        return out

    def variables(self) -> set:
        return {t.var for t in self.terms}


@dataclass(frozen=True)
class PsdBlock:
    """Symmetric block grid required to be ⪰ margin · I.

    The grid rows/cols of AffineExpr entries are assembled into one block
    matrix; the caller is responsible for a symmetric layout (entry (j,i)
    the transpose of entry (i,j)).
    """

    grid: tuple

    def __init__(self, grid: Sequence[Sequence[AffineExpr]]):
        object.__setattr__(self, "grid", tuple(tuple(row) for row in grid))

    @property
    def size(self) -> int:
        return sum(row[0].shape[0] for row in self.grid)

    def value(self, values: dict) -> np.ndarray:
        rows = [
            np.hstack([e.value(values) for e in row]) for row in self.grid
        ]
        return np.vstack(rows)

    def variables(self) -> set:
        return set().union(*(e.variables() for row in self.grid for e in row))


@dataclass(frozen=True)
class NormTerm:
    """weight * ||expr||, with `norm` either "l1" (entrywise) or "fro"."""

    weight: float
    expr: AffineExpr
    norm: str = "l1"

    def __post_init__(self):
        if self.norm not in ("l1", "fro"):
            raise ValueError(f"unknown norm {self.norm!r}")


@dataclass(frozen=True)
class TraceTerm:
    """weight * trace(expr) for a square affine expression."""

    weight: float
    expr: AffineExpr


@dataclass
class ConicProblem:
    variables: dict
    objective: list
    equalities: list
    psd_constraints: list
    margin: float = 0.0

    def __post_init__(self):
        if self.margin < 0:
            raise ValueError("margin must be nonnegative")
        declared = set(self.variables)
        used = set()
        for term in self.objective:
            used |= term.expr.variables()
        for eq in self.equalities:
            used |= eq.variables()
        for blk in self.psd_constraints:
            used |= blk.variables()
        missing = used - declared
        if missing:
            raise ValueError(f"undeclared variables referenced: {sorted(missing)}")


@dataclass
class ConicSolution:
    """Solver outcome with independently re-verified residuals.

    min_psd_eigenvalue is the margin slack: the smallest eigenvalue of any
    PSD constraint block minus the required margin.
    """

    status: str
    values: dict
    objective_value: float
    max_equality_residual: float
    min_psd_eigenvalue: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "status": self.status,
                "objective_value": self.objective_value,
                "max_equality_residual": self.max_equality_residual,
                "min_psd_eigenvalue": self.min_psd_eigenvalue,
                "values": {k: v.tolist() for k, v in self.values.items()},
            }
        )


def _build_cvxpy(problem: ConicProblem):
    import cvxpy as cp

    cvars = {}
    for spec in problem.variables.values():
        if spec.symmetric:
            cvars[spec.name] = cp.Variable((spec.rows, spec.cols), symmetric=True)
        else:
            cvars[spec.name] = cp.Variable((spec.rows, spec.cols))

    def to_cp(expr: AffineExpr):
        out = cp.Constant(expr.constant)
        for t in expr.terms:
            X = cvars[t.var]
            out = out + t.left @ (X.T if t.transpose_var else X) @ t.right
        return out

    obj = cp.Constant(0.0)
    for term in problem.objective:
        E = to_cp(term.expr)
        if isinstance(term, NormTerm):
            obj = obj + term.weight * (
                cp.sum(cp.abs(E)) if term.norm == "l1" else cp.norm(E, "fro")
            )
        elif isinstance(term, TraceTerm):
            obj = obj + term.weight * cp.trace(E)
        else:
            raise TypeError(f"unknown objective term {term!r}")

    constraints = []
    for eq in problem.equalities:
        constraints.append(to_cp(eq) == 0)
    for blk in problem.psd_constraints:
        S = cp.bmat([[to_cp(e) for e in row] for row in blk.grid])
        # symmetric by construction; symmetrize so cvxpy accepts the PSD cone
        S = (S + S.T) / 2
        constraints.append(S >> problem.margin * np.eye(blk.size))
    return cp.Problem(cp.Minimize(obj), constraints), cvars


def _verify(problem: ConicProblem, values: dict):
    max_eq = 0.0
    for eq in problem.equalities:
        res = eq.value(values)
        max_eq = max(max_eq, float(np.max(np.abs(res))) if res.size else 0.0)
    min_slack = np.inf
    for blk in problem.psd_constraints:
        S = blk.value(values)
        S = (S + S.T) / 2
        min_slack = min(
            min_slack, float(np.min(np.linalg.eigvalsh(S))) - problem.margin
        )
    if not problem.psd_constraints:
        min_slack = 0.0
    obj = 0.0
    for term in problem.objective:
        E = term.expr.value(values)
        if isinstance(term, NormTerm):
            obj += term.weight * (
                float(np.sum(np.abs(E)))
                if term.norm == "l1"
                else float(np.linalg.norm(E, "fro"))
            )
        else:
            obj += term.weight * float(np.trace(E))
    return obj, max_eq, min_slack


def solve(
    problem: ConicProblem,
    feas_tol: float = DEFAULT_FEAS_TOL,
    opt_tol: float = DEFAULT_OPT_TOL,
) -> ConicSolution:
    """Solve the problem and re-verify the reported solution numerically."""
    import cvxpy as cp

    cp_problem, cvars = _build_cvxpy(problem)
    status = None
    for solver in ("CLARABEL", "SCS"):
        try:
            cp_problem.solve(solver=solver)
            status = cp_problem.status
        except (cp.error.SolverError, cp.error.DCPError) as exc:
            if isinstance(exc, cp.error.DCPError):
                raise
            status = None
        if status in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE, cp.INFEASIBLE, cp.UNBOUNDED):
            break

    if status in (cp.INFEASIBLE, "infeasible_inaccurate"):
        return ConicSolution("infeasible", {}, np.nan, np.nan, np.nan)
    if status in (cp.UNBOUNDED, "unbounded_inaccurate"):
        return ConicSolution("unbounded", {}, np.nan, np.nan, np.nan)
    if status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) or any(
        v.value is None for v in cvars.values()
    ):
        return ConicSolution("numerical_failure", {}, np.nan, np.nan, np.nan)

    values = {name: np.atleast_2d(np.asarray(v.value, float)) for name, v in cvars.items()}
    for name, spec in problem.variables.items():
        if spec.symmetric:
            values[name] = (values[name] + values[name].T) / 2
    obj, max_eq, min_slack = _verify(problem, values)
    # feasibility is judged independently of the solver's own report
    scale = 1.0 + abs(obj)
    ok = max_eq <= feas_tol * scale and min_slack >= -feas_tol * scale
    return ConicSolution(
        status="optimal" if ok else "numerical_failure",
        values=values,
        objective_value=obj,
        max_equality_residual=max_eq,
        min_psd_eigenvalue=min_slack,
    )


# --- SDPA sparse export ----------------------------------------------------
#
# Encoding: scalarize every variable entry (upper triangle for symmetric
# variables) plus epigraph auxiliaries into the SDPA vector y; the file then
# states  max b'y  s.t.  sum_i y_i F_i - F0 ⪰ 0  blockwise, with b = -c for
# our minimization. Equalities and L1 epigraphs become diagonal (LP) blocks,
# a Frobenius epigraph becomes one arrow-shaped PSD block.


@dataclass(frozen=True)
class SdpaData:
    """Parsed SDPA sparse file: dimensions, block structure, cost, entries."""

    mdim: int
    block_struct: tuple
    b: tuple
    entries: tuple  # sorted tuples (matno, blkno, i, j, value)


def _scalarize(problem: ConicProblem):
    """Map variable entries to flat indices; return (index map, count)."""
    index = {}
    k = 0
    for spec in problem.variables.values():
        if spec.symmetric:
            for i in range(spec.rows):
                for j in range(i, spec.cols):
                    index[(spec.name, i, j)] = k
                    k += 1
        else:
            for i in range(spec.rows):
                for j in range(spec.cols):
                    index[(spec.name, i, j)] = k
                    k += 1
    return index, k


def _entry_coeffs(problem: ConicProblem, expr: AffineExpr, index: dict, nvars: int):
    """Dense (rows*cols) x nvars jacobian of vec(expr) plus the constant."""
    r, c = expr.shape
    J = np.zeros((r * c, nvars))
    for t in expr.terms:
        spec = problem.variables[t.var]
        for i in range(spec.rows):
            for j in range(spec.cols):
                key = (t.var, min(i, j), max(i, j)) if spec.symmetric else (t.var, i, j)
                k = index[key]
                if t.transpose_var:
                    contrib = np.outer(t.left[:, j], t.right[i, :])
                else:
                    contrib = np.outer(t.left[:, i], t.right[j, :])
                # for symmetric variables both (i,j) and (j,i) feed the same
                # scalar, accumulated over the two loop visits
                J[:, k] += contrib.ravel()
    return J, expr.constant.ravel()


def export_problem(problem: ConicProblem) -> str:
    """Serialize to SDPA sparse format (.dat-s) text."""
    index, _ = _scalarize(problem)
    c = np.zeros(len(index))
    aux_records = []  # (kind, J, const, weight) with aux index assigned later

    for term in problem.objective:
        J, const = _entry_coeffs(problem, term.expr, index, len(index))
        if isinstance(term, TraceTerm):
            r, cdim = term.expr.shape
            for d in range(r):
                c += term.weight * J[d * cdim + d]
        elif term.norm == "l1":
            aux_records.append(("l1", J, const, term.weight))
        else:
            aux_records.append(("fro", J, const, term.weight))

    # assign auxiliary indices
    n_base = len(index)
    aux_offsets = []
    total_aux = 0
    for kind, J, const, w in aux_records:
        if kind == "l1":
            aux_offsets.append(total_aux)
            total_aux += J.shape[0]  # one epigraph scalar per entry
        else:
            aux_offsets.append(total_aux)
            total_aux += 1
    nvars = n_base + total_aux
    c_full = np.concatenate([c, np.zeros(total_aux)])

    diag_entries = []  # (coeff vector over y, constant) meaning a'y + const >= 0

    for (kind, J, const, w), off in zip(aux_records, aux_offsets):
        if kind == "l1":
            for e in range(J.shape[0]):
                s_idx = n_base + off + e
                c_full[s_idx] += w
                a = np.zeros(nvars)
                a[: n_base] = -J[e]
                a[s_idx] = 1.0
                diag_entries.append((a, -const[e]))  # s - e(y) >= 0
                a2 = np.zeros(nvars)
                a2[: n_base] = J[e]
                a2[s_idx] = 1.0
                diag_entries.append((a2, const[e]))  # s + e(y) >= 0
        else:
            t_idx = n_base + off
            c_full[t_idx] += w

    for eq in problem.equalities:
        J, const = _entry_coeffs(problem, eq, index, n_base)
        for e in range(J.shape[0]):
            a = np.zeros(nvars)
            a[: n_base] = J[e]
            diag_entries.append((a, const[e]))
            diag_entries.append((-a, -const[e]))

    # block structure: PSD constraint blocks, then fro arrow blocks, then one
    # diagonal block for all scalar inequalities
    block_struct = []
    file_entries = []  # (matno, blkno, i, j, value); matno 0 is F0

    def put(matno, blkno, i, j, v):
        if v != 0.0:
            file_entries.append((matno, blkno, i, j, float(v)))

    blkno = 0
    for blk in problem.psd_constraints:
        blkno += 1
        d = blk.size
        block_struct.append(d)
        # assemble jacobian of the full block
        row_off = 0
        J_blk = np.zeros((d, d, nvars))
        C_blk = np.zeros((d, d))
        for row in blk.grid:
            col_off = 0
            for e in row:
                J, const = _entry_coeffs(problem, e, index, n_base)
                r, cc = e.shape
                J_blk[row_off : row_off + r, col_off : col_off + cc, :n_base] = (
                    J.reshape(r, cc, n_base)
                )
                C_blk[row_off : row_off + r, col_off : col_off + cc] = const.reshape(r, cc)
                col_off += cc
            row_off += row[0].shape[0]
        # constraint S0 + sum y_i S_i ⪰ margin I  ->  F0 = margin I - S0
        F0 = problem.margin * np.eye(d) - C_blk
        F0 = (F0 + F0.T) / 2
        for i in range(d):
            for j in range(i, d):
                put(0, blkno, i + 1, j + 1, F0[i, j])
        for k in range(nvars):
            Fk = (J_blk[:, :, k] + J_blk[:, :, k].T) / 2
            for i in range(d):
                for j in range(i, d):
                    put(k + 1, blkno, i + 1, j + 1, Fk[i, j])

    for (kind, J, const, w), off in zip(aux_records, aux_offsets):
        if kind != "fro":
            continue
        blkno += 1
        ne = J.shape[0]
        d = 1 + ne
        block_struct.append(d)
        t_idx = n_base + off
        # arrow block [[t, e(y)'], [e(y), t I]] ⪰ 0  <=>  t >= ||e(y)||_2
        put(t_idx + 1, blkno, 1, 1, 1.0)
        for q in range(ne):
            put(t_idx + 1, blkno, 2 + q, 2 + q, 1.0)
            put(0, blkno, 1, 2 + q, -const[q])
            for k in range(n_base):
                put(k + 1, blkno, 1, 2 + q, J[q, k])

    if diag_entries:
        blkno += 1
        d = len(diag_entries)
        block_struct.append(-d)
        for e, (a, const) in enumerate(diag_entries):
            put(0, blkno, e + 1, e + 1, -const)
            for k in np.nonzero(a)[0]:
                put(k + 1, blkno, e + 1, e + 1, a[k])

    b = -c_full  # SDPA maximizes b'y
    lines = ['"exported conic problem"']
    lines.append(f"{nvars} = mDIM")
    lines.append(f"{len(block_struct)} = nBLOCK")
    lines.append("(" + ", ".join(str(s) for s in block_struct) + ") = bLOCKsTRUCT")
    lines.append("{" + ", ".join(format(v, ".17g") for v in b) + "}")
    for matno, bno, i, j, v in file_entries:
        lines.append(f"{matno} {bno} {i} {j} {format(v, '.17g')}")
    return "\n".join(lines) + "\n"


def import_problem(text: str) -> SdpaData:
    """Parse SDPA sparse format back into its raw block data."""
    lines = [
        ln.strip()
        for ln in text.splitlines()
        if ln.strip() and not ln.lstrip().startswith(("*", '"'))
    ]
    mdim = int(lines[0].split("=")[0].split()[0])
    nblock = int(lines[1].split("=")[0].split()[0])
    struct_txt = lines[2].split("=")[0]
    for ch in "(){}":
        struct_txt = struct_txt.replace(ch, " ")
    block_struct = tuple(int(tok) for tok in struct_txt.replace(",", " ").split())
    if len(block_struct) != nblock:
        raise ValueError(
            f"block structure lists {len(block_struct)} blocks, header says {nblock}"
        )
    b_txt = lines[3]
    for ch in "(){}":
        b_txt = b_txt.replace(ch, " ")
    b = tuple(float(tok) for tok in b_txt.replace(",", " ").split())
    if len(b) != mdim:
        raise ValueError(f"cost vector has {len(b)} entries, expected {mdim}")
    entries = []
    for ln in lines[4:]:
        toks = ln.replace(",", " ").split()
        entries.append((int(toks[0]), int(toks[1]), int(toks[2]), int(toks[3]), float(toks[4])))
    return SdpaData(mdim, block_struct, b, tuple(sorted(entries)))
