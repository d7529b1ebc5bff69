"""Dense two-phase simplex and the linear programs built on it.

The engine is deliberately plain: a full tableau, Bland's smallest-index rule
for the entering variable, periodic reinversion, and explicit tolerances.  The
programs here have at most a few hundred columns, so determinism matters more
than speed.
"""
from __future__ import annotations

import itertools
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import LPError

EPS_FEAS = 1e-7
EPS_DOM = 1e-7
EPS_SWITCH = 1e-7
_PIVOT_TOL = 1e-9
_COST_TOL = 1e-10

LE, EQ, GE = "<=", "==", ">="


@dataclass
class LinearProgram:
    """maximize objective · x subject to rows and per-variable bounds."""

    objective: np.ndarray
    A: np.ndarray
    relations: list[str]
    rhs: np.ndarray
    lower: np.ndarray = None
    upper: np.ndarray = None
    name: str = "lp"

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float)
        n = self.objective.shape[0]
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.rhs = np.asarray(self.rhs, dtype=float).reshape(-1)
        self.relations = list(self.relations)
        if self.lower is None:
            self.lower = np.zeros(n)
        if self.upper is None:
            self.upper = np.full(n, np.inf)
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if not (self.A.shape[0] == self.rhs.shape[0] == len(self.relations)):
            raise ValueError("constraint rows, relations and rhs differ in length")
        if any(r not in (LE, EQ, GE) for r in self.relations):
            raise ValueError(f"unknown relation in {set(self.relations)}")
        if np.isnan(self.A).any() or np.isnan(self.rhs).any() or np.isnan(self.objective).any():
            raise ValueError("NaN coefficient")

    @property
    def n_vars(self) -> int:
        return self.objective.shape[0]


@dataclass
class LpResult:
    status: str  # optimal | infeasible | unbounded
    objective: float = float("nan")
    x: np.ndarray | None = None
    pivots: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


# ---------------------------------------------------------------------------
# standard-form conversion

def _standard_form(lp: LinearProgram):
    """Map x = offset + M y with y >= 0; turn finite upper bounds into rows."""
    n = lp.n_vars
    cols, offset = [], np.zeros(n)
    extra_rows = []
    for j in range(n):
        lo, hi = lp.lower[j], lp.upper[j]
        if np.isfinite(lo):
            offset[j] = lo
            cols.append((j, 1.0))
            if np.isfinite(hi):
                extra_rows.append((len(cols) - 1, hi - lo))
        elif np.isfinite(hi):
            offset[j] = hi
            cols.append((j, -1.0))
        else:
            cols.append((j, 1.0))
            cols.append((j, -1.0))
    M = np.zeros((n, len(cols)))
    for k, (j, s) in enumerate(cols):
        M[j, k] = s
    A = lp.A @ M
    b = lp.rhs - lp.A @ offset
    rel = list(lp.relations)
    if extra_rows:
        E = np.zeros((len(extra_rows), len(cols)))
        for r, (k, cap) in enumerate(extra_rows):
            E[r, k] = 1.0
        A = np.vstack([A, E])
        b = np.concatenate([b, [cap for _, cap in extra_rows]])
        rel += [LE] * len(extra_rows)
    c = lp.objective @ M
    const = float(lp.objective @ offset)
    return A, b, rel, c, const, M, offset


def _pivot(T, row, col):
    T[row] /= T[row, col]
    colvals = T[:, col].copy()
    colvals[row] = 0.0
    nz = np.nonzero(np.abs(colvals) > 0)[0]
    if nz.size:
        T[nz] -= np.outer(colvals[nz], T[row])


def _reinvert(T, T0, basis, cost):
    """Rebuild the tableau from the original rows for the current basis."""
    m = len(basis)
    try:
        rows = np.linalg.solve(T0[:, basis], T0)
    except np.linalg.LinAlgError:
        return
    T[:m] = rows
    T[-1] = np.append(cost, 0.0) - cost[basis] @ rows


def _run(T, basis, width, max_pivots, T0, cost):
    """Maximize using the reduced-cost row T[-1]; Bland's rule for entering.

    Among rows tied in the ratio test the largest pivot element wins, and the
    tableau is recomputed from ``T0`` every few pivots to stop drift.  After a
    long run of degenerate pivots the leaving row falls back to Bland's rule,
    which cannot cycle.
    """
    m = T.shape[0] - 1
    pivots = 0
    stalled = 0
    while True:
        candidates = np.nonzero(T[-1, :width] > _COST_TOL)[0]
        if candidates.size == 0:
            _reinvert(T, T0, basis, cost)
            candidates = np.nonzero(T[-1, :width] > _COST_TOL)[0]
            if candidates.size == 0:
                return "optimal", pivots
        enter = int(candidates[0])
        col = T[:m, enter]
        rows = np.nonzero(col > _PIVOT_TOL)[0]
        if rows.size == 0:
            return "unbounded", pivots
        ratios = np.maximum(T[rows, -1], 0.0) / col[rows]
        best = ratios.min()
        ties = rows[ratios <= best + 1e-12 * max(1.0, abs(best))]
        stalled = stalled + 1 if best <= 1e-12 else 0
        if stalled > 2 * m + 10:
            leave = int(min(ties, key=lambda r: basis[r]))
        else:
            leave = int(max(ties, key=lambda r: (col[r], -basis[r])))
        _pivot(T, leave, enter)
        basis[leave] = enter
        pivots += 1
        if pivots % 20 == 0:
            _reinvert(T, T0, basis, cost)
        rhs = T[:m, -1]
        rhs[(rhs < 0) & (rhs > -1e-9)] = 0.0
        if pivots > max_pivots:
            raise LPError("numerically unstable: pivot limit exceeded",
                          {"pivots": pivots, "rows": m, "cols": T.shape[1] - 1})


def _independent_rows(A, b, rel):
    """Drop equality rows spanned by earlier ones (None if one contradicts them)."""
    keep, basis_rows, basis_rhs = [], [], []
    Q = np.zeros((0, A.shape[1]))
    for i in range(A.shape[0]):
        if rel[i] != EQ:
            keep.append(i)
            continue
        row = A[i]
        norm = np.linalg.norm(row)
        resid = row - Q.T @ (Q @ row) if Q.shape[0] else row
        if np.linalg.norm(resid) > 1e-9 * max(norm, 1.0):
            Q = np.vstack([Q, resid / np.linalg.norm(resid)])
            basis_rows.append(row)
            basis_rhs.append(b[i])
            keep.append(i)
            continue
        implied = 0.0
        if basis_rows:
            coef = np.linalg.lstsq(np.array(basis_rows).T, row, rcond=None)[0]
            implied = float(coef @ np.array(basis_rhs))
        if abs(implied - b[i]) > EPS_FEAS * max(1.0, abs(b[i])):
            return None
    return keep


def solve_lp(lp: LinearProgram) -> LpResult:
    _maybe_dump(lp)
    A, b, rel, c, const, M, offset = _standard_form(lp)
    m, n = A.shape
    if m == 0:
        if np.any(c > _COST_TOL):
            return LpResult("unbounded")
        y = np.zeros(n)
        return LpResult("optimal", const, offset + M @ y)

    keep = _independent_rows(A, b, rel)
    if keep is None:
        return LpResult("infeasible")
    A = A[keep].copy()
    b = b[keep].copy()
    rel = [rel[i] for i in keep]
    m = len(keep)
    for i in range(m):
        if b[i] < 0:
            A[i] *= -1
            b[i] *= -1
            rel[i] = {LE: GE, GE: LE, EQ: EQ}[rel[i]]

    n_slack = sum(r != EQ for r in rel)
    n_art = sum(r != LE for r in rel)
    width = n + n_slack + n_art
    T = np.zeros((m + 1, width + 1))
    T[:m, :n] = A
    T[:m, -1] = b
    basis = [0] * m
    s, a = n, n + n_slack
    art_cols = []
    for i, r in enumerate(rel):
        if r == LE:
            T[i, s] = 1.0
            basis[i] = s
            s += 1
        elif r == GE:
            T[i, s] = -1.0
            s += 1
            T[i, a] = 1.0
            basis[i] = a
            art_cols.append(a)
            a += 1
        else:
            T[i, a] = 1.0
            basis[i] = a
            art_cols.append(a)
            a += 1
    T0 = T[:m].copy()
    max_pivots = 50 * (m + width) + 1000
    total = 0

    if art_cols:
        # phase 1: maximize -sum(artificials)
        cost1 = np.zeros(width)
        cost1[art_cols] = -1.0
        _reinvert(T, T0, basis, cost1)
        status, p = _run(T, basis, width, max_pivots, T0, cost1)
        total += p
        if T[-1, -1] > EPS_FEAS * max(1.0, np.abs(b).max()):
            return LpResult("infeasible", pivots=total)
        art = set(art_cols)
        keep_rows = []
        for i in range(m):
            if basis[i] in art:
                row = np.abs(T[i, :n + n_slack])
                j = int(np.argmax(row))
                if row[j] <= 1e-7 * max(1.0, np.abs(T0[i]).max()):
                    continue  # redundant row
                _pivot(T, i, j)
                basis[i] = j
            keep_rows.append(i)
        T = np.vstack([T[keep_rows], T[-1:]])
        T0 = T0[keep_rows]
        basis = [basis[i] for i in keep_rows]
        T = np.delete(T, art_cols, axis=1)
        T0 = np.delete(T0, art_cols, axis=1)
        width = n + n_slack
        m = len(basis)

    cost2 = np.zeros(width)
    cost2[:n] = c
    _reinvert(T, T0, basis, cost2)
    status, p = _run(T, basis, width, max_pivots, T0, cost2)
    total += p
    if status == "unbounded":
        return LpResult("unbounded", pivots=total)
    y = np.zeros(width)
    for i, col in enumerate(basis):
        y[col] = max(T[i, -1], 0.0)
    x = offset + M @ y[:n]
    result = LpResult("optimal", float(lp.objective @ x), x, total)
    _verify(lp, result)
    return result


def _verify(lp: LinearProgram, res: LpResult):
    x = res.x
    lhs = lp.A @ x
    scale = np.maximum(1.0, np.maximum(np.abs(lp.rhs), np.abs(lp.A).max(axis=1, initial=0.0)))
    tol = EPS_FEAS * scale
    bad = []
    for i, r in enumerate(lp.relations):
        if (r == LE and lhs[i] > lp.rhs[i] + tol[i]) or (r == GE and lhs[i] < lp.rhs[i] - tol[i]) \
                or (r == EQ and abs(lhs[i] - lp.rhs[i]) > tol[i]):
            bad.append(i)
    if bad or np.any(x < lp.lower - EPS_FEAS) or np.any(x > lp.upper + EPS_FEAS):
        raise LPError("numerically unstable: solution violates constraints",
                      {"rows": bad, "pivots": res.pivots, "name": lp.name})


# ---------------------------------------------------------------------------
# debug dump (fixed-column MPS)

_dump_counter = itertools.count()


def _maybe_dump(lp: LinearProgram):
    target = os.environ.get("VDBELIEF_LP_DUMP")
    if target:
        os.makedirs(target, exist_ok=True)
        path = os.path.join(target, f"{lp.name}-{next(_dump_counter):06d}.mps")
        with open(path, "w") as fh:
            fh.write(to_mps(lp))


def to_mps(lp: LinearProgram) -> str:
    """Fixed-format MPS.  The objective row is negated (MPS minimizes)."""
    lines = [f"NAME          {lp.name[:8]}", "ROWS", " N  COST"]
    kinds = {LE: "L", GE: "G", EQ: "E"}
    for i, r in enumerate(lp.relations):
        lines.append(f" {kinds[r]}  R{i:07d}")
    lines.append("COLUMNS")
    for j in range(lp.n_vars):
        entries = [("COST", -lp.objective[j])] if lp.objective[j] else []
        entries += [(f"R{i:07d}", lp.A[i, j]) for i in np.nonzero(lp.A[:, j])[0]]
        for row, val in entries:
            lines.append(f"    X{j:07d}  {row:<8}  {val:>12.6g}")
    lines.append("RHS")
    for i in np.nonzero(lp.rhs)[0]:
        lines.append(f"    RHS       R{i:07d}  {lp.rhs[i]:>12.6g}")
    lines.append("BOUNDS")
    for j in range(lp.n_vars):
        lo, hi = lp.lower[j], lp.upper[j]
        if not np.isfinite(lo) and not np.isfinite(hi):
            lines.append(f" FR BND       X{j:07d}")
            continue
        if not np.isfinite(lo):
            lines.append(f" MI BND       X{j:07d}")
        elif lo != 0:
            lines.append(f" LO BND       X{j:07d}  {lo:>12.6g}")
        if np.isfinite(hi):
            lines.append(f" UP BND       X{j:07d}  {hi:>12.6g}")
    lines.append("ENDATA")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# programs

@dataclass
class DominanceResult:
    dominated: bool
    margin: float
    witness: np.ndarray | None = field(default=None, repr=False)

    def __iter__(self):
        return iter((self.dominated, self.witness))


def _margin_lp(alpha, others, sign: float, name: str) -> LinearProgram:
    """max d s.t. sign·b·(alpha - other) >= d for each other, b on the simplex."""
    alpha = np.asarray(alpha, dtype=float)
    others = np.atleast_2d(np.asarray(others, dtype=float))
    n = alpha.shape[0]
    rows = np.hstack([sign * (alpha[None, :] - others), -np.ones((others.shape[0], 1))])
    A = np.vstack([rows, np.concatenate([np.ones(n), [0.0]])])
    rel = [GE] * others.shape[0] + [EQ]
    rhs = np.concatenate([np.zeros(others.shape[0]), [1.0]])
    obj = np.zeros(n + 1)
    obj[-1] = 1.0
    lower = np.concatenate([np.zeros(n), [-np.inf]])
    return LinearProgram(obj, A, rel, rhs, lower=lower, name=name)


def _margin_test(alpha, others, sign, eps, name) -> DominanceResult:
    others = np.asarray(others, dtype=float).reshape(-1, np.asarray(alpha).shape[0])
    if others.shape[0] == 0:
        n = np.asarray(alpha).shape[0]
        return DominanceResult(False, np.inf, np.full(n, 1.0 / n))
    res = solve_lp(_margin_lp(alpha, others, sign, name))
    if not res.optimal:
        raise LPError(f"{name} LP returned {res.status}")
    return DominanceResult(res.objective <= eps, res.objective, res.x[:-1])


def dominance_test(alpha, others, eps: float = EPS_DOM) -> DominanceResult:
    """Is ``alpha`` never strictly maximal against ``others``?

    Unpacks as ``(dominated, witness)``; ``margin`` is the optimal d.
    """
    return _margin_test(alpha, others, 1.0, eps, "dominance")


def anti_dominance_test(alpha, others, eps: float = EPS_DOM) -> DominanceResult:
    """Mirror image: is ``alpha`` never strictly minimal against ``others``?"""
    return _margin_test(alpha, others, -1.0, eps, "antidominance")


def marginal_constraint_rows(names: Sequence[str], dims: Sequence[int],
                             subsets) -> np.ndarray:
    """Indicator rows: one per (subset M, assignment m of M), deduplicated."""
    pos = {v: i for i, v in enumerate(names)}
    grids = np.indices(dims).reshape(len(dims), -1).T
    rows = {}
    for subset in sorted(subsets, key=lambda m: (len(m), sorted(pos[v] for v in m))):
        axes = sorted(pos[v] for v in subset)
        key = np.zeros(grids.shape[0], dtype=np.int64)
        for ax in axes:
            key = key * dims[ax] + grids[:, ax]
        for val in range(int(np.prod([dims[ax] for ax in axes]))):
            row = (key == val).astype(float)
            rows.setdefault(row.tobytes(), row)
    if not rows:
        return np.zeros((0, grids.shape[0]))
    return np.array(list(rows.values()))


@dataclass
class SwitchResult:
    feasible_positive: bool
    d_star: float
    b: np.ndarray | None = field(default=None, repr=False)
    b_prime: np.ndarray | None = field(default=None, repr=False)

    def __iter__(self):
        return iter((self.feasible_positive, self.d_star))


def switch_lp(i: int, j: int, vectors: np.ndarray, constraint_rows: np.ndarray) -> LinearProgram:
    V = np.asarray(vectors, dtype=float)
    k, n = V.shape
    others_i = [l for l in range(k) if l != i]
    others_j = [l for l in range(k) if l != j]
    width = 2 * n + 1
    blocks = []
    for l in others_i:
        blocks.append(np.concatenate([V[i] - V[l], np.zeros(n), [-1.0]]))
    for l in others_j:
        blocks.append(np.concatenate([np.zeros(n), V[j] - V[l], [-1.0]]))
    rel = [GE] * len(blocks)
    rhs = [0.0] * len(blocks)
    blocks.append(np.concatenate([np.ones(n), np.zeros(n), [0.0]]))
    blocks.append(np.concatenate([np.zeros(n), np.ones(n), [0.0]]))
    rel += [EQ, EQ]
    rhs += [1.0, 1.0]
    ones = np.ones(n)
    for row in constraint_rows:
        if np.array_equal(row, ones):
            continue  # implied by normalization
        blocks.append(np.concatenate([-row, row, [0.0]]))
        rel.append(EQ)
        rhs.append(0.0)
    obj = np.zeros(width)
    obj[-1] = 1.0
    lower = np.concatenate([np.zeros(2 * n), [-np.inf]])
    return LinearProgram(obj, np.array(blocks).reshape(-1, width), rel, rhs,
                         lower=lower, name="switch")


def switch_test(i: int, j: int, vectors, constraint_rows, eps: float = EPS_SWITCH,
                include_ties: bool = False) -> SwitchResult:
    """Can projection move a belief where vector i is optimal to one where j is?

    Variables are the true belief b, the projected belief b' (tied to b on
    every constrained marginal) and the margin d.  Membership needs d* > eps,
    or d* >= -eps when ties are included.
    """
    V = np.asarray(vectors, dtype=float)
    if i == j:
        return SwitchResult(True, np.inf)
    res = solve_lp(switch_lp(i, j, V, constraint_rows))
    if res.status == "infeasible":
        return SwitchResult(False, -np.inf)
    if res.status == "unbounded":
        return SwitchResult(True, np.inf)
    n = V.shape[1]
    d = res.objective
    ok = d >= -eps if include_ties else d > eps
    return SwitchResult(ok, d, res.x[:n], res.x[n:2 * n])
