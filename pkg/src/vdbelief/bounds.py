"""Switch sets, one-stage and cumulative error bounds, and Alt-set recursion."""
from __future__ import annotations

import itertools
import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import lp
from .belief import ProjectionScheme
from .errors import CapacityError, LPError, ModelError
from .model import FactoredPOMDP, observation_matrix, reward_vector, transition_matrix
from .solver import INFINITE, ValueFunction, prune_anti_dominated

log = logging.getLogger(__name__)

ALT_CAP = 10**5
SNAP = 1e-9  # gaps below this are rounding noise and reported as 0
WEIGHTINGS = ("paper", "time")


@dataclass(frozen=True)
class SwitchSet:
    source: int
    stage: int | str
    scheme: ProjectionScheme
    members: tuple[int, ...]
    failures: dict = field(default_factory=dict, compare=False)

    @property
    def singleton(self) -> bool:
        return len(self.members) == 1


@dataclass(frozen=True, eq=False)
class AltSet:
    source: int
    stage: int | str
    vectors: np.ndarray = field(repr=False)

    def __len__(self):
        return self.vectors.shape[0]


@dataclass
class ErrorBound:
    kind: str  # U_finite | U_infinite | E_finite | E_infinite
    value: float
    per_stage: list[float] | None = None
    per_alpha: dict = field(default_factory=dict)
    parameters: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "value": _json_float(self.value),
                "per_stage": None if self.per_stage is None else [_json_float(v) for v in self.per_stage],
                "per_alpha": self.per_alpha, "parameters": self.parameters}


def _json_float(x):
    return x if math.isfinite(x) else str(x)


def contributed_error(alpha, other) -> float:
    """max_s (α(s) − α'(s)): the worst loss from swapping α for α'."""
    return float(np.max(np.asarray(alpha) - np.asarray(other)))


class SwitchTester:
    """Runs and caches switch LPs.

    Results are keyed by the value function, the vector pair and the set of
    constrained subsets, so lattice searches revisiting a constraint family
    never re-solve.  ``threads`` > 1 fans the per-candidate LPs out over a
    thread pool.
    """

    def __init__(self, pomdp: FactoredPOMDP, include_ties: bool = False, threads: int = 1):
        self.pomdp = pomdp
        self.include_ties = include_ties
        self.threads = max(1, int(threads))
        self._cache: dict = {}
        self._rows: dict = {}
        self._keep: dict = {}
        self._lock = threading.Lock()
        self.lp_count = 0

    def rows(self, constraints: frozenset) -> np.ndarray:
        if constraints not in self._rows:
            self._rows[constraints] = lp.marginal_constraint_rows(
                self.pomdp.var_names, self.pomdp.dims, constraints)
        return self._rows[constraints]

    def test(self, vf: ValueFunction, i_id: int, j_id: int, constraints) -> bool:
        """Is j in the switch set of i? LP failures count as yes."""
        return self._test(vf, i_id, j_id, frozenset(constraints))[0]

    def _test(self, vf, i_id, j_id, constraints):
        if i_id == j_id:
            return True, None
        key = (id(vf), i_id, j_id, constraints)
        with self._lock:
            self._keep[id(vf)] = vf
            if key in self._cache:
                return self._cache[key]
        try:
            res = lp.switch_test(vf.position(i_id), vf.position(j_id), vf.matrix,
                                 self.rows(constraints), include_ties=self.include_ties)
            out = (res.feasible_positive, None)
        except LPError as exc:
            log.warning("switch LP %d->%d failed (%s); keeping candidate", i_id, j_id, exc)
            out = (True, str(exc))
        with self._lock:
            self._cache[key] = out
            self.lp_count += 1
        return out

    def switch_set(self, vf: ValueFunction, alpha_id: int, scheme: ProjectionScheme,
                   constraints=None, order=None) -> SwitchSet:
        cons = frozenset(constraints) if constraints is not None else scheme.constraint_subsets()
        if order is None:
            alpha = vf.by_id(alpha_id).values
            order = sorted((v.id for v in vf.vectors if v.id != alpha_id),
                           key=lambda j: (-contributed_error(alpha, vf.by_id(j).values), j))
        if self.threads > 1 and len(order) > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                results = list(pool.map(lambda j: self._test(vf, alpha_id, j, cons), order))
        else:
            results = [self._test(vf, alpha_id, j, cons) for j in order]
        members = {alpha_id}
        failures = {}
        for j, (ok, err) in zip(order, results):
            if ok:
                members.add(j)
            if err:
                failures[j] = err
        return SwitchSet(alpha_id, vf.stage, scheme, tuple(sorted(members)), failures)


def compute_switch_set(alpha_id: int, vf: ValueFunction, scheme: ProjectionScheme,
                       pomdp: FactoredPOMDP, include_ties: bool = False,
                       tester: SwitchTester | None = None) -> SwitchSet:
    tester = tester or SwitchTester(pomdp, include_ties)
    return tester.switch_set(vf, alpha_id, scheme)


def one_stage_bound(alpha, sw: SwitchSet, vf: ValueFunction) -> float:
    """B(α): componentwise worst case over the switch set; 0 when it is {α}."""
    alpha = alpha.values if hasattr(alpha, "values") else np.asarray(alpha)
    return _snap(max(contributed_error(alpha, vf.by_id(j).values) for j in sw.members))


def _snap(x: float) -> float:
    return 0.0 if abs(x) < SNAP else x


def u_bound_finite(per_stage, gamma: float, weighting: str = "paper") -> ErrorBound:
    """Σ_i w_i B_i over stages-to-go i = 1..k.

    ``paper`` weights stage i by γ^i; ``time`` weights it by γ^(k−i), the
    discount actually in force when that decision is taken.
    """
    if weighting not in WEIGHTINGS:
        raise ModelError(f"unknown U weighting {weighting!r}")
    B = [float(x) for x in per_stage]
    if any(x < 0 for x in B):
        raise ModelError("one-stage bounds must be nonnegative")
    k = len(B)
    exps = [i for i in range(1, k + 1)] if weighting == "paper" else [k - i for i in range(1, k + 1)]
    value = sum(gamma ** e * b for e, b in zip(exps, B))
    return ErrorBound("U_finite", value, B, parameters={"gamma": gamma, "k": k, "weighting": weighting})


def u_bound_infinite(b_star: float, gamma: float) -> ErrorBound:
    if gamma >= 1.0:
        raise ModelError("undiscounted infinite bound undefined")
    return ErrorBound("U_infinite", float(b_star) / (1.0 - gamma), [float(b_star)],
                      parameters={"gamma": gamma})


# ---------------------------------------------------------------------------
# Alt sets

def backed_up_alternatives(pomdp: FactoredPOMDP, action, per_obs, cap: int = ALT_CAP) -> np.ndarray:
    """Backed-up vectors of ⟨a, σ'⟩ for every σ' drawn from ``per_obs`` sets."""
    sizes = [np.atleast_2d(v).shape[0] for v in per_obs]
    total = math.prod(sizes)
    if total > cap:
        raise CapacityError(f"Alt combination too large: sizes {sizes} give {total} > {cap}")
    T = transition_matrix(pomdp, action)
    O = observation_matrix(pomdp, action)
    G = [T @ (O[:, z][:, None] * np.atleast_2d(v).T) for z, v in enumerate(per_obs)]
    R = reward_vector(pomdp, action)
    out = np.empty((total, R.shape[0]))
    for row, combo in enumerate(itertools.product(*(range(s) for s in sizes))):
        out[row] = R + pomdp.discount * sum(G[z][:, j] for z, j in enumerate(combo))
    return out


def falt(vf: ValueFunction, alpha_id: int, alt_prev: dict, pomdp: FactoredPOMDP,
         retarget=None, cap: int = ALT_CAP) -> np.ndarray:
    """Anti-dominance-pruned backups of α's action over the Alt sets of its targets."""
    a = vf.by_id(alpha_id)
    targets = [retarget(t) if retarget else t for t in a.strategy]
    try:
        per_obs = [alt_prev[t] for t in targets]
    except KeyError as exc:
        raise ModelError(f"no Alt set for continuation {exc} of vector {alpha_id}") from exc
    return prune_anti_dominated(backed_up_alternatives(pomdp, a.action, per_obs, cap))


def alt(sw: SwitchSet, falt_map: dict) -> AltSet:
    vectors = np.vstack([falt_map[j] for j in sw.members])
    return AltSet(sw.source, sw.stage, prune_anti_dominated(vectors))


def alt_error(alpha, alt_set, vf: ValueFunction | None = None, restrict_region: bool = False) -> float:
    """E(α): worst value gap between α and its Alt set.

    With ``restrict_region`` the gap is maximized only over beliefs where α
    is optimal in ``vf`` (one LP per Alt vector); otherwise componentwise.
    """
    alpha = np.asarray(alpha)
    vectors = alt_set.vectors if isinstance(alt_set, AltSet) else np.atleast_2d(alt_set)
    if not restrict_region or vf is None:
        return _snap(max(0.0, max(contributed_error(alpha, w) for w in vectors)))
    best = -np.inf
    others = vf.matrix
    n = alpha.shape[0]
    for w in vectors:
        prog = lp.LinearProgram(alpha - w, np.vstack([alpha[None, :] - others, np.ones((1, n))]),
                                [lp.GE] * others.shape[0] + [lp.EQ],
                                np.concatenate([np.zeros(others.shape[0]), [1.0]]),
                                name="region")
        try:
            res = lp.solve_lp(prog)
        except LPError:
            res = None
        if res is None or not res.optimal:
            best = max(best, contributed_error(alpha, w))
        else:
            best = max(best, res.objective)
    return _snap(max(best, 0.0))


# ---------------------------------------------------------------------------
# finite-horizon bounds

def _switch_sets(stage_vf, assignment, tester, stage):
    return {v.id: tester.switch_set(stage_vf, v.id, assignment.scheme(stage, v.id))
            for v in stage_vf.vectors}


def u_bound_for_assignment(stages, assignment, tester: SwitchTester,
                           weighting: str = "paper") -> ErrorBound:
    """U bound of a finite-horizon assignment, with per-α detail."""
    per_stage, per_alpha = [], {}
    names = tester.pomdp.var_names
    for vf in stages:
        sws = _switch_sets(vf, assignment, tester, vf.stage)
        row = {}
        for v in vf.vectors:
            b = one_stage_bound(v, sws[v.id], vf)
            row[str(v.id)] = {"B": b, "scheme": sws[v.id].scheme.ordered(names),
                              "switch_members": list(sws[v.id].members)}
        per_alpha[str(vf.stage)] = row
        per_stage.append(max(r["B"] for r in row.values()))
    out = u_bound_finite(per_stage, tester.pomdp.discount, weighting)
    out.per_alpha = per_alpha
    return out


class AltRecursion:
    """Alt sets stage by stage (ℵ^1 upward) for a finite-horizon solution.

    Stage k's Alt sets depend on the scheme choices at stage k and on the
    Alt sets already fixed for stage k−1.
    """

    def __init__(self, stages, tester: SwitchTester, cap: int = ALT_CAP):
        self.stages = list(stages)
        self.tester = tester
        self.pomdp = tester.pomdp
        self.cap = cap
        n = self.pomdp.n_states
        self.alts: dict = {0: {0: np.zeros((1, n))}}
        self._falt: dict = {}

    def falt_map(self, stage: int) -> dict:
        if stage not in self._falt:
            if stage - 1 not in self.alts:
                raise ModelError(f"Alt sets for stage {stage - 1} not computed")
            vf = self.stages[stage - 1]
            self._falt[stage] = {v.id: falt(vf, v.id, self.alts[stage - 1], self.pomdp, cap=self.cap)
                                 for v in vf.vectors}
        return self._falt[stage]

    def alt_for(self, stage: int, sw: SwitchSet) -> AltSet:
        return alt(sw, self.falt_map(stage))

    def fix(self, stage: int, alt_sets: dict):
        self.alts[stage] = {i: (a.vectors if isinstance(a, AltSet) else a) for i, a in alt_sets.items()}
        for later in [s for s in self._falt if s > stage]:
            del self._falt[later]


def e_bound_finite(stages, assignment, tester: SwitchTester, restrict_region: bool = False,
                   cap: int = ALT_CAP) -> ErrorBound:
    """E bound at the top stage; per_stage lists max_α E(α) for each stage."""
    rec = AltRecursion(stages, tester, cap)
    names = tester.pomdp.var_names
    per_stage, per_alpha = [], {}
    for vf in rec.stages:
        k = vf.stage
        sws = _switch_sets(vf, assignment, tester, k)
        alts = {i: rec.alt_for(k, sw) for i, sw in sws.items()}
        rec.fix(k, alts)
        row = {}
        for v in vf.vectors:
            row[str(v.id)] = {
                "B": one_stage_bound(v, sws[v.id], vf),
                "E": alt_error(v.values, alts[v.id], vf, restrict_region),
                "scheme": sws[v.id].scheme.ordered(names),
                "switch_members": list(sws[v.id].members),
                "alt_size": len(alts[v.id]),
            }
        per_alpha[str(k)] = row
        per_stage.append(max(r["E"] for r in row.values()))
    return ErrorBound("E_finite", per_stage[-1], per_stage, per_alpha,
                      {"gamma": tester.pomdp.discount, "k": len(per_stage),
                       "restrict_region": restrict_region})


# ---------------------------------------------------------------------------
# infinite-horizon bounds

def retarget_map(vf: ValueFunction) -> dict:
    """Send each previous-iteration vector to its sup-norm nearest vector of ℵ*."""
    if vf.previous is None:
        raise ModelError("infinite-horizon value function lacks its previous iterate")
    out = {}
    for p in vf.previous.vectors:
        gaps = np.abs(vf.matrix - p.values[None, :]).max(axis=1)
        out[p.id] = vf.vectors[int(np.argmin(gaps))].id
    return out


def u_bound_infinite_for_assignment(vf: ValueFunction, assignment, tester: SwitchTester) -> ErrorBound:
    names = tester.pomdp.var_names
    per_alpha = {}
    for v in vf.vectors:
        sw = tester.switch_set(vf, v.id, assignment.scheme(INFINITE, v.id))
        per_alpha[str(v.id)] = {"B": one_stage_bound(v, sw, vf), "scheme": sw.scheme.ordered(names),
                                "switch_members": list(sw.members)}
    b_star = max(r["B"] for r in per_alpha.values())
    out = u_bound_infinite(b_star, tester.pomdp.discount)
    out.per_alpha = per_alpha
    return out


def e_bound_infinite(vf: ValueFunction, assignment, tester: SwitchTester, k: int = 3,
                     cap: int = ALT_CAP) -> ErrorBound:
    """E* = E^k + γ^k U*, with k backups of Alt sets seeded from ℵ*.

    Strategies of ℵ* point into the previous iterate; they are retargeted to
    the nearest ℵ* vector.  E^k compares each Alt set with the k-step backup
    of α's own plan, so singleton switch sets give E^k = 0.
    """
    gamma = tester.pomdp.discount
    if gamma >= 1.0:
        raise ModelError("undiscounted infinite bound undefined")
    if k < 0:
        raise ModelError("k must be ≥ 0")
    u = u_bound_infinite_for_assignment(vf, assignment, tester)
    ret = retarget_map(vf)
    sws = {v.id: tester.switch_set(vf, v.id, assignment.scheme(INFINITE, v.id)) for v in vf.vectors}
    alts = {v.id: v.values[None, :].copy() for v in vf.vectors}
    refs = {v.id: v.values[None, :].copy() for v in vf.vectors}
    for _ in range(k):
        fmap = {v.id: falt(vf, v.id, alts, tester.pomdp, ret.__getitem__, cap) for v in vf.vectors}
        refs = {v.id: falt(vf, v.id, refs, tester.pomdp, ret.__getitem__, cap) for v in vf.vectors}
        alts = {i: prune_anti_dominated(np.vstack([fmap[j] for j in sw.members]))
                for i, sw in sws.items()}
    e_k = max(alt_error(refs[i][0], alts[i]) for i in alts)
    value = e_k + gamma ** k * u.value
    per_alpha = {key: dict(row, E=alt_error(refs[int(key)][0], alts[int(key)]))
                 for key, row in u.per_alpha.items()}
    return ErrorBound("E_infinite", value, [e_k], per_alpha,
                      {"gamma": gamma, "k": k, "U_star": u.value})
