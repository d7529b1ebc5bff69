"""α-vector dynamic programming (Monahan enumeration with LP pruning)."""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import lp
from .errors import CapacityError, ModelError, ModelFormatError
from .model import FactoredPOMDP, observation_matrix, reward_vector, transition_matrix

log = logging.getLogger(__name__)

BACKUP_CAP = 10**6
INFINITE = "infinite"
_TIE_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class AlphaVector:
    """Value of a conditional plan: first ``action``, then ``strategy[z]``.

    ``strategy`` lists, per observation (model order), the id of the
    continuation vector in the previous stage's set.
    """

    id: int
    values: np.ndarray = field(repr=False)
    action: str
    strategy: tuple[int, ...] = ()

    def strategy_map(self, observations) -> dict[str, int]:
        return dict(zip(observations, self.strategy))


@dataclass(frozen=True, eq=False)
class ValueFunction:
    stage: int | str
    vectors: tuple[AlphaVector, ...]
    previous: "ValueFunction | None" = field(default=None, repr=False)

    def __post_init__(self):
        if not self.vectors:
            raise ModelError("a value function needs at least one vector")
        ids = [v.id for v in self.vectors]
        if len(set(ids)) != len(ids):
            raise ModelError("duplicate α-vector ids")

    @cached_property
    def matrix(self) -> np.ndarray:
        m = np.array([v.values for v in self.vectors], dtype=float)
        m.setflags(write=False)
        return m

    @cached_property
    def _pos(self) -> dict[int, int]:
        return {v.id: i for i, v in enumerate(self.vectors)}

    def by_id(self, vid: int) -> AlphaVector:
        return self.vectors[self._pos[vid]]

    def position(self, vid: int) -> int:
        return self._pos[vid]

    @property
    def ids(self) -> list[int]:
        return [v.id for v in self.vectors]

    def __len__(self):
        return len(self.vectors)


def zero_function(n_states: int) -> ValueFunction:
    return ValueFunction(0, (AlphaVector(0, np.zeros(n_states), "", ()),))


# ---------------------------------------------------------------------------
# backups

def backup_vector(pomdp: FactoredPOMDP, action, continuations) -> np.ndarray:
    """R(·,a) + γ Σ_t Pr(·,a,t) Σ_z Pr(z|t,a) v_z(t) for continuation vectors v_z."""
    T = transition_matrix(pomdp, action)
    O = observation_matrix(pomdp, action)
    future = sum(O[:, z] * np.asarray(v) for z, v in enumerate(continuations))
    return reward_vector(pomdp, action) + pomdp.discount * (T @ future)


def projected_continuations(pomdp: FactoredPOMDP, action, prev: np.ndarray) -> np.ndarray:
    """G[z, :, j] = T (O_z ∘ prev_j): the discount-free future term per choice."""
    T = transition_matrix(pomdp, action)
    O = observation_matrix(pomdp, action)
    return np.stack([T @ (O[:, z][:, None] * prev.T) for z in range(O.shape[1])])


def dp_backup(prev: ValueFunction, pomdp: FactoredPOMDP, stage, cap: int = BACKUP_CAP):
    """Every ⟨a; σ⟩ plan vector for the stage after ``prev``.

    Returns a list of (values, action name, strategy tuple) in construction
    order: actions in model order, strategies lexicographic.
    """
    actions = pomdp.actions_at(stage)
    if not actions:
        raise ModelError(f"no action available at stage {stage}")
    n_z = len(pomdp.observations)
    total = len(actions) * len(prev) ** n_z
    if total > cap:
        raise CapacityError(f"backup too large: {total} vectors exceeds cap {cap}")
    out = []
    P = prev.matrix
    for a in actions:
        G = projected_continuations(pomdp, a, P)
        R = reward_vector(pomdp, a)
        for sigma in itertools.product(range(len(prev)), repeat=n_z):
            future = sum(G[z][:, j] for z, j in enumerate(sigma))
            out.append((R + pomdp.discount * future, a.name,
                        tuple(prev.vectors[j].id for j in sigma)))
    return out


# ---------------------------------------------------------------------------
# pruning

def _pointwise_survivors(V: np.ndarray, sign: float) -> list[int]:
    """Drop vectors pointwise beaten by another; duplicates keep the first."""
    W = sign * V
    keep = []
    for i in range(W.shape[0]):
        ge = np.all(W >= W[i] - _TIE_TOL, axis=1)
        gt = np.any(W > W[i] + _TIE_TOL, axis=1)
        ge[i] = False
        beaten = ge & (gt | (np.arange(W.shape[0]) < i))
        if not beaten.any():
            keep.append(i)
    return keep


def _lp_filter(V: np.ndarray, candidates: list[int], test) -> list[int]:
    pool = list(candidates)
    for i in candidates:
        others = [j for j in pool if j != i]
        if others and test(V[i], V[others]).dominated:
            pool.remove(i)
    return pool


def prune_indices(V, anti: bool = False) -> list[int]:
    """Indices of the vectors on the upper (or, with ``anti``, lower) surface."""
    V = np.asarray(V, dtype=float)
    if V.shape[0] <= 1:
        return list(range(V.shape[0]))
    survivors = _pointwise_survivors(V, -1.0 if anti else 1.0)
    test = lp.anti_dominance_test if anti else lp.dominance_test
    return _lp_filter(V, survivors, test)


def prune_dominated(vectors, stage=None) -> ValueFunction:
    """Keep only vectors maximal at some belief; ids renumbered in input order."""
    items = [(v.values, v.action, v.strategy) if isinstance(v, AlphaVector) else v
             for v in vectors]
    if not items:
        raise ModelError("nothing to prune")
    V = np.array([it[0] for it in items], dtype=float)
    keep = prune_indices(V)
    kept = tuple(AlphaVector(k, V[i].copy(), items[i][1], tuple(items[i][2]))
                 for k, i in enumerate(keep))
    for v in kept:
        v.values.setflags(write=False)
    return ValueFunction(stage, kept)


def prune_anti_dominated(vectors) -> np.ndarray:
    """Lower-surface counterpart of :func:`prune_dominated`, on raw vectors."""
    V = np.atleast_2d(np.asarray(vectors, dtype=float))
    return V[prune_indices(V, anti=True)]


# ---------------------------------------------------------------------------
# solving

def solve_finite(pomdp: FactoredPOMDP, horizon: int | None = None,
                 cap: int = BACKUP_CAP) -> list[ValueFunction]:
    """[ℵ^1, ..., ℵ^k]; each stage's strategies point into the previous stage."""
    k = pomdp.horizon if horizon is None else horizon
    if k == INFINITE:
        raise ModelError("solve_finite needs a finite horizon")
    if int(k) < 1:
        raise ModelError("horizon must be ≥ 1")
    prev = zero_function(pomdp.n_states)
    stages = []
    for stage in range(1, int(k) + 1):
        vf = prune_dominated(dp_backup(prev, pomdp, stage, cap), stage)
        vf = ValueFunction(stage, vf.vectors, prev)
        log.debug("stage %d: %d vectors", stage, len(vf))
        stages.append(vf)
        prev = vf
    return stages


def sup_difference(a: ValueFunction, b: ValueFunction) -> float:
    """sup_b |V_a(b) - V_b(b)| over the belief simplex, via margin LPs."""
    worst = 0.0
    for X, Y in ((a.matrix, b.matrix), (b.matrix, a.matrix)):
        for row in X:
            worst = max(worst, lp.dominance_test(row, Y, eps=0.0).margin)
    return worst


def solve_infinite(pomdp: FactoredPOMDP, epsilon: float = 1e-3,
                   max_iterations: int = 10**4, cap: int = BACKUP_CAP) -> ValueFunction:
    """Back up until γ·δ/(1-γ) ≤ ε, δ the sup-norm change between iterations."""
    gamma = pomdp.discount
    if gamma >= 1.0:
        raise ModelError("solve_infinite needs discount < 1")
    prev = zero_function(pomdp.n_states)
    for it in range(1, max_iterations + 1):
        vf = prune_dominated(dp_backup(prev, pomdp, None, cap), INFINITE)
        vf = ValueFunction(INFINITE, vf.vectors, prev)
        delta = sup_difference(vf, prev)
        if gamma * delta / (1.0 - gamma) <= epsilon:
            log.debug("converged after %d iterations (delta=%g)", it, delta)
            return vf
        prev = vf
    raise CapacityError(f"value iteration did not converge in {max_iterations} iterations")


def value_at(b, vf: ValueFunction) -> tuple[float, AlphaVector]:
    """max_α b·α, ties going to the lowest id."""
    vals = vf.matrix @ np.asarray(b, dtype=float)
    best = vals.max()
    tied = [i for i in np.nonzero(vals >= best - _TIE_TOL)[0]]
    i = min(tied, key=lambda k: vf.vectors[k].id)
    return float(vals[i]), vf.vectors[i]


def action_value(b, pomdp: FactoredPOMDP, action, prev: ValueFunction) -> float:
    """Q(b, a) = b·R_a + γ Σ_z Pr(z|b,a) V_prev(b_az), computed exactly."""
    a = pomdp.action(action) if isinstance(action, str) else action
    b = np.asarray(b, dtype=float)
    T = transition_matrix(pomdp, a)
    O = observation_matrix(pomdp, a)
    pred = b @ T
    total = float(b @ reward_vector(pomdp, a))
    for z in range(O.shape[1]):
        joint = pred * O[:, z]
        pz = joint.sum()
        if pz > 0:
            total += pomdp.discount * pz * value_at(joint / pz, prev)[0]
    return total


# ---------------------------------------------------------------------------
# JSON

def _vf_to_dict(vf: ValueFunction, observations) -> dict:
    return {
        "stage": vf.stage,
        "vectors": [
            {"id": v.id, "action": v.action, "values": v.values.tolist(),
             "strategy": v.strategy_map(observations)}
            for v in sorted(vf.vectors, key=lambda v: v.id)
        ],
    }


def value_functions_to_dict(stages, pomdp: FactoredPOMDP) -> dict:
    if isinstance(stages, ValueFunction):
        doc = {"discount": pomdp.discount, "infinite": _vf_to_dict(stages, pomdp.observations)}
        if stages.previous is not None:
            doc["previous"] = _vf_to_dict(stages.previous, pomdp.observations)
        return doc
    return {"discount": pomdp.discount,
            "stages": [_vf_to_dict(vf, pomdp.observations) for vf in stages]}


def _vf_from_dict(raw, observations, previous) -> ValueFunction:
    vectors = []
    for v in raw["vectors"]:
        strategy = tuple(int(v["strategy"][z]) for z in observations) if v["strategy"] else ()
        values = np.asarray(v["values"], dtype=float)
        values.setflags(write=False)
        vectors.append(AlphaVector(int(v["id"]), values, v["action"], strategy))
    return ValueFunction(raw["stage"], tuple(vectors), previous)


def value_functions_from_dict(doc: dict, pomdp: FactoredPOMDP):
    """Inverse of :func:`value_functions_to_dict`."""
    try:
        obs = pomdp.observations
        if "infinite" in doc:
            prev = _vf_from_dict(doc["previous"], obs, None) if "previous" in doc else None
            return _vf_from_dict(doc["infinite"], obs, prev)
        prev = zero_function(pomdp.n_states)
        out = []
        for raw in doc["stages"]:
            vf = _vf_from_dict(raw, obs, prev)
            out.append(vf)
            prev = vf
        return out
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed value function file: {exc}") from exc
