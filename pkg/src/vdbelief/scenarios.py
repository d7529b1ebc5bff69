"""Built-in models: the seven-stage factory line and seeded random regression models."""
from __future__ import annotations

import numpy as np

from .model import CPT, ActionSpec, FactoredPOMDP, RewardTerm, VariableSpec

BOOL = ("false", "true")
FACTORY_VARS = ("FM", "F1", "F2", "F3", "F4")

# (stages-to-go, part variable, Pr(fault | FM), Pr(fault | not FM))
_STAMPS = [(7, "F1", 0.8, 0.1), (6, "F2", 0.8, 0.1), (5, "F3", 0.1, 0.05), (4, "F4", 0.1, 0.05)]


def _stamp(stage, var, p_fm, p_ok):
    table = ((1 - p_ok, p_ok), (1 - p_fm, p_fm))  # rows: FM=false, FM=true
    return ActionSpec(f"Stamp P{var[1]}", {var: CPT(("FM",), table)}, stages={stage})


def factory_model(discount: float = 1.0) -> FactoredPOMDP:
    """Four parts stamped on machine M, then processed or rejected.

    No observations; one or two actions per stage; rewards only at the
    process/reject stages.
    """
    actions = [_stamp(*row) for row in _STAMPS]
    for stage, var in ((3, "F1"), (2, "F2")):
        part = var[1]
        actions.append(ActionSpec(f"Process P{part}", {},
                                  (RewardTerm({var: "false"}, 8.0),), stages={stage}))
        actions.append(ActionSpec(f"Reject P{part}", {}, (RewardTerm({}, 4.0),), stages={stage}))
    actions.append(ActionSpec("Process P3,P4", {}, (
        RewardTerm({"F3": "true", "F4": "true"}, -2000.0),
        RewardTerm({"F3": "false", "F4": "false"}, 16.0),
        RewardTerm({"F3": "true", "F4": "false"}, 8.0),
        RewardTerm({"F3": "false", "F4": "true"}, 8.0),
    ), stages={1}))
    actions.append(ActionSpec("Reject P3,P4", {}, (RewardTerm({}, 3.3),), stages={1}))
    full = [ActionSpec(a.name, {v: a.transitions.get(v) or _persist(v) for v in FACTORY_VARS},
                       a.rewards, None, a.stages) for a in actions]
    return FactoredPOMDP(
        variables=tuple(VariableSpec(v, BOOL) for v in FACTORY_VARS),
        actions=tuple(full),
        observations=("null",),
        discount=discount,
        horizon=7,
    )


def _persist(var, size=2):
    return CPT((var,), tuple(tuple(float(i == j) for j in range(size)) for i in range(size)))


def factory_prior(pomdp: FactoredPOMDP, p_fm: float = 0.5) -> np.ndarray:
    """Pr(FM) = p_fm, every part initially fault-free."""
    b = np.zeros(pomdp.dims)
    b[(0,) * len(pomdp.dims)] = 1.0 - p_fm
    b[(1,) + (0,) * (len(pomdp.dims) - 1)] = p_fm
    return b.ravel()


def random_model(seed: int, n_vars: int = 2, n_obs: int = 1, horizon: int = 2,
                 n_actions: int = 2, discount: float = 1.0) -> FactoredPOMDP:
    """Small binary-variable POMDP with cross-variable dynamics and pairwise rewards.

    Rewards include conjunction terms so that the value function depends on
    correlations, which is what makes projection matter.
    """
    rng = np.random.default_rng(seed)
    names = [chr(ord("A") + i) for i in range(n_vars)]
    observations = tuple(f"z{i}" for i in range(n_obs))
    actions = []
    for k in range(n_actions):
        transitions = {}
        for v in names:
            if rng.random() < 0.35:
                transitions[v] = _persist(v)
                continue
            n_par = int(rng.integers(1, min(2, n_vars) + 1))
            parents = tuple(sorted(rng.choice(names, size=n_par, replace=False),
                                   key=names.index))
            rows = []
            for _ in range(2 ** n_par):
                p = float(np.clip(rng.beta(0.6, 0.6), 0.02, 0.98))
                rows.append((1 - p, p))
            transitions[v] = CPT(parents, tuple(rows))
        observation = None
        if n_obs > 1:
            watched = (names[int(rng.integers(n_vars))],)
            acc = float(rng.uniform(0.7, 0.95))
            rows = []
            for val in range(2):
                row = np.full(n_obs, (1 - acc) / (n_obs - 1))
                row[val % n_obs] = acc
                rows.append(tuple(row))
            observation = CPT(watched, tuple(rows))
        rewards = []
        for _ in range(int(rng.integers(1, 4))):
            size = int(rng.integers(1, min(2, n_vars) + 1))
            vars_ = rng.choice(names, size=size, replace=False)
            when = {str(v): BOOL[int(rng.integers(2))] for v in vars_}
            rewards.append(RewardTerm(when, float(np.round(rng.normal(0, 4), 2))))
        rewards.append(RewardTerm({}, float(np.round(rng.normal(0, 1), 2))))
        actions.append(ActionSpec(f"a{k}", transitions, tuple(rewards), observation))
    return FactoredPOMDP(
        variables=tuple(VariableSpec(v, BOOL) for v in names),
        actions=tuple(actions),
        observations=observations,
        discount=discount,
        horizon=horizon,
    )
