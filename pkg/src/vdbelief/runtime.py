"""Policy execution under exact or projected monitoring, and the resulting loss."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .belief import DISTANCES, ProjectionScheme, check_belief, kl, project_joint
from .errors import CapacityError, ModelError
from .lattice import LatticeNode, SchemeAssignment, enumerate_lattice, is_practical
from .model import FactoredPOMDP, observation_matrix, reward_vector, transition_matrix
from .solver import ValueFunction, action_value, value_at, zero_function

ENUMERATION_HORIZON = 12
SUBOPTIMAL_TOL = 1e-9


@dataclass
class ExecutionConfig:
    prior: np.ndarray
    monitoring: str = "projected"  # exact | projected
    assignment: SchemeAssignment | None = None
    horizon: int | None = None
    rng_seed: int = 0

    def __post_init__(self):
        if self.monitoring not in ("exact", "projected"):
            raise ModelError(f"unknown monitoring mode {self.monitoring!r}")
        if self.monitoring == "projected" and self.assignment is None:
            raise ModelError("projected monitoring needs a scheme assignment")


@dataclass
class ExecutionReport:
    realized_expected_value: float
    optimal_expected_value: float
    chosen: dict = field(default_factory=dict)  # stage -> sorted α ids chosen on reachable branches
    suboptimal_action_count: int = 0
    suboptimal_probability: float = 0.0
    prior_hash: str = ""
    trials: int | None = None
    standard_error: float | None = None

    @property
    def loss(self) -> float:
        return self.optimal_expected_value - self.realized_expected_value

    def to_dict(self) -> dict:
        out = {
            "realized_expected_value": self.realized_expected_value,
            "optimal_expected_value": self.optimal_expected_value,
            "loss": self.loss,
            "chosen": {str(k): v for k, v in sorted(self.chosen.items(), reverse=True)},
            "suboptimal_action_count": self.suboptimal_action_count,
            "suboptimal_probability": self.suboptimal_probability,
            "prior_hash": self.prior_hash,
        }
        if self.trials is not None:
            out["trials"] = self.trials
            out["standard_error"] = self.standard_error
        return out

    def csv_row(self) -> str:
        return f"{self.prior_hash},{self.loss:.12g},{self.suboptimal_action_count}"


CSV_HEADER = "prior_hash,loss,suboptimal_count"


def prior_hash(b) -> str:
    data = np.round(np.asarray(b, dtype=float), 12).tobytes()
    return hashlib.sha1(data).hexdigest()[:12]


class _Agent:
    """Shared per-step logic: which scheme applies and which α is chosen."""

    def __init__(self, pomdp, stages, config):
        self.pomdp = pomdp
        self.stages = list(stages)
        if any(isinstance(vf.stage, str) for vf in self.stages):
            raise ModelError("execution needs finite-horizon value functions")
        self.K = config.horizon or len(self.stages)
        if self.K > len(self.stages):
            raise ModelError(f"horizon {self.K} exceeds the {len(self.stages)} solved stages")
        self.config = config
        self.full = ProjectionScheme.full(pomdp.var_names)
        self._T, self._O, self._R = {}, {}, {}
        for vf in self.stages[: self.K]:
            for v in vf.vectors:
                a = pomdp.action(v.action)
                if a.name not in self._T:
                    self._T[a.name] = transition_matrix(pomdp, a)
                    self._O[a.name] = observation_matrix(pomdp, a)
                    self._R[a.name] = reward_vector(pomdp, a)

    def vf(self, k: int) -> ValueFunction:
        return self.stages[k - 1] if k >= 1 else zero_function(self.pomdp.n_states)

    def scheme(self, k, implemented_id) -> ProjectionScheme:
        if self.config.monitoring == "exact":
            return self.full
        return self.config.assignment.scheme(k, implemented_id)

    def choose(self, k, agent_belief, implemented_id):
        projected = project_joint(agent_belief, self.scheme(k, implemented_id), self.pomdp)
        return projected, value_at(projected, self.vf(k))[1]

    def suboptimal(self, k, b_true, action) -> bool:
        q = action_value(b_true, self.pomdp, action, self.vf(k - 1))
        return q < value_at(b_true, self.vf(k))[0] - SUBOPTIMAL_TOL


def execute_exact_loss(pomdp: FactoredPOMDP, stages, config: ExecutionConfig) -> ExecutionReport:
    """Expected value of the approximately monitored policy, by enumerating
    every observation branch.

    The exact prior picks the initially implemented vector; at each stage the
    agent projects its belief with the scheme of the implemented vector,
    picks the best vector at the projected belief, acts, and hands over to
    that vector's continuation for the observation received.  Rewards are
    weighted by the true belief and true observation probabilities.
    """
    agent = _Agent(pomdp, stages, config)
    K = agent.K
    if K > ENUMERATION_HORIZON and len(pomdp.observations) > 1:
        raise CapacityError(f"enumeration guard: horizon {K} with {len(pomdp.observations)} observations")
    prior = check_belief(config.prior, pomdp.n_states)
    optimal, start = value_at(prior, agent.vf(K))
    gamma = pomdp.discount
    chosen: dict = {k: set() for k in range(1, K + 1)}
    stats = {"count": 0, "mass": 0.0}

    def step(k, b_true, b_agent, implemented, weight, flagged):
        if k == 0:
            return 0.0
        projected, alpha = agent.choose(k, b_agent, implemented)
        chosen[k].add(alpha.id)
        name = alpha.action
        bad = agent.suboptimal(k, b_true, name)
        if bad:
            stats["count"] += 1
            if not flagged:
                stats["mass"] += weight
        total = float(b_true @ agent._R[name])
        if k == 1:
            return total
        pred_true = b_true @ agent._T[name]
        pred_agent = projected @ agent._T[name]
        O = agent._O[name]
        future = 0.0
        for z in range(O.shape[1]):
            joint = pred_true * O[:, z]
            pz = joint.sum()
            if pz <= 0.0:
                continue
            agent_joint = pred_agent * O[:, z]
            if agent_joint.sum() <= 0.0:
                raise ModelError("agent belief rules out an observation the system can produce")
            future += pz * step(k - 1, joint / pz, agent_joint / agent_joint.sum(),
                                alpha.strategy[z], weight * pz, flagged or bad)
        return total + gamma * future

    realized = step(K, prior, prior, start.id, 1.0, False)
    return ExecutionReport(realized, optimal, {k: sorted(v) for k, v in chosen.items()},
                           stats["count"], stats["mass"], prior_hash(prior))


def monte_carlo_loss(pomdp: FactoredPOMDP, stages, config: ExecutionConfig, trials: int) -> ExecutionReport:
    """Sampled counterpart of :func:`execute_exact_loss`.

    Each trial draws its own generator from ``config.rng_seed``, so results
    are reproducible and independent of trial order.
    """
    if trials < 1:
        raise ModelError("trials must be ≥ 1")
    agent = _Agent(pomdp, stages, config)
    K = agent.K
    prior = check_belief(config.prior, pomdp.n_states)
    optimal, start = value_at(prior, agent.vf(K))
    gamma = pomdp.discount
    returns = np.empty(trials)
    chosen: dict = {k: set() for k in range(1, K + 1)}
    streams = np.random.SeedSequence(config.rng_seed).spawn(trials)
    for t, seq in enumerate(streams):
        rng = np.random.default_rng(seq)
        s = int(rng.choice(pomdp.n_states, p=prior))
        b_agent = prior
        implemented = start.id
        total = 0.0
        for k in range(K, 0, -1):
            projected, alpha = agent.choose(k, b_agent, implemented)
            chosen[k].add(alpha.id)
            name = alpha.action
            total += gamma ** (K - k) * agent._R[name][s]
            if k == 1:
                break
            s = int(rng.choice(pomdp.n_states, p=agent._T[name][s]))
            z = int(rng.choice(agent._O[name].shape[1], p=agent._O[name][s]))
            joint = (projected @ agent._T[name]) * agent._O[name][:, z]
            b_agent = joint / joint.sum()
            implemented = alpha.strategy[z]
        returns[t] = total
    se = float(returns.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    return ExecutionReport(float(returns.mean()), optimal, {k: sorted(v) for k, v in chosen.items()},
                           prior_hash=prior_hash(prior), trials=trials, standard_error=se)


# ---------------------------------------------------------------------------
# distance-directed baseline

def scheme_distance(b, scheme: ProjectionScheme, pomdp: FactoredPOMDP, measure: str,
                    kl_base: float = math.e) -> float:
    approx = project_joint(b, scheme, pomdp)
    if measure == "kl":
        return kl(b, approx, kl_base)
    if measure not in DISTANCES:
        raise ModelError(f"unknown distance {measure!r}")
    return DISTANCES[measure](b, approx)


def predicted_beliefs(pomdp: FactoredPOMDP, stages, prior) -> dict:
    """Belief entering each stage along the optimal policy, observations
    marginalized out (for a single observation symbol this is the exact path)."""
    b = check_belief(prior, pomdp.n_states)
    out = {}
    K = len(stages)
    for k in range(K, 0, -1):
        out[k] = b
        alpha = value_at(b, stages[k - 1])[1]
        b = b @ transition_matrix(pomdp, alpha.action)
    return out


def distance_directed_assignment(pomdp: FactoredPOMDP, stages, prior, measure: str = "kl",
                                 budget: int | None = None, kl_base: float = math.e,
                                 candidates: Sequence[LatticeNode] | None = None) -> SchemeAssignment:
    """Per stage, the practical scheme within ``budget`` constraints whose
    projection of the predicted belief is closest under ``measure``.

    Ties go to fewer constraints; everything else equal, the earlier node in
    lattice order wins.
    """
    names = pomdp.var_names
    nodes = list(candidates) if candidates is not None else enumerate_lattice(names, budget)
    nodes = [n for n in nodes if is_practical(n)]
    beliefs = predicted_beliefs(pomdp, stages, prior)
    picks = {}
    for k, b in beliefs.items():
        scored = [(scheme_distance(b, n.scheme, pomdp, measure, kl_base), n.constraint_count, i)
                  for i, n in enumerate(nodes)]
        picks[k] = nodes[min(scored)[2]].scheme
    return SchemeAssignment.uniform(stages, lambda k: picks[k])
