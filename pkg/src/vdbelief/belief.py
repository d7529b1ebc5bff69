"""Joint beliefs, projection onto marginals, and reconstruction.

Beliefs are plain 1-D float arrays over the flat state space.  A projected
belief (:class:`FactoredBelief`) keeps one table per marginal, each table's
axes in the model's declared variable order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import BeliefError, ModelFormatError
from .model import FactoredPOMDP, observation_matrix, transition_matrix

BELIEF_TOL = 1e-9


@dataclass(frozen=True)
class ProjectionScheme:
    """A covering set of variable subsets, kept in canonical (antichain) form."""

    marginals: frozenset[frozenset[str]]

    def __post_init__(self):
        sets = {frozenset(m) for m in self.marginals}
        if not sets or any(not m for m in sets):
            raise BeliefError("a projection scheme needs nonempty marginals")
        maximal = frozenset(m for m in sets if not any(m < o for o in sets))
        object.__setattr__(self, "marginals", maximal)

    @classmethod
    def of(cls, marginals: Iterable[Iterable[str]]) -> "ProjectionScheme":
        return cls(frozenset(frozenset(m) for m in marginals))

    @classmethod
    def singletons(cls, names: Iterable[str]) -> "ProjectionScheme":
        return cls.of([n] for n in names)

    @classmethod
    def full(cls, names: Iterable[str]) -> "ProjectionScheme":
        return cls.of([list(names)])

    @property
    def variables(self) -> frozenset[str]:
        return frozenset().union(*self.marginals)

    def covers(self, names: Iterable[str]) -> bool:
        return self.variables == frozenset(names)

    def constraint_subsets(self) -> frozenset[frozenset[str]]:
        """Every nonempty subset of every marginal (the LP's equality families)."""
        out = set()
        for m in self.marginals:
            items = sorted(m)
            for mask in range(1, 2 ** len(items)):
                out.add(frozenset(v for i, v in enumerate(items) if mask >> i & 1))
        return frozenset(out)

    def ordered(self, names: Sequence[str]) -> list[list[str]]:
        """Marginals as lists in declared order, sorted for stable output."""
        pos = {n: i for i, n in enumerate(names)}
        rows = [sorted(m, key=pos.__getitem__) for m in self.marginals]
        return sorted(rows, key=lambda r: (len(r) == 1, [pos[v] for v in r]))

    def label(self, names: Sequence[str]) -> str:
        return "".join("{" + ",".join(m) + "}" for m in self.ordered(names))


def running_intersection_order(scheme: ProjectionScheme) -> list[frozenset[str]] | None:
    """Order the marginals so each one's overlap with its predecessors lies
    inside a single predecessor; None if no such order exists."""
    edges = sorted(scheme.marginals, key=lambda m: (-len(m), sorted(m)))
    n = len(edges)
    dead: set[frozenset[int]] = set()

    def extend(order: list[int]) -> list[int] | None:
        if len(order) == n:
            return order
        used = frozenset(order)
        if used in dead:
            return None
        union = frozenset().union(*(edges[i] for i in order))
        for j in range(n):
            if j in used:
                continue
            sep = edges[j] & union
            if not order or any(sep <= edges[i] for i in order):
                found = extend(order + [j])
                if found is not None:
                    return found
        dead.add(used)
        return None

    found = extend([])
    return None if found is None else [edges[i] for i in found]


# ---------------------------------------------------------------------------

def check_belief(b, n_states: int | None = None) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    if b.ndim != 1 or (n_states is not None and b.shape[0] != n_states):
        raise BeliefError(f"belief must be a vector of length {n_states}")
    if np.any(b < -BELIEF_TOL) or abs(b.sum() - 1.0) > BELIEF_TOL:
        raise BeliefError("belief must be nonnegative and sum to 1")
    return b


def observation_probabilities(b, pomdp: FactoredPOMDP, action) -> np.ndarray:
    """Pr(z | b, a) for every observation symbol."""
    return (np.asarray(b) @ transition_matrix(pomdp, action)) @ observation_matrix(pomdp, action)


def exact_update(b, pomdp: FactoredPOMDP, action, stage=None, observation=None) -> np.ndarray:
    """Bayes filter: b'(t) ∝ Pr(z | t, a) · Σ_s b(s) Pr(s, a, t)."""
    T = transition_matrix(pomdp, action, stage)
    O = observation_matrix(pomdp, action)
    z = 0 if observation is None else (
        observation if isinstance(observation, (int, np.integer))
        else pomdp.observations.index(observation))
    unnorm = (np.asarray(b) @ T) * O[:, z]
    total = unnorm.sum()
    if total <= 0.0:
        raise BeliefError(f"impossible observation {pomdp.observations[z]!r}")
    return unnorm / total


def _axes(pomdp_names: Sequence[str], subset: Iterable[str]) -> tuple[int, ...]:
    pos = {n: i for i, n in enumerate(pomdp_names)}
    return tuple(sorted(pos[v] for v in subset))


@dataclass(frozen=True, eq=False)
class FactoredBelief:
    """Marginal tables of a belief under a projection scheme.

    ``tables`` maps each marginal (frozenset of names) to an array whose axes
    follow the declared variable order.
    """

    scheme: ProjectionScheme
    tables: dict
    names: tuple[str, ...]
    dims: tuple[int, ...]

    def __post_init__(self):
        if set(self.tables) != set(self.scheme.marginals):
            raise BeliefError("tables do not match the scheme's marginals")
        for m, t in self.tables.items():
            expect = tuple(self.dims[i] for i in _axes(self.names, m))
            if t.shape != expect:
                raise BeliefError(f"table for {sorted(m)} has shape {t.shape}, expected {expect}")
            if np.any(t < -BELIEF_TOL) or abs(t.sum() - 1.0) > BELIEF_TOL:
                raise BeliefError(f"table for {sorted(m)} is not a distribution")
        marg = list(self.scheme.marginals)
        for i, a in enumerate(marg):
            for c in marg[i + 1:]:
                shared = a & c
                if shared and not np.allclose(
                        self.sub_marginal(a, shared), self.sub_marginal(c, shared),
                        atol=BELIEF_TOL, rtol=0):
                    raise BeliefError(
                        f"marginals {sorted(a)} and {sorted(c)} disagree on {sorted(shared)}")

    def sub_marginal(self, marginal, subset) -> np.ndarray:
        axes = _axes(self.names, marginal)
        keep = _axes(self.names, subset)
        drop = tuple(k for k, ax in enumerate(axes) if ax not in keep)
        return self.tables[frozenset(marginal)].sum(axis=drop)

    def to_dict(self) -> dict:
        return {
            "scheme": self.scheme.ordered(self.names),
            "tables": {",".join(m): self.tables[frozenset(m)].ravel().tolist()
                       for m in self.scheme.ordered(self.names)},
        }


def marginal(b, pomdp: FactoredPOMDP, subset: Iterable[str]) -> np.ndarray:
    keep = _axes(pomdp.var_names, subset)
    drop = tuple(i for i in range(len(pomdp.dims)) if i not in keep)
    return np.asarray(b).reshape(pomdp.dims).sum(axis=drop)


def project(b, scheme: ProjectionScheme, pomdp: FactoredPOMDP) -> FactoredBelief:
    if not scheme.covers(pomdp.var_names):
        raise BeliefError("projection scheme must cover every variable exactly")
    tables = {m: marginal(b, pomdp, m) for m in scheme.marginals}
    return FactoredBelief(scheme, tables, pomdp.var_names, pomdp.dims)


def _expand(table, axes, dims):
    shape = [1] * len(dims)
    for ax in axes:
        shape[ax] = dims[ax]
    return table.reshape(shape)


def reconstruct(f: FactoredBelief) -> np.ndarray:
    """Joint belief from marginal tables along a junction-chain ordering.

    Each marginal contributes P(M_i) / P(M_i ∩ earlier), with 0/0 taken as 0.
    """
    order = running_intersection_order(f.scheme)
    if order is None:
        raise BeliefError("scheme not practical")
    joint = np.ones(f.dims)
    seen: frozenset[str] = frozenset()
    for m in order:
        axes = _axes(f.names, m)
        factor = f.tables[m]
        sep = m & seen
        if sep:
            denom = f.sub_marginal(m, sep)
            sep_axes = _axes(f.names, sep)
            denom = _expand(denom, [axes.index(a) for a in sep_axes],
                            [f.dims[a] for a in axes])
            with np.errstate(divide="ignore", invalid="ignore"):
                factor = np.where(denom > 0, factor / np.where(denom > 0, denom, 1.0), 0.0)
        joint = joint * _expand(factor, axes, f.dims)
        seen |= m
    return joint.ravel()


def project_joint(b, scheme: ProjectionScheme, pomdp: FactoredPOMDP) -> np.ndarray:
    """S(b): project onto the scheme's marginals and rebuild the joint."""
    if len(scheme.marginals) == 1 and scheme.covers(pomdp.var_names):
        return np.asarray(b, dtype=float)
    return reconstruct(project(b, scheme, pomdp))


# ---------------------------------------------------------------------------
# distances

def kl(b, b_hat, base: float = math.e) -> float:
    b = np.asarray(b, dtype=float)
    b_hat = np.asarray(b_hat, dtype=float)
    support = b > 0
    if np.any(b_hat[support] <= 0):
        return math.inf
    value = float(np.sum(b[support] * (np.log(b[support]) - np.log(b_hat[support]))))
    return max(value, 0.0) / math.log(base)


def l1(b, b_hat) -> float:
    return float(np.abs(np.asarray(b) - np.asarray(b_hat)).sum())


def l2(b, b_hat) -> float:
    return float(np.sqrt(np.sum((np.asarray(b) - np.asarray(b_hat)) ** 2)))


DISTANCES = {"kl": kl, "l1": l1, "l2": l2}


# ---------------------------------------------------------------------------
# JSON

def belief_to_dict(b) -> dict:
    if isinstance(b, FactoredBelief):
        return b.to_dict()
    return {"joint": np.asarray(b, dtype=float).tolist()}


def belief_from_dict(doc: dict, pomdp: FactoredPOMDP):
    """Inverse of :func:`belief_to_dict`; returns an array or a FactoredBelief."""
    if "joint" in doc:
        try:
            return check_belief(doc["joint"], pomdp.n_states)
        except BeliefError as exc:
            raise ModelFormatError(str(exc), "joint") from exc
    try:
        scheme = ProjectionScheme.of(doc["scheme"])
        tables = {}
        for key, flat in doc["tables"].items():
            m = frozenset(key.split(","))
            shape = tuple(pomdp.dims[i] for i in _axes(pomdp.var_names, m))
            tables[m] = np.asarray(flat, dtype=float).reshape(shape)
        return FactoredBelief(scheme, tables, pomdp.var_names, pomdp.dims)
    except (KeyError, ValueError) as exc:
        raise ModelFormatError(f"malformed factored belief: {exc}") from exc
