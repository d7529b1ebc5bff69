"""Factored POMDP models: variables, DBN actions, flat-state matrices, JSON I/O.

States are enumerated mixed-radix over the declared variable order with the
first variable most significant, so a joint belief reshaped (C order) to
``pomdp.dims`` has one axis per variable.  Every matrix and vector in the
package uses this ordering.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from typing import Mapping, Sequence

import jsonschema
import numpy as np

from .errors import CapacityError, ModelError, ModelFormatError

STATE_CAP = 2**20
ROW_TOL = 1e-6      # tolerance accepted when reading files
STRICT_TOL = 1e-9   # tolerance held by in-memory models

INFINITE = "infinite"


@dataclass(frozen=True)
class VariableSpec:
    name: str
    domain: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "domain", tuple(str(v) for v in self.domain))
        if len(self.domain) < 2:
            raise ModelError(f"variable {self.name!r} needs a domain of size >= 2")
        if len(set(self.domain)) != len(self.domain):
            raise ModelError(f"variable {self.name!r} has repeated domain values")

    @property
    def size(self) -> int:
        return len(self.domain)


@dataclass(frozen=True)
class CPT:
    """Conditional table; row r is indexed mixed-radix by the parent values."""

    parents: tuple[str, ...]
    table: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "parents", tuple(self.parents))
        object.__setattr__(
            self, "table", tuple(tuple(float(p) for p in row) for row in self.table)
        )

    def array(self) -> np.ndarray:
        return np.asarray(self.table, dtype=float)


@dataclass(frozen=True)
class RewardTerm:
    when: tuple[tuple[str, str], ...]
    value: float

    def __post_init__(self):
        when = self.when.items() if isinstance(self.when, Mapping) else self.when
        object.__setattr__(self, "when", tuple((str(k), str(v)) for k, v in when))
        object.__setattr__(self, "value", float(self.value))


@dataclass(frozen=True)
class ActionSpec:
    name: str
    transitions: Mapping[str, CPT]
    rewards: tuple[RewardTerm, ...] = ()
    observation: CPT | None = None
    stages: frozenset[int] | None = None

    def __post_init__(self):
        object.__setattr__(self, "transitions", dict(self.transitions))
        object.__setattr__(self, "rewards", tuple(self.rewards))
        if self.stages is not None:
            stages = frozenset(int(k) for k in self.stages)
            if any(k < 1 for k in stages):
                raise ModelError(f"action {self.name!r}: stages must be >= 1")
            object.__setattr__(self, "stages", stages)

    def available(self, stage) -> bool:
        """``stage`` is stages-to-go, or None for the infinite-horizon problem."""
        if self.stages is None:
            return True
        return stage is not None and stage in self.stages


@dataclass(frozen=True)
class FlatState:
    index: int
    assignment: tuple[str, ...]


@dataclass(frozen=True)
class FactoredPOMDP:
    variables: tuple[VariableSpec, ...]
    actions: tuple[ActionSpec, ...]
    observations: tuple[str, ...] = ("null",)
    discount: float = 1.0
    horizon: int | str = 1
    state_cap: int = field(default=STATE_CAP, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "variables", tuple(self.variables))
        object.__setattr__(self, "actions", tuple(self.actions))
        object.__setattr__(self, "observations", tuple(str(z) for z in self.observations))
        object.__setattr__(self, "discount", float(self.discount))
        self._validate()

    # -- structure -------------------------------------------------------
    @property
    def var_names(self) -> tuple[str, ...]:
        return tuple(v.name for v in self.variables)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(v.size for v in self.variables)

    @property
    def n_states(self) -> int:
        return math.prod(self.dims)

    @property
    def finite(self) -> bool:
        return self.horizon != INFINITE

    @cached_property
    def var_index(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.var_names)}

    def variable(self, name: str) -> VariableSpec:
        try:
            return self.variables[self.var_index[name]]
        except KeyError:
            raise ModelError(f"unknown variable {name!r}") from None

    def action(self, name: str) -> ActionSpec:
        for a in self.actions:
            if a.name == name:
                return a
        raise ModelError(f"unknown action {name!r}")

    def actions_at(self, stage) -> list[ActionSpec]:
        return [a for a in self.actions if a.available(stage)]

    # -- validation ------------------------------------------------------
    def _validate(self):
        if not self.variables:
            raise ModelError("model has no variables")
        names = self.var_names
        if len(set(names)) != len(names):
            raise ModelError("variable names must be unique")
        if not self.actions:
            raise ModelError("model has no actions")
        if len({a.name for a in self.actions}) != len(self.actions):
            raise ModelError("action names must be unique")
        if not self.observations or len(set(self.observations)) != len(self.observations):
            raise ModelError("observations must be a nonempty list of distinct symbols")
        if not 0.0 < self.discount <= 1.0:
            raise ModelError("discount must lie in (0, 1]")
        if self.horizon == INFINITE:
            if self.discount >= 1.0:
                raise ModelError("discount = 1 is only allowed for a finite horizon")
            if not self.actions_at(None):
                raise ModelError("no action is available at every stage")
        else:
            if not isinstance(self.horizon, (int, np.integer)) or self.horizon < 1:
                raise ModelError("horizon must be a positive integer or 'infinite'")
            for k in range(1, int(self.horizon) + 1):
                if not self.actions_at(k):
                    raise ModelError(f"no action available at stage {k}")
        index = {v.name: v for v in self.variables}
        for a in self.actions:
            for var, cpt in a.transitions.items():
                if var not in index:
                    raise ModelError(f"action {a.name!r}: unknown variable {var!r}")
                self._check_cpt(cpt, index, index[var].size, f"{a.name}.{var}")
            if a.observation is not None:
                self._check_cpt(a.observation, index, len(self.observations),
                                f"{a.name}.observation")
            for term in a.rewards:
                for var, val in term.when:
                    if var not in index or val not in index[var].domain:
                        raise ModelError(f"action {a.name!r}: bad reward condition {var}={val}")

    @staticmethod
    def _check_cpt(cpt, index, width, where):
        for p in cpt.parents:
            if p not in index:
                raise ModelError(f"{where}: unknown parent {p!r}")
        if len(set(cpt.parents)) != len(cpt.parents):
            raise ModelError(f"{where}: repeated parent")
        rows = math.prod(index[p].size for p in cpt.parents)
        arr = cpt.array()
        if arr.shape != (rows, width):
            raise ModelError(f"{where}: table shape {arr.shape}, expected {(rows, width)}")
        if np.any(arr < 0) or np.any(np.abs(arr.sum(axis=1) - 1.0) > STRICT_TOL):
            raise ModelError(f"{where}: unnormalized CPT")

    # -- flat views --------------------------------------------------------
    @cached_property
    def assignments(self) -> np.ndarray:
        """(|S|, n) integer array of value indices, row i = state i."""
        if self.n_states > self.state_cap:
            raise CapacityError(
                f"model too large: {self.n_states} states exceeds cap {self.state_cap}")
        grids = np.indices(self.dims).reshape(len(self.dims), -1)
        return grids.T.copy()

    def _rows(self, parents: Sequence[str]) -> np.ndarray:
        """Row index of a parent-assignment table for every flat state."""
        rows = np.zeros(self.n_states, dtype=np.int64)
        for p in parents:
            j = self.var_index[p]
            rows = rows * self.dims[j] + self.assignments[:, j]
        return rows

    def cpt_for(self, action: ActionSpec, var: str) -> CPT:
        cpt = action.transitions.get(var)
        if cpt is None:
            size = self.variable(var).size
            cpt = CPT((var,), tuple(tuple(float(i == j) for j in range(size)) for i in range(size)))
        return cpt

    @cached_property
    def _matrices(self) -> dict:
        return {}

    def _cached(self, key, build):
        store = self._matrices
        if key not in store:
            arr = build()
            arr.setflags(write=False)
            store[key] = arr
        return store[key]


def enumerate_states(pomdp: FactoredPOMDP, cap: int | None = None) -> list[FlatState]:
    limit = pomdp.state_cap if cap is None else cap
    if pomdp.n_states > limit:
        raise CapacityError(f"model too large: {pomdp.n_states} states exceeds cap {limit}")
    labels = [v.domain for v in pomdp.variables]
    return [
        FlatState(i, tuple(labels[j][k] for j, k in enumerate(row)))
        for i, row in enumerate(pomdp.assignments)
    ]


def _resolve(pomdp, action) -> ActionSpec:
    return pomdp.action(action) if isinstance(action, str) else action


def transition_matrix(pomdp: FactoredPOMDP, action, stage=None) -> np.ndarray:
    """|S| x |S| matrix of Pr(s, a, t).

    ``stage`` is only used for the availability check; CPTs do not vary by stage.
    Pass ``stage=None`` to skip the check.
    """
    a = _resolve(pomdp, action)
    if stage is not None and not a.available(stage):
        raise ModelError(f"action not available at stage: {a.name} @ {stage}")

    def build():
        T = np.ones((pomdp.n_states, pomdp.n_states))
        for j, name in enumerate(pomdp.var_names):
            cpt = pomdp.cpt_for(a, name)
            table = cpt.array()
            T *= table[pomdp._rows(cpt.parents)][:, pomdp.assignments[:, j]]
        return T

    return pomdp._cached(("T", a.name), build)


def observation_matrix(pomdp: FactoredPOMDP, action) -> np.ndarray:
    """|S| x |Z| matrix; row t is the observation distribution after landing in t."""
    a = _resolve(pomdp, action)

    def build():
        if a.observation is None:
            O = np.zeros((pomdp.n_states, len(pomdp.observations)))
            O[:, 0] = 1.0
            return O
        return a.observation.array()[pomdp._rows(a.observation.parents)].copy()

    return pomdp._cached(("O", a.name), build)


def reward_vector(pomdp: FactoredPOMDP, action) -> np.ndarray:
    a = _resolve(pomdp, action)

    def build():
        r = np.zeros(pomdp.n_states)
        for term in a.rewards:
            mask = np.ones(pomdp.n_states, dtype=bool)
            for var, val in term.when:
                j = pomdp.var_index[var]
                mask &= pomdp.assignments[:, j] == pomdp.variables[j].domain.index(val)
            r[mask] += term.value
        return r

    return pomdp._cached(("R", a.name), build)


# ---------------------------------------------------------------------------
# JSON document format

def _schema(name):
    return json.loads(resources.files("vdbelief.schemas").joinpath(name).read_text())


def _json_path(error) -> str:
    path = ""
    for part in error.absolute_path:
        path += f"[{part}]" if isinstance(part, int) else (f".{part}" if path else part)
    return path


def validate_document(doc, schema_name: str):
    """Raise :class:`ModelFormatError` if ``doc`` violates a shipped JSON schema."""
    validator = jsonschema.Draft202012Validator(_schema(schema_name))
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        raise ModelFormatError(errors[0].message, _json_path(errors[0]))


def _read_cpt(raw, path) -> CPT:
    table = []
    for r, row in enumerate(raw["table"]):
        total = float(sum(row))
        if abs(total - 1.0) > ROW_TOL or any(p < 0 for p in row):
            raise ModelFormatError("unnormalized CPT", f"{path}.table[{r}]")
        if abs(total - 1.0) > 1e-12:
            row = [p / total for p in row]
        table.append(row)
    return CPT(tuple(raw.get("parents", [])), table)


def model_from_dict(doc: dict) -> FactoredPOMDP:
    validate_document(doc, "model.schema.json")
    variables = [VariableSpec(v["name"], v["domain"]) for v in doc["variables"]]
    names = {v.name for v in variables}
    actions = []
    for i, raw in enumerate(doc["actions"]):
        path = f"actions[{i}]"
        transitions = {}
        for var, cpt in raw.get("transitions", {}).items():
            if var not in names:
                raise ModelFormatError(f"unknown variable {var!r}", f"{path}.transitions")
            transitions[var] = _read_cpt(cpt, f"{path}.transitions.{var}")
        obs = raw.get("observation")
        rewards = [RewardTerm(t["when"], t["value"]) for t in raw.get("rewards", [])]
        stages = raw.get("stages")
        actions.append(ActionSpec(
            name=raw["name"],
            transitions=transitions,
            rewards=tuple(rewards),
            observation=None if obs is None else _read_cpt(obs, f"{path}.observation"),
            stages=None if stages is None else frozenset(stages),
        ))
    try:
        pomdp = FactoredPOMDP(
            variables=tuple(variables),
            actions=tuple(actions),
            observations=tuple(doc["observations"]),
            discount=doc["discount"],
            horizon=doc["horizon"],
        )
    except ModelError as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(str(exc)) from exc
    # Canonical form spells out persistence for every variable.
    full = [
        ActionSpec(a.name, {v: pomdp.cpt_for(a, v) for v in pomdp.var_names},
                   a.rewards, a.observation, a.stages)
        for a in pomdp.actions
    ]
    return FactoredPOMDP(pomdp.variables, tuple(full), pomdp.observations,
                         pomdp.discount, pomdp.horizon)


def model_to_dict(pomdp: FactoredPOMDP) -> dict:
    actions = []
    for a in pomdp.actions:
        raw = {"name": a.name}
        if a.stages is not None:
            raw["stages"] = sorted(a.stages)
        raw["transitions"] = {
            v: {"parents": list(c.parents), "table": [list(r) for r in c.table]}
            for v in pomdp.var_names
            for c in [pomdp.cpt_for(a, v)]
        }
        if a.observation is not None:
            raw["observation"] = {
                "parents": list(a.observation.parents),
                "table": [list(r) for r in a.observation.table],
            }
        raw["rewards"] = [{"when": dict(t.when), "value": t.value} for t in a.rewards]
        actions.append(raw)
    return {
        "variables": [{"name": v.name, "domain": list(v.domain)} for v in pomdp.variables],
        "observations": list(pomdp.observations),
        "actions": actions,
        "discount": pomdp.discount,
        "horizon": pomdp.horizon if pomdp.finite else INFINITE,
    }


def parse_model(text: str) -> FactoredPOMDP:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"invalid JSON: {exc}") from exc
    return model_from_dict(doc)


def serialize_model(pomdp: FactoredPOMDP) -> str:
    return json.dumps(model_to_dict(pomdp), indent=2) + "\n"


def load_model(path) -> FactoredPOMDP:
    with open(path) as fh:
        return parse_model(fh.read())
