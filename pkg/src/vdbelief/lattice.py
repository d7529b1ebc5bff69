"""Lattice of projection schemes and the greedy per-vector scheme search."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .belief import ProjectionScheme, running_intersection_order
from .bounds import (AltRecursion, ErrorBound, SwitchTester, alt_error, contributed_error,
                     e_bound_finite, e_bound_infinite, one_stage_bound, u_bound_finite,
                     u_bound_infinite_for_assignment, u_bound_for_assignment)
from .errors import ModelError, ModelFormatError
from .solver import INFINITE, ValueFunction

log = logging.getLogger(__name__)

BOUND_KINDS = ("U_finite", "U_infinite", "E_finite", "E_infinite")


def _closure(marginals) -> frozenset:
    out = set()
    for m in marginals:
        items = sorted(m)
        for mask in range(1, 2 ** len(items)):
            out.add(frozenset(v for i, v in enumerate(items) if mask >> i & 1))
    return frozenset(out)


@dataclass(frozen=True)
class LatticeNode:
    """A downward-closed family of constrained variable subsets."""

    constraints: frozenset

    @classmethod
    def from_scheme(cls, scheme: ProjectionScheme) -> "LatticeNode":
        return cls(_closure(scheme.marginals))

    @classmethod
    def root(cls, names: Sequence[str]) -> "LatticeNode":
        return cls(frozenset(frozenset([n]) for n in names))

    @property
    def scheme(self) -> ProjectionScheme:
        return ProjectionScheme(self.constraints)

    @property
    def constraint_count(self) -> int:
        return len(self.constraints)

    @property
    def variables(self) -> frozenset:
        return frozenset().union(*self.constraints)


def contains(s1: ProjectionScheme, s2: ProjectionScheme) -> bool:
    """True when every marginal of ``s2`` lies inside some marginal of ``s1``."""
    return all(any(m <= m1 for m1 in s1.marginals) for m in s2.marginals)


def children(node: LatticeNode, names: Sequence[str] | None = None) -> list[tuple[frozenset, LatticeNode]]:
    """(added subset, child) pairs; each child adds exactly one constraint.

    A subset may be added only when all its proper subsets are already
    constrained.  Returned in the tie-break order: by size, then by
    variable index.
    """
    names = list(names) if names is not None else sorted(node.variables)
    pos = {n: i for i, n in enumerate(names)}
    have = node.constraints
    # grow from existing sets by one variable: the only candidates whose
    # proper subsets can all be present
    cands = set()
    for c in have:
        for v in names:
            if v not in c:
                t = c | {v}
                if t not in have and all(t - {u} in have for u in t):
                    cands.add(t)
    ordered = sorted(cands, key=lambda t: (len(t), sorted(pos[v] for v in t)))
    return [(t, LatticeNode(have | {t})) for t in ordered]


def is_practical(scheme: ProjectionScheme | LatticeNode) -> bool:
    if isinstance(scheme, LatticeNode):
        scheme = scheme.scheme
    return running_intersection_order(scheme) is not None


def _subset_key(t, names):
    pos = {n: i for i, n in enumerate(names)}
    return sorted(pos[v] for v in t)


def enumerate_lattice(names: Sequence[str], max_constraints: int | None = None) -> list[LatticeNode]:
    """All nodes reachable from the root within the constraint budget."""
    root = LatticeNode.root(names)
    seen = {root}
    frontier = [root]
    while frontier:
        nxt = []
        for node in frontier:
            if max_constraints is not None and node.constraint_count >= max_constraints:
                continue
            for _, child in children(node, names):
                if child not in seen:
                    seen.add(child)
                    nxt.append(child)
        frontier = nxt
    return sorted(seen, key=lambda n: (n.constraint_count, sorted(_subset_key(t, names) for t in n.constraints)))


def node_cap(n_vars: int, c: int) -> int:
    """Most nodes one per-vector search can score: every level offers at most
    2^n − 1 − n children and there are at most c − n levels."""
    return 1 + max(c - n_vars, 0) * (2 ** n_vars - 1 - n_vars)


# ---------------------------------------------------------------------------
# assignments

@dataclass
class SchemeAssignment:
    """(stage, α id) → scheme.  Infinite-horizon entries use stage ``"infinite"``."""

    schemes: dict = field(default_factory=dict)

    def scheme(self, stage, alpha_id: int) -> ProjectionScheme:
        try:
            return self.schemes[(stage, int(alpha_id))]
        except KeyError:
            raise ModelError(f"no scheme assigned to vector {alpha_id} at stage {stage}") from None

    def set(self, stage, alpha_id: int, scheme: ProjectionScheme):
        self.schemes[(stage, int(alpha_id))] = scheme

    @classmethod
    def uniform(cls, value_functions, scheme_for_stage) -> "SchemeAssignment":
        """Same scheme for every vector of a stage.

        ``scheme_for_stage`` is a scheme or a callable stage → scheme.
        """
        vfs = [value_functions] if isinstance(value_functions, ValueFunction) else value_functions
        pick = scheme_for_stage if callable(scheme_for_stage) else (lambda _s: scheme_for_stage)
        out = cls()
        for vf in vfs:
            for v in vf.vectors:
                out.set(vf.stage, v.id, pick(vf.stage))
        return out

    def covers(self, value_functions) -> bool:
        vfs = [value_functions] if isinstance(value_functions, ValueFunction) else value_functions
        return all((vf.stage, v.id) in self.schemes for vf in vfs for v in vf.vectors)

    def to_dict(self, names: Sequence[str]) -> dict:
        infinite = {str(i): s.ordered(names) for (st, i), s in sorted(self.schemes.items(), key=str)
                    if st == INFINITE}
        if infinite:
            return infinite
        out: dict = {}
        for (st, i), s in sorted(self.schemes.items()):
            out.setdefault(str(st), {})[str(i)] = s.ordered(names)
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "SchemeAssignment":
        out = cls()
        try:
            for key, val in doc.items():
                if isinstance(val, list):
                    out.set(INFINITE, int(key), ProjectionScheme.of(val))
                else:
                    for aid, marg in val.items():
                        out.set(int(key), int(aid), ProjectionScheme.of(marg))
        except (TypeError, ValueError, AttributeError) as exc:
            raise ModelFormatError(f"malformed scheme assignment: {exc}") from exc
        return out

    def dumps(self, names) -> str:
        return json.dumps(self.to_dict(names), indent=2)


# ---------------------------------------------------------------------------
# streamlined comparison

def compare_children(alpha_id: int, node_a: LatticeNode, node_b: LatticeNode,
                     vf: ValueFunction, tester: SwitchTester) -> int:
    """-1 if node_a gives α the smaller B, 1 if node_b does, 0 on a tie.

    Candidates are tested in decreasing order of contributed error; the
    first one switchable under exactly one node decides, unless a later
    candidate with the same error is switchable under the other node.
    """
    alpha = vf.by_id(alpha_id).values
    cands = sorted(((contributed_error(alpha, v.values), v.id) for v in vf.vectors if v.id != alpha_id),
                   key=lambda t: (-t[0], t[1]))
    ca, cb = node_a.constraints, node_b.constraints
    for k, (err, j) in enumerate(cands):
        if err <= 0.0:
            return 0  # remaining swaps cost nothing; both B are 0
        in_a = tester.test(vf, alpha_id, j, ca)
        in_b = tester.test(vf, alpha_id, j, cb)
        if in_a and in_b:
            return 0
        if in_a or in_b:
            other = cb if in_a else ca
            for err2, j2 in cands[k + 1:]:
                if err2 < err - 1e-12:
                    break
                if tester.test(vf, alpha_id, j2, other):
                    return 0
            return 1 if in_a else -1
    return 0


# ---------------------------------------------------------------------------
# greedy search

@dataclass
class SearchResult:
    assignment: SchemeAssignment
    bound: ErrorBound
    trace: list = field(default_factory=list)

    def edges(self):
        """(parent score, child score) for every descended edge."""
        return [(t["parent_score"], t["score"]) for t in self.trace if t.get("chosen")]


class _Scorer:
    """Score a node for one vector: B for U searches, E for E searches."""

    def __init__(self, kind, vf, alpha_id, tester, rec=None, restrict_region=False):
        self.kind, self.vf, self.alpha_id = kind, vf, alpha_id
        self.tester, self.rec, self.restrict = tester, rec, restrict_region
        self.alpha = vf.by_id(alpha_id)

    def __call__(self, node: LatticeNode):
        sw = self.tester.switch_set(self.vf, self.alpha_id, node.scheme, node.constraints)
        if self.kind == "E_finite":
            a = self.rec.alt_for(self.vf.stage, sw)
            return alt_error(self.alpha.values, a, self.vf, self.restrict), sw, a
        return one_stage_bound(self.alpha, sw, self.vf), sw, None


def _practical_within(node: LatticeNode, c: int, names, memo: dict) -> bool:
    """Whether some practical node is reachable from ``node`` within ``c`` constraints."""
    if is_practical(node):
        return True
    if node.constraint_count >= c:
        return False
    if node not in memo:
        memo[node] = any(_practical_within(child, c, names, memo) for _, child in children(node, names))
    return memo[node]


def _search_one(scorer: _Scorer, names, c, trace, stage, on_progress):
    node = LatticeNode.root(names)
    score, sw, extra = scorer(node)
    visited = 1
    path = [(node, score, sw, extra)]
    siblings: list = []
    memo: dict = {}
    trace.append({"stage": stage, "alpha": scorer.alpha_id, "node": node.scheme.label(names),
                  "constraints": node.constraint_count, "score": score, "chosen": False,
                  "parent_score": None})
    cap = node_cap(len(names), c)
    # a non-practical node cannot be returned, so the walk continues past it
    while node.constraint_count < c and not (sw.singleton and is_practical(node)):
        scored = []
        for added, child in children(node, names):
            s, csw, cextra = scorer(child)
            visited += 1
            scored.append((s, len(csw.members), child.constraint_count, _subset_key(added, names),
                           len(trace), child, csw, cextra))
            trace.append({"stage": stage, "alpha": scorer.alpha_id, "node": child.scheme.label(names),
                          "constraints": child.constraint_count, "score": s, "chosen": False,
                          "parent_score": score, "added": sorted(added, key=names.index)})
        scored.sort(key=lambda t: t[:4])
        pick = next((cand for cand in scored if _practical_within(cand[5], c, names, memo)), None)
        if pick is None:
            break
        s, _, _, _, at, child, csw, cextra = pick
        trace[at]["chosen"] = True
        siblings = [(t[0], t[2], t[5], t[6], t[7]) for t in scored if is_practical(t[5])]
        node, score, sw, extra = child, s, csw, cextra
        path.append((node, score, sw, extra))
        if on_progress:
            on_progress(stage, scorer.alpha_id, node, score)
    assert visited <= cap, f"search visited {visited} nodes, above the cap {cap}"
    if is_practical(node):
        return node, score, sw, extra
    # ended on a non-practical node: best practical sibling, else the nearest practical ancestor
    ancestor = next(p for p in reversed(path) if is_practical(p[0]))
    options = [(ancestor[1], ancestor[0].constraint_count, ancestor[0], ancestor[2], ancestor[3])]
    options += siblings
    best = min(options, key=lambda t: t[:2])
    return best[2], best[0], best[3], best[4]


def greedy_search(pomdp, target, bound_kind: str, c: int, tester: SwitchTester | None = None,
                  weighting: str = "paper", e_steps: int = 3, restrict_region: bool = False,
                  on_progress: Callable | None = None) -> SearchResult:
    """Greedy descent of the scheme lattice for every α-vector.

    ``target`` is the list ℵ^1..ℵ^K for finite kinds or ℵ* for infinite
    ones.  Each vector starts at the all-singletons root and moves to the
    best-scoring child until its switch set is a singleton or the node holds
    ``c`` constraints.  ``on_progress(stage, alpha_id, node, score)`` fires
    after every descent, so a caller can stop early with a valid partial
    answer (unsearched vectors keep the root scheme).
    """
    if bound_kind not in BOUND_KINDS:
        raise ModelError(f"unknown bound kind {bound_kind!r}")
    names = list(pomdp.var_names)
    n = len(names)
    if c < n:
        raise ModelError(f"constraint budget {c} is below the variable count {n}")
    c = min(c, 2 ** n - 1)
    tester = tester or SwitchTester(pomdp)
    root = LatticeNode.root(names).scheme
    trace: list = []
    finite = bound_kind.endswith("finite") and not bound_kind.endswith("infinite")

    if finite:
        stages = list(target)
        assignment = SchemeAssignment.uniform(stages, root)
        rec = AltRecursion(stages, tester) if bound_kind == "E_finite" else None
        for vf in stages:  # ℵ^1 first: E needs Alt sets of the stage below
            alts = {}
            for v in vf.vectors:
                scorer = _Scorer(bound_kind, vf, v.id, tester, rec, restrict_region)
                node, _, sw, extra = _search_one(scorer, names, c, trace, vf.stage, on_progress)
                assignment.set(vf.stage, v.id, node.scheme)
                alts[v.id] = extra
            if rec is not None:
                rec.fix(vf.stage, alts)
        if bound_kind == "U_finite":
            bound = u_bound_for_assignment(stages, assignment, tester, weighting)
        else:
            bound = e_bound_finite(stages, assignment, tester, restrict_region)
    else:
        vf = target
        if not isinstance(vf, ValueFunction) or vf.stage != INFINITE:
            raise ModelError("infinite-horizon search needs the ℵ* value function")
        assignment = SchemeAssignment.uniform(vf, root)
        for v in vf.vectors:
            scorer = _Scorer("U_infinite", vf, v.id, tester)
            node, *_ = _search_one(scorer, names, c, trace, INFINITE, on_progress)
            assignment.set(INFINITE, v.id, node.scheme)
        if bound_kind == "U_infinite":
            bound = u_bound_infinite_for_assignment(vf, assignment, tester)
        else:
            bound = e_bound_infinite(vf, assignment, tester, e_steps)
    bound.parameters["max_constraints"] = c
    return SearchResult(assignment, bound, trace)
