import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from oracles import ipf_projection
from vdbelief.belief import (FactoredBelief, ProjectionScheme, belief_from_dict, belief_to_dict,
                             check_belief, exact_update, kl, l1, l2, marginal, project, project_joint,
                             reconstruct, running_intersection_order)
from vdbelief.errors import BeliefError
from vdbelief.lattice import enumerate_lattice, is_practical
from vdbelief.model import CPT, ActionSpec, FactoredPOMDP, VariableSpec
from vdbelief.scenarios import BOOL, random_model


def _two_var():
    return FactoredPOMDP(tuple(VariableSpec(n, BOOL) for n in "AB"), (ActionSpec("noop", {}),))


def _three_var():
    return FactoredPOMDP(tuple(VariableSpec(n, BOOL) for n in "ABC"), (ActionSpec("noop", {}),))


def beliefs(n):
    return arrays(np.float64, n, elements=st.floats(0.0, 1.0)).filter(lambda v: v.sum() > 1e-3).map(
        lambda v: v / v.sum())


class TestExactUpdate:
    def test_factory_stamp_p1(self, factory, uniform_fm):
        b = exact_update(uniform_fm, factory, "Stamp P1", 7).reshape(factory.dims)
        fm_f1 = b.sum(axis=(2, 3, 4))
        assert fm_f1[:, 1].sum() == pytest.approx(0.45)
        assert fm_f1[1, 1] == pytest.approx(0.40)
        assert fm_f1[1, 0] == pytest.approx(0.10)
        assert fm_f1[0, 1] == pytest.approx(0.05)
        assert fm_f1[0, 0] == pytest.approx(0.45)

    def test_identity_and_uninformative(self, rng):
        m = _two_var()
        b = rng.dirichlet(np.ones(4))
        assert np.allclose(exact_update(b, m, "noop"), b)

    def test_deterministic_sensor(self, rng):
        sensor = CPT(("A",), ((1.0, 0.0), (0.0, 1.0)))
        m = FactoredPOMDP(tuple(VariableSpec(n, BOOL) for n in "AB"),
                          (ActionSpec("look", {}, observation=sensor),), ("no", "yes"))
        post = exact_update(rng.dirichlet(np.ones(4)), m, "look", observation="yes")
        assert post[:2].sum() == 0.0 and post.sum() == pytest.approx(1.0)

    def test_impossible_observation(self):
        sensor = CPT(("A",), ((1.0, 0.0), (0.0, 1.0)))
        m = FactoredPOMDP(tuple(VariableSpec(n, BOOL) for n in "AB"),
                          (ActionSpec("look", {}, observation=sensor),), ("no", "yes"))
        with pytest.raises(BeliefError, match="impossible observation"):
            exact_update(np.array([1.0, 0, 0, 0]), m, "look", observation="yes")

    @pytest.mark.parametrize("seed", range(5))
    def test_normalized_for_reachable_observations(self, seed, rng):
        m = random_model(seed, 3, 3)
        for _ in range(20):
            b = rng.dirichlet(np.ones(m.n_states))
            for a in m.actions:
                for z in range(3):
                    post = exact_update(b, m, a, observation=z)
                    assert post.min() >= 0 and post.sum() == pytest.approx(1.0, abs=1e-12)


class TestProject:
    def test_independent_marginals(self):
        m = _two_var()
        f = project(np.array([0.5, 0, 0, 0.5]), ProjectionScheme.of([["A"], ["B"]]), m)
        assert np.allclose(f.tables[frozenset("A")], [0.5, 0.5])
        assert np.allclose(f.tables[frozenset("B")], [0.5, 0.5])

    def test_full_scheme_table_is_belief(self, rng):
        m = _three_var()
        b = rng.dirichlet(np.ones(8))
        f = project(b, ProjectionScheme.full(m.var_names), m)
        assert np.allclose(f.tables[frozenset("ABC")].ravel(), b)

    def test_factory_stage5_marginals_brute_force(self, factory, factory_stages, uniform_fm):
        b = exact_update(uniform_fm, factory, "Stamp P1", 7)
        b = exact_update(b, factory, "Stamp P2", 6)
        scheme = ProjectionScheme.of([["FM", "F1"], ["F2"], ["F3"], ["F4"]])
        f = project(b, scheme, factory)
        expect = np.zeros((2, 2))
        for s in range(32):
            fm, f1 = (s >> 4) & 1, (s >> 3) & 1
            expect[fm, f1] += b[s]
        assert np.allclose(f.tables[frozenset({"FM", "F1"})], expect)
        f2 = np.zeros(2)
        for s in range(32):
            f2[(s >> 2) & 1] += b[s]
        assert np.allclose(f.tables[frozenset({"F2"})], f2)

    def test_scheme_must_cover(self):
        with pytest.raises(BeliefError):
            project(np.full(4, 0.25), ProjectionScheme.of([["A"]]), _two_var())


class TestReconstruct:
    def test_product_of_uniform(self):
        m = _two_var()
        f = project(np.array([0.5, 0, 0, 0.5]), ProjectionScheme.of([["A"], ["B"]]), m)
        assert np.allclose(reconstruct(f), 0.25)

    def test_chain_matches_conditional_product(self, rng):
        m = _three_var()
        b = rng.dirichlet(np.ones(8))
        joint = reconstruct(project(b, ProjectionScheme.of([["A", "B"], ["B", "C"]]), m)).reshape(2, 2, 2)
        P = b.reshape(2, 2, 2)
        pab, pbc, pb = P.sum(2), P.sum(0), P.sum((0, 2))
        for a in range(2):
            for bb in range(2):
                for c in range(2):
                    assert joint[a, bb, c] == pytest.approx(pab[a, bb] * pbc[bb, c] / pb[bb])

    def test_full_is_identity(self, rng):
        m = _three_var()
        b = rng.dirichlet(np.ones(8))
        assert np.allclose(reconstruct(project(b, ProjectionScheme.full("ABC"), m)), b)

    def test_not_practical(self, rng):
        m = _three_var()
        cyc = ProjectionScheme.of([["A", "B"], ["A", "C"], ["B", "C"]])
        with pytest.raises(BeliefError, match="scheme not practical"):
            reconstruct(project(rng.dirichlet(np.ones(8)), cyc, m))

    def test_zero_separator_mass(self):
        m = _three_var()
        b = np.zeros(8)
        b[0] = 1.0  # B never true: the conditional for B=true is 0/0
        out = reconstruct(project(b, ProjectionScheme.of([["A", "B"], ["B", "C"]]), m))
        assert np.allclose(out, b)

    def test_inconsistent_tables_rejected(self):
        scheme = ProjectionScheme.of([["A", "B"], ["B", "C"]])
        tables = {frozenset("AB"): np.array([[0.5, 0.0], [0.5, 0.0]]),
                  frozenset("BC"): np.array([[0.25, 0.25], [0.25, 0.25]])}
        with pytest.raises(BeliefError, match="disagree"):
            FactoredBelief(scheme, tables, ("A", "B", "C"), (2, 2, 2))

    @pytest.mark.parametrize("node", [n for n in enumerate_lattice("ABC") if is_practical(n)],
                             ids=lambda n: n.scheme.label("ABC"))
    def test_matches_max_entropy_oracle(self, node, rng):
        m = _three_var()
        B = rng.dirichlet(np.ones(8), size=30)
        ours = np.array([project_joint(b, node.scheme, m) for b in B])
        oracle = ipf_projection(B, (2, 2, 2), [[ "ABC".index(v) for v in mm] for mm in node.scheme.marginals])
        assert np.allclose(ours, oracle, atol=1e-9)


class TestProperties:
    @settings(max_examples=60, deadline=None)
    @given(b=beliefs(8), pick=st.integers(0, 7))
    def test_project_reconstruct_round_trip(self, b, pick):
        m = _three_var()
        nodes = [n for n in enumerate_lattice("ABC") if is_practical(n)]
        scheme = nodes[pick % len(nodes)].scheme
        f = project(b, scheme, m)
        g = project(reconstruct(f), scheme, m)
        for key in f.tables:
            assert np.allclose(f.tables[key], g.tables[key], atol=1e-9)

    @settings(max_examples=40, deadline=None)
    @given(b=beliefs(8))
    def test_partition_blocks_preserved(self, b):
        m = _three_var()
        scheme = ProjectionScheme.of([["A", "C"], ["B"]])
        joint = reconstruct(project(b, scheme, m))
        for block in (["A", "C"], ["B"]):
            assert np.allclose(marginal(joint, m, block), marginal(b, m, block), atol=1e-9)

    @settings(max_examples=60, deadline=None)
    @given(b=beliefs(6), c=beliefs(6))
    def test_distance_ranges(self, b, c):
        assert 0.0 <= l1(b, c) <= 2.0 + 1e-12
        assert 0.0 <= l2(b, c) <= math.sqrt(2) + 1e-12
        assert kl(b, c) >= 0.0
        for f in (l1, l2, kl):
            assert f(b, b) == 0.0
        if np.abs(b - c).max() > 1e-6:
            assert l1(b, c) > 0 and l2(b, c) > 0 and kl(b, c) > 0

    def test_running_intersection_order(self):
        assert running_intersection_order(ProjectionScheme.of([["A", "B"], ["B", "C"]])) is not None
        assert running_intersection_order(ProjectionScheme.of([["A", "B"], ["A", "C"], ["B", "C"]])) is None


class TestDistances:
    def test_zero_for_equal(self):
        b = np.array([0.1, 0.2, 0.7])
        assert (l1(b, b), l2(b, b), kl(b, b)) == (0.0, 0.0, 0.0)

    def test_correlated_pair_against_product(self):
        b = np.array([0.5, 0.0, 0.0, 0.5])
        approx = np.full(4, 0.25)
        assert l1(b, approx) == pytest.approx(1.0)
        assert kl(b, approx) == pytest.approx(math.log(2))
        assert kl(b, approx, base=2) == pytest.approx(1.0)
        assert l2(b, approx) == pytest.approx(0.5)

    def test_kl_infinite_without_support(self):
        assert kl(np.array([0.5, 0.5]), np.array([1.0, 0.0])) == math.inf


class TestSchemes:
    def test_canonical_form_drops_contained_subsets(self):
        s = ProjectionScheme.of([["A", "B"], ["A"], ["C"]])
        assert s.marginals == frozenset({frozenset("AB"), frozenset("C")})

    def test_constraint_subsets_are_downward_closed(self):
        s = ProjectionScheme.of([["A", "B"], ["C"]])
        assert s.constraint_subsets() == {frozenset("A"), frozenset("B"), frozenset("AB"), frozenset("C")}


class TestSerialization:
    def test_joint_round_trip(self, rng):
        m = _two_var()
        b = rng.dirichlet(np.ones(4))
        assert np.allclose(belief_from_dict(belief_to_dict(b), m), b)

    def test_factored_round_trip(self, rng):
        m = _three_var()
        f = project(rng.dirichlet(np.ones(8)), ProjectionScheme.of([["A", "B"], ["B", "C"]]), m)
        g = belief_from_dict(belief_to_dict(f), m)
        assert np.allclose(reconstruct(g), reconstruct(f))

    def test_check_belief(self):
        with pytest.raises(BeliefError):
            check_belief([0.5, 0.6])
        with pytest.raises(BeliefError):
            check_belief([0.5, 0.5], 3)
