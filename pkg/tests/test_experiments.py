import math
import subprocess
import sys

import numpy as np
import pytest

from vdbelief.errors import ModelError
from vdbelief.experiments import (FACTORY_SCHEMES, TABLE2_REFERENCE, approximate_from, random_priors,
                                  sample_prior, table2)
from vdbelief.belief import ProjectionScheme


@pytest.fixture(scope="module")
def t2(factory, factory_stages):
    return table2(pomdp=factory, value_functions=factory_stages)


def test_table2_shape(t2):
    rows = t2.tables["rows"]
    assert [(r["scheme"], r["stage"]) for r in rows] == [(s, k) for s in ("F1/F2", "F3/F4") for k in (4, 3, 2, 1)]
    assert all({"L1", "L2", "KL_base_2.71828", "KL_base_2", "loss"} <= set(r) for r in rows)


def test_table2_kl_bases_related(t2):
    for r in t2.tables["rows"]:
        assert r["KL_base_2"] == pytest.approx(r["KL_base_2.71828"] / math.log(2))


def test_table2_reference_at_stage_three(t2):
    for r in t2.tables["rows"]:
        if r["stage"] == 3:
            ref = TABLE2_REFERENCE[r["scheme"]]
            assert r["L1"] == pytest.approx(ref[0], abs=5e-4)
            assert r["L2"] == pytest.approx(ref[1], abs=5e-4)
            assert r["KL_base_2.71828"] == pytest.approx(ref[2], abs=5e-4)


def test_table2_losses(t2):
    loss = {(r["scheme"], r["stage"]): r["loss"] for r in t2.tables["rows"]}
    assert loss[("F1/F2", 3)] == pytest.approx(1.0)
    assert all(loss[("F3/F4", k)] == pytest.approx(0.0, abs=1e-9) for k in (3, 2, 1))
    # four stages out the FM–F3 correlation still matters
    assert loss[("F3/F4", 4)] == pytest.approx(1.0)


def test_no_fault_mode_no_distance(factory, factory_stages):
    res = table2(0.0, pomdp=factory, value_functions=factory_stages)
    for r in res.tables["rows"]:
        assert r["L1"] == pytest.approx(0.0, abs=1e-12) and r["loss"] == pytest.approx(0.0, abs=1e-12)


def test_approximate_from(factory_stages):
    s = ProjectionScheme.of(FACTORY_SCHEMES["F1/F2"])
    a = approximate_from(factory_stages, s, 3)
    assert a.scheme(3, factory_stages[2].ids[0]) == s
    assert a.scheme(4, factory_stages[3].ids[0]) == ProjectionScheme.full(s.variables)


def test_random_priors_deterministic(factory, factory_stages):
    a = random_priors(30, 5, pomdp=factory, value_functions=factory_stages)
    b = random_priors(30, 5, pomdp=factory, value_functions=factory_stages)
    assert a.tables == b.tables and a.seed == 5


def test_full_scheme_never_suboptimal(factory, factory_stages):
    res = random_priors(50, 1, scheme="full", pomdp=factory, value_functions=factory_stages)
    row = res.tables["summary"][0]
    assert row["suboptimal_instances"] == 0 and row["max_loss"] == pytest.approx(0.0, abs=1e-9)


def test_uniform_fm_interpretation(factory, factory_stages):
    res = random_priors(50, 2, interpretation="uniform-fm", pomdp=factory, value_functions=factory_stages)
    assert res.parameters["interpretation"] == "uniform-fm"


def test_sample_prior(factory):
    rng = np.random.default_rng(0)
    for interp in ("dirichlet", "uniform-fm"):
        b = sample_prior(rng, factory, interp)
        assert b.shape == (32,) and b.sum() == pytest.approx(1.0)
    with pytest.raises(ModelError):
        sample_prior(rng, factory, "beta")


def test_unknown_scheme(factory, factory_stages):
    with pytest.raises(ModelError):
        random_priors(5, scheme="f2f3", pomdp=factory, value_functions=factory_stages)


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "vdbelief.cli", "factory"], capture_output=True, text=True)
    assert out.returncode == 0 and '"FM"' in out.stdout
