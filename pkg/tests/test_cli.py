import json

import pytest

from vdbelief.cli import main
from vdbelief.model import serialize_model, validate_document
from vdbelief.scenarios import random_model


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    m = random_model(0, 2, 2, 3)
    (d / "small.json").write_text(serialize_model(m))
    (d / "prior.json").write_text(json.dumps({"joint": [0.1, 0.2, 0.3, 0.4]}))
    assert main(["solve", str(d / "small.json"), "-o", str(d / "vf.json")]) == 0
    return d


def _json(path):
    return json.loads(path.read_text())


class TestSolve:
    def test_writes_valid_value_function(self, workdir):
        validate_document(_json(workdir / "vf.json"), "value_function.schema.json")

    def test_stdout_and_stage_counts(self, workdir, capsys):
        assert main(["solve", str(workdir / "small.json"), "--horizon", "2"]) == 0
        out = capsys.readouterr()
        assert len(json.loads(out.out)["stages"]) == 2
        assert "stage 1:" in out.err and "stage 2:" in out.err

    def test_infinite(self, tmp_path):
        m = random_model(0, 2, 1, "infinite", discount=0.9)
        (tmp_path / "m.json").write_text(serialize_model(m))
        assert main(["solve", str(tmp_path / "m.json"), "--infinite", "-o", str(tmp_path / "vf.json")]) == 0
        validate_document(_json(tmp_path / "vf.json"), "value_function.schema.json")

    def test_missing_file_is_input_error(self, tmp_path):
        assert main(["solve", str(tmp_path / "nope.json")]) == 2

    def test_malformed_model(self, tmp_path):
        (tmp_path / "bad.json").write_text('{"variables": []}')
        assert main(["solve", str(tmp_path / "bad.json")]) == 2

    def test_domain_error_exit_code(self, workdir):
        assert main(["solve", str(workdir / "small.json"), "--infinite"]) == 1

    def test_usage_error(self):
        with pytest.raises(SystemExit) as info:
            main(["solve"])
        assert info.value.code == 2


class TestSearchAndBounds:
    def test_search_then_bounds(self, workdir):
        d = workdir
        assert main(["search", str(d / "small.json"), str(d / "vf.json"), "-c", "2",
                     "-o", str(d / "asg.json"), "--report", str(d / "rep.json"),
                     "--trace", str(d / "trace.jsonl")]) == 0
        validate_document(_json(d / "asg.json"), "assignment.schema.json")
        rep = _json(d / "rep.json")
        validate_document(rep, "bounds.schema.json")
        rows = [json.loads(line) for line in (d / "trace.jsonl").read_text().splitlines()]
        assert rows and all("score" in r for r in rows)
        assert main(["bounds", str(d / "small.json"), str(d / "vf.json"), str(d / "asg.json"),
                     "-o", str(d / "b.json")]) == 0
        assert _json(d / "b.json")["value"] == pytest.approx(rep["value"])
        assert main(["bounds", str(d / "small.json"), str(d / "vf.json"), str(d / "asg.json"),
                     "--kind", "u", "--u-weighting", "time", "-o", str(d / "bu.json")]) == 0
        assert _json(d / "bu.json")["parameters"]["weighting"] == "time"

    def test_global_flags_before_or_after(self, workdir, capsys):
        d = workdir
        args = [str(d / "small.json"), str(d / "vf.json"), "-c", "3", "--bound", "u"]
        assert main(["--threads", "2", "--include-ties", "search"] + args) == 0
        before = capsys.readouterr().out
        assert main(["search"] + args + ["--threads", "2", "--include-ties"]) == 0
        assert capsys.readouterr().out == before

    def test_horizon_mismatch(self, workdir):
        d = workdir
        assert main(["search", str(d / "small.json"), str(d / "vf.json"), "-c", "2",
                     "--horizon", "infinite"]) == 1

    def test_budget_error(self, workdir):
        d = workdir
        assert main(["search", str(d / "small.json"), str(d / "vf.json"), "-c", "1"]) == 1

    def test_infinite_search_and_bounds(self, tmp_path):
        m = random_model(0, 2, 1, "infinite", discount=0.9)
        (tmp_path / "m.json").write_text(serialize_model(m))
        main(["solve", str(tmp_path / "m.json"), "--infinite", "-o", str(tmp_path / "vf.json")])
        assert main(["search", str(tmp_path / "m.json"), str(tmp_path / "vf.json"), "-c", "3",
                     "--horizon", "infinite", "-o", str(tmp_path / "a.json")]) == 0
        assert main(["bounds", str(tmp_path / "m.json"), str(tmp_path / "vf.json"), str(tmp_path / "a.json"),
                     "-o", str(tmp_path / "b.json")]) == 0
        assert _json(tmp_path / "b.json")["kind"] == "E_infinite"


class TestExec:
    def test_exact_monitoring(self, workdir, capsys):
        d = workdir
        assert main(["exec", str(d / "small.json"), str(d / "vf.json"), "--prior", str(d / "prior.json")]) == 0
        doc = json.loads(capsys.readouterr().out)
        validate_document(doc, "execution.schema.json")
        assert doc["loss"] == pytest.approx(0.0, abs=1e-9)

    def test_projected_csv(self, workdir, capsys):
        d = workdir
        (d / "root.json").write_text(json.dumps({str(k): {str(i): [["A"], ["B"]] for i in range(20)}
                                                 for k in (1, 2, 3)}))
        assert main(["exec", str(d / "small.json"), str(d / "vf.json"), str(d / "root.json"),
                     "--prior", str(d / "prior.json"), "--csv"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "prior_hash,loss,suboptimal_count" and len(lines) == 2

    def test_monte_carlo(self, workdir, capsys):
        d = workdir
        assert main(["exec", str(d / "small.json"), str(d / "vf.json"), "--prior", str(d / "prior.json"),
                     "--monte-carlo", "200", "--seed", "3"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["trials"] == 200 and doc["standard_error"] >= 0

    def test_bad_prior(self, workdir, tmp_path):
        (tmp_path / "p.json").write_text(json.dumps({"joint": [0.5, 0.6, 0.0, 0.0]}))
        d = workdir
        assert main(["exec", str(d / "small.json"), str(d / "vf.json"), "--prior", str(tmp_path / "p.json")]) == 2


class TestFactoryAndExperiments:
    def test_emit_then_solve(self, tmp_path, capsys):
        assert main(["factory", "--emit", str(tmp_path / "f.json")]) == 0
        assert main(["solve", str(tmp_path / "f.json")]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert [len(s["vectors"]) for s in doc["stages"]] == [2, 4, 8, 8, 8, 6, 3]

    def test_table2(self, capsys):
        assert main(["table2"]) == 0
        doc = json.loads(capsys.readouterr().out)
        validate_document(doc, "experiment.schema.json")
        assert len(doc["tables"]["rows"]) == 8

    def test_table2_csv(self, capsys):
        assert main(["--kl-base", "10", "table2", "--csv"]) == 0
        header = capsys.readouterr().out.splitlines()[0]
        assert "KL_base_10" in header

    def test_table2_joint_prior(self, capsys):
        assert main(["table2", "--joint-prior"]) == 0
        doc = json.loads(capsys.readouterr().out)
        validate_document(doc, "experiment.schema.json")
        assert doc["parameters"]["joint_prior"] is True

    def test_random_priors(self, capsys):
        assert main(["random-priors", "--trials", "20", "--seed", "1"]) == 0
        doc = json.loads(capsys.readouterr().out)
        validate_document(doc, "experiment.schema.json")
        assert doc["tables"]["summary"][0]["trials"] == 20

    def test_random_priors_bad_trials(self):
        assert main(["random-priors", "--trials", "0"]) == 1
