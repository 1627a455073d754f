import json
import math
import os

import pytest

from conftest import DATA, LB_TWO_STATE, MU_STAR
from mdplab import cli
from mdplab.model import model_from_json

TWO_STATE = str(DATA / "twostate.json")


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, (json.loads(out) if out.strip() else None), err


class TestSolve:
    def test_two_state(self, capsys):
        code, out, _ = run(capsys, "solve", TWO_STATE)
        assert code == 0
        assert out["gain"] == pytest.approx(2 / 3, abs=1e-12)
        assert set(out["gaps"]) == {"loop", "s1->s2", "s2->s1"}
        assert out["gaps"]["loop"] == 0.0 and out["gaps"]["s1->s2"] > 0
        assert out["optimal_policy"]["s1"] == "loop"

    def test_bad_json(self, capsys, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        code, out, err = run(capsys, "solve", bad)
        assert code == 1 and out is None and err

    def test_missing_file(self, capsys, tmp_path):
        assert run(capsys, "solve", tmp_path / "absent.json")[0] == 1

    def test_non_communicating(self, capsys):
        code, _, err = run(capsys, "solve", DATA / "noncommunicating.json")
        assert code == 2 and "infinite diameter" in err

    def test_invalid_model(self, capsys, tmp_path):
        data = json.loads((DATA / "twostate.json").read_text())
        data["kernel"]["loop"] = {"s1": 0.5}
        path = tmp_path / "broken.json"
        path.write_text(json.dumps(data))
        code, _, err = run(capsys, "solve", path)
        assert code == 2 and "invalid model" in err

    def test_unknown_flag(self, capsys):
        assert run(capsys, "solve", TWO_STATE, "--bogus")[0] == 1

    def test_pretty(self, capsys):
        cli.main(["solve", TWO_STATE, "--pretty"])
        text = capsys.readouterr().out
        assert text.startswith("{\n  ") and json.loads(text)["gain"] == pytest.approx(2 / 3)

    @pytest.mark.parametrize("flags", [[], ["--json"]])
    def test_compact_by_default(self, capsys, flags):
        cli.main(["solve", TWO_STATE, *flags])
        text = capsys.readouterr().out
        assert text.count("\n") == 1 and json.loads(text)["gain"] == pytest.approx(2 / 3)


class TestLb:
    def test_general(self, capsys):
        code, out, _ = run(capsys, "lb", TWO_STATE, "--method", "general", "--class", "fixed-kernel")
        assert code == 0 and out["converged"]
        assert out["value"] == pytest.approx(LB_TWO_STATE, rel=1e-10)
        assert out["mu"]["s1->s2"] == pytest.approx(MU_STAR, rel=1e-10)

    def test_twelve_digits(self, capsys):
        _, out, _ = run(capsys, "lb", TWO_STATE)
        assert out["value"] == float(f"{LB_TWO_STATE:.12g}")

    def test_bandit(self, capsys):
        code, out, _ = run(capsys, "lb", DATA / "bandit.json", "--method", "bandit")
        assert code == 0 and out["value"] == pytest.approx(0.783046075588, abs=1e-11)

    def test_recurrent_refused(self, capsys):
        code, out, err = run(capsys, "lb", TWO_STATE, "--method", "recurrent")
        assert code == 2 and out is None and "not optimally recurrent" in err

    def test_switching_shape_refused(self, capsys):
        assert run(capsys, "lb", TWO_STATE, "--method", "switching")[0] == 2

    def test_no_navigation_infinite_entries(self, capsys):
        _, out, _ = run(capsys, "lb", TWO_STATE, "--method", "no-navigation")
        assert out["mu"]["loop"] == "inf" and out["value"] == pytest.approx(1 / math.log(2), abs=1e-11)

    def test_emit_mu_and_figure(self, capsys, tmp_path):
        mu_path, fig = tmp_path / "mu.json", tmp_path / "mu.png"
        code, out, _ = run(capsys, "lb", TWO_STATE, "--emit-mu", mu_path, "--figure", fig)
        assert code == 0
        assert json.loads(mu_path.read_text()) == out["mu"]
        assert fig.stat().st_size > 0

    def test_output_file(self, capsys, tmp_path):
        target = tmp_path / "sub" / "report.json"
        code, out, _ = run(capsys, "lb", TWO_STATE, "-o", target)
        assert code == 0 and out is None
        assert json.loads(target.read_text())["value"] == pytest.approx(LB_TWO_STATE, rel=1e-10)
        assert [p.name for p in target.parent.iterdir()] == ["report.json"]

    def test_cut_budget_exhausted(self, capsys, monkeypatch):
        monkeypatch.setenv("MDPLAB_TOL", "max_rounds=1")
        code, out, _ = run(capsys, "lb", TWO_STATE)
        assert code == 3 and out is not None and out["converged"] is False


class TestTolerances:
    @pytest.mark.parametrize("text", ["zeta=-1", "nonsense=1", "zeta"])
    def test_bad_override(self, capsys, monkeypatch, text):
        monkeypatch.setenv("MDPLAB_TOL", text)
        code, _, err = run(capsys, "solve", TWO_STATE)
        assert code == 1 and "MDPLAB_TOL" in err

    def test_override_is_scoped(self, capsys, monkeypatch):
        from mdplab import tolerances
        before = tolerances.current()
        monkeypatch.setenv("MDPLAB_TOL", "zeta=1e-6")
        assert run(capsys, "solve", TWO_STATE)[0] == 0
        assert tolerances.current() == before


class TestConfuse:
    def test_cycle(self, capsys, tmp_path):
        emitted = tmp_path / "alt.json"
        code, out, _ = run(capsys, "confuse", TWO_STATE, "--policy", "cycle", "--emit-model", emitted)
        assert code == 0 and out["reason"] is None
        assert out["certificate"]["modifications"][0]["pair"] == "s1->s2"
        assert out["certificate"]["gain_check"]["beneficial"]
        alt = model_from_json(json.loads(emitted.read_text()))
        assert alt.rewards[alt.pair("s1->s2")].mean() > 2 / 3

    def test_optimal_policy(self, capsys):
        code, out, _ = run(capsys, "confuse", TWO_STATE, "--policy", "loop")
        assert code == 0 and out["certificate"] is None and "optimal" in out["reason"]

    def test_kappa_from_lb_report(self, capsys, tmp_path):
        report = tmp_path / "lb.json"
        assert run(capsys, "lb", TWO_STATE, "-o", report)[0] == 0
        code, out, _ = run(capsys, "confuse", TWO_STATE, "--policy", "cycle", "--kappa", report)
        assert code == 0 and out["certificate"]["info_bound"] > 0

    def test_unknown_policy(self, capsys):
        assert run(capsys, "confuse", TWO_STATE, "--policy", "nope")[0] == 1


class TestContract:
    def test_default_xopt(self, capsys):
        code, out, _ = run(capsys, "contract", TWO_STATE)
        assert code == 0 and out["contracted"] == ["loop"]
        assert out["state_map"] == {"s1": "[s1]", "s2": "s2"}
        assert out["minor"]["states"] == ["[s1]", "s2"]

    def test_not_closed(self, capsys):
        assert run(capsys, "contract", TWO_STATE, "--pairs", "s1->s2")[0] == 2


class TestKnapsack:
    def test_example(self, capsys):
        code, out, _ = run(capsys, "knapsack", "--values", "3,4", "--weights", "2,3", "-W", 3, "-V", 4,
                           "--variant", "confusing-model")
        assert code == 0 and out["decision"] == "yes" and out["witness"] == [2] and out["oracle"] == "yes"

    def test_zero_capacity(self, capsys):
        _, out, _ = run(capsys, "knapsack", "--values", "3,4", "--weights", "2,3", "-W", 0, "-V", 4)
        assert out["decision"] == "no" and "witness" not in out

    def test_regret_and_family(self, capsys, tmp_path):
        code, out, _ = run(capsys, "knapsack", "--values", "3,4", "--weights", "2,3", "-W", 3, "-V", 4,
                           "--variant", "regret", "--emit-family", tmp_path)
        assert code == 0 and out["decision"] == out["oracle"] == "yes" and "witness_mu" in out
        names = sorted(p.name for p in tmp_path.iterdir())
        assert names == ["K_1-2.json", "K_1.json", "K_2.json", "K_empty.json", "family.json", "reference.json"]
        ref = model_from_json(json.loads((tmp_path / "reference.json").read_text()))
        assert ref.n_states == 7

    def test_bad_lists(self, capsys):
        assert run(capsys, "knapsack", "--values", "3,x", "--weights", "2", "-W", 1, "-V", 1)[0] == 1
        assert run(capsys, "knapsack", "--values", "3,4", "--weights", "2", "-W", 1, "-V", 1)[0] == 1


class TestSimulate:
    def test_quasiflow_example(self, capsys):
        code, out, _ = run(capsys, "simulate", TWO_STATE, "--agent", "policy:cycle", "-T", 1000, "--seed", 7,
                           "--check", "quasiflow")
        assert code == 0 and out["max_abs_residual"] == 0 and out["passed"]

    def test_plain_run_and_trajectory(self, capsys, tmp_path):
        path = tmp_path / "run.jsonl"
        code, out, _ = run(capsys, "simulate", TWO_STATE, "-T", 50, "--seed", 3, "--trajectory", path)
        assert code == 0 and sum(out["counts"].values()) == 50
        lines = path.read_text().splitlines()
        assert len(lines) == 50 and json.loads(lines[0])["t"] == 1

    def test_deterministic(self, capsys):
        argv = ("simulate", TWO_STATE, "--agent", "forced", "-T", 300, "--seed", 11)
        assert run(capsys, *argv)[1] == run(capsys, *argv)[1]

    def test_pseudoregret(self, capsys):
        code, out, _ = run(capsys, "simulate", TWO_STATE, "--agent", "policy:cycle", "-T", 2000,
                           "--seeds", 20, "--check", "pseudoregret")
        assert code == 0 and out["passed"]

    def test_navigation_with_figure(self, capsys, tmp_path):
        fig = tmp_path / "nav.png"
        code, out, _ = run(capsys, "simulate", TWO_STATE, "--agent", "forced", "--check", "navigation",
                           "--horizons", "100,1000", "--figure", fig)
        assert code == 0 and len(out["distances"]) == 2 and fig.stat().st_size > 0

    def test_loglik(self, capsys):
        code, out, _ = run(capsys, "simulate", TWO_STATE, "--agent", "uniform", "-T", 200, "--seeds", 200,
                           "--check", "loglik", "--alt", DATA / "twostate_alt.json")
        assert code == 0 and out["passed"] and out["support_violations"] == 0

    def test_loglik_needs_alt(self, capsys):
        assert run(capsys, "simulate", TWO_STATE, "--check", "loglik")[0] == 2

    def test_forced_refused_for_stationary_checks(self, capsys):
        assert run(capsys, "simulate", TWO_STATE, "--agent", "forced", "--check", "pseudoregret")[0] == 2

    def test_bad_agent(self, capsys):
        assert run(capsys, "simulate", TWO_STATE, "--agent", "greedy")[0] == 1


def test_no_temp_files_left(capsys, tmp_path):
    run(capsys, "lb", TWO_STATE, "-o", tmp_path / "a.json", "--emit-mu", tmp_path / "mu.json")
    assert sorted(os.listdir(tmp_path)) == ["a.json", "mu.json"]
