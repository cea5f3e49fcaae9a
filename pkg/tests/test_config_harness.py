import csv
import io
import math

import numpy as np
import pytest

from powerrl.algorithms import Variant
from powerrl.checks import run_checks
from powerrl.cli import main
from powerrl.config import ConfigError, parse_config
from powerrl.harness import RESULT_COLUMNS, run_experiment, sweep
from powerrl.schedules import make_random_mdp

SMALL = """\
# tiny stationary config
mdp.S = 3
mdp.A = 2
mdp.H = 3
run.K = 25
run.seeds = 0-2
"""


def write(tmp_path, text, name="exp.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_variant_parses():
    cfg = parse_config(SMALL + "algo.variant = power\n")
    assert cfg.variant is Variant.POWER
    assert parse_config(SMALL + "algo.variant = powerpp\n").variant is Variant.POWERPP


def test_delta_out_of_range():
    with pytest.raises(ConfigError, match=r"delta must lie in \(0,1\]") as err:
        parse_config(SMALL + "algo.delta = 1.5\n")
    assert err.value.line == 7


def test_default_c_beta_is_echoed():
    cfg = parse_config(SMALL)
    assert cfg["algo.c_beta"] == 1.0
    assert "algo.c_beta = 1.0\n" in cfg.echo()


@pytest.mark.parametrize("text, line, fragment", [
    ("mdp.S = 3\nmdp.bogus = 1\nrun.K = 5\n", 2, "unknown key"),
    ("mdp.S = 3\n\nmdp.A = two\nrun.K = 5\n", 3, "mdp.A"),
    ("mdp.S = 3\nmdp.A = 2\n", 3, "missing required key 'run.K'"),
    ("run.K = 5\nrun.K = 6\n", 2, "duplicate key"),
    ("run.K = 5\njust words\n", 2, "expected 'key = value'"),
    ("run.K = 5\nschedule.kind = sawtooth\n", 2, "must be one of"),
    ("run.K = 5\nrun.seeds = 4-1\n", 2, "empty seed range"),
    ("run.K = 5\nschedule.kind = piecewise\nschedule.num_changes = 5\n", 3, "num_changes must be < run.K"),
    ("run.K = 5\nschedule.kind = adaptive\n", None, "pt_bound"),
])
def test_parse_errors_carry_line_numbers(text, line, fragment):
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert fragment in str(err.value)
    assert err.value.line == line


def test_seed_lists():
    assert parse_config("run.K = 2\nrun.seeds = 0-3\n")["run.seeds"] == (0, 1, 2, 3)
    assert parse_config("run.K = 2\nrun.seeds = 5, 1,9\n")["run.seeds"] == (5, 1, 9)


def test_manual_mode_needs_rates():
    with pytest.raises(ConfigError):
        parse_config("run.K = 5\nalgo.hp_mode = manual\nalgo.alpha = 0.1\n")
    cfg = parse_config("run.K = 5\nalgo.hp_mode = manual\nalgo.alpha = 0.1\nalgo.tau = 2\n")
    assert cfg["algo.tau"] == 2


def test_config_hash_tracks_values():
    a, b = parse_config(SMALL), parse_config(SMALL + "# comment only\n")
    assert a.hash == b.hash
    assert a.hash != parse_config(SMALL + "algo.c_beta = 0.5\n").hash


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_results_are_byte_identical(tmp_path):
    cfg = parse_config(SMALL + "schedule.kind = piecewise\nschedule.num_changes = 3\n")
    run_experiment(cfg, tmp_path / "a")
    run_experiment(cfg, tmp_path / "b", workers=2)
    for name in ("results.csv", "diagnostics.csv", "summary.csv", "config.echo"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    raw = (tmp_path / "a" / "results.csv").read_bytes()
    assert b"\r\n" not in raw
    assert raw.decode("utf-8").splitlines()[0] == ",".join(RESULT_COLUMNS)


def test_result_rows_contract(tmp_path):
    cfg = parse_config(SMALL + "schedule.kind = drift\nrun.initial_state = random\n")
    run_experiment(cfg, tmp_path)
    rows = read_csv(tmp_path / "results.csv")
    assert len(rows) == 3 * 25
    for seed in (0, 1, 2):
        mine = [r for r in rows if r["seed"] == str(seed)]
        assert [int(r["episode"]) for r in mine] == list(range(1, 26))
        reg = [float(r["cum_dynamic_regret"]) for r in mine]
        assert all(b >= a for a, b in zip(reg, reg[1:]))
        assert all(r["decomposition_residual"] == "" for r in mine[:-1])
        assert mine[-1]["decomposition_residual"] != ""
        assert all(r["wall_time"] == "" for r in mine)
        assert {r["config_hash"] for r in mine} == {cfg.hash}


def test_record_time_fills_last_row(tmp_path):
    run_experiment(parse_config(SMALL), tmp_path, record_time=True)
    rows = read_csv(tmp_path / "results.csv")
    assert rows[24]["wall_time"] != "" and rows[23]["wall_time"] == ""


def test_summary_recomputes_from_rows(tmp_path):
    cfg = parse_config(SMALL.replace("0-2", "0-4") + "schedule.kind = piecewise\nschedule.num_changes = 4\n")
    run_experiment(cfg, tmp_path)
    rows = read_csv(tmp_path / "results.csv")
    summary = {r["metric"]: r for r in read_csv(tmp_path / "summary.csv")}
    finals = [r for r in rows if r["episode"] == "25"]
    for metric, col in (("final_dynamic_regret", "cum_dynamic_regret"), ("realized_PT", "pt_so_far"),
                        ("realized_DT", "dt_so_far"), ("cum_bonus_sum", "cum_bonus_sum")):
        x = np.array([float(r[col]) for r in finals])
        assert float(summary[metric]["mean"]) == x.mean()
        assert float(summary[metric]["stderr"]) == x.std(ddof=1) / math.sqrt(len(x))
    resid = max(abs(float(r["decomposition_residual"])) for r in finals)
    assert float(summary["max_abs_decomposition_residual"]["mean"]) == resid


def test_cli_run_exit_status(tmp_path, capsys):
    cfg = write(tmp_path, SMALL)
    assert main(["run", str(cfg), "--out", str(tmp_path / "out")]) == 0
    assert (tmp_path / "out" / "results.csv").exists()
    assert "final_dynamic_regret" in capsys.readouterr().out


def test_cli_reports_config_errors(tmp_path, capsys):
    cfg = write(tmp_path, "run.K = 5\nalgo.delta = 1.5\n")
    assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "line 2" in capsys.readouterr().err


def test_cli_fails_on_broken_invariant(tmp_path, monkeypatch):
    import powerrl.harness as harness

    monkeypatch.setattr(harness, "verify_bonus_sum", lambda trace, hp, d: (1.0, 0.5, False))
    cfg = write(tmp_path, SMALL)
    assert main(["run", str(cfg), "--out", str(tmp_path / "o")]) == 1
    diag = read_csv(tmp_path / "o" / "diagnostics.csv")
    assert {d["invariants_ok"] for d in diag} == {"0"}


def test_cli_seed_offset(tmp_path):
    cfg = write(tmp_path, SMALL)
    main(["run", str(cfg), "--out", str(tmp_path / "a"), "--seed-offset", "10"])
    seeds = {r["seed"] for r in read_csv(tmp_path / "a" / "results.csv")}
    assert seeds == {"10", "11", "12"}


def test_sweep_over_k_reports_slope(tmp_path, capsys):
    cfg = write(tmp_path, SMALL)
    assert main(["sweep", str(cfg), "--axis", "run.K", "--values", "10,20,40", "--out", str(tmp_path / "s")]) == 0
    summary = read_csv(tmp_path / "s" / "sweep_summary.csv")
    assert summary[0]["loglog_slope_dynamic_regret_vs_T"] != ""
    assert (tmp_path / "s" / "run.K=20" / "results.csv").exists()
    assert "log-log slope" in capsys.readouterr().out


def test_sweep_rejects_unknown_axis(tmp_path):
    cfg = write(tmp_path, SMALL)
    assert main(["sweep", str(cfg), "--axis", "mdp.colour", "--values", "1", "--out", str(tmp_path / "s")]) == 2


def test_more_change_points_more_policy_variation():
    cfg = parse_config("mdp.S = 8\nmdp.A = 4\nmdp.H = 5\nschedule.kind = piecewise\nrun.K = 200\nrun.seeds = 0-19\n"
                       "algo.pt_bound = 0\n")
    res = sweep(cfg, "schedule.num_changes", [0, 4, 16])
    pt = res.metric("realized_PT")
    assert pt[0] == 0.0 and pt[0] <= pt[1] <= pt[2]


def test_larger_bonus_fewer_ucb_violations():
    cfg = parse_config("mdp.S = 8\nmdp.A = 4\nmdp.H = 5\nschedule.kind = drift\nrun.K = 150\nrun.seeds = 0-19\n"
                       "algo.delta = 0.01\n")
    rates = sweep(cfg, "algo.c_beta", [0.01, 0.1, 1.0]).metric("ucb_violation_rate")
    assert rates[0] >= rates[1] >= rates[2]


def test_uniform_baseline_is_worse_on_smoke_config():
    base = ("mdp.S = 8\nmdp.A = 4\nmdp.H = 5\nschedule.kind = stationary\nrun.K = 300\nrun.seeds = 0-19\n"
            "algo.pt_bound = 0\nalgo.c_beta = 0.1\n")
    power = run_experiment(parse_config(base + "algo.variant = power\n"))
    uniform = run_experiment(parse_config(base + "algo.variant = uniform-baseline\n"))
    assert uniform.ok and power.ok
    assert uniform.metric("final_dynamic_regret") >= power.metric("final_dynamic_regret")


def test_check_passes_on_defaults(tmp_path, capsys):
    cfg = write(tmp_path, "run.K = 60\nrun.seeds = 0\n")
    assert main(["check", str(cfg)]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "checks passed" in out


def test_check_flags_corrupted_kernel(tmp_path, capsys):
    P = make_random_mdp(3, 2, 2, seed=0).P.copy()
    P[1, 2, 0] = [0.5, 0.3, 0.1]
    np.save(tmp_path / "kernel.npy", P)
    cfg = write(tmp_path, f"mdp.kernel_file = {tmp_path / 'kernel.npy'}\nrun.K = 10\n")
    assert main(["check", str(cfg)]) == 1
    out = capsys.readouterr().out
    assert "FAIL  kernel validity" in out and "(h=1, s=2, a=0)" in out


def test_check_relabel_invariance_included():
    names = [r.name for r in run_checks(parse_config("run.K = 20\n"))]
    assert "V* invariant under action relabeling" in names


def test_oracle_output(tmp_path, capsys):
    cfg = write(tmp_path, SMALL + "schedule.kind = piecewise\nschedule.num_changes = 5\n")
    assert main(["oracle", str(cfg)]) == 0
    out = capsys.readouterr().out
    header, body = out.split("\n", 1)
    assert header.startswith("# seed=0 realized_PT=")
    rows = list(csv.DictReader(io.StringIO(body)))
    assert len(rows) == 25
    pt = float(header.split("realized_PT=")[1].split()[0])
    assert sum(float(r["pt_contribution"]) for r in rows) == pytest.approx(pt)
