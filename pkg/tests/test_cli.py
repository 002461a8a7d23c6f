import json


from annuity_survival.cli import main

BASE = {
    "model": {"a": 0.15, "sigma": 0.3, "c": 1.0, "lambda": 2.0},
    "jumps": {"type": "exponential", "rate": 1.0},
    "grid": {"u_max": 20, "n": 200, "stretch": 4},
    "sim": {"dt": 0.002, "n_paths": 1500, "t_max": 100, "barrier": "auto", "seed": 3},
    "validation": {"u_list": [0.5, 2], "dpp_paths": 1500, "lemma1_samples": 500,
                   "comparison_trials": 5},
}


def write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def merge(**blocks):
    cfg = json.loads(json.dumps(BASE))
    for k, v in blocks.items():
        if v is None:
            cfg.pop(k, None)
        else:
            cfg[k] = {**cfg.get(k, {}), **v} if isinstance(v, dict) else v
    return cfg


def test_solve_writes_csv_and_diagnostics(tmp_path):
    out = tmp_path / "phi.csv"
    assert main(["solve", "--config", write(tmp_path, BASE), "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    diag = json.loads((tmp_path / "phi.diagnostics.json").read_text())
    assert lines[0] == "u,phi" and lines[-1].startswith("inf,")
    assert len(lines) - 1 == diag["n_nodes"] + 1  # N+1 nodes plus far-field row
    assert diag["residual_norm"] <= 1e-10


def test_net_profit_violation_exit_2(tmp_path, capsys):
    cfg = merge(model={"a": 0.045})
    assert main(["solve", "--config", write(tmp_path, cfg), "--out", str(tmp_path / "x.csv")]) == 2
    assert "net-profit" in capsys.readouterr().err


def test_missing_file_exit_2(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "nope.json")]) == 2


def test_unknown_key_exit_2(tmp_path, capsys):
    cfg = merge(model={"mu": 1.0})
    assert main(["solve", "--config", write(tmp_path, cfg)]) == 2
    assert "mu" in capsys.readouterr().err


def test_simulate_zero_payout(tmp_path):
    cfg = merge(model={"c": 0.0}, sim={"barrier": 10, "n_paths": 300})
    out = tmp_path / "est.json"
    assert main(["simulate", "--config", write(tmp_path, cfg), "--u", "1", "--out", str(out)]) == 0
    est = json.loads(out.read_text())
    assert est["lower"] == 1.0 and est["upper"] == 1.0 and est["indeterminate"] == 0


def test_simulate_is_byte_identical(tmp_path, monkeypatch):
    path = write(tmp_path, merge(sim={"n_paths": 400}))
    a, b, c = (tmp_path / n for n in ("a.json", "b.json", "c.json"))
    assert main(["simulate", "--config", path, "--u", "2", "--out", str(a)]) == 0
    assert main(["simulate", "--config", path, "--u", "2", "--out", str(b), "--threads", "3"]) == 0
    monkeypatch.setenv("ANNUITY_SURVIVAL_THREADS", "2")
    assert main(["simulate", "--config", path, "--u", "2", "--out", str(c)]) == 0
    assert a.read_bytes() == b.read_bytes() == c.read_bytes()


def test_simulate_seed_override_and_paths_csv(tmp_path):
    path = write(tmp_path, merge(sim={"n_paths": 200}))
    out, paths = tmp_path / "e.json", tmp_path / "p.csv"
    assert main(["simulate", "--config", path, "--u", "1", "--seed", "77", "--out", str(out),
                 "--paths-csv", str(paths)]) == 0
    assert json.loads(out.read_text())["seed"] == 77
    assert len(paths.read_text().splitlines()) == 201


def test_simulate_zero_paths_exit_2(tmp_path):
    cfg = merge(sim={"n_paths": 0})
    assert main(["simulate", "--config", write(tmp_path, cfg), "--u", "1"]) == 2


def test_simulate_requires_positive_u(tmp_path):
    assert main(["simulate", "--config", write(tmp_path, BASE), "--u", "0"]) == 2


def test_validate_small_config_passes(tmp_path, capsys):
    out = tmp_path / "report.json"
    assert main(["validate", "--config", write(tmp_path, BASE), "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["passed"] and report["checks"]
    assert "cross_validate_u=2" in capsys.readouterr().out


def test_validate_zero_allowance_fails(tmp_path, capsys):
    cfg = merge(validation={"allowance": 0})
    out = tmp_path / "report.json"
    assert main(["validate", "--config", write(tmp_path, cfg), "--out", str(out)]) == 1
    assert "discretization_allowance" in capsys.readouterr().err
    assert out.exists() and not json.loads(out.read_text())["passed"]


def test_validate_empirical_warns(tmp_path):
    cfg = merge(jumps={"type": "empirical", "points": [[0.5, 0.5], [1.5, 0.5]]})
    cfg["jumps"].pop("rate")
    out = tmp_path / "report.json"
    assert main(["validate", "--config", write(tmp_path, cfg), "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert any("support" in w for w in report["warnings"])


def test_convergence_three_grids(tmp_path):
    out = tmp_path / "conv.csv"
    assert main(["convergence", "--config", write(tmp_path, BASE), "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "h,error"
    assert len(lines) == 1 + 3 + 2
    order = float(lines[4].split(",")[1])
    assert order >= 1.8
    assert lines[5].startswith("tail_slope_exploratory,")


def test_convergence_two_grids_exit_2(tmp_path):
    cfg = merge(convergence={"n_list": [100, 200]})
    assert main(["convergence", "--config", write(tmp_path, cfg), "--out", str(tmp_path / "c.csv")]) == 2


def test_convergence_exact_case(tmp_path):
    cfg = merge(convergence={"test_function": "one"})
    out = tmp_path / "conv.csv"
    assert main(["convergence", "--config", write(tmp_path, cfg), "--out", str(out)]) == 0
    assert "order,exact" in out.read_text().splitlines()
