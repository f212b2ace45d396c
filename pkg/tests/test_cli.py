import json

import pytest

from advdistill import __version__, pipeline
from advdistill.cli import main, parse_seeds
from advdistill.evaluation import load_table_csv
from advdistill.pipeline import DivergenceError

TINY = ["--per-class", "40", "--epochs1", "1", "--epochs2", "1", "--preset", "desk", "--no-checkpoints"]


def _count(path):
    return sum(1 for line in open(path) if line.strip())


def _tokens(path):
    return {t for line in open(path) for t in json.loads(line)["tokens"]}


def test_gen_data_default_sizes(tmp_path):
    assert main(["gen-data", "--out", str(tmp_path / "d")]) == 0
    d = tmp_path / "d"
    sizes = [_count(d / f"{s}.jsonl") for s in ("source_train", "source_dev", "target_train", "target_eval")]
    assert sizes == [1600, 400, 1600, 2000]
    manifest = json.loads((d / "manifest.json").read_text())
    assert manifest["meta"]["generator"]["pivot_fraction"] == 0.3


def test_gen_data_rho_one_shares_tokens(tmp_path):
    main(["gen-data", "--out", str(tmp_path / "same"), "--rho", "1.0"])
    main(["gen-data", "--out", str(tmp_path / "shift"), "--rho", "0.3"])
    same, shift = tmp_path / "same", tmp_path / "shift"
    assert _tokens(same / "source_train.jsonl") == _tokens(same / "target_eval.jsonl")
    # non-pivot class words of the source never occur in the target
    assert _tokens(shift / "source_train.jsonl") - _tokens(shift / "target_eval.jsonl")


def test_gen_data_rerun_byte_identical(tmp_path):
    for name in ("a", "b"):
        main(["gen-data", "--out", str(tmp_path / name), "--per-class", "50", "--data-seed", "3"])
    for f in ("manifest.json", "source_train.jsonl", "source_dev.jsonl", "target_train.jsonl",
              "target_eval.jsonl"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_gen_data_infeasible_is_usage_error(tmp_path, capsys):
    assert main(["gen-data", "--out", str(tmp_path), "--vocab-size", "50"]) == 2
    assert "vocab_size" in capsys.readouterr().err


def test_run_cardinality_and_outputs(tmp_path):
    code = main(["run", "--methods", "baseline,aad", "--seeds", "5", "--out", str(tmp_path),
                 "--name", "exp", *TINY])
    assert code == 0
    out = tmp_path / "exp"
    table = load_table_csv((out / "results.csv").read_text())
    assert [(r.method, r.n) for r in table.rows] == [("baseline", 5), ("aad", 5)]
    assert table.meta["version"] == __version__ and table.meta["seeds"] == [0, 1, 2, 3, 4]
    assert table.meta["config"]["lr1"] == 1e-3
    assert len(list((out / "traces").iterdir())) == 10
    trace = json.loads(next((out / "traces").iterdir()).read_text())
    assert trace["meta"]["seeds"] == [0, 1, 2, 3, 4] and "config" in trace["run"]
    doc = json.loads((out / "results.json").read_text())
    assert doc["meta"]["config"] == table.meta["config"]
    assert (out / "results.md").read_text().startswith("| Source → Target |")


def test_run_checkpoints(tmp_path):
    args = [a for a in TINY if a != "--no-checkpoints"]
    assert main(["run", "--methods", "baseline", "--seeds", "1", "--out", str(tmp_path), "--name", "c",
                 *args]) == 0
    assert [p.name for p in (tmp_path / "c" / "checkpoints").iterdir()] == \
        ["synthetic-rho0.3-seed0__baseline__seed0.json"]


def test_run_deterministic_bytes(tmp_path):
    for name in ("a", "b"):
        main(["run", "--methods", "baseline,adda", "--seeds", "0,2", "--out", str(tmp_path),
              "--name", name, *TINY])
    assert (tmp_path / "a" / "results.csv").read_bytes() == (tmp_path / "b" / "results.csv").read_bytes()


def test_dry_run_echoes_temperature(tmp_path, capsys):
    code = main(["run", "--method", "aad", "--temperature", "20", "--dry-run", "--out", str(tmp_path)])
    assert code == 0
    out = capsys.readouterr().out
    assert "temperature = 20.0" in out and "# runs: 5" in out
    assert not any(tmp_path.iterdir())


def test_config_precedence(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("# comment\nlr1 = 0.002\ntemperature = 7\nclip-norm = 3.0\n")
    main(["run", "--dry-run", "--preset", "desk", "--config", str(cfg), "-t", "9"])
    out = capsys.readouterr().out
    assert "lr1 = 0.002" in out          # file beats preset
    assert "temperature = 9.0" in out    # flag beats file
    assert "clip_norm = 3.0" in out
    assert "lr2 = 0.0005" in out         # preset beats defaults


@pytest.mark.parametrize("argv", [
    ["run", "--lr1", "0"],
    ["run", "--methods", "aad,bogus"],
    ["run", "--methods", "aad:nonsense=1"],
    ["run", "--seeds", "0"],
    ["sweep", "--temperatures", "0,1"],
    ["run", "--data", "/nonexistent/manifest.json"],
])
def test_bad_config_exits_two(argv, capsys):
    with pytest.raises(SystemExit) as info:
        raise SystemExit(main([*argv, "--dry-run"]))
    assert info.value.code == 2


def test_unknown_config_file_key(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("learning_rate = 1\n")
    assert main(["run", "--dry-run", "--config", str(cfg)]) == 2


def test_run_failure_exits_one(tmp_path, monkeypatch, capsys):
    def boom(*a, **k):
        raise DivergenceError("non-finite gen_loss at update 1", {})

    monkeypatch.setattr(pipeline, "step2_adapt_aad", boom)
    code = main(["run", "--methods", "baseline,aad", "--seeds", "0,1", "--out", str(tmp_path), *TINY])
    assert code == 1
    err = capsys.readouterr().err
    assert "pair=synthetic-rho0.3-seed0 method=aad seed=1" in err
    # outputs are still written
    assert (tmp_path / "run-synthetic-rho0.3-seed0" / "results.csv").exists()


def test_output_root_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("ADVDISTILL_OUT", str(tmp_path / "envroot"))
    assert main(["run", "--methods", "baseline", "--seeds", "1", *TINY]) == 0
    assert (tmp_path / "envroot" / "run-synthetic-rho0.3-seed0" / "results.csv").exists()


def test_manifest_input(tmp_path):
    main(["gen-data", "--out", str(tmp_path / "d"), "--per-class", "40"])
    code = main(["run", "--data", str(tmp_path / "d" / "manifest.json"), "--methods", "baseline,coral",
                 "--seeds", "1", "--out", str(tmp_path), "--name", "m", *TINY[2:]])
    assert code == 0
    table = load_table_csv((tmp_path / "m" / "results.csv").read_text())
    assert table.pairs == ["synthetic-rho0.3-seed0"]


def test_multiple_rho_pairs(tmp_path, capsys):
    main(["run", "--rho", "1.0,0.3", "--dry-run", "--seeds", "2"])
    out = capsys.readouterr().out
    assert "synthetic-rho1-seed0, synthetic-rho0.3-seed0" in out and "# runs: 8" in out


def test_sweep_shape_dry_run(capsys):
    assert main(["sweep", "--dry-run"]) == 0
    out = capsys.readouterr().out
    assert "# methods: t=1, t=2, t=5, t=10, t=20, t=50, supervised" in out
    assert "# runs: 35" in out


def test_sweep_runs_supervised_objective(tmp_path):
    code = main(["sweep", "--temperatures", "1,20", "--seeds", "1", "--out", str(tmp_path),
                 "--name", "s", *TINY])
    assert code == 0
    doc = json.loads((tmp_path / "s" / "results.json").read_text())
    assert [r["method"] for r in doc["rows"]] == ["t=1", "t=20", "supervised"]
    methods = {m["label"]: m for m in doc["meta"]["methods"]}
    assert methods["supervised"]["method"] == "aad-supervised"
    assert methods["t=20"]["overrides"] == {"temperature": 20.0}
    run = json.loads((tmp_path / "s" / "traces" /
                      "synthetic-rho0.3-seed0__t_20__seed0.json").read_text())["run"]
    assert run["config"]["temperature"] == 20.0 and "step2.kd_loss" in run["traces"]
    sup = json.loads((tmp_path / "s" / "traces" /
                      "synthetic-rho0.3-seed0__supervised__seed0.json").read_text())["run"]
    assert sup["config"]["method"] == "aad-supervised" and "step2.kd_loss" not in sup["traces"]


def test_parse_seeds():
    assert parse_seeds("3") == [0, 1, 2]
    assert parse_seeds("4,9") == [4, 9]
    assert parse_seeds("7,") == [7]
