import json

import pytest

from rcnas.cli import build_parser, main
from rcnas.search_space import ArchitectureDescriptor, baseline_preset, preset, validate

TINY = """\
[encoder]
hidden_dim = 16
layers = 1
heads = 2
ffn_dim = 32
max_len = 64

[search]
n_d = 4
n_final = 6
n_finalists = 3
n_copies = 2

[eval]
n_hp_trials = 2
n_repeats = 2
n_evaluate = 1
epochs = 1
random_models = 2
random_runs = 2
"""

SUBCOMMANDS = ("search", "evaluate", "baseline", "ablate", "synth-data", "report")


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth-data", "--out", str(root / "data"), "--train", "160", "--dev", "48",
                 "--test", "48", "--seed", "3"]) == 0
    task = "[task]\n" + "".join(f"{k} = data/{f}\n" for k, f in
                                (("train", "train.jsonl"), ("dev", "dev.jsonl"),
                                 ("test", "test.jsonl"), ("schema", "schema.txt")))
    (root / "run.cfg").write_text(task + "name = synthetic\n\n" + TINY)
    return root


def _run(ws, *argv):
    return main([argv[0], "--config", str(ws / "run.cfg"), *argv[1:]])


def _files(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir()) if p.is_file()}


def test_help_lists_every_flag_with_default(capsys):
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    assert set(sub.choices) == set(SUBCOMMANDS)
    for name, p in sub.choices.items():
        text = " ".join(p.format_help().split())
        for action in p._actions:
            if not action.option_strings or action.dest == "help":
                continue
            assert action.option_strings[-1] in text, (name, action.dest)
            assert action.help and "(default:" in text
        assert text.count("(default:") >= sum(1 for a in p._actions if a.option_strings and a.dest != "help")


def test_synth_data_writes_a_task(workspace):
    data = workspace / "data"
    assert {p.name for p in data.iterdir()} >= {"train.jsonl", "dev.jsonl", "test.jsonl", "schema.txt", "task.cfg"}
    assert len((data / "train.jsonl").read_text().splitlines()) == 160


def test_search_writes_finalists(workspace, capsys):
    out = workspace / "search"
    assert _run(workspace, "search", "--output", str(out), "--seed", "1") == 0
    finalists = (out / "finalists.txt").read_text().splitlines()
    assert 1 <= len(finalists) <= 3
    for line in finalists:
        validate(ArchitectureDescriptor.from_index_string(line.split()[0]), preset("SS"))
    assert "wall_times.txt" not in {p.name for p in out.iterdir()}
    assert (out / "resolved.cfg").is_file()
    assert len(capsys.readouterr().out.splitlines()) == len(finalists)


def test_space_flag_restricts_search(workspace):
    out = workspace / "restricted"
    assert _run(workspace, "search", "--output", str(out), "--space", "SS-no_inte") == 0
    info = json.loads((out / "run.json").read_text())
    assert info["space"] == "SS-no_inte" and info["cardinality"] == 900_000
    space = preset("SS-no_inte")
    for line in (out / "finalists.txt").read_text().splitlines():
        validate(ArchitectureDescriptor.from_index_string(line.split()[0]), space)
    assert main(["report", str(out)]) == 0
    assert "cardinality: 900000" in (out / "summary.txt").read_text()


def test_timings_are_opt_in(workspace):
    out = workspace / "timed"
    assert _run(workspace, "search", "--output", str(out), "--timings", "--set", "search.n_d=2") == 0
    assert len((out / "wall_times.txt").read_text().splitlines()) == 2


def test_report_reward_curve(workspace):
    out = workspace / "curve"
    assert _run(workspace, "search", "--output", str(out), "--set", "search.n_d=5") == 0
    assert main(["report", str(out)]) == 0
    rows = (out / "reward_curve.tsv").read_text().splitlines()
    assert rows[0].split("\t") == ["iteration", "reward", "baseline", "diverged"]
    assert len(rows) == 1 + 5
    assert [int(r.split("\t")[0]) for r in rows[1:]] == list(range(5))


def test_every_command_is_reproducible(workspace):
    desc = workspace / "baseline.desc"
    desc.write_text(baseline_preset().to_index_string() + "\n")
    commands = [
        ("search",),
        ("evaluate", str(desc)),
        ("baseline",),
        ("ablate", "--spaces", "SS-no_inte-start_pool-no_contexts", "BASELINE"),
        ("ablate", "--copies", "2", "1", "--space", "SS-no_inte-start_pool-no_contexts"),
    ]
    for i, cmd in enumerate(commands):
        out = workspace / f"repro{i}"
        assert _run(workspace, *cmd, "--output", str(out), "--seed", "5") == 0
        assert main(["report", str(out)]) == 0
        first = _files(out)
        assert _run(workspace, *cmd, "--output", str(out), "--seed", "5") == 0
        assert main(["report", str(out)]) == 0
        assert _files(out) == first, cmd
    out = workspace / "synth-again"
    for _ in range(2):
        assert main(["synth-data", "--out", str(out), "--train", "20", "--dev", "5", "--test", "5"]) == 0
        files = _files(out)
    assert files == _files(workspace / "synth-again")


def test_evaluate_baseline_matches_ablation_row(workspace):
    desc = workspace / "BASELINE.desc"
    desc.write_text(baseline_preset().to_text())
    assert _run(workspace, "evaluate", str(desc), "--output", str(workspace / "ev")) == 0
    assert _run(workspace, "ablate", "--spaces", "BASELINE", "--output", str(workspace / "ab")) == 0
    ev = json.loads((workspace / "ev" / "report.json").read_text())["rows"][0]
    ab = json.loads((workspace / "ab" / "report.json").read_text())["rows"][0]
    assert ev["name"] == ab["name"] == "BASELINE"
    assert ev == ab


def test_ablation_table_order(workspace):
    out = workspace / "order"
    spaces = ["BASELINE", "SS-no_inte-start_pool-no_contexts", "SS-no_inte-start_pool"]
    assert _run(workspace, "ablate", "--spaces", *spaces, "--output", str(out)) == 0
    assert main(["report", str(out)]) == 0
    lines = (out / "summary.txt").read_text().splitlines()
    names = [l.split()[0] for l in lines if l.startswith(("SS", "BASELINE"))]
    assert names == ["SS-no_inte-start_pool", "SS-no_inte-start_pool-no_contexts", "BASELINE"]
    assert "cardinality[SS-no_inte-start_pool]: 288" in lines


def test_task_flag_swaps_the_dataset(workspace, tmp_path):
    assert main(["synth-data", "--out", str(tmp_path / "other"), "--labels", "3", "--train", "60",
                 "--dev", "20", "--test", "20", "--name", "other", "--seed", "8"]) == 0
    desc = tmp_path / "b.desc"
    desc.write_text(baseline_preset().to_index_string())
    out = tmp_path / "run"
    assert _run(workspace, "evaluate", str(desc), "--task", str(tmp_path / "other" / "task.cfg"),
                "--output", str(out)) == 0
    assert json.loads((out / "report.json").read_text())["task"] == "other"
    assert json.loads((out / "run.json").read_text())["task"] == "other"


def test_missing_data_path_exits_2(workspace, tmp_path, capsys):
    missing = tmp_path / "nowhere" / "train.jsonl"
    code = _run(workspace, "search", "--output", str(tmp_path / "o"), "--set", f"task.train={missing}")
    assert code == 2
    assert str(missing) in capsys.readouterr().err


def test_missing_task_section_exits_2(tmp_path, capsys):
    assert main(["search", "--output", str(tmp_path)]) == 2
    assert "[task]" in capsys.readouterr().err


def test_invalid_descriptor_names_the_dimension(workspace, tmp_path, capsys):
    bad = baseline_preset().to_index_string().split(",")
    bad[2] = "9"
    desc = tmp_path / "bad.desc"
    desc.write_text(",".join(bad))
    assert _run(workspace, "evaluate", str(desc), "--output", str(tmp_path / "o")) == 2
    assert "pool_e1" in capsys.readouterr().err
    desc.write_text(baseline_preset().to_text().replace("use_e1=true", "use_e1=maybe"))
    assert _run(workspace, "evaluate", str(desc), "--output", str(tmp_path / "o")) == 2
    assert "use_e1" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["search", "--set", "search.n_dd=3"],
    ["search", "--set", "search.n_d=lots"],
    ["ablate", "--spaces", "SS-bogus"],
    ["report", "/nonexistent/run"],
])
def test_usage_errors_exit_2(workspace, tmp_path, argv):
    if argv[0] != "report":
        argv = [argv[0], "--config", str(workspace / "run.cfg"), "--output", str(tmp_path), *argv[1:]]
    assert main(argv) == 2


def test_argparse_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["search", "--space", "SS-tiny"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2


def test_runtime_failure_exits_1(workspace, tmp_path, monkeypatch, capsys):
    import rcnas.cli as cli

    def boom(*args, **kwargs):
        raise RuntimeError("controller exploded")

    monkeypatch.setattr(cli, "search", boom)
    assert _run(workspace, "search", "--output", str(tmp_path)) == 1
    assert "controller exploded" in capsys.readouterr().err


def test_report_without_logs_exits_2(tmp_path):
    assert main(["report", str(tmp_path)]) == 2


def test_finalists_feed_evaluate(workspace):
    out = workspace / "search"
    if not (out / "finalists.txt").is_file():
        assert _run(workspace, "search", "--output", str(out), "--seed", "1") == 0
    finalists = (out / "finalists.txt").read_text().splitlines()
    ev = workspace / "finalists-eval"
    assert _run(workspace, "evaluate", str(out / "finalists.txt"), "--output", str(ev)) == 0
    rows = json.loads((ev / "report.json").read_text())["rows"]
    assert [r["descriptor"] for r in rows] == finalists
    assert [r["name"] for r in rows] == [f"finalists#{i}" for i in range(len(finalists))]
