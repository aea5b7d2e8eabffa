import json

import pytest
import yaml

from crosschain_tracer.cli import build_parser, main
from crosschain_tracer.dataset_io import Dataset, Tier


@pytest.fixture
def small_dataset(data_dir, tmp_path):
    directory = tmp_path / "small"
    assert main(["simulate", str(data_dir / "world-small.yaml"), "--dataset", str(directory)]) == 0
    return directory


def _problem(capsys) -> dict:
    err = capsys.readouterr().err.strip().splitlines()
    return json.loads(err[-1])


def test_simulate_writes_every_tier(capsys, small_dataset):
    dataset = Dataset(small_dataset)

    assert [m.tier for m in dataset.manifest.tiers] == list(Tier)
    assert len(dataset.truth.links) == 3
    assert capsys.readouterr().out.startswith(f"dataset {small_dataset}")


def test_simulate_seed_override(data_dir, tmp_path):
    main(["simulate", str(data_dir / "world-small.yaml"), "--dataset", str(tmp_path / "a"), "--seed", "5"])

    assert Dataset(tmp_path / "a").manifest.tier(Tier.raw).provenance.seed == 5


def test_trace_single_ranks_the_planted_source_first(small_dataset, tmp_path):
    link = Dataset(small_dataset).truth.links[0]
    out = tmp_path / "report.json"

    code = main(
        [
            "trace-single",
            "--dataset",
            str(small_dataset),
            "--target",
            link.dst.key,
            "--format",
            "structured",
            "--out",
            str(out),
        ]
    )

    assert code == 0
    report = json.loads(out.read_text())
    assert report["target"] == link.dst.key
    assert report["candidates"][0]["src"] == link.src.tx_id
    assert report["candidates"][0]["chain"] == link.src.chain


def test_trace_single_text_output(small_dataset, capsys):
    link = Dataset(small_dataset).truth.links[0]
    capsys.readouterr()

    main(["trace-single", "--dataset", str(small_dataset), "--target", link.dst.key, "--source-pair", "BTC/BTC"])

    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith(f"target {link.dst.key}")
    assert lines[1].split()[:2] == ["1", link.src.key]


def test_trace_config_file_is_applied(small_dataset, data_dir, tmp_path):
    link = Dataset(small_dataset).truth.links[0]
    out = tmp_path / "report.json"

    main(
        [
            "trace-single",
            "--dataset",
            str(small_dataset),
            "--target",
            link.dst.key,
            "--config",
            str(data_dir / "trace-config.yaml"),
            "--format",
            "structured",
            "--out",
            str(out),
        ]
    )

    config = json.loads(out.read_text())["config"]
    assert config["lambda"] == 600
    assert config["delta_t"] == 7200
    assert config["f_max"] == "0.08"


def test_investigation_from_the_command_line(small_dataset, tmp_path):
    link = Dataset(small_dataset).truth.links[0]
    out = tmp_path / "investigation.json"

    main(
        [
            "trace-single",
            "--dataset",
            str(small_dataset),
            "--target",
            link.dst.key,
            "--investigate",
            "--format",
            "structured",
            "--out",
            str(out),
        ]
    )

    report = json.loads(out.read_text())
    assert report["belief"]["bits"] == "111111"
    assert report["result"]["candidates"][0]["src"] == link.src.tx_id


def test_trace_group_finds_the_sybil_root(data_dir, tmp_path):
    world_spec = tmp_path / "world.yaml"
    world_spec.write_text("seed: 11\npairs:\n  - BTC/BTC->ETH/ETH\nswap_count: 0\nduration: 259200\n")
    directory = tmp_path / "sybil"
    main(["simulate", str(world_spec), "--dataset", str(directory), "--sybil", str(data_dir / "sybil.yaml")])
    root = Dataset(directory).truth.sybil["sybil-0"].root
    out = tmp_path / "group.json"

    code = main(
        [
            "trace-group",
            "--dataset",
            str(directory),
            "--scenario",
            "sybil-0",
            "--format",
            "structured",
            "--out",
            str(out),
        ]
    )

    assert code == 0
    report = json.loads(out.read_text())
    assert {"address": root, "hit": 5} == {k: v for k, v in report["common_ancestors"][0].items() if k in ("address", "hit")}


def _sybil_dataset(data_dir, tmp_path, **world):
    world_spec = tmp_path / "world.yaml"
    world_spec.write_text(yaml.safe_dump({"seed": 11, "pairs": ["BTC/BTC->ETH/ETH"], "swap_count": 0, **world}))
    directory = tmp_path / "sybil"
    main(["simulate", str(world_spec), "--dataset", str(directory), "--sybil", str(data_dir / "sybil.yaml")])
    return directory


def _group_report(directory, tmp_path, *extra):
    out = tmp_path / "group.json"
    code = main(
        ["trace-group", "--dataset", str(directory), "--scenario", "sybil-0", "--format", "structured"]
        + ["--out", str(out), *extra]
    )
    return code, json.loads(out.read_text()) if code == 0 else None


def test_trace_group_with_dust_traffic_uses_the_recorded_thresholds(data_dir, tmp_path):
    directory = _sybil_dataset(data_dir, tmp_path, duration=259200, background_rate=0.05, dust_rate=0.3)
    dataset = Dataset(directory)
    assert dataset.manifest.dust_thresholds
    assert dataset.ancestry_options().dust_thresholds == dataset.manifest.dust_thresholds

    code, report = _group_report(directory, tmp_path)

    assert code == 0
    top = report["common_ancestors"][0]
    assert (top["address"], top["hit"]) == (dataset.truth.sybil["sybil-0"].root, 5)


def test_dust_threshold_option_stops_the_ancestry_walk(data_dir, tmp_path):
    directory = _sybil_dataset(data_dir, tmp_path, duration=259200)
    root = Dataset(directory).truth.sybil["sybil-0"].root

    code, report = _group_report(directory, tmp_path, "--dust-threshold", "BTC=1000000")

    assert code == 0
    assert root not in [a["address"] for a in report["common_ancestors"]]


def test_branching_cap_must_be_positive(data_dir, tmp_path, capsys):
    directory = _sybil_dataset(data_dir, tmp_path, duration=259200)
    capsys.readouterr()

    code, _ = _group_report(directory, tmp_path, "--branching-cap", "0")

    assert code == 1
    assert _problem(capsys)["type"] == "cct/config-error"


def test_trace_group_from_a_targets_file(small_dataset, tmp_path, capsys):
    targets = tmp_path / "targets.txt"
    keys = [link.dst.key for link in Dataset(small_dataset).truth.links]
    targets.write_text("# destination transfers\n" + "\n".join(keys) + "\n")
    capsys.readouterr()

    assert main(["trace-group", "--dataset", str(small_dataset), "--targets", str(targets)]) == 0

    out = capsys.readouterr().out
    assert "common ancestors:" in out
    assert "degenerated targets:" in out


def test_unknown_scenario_is_reported(small_dataset, capsys):
    assert main(["trace-group", "--dataset", str(small_dataset), "--scenario", "sybil-9"]) == 1

    assert _problem(capsys)["type"] == "cct/config-error"


def test_evaluate_traces_the_tier(small_dataset, capsys):
    capsys.readouterr()

    assert main(["evaluate", "--dataset", str(small_dataset), "--tier", "raw"]) == 0

    lines = capsys.readouterr().out.splitlines()
    overall = next(line for line in lines if line.startswith("overall"))
    assert overall.split()[1:3] == ["3", "100.0"]
    assert lines[-1].startswith("config ")


def test_evaluate_written_reports(small_dataset, tmp_path):
    reports = tmp_path / "reports"
    traced, read_back = tmp_path / "traced.json", tmp_path / "read-back.json"
    common = ["--dataset", str(small_dataset), "--format", "structured"]

    main(["evaluate", *common, "--tier", "raw", "--reports", str(reports), "--out", str(traced)])
    main(["evaluate", *common, "--results", str(reports), "--out", str(read_back)])

    assert len(list(reports.glob("*.json"))) == 3
    first, second = json.loads(traced.read_text()), json.loads(read_back.read_text())
    assert first["overall"] == second["overall"]
    assert first["overall"]["recall"] == 100.0


def _simulate_and_evaluate(data_dir, root, swaps=None):
    sim, ingested = root / "sim", root / "ingested"
    main(["simulate", str(data_dir / "world-small.yaml"), "--dataset", str(sim), "--seed", "21"])
    swaps = swaps or sim / "swaps-raw.jsonl"
    main(["ingest", str(swaps), "--dataset", str(ingested), "--prices", str(sim / "prices"), "--seed", "21"])
    for name in ("sim", "ingested"):
        main(
            ["evaluate", "--dataset", str(root / name), "--tier", "raw", "--reports", str(root / f"{name}-reports")]
            + ["--format", "structured", "--out", str(root / f"{name}-eval.json")]
        )
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_pipeline_outputs_are_byte_identical_for_the_same_seed(data_dir, tmp_path):
    first = _simulate_and_evaluate(data_dir, tmp_path / "a")
    second = _simulate_and_evaluate(data_dir, tmp_path / "b", swaps=tmp_path / "a" / "sim" / "swaps-raw.jsonl")

    assert first.keys() == second.keys()
    assert first == second
    assert "ingested/manifest.json" in first
    assert len([k for k in first if k.startswith("ingested-reports/")]) == 3
    assert json.loads(first["ingested-eval.json"])["overall"]["recall"] == 100.0
    assert json.loads(first["sim-eval.json"])["overall"] == json.loads(first["ingested-eval.json"])["overall"]


def test_ingest(data_dir, tmp_path):
    out = tmp_path / "manifest.json"

    code = main(
        [
            "ingest",
            str(data_dir / "swaps-boundary.jsonl"),
            "--dataset",
            str(tmp_path / "ingested"),
            "--prices",
            str(data_dir / "prices"),
            "--format",
            "structured",
            "--out",
            str(out),
        ]
    )

    assert code == 0
    assert json.loads(out.read_text())["transfer_count"] == 10
    assert len(Dataset(tmp_path / "ingested").oracle) == 1


def test_lenient_ingest(data_dir, tmp_path):
    args = ["ingest", str(data_dir / "swaps-malformed.jsonl"), "--dataset", str(tmp_path / "d"), "--tiers", "raw"]

    assert main(args) == 1
    assert main([*args, "--no-strict"]) == 0


def test_missing_dataset_is_a_problem_on_stderr(tmp_path, capsys):
    code = main(["trace-single", "--dataset", str(tmp_path / "nothing"), "--target", "ETH:x"])

    assert code == 1
    problem = _problem(capsys)
    assert problem["status"] == 400
    assert problem["type"] == "cct/config-error"


def test_unknown_target_is_a_problem_on_stderr(small_dataset, capsys):
    code = main(["trace-single", "--dataset", str(small_dataset), "--target", "ETH:doesnotexist"])

    assert code == 1
    problem = _problem(capsys)
    assert problem["status"] == 404
    assert problem["tx-id"] == "doesnotexist"


def test_malformed_target_is_a_problem_on_stderr(small_dataset, capsys):
    assert main(["trace-single", "--dataset", str(small_dataset), "--target", "no-separator"]) == 1

    assert _problem(capsys)["status"] == 400


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["trace-single", "--bogus"],
        ["trace-single", "--dataset", "d"],
        ["trace-group", "--dataset", "d", "--targets", "t", "--scenario", "s"],
        ["trace-group", "--dataset", "d", "--targets", "t", "--dust-threshold", "BTC"],
        ["evaluate", "--dataset", "d", "--tier", "everything"],
        ["simulate", "w.yaml", "--dataset", "d", "--workers", "many"],
    ],
)
def test_usage_errors_are_a_single_problem_line(argv, capsys):
    assert main(argv) == 2

    err = capsys.readouterr().err
    assert err.endswith("\n")
    assert len(err.strip().splitlines()) == 1
    problem = json.loads(err)
    assert problem["type"] == "cct/config-error"
    assert problem["status"] == 400
    assert problem["detail"].startswith("cct")


def test_common_options_on_every_subcommand():
    parser = build_parser()

    for command in (["simulate", "w.yaml", "--dataset", "d"], ["evaluate", "--dataset", "d"]):
        args = parser.parse_args([*command, "--no-strict", "--format", "structured"])
        assert args.strict is False
        assert args.format == "structured"
