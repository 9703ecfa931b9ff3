import json

import pytest

from hoimotion import cli, pipeline
from hoimotion.config import PipelineConfig

TINY = [
    "--n-clips", "4", "--test-fraction", "0.5", "--clip-len", "40", "--n-points", "64", "--n-basis", "32",
    "--T", "20", "--batch-size", "2", "--stage1-steps", "20", "--stage1-d", "32", "--stage1-layers", "1",
    "--stage2-d", "32", "--stage2-layers", "1", "--cond-d", "16", "--base-steps", "20", "--controlnet-steps", "20",
    "--evaluator-steps", "20", "--lbfgs-iters", "2", "--diversity-pairs", "10", "--r-batch", "2",
]


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    args = TINY + ["--out-dir", str(out)]
    code = cli.main(["run", *args])
    return out, args, code


def test_run_writes_reports_and_figures(tiny_run, capsys):
    out, _, code = tiny_run
    assert code == 0
    report = json.loads((out / "report" / "report.json").read_text())
    for key in ("hand_jpe_cm", "mpjpe_cm", "c_prec", "c_rec", "c_acc", "c_pct", "f1", "fid", "r_score", "diversity", "fs"):
        assert key in report
    assert set(report["stage1"]) == {"left_jpe", "right_jpe", "hand_jpe", "affordance_cos_sim"}
    csv = (out / "report" / "report.csv").read_text().splitlines()
    assert len(csv) == 2
    figs = {p.name for p in (out / "report" / "figures").glob("*.png")}
    assert "loss_curves.png" in figs
    assert any(n.endswith("_hands.png") for n in figs)
    assert any(n.endswith("_affordance.png") for n in figs)
    assert any(n.endswith("_contact.png") for n in figs)
    for phase in pipeline.PHASES:
        assert (out / f".done-{phase}").exists()


def test_forced_rerun_is_bit_identical(tiny_run):
    out, args, _ = tiny_run
    before = (out / "report" / "report.json").read_bytes()
    assert cli.main(["run", "--no-resume", *args]) == 0
    assert (out / "report" / "report.json").read_bytes() == before


def test_export_render(tiny_run, tmp_path):
    out, args, _ = tiny_run
    assert cli.main(["export-render", *args, "--dest", str(tmp_path)]) == 0
    files = sorted(tmp_path.glob("*.json"))
    assert len(files) == 2
    payload = json.loads(files[0].read_text())
    assert len(payload["joint_names"]) == 22
    assert len(payload["frames"]) == 40 and len(payload["frames"][0]) == 22


def test_missing_checkpoint_names_phase(tmp_path, capsys):
    args = TINY + ["--out-dir", str(tmp_path)]
    assert cli.main(["gen-data", *args]) == 0
    assert cli.main(["annotate", *args]) == 0
    assert cli.main(["sample-stage1", *args]) == 1
    err = capsys.readouterr().err
    assert "[sample-stage1]" in err and "stage1" in err and "train-stage1" in err


def test_missing_data_names_producer(tmp_path, capsys):
    assert cli.main(["annotate", "--out-dir", str(tmp_path)]) == 1
    assert "gen-data" in capsys.readouterr().err


def test_bad_config_exit_code(tmp_path, capsys):
    assert cli.main(["gen-data", "--out-dir", str(tmp_path), "--n-clips", "banana"]) == 2
    assert "n_clips" in capsys.readouterr().err
    bad = tmp_path / "bad.yaml"
    bad.write_text("no_such_key: 3\n")
    assert cli.main(["gen-data", "--config", str(bad)]) == 2


def test_help_flags_mirror_config_keys(capsys):
    with pytest.raises(SystemExit):
        cli.main(["run", "--help"])
    text = capsys.readouterr().out
    for key in PipelineConfig.keys():
        assert "--" + key.replace("_", "-") in text
    assert "--no-resume" in text


def test_every_phase_has_subcommand():
    parser = cli.build_parser()
    for phase in pipeline.PHASES:
        parser.parse_args([phase])
