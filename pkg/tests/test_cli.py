import csv
import json

import pytest

from adagp.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_pipeline_gpipe_makespan(capsys, tmp_path):
    code, out, _ = run(capsys, "pipeline", "--strategy", "gpipe", "-D", "4", "-M", "4", "--mode", "baseline",
                       "--out", str(tmp_path))
    assert code == 0 and "makespan 21" in out
    rows = list(csv.DictReader((tmp_path / "pipeline_gpipe_baseline_D4_M4.csv").open()))
    assert rows[0]["makespan"] == "21"
    assert (tmp_path / "pipeline_gpipe_baseline_D4_M4.svg").exists()


def test_timeline_gp_at_zero_alpha(capsys, tmp_path):
    code, out, _ = run(capsys, "timeline", "-N", "4", "--alpha", "0", "--phase", "gp", "--out", str(tmp_path))
    assert code == 0 and out.strip() == "4"
    report = json.loads((tmp_path / "timeline.json").read_text())
    assert report["closed_form_steps"]["Baseline"] == 12


def test_timeline_exact_alpha(capsys, tmp_path):
    _, out, _ = run(capsys, "timeline", "--alpha", "1/20", "--phase", "bp", "--out", str(tmp_path))
    assert float(out) == pytest.approx(12.6)


def test_config_file_and_flag_override(capsys, tmp_path):
    cfg = tmp_path / "exp.yaml"
    cfg.write_text("pipeline:\n  strategy: chimera\n  mode: transition\n")
    _, out, _ = run(capsys, "pipeline", "--config", str(cfg), "--out", str(tmp_path))
    assert "makespan 20" in out
    _, out, _ = run(capsys, "pipeline", "--config", str(cfg), "--strategy", "gpipe", "--out", str(tmp_path))
    assert "makespan 25" in out


def test_output_root_from_environment(capsys, out_root):
    code, _, _ = run(capsys, "energy")
    assert code == 0
    data = json.loads((out_root / "outputs" / "energy.json").read_text())
    assert data["reduction"] == pytest.approx(data["f_bw"] / 2, abs=1e-12)


def test_module_error_gives_nonzero_exit(capsys, tmp_path):
    code, _, err = run(capsys, "pipeline", "--strategy", "chimera", "-D", "3", "--out", str(tmp_path))
    assert code == 1 and "even" in err


def test_bad_config_gives_nonzero_exit(capsys, tmp_path):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("model: minicnn\nwarmup: 3\n")
    code, _, err = run(capsys, "report", "--config", str(cfg), "--out", str(tmp_path))
    assert code == 1 and "warmup (line 2)" in err


def test_usage_error_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["pipeline", "--strategy", "pipedream"])
    assert exc.value.code == 2


def snapshot(directory):
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir())}


TRAIN = ["train", "--epochs", "2", "--n-train", "64", "--n-eval", "32", "--batch-size", "16",
         "--warmup-epochs", "1"]


@pytest.mark.parametrize("argv", [
    TRAIN,
    TRAIN + ["--baseline"],
    ["timeline", "--variant", "MAX"],
    ["pipeline", "--strategy", "chimera", "--mode", "transition", "--predictor-alpha", "0.02"],
    ["energy", "--include-predictor", "--buffer-capacity", "512"],
    ["report"],
])
def test_outputs_are_byte_identical(capsys, tmp_path, argv):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(argv + ["--out", str(a)]) == 0
    assert main(argv + ["--out", str(b)]) == 0
    capsys.readouterr()
    assert snapshot(a) == snapshot(b)


def test_train_baseline_then_adagp_share_first_epoch(capsys, tmp_path):
    assert main(TRAIN + ["--baseline", "--out", str(tmp_path)]) == 0
    assert main(TRAIN + ["--out", str(tmp_path)]) == 0
    capsys.readouterr()
    base = list(csv.DictReader((tmp_path / "baseline_seed0_metrics.csv").open()))
    ada = list(csv.DictReader((tmp_path / "adagp_seed0_metrics.csv").open()))
    for col in ("train_loss", "eval_accuracy", "backward_passes"):
        assert base[0][col] == ada[0][col]
    assert base[1]["backward_passes"] != ada[1]["backward_passes"]


def test_train_several_seeds_with_jobs(capsys, tmp_path):
    code, out, _ = run(capsys, *TRAIN, "--seeds", "0", "1", "--jobs", "2", "--out", str(tmp_path))
    assert code == 0
    assert (tmp_path / "adagp_seed1_summary.json").exists()
    serial = tmp_path / "serial"
    run(capsys, *TRAIN, "--seeds", "0", "1", "--out", str(serial))
    for name in ("adagp_seed0_metrics.csv", "adagp_seed1_metrics.csv"):
        assert (tmp_path / name).read_bytes() == (serial / name).read_bytes()


def test_report_merges_sections(capsys, tmp_path):
    main(TRAIN + ["--out", str(tmp_path)])
    code, out, _ = run(capsys, "report", "--out", str(tmp_path))
    assert code == 0
    rows = list(csv.DictReader((tmp_path / "report.csv").open()))
    items = {(r["section"], r["item"]): r["value"] for r in rows}
    assert items[("pipeline", "chimera transition D=4 M=4")] == "20"
    assert items[("timeline", "Baseline steps")] == "12"
    assert ("train", "adagp_seed0") in items
