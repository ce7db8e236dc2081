import random
import re

import pytest
import yaml

from autoslo import cli
from autoslo import surrogate as sg


@pytest.fixture
def short_config(tmp_path):
    path = tmp_path / "short.yaml"
    path.write_text(yaml.safe_dump({"preset": "chatbot", "workload": {"total_s": 300.0},
                                    "gp": {"population_size": 10, "generations": 3}}))
    return str(path)


@pytest.fixture
def synthetic_csv(tmp_path):
    rng = random.Random(0)
    recs = []
    for _ in range(600):
        qps, pods = rng.uniform(0, 10), rng.randint(1, 3)
        recs.append(sg.TrainingRecord((0.5, 0.3 * pods, qps, float(pods)), 2 * qps + 10))
    path = tmp_path / "syn.csv"
    sg.write_records_csv(path, sg.feature_names(["llm"]), recs)
    return str(path)


def r2_of(out):
    return float(re.search(r"r2=(\S+)", out).group(1))


def test_traindata_rows_and_determinism(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert cli.main(["traindata", "--preset", "chatbot", "--hours", "0.5", "--seed", "3", "--out", str(a)]) == 0
    assert cli.main(["traindata", "--preset", "chatbot", "--hours", "0.5", "--seed", "3", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert len(a.read_text().splitlines()) == 1 + 120
    assert "wrote 120 records" in capsys.readouterr().out


def test_traindata_zero_hours_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        cli.main(["traindata", "--hours", "0", "--out", str(tmp_path / "x.csv")])
    assert exc.value.code == 2


def test_fit_forest_reports_high_r2(synthetic_csv, tmp_path, capsys):
    out = tmp_path / "m.npz"
    assert cli.main(["fit", synthetic_csv, "--out", str(out), "--trees", "30"]) == 0
    assert r2_of(capsys.readouterr().out) >= 0.99
    assert sg.SurrogateModel.load(out).kind == "forest"


def test_fit_mean_model_reports_zero_r2(synthetic_csv, tmp_path, capsys):
    assert cli.main(["fit", synthetic_csv, "--model", "mean", "--out", str(tmp_path / "m.npz")]) == 0
    assert abs(r2_of(capsys.readouterr().out)) < 0.05


def test_fit_missing_data_file(tmp_path, capsys):
    assert cli.main(["fit", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "m.npz")]) == 2
    assert "not found" in capsys.readouterr().err


def test_fit_too_small_dataset_is_runtime_failure(tmp_path):
    path = tmp_path / "tiny.csv"
    sg.write_records_csv(path, sg.feature_names(["llm"]), [sg.TrainingRecord((0.1, 0.3, 1.0, 1.0), 1.0)] * 5)
    assert cli.main(["fit", str(path), "--out", str(tmp_path / "m.npz")]) == 1


def test_run_hpa_needs_no_model(short_config, tmp_path):
    out = tmp_path / "hpa"
    assert cli.main(["run", "--config", short_config, "--scaler", "hpa", "--reps", "10", "--out-dir", str(out)]) == 0
    assert len(list(out.glob("trace_hpa_*.csv"))) == 10
    rows = cli.read_summary(out / "summary.csv")
    assert len(rows["chatbot"]["hpa"]["pods"]) == 10


def test_run_without_model_is_usage_error(short_config, tmp_path, capsys):
    code = cli.main(["run", "--config", short_config, "--scaler", "autoslo", "--out-dir", str(tmp_path)])
    assert code == 2
    assert "--model" in capsys.readouterr().err
    code = cli.main(["run", "--config", short_config, "--scaler", "ran", "--model", str(tmp_path / "x.npz"),
                     "--out-dir", str(tmp_path)])
    assert code == 2


def test_run_rejects_model_for_other_services(short_config, synthetic_csv, tmp_path):
    path = tmp_path / "other.csv"
    schema, recs = sg.read_records_csv(synthetic_csv)
    sg.write_records_csv(path, sg.feature_names(["frontend"]), recs)
    cli.main(["fit", str(path), "--trees", "2", "--out", str(tmp_path / "m.npz")])
    code = cli.main(["run", "--config", short_config, "--scaler", "ran", "--model", str(tmp_path / "m.npz"),
                     "--out-dir", str(tmp_path / "r")])
    assert code == 2


def test_bad_config_is_usage_error(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("preset: chatbot\nslo: {margin: 0.5}\n")
    assert cli.main(["run", "--config", str(bad), "--scaler", "hpa", "--out-dir", str(tmp_path)]) == 2


def test_end_to_end_compare(short_config, synthetic_csv, tmp_path, capsys):
    model = tmp_path / "m.npz"
    cli.main(["fit", synthetic_csv, "--trees", "10", "--out", str(model)])
    dirs = []
    for scaler in ("autoslo", "ran", "hpa"):
        d = tmp_path / scaler
        args = ["run", "--config", short_config, "--scaler", scaler, "--reps", "3", "--out-dir", str(d)]
        if scaler != "hpa":
            args += ["--model", str(model)]
        assert cli.main(args) == 0
        dirs.append(str(d))
    table = tmp_path / "table.csv"
    assert cli.main(["compare", *dirs, "--out", str(table)]) == 0
    lines = table.read_text().splitlines()
    assert len(lines) == 1 + 4
    assert lines[0].startswith("case,metric,baseline")


def test_compare_missing_summary(tmp_path):
    assert cli.main(["compare", str(tmp_path), "--out", str(tmp_path / "t.csv")]) == 2


def test_preset_command(capsys):
    assert cli.main(["preset", "shop"]) == 0
    data = yaml.safe_load(capsys.readouterr().out)
    assert data["name"] == "shop" and data["slo"]["threshold"] == 500.0
