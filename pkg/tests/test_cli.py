import io
import json
import logging
import math

import numpy as np
import pytest

from ocdci.cli import main
from ocdci.detector import DetectorConfig
from ocdci.grid import ScaleGrid
from ocdci.inference import InferenceConfig
from ocdci.ingest import MonitorSession, PreprocessSpec, monitor, preprocess, read_csv_rows


def write_csv(path, names, X):
    lines = [",".join(names)] + [",".join(f"{v:.10g}" for v in row) for row in X]
    path.write_text("\n".join(lines) + "\n")
    return path


def burst_stream(seed=0, p=5, n=700, bursts=((150, 20), (450, 20)), size=4.0):
    X = np.random.default_rng(seed).standard_normal((n, p))
    for start, length in bursts:
        X[start : start + length, :2] += size
    return X


# -- preprocessing --------------------------------------------------------------


def test_constant_column_is_dropped_with_warning(caplog):
    X = np.random.default_rng(0).standard_normal((50, 3))
    X[:, 1] = 7.0
    with caplog.at_level(logging.WARNING):
        fitted, blocks = preprocess(iter(X), PreprocessSpec(20), ["a", "flat", "c"])
    assert list(fitted.keep) == [0, 2]
    assert "flat" in caplog.text
    Z = np.vstack(list(blocks))
    assert Z.shape == (50, 2)


def test_standardized_input_is_left_nearly_alone():
    X = np.random.default_rng(1).standard_normal((20_000, 3))
    _, blocks = preprocess(iter(X), PreprocessSpec(20_000))
    Z = np.vstack(list(blocks))
    np.testing.assert_allclose(Z, X, atol=0.05)


def test_statistics_come_from_training_rows_only():
    X = np.vstack([np.tile([[0.0], [2.0]], (5, 1)), np.full((5, 1), 100.0)])
    fitted, blocks = preprocess(iter(X), PreprocessSpec(10))
    assert fitted.mean == pytest.approx([1.0]) and fitted.sd == pytest.approx([math.sqrt(10 / 9)])
    Z = np.vstack(list(blocks))
    assert Z[-1, 0] == pytest.approx(99 / math.sqrt(10 / 9))


def test_clip_and_sqrt():
    train = np.array([[0.0], [4.0]] * 5)
    X = np.vstack([train, [[100.0]]])
    fitted, blocks = preprocess(iter(X), PreprocessSpec(10, sqrt_transform=True, clip=3.0))
    # sqrt gives 0, 2 alternating: mean 1, sd sqrt(10/9); sqrt(100) = 10 standardizes to 8.5
    Z = np.vstack(list(blocks))
    assert Z[-1, 0] == 3.0
    assert np.all(np.abs(Z) <= 3.0)


def test_clip_value_example():
    # a value that standardizes to 5.2 is emitted as the clip level
    train = np.array([[-1.0], [1.0]] * 50)
    sd = np.std(train, ddof=1)
    fitted, blocks = preprocess(iter(np.vstack([train, [[5.2 * sd]]])), PreprocessSpec(100, clip=3.0))
    assert np.vstack(list(blocks))[-1, 0] == 3.0


@pytest.mark.parametrize(
    "text,err",
    [
        ("a,b\n1,2\n3,x\n", "non-numeric"),
        ("a,b\n1,2\n3\n", "expected 2 cells"),
        ("a,b\n1,2\n3,\n", "non-numeric"),
        ("", "header"),
    ],
)
def test_csv_errors(text, err):
    with pytest.raises(ValueError, match=err):
        names, rows = read_csv_rows(io.StringIO(text))
        list(rows)


def test_preprocess_errors():
    with pytest.raises(ValueError, match="training rows"):
        preprocess(iter(np.ones((3, 2))), PreprocessSpec(5))
    with pytest.raises(ValueError, match="negative"):
        preprocess(iter(-np.ones((5, 2))), PreprocessSpec(5, sqrt_transform=True))
    with pytest.raises(ValueError):
        PreprocessSpec(1)
    with pytest.raises(ValueError):
        PreprocessSpec(5, clip=0.0)


# -- monitoring -----------------------------------------------------------------


def session(cooldown, ell=0, variant="ocd"):
    grid = ScaleGrid(5, 2.0)
    det = DetectorConfig(grid, math.sqrt(2 * math.log(5)), 12.0, 40.0, variant=variant)
    return MonitorSession(det, InferenceConfig(1.0, ell=ell), cooldown)


def test_two_bursts_give_two_records():
    X = burst_stream()
    recs = monitor(X, session(cooldown=40))
    assert len(recs) == 2
    first, second = recs
    assert 150 < first.N <= 170 and 450 < second.N <= 470
    assert second.N > first.N + 40
    assert first.ci[0] <= 150 <= first.ci[1]
    assert second.ci[0] <= 450 <= second.ci[1]


def test_offset_shifts_every_index():
    X = burst_stream()
    base = monitor(X, session(cooldown=40))
    shifted = monitor(X, session(cooldown=40), offset=1000)
    assert [r.N + 1000 for r in base] == [r.N for r in shifted]
    assert [tuple(v + 1000 for v in r.ci) for r in base] == [r.ci for r in shifted]


@pytest.mark.parametrize("cooldown,ell", [(0, 0), (0, 3), (7, 2)])
def test_restart_spacing(cooldown, ell):
    X = burst_stream(bursts=((100, 60), (400, 60)))
    recs = monitor(X, session(cooldown, ell, "ocd-prime"))
    assert len(recs) >= 2
    for prev, nxt in zip(recs, recs[1:]):
        assert nxt.N >= prev.N + ell + cooldown + 1
        assert nxt.offset == prev.N + ell + cooldown


def test_null_stream_is_quiet():
    X = np.random.default_rng(3).standard_normal((300, 5))
    assert monitor(X, session(0)) == []


def test_short_extras_end_monitoring(caplog):
    X = burst_stream(n=160, bursts=((150, 10),))
    with caplog.at_level(logging.WARNING):
        recs = monitor(X, session(0, ell=50, variant="ocd-prime"))
    assert recs == [] and "extra rows" in caplog.text


# -- command line ---------------------------------------------------------------


def detect_args(path, *extra):
    return ["detect", str(path), "--train-rows", "100", "--beta", "2", "--t-diag", "12", "--t-off", "40", *extra]


def test_detect_end_to_end(tmp_path, capsys):
    X = burst_stream()
    src = write_csv(tmp_path / "in.csv", [f"s{j}" for j in range(5)], X)
    out = tmp_path / "out.jsonl"
    assert main(detect_args(src, "--cooldown", "40", "--output", str(out))) == 0
    recs = [json.loads(line) for line in out.read_text().splitlines()]
    assert len(recs) == 2
    assert recs[0]["ci_left"] <= 150 <= recs[0]["ci_right"]
    assert {"s0", "s1"} <= set(recs[0]["support"]) | {recs[0]["anchor"]}
    # byte-identical on a re-run
    out2 = tmp_path / "again.jsonl"
    main(detect_args(src, "--cooldown", "40", "--output", str(out2)))
    assert out.read_bytes() == out2.read_bytes()


def test_detect_column_order_only_relabels(tmp_path):
    X = burst_stream(seed=4)
    names = [f"s{j}" for j in range(5)]
    perm = [3, 0, 4, 1, 2]
    a = write_csv(tmp_path / "a.csv", names, X)
    b = write_csv(tmp_path / "b.csv", [names[j] for j in perm], X[:, perm])
    main(detect_args(a, "--cooldown", "40", "-o", str(tmp_path / "a.jsonl")))
    main(detect_args(b, "--cooldown", "40", "-o", str(tmp_path / "b.jsonl")))
    ra = [json.loads(x) for x in (tmp_path / "a.jsonl").read_text().splitlines()]
    rb = [json.loads(x) for x in (tmp_path / "b.jsonl").read_text().splitlines()]
    assert [(r["N"], r["ci_left"], r["ci_right"], sorted(r["support"])) for r in ra] == [
        (r["N"], r["ci_left"], r["ci_right"], sorted(r["support"])) for r in rb
    ]


def test_detect_rejects_ell_with_plain_variant(tmp_path, capsys):
    src = write_csv(tmp_path / "in.csv", ["a", "b"], np.zeros((5, 2)))
    assert main(detect_args(src, "--ell", "3", "--variant", "ocd")) == 2
    assert "ocd-prime" in capsys.readouterr().err


def test_detect_p_mismatch_and_bad_cells(tmp_path):
    src = write_csv(tmp_path / "in.csv", [f"s{j}" for j in range(5)], burst_stream())
    assert main(detect_args(src, "--p", "4")) != 0
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,2\nx,3\n")
    assert main(["detect", str(bad), "--train-rows", "2", "--beta", "1", "--gamma", "100"]) == 1
    assert main(detect_args(tmp_path / "missing.csv")) == 1


def test_unknown_flag_is_an_error():
    assert main(["preset", "--p", "10", "--gamma", "100", "--bogus"]) != 0
    assert main([]) != 0


def test_preset_command(capsys):
    assert main(["preset", "--p", "100", "--gamma", "5000"]) == 0
    data = json.loads(capsys.readouterr().out)
    assert data["T_diag"] == pytest.approx(18.0518009, rel=1e-8)
    assert data["T_off"] == pytest.approx(143.4308345, rel=1e-8)


def test_flags_override_preset_file(tmp_path):
    preset = tmp_path / "preset.json"
    preset.write_text(json.dumps({"a": 9.0, "T_diag": 1e9, "T_off": 1e9, "d1": 3.0, "d2": 99.0}))
    X = burst_stream()
    src = write_csv(tmp_path / "in.csv", [f"s{j}" for j in range(5)], X)
    out = tmp_path / "o.jsonl"
    base = ["detect", str(src), "--train-rows", "100", "--beta", "2", "--preset-file", str(preset), "-o", str(out)]
    assert main(base) == 0
    assert out.read_text() == ""  # preset thresholds can never be crossed
    assert main(base + ["--t-diag", "12", "--t-off", "40", "--cooldown", "40"]) == 0
    assert len(out.read_text().splitlines()) == 2


def test_calibrate_then_simulate(tmp_path, monkeypatch):
    preset = tmp_path / "mc.json"
    args = ["calibrate", "--p", "5", "--beta", "1", "--gamma", "200", "--reps", "50", "--seed", "1", "-o", str(preset)]
    assert main(args) == 0
    data = json.loads(preset.read_text())
    assert data["provenance"] == "monte-carlo" and data["T_diag"] > 0
    cov1, cov8 = tmp_path / "c1.csv", tmp_path / "c8.csv"
    sim = ["simulate-coverage", "--p", "5", "--s", "2", "--vartheta", "2", "--beta", "1", "--z", "100", "--reps", "20"]
    sim += ["--preset-file", str(preset)]
    assert main(sim + ["-o", str(cov1)]) == 0
    monkeypatch.setenv("OCDCI_THREADS", "8")
    assert main(sim + ["-o", str(cov8)]) == 0
    assert cov1.read_bytes() == cov8.read_bytes()
    header, row = cov1.read_text().splitlines()
    assert "coverage" in header.split(",") and "mean_delay" in header.split(",")


def test_simulate_support(tmp_path):
    out = tmp_path / "roc.csv"
    args = ["simulate-support", "--p", "6", "--s", "3", "--vartheta", "3", "--beta", "2", "--shape", "uniform"]
    args += ["--z", "50", "--reps", "10", "--t-diag", "10", "--t-off", "30", "--d1-grid", "0.5", "2", "50", "-o", str(out)]
    assert main(args) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 4
    cols = lines[0].split(",")
    assert cols[cols.index("variant")] == "variant"
    assert lines[1].split(",")[cols.index("variant")] == "ocd-prime"
    assert int(lines[1].split(",")[cols.index("ell")]) > 0


def test_bad_thread_env(monkeypatch):
    monkeypatch.setenv("OCDCI_THREADS", "zero")
    args = ["simulate-coverage", "--p", "5", "--s", "1", "--vartheta", "2", "--beta", "1", "--reps", "2"]
    assert main(args + ["--t-diag", "10", "--t-off", "30"]) == 2
