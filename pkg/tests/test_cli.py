import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from streamcast.cli import CONFIG_ENV, main, read_forecasts
from streamcast.design import default_platform_spec
from streamcast.engine import EngineConfig, run_stream
from streamcast.evaluation import MethodRun, compare
from streamcast.losses import ALL_LOSSES
from streamcast.timeseries_io import ingest_csv

BASE_CONFIG = "hours_per_day=15\nfirst_hour=9\ninitial_batches=20\nmode=domain\n"


def rows_of(path):
    with open(path, encoding="utf-8") as fh:
        lines = [line for line in fh if not line.startswith("#")]
    return list(csv.DictReader(lines))


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    assert main(["generate", "--out", str(root / "gen"), "--n", "3", "--days", "40", "--seed", "9",
                 "--shock", "30:2.0"]) == 0
    merged = root / "all.csv"
    parts = sorted((root / "gen").glob("*.csv"))
    with open(merged, "w", encoding="utf-8") as out:
        out.write("timestamp,stream_id,demand\n")
        for p in parts:
            for line in p.read_text().splitlines():
                if not line.startswith("#") and not line.startswith("timestamp"):
                    out.write(line + "\n")
    cfg = root / "run.conf"
    cfg.write_text(BASE_CONFIG)
    return root, merged, cfg, parts


@pytest.fixture(scope="module")
def domain_run(corpus):
    root, merged, cfg, _ = corpus
    out = root / "domain"
    assert main(["run", "--config", str(cfg), "--input", str(merged), "--out", str(out), "--seed", "9"]) == 0
    return out


def test_generate_files_and_shock(corpus):
    root, _, _, parts = corpus
    assert [p.name for p in parts] == ["s0.csv", "s1.csv", "s2.csv"]
    for p in parts:
        assert p.read_text().startswith("# seed=9\n")
        (stream,) = ingest_csv(p).values()
        day = stream.values.reshape(-1, 15).sum(axis=1)
        ratio = day[30:40].mean() / day[20:30].mean()
        assert 1.6 < ratio < 2.5


def test_generate_seed_determinism(tmp_path):
    for name in ("a", "b"):
        assert main(["generate", "--out", str(tmp_path / name), "--n", "2", "--days", "10", "--seed", "4"]) == 0
    for f in ("s0.csv", "s1.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert (tmp_path / "a" / "s0.csv").read_bytes() != (tmp_path / "a" / "s1.csv").read_bytes()


def test_run_outputs(domain_run, corpus):
    for name in ("forecasts.csv", "losses.csv", "breaks.csv", "config.txt"):
        text = (domain_run / name).read_text()
        assert text.startswith("# seed=9\n")
    fc = rows_of(domain_run / "forecasts.csv")
    assert set(fc[0]) == {"stream_id", "issue_batch", "step", "forecast", "full", "post", "weight", "actual"}
    assert {r["stream_id"] for r in fc} == {"s0", "s1", "s2"}
    assert len(fc) == 3 * 21 * 105
    losses = rows_of(domain_run / "losses.csv")
    assert {r["loss_kind"] for r in losses} == {"squared", "sape", "econ"}
    for r in rows_of(domain_run / "breaks.csv"):
        assert int(r["post_break_start"]) == 15 * int(r["break_batch"])
    ck = sorted((domain_run / "checkpoints").glob("*.ckpt"))
    assert len(ck) == 3 and len({p.stat().st_size for p in ck}) == 1


def test_run_matches_library(domain_run, corpus):
    _, merged, _, _ = corpus
    streams = ingest_csv(merged)
    rep = run_stream(streams["s1"], default_platform_spec(), EngineConfig(), 20)
    issue, f, a = read_forecasts(domain_run / "forecasts.csv")["s1"]
    np.testing.assert_array_equal(issue, rep.issue_batches)
    np.testing.assert_array_equal(f, rep.combined)
    np.testing.assert_array_equal(a, rep.actuals)


def test_rerun_identical(corpus, domain_run, tmp_path):
    _, merged, cfg, _ = corpus
    out = tmp_path / "again"
    assert main(["run", "--config", str(cfg), "--input", str(merged), "--out", str(out), "--seed", "9",
                 "--jobs", "2"]) == 0
    for name in ("forecasts.csv", "losses.csv", "breaks.csv"):
        assert (out / name).read_bytes() == (domain_run / name).read_bytes()
    for p in (domain_run / "checkpoints").glob("*.ckpt"):
        assert (out / "checkpoints" / p.name).read_bytes() == p.read_bytes()


def test_missing_key(corpus, tmp_path, capsys):
    _, merged, _, _ = corpus
    cfg = tmp_path / "c.conf"
    cfg.write_text("hours_per_day=15\nfirst_hour=9\nmode=domain\n")
    code = main(["run", "--config", str(cfg), "--input", str(merged), "--out", str(tmp_path / "o")])
    assert code == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["key"] == "initial_batches" and "initial_batches" in err["message"]


def test_flag_overrides_and_env(corpus, tmp_path, monkeypatch, capsys):
    _, merged, cfg, _ = corpus
    monkeypatch.setenv(CONFIG_ENV, str(cfg))
    out = tmp_path / "naive"
    assert main(["run", "--input", str(merged), "--out", str(out), "--method", "naive"]) == 0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["method"] == "naive" and summary["breaks"] == 0
    assert "method=naive" in (out / "config.txt").read_text()


def test_usage_errors(corpus, tmp_path):
    _, merged, cfg, _ = corpus
    args = ["run", "--config", str(cfg), "--input", str(merged), "--out", str(tmp_path / "x")]
    assert main(args + ["--method", "oracle"]) == 2
    assert main(args + ["--w", "2"]) == 2
    assert main(args + ["--initial-batches", "many"]) == 2
    bad = tmp_path / "bad.conf"
    bad.write_text(BASE_CONFIG + "colour=blue\n")
    assert main(["run", "--config", str(bad), "--input", str(merged), "--out", str(tmp_path / "y")]) == 2


def test_data_errors(corpus, tmp_path):
    _, _, cfg, _ = corpus
    broken = tmp_path / "broken.csv"
    broken.write_text("timestamp,stream_id,demand\n2020-01-06 09:00,a,-3\n")
    assert main(["run", "--config", str(cfg), "--input", str(broken), "--out", str(tmp_path / "o")]) == 3
    assert main(["run", "--config", str(cfg), "--input", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "o")]) == 3
    assert main(["compare", "--run", f"a={tmp_path}", "--out", str(tmp_path / "c")]) == 3


def test_compare(corpus, domain_run, tmp_path, capsys):
    root, merged, cfg, _ = corpus
    naive = root / "naive_run"
    assert main(["run", "--config", str(cfg), "--input", str(merged), "--out", str(naive), "--method", "naive",
                 "--seed", "9"]) == 0
    out = tmp_path / "cmp"
    capsys.readouterr()
    assert main(["compare", "--run", f"domain={domain_run}", "--run", f"naive={naive}", "--out", str(out),
                 "--split-batch", "30"]) == 0
    rows = rows_of(out / "comparison.csv")
    assert all(float(r["relative"]) == 100.0 for r in rows if r["method"] == "domain")
    for name in ("comparison.csv", "heatmap_squared.csv", "heatmap_sape.csv", "heatmap_econ.csv", "breaks.csv",
                 "gains.csv"):
        assert (out / name).read_text().startswith("# seed=9\n")

    # the same table straight from the library
    streams = ingest_csv(merged)
    dom, nv = read_forecasts(domain_run / "forecasts.csv"), read_forecasts(naive / "forecasts.csv")
    sids = sorted(dom)

    def method_run(name, data):
        return MethodRun(name, sids, np.stack([data[s][1] for s in sids]), np.stack([data[s][2] for s in sids]),
                         data[sids[0]][0], 15)

    ref, oth = method_run("domain", dom), method_run("naive", nv)
    expected = compare(ref, [oth], ALL_LOSSES, 30)
    got = [(r["method"], r["period"], r["loss_kind"], float(r["relative"])) for r in rows]
    for (m, p, k, v), (m2, p2, k2, v2) in zip(expected, got):
        assert (m, p, k) == (m2, p2, k2) and v == pytest.approx(v2, abs=1e-6)
    assert len(streams) == 3


def test_compare_self_and_mismatch(corpus, domain_run, tmp_path):
    root, merged, cfg, _ = corpus
    out = tmp_path / "self"
    assert main(["compare", "--run", f"a={domain_run}", "--run", f"b={domain_run}", "--out", str(out)]) == 0
    assert all(float(r["relative"]) == 100.0 for r in rows_of(out / "comparison.csv"))
    assert all(float(r["annual_gain"]) == 0.0 for r in rows_of(out / "gains.csv"))
    short = tmp_path / "short"
    cfg2 = tmp_path / "c2.conf"
    cfg2.write_text(BASE_CONFIG.replace("initial_batches=20", "initial_batches=25"))
    assert main(["run", "--config", str(cfg2), "--input", str(merged), "--out", str(short)]) == 0
    assert main(["compare", "--run", f"a={domain_run}", "--run", f"b={short}", "--out", str(tmp_path / "m")]) == 2


def test_run_directory_input(corpus, domain_run, tmp_path):
    root, _, cfg, _ = corpus
    out = tmp_path / "dir"
    assert main(["run", "--config", str(cfg), "--input", str(root / "gen"), "--out", str(out), "--seed", "9"]) == 0
    assert (out / "forecasts.csv").read_bytes() == (domain_run / "forecasts.csv").read_bytes()
    # the same stream twice is refused
    dup = ["run", "--config", str(cfg), "--input", str(root / "gen" / "s0.csv"), "--input",
           str(root / "gen" / "s0.csv"), "--out", str(tmp_path / "dup")]
    assert main(dup) == 3


def test_ingest_check(corpus, capsys):
    _, merged, _, _ = corpus
    capsys.readouterr()
    assert main(["ingest-check", "--input", str(merged)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["streams"]["s0"]["whole_days"] == 40


def test_console_script(tmp_path):
    res = subprocess.run([sys.executable, "-m", "streamcast.cli", "generate", "--out", str(tmp_path), "--n", "1",
                          "--days", "3"], capture_output=True, text=True)
    assert res.returncode == 0
    assert json.loads(res.stdout)["command"] == "generate"
