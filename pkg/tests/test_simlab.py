import numpy as np
import pytest

from stratavar.partition import CapacityError
from stratavar.simlab import ingest_embeddings
from stratavar.simlab.cli import main
from stratavar.simlab.config import ConfigError, ExperimentConfig, load_config, parse_settings, worker_count
from stratavar.simlab.data import synthetic_embeddings
from stratavar.simlab.experiments import (
    rankbound_instance,
    run,
    run_fig1,
    run_fig2,
    run_fig3,
    run_fig4,
    run_rankbound,
    stratum_sizes,
    trial_sweep,
)
from stratavar.simlab.table import ResultTable, read_result_csv
from stratavar.variance import rank_error_summary

SMALL = {
    "fig1": dict(samples=50),
    "fig2": dict(dims=(1, 2), samples=10, trials=300, n=36),
    "fig3": dict(n=20, k=4, samples=3, greedy_trials=200),
    "fig4": dict(n=60, ks=(4, 8), trials=500, restarts=2, greedy_trials=10),
    "rankbound": dict(dims=(1, 2), samples=3),
}


def small(name, **extra):
    return load_config(name, overrides={**SMALL[name], **extra})


# Ingestion ---------------------------------------------------------------------

def test_ingest_well_formed(tmp_path):
    p = tmp_path / "emb.csv"
    p.write_text("1,2\n3,4\n5,6\n")
    pts = ingest_embeddings(p)
    assert (pts.n, pts.d) == (3, 2) and pts.ids == (0, 1, 2)


def test_ingest_empty(tmp_path):
    p = tmp_path / "empty.csv"
    p.write_text("")
    with pytest.raises(ValueError):
        ingest_embeddings(p)


def test_ingest_header_flag(tmp_path):
    plain, headed = tmp_path / "a.csv", tmp_path / "b.csv"
    plain.write_text("1,2\n3,4\n")
    headed.write_text("x,y\n1,2\n3,4\n")
    np.testing.assert_array_equal(ingest_embeddings(headed, header=True).data, ingest_embeddings(plain).data)


# Config --------------------------------------------------------------------------

def test_parse_settings():
    got = parse_settings(["# comment", "", "k = 5", "dims=1,4", "header=yes", "out=x.csv"])
    assert got == {"k": 5, "dims": (1, 4), "header": True, "output_path": "x.csv"}


@pytest.mark.parametrize("line", ["nonsense", "bogus=1", "k=abc", "header=maybe"])
def test_parse_settings_errors(line):
    with pytest.raises(ConfigError):
        parse_settings([line])


def test_config_layering(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("k=5\nseed=3\n")
    cfg = load_config("fig2", p, {"seed": "9"})
    assert cfg.k == 5 and cfg.seed == 9 and cfg.n == 360


@pytest.mark.parametrize("changes", [dict(k=0), dict(dims=()), dict(distribution="cauchy"),
                                     dict(seed=-1), dict(input_path="/no/such/file")])
def test_config_validation(changes):
    with pytest.raises(ConfigError):
        ExperimentConfig("fig1", **changes)


def test_config_rejects_other_experiment(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("experiment=fig3\n")
    with pytest.raises(ConfigError):
        load_config("fig1", p)


def test_config_hash_ignores_output_path(tmp_path):
    a = load_config("fig1")
    b = load_config("fig1", overrides={"out": str(tmp_path / "x.csv")})
    c = load_config("fig1", overrides={"seed": "1"})
    assert a.config_hash() == b.config_hash() != c.config_hash()


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("STRATAVAR_THREADS", "3")
    assert worker_count() == 3
    monkeypatch.setenv("STRATAVAR_THREADS", "0")
    assert worker_count() >= 1
    monkeypatch.setenv("STRATAVAR_THREADS", "lots")
    with pytest.raises(ConfigError):
        worker_count()


# Tables -----------------------------------------------------------------------

def test_table_layout_and_roundtrip(tmp_path):
    t = ResultTable("demo", ("k", "v"), ("k",), metadata={"seed": 1})
    t.add(k=2, v=np.float64(0.5))
    t.add(k=1, v=True)
    path = tmp_path / "t.csv"
    text = t.to_csv(path, timestamp="T0")
    assert text == "k,v\n# seed=1 timestamp=T0\n1,true\n2,0.5\n"
    cols, meta, rows = read_result_csv(path)
    assert cols == ["k", "v"] and meta == {"seed": "1", "timestamp": "T0"} and rows == [["1", "true"], ["2", "0.5"]]


def test_table_schema_enforced():
    t = ResultTable("demo", ("a",), ("a",))
    with pytest.raises(ValueError):
        t.add(b=1)


# Experiments -------------------------------------------------------------------------

def test_stratum_sizes_proportional():
    assert stratum_sizes(360, 8).tolist() == [10, 20, 30, 40, 50, 60, 70, 80]
    s = stratum_sizes(37, 8)
    assert s.sum() == 37 and s.min() >= 1 and np.all(np.diff(s) >= 0)


def test_trial_sweep():
    assert trial_sweep(10**4) == [1, 10, 100, 1000, 10000]
    assert trial_sweep(50) == [1, 10, 50]


def test_synthetic_embeddings_deterministic():
    a, b = synthetic_embeddings(50, seed=4), synthetic_embeddings(50, seed=4)
    np.testing.assert_array_equal(a.data, b.data)
    assert a.d == 16


def test_fig1_scalar_is_exact():
    t = run_fig1(small("fig1"))
    assert t.column("spearman", d=1, target_cov="zero") == [1.0]
    assert len(t.column("spearman", exploratory=True)) == 1


def test_fig2_identity_and_rows():
    t = run_fig2(small("fig2"))
    recs = t.records()
    assert {(r["d"], r["distribution"]) for r in recs} == {(1, "normal"), (2, "normal"), (1, "lognormal"), (2, "lognormal")}
    assert all(-1.0 <= r["spearman"] <= 1.0 for r in recs)
    scalar = [r for r in recs if r["d"] == 1 and r["distribution"] == "normal"][0]
    assert scalar["method"] == "closed_form" and scalar["max_identity_residual"] <= 1e-10


def test_fig3_tables_present():
    t = run_fig3(small("fig3"))
    tables = {r["table"] for r in t.records()}
    assert tables == {"a", "a_reduced", "b", "c"}
    assert all(v == 1.0 for v in t.column("value", table="a_reduced", metric="brute_le_all_trials"))
    med = t.column("value", table="b", instance="median")
    assert all(x >= y for x, y in zip(med, med[1:]))


def test_fig4_singletons_have_no_variance():
    t = run_fig4(load_config("fig4", overrides=dict(n=30, ks=(30,), trials=200, restarts=1, greedy_trials=5)))
    assert max(t.column("mc_var")) <= 1e-12
    assert max(t.column("exact_var")) <= 1e-12


def test_fig4_small_run_shapes():
    t = run_fig4(small("fig4"))
    assert {r["sampler"] for r in t.records()} == {"uniform", "linear_kmeans", "kernel_kmeans", "weighted"}
    for r in t.records():
        assert r["mc_var"] == pytest.approx(r["exact_var"], rel=0.2)


def test_rankbound_scalar_is_exact():
    t = run_rankbound(small("rankbound"))
    assert t.column("surrogate_rank", d=1) == [1, 1, 1]
    assert t.column("observed_error", d=1) == [0.0, 0.0, 0.0]
    assert all(t.column("within_bound"))


def test_rankbound_capacity():
    with pytest.raises(CapacityError):
        run_rankbound(load_config("rankbound", overrides=dict(n=20)))


def test_rankbound_instance_counts():
    X = np.random.default_rng(0).normal(size=(5, 2))
    f, g, parts = rankbound_instance(X, 2)
    assert len(parts) == f.size == g.size == 15
    assert rank_error_summary(f, g).within_bound


@pytest.mark.parametrize("name", sorted(SMALL))
def test_reruns_are_byte_identical(name, monkeypatch):
    cfg = small(name)
    monkeypatch.setenv("STRATAVAR_THREADS", "1")
    first = run(cfg).data_lines()
    monkeypatch.setenv("STRATAVAR_THREADS", "4")
    assert run(cfg).data_lines() == first


# CLI ---------------------------------------------------------------------------------

def test_cli_writes_csv(tmp_path, capsys):
    out = tmp_path / "r.csv"
    assert main(["rankbound", "--seed", "2", "--out", str(out), "--set", "samples=2"]) == 0
    cols, meta, rows = read_result_csv(out)
    assert cols[0] == "d" and meta["seed"] == "2" and len(meta["config_hash"]) == 16
    assert len(rows) == 2


def test_cli_stdout(capsys):
    assert main(["fig1", "--set", "samples=20", "--set", "dims=1"]) == 0
    assert capsys.readouterr().out.startswith("d,target_cov")


def test_cli_config_file(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("samples=2\nseed=5\n")
    out = tmp_path / "r.csv"
    assert main(["rankbound", "--config", str(cfg), "--seed", "6", "--out", str(out)]) == 0
    assert read_result_csv(out)[1]["seed"] == "6"


@pytest.mark.parametrize("argv", [
    ["fig1", "--set", "bogus=1"],
    ["fig1", "--set", "samples"],
    ["fig1", "--config", "/no/such/config"],
    ["fig4", "--input", "/no/such/file.csv"],
    ["fig1", "--out", "/no/such/dir/out.csv"],
])
def test_cli_config_errors_exit_2(argv, capsys):
    assert main(argv) == 2
    assert "error" in capsys.readouterr().err


def test_cli_bad_input_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2\n3,oops\n")
    assert main(["fig4", "--input", str(bad)]) == 2
    assert "row 2, column 2" in capsys.readouterr().err


def test_cli_capacity_exit_3(capsys):
    assert main(["rankbound", "--set", "n=20"]) == 3


def test_cli_ingested_embeddings(tmp_path):
    data = tmp_path / "emb.csv"
    X = np.random.default_rng(1).normal(size=(40, 3))
    data.write_text("a,b,c\n" + "\n".join(",".join(repr(float(v)) for v in row) for row in X) + "\n")
    out = tmp_path / "r.csv"
    argv = ["fig4", "--input", str(data), "--header", "--out", str(out),
            "--set", "ks=4", "--set", "trials=200", "--set", "restarts=1", "--set", "greedy_trials=5"]
    assert main(argv) == 0
    assert len(read_result_csv(out)[2]) == 4
