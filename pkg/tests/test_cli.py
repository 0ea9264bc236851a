import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from collabandit import matrix_io
from collabandit.cli import main
from collabandit.events import LogReader


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("pipe")
    log = d / "log.tsv"
    assert main(["genlog", "--T", "6000", "--clusters", "6", "--dim", "4", "--pool", "5", "--arms", "12",
                 "--latent-dim", "2", "--reward-model", "bernoulli", "--seed", "3", "--out", str(log),
                 "--centroids-out", str(d / "true_centroids.csv"), "--w-out", str(d / "true_w.csv")]) == 0
    return d


def run(*argv):
    return main([str(a) for a in argv])


def test_cluster_recovers_true_centroids(pipeline):
    out = pipeline / "c6.csv"
    assert run("cluster", "--log", pipeline / "log.tsv", "--k", 6, "--seed", 1, "--out", out) == 0
    got = matrix_io.read_matrix(out)
    truth = matrix_io.read_matrix(pipeline / "true_centroids.csv")
    cost = ((got[:, None, :] - truth[None, :, :]) ** 2).sum(axis=2)
    rows, cols = linear_sum_assignment(cost)
    assert np.max(np.abs(got[rows] - truth[cols])) < 1e-6


def test_cluster_k1_is_mean(pipeline):
    out = pipeline / "c1.csv"
    assert run("cluster", "--log", pipeline / "log.tsv", "--k", 1, "--out", out) == 0
    users = np.array([ev.user_features for ev in LogReader(pipeline / "log.tsv")])
    np.testing.assert_allclose(matrix_io.read_matrix(out)[0], users.mean(axis=0), atol=1e-12)


def test_cluster_standardize_maps_back(pipeline):
    out = pipeline / "cz.csv"
    assert run("cluster", "--log", pipeline / "log.tsv", "--k", 6, "--standardize", "--out", out) == 0
    truth = matrix_io.read_matrix(pipeline / "true_centroids.csv")
    got = matrix_io.read_matrix(out)
    assert sorted(map(tuple, np.round(got, 8))) == sorted(map(tuple, np.round(truth, 8)))


def test_buildw_hand_example_and_validate(tmp_path, capsys):
    cpath, wpath = tmp_path / "c.csv", tmp_path / "w.csv"
    matrix_io.write_matrix(cpath, np.array([[1.0, 0.0], [1.0, 1.0]]))
    assert run("buildw", "--centroids", cpath, "--out", wpath) == 0
    w = matrix_io.read_matrix(wpath)
    np.testing.assert_allclose(w[:, 0], [0.5, 0.5])
    np.testing.assert_allclose(w[:, 1], [1 / 3, 2 / 3])
    assert run("validate", "--w", wpath) == 0
    assert "ok" in capsys.readouterr().out


def test_buildw_idempotent_and_valid(pipeline, tmp_path):
    c = pipeline / "c6r.csv"
    run("cluster", "--log", pipeline / "log.tsv", "--k", 6, "--out", c)
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for s in (25, 50, 100):
        assert run("buildw", "--centroids", c, "--sparsity", s, "--out", a) == 0
        assert run("buildw", "--centroids", c, "--sparsity", s, "--out", b) == 0
        assert a.read_bytes() == b.read_bytes()
        assert matrix_io.read_similarity(a).validate() == []


def test_validate_rejects_bad_matrix(tmp_path, capsys):
    p = tmp_path / "bad.csv"
    matrix_io.write_matrix(p, np.array([[0.5, 0.0], [0.4, 1.0]]))
    assert run("validate", "--w", p) == 4
    assert "do not sum to 1" in capsys.readouterr().out


def test_buildw_zero_column_exit_code(tmp_path):
    c = tmp_path / "c.csv"
    matrix_io.write_matrix(c, np.array([[1.0, 0.0], [0.0, 0.0]]))
    assert run("buildw", "--centroids", c, "--out", tmp_path / "w.csv") == 4


def test_colin_identity_matches_mlinucb(pipeline, tmp_path):
    c = pipeline / "c6i.csv"
    run("cluster", "--log", pipeline / "log.tsv", "--k", 6, "--out", c)
    eye = tmp_path / "eye.csv"
    matrix_io.write_matrix(eye, np.eye(6))
    a, b = tmp_path / "colin.csv", tmp_path / "ml.csv"
    common = ["--log", pipeline / "log.tsv", "--centroids", c, "--bucket", 50, "--window", 5]
    assert run("replay", "--algo", "colin", "--w", eye, *common, "--out", a) == 0
    assert run("replay", "--algo", "mlinucb", *common, "--out", b) == 0
    ca, cb = matrix_io.read_metrics(a), matrix_io.read_metrics(b)
    assert ca["bucket_ctr"] == cb["bucket_ctr"]
    assert len(ca["bucket_ctr"]) > 5


def test_random_replay_ctr_near_log_ctr(pipeline, tmp_path):
    out = tmp_path / "r.csv"
    assert run("replay", "--algo", "random", "--log", pipeline / "log.tsv", "--bucket", 100, "--out", out) == 0
    cols = matrix_io.read_metrics(out)
    clicks = [ev.click for ev in LogReader(pipeline / "log.tsv")]
    p = np.mean(clicks)
    n = sum(cols["matched"])
    assert abs(cols["cumulative_ctr"][-1] - p) < 3 * np.sqrt(p * (1 - p) / n)
    meta = matrix_io.parse_config_file(str(out) + ".meta")
    assert meta["algo"] == "random" and int(meta["matched"]) == n


def test_empty_log(tmp_path):
    log, out = tmp_path / "empty.tsv", tmp_path / "m.csv"
    log.write_text("")
    assert run("replay", "--algo", "random", "--log", log, "--out", out) == 0
    assert out.read_text() == matrix_io.METRICS_HEADER + "\n"


def test_malformed_lines_are_skipped(pipeline, tmp_path):
    lines = (pipeline / "log.tsv").read_text().splitlines()[:300]
    lines[10] = "not an event"
    lines[20] = lines[20].replace("\t", " ", 1)
    log = tmp_path / "dirty.tsv"
    log.write_text("\n".join(lines) + "\n")
    out = tmp_path / "m.csv"
    assert run("replay", "--algo", "random", "--log", log, "--bucket", 10, "--out", out) == 0
    meta = matrix_io.parse_config_file(str(out) + ".meta")
    assert int(meta["skipped"]) == 2 and int(meta["events"]) == 298


def test_drop_warmup(pipeline, tmp_path):
    full, short = tmp_path / "f.csv", tmp_path / "s.csv"
    common = ["replay", "--algo", "random", "--log", pipeline / "log.tsv", "--bucket", 20, "--window", 4]
    run(*common, "--out", full)
    run(*common, "--drop-warmup", "--out", short)
    nf = len(matrix_io.read_metrics(full)["bucket_index"])
    ns = matrix_io.read_metrics(short)["bucket_index"]
    assert len(ns) == nf - 3 and ns[0] == 3


def test_state_save_and_resume(pipeline, tmp_path):
    c = pipeline / "c6s.csv"
    run("cluster", "--log", pipeline / "log.tsv", "--k", 6, "--out", c)
    w = tmp_path / "w.csv"
    run("buildw", "--centroids", c, "--sparsity", 50, "--out", w)
    lines = (pipeline / "log.tsv").read_text().splitlines(keepends=True)
    first, second = tmp_path / "a.tsv", tmp_path / "b.tsv"
    first.write_text("".join(lines[:3000]))
    second.write_text("".join(lines[3000:]))
    whole = tmp_path / "whole.tsv"
    whole.write_text("".join(lines))
    common = ["--algo", "factorucb", "--centroids", c, "--w", w, "--latent-dim", 2, "--bucket", 1_000_000]
    s1, s2, s3 = tmp_path / "s1.txt", tmp_path / "s2.txt", tmp_path / "s3.txt"
    assert run("replay", *common, "--log", first, "--out", tmp_path / "m1.csv", "--save-state", s1) == 0
    assert run("replay", *common, "--log", second, "--load-state", s1, "--out", tmp_path / "m2.csv",
               "--save-state", s2) == 0
    assert run("replay", *common, "--log", whole, "--out", tmp_path / "m3.csv", "--save-state", s3) == 0
    assert s2.read_bytes() == s3.read_bytes()


def test_simulate_oracle_and_random(tmp_path):
    out = tmp_path / "o.csv"
    env = ["--clusters", 4, "--dim", 3, "--pool", 4, "--arms", 10, "--latent-dim", 1]
    assert run("simulate", "--algo", "oracle", "--T", 500, *env, "--out", out) == 0
    cols = np.loadtxt(out, delimiter=",", skiprows=1)
    assert np.all(cols[:, 2] == 0.0)
    assert out.read_text().startswith("step,inst_regret,cum_regret,cum_reward\n")
    r1, r2 = tmp_path / "r1.csv", tmp_path / "r2.csv"
    assert run("simulate", "--algo", "random", "--T", 500, *env, "--seed", 2, "--out", r1) == 0
    assert run("simulate", "--algo", "random", "--T", 500, *env, "--seed", 2, "--out", r2) == 0
    assert r1.read_bytes() == r2.read_bytes()


def test_report_self_and_scaled(tmp_path, capsys):
    a = tmp_path / "a.csv"
    a.write_text(matrix_io.METRICS_HEADER + "\n0,10,2,0.2,0.2,0.2\n1,10,2,0.2,0.2,0.2\n")
    b = tmp_path / "b.csv"
    b.write_text(matrix_io.METRICS_HEADER + "\n0,10,3,0.3,0.3,0.3\n1,10,3,0.3,0.3,0.3\n")
    rep = tmp_path / "rep.csv"
    assert run("report", "--runs", a, b, "--random", a, "--out", rep) == 0
    summary = capsys.readouterr().out.splitlines()
    assert summary[0] == "algo,clusters,sparsity,alpha,pct_over_random"
    assert summary[1].endswith(",+0.00")
    assert summary[2].endswith(",+50.00")
    body = rep.read_text().splitlines()[1:]
    assert [float(r.split(",")[6]) for r in body[:2]] == [1.0, 1.0]


def test_config_file_and_overrides(pipeline, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"# defaults\nalgo = random\nlog = {pipeline / 'log.tsv'}\nbucket = 100\n")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run("--config", cfg, "replay", "--out", a) == 0
    assert run("--config", cfg, "replay", "--bucket", 200, "--out", b) == 0
    assert matrix_io.read_metrics(a)["matched"][0] == 100
    assert matrix_io.read_metrics(b)["matched"][0] == 200
    bad = tmp_path / "bad.cfg"
    bad.write_text("no_such_flag = 3\n")
    assert run("--config", bad, "replay", "--out", a) == 2


@pytest.mark.parametrize(
    "argv, code",
    [
        (["replay", "--algo", "colin", "--log", "LOG", "--out", "OUT"], 2),
        (["replay", "--algo", "factorucb", "--log", "LOG", "--centroids", "C", "--w", "W",
          "--latent-dim", "0", "--out", "OUT"], 2),
        (["replay", "--algo", "random", "--log", "missing.tsv", "--out", "OUT"], 3),
        (["replay", "--algo", "nope", "--log", "LOG", "--out", "OUT"], 2),
        (["buildw", "--centroids", "missing.csv", "--out", "OUT"], 3),
        (["cluster", "--log", "LOG", "--k", "50", "--out", "OUT"], 2),
    ],
)
def test_exit_codes(pipeline, tmp_path, argv, code):
    subst = {"LOG": str(pipeline / "log.tsv"), "OUT": str(tmp_path / "o.csv"),
             "C": str(pipeline / "true_centroids.csv"), "W": str(pipeline / "true_w.csv"),
             "missing.tsv": str(tmp_path / "missing.tsv"), "missing.csv": str(tmp_path / "missing.csv")}
    assert main([subst.get(a, a) for a in argv]) == code


def test_corrupt_matrix_is_input_error(tmp_path, capsys):
    p = tmp_path / "w.csv"
    p.write_text("2,2\n1,0\n0\n")
    assert run("validate", "--w", p) == 3
    assert "line 3" in capsys.readouterr().err


@pytest.mark.slow
def test_grid_produces_36_rows(tmp_path):
    log = tmp_path / "log.tsv"
    run("genlog", "--T", 3000, "--clusters", 8, "--dim", 3, "--pool", 4, "--arms", 8, "--latent-dim", 2,
        "--reward-model", "bernoulli", "--out", log)
    outdir = tmp_path / "grid"
    assert run("grid", "--log", log, "--outdir", outdir, "--cluster-sizes", 4, 8, "--latent-dim", 2,
               "--bucket", 50, "--window", 5, "--jobs", 2) == 0
    rows = (outdir / "summary.csv").read_text().splitlines()
    assert len(rows) == 37
    labels = {tuple(r.split(",")[:4]) for r in rows[1:]}
    assert len(labels) == 36
    assert all(r.split(",")[4] for r in rows[1:])
    first = (outdir / "summary.csv").read_bytes()
    assert run("grid", "--log", log, "--outdir", outdir, "--cluster-sizes", 4, 8, "--latent-dim", 2,
               "--bucket", 50, "--window", 5) == 0
    assert (outdir / "summary.csv").read_bytes() == first
