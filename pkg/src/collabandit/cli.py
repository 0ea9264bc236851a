"""Command-line front end: cluster -> buildw -> replay/simulate -> report.

Exit codes: 0 success, 2 configuration error, 3 unreadable or unparsable
input, 4 numeric degeneracy.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np

from . import matrix_io
from .clustering import ClusterModel, fit_kmeans, standardize
from .errors import DegenerateUpdate, ParseError, TooFewPoints, ZeroColumn
from .events import LogReader, write_log
from .policies import ALGORITHMS, PolicyConfig, make_policy
from .replay import DEFAULT_BUCKET, DEFAULT_WINDOW, normalize_by_random, pct_over, replay
from .similarity import SimilarityMatrix, build_w, sparsify
from .synth import EnvSpec, gen_environment, gen_log, policy_for, simulate

logger = logging.getLogger("collabandit")

EXIT_OK, EXIT_CONFIG, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3, 4


class ConfigError(Exception):
    pass


# -- argument plumbing ------------------------------------------------------

def _policy_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("policy")
    g.add_argument("--alpha", type=float, default=0.5, help="UCB width for linucb/mlinucb/colin")
    g.add_argument("--alpha1", type=float, default=0.375, help="FactorUCB context radius")
    g.add_argument("--alpha2", type=float, default=0.375, help="FactorUCB latent radius")
    g.add_argument("--latent-dim", type=int, default=5, help="FactorUCB latent dimension")
    g.add_argument("--latent-init", type=float, default=0.1,
                   help="half-width of the random start for new arms' latent vectors (0 = zeros)")
    g.add_argument("--latent-theta", choices=("pre", "post"), default="pre",
                   help="parameter estimate used in the latent update")
    g.add_argument("--seed", type=int, default=0)


def _env_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("synthetic environment")
    g.add_argument("--clusters", "-M", dest="clusters", type=int, default=10)
    g.add_argument("--dim", "-d", dest="dim", type=int, default=5)
    g.add_argument("--env-latent-dim", type=int, default=None,
                   help="true latent dimension (defaults to --latent-dim)")
    g.add_argument("--pool", "-K", dest="pool", type=int, default=10)
    g.add_argument("--arms", type=int, default=None, help="catalog size (defaults to the pool size)")
    g.add_argument("--user-dim", type=int, default=None)
    g.add_argument("--noise", type=float, default=0.1)
    g.add_argument("--reward-model", choices=("gaussian", "bernoulli"), default="gaussian")
    g.add_argument("--collab", type=float, default=0.5)
    g.add_argument("--env-seed", type=int, default=None, help="environment seed (defaults to --seed)")


def _env_spec(a, T: int) -> EnvSpec:
    return EnvSpec(
        M=a.clusters, d=a.dim, d_l=a.latent_dim if a.env_latent_dim is None else a.env_latent_dim,
        K=a.pool, n_arms=a.arms, d_u=a.user_dim, T=T, noise_std=a.noise,
        reward_model=a.reward_model, collab=a.collab,
        seed=a.seed if a.env_seed is None else a.env_seed,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="collabandit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--config", help="key=value file supplying defaults for flags")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("cluster", help="k-means over the user features of a log")
    p.add_argument("--log", required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iters", type=int, default=100)
    p.add_argument("--standardize", action="store_true", help="cluster on z-scored features")
    p.add_argument("--out", required=True)

    p = sub.add_parser("buildw", help="similarity matrix from centroids")
    p.add_argument("--centroids", required=True)
    p.add_argument("--sparsity", type=float, default=100.0, help="percent of weights kept per column")
    p.add_argument("--out", required=True)

    p = sub.add_parser("validate", help="check a similarity matrix file")
    p.add_argument("--w", required=True)

    p = sub.add_parser("replay", help="offline replay evaluation on an event log")
    p.add_argument("--algo", choices=ALGORITHMS, required=True)
    p.add_argument("--log", required=True)
    p.add_argument("--centroids", help="centroid CSV (required for mlinucb/colin/factorucb)")
    p.add_argument("--w", help="similarity CSV (required for colin/factorucb)")
    p.add_argument("--sparsity", type=float, default=100.0, help="label recorded for reports")
    p.add_argument("--bucket", type=int, default=DEFAULT_BUCKET)
    p.add_argument("--window", type=int, default=DEFAULT_WINDOW)
    p.add_argument("--count", choices=("matched", "raw"), default="matched")
    p.add_argument("--drop-warmup", action="store_true")
    p.add_argument("--save-state")
    p.add_argument("--load-state")
    p.add_argument("--out", required=True)
    _policy_args(p)

    p = sub.add_parser("simulate", help="run a policy live against a synthetic environment")
    p.add_argument("--algo", choices=ALGORITHMS + ("oracle",), required=True)
    p.add_argument("--T", type=int, default=10_000)
    p.add_argument("--w", help="similarity CSV for the policy (defaults to the true W*)")
    p.add_argument("--out", required=True)
    _policy_args(p)
    _env_args(p)

    p = sub.add_parser("genlog", help="write a uniformly-logged synthetic event log")
    p.add_argument("--T", type=int, default=10_000)
    p.add_argument("--out", required=True)
    p.add_argument("--centroids-out", help="also write the true cluster centroids")
    p.add_argument("--w-out", help="also write the true similarity matrix")
    p.add_argument("--latent-dim", type=int, default=5, help="true latent dimension")
    p.add_argument("--seed", type=int, default=0)
    _env_args(p)

    p = sub.add_parser("report", help="normalize replay metrics by a random baseline")
    p.add_argument("--runs", nargs="+", required=True)
    p.add_argument("--random", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--summary", help="summary CSV (defaults to stdout)")

    p = sub.add_parser("grid", help="cluster/buildw/replay over a configuration grid, then report")
    p.add_argument("--log", required=True)
    p.add_argument("--outdir", required=True)
    p.add_argument("--cluster-sizes", type=int, nargs="+", default=[80, 160])
    p.add_argument("--sparsities", type=float, nargs="+", default=[25.0, 50.0, 100.0])
    p.add_argument("--alphas", type=float, nargs="+", default=[0.5, 1.0])
    p.add_argument("--algos", nargs="+", choices=ALGORITHMS, default=["mlinucb", "colin", "factorucb"])
    p.add_argument("--bucket", type=int, default=DEFAULT_BUCKET)
    p.add_argument("--window", type=int, default=DEFAULT_WINDOW)
    p.add_argument("--count", choices=("matched", "raw"), default="matched")
    p.add_argument("--jobs", type=int, default=1)
    _policy_args(p)
    return parser


def parse_args(argv: Sequence[str] | None) -> argparse.Namespace:
    argv = list(sys.argv[1:] if argv is None else argv)
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    parser = build_parser()
    if known.config:
        try:
            values = matrix_io.parse_config_file(known.config)
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
        subs = parser._subparsers._group_actions[0].choices
        command = next((t for t in argv if t in subs), None)
        if command is None:
            raise ConfigError("no command given")
        sub = subs[command]
        known_actions = {a.dest: a for a in sub._actions}
        defaults = {}
        for key, raw in values.items():
            act = known_actions.get(key)
            if act is None:
                raise ConfigError(f"unknown config key {key!r} for {command}")
            try:
                if act.nargs in ("+", "*"):
                    defaults[key] = [act.type(v) if act.type else v for v in raw.split()]
                elif act.const is True:
                    defaults[key] = raw.lower() in ("1", "true", "yes")
                else:
                    defaults[key] = act.type(raw) if act.type else raw
            except ValueError:
                raise ConfigError(f"bad value {raw!r} for config key {key!r}") from None
            act.required = False
        sub.set_defaults(**defaults)
    return parser.parse_args(argv)


# -- commands ---------------------------------------------------------------

def _sidecar(path: str | Path) -> Path:
    return Path(str(path) + ".meta")


def cmd_cluster(a) -> int:
    reader = LogReader(a.log)
    users = np.array([ev.user_features for ev in reader])
    if reader.skipped:
        logger.warning("skipped %d malformed lines", reader.skipped)
    if users.size == 0:
        raise ConfigError("log contains no events")
    points = users
    if a.standardize:
        points, mean, scale = standardize(users)
    model = fit_kmeans(points, a.k, seed=a.seed, max_iters=a.max_iters)
    centroids = model.centroids
    if a.standardize:
        centroids = centroids * scale + mean
    matrix_io.write_matrix(a.out, centroids)
    logger.info("wrote %d centroids to %s", a.k, a.out)
    return EXIT_OK


def cmd_buildw(a) -> int:
    w = sparsify(build_w(matrix_io.read_matrix(a.centroids)), a.sparsity)
    matrix_io.write_matrix(a.out, w.entries)
    return EXIT_OK


def cmd_validate(a) -> int:
    w = matrix_io.read_similarity(a.w)
    problems = w.validate()
    for p in problems:
        print(f"{a.w}: {p}")
    if problems:
        return EXIT_NUMERIC
    print(f"{a.w}: ok ({w.m}x{w.m})")
    return EXIT_OK


def _policy_config(a, num_clusters: int, feature_dim: int, w: SimilarityMatrix | None) -> PolicyConfig:
    return PolicyConfig(
        alpha=a.alpha, alpha1=a.alpha1, alpha2=a.alpha2, num_clusters=num_clusters,
        feature_dim=feature_dim, latent_dim=a.latent_dim if a.algo == "factorucb" else 0,
        w=w, seed=a.seed, latent_init_scale=a.latent_init, latent_theta=a.latent_theta,
    )


def _first_event(path):
    for ev in LogReader(path):
        return ev
    return None


def run_replay(a) -> int:
    if a.algo in ("mlinucb", "colin", "factorucb") and not a.centroids:
        raise ConfigError(f"--centroids is required for {a.algo}")
    if a.algo in ("colin", "factorucb") and not a.w:
        raise ConfigError(f"--w is required for {a.algo}")
    if a.algo == "factorucb" and a.latent_dim < 1:
        raise ConfigError("factorucb needs --latent-dim >= 1")
    if a.bucket < 1 or a.window < 1:
        raise ConfigError("--bucket and --window must be positive")
    model = ClusterModel(matrix_io.read_matrix(a.centroids)) if a.centroids else None
    w = matrix_io.read_similarity(a.w, a.sparsity) if a.w else None
    if w is not None and model is not None and w.m != model.k:
        raise ConfigError(f"W is {w.m}x{w.m} but there are {model.k} centroids")
    first = _first_event(a.log)
    meta = {"algo": a.algo, "clusters": model.k if model else 0, "sparsity": a.sparsity,
            "alpha": a.alpha}
    if first is None:
        with open(a.out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(matrix_io.METRICS_HEADER + "\n")
        _write_meta(a.out, meta)
        return EXIT_OK
    if a.load_state:
        policy = matrix_io.read_state(a.load_state)
    else:
        cfg = _policy_config(a, model.k if model else 1, first.features.shape[1], w)
        policy = make_policy(a.algo, cfg)
    reader = LogReader(a.log)
    series = replay(policy, model, reader, bucket_size=a.bucket, window=a.window, count=a.count)
    matrix_io.write_metrics(a.out, series, drop_warmup=a.drop_warmup)
    meta.update(events=series.events, matched=series.total_matched, clicks=series.total_clicks,
                skipped=reader.skipped + series.malformed)
    _write_meta(a.out, meta)
    if a.save_state:
        matrix_io.save_state(policy, a.save_state)
    logger.info("%s: %d events, %d matched, ctr %.6f, %d skipped", a.algo, series.events,
                series.total_matched, series.ctr, reader.skipped + series.malformed)
    return EXIT_OK


def _write_meta(path, meta: dict) -> None:
    with open(_sidecar(path), "w", encoding="utf-8", newline="\n") as fh:
        for k, v in meta.items():
            fh.write(f"{k}={matrix_io.fmt(v) if isinstance(v, float) else v}\n")


def _read_meta(path) -> dict[str, str]:
    p = _sidecar(path)
    if not p.exists():
        return {"algo": Path(path).stem, "clusters": "", "sparsity": "", "alpha": ""}
    return matrix_io.parse_config_file(p)


def run_simulate(a) -> int:
    if a.T < 1:
        raise ConfigError("--T must be positive")
    env = gen_environment(_env_spec(a, a.T))
    if a.algo == "oracle":
        policy = policy_for("oracle", env)
    else:
        w = matrix_io.read_similarity(a.w) if a.w else env.w_star
        if w.m != env.spec.M:
            raise ConfigError(f"W is {w.m}x{w.m} but the environment has {env.spec.M} clusters")
        cfg = _policy_config(a, env.spec.M, env.spec.d, w)
        if a.algo == "factorucb" and cfg.latent_dim < 1:
            raise ConfigError("factorucb needs --latent-dim >= 1")
        policy = make_policy(a.algo, cfg)
    res = simulate(env, policy, T=a.T, seed=a.seed)
    cum_regret, cum_reward = res.cum_regret, res.cum_reward
    with open(a.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("step,inst_regret,cum_regret,cum_reward\n")
        f = matrix_io.fmt
        for t in range(a.T):
            fh.write(f"{t + 1},{f(res.inst_regret[t])},{f(cum_regret[t])},{f(cum_reward[t])}\n")
    logger.info("%s: cumulative regret %.4f, reward %.4f", a.algo, cum_regret[-1], cum_reward[-1])
    return EXIT_OK


def run_genlog(a) -> int:
    if a.T < 1:
        raise ConfigError("--T must be positive")
    env = gen_environment(_env_spec(a, a.T))
    write_log(gen_log(env, a.T, seed=a.seed), a.out)
    if a.centroids_out:
        matrix_io.write_matrix(a.centroids_out, env.centroids)
    if a.w_out:
        matrix_io.write_matrix(a.w_out, env.w_star.entries)
    return EXIT_OK


def build_report(runs: Sequence[str], random_path: str) -> tuple[str, list[tuple]]:
    """Normalized report CSV text and one summary row per run."""
    rand = matrix_io.read_metrics(random_path)
    rand_cum = dict(zip(rand["bucket_index"], rand["cumulative_ctr"]))
    rand_roll = dict(zip(rand["bucket_index"], rand["rolling_ctr"]))
    rand_final = rand["cumulative_ctr"][-1] if rand["cumulative_ctr"] else None
    lines = ["run,algo,clusters,sparsity,alpha,bucket_index,cumulative_ratio,rolling_ratio"]
    summary = []
    for k, path in enumerate(runs):
        meta = _read_meta(path)
        cols = matrix_io.read_metrics(path)
        label = (meta.get("algo", ""), meta.get("clusters", ""), meta.get("sparsity", ""), meta.get("alpha", ""))
        for b, cum, roll in zip(cols["bucket_index"], cols["cumulative_ctr"], cols["rolling_ctr"]):
            cr = normalize_by_random([cum], [rand_cum.get(b)])[0] if cum is not None else None
            rr = normalize_by_random([roll], [rand_roll.get(b)])[0] if roll is not None else None
            lines.append(",".join([str(k), *label, str(b), matrix_io.fmt(cr), matrix_io.fmt(rr)]))
        final = cols["cumulative_ctr"][-1] if cols["cumulative_ctr"] else None
        ratio = final / rand_final if final is not None and rand_final else None
        summary.append((*label, pct_over(ratio)))
    return "\n".join(lines) + "\n", summary


def _format_pct(p: float | None) -> str:
    return "" if p is None else f"{p:+.2f}"


def summary_text(summary: list[tuple]) -> str:
    out = ["algo,clusters,sparsity,alpha,pct_over_random"]
    out += [",".join([*map(str, row[:4]), _format_pct(row[4])]) for row in summary]
    return "\n".join(out) + "\n"


def run_report(a) -> int:
    text, summary = build_report(a.runs, a.random)
    Path(a.out).write_text(text, encoding="utf-8")
    s = summary_text(summary)
    if a.summary:
        Path(a.summary).write_text(s, encoding="utf-8")
    else:
        sys.stdout.write(s)
    return EXIT_OK


def _grid_job(argv: list[str]) -> int:
    return main(argv)


def _num(x: float) -> str:
    return f"{x:g}"


def run_grid(a) -> int:
    out = Path(a.outdir)
    out.mkdir(parents=True, exist_ok=True)
    if a.jobs < 1:
        raise ConfigError("--jobs must be positive")
    common = ["--bucket", str(a.bucket), "--window", str(a.window), "--count", a.count,
              "--seed", str(a.seed), "--alpha1", repr(a.alpha1), "--alpha2", repr(a.alpha2),
              "--latent-dim", str(a.latent_dim), "--latent-init", repr(a.latent_init),
              "--latent-theta", a.latent_theta]
    prep = []
    for k in a.cluster_sizes:
        cpath = out / f"centroids_c{k}.csv"
        prep.append(["cluster", "--log", a.log, "--k", str(k), "--seed", str(a.seed), "--out", str(cpath)])
    _run_all(prep, a.jobs)
    prep = []
    for k in a.cluster_sizes:
        for s in a.sparsities:
            prep.append(["buildw", "--centroids", str(out / f"centroids_c{k}.csv"), "--sparsity", repr(s),
                         "--out", str(out / f"w_c{k}_s{_num(s)}.csv")])
    _run_all(prep, a.jobs)

    jobs, runs = [], []
    random_path = out / "metrics_random.csv"
    jobs.append(["replay", "--algo", "random", "--log", a.log, "--out", str(random_path), *common])
    for algo in a.algos:
        for k in a.cluster_sizes:
            for s in a.sparsities:
                for alpha in a.alphas:
                    name = f"metrics_{algo}_c{k}_s{_num(s)}_a{_num(alpha)}.csv"
                    argv = ["replay", "--algo", algo, "--log", a.log, "--out", str(out / name),
                            "--centroids", str(out / f"centroids_c{k}.csv"), "--sparsity", repr(s),
                            *common, "--alpha", repr(alpha)]
                    if algo in ("colin", "factorucb"):
                        argv += ["--w", str(out / f"w_c{k}_s{_num(s)}.csv")]
                    jobs.append(argv)
                    runs.append(str(out / name))
    _run_all(jobs, a.jobs)
    text, summary = build_report(runs, str(random_path))
    (out / "report.csv").write_text(text, encoding="utf-8")
    (out / "summary.csv").write_text(summary_text(summary), encoding="utf-8")
    sys.stdout.write(summary_text(summary))
    return EXIT_OK


def _run_all(jobs: list[list[str]], n: int) -> None:
    if n == 1:
        codes = [main(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n) as pool:
            codes = list(pool.map(_grid_job, jobs))
    bad = [(j[0], c) for j, c in zip(jobs, codes) if c]
    if bad:
        raise ConfigError(f"{len(bad)} grid job(s) failed, first: {bad[0][0]} exited {bad[0][1]}")


COMMANDS = {
    "cluster": cmd_cluster,
    "buildw": cmd_buildw,
    "validate": cmd_validate,
    "replay": run_replay,
    "simulate": run_simulate,
    "genlog": run_genlog,
    "report": run_report,
    "grid": run_grid,
}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = parse_args(argv)
    except ConfigError as exc:
        print(f"collabandit: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # argparse usage errors
        return int(exc.code) if exc.code is not None else EXIT_OK
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, TooFewPoints, ValueError) as exc:
        if isinstance(exc, ParseError):
            print(f"collabandit: {exc}", file=sys.stderr)
            return EXIT_INPUT
        print(f"collabandit: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"collabandit: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (DegenerateUpdate, ZeroColumn) as exc:
        print(f"collabandit: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
