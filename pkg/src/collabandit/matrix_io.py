"""Text formats: matrix CSV, metrics CSV and policy state snapshots.

Matrix CSV: first line ``rows,cols``, then one comma-separated row per line
with 17 significant digits, which round-trips float64 exactly.

State snapshot::

    collabandit-state 1
    algo=colin
    alpha=0.5
    ...
    [a_inv] 50,50
    <rows>
    [arms] 3
    <one arm id per line>
"""

from __future__ import annotations

import io
import math
from dataclasses import asdict
from pathlib import Path
from typing import Sequence, TextIO

import numpy as np
from numpy.typing import NDArray

from .errors import ParseError
from .policies import Policy, PolicyConfig, make_policy
from .replay import MetricsSeries
from .similarity import SimilarityMatrix

STATE_MAGIC = "collabandit-state"
STATE_VERSION = 1
METRICS_HEADER = "bucket_index,matched,clicks,bucket_ctr,rolling_ctr,cumulative_ctr"


def fmt(x: float | None) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return format(float(x), ".17g")


def _write_rows(out: TextIO, m: NDArray) -> None:
    for row in m:
        out.write(",".join(fmt(v) for v in row) + "\n")


def dump_matrix(m: NDArray, out: TextIO) -> None:
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    out.write(f"{m.shape[0]},{m.shape[1]}\n")
    _write_rows(out, m)


def write_matrix(path: str | Path, m: NDArray) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        dump_matrix(m, fh)


def _parse_shape(text: str, lineno: int) -> tuple[int, int]:
    try:
        r, c = (int(t) for t in text.split(","))
    except ValueError:
        raise ParseError(f"bad matrix shape {text.strip()!r}", lineno) from None
    if r < 0 or c < 0:
        raise ParseError("negative matrix shape", lineno)
    return r, c


def _read_rows(lines, r: int, c: int, start: int) -> NDArray:
    out = np.empty((r, c))
    for i in range(r):
        try:
            line = next(lines)
        except StopIteration:
            raise ParseError(f"expected {r} rows, found {i}", start + i) from None
        parts = line.strip().split(",") if c else []
        if len(parts) != c:
            raise ParseError(f"expected {c} values, found {len(parts)}", start + i + 1)
        try:
            out[i] = [float(p) for p in parts]
        except ValueError:
            raise ParseError("bad number", start + i + 1) from None
    return out


def load_matrix(src: TextIO) -> NDArray:
    lines = iter(src)
    try:
        header = next(lines)
    except StopIteration:
        raise ParseError("empty matrix file", 1) from None
    r, c = _parse_shape(header, 1)
    m = _read_rows(lines, r, c, 1)
    for extra in lines:
        if extra.strip():
            raise ParseError("trailing data after matrix", r + 2)
    if not np.all(np.isfinite(m)):
        raise ParseError("non-finite matrix entry")
    return m


def read_matrix(path: str | Path) -> NDArray:
    with open(path, encoding="utf-8") as fh:
        return load_matrix(fh)


def read_similarity(path: str | Path, sparsity_pct: float = 100.0) -> SimilarityMatrix:
    return SimilarityMatrix(read_matrix(path), sparsity_pct=sparsity_pct)


def metrics_rows(series: MetricsSeries, drop_warmup: bool = False) -> list[str]:
    rows = []
    start = series.window - 1 if drop_warmup else 0
    for i, (m, c, b, roll, cum) in enumerate(
        zip(series.matched, series.clicks, series.bucket_ctr, series.rolling_ctr, series.cumulative_ctr)
    ):
        if i < start:
            continue
        rows.append(f"{i},{m},{c},{fmt(b)},{fmt(roll)},{fmt(cum)}")
    return rows


def write_metrics(path: str | Path, series: MetricsSeries, drop_warmup: bool = False) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(METRICS_HEADER + "\n")
        for row in metrics_rows(series, drop_warmup):
            fh.write(row + "\n")


def read_metrics(path: str | Path) -> dict[str, list]:
    """Columns of a metrics CSV; empty fields come back as ``None``."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        names = header.split(",")
        if "bucket_index" not in names:
            raise ParseError(f"{path}: not a metrics CSV", 1)
        cols: dict[str, list] = {n: [] for n in names}
        for lineno, line in enumerate(fh, 2):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split(",")
            if len(parts) != len(names):
                raise ParseError(f"{path}: expected {len(names)} fields", lineno)
            for n, p in zip(names, parts):
                if n in ("bucket_index", "matched", "clicks"):
                    cols[n].append(int(p))
                else:
                    cols[n].append(float(p) if p else None)
    return cols


# -- policy snapshots -------------------------------------------------------

_CFG_FIELDS = ("alpha", "alpha1", "alpha2", "num_clusters", "feature_dim", "latent_dim",
               "seed", "latent_init_scale", "latent_theta")


def dump_state(policy: Policy, out: TextIO) -> None:
    cfg = policy.cfg
    out.write(f"{STATE_MAGIC} {STATE_VERSION}\n")
    out.write(f"algo={policy.name}\n")
    values = asdict(cfg)
    for key in _CFG_FIELDS:
        v = values[key]
        out.write(f"{key}={fmt(v) if isinstance(v, float) else v}\n")
    if cfg.w is not None:
        out.write(f"[w] {cfg.w.m},{cfg.w.m}\n")
        out.write(f"sparsity_pct={fmt(cfg.w.sparsity_pct)}\n")
        _write_rows(out, cfg.w.entries)
    for name, arr in policy.state_arrays().items():
        if arr.dtype == object:
            out.write(f"{name}=" + ",".join(str(int(v)) for v in arr.ravel()) + "\n")
            continue
        arr = np.atleast_2d(arr)
        out.write(f"[{name}] {arr.shape[0]},{arr.shape[1]}\n")
        _write_rows(out, arr)
    ids = policy.arm_ids()
    out.write(f"[arms] {len(ids)}\n")
    for a in ids:
        out.write(a + "\n")


def save_state(policy: Policy, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        dump_state(policy, fh)


def dumps_state(policy: Policy) -> str:
    buf = io.StringIO()
    dump_state(policy, buf)
    return buf.getvalue()


def load_state(src: TextIO) -> Policy:
    lines = iter(src)
    lineno = 1
    head = next(lines, "").split()
    if len(head) != 2 or head[0] != STATE_MAGIC:
        raise ParseError("not a policy snapshot", 1)
    if int(head[1]) != STATE_VERSION:
        raise ParseError(f"unsupported snapshot version {head[1]}", 1)
    keys: dict[str, str] = {}
    arrays: dict[str, NDArray] = {}
    arm_ids: list[str] = []
    w = None
    for line in lines:
        lineno += 1
        line = line.rstrip("\n")
        if not line:
            continue
        if line.startswith("["):
            name, _, shape = line[1:].partition("] ")
            if name == "arms":
                n = int(shape)
                arm_ids = [next(lines).rstrip("\n") for _ in range(n)]
                lineno += n
                continue
            r, c = _parse_shape(shape, lineno)
            if name == "w":
                sp = next(lines).rstrip("\n").partition("=")[2]
                lineno += 1
                w = SimilarityMatrix(_read_rows(lines, r, c, lineno), sparsity_pct=float(sp))
            else:
                arrays[name] = _read_rows(lines, r, c, lineno)
            lineno += r
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ParseError(f"unexpected line {line[:40]!r}", lineno)
        keys[key] = value
    algo = keys.pop("algo")
    rng = keys.pop("rng", None)
    types = {"num_clusters": int, "feature_dim": int, "latent_dim": int, "seed": int, "latent_theta": str}
    kwargs = {k: types.get(k, float)(v) for k, v in keys.items()}
    cfg = PolicyConfig(w=w, **kwargs)
    policy = make_policy(algo, cfg)
    if rng is not None:
        arrays["rng"] = np.array([int(v) for v in rng.split(",")], dtype=object)
    policy.load_state(arrays, arm_ids)
    return policy


def read_state(path: str | Path) -> Policy:
    with open(path, encoding="utf-8") as fh:
        return load_state(fh)


def loads_state(text: str) -> Policy:
    return load_state(io.StringIO(text))


def state_fingerprint(policy: Policy) -> str:
    """Stable digest of all learnable state; unchanged iff no parameter moved."""
    import hashlib

    return hashlib.sha256(dumps_state(policy).encode()).hexdigest()


def parse_config_file(path: str | Path) -> dict[str, str]:
    """``key=value`` lines; ``#`` starts a comment; keys use CLI flag names."""
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ParseError(f"{path}: expected key=value", lineno)
            out[key.strip().replace("-", "_")] = value.strip()
    return out


def as_columns(names: Sequence[str], rows: Sequence[Sequence]) -> str:
    lines = [",".join(names)]
    for r in rows:
        lines.append(",".join(fmt(v) if isinstance(v, float) or v is None else str(v) for v in r))
    return "\n".join(lines) + "\n"
