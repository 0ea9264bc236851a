"""Decision policies sharing one select-then-update interface.

Every policy scores a pool of candidates for the current user cluster,
pulls the first maximizer, and learns from the observed reward:

* :class:`RandomPolicy` - uniform choice, the normalization baseline.
* :class:`LinUCB` - one ridge model per arm.
* :class:`MLinUCB` - one ridge model per user cluster, no sharing.
* :class:`CoLin` - cluster models coupled through a similarity matrix ``W``.
* :class:`FactorUCB` - CoLin plus learned per-arm latent factors.

Pools are passed as ``(arm_ids, features)`` with ``features`` of shape
``(K, d)``; :meth:`Policy.select` returns a row index into the pool.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from .clustering import ClusterModel
from .errors import DimensionMismatch, EmptyPool
from .events import Candidate, EventRecord
from .linalg import InverseState, kron_rows, kron_vec, reshape_mat
from .similarity import SimilarityMatrix

ALGORITHMS = ("random", "linucb", "mlinucb", "colin", "factorucb")


@dataclass(frozen=True)
class PolicyConfig:
    alpha: float = 0.5
    alpha1: float = 0.375
    alpha2: float = 0.375
    num_clusters: int = 1
    feature_dim: int = 1
    latent_dim: int = 0
    w: SimilarityMatrix | None = None
    seed: int = 0
    # FactorUCB: half-width of the uniform draw for new arms' latent vectors
    latent_init_scale: float = 0.0
    # FactorUCB: which parameter estimate feeds the latent step, "pre" or "post" update
    latent_theta: str = "pre"

    def __post_init__(self):
        for name in ("alpha", "alpha1", "alpha2", "latent_init_scale"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.num_clusters < 1 or self.feature_dim < 1 or self.latent_dim < 0:
            raise ValueError("num_clusters and feature_dim must be positive, latent_dim nonnegative")
        if self.w is not None and self.w.m != self.num_clusters:
            raise DimensionMismatch(f"W is {self.w.m}x{self.w.m} but num_clusters is {self.num_clusters}")
        if self.latent_theta not in ("pre", "post"):
            raise ValueError("latent_theta must be 'pre' or 'post'")

    def with_(self, **changes) -> "PolicyConfig":
        return replace(self, **changes)


def rng_snapshot(rng: np.random.Generator) -> NDArray:
    """Full PCG64 state as integers: state, inc and the buffered 32-bit draw."""
    st = rng.bit_generator.state
    inner = st["state"]
    return np.array([inner["state"], inner["inc"], st["has_uint32"], st["uinteger"]], dtype=object)


def rng_restore(rng: np.random.Generator, snap: NDArray) -> None:
    vals = [int(v) for v in np.asarray(snap, dtype=object).ravel()]
    if len(vals) != 4:
        raise ValueError("rng snapshot needs state, inc, has_uint32 and uinteger")
    st = rng.bit_generator.state
    st["state"] = {"state": vals[0], "inc": vals[1]}
    st["has_uint32"], st["uinteger"] = vals[2], vals[3]
    rng.bit_generator.state = st


# scores this close to the maximum (relative) count as tied
TIE_TOL = 1e-12


def first_argmax(scores: NDArray) -> int:
    """Index of the largest score; the earliest candidate wins ties.

    Scores within ``TIE_TOL`` (relative) of the maximum are ties, so rounding
    noise from mathematically equal scores cannot pick the winner.
    """
    if scores.shape[0] == 0:
        raise EmptyPool("candidate pool is empty")
    top = scores.max()
    return int(np.argmax(scores >= top - TIE_TOL * max(1.0, abs(top))))


class Policy:
    name = "policy"
    uses_clusters = True
    uses_features = True

    def __init__(self, cfg: PolicyConfig):
        self.cfg = cfg

    def scores(self, cluster: int, arm_ids: Sequence[str], features: NDArray) -> NDArray:
        raise NotImplementedError

    def select(self, cluster: int, arm_ids: Sequence[str], features: NDArray) -> int:
        features = np.asarray(features, dtype=np.float64)
        if len(arm_ids) == 0:
            raise EmptyPool("candidate pool is empty")
        return first_argmax(self.scores(cluster, arm_ids, features))

    def update(self, cluster: int, arm_id: str, x: NDArray, reward: float) -> None:
        raise NotImplementedError

    def select_candidate(self, cluster: int, candidates: Sequence[Candidate]) -> str:
        if not candidates:
            raise EmptyPool("candidate pool is empty")
        ids = [c.arm_id for c in candidates]
        idx = self.select(cluster, ids, np.array([c.features for c in candidates], dtype=np.float64))
        return ids[idx]

    def state_arrays(self) -> dict[str, NDArray]:
        """Every learnable quantity, by name (used for snapshots and state hashing)."""
        return {}

    def arm_ids(self) -> list[str]:
        return []

    def load_state(self, arrays: dict[str, NDArray], arm_ids: Sequence[str] = ()) -> None:
        if arrays:
            raise ValueError(f"{self.name} has no array state")

    def _check_cluster(self, cluster: int) -> None:
        if not 0 <= cluster < self.cfg.num_clusters:
            raise IndexError(f"cluster {cluster} out of range for {self.cfg.num_clusters} clusters")


class RandomPolicy(Policy):
    """Uniform draw over the pool from a seeded generator."""

    name = "random"
    uses_clusters = False
    uses_features = False

    def __init__(self, cfg: PolicyConfig):
        super().__init__(cfg)
        self.rng = np.random.default_rng(cfg.seed)

    def scores(self, cluster, arm_ids, features):
        return np.zeros(len(arm_ids))

    def select(self, cluster, arm_ids, features):
        if len(arm_ids) == 0:
            raise EmptyPool("candidate pool is empty")
        return int(self.rng.integers(len(arm_ids)))

    def update(self, cluster, arm_id, x, reward):
        pass

    def state_arrays(self):
        return {"rng": rng_snapshot(self.rng)}

    def load_state(self, arrays, arm_ids=()):
        rng_restore(self.rng, arrays["rng"])


class _ArmTable:
    """Per-arm parameter blocks in growable arrays, created lazily on first sight."""

    def __init__(self, shapes: dict[str, tuple[int, ...]], init):
        self.index: dict[str, int] = {}
        self.ids: list[str] = []
        self.shapes = shapes
        self.init = init
        self.arrays = {k: np.zeros((8,) + s) for k, s in shapes.items()}

    def __len__(self):
        return len(self.ids)

    def lookup(self, arm_ids: Sequence[str]) -> NDArray[np.intp]:
        out = np.empty(len(arm_ids), dtype=np.intp)
        for k, a in enumerate(arm_ids):
            idx = self.index.get(a)
            if idx is None:
                idx = self._add(a)
            out[k] = idx
        return out

    def _add(self, arm_id: str) -> int:
        idx = len(self.ids)
        cap = next(iter(self.arrays.values())).shape[0]
        if idx == cap:
            for k, arr in self.arrays.items():
                grown = np.zeros((2 * cap,) + arr.shape[1:])
                grown[:cap] = arr
                self.arrays[k] = grown
        self.ids.append(arm_id)
        self.index[arm_id] = idx
        self.init(self.arrays, idx)
        return idx

    def view(self, name: str) -> NDArray:
        return self.arrays[name][: len(self.ids)]

    def load(self, arm_ids: Sequence[str], arrays: dict[str, NDArray]) -> None:
        self.index, self.ids = {}, []
        n = len(arm_ids)
        cap = max(8, n)
        self.arrays = {k: np.zeros((cap,) + s) for k, s in self.shapes.items()}
        for k in self.shapes:
            self.arrays[k][:n] = np.asarray(arrays[k], dtype=np.float64).reshape((n,) + self.shapes[k])
        self.ids = list(arm_ids)
        self.index = {a: i for i, a in enumerate(self.ids)}


def _eye_init(name: str):
    def init(arrays, idx):
        arrays[name][idx] = np.eye(arrays[name].shape[1])
    return init


class LinUCB(Policy):
    """Disjoint LinUCB: each arm keeps ``A_a^{-1}`` and ``b_a``; clusters are ignored."""

    name = "linucb"
    uses_clusters = False

    def __init__(self, cfg: PolicyConfig):
        super().__init__(cfg)
        d = cfg.feature_dim
        self.arms = _ArmTable({"a_inv": (d, d), "b": (d,)}, _eye_init("a_inv"))

    def scores(self, cluster, arm_ids, features):
        idx = self.arms.lookup(arm_ids)
        a_inv = self.arms.arrays["a_inv"][idx]
        b = self.arms.arrays["b"][idx]
        theta = np.einsum("kij,kj->ki", a_inv, b)
        mean = np.einsum("ki,ki->k", theta, features)
        var = np.einsum("ki,kij,kj->k", features, a_inv, features)
        return mean + self.cfg.alpha * np.sqrt(np.maximum(var, 0.0))

    def score(self, candidate: Candidate) -> float:
        return float(self.scores(0, [candidate.arm_id], candidate.features[None, :])[0])

    def theta(self, arm_id: str) -> NDArray:
        i = self.arms.lookup([arm_id])[0]
        return self.arms.arrays["a_inv"][i] @ self.arms.arrays["b"][i]

    def update(self, cluster, arm_id, x, reward):
        i = self.arms.lookup([arm_id])[0]
        x = np.asarray(x, dtype=np.float64)
        state = InverseState(self.cfg.feature_dim, self.arms.arrays["a_inv"][i])
        state.update(x)
        self.arms.arrays["a_inv"][i] = state.inv
        self.arms.arrays["b"][i] += reward * x

    def state_arrays(self):
        n, d = len(self.arms), self.cfg.feature_dim
        return {"a_inv": self.arms.view("a_inv").reshape(n * d, d), "b": self.arms.view("b")}

    def arm_ids(self):
        return list(self.arms.ids)

    def load_state(self, arrays, arm_ids=()):
        self.arms.load(arm_ids, arrays)


class MLinUCB(Policy):
    """One independent ridge model per user cluster."""

    name = "mlinucb"

    def __init__(self, cfg: PolicyConfig):
        super().__init__(cfg)
        d, m = cfg.feature_dim, cfg.num_clusters
        self.inv = [InverseState(d) for _ in range(m)]
        self.b = np.zeros((m, d))

    def theta(self, cluster: int) -> NDArray:
        return self.inv[cluster].inv @ self.b[cluster]

    def scores(self, cluster, arm_ids, features):
        self._check_cluster(cluster)
        state = self.inv[cluster]
        mean = features @ self.theta(cluster)
        var = state.quad_forms(features)
        return mean + self.cfg.alpha * np.sqrt(np.maximum(var, 0.0))

    def update(self, cluster, arm_id, x, reward):
        self._check_cluster(cluster)
        x = np.asarray(x, dtype=np.float64)
        self.inv[cluster].update(x)
        self.b[cluster] += reward * x

    def state_arrays(self):
        return {"a_inv": np.vstack([s.inv for s in self.inv]), "b": self.b}

    def load_state(self, arrays, arm_ids=()):
        d, m = self.cfg.feature_dim, self.cfg.num_clusters
        blocks = np.asarray(arrays["a_inv"], dtype=np.float64).reshape(m, d, d)
        self.inv = [InverseState(d, blocks[i].copy()) for i in range(m)]
        self.b = np.asarray(arrays["b"], dtype=np.float64).reshape(m, d).copy()


class CoLin(Policy):
    """Collaborative LinUCB over cluster parameters coupled by ``W``.

    The joint parameter is ``Theta`` (d x M); cluster ``i`` acts with
    ``Theta @ w_i``. A pull by cluster ``i`` with context ``x`` adds the
    rank-one term ``(w_i ⊗ x)(w_i ⊗ x)^T`` to the dM x dM design matrix.
    """

    name = "colin"

    def __init__(self, cfg: PolicyConfig):
        super().__init__(cfg)
        if cfg.w is None:
            raise ValueError(f"{self.name} needs a similarity matrix")
        self.w = cfg.w.entries
        self.block = self._block_dim()
        n = self.block * cfg.num_clusters
        self.a_inv = InverseState(n)
        self.b = np.zeros(n)
        self.theta = np.zeros((self.block, cfg.num_clusters))

    def _block_dim(self) -> int:
        return self.cfg.feature_dim

    def cluster_theta(self, cluster: int) -> NDArray:
        """Effective parameter ``Theta @ w_i`` of a cluster."""
        return self.theta @ self.w[:, cluster]

    def scores(self, cluster, arm_ids, features):
        self._check_cluster(cluster)
        w_i = self.w[:, cluster]
        mean = features @ (self.theta @ w_i)
        var = self.a_inv.quad_forms(kron_rows(w_i, features))
        return mean + self.cfg.alpha * np.sqrt(np.maximum(var, 0.0))

    def _learn(self, cluster: int, z: NDArray, reward: float) -> None:
        u = kron_vec(self.w[:, cluster], z)
        self.a_inv.update(u)
        self.b += reward * u
        self.theta = reshape_mat(self.a_inv.inv @ self.b, self.block, self.cfg.num_clusters)

    def update(self, cluster, arm_id, x, reward):
        self._check_cluster(cluster)
        self._learn(cluster, np.asarray(x, dtype=np.float64), reward)

    def state_arrays(self):
        return {"a_inv": self.a_inv.inv, "b": self.b[:, None], "theta": self.theta}

    def load_state(self, arrays, arm_ids=()):
        n = self.a_inv.dim
        self.a_inv = InverseState(n, np.asarray(arrays["a_inv"], dtype=np.float64).reshape(n, n).copy())
        self.b = np.asarray(arrays["b"], dtype=np.float64).reshape(n).copy()
        self.theta = reshape_mat(self.a_inv.inv @ self.b, self.block, self.cfg.num_clusters)


class FactorUCB(CoLin):
    """CoLin over augmented contexts ``(x_a, v_a)`` with learned latent arm factors.

    Per arm it keeps ``E_a^{-1}``, ``d_a`` and ``v_a = E_a^{-1} d_a``. With
    ``latent_init_scale > 0`` a new arm starts from a random ``v_a`` that
    acts as the prior mean (``d_a = v_a`` while ``E_a = I``); at zero the
    latent block can never leave zero and the policy behaves like CoLin.
    """

    name = "factorucb"

    def __init__(self, cfg: PolicyConfig):
        super().__init__(cfg)
        dl = cfg.latent_dim
        self.rng = np.random.default_rng(cfg.seed)
        self.arms = _ArmTable({"e_inv": (dl, dl), "d_vec": (dl,), "v_hat": (dl,)}, self._init_arm)

    def _block_dim(self) -> int:
        return self.cfg.feature_dim + self.cfg.latent_dim

    def _init_arm(self, arrays, idx):
        dl = self.cfg.latent_dim
        arrays["e_inv"][idx] = np.eye(dl)
        s = self.cfg.latent_init_scale
        if s > 0 and dl > 0:
            v0 = self.rng.uniform(-s, s, dl)
            arrays["d_vec"][idx] = v0
            arrays["v_hat"][idx] = v0

    def v_hat(self, arm_id: str) -> NDArray:
        return self.arms.arrays["v_hat"][self.arms.lookup([arm_id])[0]].copy()

    def scores(self, cluster, arm_ids, features):
        self._check_cluster(cluster)
        d = self.cfg.feature_dim
        idx = self.arms.lookup(arm_ids)
        w_i = self.w[:, cluster]
        z = np.hstack([features, self.arms.arrays["v_hat"][idx]])
        theta_w = self.theta @ w_i
        mean = z @ theta_w
        var1 = self.a_inv.quad_forms(kron_rows(w_i, z))
        p = mean + self.cfg.alpha1 * np.sqrt(np.maximum(var1, 0.0))
        if self.cfg.latent_dim:
            g = theta_w[d:]
            var2 = np.einsum("j,kjl,l->k", g, self.arms.arrays["e_inv"][idx], g)
            p = p + self.cfg.alpha2 * np.sqrt(np.maximum(var2, 0.0))
        return p

    def update(self, cluster, arm_id, x, reward):
        self._check_cluster(cluster)
        d, dl = self.cfg.feature_dim, self.cfg.latent_dim
        a = self.arms.lookup([arm_id])[0]
        x = np.asarray(x, dtype=np.float64)
        theta_w_pre = self.theta @ self.w[:, cluster]
        self._learn(cluster, np.concatenate([x, self.arms.arrays["v_hat"][a]]), reward)
        if not dl:
            return
        theta_w = theta_w_pre if self.cfg.latent_theta == "pre" else self.theta @ self.w[:, cluster]
        g = theta_w[d:]
        e = InverseState(dl, self.arms.arrays["e_inv"][a])
        e.update(g)
        self.arms.arrays["e_inv"][a] = e.inv
        self.arms.arrays["d_vec"][a] += g * (reward - x @ theta_w[:d])
        self.arms.arrays["v_hat"][a] = e.inv @ self.arms.arrays["d_vec"][a]

    def state_arrays(self):
        out = super().state_arrays()
        n, dl = len(self.arms), self.cfg.latent_dim
        out["e_inv"] = self.arms.view("e_inv").reshape(n * dl, dl)
        out["d_vec"] = self.arms.view("d_vec")
        out["v_hat"] = self.arms.view("v_hat")
        out["rng"] = rng_snapshot(self.rng)
        return out

    def arm_ids(self):
        return list(self.arms.ids)

    def load_state(self, arrays, arm_ids=()):
        super().load_state(arrays)
        self.arms.load(arm_ids, arrays)
        rng_restore(self.rng, arrays["rng"])


POLICIES: dict[str, type[Policy]] = {
    p.name: p for p in (RandomPolicy, LinUCB, MLinUCB, CoLin, FactorUCB)
}


def make_policy(algo: str, cfg: PolicyConfig) -> Policy:
    try:
        cls = POLICIES[algo]
    except KeyError:
        raise ValueError(f"unknown algorithm {algo!r}; choose from {', '.join(ALGORITHMS)}") from None
    return cls(cfg)


def select_update(
    policy: Policy, event: EventRecord, cluster_model: ClusterModel | None = None
) -> tuple[str, bool]:
    """Replay one logged event: choose, and learn only if the choice was displayed.

    Returns the chosen arm id and whether it matched the logged arm.
    """
    cluster = 0
    if policy.uses_clusters and cluster_model is not None:
        cluster = cluster_model.assign(event.user_features)
    idx = policy.select(cluster, event.arm_ids, event.features)
    chosen = event.arm_ids[idx]
    if chosen != event.displayed_arm:
        return chosen, False
    policy.update(cluster, chosen, event.features[idx], float(event.click))
    return chosen, True
