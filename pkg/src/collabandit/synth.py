"""Synthetic collaborative environments with known ground truth.

Cluster ``i`` pulling arm ``a`` earns mean ``concat(x_a, v_a) @ (Theta* @ w*_i)``.
Bernoulli environments squash that into a click probability via
``(mu + 1) / 2``. Parameter columns are drawn inside a ball whose radius
keeps ``|mu| <= 1`` for every arm.

Simulations draw user clusters, pools and reward noise from streams that do
not depend on the policy, so two policies run on the same seed see the same
users, pools and noise (common random numbers).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from .events import EventRecord
from .policies import Policy, PolicyConfig, make_policy
from .similarity import SimilarityMatrix, build_w

REWARD_MODELS = ("gaussian", "bernoulli")


@dataclass(frozen=True)
class EnvSpec:
    M: int = 10
    d: int = 5
    d_l: int = 0
    K: int = 10
    T: int = 1000
    n_arms: int | None = None  # catalog size, defaults to K
    d_u: int | None = None  # user feature dim, defaults to M
    noise_std: float = 0.1
    reward_model: str = "gaussian"
    # share of every centroid that is a common random direction; drives W*'s off-diagonal mass
    collab: float = 0.5
    w_star: SimilarityMatrix | None = None
    seed: int = 0

    def __post_init__(self):
        if min(self.M, self.d, self.K, self.T) < 1 or self.d_l < 0:
            raise ValueError("M, d, K, T must be positive and d_l nonnegative")
        if self.reward_model not in REWARD_MODELS:
            raise ValueError(f"reward_model must be one of {REWARD_MODELS}")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")
        if self.catalog_size < self.K:
            raise ValueError("catalog cannot be smaller than the pool")
        if self.w_star is not None and self.w_star.m != self.M:
            raise ValueError("w_star must be M x M")
        if not 0 <= self.collab <= 1:
            raise ValueError("collab must lie in [0, 1]")

    @property
    def catalog_size(self) -> int:
        return self.K if self.n_arms is None else self.n_arms

    @property
    def user_dim(self) -> int:
        return self.M if self.d_u is None else self.d_u


def _unit_ball(rng: np.random.Generator, dim: int, n: int, radius: float) -> NDArray:
    g = rng.standard_normal((n, dim))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = radius * rng.random(n) ** (1.0 / dim)
    return g * r[:, None]


def _unit_sphere(rng: np.random.Generator, dim: int, n: int) -> NDArray:
    g = rng.standard_normal((n, dim))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


@dataclass(frozen=True, eq=False)
class Environment:
    spec: EnvSpec
    theta_star: NDArray  # (d + d_l, M)
    v_star: NDArray  # (n_arms, d_l)
    arm_features: NDArray  # (n_arms, d)
    centroids: NDArray  # (M, d_u)
    w_star: SimilarityMatrix
    effective: NDArray = field(init=False)  # (d + d_l, M), Theta* @ W*
    means: NDArray = field(init=False)  # (M, n_arms) linear means
    payoffs: NDArray = field(init=False)  # (M, n_arms) expected rewards

    def __post_init__(self):
        eff = self.theta_star @ self.w_star.entries
        z = np.hstack([self.arm_features, self.v_star])
        means = (z @ eff).T
        payoffs = (means + 1.0) / 2.0 if self.spec.reward_model == "bernoulli" else means
        object.__setattr__(self, "effective", eff)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "payoffs", payoffs)

    @property
    def arm_ids(self) -> list[str]:
        return [f"a{j}" for j in range(self.spec.catalog_size)]

    def arm_index(self, arm_id: str) -> int:
        return int(arm_id[1:])

    def mean(self, cluster: int, arm: int) -> float:
        return float(self.means[cluster, arm])

    def expected_payoff(self, cluster: int, arm: int) -> float:
        return float(self.payoffs[cluster, arm])

    def step(self, cluster: int, arm: int, rng: np.random.Generator) -> float:
        """Sample one reward for ``arm`` shown to ``cluster``."""
        if self.spec.reward_model == "bernoulli":
            return float(rng.random() < self.payoffs[cluster, arm])
        return float(self.means[cluster, arm] + self.spec.noise_std * rng.standard_normal())

    def expected_regret(self, cluster: int, chosen: int, pool: Sequence[int]) -> float:
        p = self.payoffs[cluster, np.asarray(pool)]
        return float(p.max() - self.payoffs[cluster, chosen])

    def random_regret_rate(self) -> float:
        """Exact expected per-step regret of the uniform-random policy.

        Users are uniform over clusters and pools are uniform K-subsets of the
        catalog; the expected pool maximum follows from order statistics.
        """
        n, k = self.spec.catalog_size, self.spec.K
        j = np.arange(1, n + 1)
        # P(max of a random k-subset is the j-th smallest) = C(j-1, k-1) / C(n, k)
        probs = np.array([math.comb(int(t) - 1, k - 1) for t in j], dtype=float) / math.comb(n, k)
        srt = np.sort(self.payoffs, axis=1)
        exp_max = srt @ probs
        return float(np.mean(exp_max - self.payoffs.mean(axis=1)))

    def random_reward_rate(self) -> float:
        return float(self.payoffs.mean())

    def contexts(self, T: int, seed: int) -> tuple[NDArray, NDArray, np.random.Generator]:
        """Clusters (T,), pools (T, K) and a fresh generator for reward noise."""
        spec = self.spec
        rng = np.random.default_rng([seed, 1])
        clusters = rng.integers(spec.M, size=T)
        n, k = spec.catalog_size, spec.K
        if n == k:
            pools = np.broadcast_to(np.arange(k), (T, k))
        else:
            pools = np.argsort(rng.random((T, n)), axis=1)[:, :k]
        return clusters, pools, np.random.default_rng([seed, 2])


def gen_environment(spec: EnvSpec) -> Environment:
    rng = np.random.default_rng(spec.seed)
    M, d, dl = spec.M, spec.d, spec.d_l
    n, du = spec.catalog_size, spec.user_dim
    # |z| <= sqrt(1 + d_l/4) for unit x and v in [-1/2, 1/2]^d_l
    radius = 1.0 / math.sqrt(1.0 + dl / 4.0)
    theta = _unit_ball(rng, d + dl, M, radius).T
    v_star = rng.uniform(-0.5, 0.5, (n, dl))
    arms = _unit_sphere(rng, d, n)
    if du >= M:
        base = np.eye(M, du)
    else:
        base = np.abs(_unit_sphere(rng, du, M))
    shared = np.abs(_unit_sphere(rng, du, 1))
    noise = rng.random((M, du))
    centroids = (1 - spec.collab) * base + spec.collab * (0.7 * shared + 0.3 * noise)
    w = spec.w_star if spec.w_star is not None else build_w(centroids)
    return Environment(spec, theta, v_star, arms, centroids, w)


@dataclass
class SimResult:
    chosen: NDArray
    rewards: NDArray
    inst_regret: NDArray
    expected: NDArray

    @property
    def cum_regret(self) -> NDArray:
        return np.cumsum(self.inst_regret)

    @property
    def cum_reward(self) -> NDArray:
        return np.cumsum(self.rewards)


class OraclePolicy(Policy):
    """Picks the arm with the highest true expected payoff."""

    name = "oracle"

    def __init__(self, env: Environment):
        super().__init__(PolicyConfig(num_clusters=env.spec.M, feature_dim=env.spec.d))
        self.env = env

    def scores(self, cluster, arm_ids, features):
        return self.env.payoffs[cluster, [self.env.arm_index(a) for a in arm_ids]]

    def update(self, cluster, arm_id, x, reward):
        pass


class FixedGreedyPolicy(Policy):
    """Non-learning policy: cluster ``i`` picks ``argmax x @ theta[:, i]``."""

    name = "greedy"

    def __init__(self, theta: NDArray):
        theta = np.asarray(theta, dtype=np.float64)
        super().__init__(PolicyConfig(num_clusters=theta.shape[1], feature_dim=theta.shape[0]))
        self.theta = theta

    def scores(self, cluster, arm_ids, features):
        return features @ self.theta[:, cluster]

    def update(self, cluster, arm_id, x, reward):
        pass


def simulate(
    env: Environment,
    policy: Policy,
    T: int | None = None,
    seed: int | None = None,
    cluster_map: Sequence[int] | None = None,
) -> SimResult:
    """Run ``policy`` live against ``env`` for ``T`` steps.

    ``cluster_map[c]`` is the policy-side cluster for environment cluster
    ``c``; by default the two coincide.
    """
    T = env.spec.T if T is None else T
    seed = env.spec.seed if seed is None else seed
    clusters, pools, noise_rng = env.contexts(T, seed)
    bern = env.spec.reward_model == "bernoulli"
    noise = noise_rng.random(T) if bern else noise_rng.standard_normal(T) * env.spec.noise_std
    ids = np.array(env.arm_ids, dtype=object)
    feats = env.arm_features
    chosen = np.empty(T, dtype=np.intp)
    rewards = np.empty(T)
    expected = np.empty(T)
    regret = np.empty(T)
    cmap = np.arange(env.spec.M) if cluster_map is None else np.asarray(cluster_map)
    for t in range(T):
        c = int(clusters[t])
        pc = int(cmap[c])
        pool = pools[t]
        x = feats[pool]
        k = policy.select(pc, ids[pool], x)
        arm = int(pool[k])
        pay = env.payoffs[c, arm]
        r = float(noise[t] < pay) if bern else env.means[c, arm] + noise[t]
        policy.update(pc, ids[arm], x[k], r)
        chosen[t] = arm
        rewards[t] = r
        expected[t] = pay
        regret[t] = env.payoffs[c, pool].max() - pay
    return SimResult(chosen, rewards, regret, expected)


def gen_log(env: Environment, T: int, seed: int = 0, logging: str = "uniform") -> list[EventRecord]:
    """Uniformly-logged click events with replay-compatible pools."""
    if logging != "uniform":
        raise ValueError("only uniform logging is supported")
    if T < 1:
        raise ValueError("T must be positive")
    clusters, pools, rng = env.contexts(T, seed)
    ids = env.arm_ids
    bern_payoff = (env.means + 1.0) / 2.0
    events = []
    for t in range(T):
        c = int(clusters[t])
        pool = pools[t]
        k = int(rng.integers(len(pool)))
        arm = int(pool[k])
        click = int(rng.random() < bern_payoff[c, arm])
        events.append(
            EventRecord(
                t,
                ids[arm],
                click,
                env.centroids[c].copy(),
                tuple(ids[j] for j in pool),
                env.arm_features[pool].copy(),
            )
        )
    return events


def policy_for(algo: str, env: Environment, cfg: PolicyConfig | None = None) -> Policy:
    """Build a learner (or ``oracle``) sized for ``env``; W defaults to the true W*."""
    if algo == "oracle":
        return OraclePolicy(env)
    spec = env.spec
    base = dict(num_clusters=spec.M, feature_dim=spec.d)
    if cfg is None:
        cfg = PolicyConfig(**base, latent_dim=spec.d_l, w=env.w_star, seed=spec.seed)
    else:
        cfg = cfg.with_(**base, w=cfg.w if cfg.w is not None else env.w_star)
    return make_policy(algo, cfg)
