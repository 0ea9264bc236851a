"""Collaborative contextual bandits (M-LinUCB, CoLin, FactorUCB) with replay evaluation."""

from .clustering import ClusterModel, assign, fit_kmeans
from .events import Candidate, EventRecord
from .linalg import InverseState, kron_vec, pad_vector, quad_form, reshape_mat, self_outer, sm_update
from .policies import (
    CoLin,
    FactorUCB,
    LinUCB,
    MLinUCB,
    PolicyConfig,
    RandomPolicy,
    make_policy,
    select_update,
)
from .replay import MetricsSeries, normalize_by_random, replay, rolling_average
from .similarity import SimilarityMatrix, build_w, column, sparsify
from .synth import EnvSpec, Environment, gen_environment, gen_log, simulate

__version__ = "0.1.0"
