"""Image descriptor head: a small score network maps local tokens to cluster
affinities, log-domain Sinkhorn scaling turns them into a transport plan, a
learnable temperature softens the plan's rows, and cluster-weighted sums of
projected tokens are flattened into one unit-norm descriptor.

Scores are treated as affinities (higher score puts more mass on a cluster);
`treat_scores_as_cost=True` flips the sign for the cost-matrix reading.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import kernels
from .numerics import ConfigError, DomainError, Rng, assert_finite

# tau = softplus(TEMP_GAIN * raw); the gain gives the lone temperature scalar
# a usable dynamic range under the same optimizer step size as the weight
# matrices, and raw is initialized so tau starts at exactly 1.
TEMP_GAIN = 25.0
TAU_INIT_RAW = math.log(math.e - 1.0) / TEMP_GAIN


@dataclass
class ImageTokenSet:
    """Local token embeddings of one image view, plus the backbone's optional
    global token (stored but not used in the descriptor)."""

    local_tokens: np.ndarray
    global_token: np.ndarray | None = None

    def __post_init__(self):
        self.local_tokens = np.asarray(self.local_tokens, dtype=np.float64)
        if self.local_tokens.ndim != 2 or self.local_tokens.shape[0] < 1:
            raise DomainError("local tokens must be (n >= 1, dim)")
        assert_finite("image tokens", self.local_tokens)
        if self.global_token is not None:
            self.global_token = np.asarray(self.global_token, dtype=np.float64)
            if self.global_token.shape != (self.local_tokens.shape[1],):
                raise DomainError("global token dim mismatch")
            assert_finite("global token", self.global_token)

    @property
    def n(self) -> int:
        return self.local_tokens.shape[0]

    @property
    def dim(self) -> int:
        return self.local_tokens.shape[1]


@dataclass
class ScoreMatrix:
    """Token-to-cluster affinities with the entropic regularization weight."""

    matrix: np.ndarray
    reg: float

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2:
            raise DomainError("score matrix must be 2-D")
        assert_finite("score matrix", self.matrix)
        if self.reg <= 0:
            raise DomainError("reg must be positive")


@dataclass
class SinkhornResult:
    u: np.ndarray
    v: np.ndarray
    log_plan: np.ndarray
    converged: bool
    iterations: int
    violation: float


@dataclass
class TransportPlan:
    """Nonnegative token-by-cluster assignment with its marginals."""

    plan: np.ndarray
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        if np.any(self.plan < 0):
            raise DomainError("transport plan must be nonnegative")


@dataclass
class AggregatorConfig:
    token_dim: int
    hidden: int
    clusters: int
    cluster_dim: int
    reg: float = 0.1
    learn_temp: bool = True
    treat_scores_as_cost: bool = False
    iters_train: int = 50
    iters_eval: int = 100
    tol: float = 1e-6
    init_scale: float = 0.05

    @property
    def out_dim(self) -> int:
        return self.clusters * self.cluster_dim

    def __post_init__(self):
        if self.reg <= 0:
            raise ConfigError("reg must be positive")
        if min(self.token_dim, self.hidden, self.clusters, self.cluster_dim) < 1:
            raise ConfigError("degenerate aggregator dimensions")


class AggregatorParams:
    """Trainable tensors of the aggregation head, keyed by dotted path."""

    def __init__(self, config: AggregatorConfig, tensors: dict[str, ag.Tensor]):
        self.config = config
        self.tensors = tensors

    @classmethod
    def init(cls, config: AggregatorConfig, rng: Rng) -> "AggregatorParams":
        s = config.init_scale
        t = {
            "score.w1": ag.parameter(rng.normal((config.token_dim, config.hidden), s)),
            "score.b1": ag.parameter(np.zeros(config.hidden)),
            "score.w2": ag.parameter(rng.normal((config.hidden, config.clusters), s)),
            "score.b2": ag.parameter(np.zeros(config.clusters)),
            "proj.w": ag.parameter(rng.normal((config.token_dim, config.cluster_dim), s)),
            "proj.b": ag.parameter(np.zeros(config.cluster_dim)),
        }
        if config.learn_temp:
            t["temp.raw"] = ag.parameter(np.float64(TAU_INIT_RAW))
        return cls(config, t)

    def named(self) -> dict[str, ag.Tensor]:
        return self.tensors

    def temperature(self) -> float:
        if not self.config.learn_temp:
            return 1.0
        return float(np.logaddexp(0.0, TEMP_GAIN * self.tensors["temp.raw"].data))


def canonical_token_order(tokens: np.ndarray) -> np.ndarray:
    """Tokens sorted lexicographically by coordinates.  Encoding canonicalized
    input makes the descriptor exactly invariant to token permutations."""
    return tokens[np.lexsort(tokens.T[::-1])]


def score_tokens(tokens: ImageTokenSet, params: AggregatorParams) -> ScoreMatrix:
    """Two-layer ReLU network applied to each local token row."""
    cfg = params.config
    if tokens.dim != cfg.token_dim:
        raise ConfigError(f"token dim {tokens.dim} != configured {cfg.token_dim}")
    t = params.tensors
    with ag.no_grad():
        h = ag.relu(ag.linear(ag.Tensor(tokens.local_tokens), t["score.w1"], t["score.b1"]))
        s = ag.linear(h, t["score.w2"], t["score.b2"])
    return ScoreMatrix(s.data, cfg.reg)


def uniform_marginals(n: int, c: int) -> tuple[np.ndarray, np.ndarray]:
    return np.full(n, 1.0 / n), np.full(c, 1.0 / c)


def sinkhorn(
    score: ScoreMatrix,
    a: np.ndarray,
    b: np.ndarray,
    iters: int = 100,
    tol: float = 1e-6,
) -> SinkhornResult:
    """Log-domain Sinkhorn scaling of exp(S/reg) toward marginals (a, b).

    The score is an affinity: larger entries attract more mass.  Stops once
    the max marginal violation of exp(log_plan) drops below `tol`, else
    after `iters` updates with `converged=False`.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if np.any(a <= 0) or np.any(b <= 0):
        raise DomainError("marginals must be strictly positive")
    if abs(a.sum() - 1.0) > 1e-9 or abs(b.sum() - 1.0) > 1e-9:
        raise DomainError("marginals must each sum to 1")
    n, c = score.matrix.shape
    if a.shape != (n,) or b.shape != (c,):
        raise DomainError("marginal lengths must match the score matrix")
    s_reg = score.matrix / score.reg
    u, v, it, violation = kernels.sinkhorn_duals(s_reg, np.log(a), np.log(b), iters, tol)
    log_plan = s_reg + u[:, None] + v[None, :]
    return SinkhornResult(u, v, log_plan, violation < tol, it, violation)


def temper_plan(log_plan: np.ndarray, a: np.ndarray, tau: float) -> TransportPlan:
    """Row-wise softmax of log_plan/tau rescaled by the source marginals.

    tau=1 reproduces the converged plan; tau -> 0 sharpens each row toward
    its argmax; large tau flattens rows toward uniform."""
    if tau <= 0:
        raise DomainError("tau must be positive")
    a = np.asarray(a, dtype=np.float64)
    plan = a[:, None] * kernels.softmax_last(log_plan / tau)
    return TransportPlan(plan, a, plan.sum(axis=0))


def aggregate_clusters(plan: TransportPlan, tokens: ImageTokenSet, params: AggregatorParams) -> np.ndarray:
    """Per-cluster weighted sums of projected tokens, shape (clusters, cluster_dim)."""
    cfg = params.config
    if plan.plan.shape != (tokens.n, cfg.clusters):
        raise ConfigError(f"plan shape {plan.plan.shape} does not match tokens/clusters")
    t = params.tensors
    with ag.no_grad():
        f = ag.linear(ag.Tensor(tokens.local_tokens), t["proj.w"], t["proj.b"])
    return plan.plan.T @ f.data


def _sinkhorn_batched_np(
    s_reg: np.ndarray, log_a: float, log_b: float, iters: int, tol: float
) -> tuple[np.ndarray, np.ndarray]:
    """Batched (B, n, C) dual updates in plain NumPy; stops when every problem
    in the batch meets `tol`."""
    bsz, n, c = s_reg.shape
    v = np.zeros((bsz, c))
    u = np.zeros((bsz, n))
    a = math.exp(log_a)
    b = math.exp(log_b)
    for _ in range(iters):
        u = log_a - kernels.logsumexp_last(s_reg + v[:, None, :])
        v = log_b - kernels.logsumexp_last(np.ascontiguousarray(np.swapaxes(s_reg + u[:, :, None], 1, 2)))
        plan = np.exp(s_reg + u[:, :, None] + v[:, None, :])
        violation = max(
            float(np.max(np.abs(plan.sum(axis=2) - a))),
            float(np.max(np.abs(plan.sum(axis=1) - b))),
        )
        if violation < tol:
            break
    return u, v


def encode_image_stack(tokens: np.ndarray, params: AggregatorParams, train: bool) -> ag.Tensor:
    """Encode a stack of token matrices (B, n, token_dim) to unit-norm
    descriptors (B, out_dim).

    In training mode the Sinkhorn loop is unrolled for a fixed `iters_train`
    updates so gradients flow through every iteration; in eval mode the duals
    are solved outside the tape with `iters_eval`/`tol` and only the tempered
    assignment is recorded."""
    cfg = params.config
    if tokens.ndim != 3 or tokens.shape[2] != cfg.token_dim:
        raise ConfigError(f"expected (B, n, {cfg.token_dim}) token stack, got {tokens.shape}")
    t = params.tensors
    bsz, n, _ = tokens.shape
    log_a = math.log(1.0 / n)
    log_b = math.log(1.0 / cfg.clusters)

    x = ag.Tensor(tokens)
    s = ag.linear(ag.relu(ag.linear(x, t["score.w1"], t["score.b1"])), t["score.w2"], t["score.b2"])
    sign = -1.0 if cfg.treat_scores_as_cost else 1.0
    s_reg = s * (sign / cfg.reg)

    if train:
        u = None
        v = ag.Tensor(np.zeros((bsz, cfg.clusters)))
        for _ in range(cfg.iters_train):
            u = log_a - ag.logsumexp(s_reg + ag.reshape(v, (bsz, 1, cfg.clusters)), axis=2)
            v = log_b - ag.logsumexp(s_reg + ag.reshape(u, (bsz, n, 1)), axis=1)
        log_plan = s_reg + ag.reshape(u, (bsz, n, 1)) + ag.reshape(v, (bsz, 1, cfg.clusters))
    else:
        with ag.no_grad():
            u_np, v_np = _sinkhorn_batched_np(s_reg.data, log_a, log_b, cfg.iters_eval, cfg.tol)
        log_plan = s_reg + ag.Tensor(u_np[:, :, None]) + ag.Tensor(v_np[:, None, :])

    if cfg.learn_temp:
        inv_tau = ag.power(ag.softplus(t["temp.raw"] * TEMP_GAIN), -1.0)
        tempered = ag.softmax(log_plan * inv_tau, axis=2)
    else:
        tempered = ag.softmax(log_plan, axis=2)
    plan = tempered * (1.0 / n)

    f = ag.linear(x, t["proj.w"], t["proj.b"])
    clusters = ag.matmul(ag.swapaxes(plan, 1, 2), f)
    flat = ag.reshape(clusters, (bsz, cfg.out_dim))
    return ag.l2_normalize(flat, axis=-1)


def encode_image_batch(token_sets: list[ImageTokenSet], params: AggregatorParams, train: bool = False) -> ag.Tensor:
    """Encode a list of token sets, bucketing by token count; output row order
    matches the input order.  Token order is canonicalized per view."""
    if not token_sets:
        raise DomainError("empty image batch")
    mats = [canonical_token_order(ts.local_tokens) for ts in token_sets]
    buckets: dict[int, list[int]] = {}
    for i, m in enumerate(mats):
        buckets.setdefault(m.shape[0], []).append(i)
    if len(buckets) == 1:
        return encode_image_stack(np.stack(mats), params, train)
    parts = []
    order = []
    for n_tok in sorted(buckets):
        idxs = buckets[n_tok]
        parts.append(encode_image_stack(np.stack([mats[i] for i in idxs]), params, train))
        order.extend(idxs)
    stacked = ag.concat(parts, axis=0)
    unshuffle = np.zeros((len(mats), len(mats)))
    unshuffle[order, np.arange(len(mats))] = 1.0
    return ag.matmul(ag.Tensor(unshuffle), stacked)


def encode_image(tokens: ImageTokenSet, params: AggregatorParams) -> np.ndarray:
    """One unit-norm descriptor for one view (eval-mode Sinkhorn, no tape)."""
    with ag.no_grad():
        out = encode_image_batch([tokens], params, train=False)
    return out.data[0]


def maxpool_aggregate(tokens: ImageTokenSet) -> np.ndarray:
    """Parameter-free baseline: elementwise max over local tokens, normalized."""
    pooled = tokens.local_tokens.max(axis=0)
    norm = np.linalg.norm(pooled)
    if norm == 0:
        raise DomainError("max-pooled tokens have zero norm")
    return pooled / norm
