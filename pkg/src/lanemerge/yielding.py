"""Logistic estimator of how likely a surrounding car is to yield.

The probability that car ``k`` cedes the gap to the ego vehicle is
``sigmoid(theta . f_k)`` over the seven scene features

    f_k = [1, gap_leader, ego_d, ego_v, s_k - s_ego, v_k, v_leader]

where ``gap_leader`` is car ``k``'s bumper gap to whoever is currently
ahead of it in its lane and ``v_leader`` that car's speed. Features are
raw physical units by default; an optional z-scoring mode stores the
normalization next to the weights so prediction stays self-contained.

A car is *declared* yielding only when the probability clears a high
threshold (0.85 by default, strict inequality), which keeps the planner
conservative until the evidence is strong.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kvio
from .frenet import VIRTUAL_LEADER_GAP, SceneState, VehicleDims, nearest_leader

DEFAULT_BETA = 0.85
N_FEATURES = 7


class ClassifierError(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class YieldFeatures:
    """Scene features for one surrounding car; ``bias`` is always 1."""

    gap_leader: float
    ego_d: float
    ego_v: float
    rel_pos: float
    v_k: float
    v_leader: float
    bias: float = 1.0

    def __post_init__(self) -> None:
        if self.bias != 1.0:
            raise ClassifierError(f"bias feature must be exactly 1, got {self.bias}")

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.bias, self.gap_leader, self.ego_d, self.ego_v,
             self.rel_pos, self.v_k, self.v_leader]
        )


@dataclass(frozen=True)
class ClassifierWeights:
    """Seven logistic weights plus the yield-declaration threshold.

    ``feature_mean`` / ``feature_scale`` are set only for weights trained
    on z-scored features; prediction then normalizes inputs first.
    """

    theta: tuple[float, ...]
    beta: float = DEFAULT_BETA
    feature_mean: tuple[float, ...] | None = None
    feature_scale: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if len(self.theta) != N_FEATURES:
            raise ClassifierError(f"need {N_FEATURES} weights, got {len(self.theta)}")
        if not (0.0 < self.beta < 1.0):
            raise ClassifierError(f"beta must be in (0, 1), got {self.beta}")
        if (self.feature_mean is None) != (self.feature_scale is None):
            raise ClassifierError("feature_mean and feature_scale must be set together")


def extract_features(
    scene: SceneState, k: int, ego_dims: VehicleDims = VehicleDims()
) -> YieldFeatures:
    """Assemble the feature vector for car ``k`` (1 = rear, 2 = lead).

    With nobody ahead of ``k``, the leader gap falls back to
    :data:`~lanemerge.frenet.VIRTUAL_LEADER_GAP` and the leader speed to
    the car's own speed.
    """
    if k not in (1, 2):
        raise ClassifierError(f"k must be 1 or 2, got {k}")
    me = scene.others[k - 1]
    leader = nearest_leader(scene, k, ego_dims)
    if leader is None:
        gap_leader, v_leader = VIRTUAL_LEADER_GAP, me.v
    else:
        s_lead, v_leader, length_lead = leader
        gap_leader = s_lead + length_lead - me.s
    return YieldFeatures(
        gap_leader=gap_leader,
        ego_d=scene.ego.d,
        ego_v=scene.ego.v,
        rel_pos=me.s - scene.ego.s,
        v_k=me.v,
        v_leader=v_leader,
    )


def _sigmoid(z: float) -> float:
    # exponent argument kept non-positive so huge |z| cannot overflow
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def predict_prob(w: ClassifierWeights, f: YieldFeatures) -> float:
    """Yield probability: logistic of the (optionally normalized) feature
    dot product."""
    x = f.as_array()
    if w.feature_mean is not None:
        x = (x - np.asarray(w.feature_mean)) / np.asarray(w.feature_scale)
    return _sigmoid(float(np.dot(np.asarray(w.theta), x)))


def classify(p: float, beta: float = DEFAULT_BETA) -> bool:
    """True (yield) only when the probability strictly exceeds the
    threshold."""
    if not (0.0 <= p <= 1.0):
        raise ClassifierError(f"probability must be in [0, 1], got {p}")
    return p > beta


@dataclass(frozen=True)
class TrainConfig:
    l2: float = 1e-3
    tol: float = 1e-8         # gradient-norm stopping criterion
    max_iter: int = 10_000
    standardize: bool = False
    beta: float = DEFAULT_BETA


def train(data, cfg: TrainConfig = TrainConfig()) -> ClassifierWeights:
    """Fit weights by maximizing the L2-regularized mean log-likelihood.

    Accelerated gradient ascent with backtracking and function-value
    restarts; deterministic given the data order and config. Raises with
    diagnostics when the gradient-norm tolerance is not reached within
    ``cfg.max_iter`` iterations.
    """
    data = list(data)
    X = np.array([f.as_array() for f, _ in data], dtype=float)
    y = np.array([label for _, label in data], dtype=float)
    if X.ndim != 2 or X.shape[1] != N_FEATURES:
        raise ClassifierError(f"feature matrix must be (n, {N_FEATURES})")
    labels = set(np.unique(y))
    if not labels <= {0.0, 1.0}:
        raise ClassifierError(f"labels must be 0/1, got {sorted(labels)}")
    if labels != {0.0, 1.0}:
        raise ClassifierError("training data must contain both labels")

    mean = scale = None
    if cfg.standardize:
        mean = X.mean(axis=0)
        scale = X.std(axis=0)
        mean[0], scale[0] = 0.0, 1.0      # bias column stays 1
        scale[scale == 0.0] = 1.0
        X = (X - mean) / scale

    n = len(y)
    lam = cfg.l2

    def objective(theta):
        z = X @ theta
        # mean log-likelihood: -softplus(-z) for y=1, -softplus(z) for y=0
        ll = -(np.logaddexp(0.0, -z) @ y + np.logaddexp(0.0, z) @ (1.0 - y)) / n
        return ll - 0.5 * lam * float(theta @ theta)

    def gradient(theta):
        p = 1.0 / (1.0 + np.exp(-np.clip(X @ theta, -700, 700)))
        return X.T @ (y - p) / n - lam * theta

    theta = np.zeros(N_FEATURES)
    momentum = theta.copy()
    t_acc = 1.0
    lipschitz = 1.0
    f_prev = objective(theta)
    grad_norm = float(np.linalg.norm(gradient(theta)))
    for iteration in range(1, cfg.max_iter + 1):
        g = gradient(momentum)
        f_mom = objective(momentum)
        while True:
            candidate = momentum + g / lipschitz
            # sufficient-increase test for step 1/L along the gradient
            if objective(candidate) >= f_mom + 0.5 * float(g @ g) / lipschitz:
                break
            lipschitz *= 2.0
            if lipschitz > 1e18:
                raise ClassifierError("line search failed: objective not smooth")
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_acc * t_acc))
        momentum = candidate + ((t_acc - 1.0) / t_next) * (candidate - theta)
        theta, t_acc = candidate, t_next
        lipschitz *= 0.9
        f_new = objective(theta)
        if f_new < f_prev:     # restart momentum when acceleration overshoots
            momentum, t_acc = theta.copy(), 1.0
        f_prev = f_new
        grad_norm = float(np.linalg.norm(gradient(theta)))
        if grad_norm < cfg.tol:
            break
    else:
        raise ClassifierError(
            f"no convergence in {cfg.max_iter} iterations: "
            f"|grad|={grad_norm:.3e}, objective={f_prev:.6f}, tol={cfg.tol:g}"
        )

    return ClassifierWeights(
        theta=tuple(float(v) for v in theta),
        beta=cfg.beta,
        feature_mean=tuple(float(v) for v in mean) if mean is not None else None,
        feature_scale=tuple(float(v) for v in scale) if scale is not None else None,
    )


WEIGHTS_FORMAT = "yield-classifier/v1"


def save_weights(w: ClassifierWeights, path) -> None:
    kv = {
        "format": WEIGHTS_FORMAT,
        "theta": kvio.format_floats(w.theta),
        "beta": repr(w.beta),
    }
    if w.feature_mean is not None:
        kv["feature_mean"] = kvio.format_floats(w.feature_mean)
        kv["feature_scale"] = kvio.format_floats(w.feature_scale)
    kvio.write_kv(path, kv)


def load_weights(path) -> ClassifierWeights:
    kv = kvio.read_kv(path)
    if kvio.require(kv, "format", str(path)) != WEIGHTS_FORMAT:
        raise kvio.KvError(f"{path}: unsupported format {kv['format']!r}")
    mean = kv.get("feature_mean")
    scale = kv.get("feature_scale")
    return ClassifierWeights(
        theta=tuple(kvio.parse_floats(kvio.require(kv, "theta", str(path)), N_FEATURES)),
        beta=float(kvio.require(kv, "beta", str(path))),
        feature_mean=tuple(kvio.parse_floats(mean, N_FEATURES)) if mean else None,
        feature_scale=tuple(kvio.parse_floats(scale, N_FEATURES)) if scale else None,
    )


# Weights fitted on the bundled synthetic corpus (400 scripted merge
# scenes, seed 7; see harness.synthesize_classifier_data) so the planner
# runs out of the box. Regenerate with:
#   lanemerge train-classifier --synthetic 400 --seed 7 --out <file>
DEFAULT_WEIGHTS = ClassifierWeights(
    theta=(
        5.490007484310483,
        0.059511600678039206,
        0.013748199760365854,
        -0.2750022532607003,
        0.040716915533772435,
        -0.4430736521498103,
        0.048613756718688506,
    ),
    beta=DEFAULT_BETA,
)
