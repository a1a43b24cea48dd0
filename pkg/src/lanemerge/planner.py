"""POMDP transition/reward model and the Monte-Carlo tree search solver.

The ego car picks one of nine (longitudinal acceleration, lateral
velocity) actions per one-second step. The other cars' hidden
cooperativeness never enters the observations; the planner carries a
per-car yield probability instead, refreshed each replan by the logistic
classifier. During a search the rear car's predicted behavior is switched
on that belief: a yielding rear car follows the *ego* with parameters
from the successful-merge calibration, a non-yielding one follows the
lead human car with the unsuccessful-merge calibration.

The search itself is UCT over action histories: simulations descend the
tree by UCB1 on per-node min-max-normalized returns (raw returns span
six orders of magnitude once collisions are involved, which would drown
any fixed exploration constant), expand one new action, then roll out to
the horizon under a default policy. Collisions are absorbing: the
penalty is applied once and the simulation stops. By default the belief
is consumed through the hard threshold (the rear car's driver context is
fixed for the whole search); ``belief_mode="sample"`` instead draws the
hidden bit per simulation at the root, the textbook treatment, kept for
ablations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .driver_models import (
    IDM_FIXED_BASELINE,
    MODEL_IDM,
    MODEL_VDM,
    REFERENCE_DISTRIBUTIONS,
    SCENARIO_SUCCESSFUL,
    SCENARIO_UNSUCCESSFUL,
    DriverParams,
    ParamDistribution,
    accel_scalar,
    clamp_accel,
    sample_params,
)
from .frenet import (
    ACTIONS,
    HOLD,
    N_LANES,
    VIRTUAL_LEADER_GAP,
    EgoAction,
    EgoState,
    OtherState,
    RoadGeometry,
    SceneState,
    VehicleDims,
    any_collision,
    nearest_leader,
    step_lateral,
    step_longitudinal,
)
from .yielding import ClassifierWeights, classify, extract_features, predict_prob


class PlannerError(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class BeliefState:
    """Per-car probability that the hidden cooperativeness bit is 1."""

    p_yield: tuple[float, float]

    def __post_init__(self) -> None:
        if any(not (0.0 <= p <= 1.0) for p in self.p_yield):
            raise PlannerError(f"belief must be in [0, 1]: {self.p_yield}")


UNIFORM_BELIEF = BeliefState((0.5, 0.5))


@dataclass(frozen=True, slots=True)
class RewardWeights:
    """Coefficients of the six reward terms (all enter negatively)."""

    velocity: float = 100.0
    wrong_lane: float = 10000.0
    end_lane: float = 1000.0
    end_lane_ramp: float = 50.0   # meters over which the end-of-lane penalty ramps in
    center: float = 200.0
    action: float = 100.0
    lateral_factor: float = 2.0
    collision: float = 1e6

    def __post_init__(self) -> None:
        for name in ("velocity", "wrong_lane", "end_lane", "center", "action",
                     "lateral_factor", "collision"):
            if getattr(self, name) < 0:
                raise PlannerError(f"reward weight {name} must be non-negative")
        if self.end_lane_ramp <= 0:
            raise PlannerError("end_lane_ramp must be positive")


def _reward_terms(
    ego, a: EgoAction, w: RewardWeights, geo: RoadGeometry, collided: bool
) -> float:
    v = ego.v
    if v > geo.v_ref:
        r = -w.velocity * (v - geo.v_ref) ** 2
    else:
        r = -w.velocity * (geo.v_ref - v)
    if ego.lane != geo.target_lane:
        r -= w.wrong_lane
        ramp_start = geo.road_end - w.end_lane_ramp
        if ego.s > ramp_start:
            r -= w.end_lane * min(1.0, (ego.s - ramp_start) / w.end_lane_ramp)
    r -= w.center * ego.d * ego.d
    r -= w.action * (a.a_long * a.a_long + w.lateral_factor * abs(a.v_lat))
    if collided:
        r -= w.collision
    return r


def reward(
    x: SceneState,
    a: EgoAction,
    x_next: SceneState,
    w: RewardWeights,
    geo: RoadGeometry,
    ego_dims: VehicleDims = VehicleDims(),
) -> float:
    """Sum of the six terms, evaluated on the resulting state.

    Speed deviation is penalized quadratically above the reference speed
    and linearly below it; the end-of-lane penalty ramps linearly from 0
    to -end_lane over the final ``end_lane_ramp`` meters of the original
    lane and disappears once the ego is on the target lane.
    """
    return _reward_terms(
        x_next.ego, a, w, geo, any_collision(x_next, geo, ego_dims)
    )


# ---------------------------------------------------------------------------
# Driver contexts: who each surrounding car follows, with which parameters
# ---------------------------------------------------------------------------

LEADER_EGO = "ego"
LEADER_LEAD_CAR = "lead_car"
LEADER_AUTO = "auto"           # nearest same-lane car ahead, else virtual


@dataclass(frozen=True, slots=True)
class ContextCar:
    leader: str
    model: str
    params: DriverParams


@dataclass(frozen=True, slots=True)
class DriverContext:
    cars: tuple[ContextCar, ContextCar]


def select_driver_context(p: float, beta: float) -> tuple[str, str]:
    """Rear-car prediction rule: above the threshold the rear car is
    assumed to yield (it follows the ego, successful-merge parameters);
    otherwise it follows the lead human car with unsuccessful-merge
    parameters. The threshold is strict."""
    if p > beta:
        return LEADER_EGO, SCENARIO_SUCCESSFUL
    return LEADER_LEAD_CAR, SCENARIO_UNSUCCESSFUL


@dataclass(frozen=True)
class PredictorConfig:
    """How the planner predicts the surrounding cars.

    ``kind="vdm"`` uses the calibrated velocity-difference distributions,
    switched by the yield belief; ``kind="idm_fixed"`` is the baseline
    with one fixed textbook parameter set (leader switching still
    applies). ``param_mode`` picks distribution means (deterministic) or
    per-context Gaussian draws.
    """

    kind: str = MODEL_VDM
    param_mode: str = "mean"
    dist_yield: ParamDistribution = REFERENCE_DISTRIBUTIONS[(MODEL_VDM, SCENARIO_SUCCESSFUL)]
    dist_not_yield: ParamDistribution = REFERENCE_DISTRIBUTIONS[(MODEL_VDM, SCENARIO_UNSUCCESSFUL)]
    dist_lead: ParamDistribution = REFERENCE_DISTRIBUTIONS[(MODEL_VDM, SCENARIO_UNSUCCESSFUL)]

    def __post_init__(self) -> None:
        if self.kind not in (MODEL_VDM, "idm_fixed"):
            raise PlannerError(f"unknown predictor kind {self.kind!r}")
        if self.param_mode not in ("mean", "sample"):
            raise PlannerError(f"unknown param_mode {self.param_mode!r}")

    def _params(self, dist: ParamDistribution, rng) -> tuple[str, DriverParams]:
        if self.kind == "idm_fixed":
            return MODEL_IDM, IDM_FIXED_BASELINE
        if self.param_mode == "sample":
            return MODEL_VDM, sample_params(dist, rng)
        return MODEL_VDM, dist.mean_params()

    def build_context(self, rear_yields: bool, rng=None) -> DriverContext:
        leader, scenario = (
            (LEADER_EGO, SCENARIO_SUCCESSFUL)
            if rear_yields
            else (LEADER_LEAD_CAR, SCENARIO_UNSUCCESSFUL)
        )
        dist = self.dist_yield if scenario == SCENARIO_SUCCESSFUL else self.dist_not_yield
        rear_model, rear_params = self._params(dist, rng)
        lead_model, lead_params = self._params(self.dist_lead, rng)
        return DriverContext(
            cars=(
                ContextCar(leader, rear_model, rear_params),
                ContextCar(LEADER_AUTO, lead_model, lead_params),
            )
        )


def other_car_accel(
    scene: SceneState,
    k: int,
    ctx: DriverContext,
    ego_dims: VehicleDims = VehicleDims(),
) -> float:
    """Model acceleration for car ``k`` (1 = rear, 2 = lead) under the
    context's leader assignment, clamped to the physical envelope.

    An assigned leader that sits behind the follower (non-positive bumper
    gap, e.g. a yielding rear car told to follow an ego that has not
    caught up yet) is ignored in favor of free flow; actual footprint
    overlap is the collision check's job, not the model's.
    """
    car = scene.others[k - 1]
    spec = ctx.cars[k - 1]
    if spec.leader == LEADER_EGO:
        leader = (scene.ego.s, scene.ego.v, ego_dims.length)
    elif spec.leader == LEADER_LEAD_CAR:
        lead = scene.others[1]
        leader = (lead.s, lead.v, lead.length)
    else:
        leader = nearest_leader(scene, k, ego_dims)
    if leader is None:
        gap, dv = VIRTUAL_LEADER_GAP, 0.0
    else:
        s_l, v_l, length_l = leader
        gap = s_l + length_l - car.s
        dv = car.v - v_l
        if gap <= 0.0:
            gap, dv = VIRTUAL_LEADER_GAP, 0.0
    return clamp_accel(accel_scalar(spec.model, spec.params, car.v, dv, gap))


def transition(
    x: SceneState,
    a: EgoAction,
    ctx: DriverContext,
    dt: float,
    geo: RoadGeometry,
    ego_dims: VehicleDims = VehicleDims(),
) -> SceneState:
    """Step the whole scene: ego by the chosen action, the others by their
    context-assigned driver models. Hidden bits and the others' lanes
    never change."""
    a1 = other_car_accel(x, 1, ctx, ego_dims)
    a2 = other_car_accel(x, 2, ctx, ego_dims)
    s0, v0 = step_longitudinal(x.ego.s, x.ego.v, a.a_long, dt)
    d0, lane0 = step_lateral(x.ego.d, x.ego.lane, a.v_lat, dt, geo)
    rear, lead = x.others
    s1, v1 = step_longitudinal(rear.s, rear.v, a1, dt)
    s2, v2 = step_longitudinal(lead.s, lead.v, a2, dt)
    return SceneState(
        ego=EgoState(s0, d0, v0, lane0),
        others=(
            OtherState(s1, v1, rear.lane, rear.m, rear.length),
            OtherState(s2, v2, lead.lane, lead.m, lead.length),
        ),
        t=x.t + dt,
    )


def belief_update(
    b: BeliefState,
    scene: SceneState,
    weights: ClassifierWeights,
    eta: float = 1.0,
    ego_dims: VehicleDims = VehicleDims(),
) -> BeliefState:
    """Refresh the yield probabilities from the classifier, blended with
    the previous belief by ``eta`` (1 = memoryless, 0 = frozen)."""
    if not (0.0 <= eta <= 1.0):
        raise PlannerError(f"eta must be in [0, 1], got {eta}")
    fresh = tuple(
        predict_prob(weights, extract_features(scene, k, ego_dims)) for k in (1, 2)
    )
    return BeliefState(
        tuple((1.0 - eta) * old + eta * new for old, new in zip(b.p_yield, fresh))
    )


# ---------------------------------------------------------------------------
# Monte-Carlo tree search
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MctsConfig:
    iterations: int = 2000
    depth: int = 10
    dt: float = 1.0
    gamma: float = 0.95
    ucb_c: float = math.sqrt(2.0)
    rollout_policy: str = "random"      # or "hold"
    belief_mode: str = "threshold"      # or "sample"
    beta: float = 0.85
    seed: int = 0
    allowed_actions: tuple[EgoAction, ...] | None = None

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise PlannerError("iterations must be >= 1")
        if self.depth < 1:
            raise PlannerError("depth must be >= 1")
        if not (0.0 < self.gamma <= 1.0):
            raise PlannerError("gamma must be in (0, 1]")
        if self.rollout_policy not in ("random", "hold"):
            raise PlannerError(f"unknown rollout policy {self.rollout_policy!r}")
        if self.belief_mode not in ("threshold", "sample"):
            raise PlannerError(f"unknown belief mode {self.belief_mode!r}")


@dataclass(frozen=True)
class PlannerModels:
    """Everything the search needs besides the state: road, rewards,
    prediction setup, ego footprint."""

    geo: RoadGeometry
    weights: RewardWeights = RewardWeights()
    predictor: PredictorConfig = PredictorConfig()
    ego_dims: VehicleDims = VehicleDims()


def legal_actions(
    ego_d: float, ego_lane: int, dt: float, geo: RoadGeometry,
    allowed: tuple[EgoAction, ...] | None = None,
) -> tuple[EgoAction, ...]:
    """Actions whose lateral motion keeps the ego on the road. Falls back
    to holding course if the config masks everything out."""
    pool = ACTIONS if allowed is None else allowed
    half = geo.w_lane / 2.0
    out = []
    for action in pool:
        d_c = ego_d + action.v_lat * dt
        lane_next = ego_lane
        if d_c > half:
            lane_next -= 1
        elif d_c < -half:
            lane_next += 1
        if 0 <= lane_next < N_LANES:
            out.append(action)
    return tuple(out) if out else (HOLD,)


def _simulate_step(
    scene: SceneState,
    action: EgoAction,
    ctx: DriverContext,
    cfg: "MctsConfig",
    models: "PlannerModels",
) -> tuple[SceneState, float, bool]:
    """(next state, reward, collided) with a single collision check."""
    nxt = transition(scene, action, ctx, cfg.dt, models.geo, models.ego_dims)
    collided = any_collision(nxt, models.geo, models.ego_dims)
    return nxt, _reward_terms(nxt.ego, action, models.weights, models.geo, collided), collided


class _Node:
    """Action-history node: statistics plus the context-independent ego
    pose used to mask illegal actions."""

    __slots__ = ("actions", "children", "untried", "visits", "value_sum")

    def __init__(self, actions: tuple[EgoAction, ...]):
        self.actions = actions
        self.children: dict[int, _Node] = {}
        self.untried = list(range(len(actions)))
        self.visits = 0
        self.value_sum = 0.0

    def mean(self) -> float:
        return self.value_sum / self.visits


@dataclass(frozen=True)
class SearchStats:
    actions: tuple[EgoAction, ...]
    visits: tuple[int, ...]
    means: tuple[float, ...]
    iterations: int


def _ucb_pick(node: _Node, c: float, rng: np.random.Generator) -> int:
    """UCB1 over the node's children with per-node min-max normalized
    exploitation terms; exact ties are broken uniformly at random."""
    means = {i: child.mean() for i, child in node.children.items()}
    lo, hi = min(means.values()), max(means.values())
    spread = hi - lo
    log_n = math.log(node.visits)
    best_score = -math.inf
    best: list[int] = []
    for i, child in node.children.items():
        exploit = 0.5 if spread == 0.0 else (means[i] - lo) / spread
        score = exploit + c * math.sqrt(log_n / child.visits)
        if score > best_score:
            best_score, best = score, [i]
        elif score == best_score:
            best.append(i)
    return best[0] if len(best) == 1 else best[int(rng.integers(len(best)))]


def rollout(
    x: SceneState,
    depth_left: int,
    cfg: MctsConfig,
    models: PlannerModels,
    ctx: DriverContext,
    rng: np.random.Generator,
) -> float:
    """Discounted return of a default-policy playout; collisions absorb."""
    total = 0.0
    discount = 1.0
    scene = x
    hold_policy = cfg.rollout_policy == "hold"
    for _ in range(depth_left):
        acts = legal_actions(scene.ego.d, scene.ego.lane, cfg.dt, models.geo,
                             cfg.allowed_actions)
        if hold_policy:
            action = HOLD if HOLD in acts else acts[0]
        else:
            action = acts[int(rng.integers(len(acts)))]
        nxt, r, collided = _simulate_step(scene, action, ctx, cfg, models)
        total += discount * r
        if collided:
            break
        discount *= cfg.gamma
        scene = nxt
    return total


def mcts_search(
    x0: SceneState,
    b0: BeliefState,
    cfg: MctsConfig,
    models: PlannerModels,
    rng: np.random.Generator | None = None,
    return_stats: bool = False,
):
    """Best next action for the root belief, by UCT over the 9-action tree.

    In threshold mode one driver context (fixed by classifying the rear
    car's belief) drives every simulation; in sample mode the rear car's
    hidden bit is drawn from the belief per simulation and held for that
    whole simulation. The returned action maximizes root visit count,
    with ties broken by higher mean return, then by the fixed action
    ordering.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    pred = models.predictor
    threshold_ctx = None
    if cfg.belief_mode == "threshold":
        threshold_ctx = pred.build_context(classify(b0.p_yield[0], cfg.beta), rng)

    root = _Node(legal_actions(x0.ego.d, x0.ego.lane, cfg.dt, models.geo,
                               cfg.allowed_actions))

    for _ in range(cfg.iterations):
        if threshold_ctx is not None:
            ctx = threshold_ctx
        else:
            yields = rng.random() < b0.p_yield[0]
            ctx = pred.build_context(bool(yields), rng)

        node = root
        scene = x0
        path: list[tuple[_Node, float]] = []
        depth = 0
        collided = False
        while depth < cfg.depth:
            if node.untried:
                idx = node.untried.pop(int(rng.integers(len(node.untried))))
                action = node.actions[idx]
                nxt, r, collided = _simulate_step(scene, action, ctx, cfg, models)
                child = _Node(legal_actions(nxt.ego.d, nxt.ego.lane, cfg.dt,
                                            models.geo, cfg.allowed_actions))
                node.children[idx] = child
                path.append((child, r))
                node, scene, depth = child, nxt, depth + 1
                break
            idx = _ucb_pick(node, cfg.ucb_c, rng)
            action = node.actions[idx]
            child = node.children[idx]
            nxt, r, collided = _simulate_step(scene, action, ctx, cfg, models)
            path.append((child, r))
            node, scene, depth = child, nxt, depth + 1
            if collided:
                break

        tail = 0.0
        if not collided and depth < cfg.depth:
            tail = rollout(scene, cfg.depth - depth, cfg, models, ctx, rng)
        g = tail
        for n, r in reversed(path):
            g = r + cfg.gamma * g
            n.visits += 1
            n.value_sum += g
        root.visits += 1
        root.value_sum += g

    best_idx = max(
        root.children,
        key=lambda i: (root.children[i].visits, root.children[i].mean(), -i),
    )
    best = root.actions[best_idx]
    if not return_stats:
        return best
    visits = tuple(
        root.children[i].visits if i in root.children else 0
        for i in range(len(root.actions))
    )
    means = tuple(
        root.children[i].mean() if i in root.children and root.children[i].visits
        else 0.0
        for i in range(len(root.actions))
    )
    return best, SearchStats(root.actions, visits, means, cfg.iterations)


def root_parallel_search(
    x0: SceneState,
    b0: BeliefState,
    cfg: MctsConfig,
    models: PlannerModels,
    seeds,
) -> EgoAction:
    """Merge independent trees: run one search per seed and sum root visit
    counts (deterministic given the seed list)."""
    totals: dict[EgoAction, tuple[int, float]] = {}
    for seed in seeds:
        _, stats = mcts_search(
            x0, b0, replace(cfg, seed=int(seed)), models,
            rng=np.random.default_rng(int(seed)), return_stats=True,
        )
        for action, v, m in zip(stats.actions, stats.visits, stats.means):
            tv, tm = totals.get(action, (0, 0.0))
            totals[action] = (tv + v, tm + m * v)
    def key(action: EgoAction):
        v, msum = totals[action]
        mean = msum / v if v else -math.inf
        return (v, mean, -ACTIONS.index(action))
    return max(totals, key=key)
