"""Closed-loop episodes, scenario generation, replay evaluation, metrics.

An episode alternates belief refresh, tree search, and a one-second world
step for a fixed horizon. The surrounding cars are steered by their own
sampled driver models (the "environment"); the planner only ever sees
their kinematic state and its belief. Episodes never stop early on a
completed merge, so post-merge following behavior is exercised; they do
stop on collision.

Replay evaluation re-plans the ego each step against *recorded* other-car
trajectories and scores success by the no-intersection rule (collision
free at every step). Prediction errors are one-step-ahead: predict from
the recorded state at t, compare at t + dt.

All randomness descends from a single integer seed through
``numpy.random.SeedSequence`` spawning, so any run is reproducible from
its manifest.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .driver_models import (
    MODEL_VDM,
    REFERENCE_DISTRIBUTIONS,
    SCENARIO_SUCCESSFUL,
    SCENARIO_UNSUCCESSFUL,
    DriverParams,
    params_from_array,
    sample_params,
)
from .frenet import (
    EgoAction,
    EgoState,
    OtherState,
    RoadGeometry,
    SceneState,
    VehicleDims,
    any_collision,
    step_lateral,
    step_longitudinal,
)
from .planner import (
    LEADER_AUTO,
    LEADER_EGO,
    BeliefState,
    ContextCar,
    DriverContext,
    MctsConfig,
    PlannerModels,
    PredictorConfig,
    RewardWeights,
    UNIFORM_BELIEF,
    belief_update,
    classify,
    mcts_search,
    other_car_accel,
    reward,
    transition,
)
from .yielding import ClassifierWeights, YieldFeatures, extract_features
from . import kvio
from . import yielding


class HarnessError(ValueError):
    pass


OUTCOME_MERGED = "merged"
OUTCOME_COLLISION = "collision"
OUTCOME_TIMEOUT = "timeout"
OUTCOME_ABORTED = "aborted"


@dataclass(frozen=True)
class EnvCar:
    """Ground-truth driver model for one surrounding car."""

    model: str
    params: DriverParams


@dataclass(frozen=True)
class Scenario:
    """Initial world plus everything random about it, fully materialized:
    hidden bits live in the scene, sampled env parameters in env_cars,
    and ``seed`` drives only the planner's internal randomness."""

    scene: SceneState
    geo: RoadGeometry
    env_cars: tuple[EnvCar, EnvCar]
    horizon: float = 12.0
    dt: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.horizon < self.dt:
            raise HarnessError("horizon must cover at least one step")

    def env_context(self) -> DriverContext:
        """Leader rules from the true hidden bits: a yielding rear car
        follows the ego, everyone else follows whoever is ahead in
        their lane."""
        rear_leader = LEADER_EGO if self.scene.rear.m == 1 else LEADER_AUTO
        return DriverContext(
            cars=(
                ContextCar(rear_leader, self.env_cars[0].model, self.env_cars[0].params),
                ContextCar(LEADER_AUTO, self.env_cars[1].model, self.env_cars[1].params),
            )
        )


@dataclass(frozen=True)
class StepRecord:
    scene: SceneState                    # state the step started from
    action: EgoAction
    reward: float
    belief: BeliefState
    predicted_accels: tuple[float, float]
    env_accels: tuple[float, float]
    accel_errors: tuple[float, float]
    speed_errors: tuple[float, float]
    position_errors: tuple[float, float]


@dataclass(frozen=True)
class EpisodeTrace:
    scenario: Scenario
    steps: tuple[StepRecord, ...]
    final_scene: SceneState
    outcome: str
    note: str = ""

    @property
    def merged(self) -> bool:
        return self.outcome == OUTCOME_MERGED

    @property
    def total_reward(self) -> float:
        return sum(s.reward for s in self.steps)


@dataclass(frozen=True)
class EvalMetrics:
    """Success tally plus mean absolute one-step prediction errors."""

    success_count: int
    total: int
    a_err: float
    v_err: float
    x_err: float

    def __post_init__(self) -> None:
        if self.success_count > self.total:
            raise HarnessError("success_count cannot exceed total")

    @property
    def success_rate(self) -> float:
        return self.success_count / self.total if self.total else 0.0


def _one_step_prediction_errors(
    scene: SceneState,
    next_scene: SceneState,
    pred_accels: tuple[float, float],
    dt: float,
):
    """|a|, |v|, |x| errors of predicting each other car one step ahead."""
    a_err, v_err, x_err = [], [], []
    for car, car_next, a_hat in zip(scene.others, next_scene.others, pred_accels):
        s_hat, v_hat = step_longitudinal(car.s, car.v, a_hat, dt)
        a_actual = (car_next.v - car.v) / dt
        a_err.append(abs(a_hat - a_actual))
        v_err.append(abs(v_hat - car_next.v))
        x_err.append(abs(s_hat - car_next.s))
    return tuple(a_err), tuple(v_err), tuple(x_err)


def run_episode(
    sc: Scenario,
    planner_cfg: MctsConfig,
    predictor_cfg: PredictorConfig = PredictorConfig(),
    reward_weights: RewardWeights = RewardWeights(),
    classifier: ClassifierWeights | None = None,
    ego_dims: VehicleDims = VehicleDims(),
    belief_eta: float = 1.0,
    env_follows_predictor: bool = False,
) -> EpisodeTrace:
    """Close the loop: belief refresh, search, one world step, repeat.

    ``env_follows_predictor`` replaces the ground-truth env with the
    planner's own belief-switched predictor; useful to build
    self-consistent replay fixtures where prediction errors must vanish.
    """
    if classifier is None:
        classifier = yielding.DEFAULT_WEIGHTS
    models = PlannerModels(
        geo=sc.geo, weights=reward_weights, predictor=predictor_cfg, ego_dims=ego_dims
    )
    if any_collision(sc.scene, sc.geo, ego_dims):
        raise HarnessError("scenario starts in collision")
    rng = np.random.default_rng(np.random.SeedSequence(sc.seed))
    env_ctx = sc.env_context()
    scene = sc.scene
    belief = UNIFORM_BELIEF
    steps: list[StepRecord] = []
    outcome = OUTCOME_TIMEOUT
    note = ""
    n_steps = int(round(sc.horizon / sc.dt))
    for _ in range(n_steps):
        try:
            belief = belief_update(belief, scene, classifier, belief_eta, ego_dims)
            action = mcts_search(scene, belief, planner_cfg, models, rng=rng)
            pred_ctx = predictor_cfg.build_context(
                classify(belief.p_yield[0], planner_cfg.beta), rng
            )
            step_ctx = pred_ctx if env_follows_predictor else env_ctx
            pred_accels = tuple(
                other_car_accel(scene, k, pred_ctx, ego_dims) for k in (1, 2)
            )
            env_accels = tuple(
                other_car_accel(scene, k, step_ctx, ego_dims) for k in (1, 2)
            )
            next_scene = transition(scene, action, step_ctx, sc.dt, sc.geo, ego_dims)
        except Exception as exc:  # noqa: BLE001 - any model failure aborts cleanly
            outcome = OUTCOME_ABORTED
            note = f"{type(exc).__name__}: {exc}"
            break
        r = reward(scene, action, next_scene, reward_weights, sc.geo, ego_dims)
        a_err, v_err, x_err = _one_step_prediction_errors(
            scene, next_scene, pred_accels, sc.dt
        )
        steps.append(
            StepRecord(scene, action, r, belief, pred_accels, env_accels,
                       a_err, v_err, x_err)
        )
        scene = next_scene
        if any_collision(scene, sc.geo, ego_dims):
            outcome = OUTCOME_COLLISION
            break
    else:
        outcome = OUTCOME_MERGED if scene.ego.lane == sc.geo.target_lane else OUTCOME_TIMEOUT
    return EpisodeTrace(sc, tuple(steps), scene, outcome, note)


# ---------------------------------------------------------------------------
# Scenario generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GenConfig:
    """Sampling ranges for random merge scenes: ego in lane 1 alongside a
    gap between two cars in lane 0.

    ``sample_env_params=False`` pins every env car to its distribution
    mean, leaving initial conditions as the only variation; useful for
    corpora that should show the canonical yield / no-yield signatures.
    """

    env_model: str = MODEL_VDM
    p_yield: float = 0.5
    speed_range: tuple[float, float] = (10.0, 15.0)
    gap_range: tuple[float, float] = (30.0, 60.0)     # rear-to-lead distance
    ego_ahead_range: tuple[float, float] = (5.0, 25.0)  # ego ahead of the rear car
    road_end_range: tuple[float, float] = (110.0, 160.0)
    horizon: float = 12.0
    dt: float = 1.0
    w_lane: float = 3.5
    v_ref: float = 16.0
    car_length: float = 4.5
    sample_env_params: bool = True

    def __post_init__(self) -> None:
        for name in ("speed_range", "gap_range", "ego_ahead_range", "road_end_range"):
            lo, hi = getattr(self, name)
            if not (lo <= hi):
                raise HarnessError(f"{name} is empty: ({lo}, {hi})")
        if not (0.0 <= self.p_yield <= 1.0):
            raise HarnessError("p_yield must be a probability")


def generate_scenarios(n: int, gen_cfg: GenConfig = GenConfig(), seed: int = 0) -> list[Scenario]:
    """n collision-free scenarios, deterministic given the seed (one
    spawned child stream per scenario)."""
    if n < 1:
        raise HarnessError("n must be >= 1")
    scenarios = []
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(n)):
        rng = np.random.default_rng(child)
        v_ego, v_rear, v_lead = (float(v) for v in rng.uniform(*gen_cfg.speed_range, size=3))
        gap12 = float(rng.uniform(*gen_cfg.gap_range))
        ego_ahead = float(rng.uniform(*gen_cfg.ego_ahead_range))
        road_end = float(rng.uniform(*gen_cfg.road_end_range))
        m_rear = int(rng.random() < gen_cfg.p_yield)
        rear_scenario = SCENARIO_SUCCESSFUL if m_rear else SCENARIO_UNSUCCESSFUL
        rear_dist = REFERENCE_DISTRIBUTIONS[(gen_cfg.env_model, rear_scenario)]
        lead_dist = REFERENCE_DISTRIBUTIONS[(gen_cfg.env_model, SCENARIO_UNSUCCESSFUL)]
        if gen_cfg.sample_env_params:
            rear_params = sample_params(rear_dist, rng)
            lead_params = sample_params(lead_dist, rng)
        else:
            rear_params = rear_dist.mean_params()
            lead_params = lead_dist.mean_params()
        geo = RoadGeometry(
            w_lane=gen_cfg.w_lane, road_end=road_end, target_lane=0, v_ref=gen_cfg.v_ref
        )
        scene = SceneState(
            ego=EgoState(s=ego_ahead, d=0.0, v=v_ego, lane=1),
            others=(
                OtherState(s=0.0, v=v_rear, lane=0, m=m_rear, length=gen_cfg.car_length),
                OtherState(s=gap12, v=v_lead, lane=0, m=0, length=gen_cfg.car_length),
            ),
        )
        scenario = Scenario(
            scene=scene,
            geo=geo,
            env_cars=(
                EnvCar(gen_cfg.env_model, rear_params),
                EnvCar(gen_cfg.env_model, lead_params),
            ),
            horizon=gen_cfg.horizon,
            dt=gen_cfg.dt,
            seed=int(rng.integers(2**62)),
        )
        if any_collision(scenario.scene, geo):
            raise HarnessError(f"generated scenario {i} starts in collision")
        scenarios.append(scenario)
    return scenarios


def run_batch(
    scenarios,
    planner_cfg: MctsConfig,
    predictor_cfg: PredictorConfig = PredictorConfig(),
    **episode_kwargs,
) -> list[EpisodeTrace]:
    """Episodes are independent; run them in order (workers parallelize
    at the CLI layer)."""
    return [
        run_episode(sc, planner_cfg, predictor_cfg, **episode_kwargs)
        for sc in scenarios
    ]


def aggregate(traces) -> EvalMetrics:
    """Merged fraction plus mean absolute prediction errors pooled over
    every logged step and car; order of traces is irrelevant."""
    traces = list(traces)
    if not traces:
        raise HarnessError("no traces to aggregate")
    a_errs, v_errs, x_errs = [], [], []
    for trace in traces:
        for step in trace.steps:
            a_errs.extend(step.accel_errors)
            v_errs.extend(step.speed_errors)
            x_errs.extend(step.position_errors)
    return EvalMetrics(
        success_count=sum(1 for t in traces if t.merged),
        total=len(traces),
        a_err=float(np.mean(a_errs)) if a_errs else 0.0,
        v_err=float(np.mean(v_errs)) if v_errs else 0.0,
        x_err=float(np.mean(x_errs)) if x_errs else 0.0,
    )


# ---------------------------------------------------------------------------
# Replay against recorded trajectories
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReplayTrial:
    """Ego start plus recorded (s, v) series for the two other cars, at
    the planning step interval."""

    trial_id: str
    ego0: EgoState
    rear: tuple[tuple[float, float], ...]
    lead: tuple[tuple[float, float], ...]
    lanes: tuple[int, int] = (0, 0)
    lengths: tuple[float, float] = (4.5, 4.5)
    dt: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if len(self.rear) != len(self.lead):
            raise HarnessError(f"trial {self.trial_id}: unequal recording lengths")

    def scene_at(self, i: int, ego: EgoState) -> SceneState:
        return SceneState(
            ego=ego,
            others=(
                OtherState(self.rear[i][0], self.rear[i][1], self.lanes[0], 0, self.lengths[0]),
                OtherState(self.lead[i][0], self.lead[i][1], self.lanes[1], 0, self.lengths[1]),
            ),
            t=i * self.dt,
        )


def replay_evaluate(
    trials,
    planner_cfg: MctsConfig,
    predictor_cfg: PredictorConfig = PredictorConfig(),
    geo: RoadGeometry | None = None,
    reward_weights: RewardWeights = RewardWeights(),
    classifier: ClassifierWeights | None = None,
    ego_dims: VehicleDims = VehicleDims(),
    belief_eta: float = 1.0,
) -> EvalMetrics:
    """Re-plan the ego each step while the other cars replay their
    recordings; success is a fully intersection-free trajectory.

    The road geometry, when not given, extends one virtual-gap past the
    longest recording so the end-of-lane ramp stays out of the way.
    """
    if classifier is None:
        classifier = yielding.DEFAULT_WEIGHTS
    trials = list(trials)
    successes = 0
    total = 0
    a_errs, v_errs, x_errs = [], [], []
    for trial in trials:
        if len(trial.rear) < 2:
            warnings.warn(f"trial {trial.trial_id}: shorter than one planning step, skipped",
                          stacklevel=2)
            continue
        total += 1
        trial_geo = geo
        if trial_geo is None:
            max_s = max(max(s for s, _ in trial.rear), max(s for s, _ in trial.lead),
                        trial.ego0.s)
            trial_geo = RoadGeometry(road_end=max_s + 500.0, target_lane=0)
        models = PlannerModels(
            geo=trial_geo, weights=reward_weights, predictor=predictor_cfg,
            ego_dims=ego_dims,
        )
        rng = np.random.default_rng(np.random.SeedSequence(trial.seed))
        ego = trial.ego0
        belief = UNIFORM_BELIEF
        ok = not any_collision(trial.scene_at(0, ego), trial_geo, ego_dims)
        for i in range(len(trial.rear) - 1):
            if not ok:
                break
            scene = trial.scene_at(i, ego)
            belief = belief_update(belief, scene, classifier, belief_eta, ego_dims)
            action = mcts_search(scene, belief, planner_cfg, models, rng=rng)
            pred_ctx = predictor_cfg.build_context(
                classify(belief.p_yield[0], planner_cfg.beta), rng
            )
            pred_accels = tuple(
                other_car_accel(scene, k, pred_ctx, ego_dims) for k in (1, 2)
            )
            s_next, v_next = step_longitudinal(ego.s, ego.v, action.a_long, trial.dt)
            d_next, lane_next = step_lateral(ego.d, ego.lane, action.v_lat, trial.dt, trial_geo)
            ego = EgoState(s=s_next, d=d_next, v=v_next, lane=lane_next)
            next_scene = trial.scene_at(i + 1, ego)
            a_e, v_e, x_e = _one_step_prediction_errors(scene, next_scene, pred_accels, trial.dt)
            a_errs.extend(a_e)
            v_errs.extend(v_e)
            x_errs.extend(x_e)
            ok = not any_collision(next_scene, trial_geo, ego_dims)
        if ok:
            successes += 1
    if total == 0:
        raise HarnessError("no usable replay trials")
    return EvalMetrics(
        success_count=successes,
        total=total,
        a_err=float(np.mean(a_errs)) if a_errs else 0.0,
        v_err=float(np.mean(v_errs)) if v_errs else 0.0,
        x_err=float(np.mean(x_errs)) if x_errs else 0.0,
    )


def trace_to_replay_trial(trace: EpisodeTrace, trial_id: str) -> ReplayTrial:
    """Turn an episode's other-car motion into a recorded trial (the ego
    start comes from the episode's first state)."""
    scenes = [s.scene for s in trace.steps] + [trace.final_scene]
    return ReplayTrial(
        trial_id=trial_id,
        ego0=scenes[0].ego,
        rear=tuple((sc.others[0].s, sc.others[0].v) for sc in scenes),
        lead=tuple((sc.others[1].s, sc.others[1].v) for sc in scenes),
        lanes=(scenes[0].others[0].lane, scenes[0].others[1].lane),
        lengths=(scenes[0].others[0].length, scenes[0].others[1].length),
        dt=trace.scenario.dt,
        seed=trace.scenario.seed,
    )


# ---------------------------------------------------------------------------
# Classifier training data
# ---------------------------------------------------------------------------

def synthesize_classifier_data(
    n_scenes: int,
    seed: int = 0,
    gen_cfg: GenConfig | None = None,
) -> list[tuple[YieldFeatures, int]]:
    """Labeled rear-car features from scripted merge attempts.

    The ego follows a fixed script (settle speed toward the reference,
    then drift laterally until the lane change completes) while the env
    cars run their models; every step contributes one feature row labeled
    with the rear car's true cooperativeness bit.

    By default the env cars use distribution means, so the corpus shows
    the canonical yield / no-yield signatures and only initial conditions
    vary; pass a config with ``sample_env_params=True`` for a corpus with
    full per-driver diversity (much noisier labels).
    """
    if gen_cfg is None:
        gen_cfg = GenConfig(sample_env_params=False)
    rows: list[tuple[YieldFeatures, int]] = []
    dims = VehicleDims()
    for sc in generate_scenarios(n_scenes, gen_cfg, seed):
        env_ctx = sc.env_context()
        scene = sc.scene
        label = sc.scene.rear.m
        n_steps = int(round(sc.horizon / sc.dt))
        merge_start = 1 + sc.seed % 3   # stagger attempts for coverage
        for step in range(n_steps):
            rows.append((extract_features(scene, 1, dims), label))
            v = scene.ego.v
            if v < sc.geo.v_ref - 0.5:
                a_long = 1.0
            elif v > sc.geo.v_ref + 0.75:
                a_long = -1.5
            else:
                a_long = 0.0
            merging = step >= merge_start and scene.ego.lane != sc.geo.target_lane
            action = EgoAction(a_long, 0.5 if merging else 0.0)
            scene = transition(scene, action, env_ctx, sc.dt, sc.geo, dims)
            if any_collision(scene, sc.geo, dims):
                break
    return rows


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

TRACE_CSV_HEADER = [
    "t", "s0", "d0", "v0", "lane0", "s1", "v1", "s2", "v2",
    "a_long", "v_lat", "p_yield", "reward",
]

REPLAY_CSV_HEADER = ["trial_id", "t", "car_id", "role", "s", "d", "v", "lane", "length"]


def write_trace_csv(trace: EpisodeTrace, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_CSV_HEADER)
        for step in trace.steps:
            sc = step.scene
            writer.writerow(
                [repr(float(sc.t)),
                 repr(float(sc.ego.s)), repr(float(sc.ego.d)), repr(float(sc.ego.v)),
                 sc.ego.lane,
                 repr(float(sc.others[0].s)), repr(float(sc.others[0].v)),
                 repr(float(sc.others[1].s)), repr(float(sc.others[1].v)),
                 repr(float(step.action.a_long)), repr(float(step.action.v_lat)),
                 repr(float(step.belief.p_yield[0])), repr(float(step.reward))]
            )


def write_replay_csv(trials, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(REPLAY_CSV_HEADER)
        for trial in trials:
            e = trial.ego0
            writer.writerow([trial.trial_id, repr(0.0), "0", "ego",
                             repr(e.s), repr(e.d), repr(e.v), e.lane, repr(4.5)])
            for car_id, role, series, lane, length in (
                ("1", "back", trial.rear, trial.lanes[0], trial.lengths[0]),
                ("2", "front", trial.lead, trial.lanes[1], trial.lengths[1]),
            ):
                for i, (s, v) in enumerate(series):
                    writer.writerow([trial.trial_id, repr(i * trial.dt), car_id, role,
                                     repr(s), repr(0.0), repr(v), lane, repr(length)])


def read_replay_csv(path, dt: float = 1.0) -> list[ReplayTrial]:
    egos: dict[str, EgoState] = {}
    series: dict[str, dict[str, list[tuple[float, float, float, int, float]]]] = {}
    order: list[str] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != REPLAY_CSV_HEADER:
            raise HarnessError(f"{path}: expected header {','.join(REPLAY_CSV_HEADER)!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(REPLAY_CSV_HEADER):
                raise HarnessError(f"{path}:{lineno}: expected {len(REPLAY_CSV_HEADER)} fields")
            trial_id, t_str, _car_id, role = row[0], row[1], row[2], row[3]
            try:
                t, s, d, v = float(t_str), float(row[4]), float(row[5]), float(row[6])
                lane, length = int(row[7]), float(row[8])
            except ValueError as exc:
                raise HarnessError(f"{path}:{lineno}: bad number: {exc}") from exc
            if trial_id not in series:
                series[trial_id] = {"back": [], "front": []}
                order.append(trial_id)
            if role == "ego":
                egos[trial_id] = EgoState(s=s, d=d, v=v, lane=lane)
            elif role in ("back", "front"):
                series[trial_id][role].append((t, s, v, lane, length))
            else:
                raise HarnessError(f"{path}:{lineno}: unknown role {role!r}")
    trials = []
    for trial_id in order:
        if trial_id not in egos:
            raise HarnessError(f"{path}: trial {trial_id!r} has no ego row")
        back = sorted(series[trial_id]["back"])
        front = sorted(series[trial_id]["front"])
        if not back or not front:
            raise HarnessError(f"{path}: trial {trial_id!r} is missing a car recording")
        trials.append(
            ReplayTrial(
                trial_id=trial_id,
                ego0=egos[trial_id],
                rear=tuple((s, v) for _, s, v, _, _ in back),
                lead=tuple((s, v) for _, s, v, _, _ in front),
                lanes=(back[0][3], front[0][3]),
                lengths=(back[0][4], front[0][4]),
                dt=dt,
            )
        )
    return trials


SCENARIO_FORMAT = "scenario/v1"


def save_scenario(sc: Scenario, path) -> None:
    kv = {
        "format": SCENARIO_FORMAT,
        "seed": str(sc.seed),
        "horizon": repr(sc.horizon),
        "dt": repr(sc.dt),
        "geo.w_lane": repr(sc.geo.w_lane),
        "geo.road_end": repr(sc.geo.road_end),
        "geo.target_lane": str(sc.geo.target_lane),
        "geo.v_ref": repr(sc.geo.v_ref),
        "ego.s": repr(sc.scene.ego.s),
        "ego.d": repr(sc.scene.ego.d),
        "ego.v": repr(sc.scene.ego.v),
        "ego.lane": str(sc.scene.ego.lane),
    }
    for i, (car, env) in enumerate(zip(sc.scene.others, sc.env_cars), start=1):
        kv[f"car{i}.s"] = repr(car.s)
        kv[f"car{i}.v"] = repr(car.v)
        kv[f"car{i}.lane"] = str(car.lane)
        kv[f"car{i}.m"] = str(car.m)
        kv[f"car{i}.length"] = repr(car.length)
        kv[f"car{i}.model"] = env.model
        kv[f"car{i}.params"] = kvio.format_floats(env.params.as_array())
    kvio.write_kv(path, kv)


def load_scenario(path) -> Scenario:
    kv = kvio.read_kv(path)
    if kvio.require(kv, "format", str(path)) != SCENARIO_FORMAT:
        raise kvio.KvError(f"{path}: unsupported format {kv['format']!r}")
    geo = RoadGeometry(
        w_lane=float(kv["geo.w_lane"]),
        road_end=float(kv["geo.road_end"]),
        target_lane=int(kv["geo.target_lane"]),
        v_ref=float(kv["geo.v_ref"]),
    )
    others = []
    env_cars = []
    for i in (1, 2):
        others.append(
            OtherState(
                s=float(kv[f"car{i}.s"]), v=float(kv[f"car{i}.v"]),
                lane=int(kv[f"car{i}.lane"]), m=int(kv[f"car{i}.m"]),
                length=float(kv[f"car{i}.length"]),
            )
        )
        model = kv[f"car{i}.model"]
        env_cars.append(EnvCar(model, params_from_array(model, kvio.parse_floats(kv[f"car{i}.params"], 6))))
    scene = SceneState(
        ego=EgoState(
            s=float(kv["ego.s"]), d=float(kv["ego.d"]),
            v=float(kv["ego.v"]), lane=int(kv["ego.lane"]),
        ),
        others=tuple(others),
    )
    return Scenario(
        scene=scene, geo=geo, env_cars=tuple(env_cars),
        horizon=float(kv["horizon"]), dt=float(kv["dt"]), seed=int(kv["seed"]),
    )
