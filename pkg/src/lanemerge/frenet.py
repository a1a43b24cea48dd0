"""Road-aligned state types, kinematic stepping, and collision geometry.

Coordinate conventions used throughout the package:

* ``s`` is the longitudinal position along the road (m).
* ``d`` is the signed lateral deviation of the ego vehicle from the
  centerline of its current lane (m). Positive ``d`` points toward
  lower-numbered lanes, so an ego car in lane 1 merging into lane 0
  drifts with positive lateral velocity.
* The global lateral coordinate of a vehicle is ``y = d - lane * w_lane``;
  lane ``k``'s centerline sits at ``y = -k * w_lane``. Within a step this
  coordinate changes by exactly ``v_lat * dt``, including across a lane
  switch, so lateral motion never teleports.
* A lane switch happens when the candidate offset crosses the half-lane
  boundary ``|d| > w_lane / 2``; the offset is then re-anchored to the
  new lane's centerline.

Other cars stay in their lane for a whole episode and carry a hidden
cooperativeness bit ``m`` that observations never expose.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace


DEFAULT_LANE_WIDTH = 3.5
DEFAULT_VEHICLE_LENGTH = 4.5
DEFAULT_VEHICLE_WIDTH = 2.0

N_LANES = 2  # lane indices {0, 1}; lane 0 is the usual merge target


class FrenetError(ValueError):
    """Invalid kinematic input (non-finite or out of domain)."""


def _require_finite(*values: float) -> None:
    for value in values:
        if not math.isfinite(value):
            raise FrenetError(f"kinematic inputs must be finite, got {value!r}")


@dataclass(frozen=True, slots=True)
class RoadGeometry:
    """Static description of the two-lane merge stretch.

    ``road_end`` is the longitudinal coordinate where the ego's original
    lane runs out; ``v_ref`` is the reference speed the planner rewards.
    """

    w_lane: float = DEFAULT_LANE_WIDTH
    road_end: float = 200.0
    target_lane: int = 0
    v_ref: float = 16.0

    def __post_init__(self) -> None:
        if not (self.w_lane > 0):
            raise FrenetError(f"w_lane must be positive, got {self.w_lane}")
        if not (self.road_end > 0):
            raise FrenetError(f"road_end must be positive, got {self.road_end}")


@dataclass(frozen=True, slots=True)
class EgoState:
    s: float
    d: float
    v: float
    lane: int

    def __post_init__(self) -> None:
        if self.v < 0:
            raise FrenetError(f"ego speed must be non-negative, got {self.v}")


@dataclass(frozen=True, slots=True)
class OtherState:
    s: float
    v: float
    lane: int
    m: int = 0
    length: float = DEFAULT_VEHICLE_LENGTH

    def __post_init__(self) -> None:
        if self.v < 0:
            raise FrenetError(f"speed must be non-negative, got {self.v}")
        if self.m not in (0, 1):
            raise FrenetError(f"cooperativeness bit must be 0 or 1, got {self.m}")
        if not (self.length > 0):
            raise FrenetError(f"length must be positive, got {self.length}")


@dataclass(frozen=True, slots=True)
class SceneState:
    """Full world state: ego plus the rear (index 0) and lead (index 1)
    cars on the target lane, and the episode clock."""

    ego: EgoState
    others: tuple[OtherState, OtherState]
    t: float = 0.0

    @property
    def rear(self) -> OtherState:
        return self.others[0]

    @property
    def lead(self) -> OtherState:
        return self.others[1]

    def with_hidden_bits(self, m_rear: int, m_lead: int) -> "SceneState":
        return replace(
            self,
            others=(replace(self.others[0], m=m_rear), replace(self.others[1], m=m_lead)),
        )


@dataclass(frozen=True, slots=True)
class EgoAction:
    """One of the nine discrete (longitudinal accel, lateral velocity) pairs."""

    a_long: float
    v_lat: float

    def __post_init__(self) -> None:
        if self.a_long not in A_LONG or self.v_lat not in A_LAT:
            raise FrenetError(f"action ({self.a_long}, {self.v_lat}) not in the discrete action set")


A_LONG = (-1.5, 0.0, 1.0)
A_LAT = (-0.5, 0.0, 0.5)

# Fixed ordering; ties in the planner fall back to this order.
ACTIONS: tuple[EgoAction, ...] = tuple(
    EgoAction(a, v) for a in A_LONG for v in A_LAT
)

HOLD = EgoAction(0.0, 0.0)


@dataclass(frozen=True, slots=True)
class Observation:
    """Everything the ego can sense: the hidden bits and the clock are gone."""

    ego: tuple[float, float, float, int]          # (s, d, v, lane)
    others: tuple[tuple[float, float, int], ...]  # per car (s, v, lane)


@dataclass(frozen=True, slots=True)
class VehicleDims:
    length: float = DEFAULT_VEHICLE_LENGTH
    width: float = DEFAULT_VEHICLE_WIDTH


def step_longitudinal(s: float, v: float, a: float, dt: float) -> tuple[float, float]:
    """Advance (s, v) by constant acceleration over dt.

    Braking never produces reverse motion: if the speed would cross zero
    the profile is truncated at the stopping time and the vehicle holds
    position from there.
    """
    _require_finite(s, v, a, dt)
    if dt <= 0:
        raise FrenetError(f"dt must be positive, got {dt}")
    v_next = v + a * dt
    if v_next < 0.0:
        # stops at t* = -v/a < dt; distance covered is v^2 / (2|a|)
        t_stop = -v / a
        return s + v * t_stop + 0.5 * a * t_stop * t_stop, 0.0
    return s + v * dt + 0.5 * a * dt * dt, v_next


def step_lateral(
    d: float, lane: int, v_lat: float, dt: float, geo: RoadGeometry
) -> tuple[float, int]:
    """Advance the lateral offset, switching lanes on centerline-boundary crossing.

    Positive offsets point toward lower lane indices, so crossing with
    positive candidate offset decrements the lane. The returned offset is
    re-anchored to the new lane so the global lateral coordinate
    ``d - lane * w_lane`` advances by exactly ``v_lat * dt``.
    """
    _require_finite(d, v_lat, dt)
    half = geo.w_lane / 2.0
    if abs(d) > geo.w_lane:
        raise FrenetError(f"|d|={abs(d)} exceeds lane width {geo.w_lane}")
    d_c = d + v_lat * dt
    if abs(d_c) > half:
        sign = 1.0 if d_c > 0 else -1.0
        return d_c - sign * geo.w_lane, lane - int(sign)
    return d_c, lane


def lateral_position(lane: int, d: float, geo: RoadGeometry) -> float:
    """Global lateral coordinate shared by all vehicles (lane k centerline
    at -k * w_lane)."""
    return d - lane * geo.w_lane


def rects_overlap(
    s1: float, y1: float, length1: float, width1: float,
    s2: float, y2: float, length2: float, width2: float,
) -> bool:
    """Axis-aligned rectangle overlap around vehicle centers."""
    return (
        abs(s1 - s2) < (length1 + length2) / 2.0
        and abs(y1 - y2) < (width1 + width2) / 2.0
    )


def check_collision(
    ego: EgoState,
    other: OtherState,
    geo: RoadGeometry,
    ego_dims: VehicleDims = VehicleDims(),
    other_width: float = DEFAULT_VEHICLE_WIDTH,
) -> bool:
    """True iff the two footprint rectangles intersect."""
    return rects_overlap(
        ego.s, lateral_position(ego.lane, ego.d, geo), ego_dims.length, ego_dims.width,
        other.s, lateral_position(other.lane, 0.0, geo), other.length, other_width,
    )


def any_collision(scene: SceneState, geo: RoadGeometry, ego_dims: VehicleDims = VehicleDims()) -> bool:
    """True iff the ego overlaps either surrounding car."""
    ego = scene.ego
    y_ego = ego.d - ego.lane * geo.w_lane
    half_len = ego_dims.length / 2.0
    half_wid = ego_dims.width / 2.0
    for car in scene.others:
        if (
            abs(ego.s - car.s) < half_len + car.length / 2.0
            and abs(y_ego + car.lane * geo.w_lane) < half_wid + DEFAULT_VEHICLE_WIDTH / 2.0
        ):
            return True
    return False


def observe(scene: SceneState) -> Observation:
    """Project the world state onto what sensors report (no hidden bits,
    no noise)."""
    e = scene.ego
    return Observation(
        ego=(e.s, e.d, e.v, e.lane),
        others=tuple((c.s, c.v, c.lane) for c in scene.others),
    )


# Bumper gap assigned when a car has nobody ahead; far enough that every
# bundled optimal-velocity curve is fully saturated.
VIRTUAL_LEADER_GAP = 500.0


def nearest_leader(
    scene: SceneState, k: int, ego_dims: VehicleDims = VehicleDims()
) -> tuple[float, float, float] | None:
    """(s, v, length) of the closest vehicle strictly ahead of car ``k``
    (1 = rear, 2 = lead) in its lane, counting the ego by its current
    lane; None when the lane ahead is clear."""
    me = scene.others[k - 1]
    candidates = []
    for j, car in enumerate(scene.others, start=1):
        if j != k and car.lane == me.lane and car.s > me.s:
            candidates.append((car.s, car.v, car.length))
    if scene.ego.lane == me.lane and scene.ego.s > me.s:
        candidates.append((scene.ego.s, scene.ego.v, ego_dims.length))
    if not candidates:
        return None
    return min(candidates, key=lambda c: c[0])
