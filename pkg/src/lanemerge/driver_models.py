"""Closed-form longitudinal driver models and their parameter distributions.

Two car-following models predict the acceleration of a "back" car from
its own speed, the closing speed ``dv = v_back - v_front``, and the
bumper gap ``gap = s_front + length_front - s_back``:

* The intelligent-driver model (IDM) combines a free-flow term with a
  desired-gap braking term.
* The velocity-difference model (VDM) relaxes the speed toward a
  tanh-shaped optimal velocity of the gap, plus a closing-speed term.
  Note the sign convention: positive ``dv`` (closing in) *increases* the
  commanded acceleration via ``lam * dv``, matching the calibrated form
  used throughout this package.

Per-driver diversity is captured by independent per-parameter Gaussians
(:class:`ParamDistribution`). The distributions bundled in
:data:`REFERENCE_DISTRIBUTIONS` were calibrated on recorded highway-ramp
merges, split into trials where the merging car did ("successful") or did
not ("unsuccessful") get in ahead of the back car.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Union

import numpy as np

from . import kvio

MODEL_IDM = "idm"
MODEL_VDM = "vdm"
SCENARIO_SUCCESSFUL = "successful"
SCENARIO_UNSUCCESSFUL = "unsuccessful"

# Physical envelope applied to model outputs before they drive a simulation;
# sampled extreme parameters can otherwise command absurd accelerations.
ACCEL_MIN = -8.0
ACCEL_MAX = 4.0


class ModelError(ValueError):
    """Invalid parameters or model input."""


@dataclass(frozen=True, slots=True)
class CarFollowInput:
    """State triple a driver model sees: own speed, closing speed, bumper gap."""

    v_back: float
    dv: float
    gap: float

    def __post_init__(self) -> None:
        if self.v_back < 0:
            raise ModelError(f"v_back must be non-negative, got {self.v_back}")


@dataclass(frozen=True, slots=True)
class IdmParams:
    """(T, a_max, v0, delta, d0, b): following time, max accel, desired
    speed, exponent, min distance, braking deceleration."""

    T: float
    a_max: float
    v0: float
    delta: float
    d0: float
    b: float

    def __post_init__(self) -> None:
        if not (self.a_max > 0 and self.v0 > 0 and self.b > 0):
            raise ModelError(f"a_max, v0, b must be positive: {self}")
        if self.T < 0 or self.d0 < 0:
            raise ModelError(f"T and d0 must be non-negative: {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.T, self.a_max, self.v0, self.delta, self.d0, self.b])


@dataclass(frozen=True, slots=True)
class VdmParams:
    """(V1, V2, C1, C2, lam, kappa): optimal-velocity curve shape plus the
    closing-speed weight and the sensitivity gain."""

    V1: float
    V2: float
    C1: float
    C2: float
    lam: float
    kappa: float

    def __post_init__(self) -> None:
        if self.kappa < 0:
            raise ModelError(f"kappa must be non-negative, got {self.kappa}")
        for f in fields(self):
            if not math.isfinite(getattr(self, f.name)):
                raise ModelError(f"{f.name} must be finite: {self}")

    def as_array(self) -> np.ndarray:
        return np.array([self.V1, self.V2, self.C1, self.C2, self.lam, self.kappa])


DriverParams = Union[IdmParams, VdmParams]

PARAM_NAMES = {
    MODEL_IDM: ("T", "a_max", "v0", "delta", "d0", "b"),
    MODEL_VDM: ("V1", "V2", "C1", "C2", "lam", "kappa"),
}


def params_from_array(model: str, theta) -> DriverParams:
    values = [float(x) for x in theta]
    if len(values) != 6:
        raise ModelError(f"expected 6 parameters, got {len(values)}")
    if model == MODEL_IDM:
        return IdmParams(*values)
    if model == MODEL_VDM:
        return VdmParams(*values)
    raise ModelError(f"unknown model {model!r}")


def idm_desired_gap(v_back, dv, p: IdmParams):
    """Dynamic desired gap d0 + v*T + v*dv / (2*sqrt(a_max*b)).

    May go negative for strongly opening gaps; the caller feeds it to the
    braking term as-is.
    """
    return p.d0 + v_back * p.T + v_back * dv / (2.0 * math.sqrt(p.a_max * p.b))


def idm_accel(x: CarFollowInput, p: IdmParams) -> float:
    """IDM acceleration; the gap must be positive (a non-positive gap means
    the caller skipped its collision check)."""
    if x.gap <= 0:
        raise ModelError("IDM requires a positive gap")
    desired = idm_desired_gap(x.v_back, x.dv, p)
    return p.a_max * (1.0 - (x.v_back / p.v0) ** p.delta - (desired / x.gap) ** 2)


def idm_accel_arrays(v_back, dv, gap, p: IdmParams):
    """Vectorized IDM over equally-shaped arrays."""
    if np.any(np.asarray(gap) <= 0):
        raise ModelError("IDM requires a positive gap")
    desired = idm_desired_gap(v_back, dv, p)
    return p.a_max * (1.0 - (v_back / p.v0) ** p.delta - (desired / gap) ** 2)


def vdm_optimal_velocity(gap: float, p: VdmParams) -> float:
    """Preferred speed for a given gap: V1 + V2 * tanh(C1*gap - C2)."""
    return p.V1 + p.V2 * math.tanh(p.C1 * gap - p.C2)


def vdm_accel(x: CarFollowInput, p: VdmParams) -> float:
    """VDM acceleration: kappa * (V(gap) - v_back + lam * dv)."""
    return p.kappa * (vdm_optimal_velocity(x.gap, p) - x.v_back + p.lam * x.dv)


def vdm_accel_arrays(v_back, dv, gap, p: VdmParams):
    """Vectorized VDM over equally-shaped arrays."""
    return p.kappa * (p.V1 + p.V2 * np.tanh(p.C1 * gap - p.C2) - v_back + p.lam * dv)


def accel_scalar(model: str, p: DriverParams, v_back: float, dv: float, gap: float) -> float:
    """Scalar fast path used inside simulation loops."""
    if model == MODEL_VDM:
        return p.kappa * (p.V1 + p.V2 * math.tanh(p.C1 * gap - p.C2) - v_back + p.lam * dv)
    if gap <= 0:
        raise ModelError("IDM requires a positive gap")
    desired = p.d0 + v_back * p.T + v_back * dv / (2.0 * math.sqrt(p.a_max * p.b))
    return p.a_max * (1.0 - (v_back / p.v0) ** p.delta - (desired / gap) ** 2)


def predict_accel(model: str, p: DriverParams, v_back, dv, gap):
    """Array-friendly dispatch shared by calibration and the planner."""
    if model == MODEL_IDM:
        return idm_accel_arrays(v_back, dv, gap, p)
    if model == MODEL_VDM:
        return vdm_accel_arrays(v_back, dv, gap, p)
    raise ModelError(f"unknown model {model!r}")


def clamp_accel(a: float, lo: float = ACCEL_MIN, hi: float = ACCEL_MAX) -> float:
    """Clip a commanded acceleration to the physical envelope."""
    return lo if a < lo else hi if a > hi else a


@dataclass(frozen=True)
class ParamDistribution:
    """Independent per-parameter Gaussians for one (model, scenario) pair."""

    model: str
    scenario: str
    mean: tuple[float, ...]
    variance: tuple[float, ...]

    def __post_init__(self) -> None:
        if self.model not in (MODEL_IDM, MODEL_VDM):
            raise ModelError(f"unknown model {self.model!r}")
        if self.scenario not in (SCENARIO_SUCCESSFUL, SCENARIO_UNSUCCESSFUL):
            raise ModelError(f"unknown scenario {self.scenario!r}")
        if len(self.mean) != 6 or len(self.variance) != 6:
            raise ModelError("mean and variance must have 6 components")
        if any(v < 0 for v in self.variance):
            raise ModelError(f"variances must be non-negative: {self.variance}")

    def mean_params(self) -> DriverParams:
        return params_from_array(self.model, self.mean)


# Bounds used when a Gaussian draw has to be pushed back into the valid
# parameter region. Strictly-positive parameters get a small floor; the
# IDM exponent is floored too so a braked car (v_back = 0) never hits
# 0 ** negative in simulation.
_POSITIVE_FLOOR = 1e-3
_PARAM_LOWER = {
    MODEL_IDM: (0.0, _POSITIVE_FLOOR, _POSITIVE_FLOOR, _POSITIVE_FLOOR, 0.0, _POSITIVE_FLOOR),
    MODEL_VDM: (-math.inf, -math.inf, -math.inf, -math.inf, -math.inf, 0.0),
}

SAMPLE_MAX_RETRIES = 100


def sample_params(
    dist: ParamDistribution, rng: np.random.Generator | int
) -> DriverParams:
    """Draw one parameter vector from independent Gaussians.

    Draws that violate the parameter-type invariants are redrawn up to
    :data:`SAMPLE_MAX_RETRIES` times, then clamped componentwise to the
    valid region. A distribution whose mean is itself invalid after
    clamping raises.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    mean = np.asarray(dist.mean)
    sigma = np.sqrt(np.asarray(dist.variance))
    lower = np.asarray(_PARAM_LOWER[dist.model])
    draw = mean
    for _ in range(SAMPLE_MAX_RETRIES + 1):
        draw = mean + sigma * rng.standard_normal(6)
        if np.all(draw >= lower):
            return params_from_array(dist.model, draw)
    clamped = np.maximum(draw, lower)
    try:
        return params_from_array(dist.model, clamped)
    except ModelError as exc:
        raise ModelError(f"distribution {dist.model}/{dist.scenario} is degenerate: {exc}") from exc


# Reference calibration results bundled so experiments run without the
# recorded merge dataset. Keys are (model, scenario).
REFERENCE_DISTRIBUTIONS: dict[tuple[str, str], ParamDistribution] = {
    (MODEL_IDM, SCENARIO_SUCCESSFUL): ParamDistribution(
        MODEL_IDM, SCENARIO_SUCCESSFUL,
        mean=(0.522, 0.837, 13.257, 5.696, 4.543, 0.805),
        variance=(0.710, 0.691, 13.484, 7.990, 3.776, 1.476),
    ),
    (MODEL_IDM, SCENARIO_UNSUCCESSFUL): ParamDistribution(
        MODEL_IDM, SCENARIO_UNSUCCESSFUL,
        mean=(0.958, 1.421, 16.885, 3.426, 1.281, 61.907),
        variance=(1.995, 0.769, 15.430, 2.191, 2.484, 483.36),
    ),
    (MODEL_VDM, SCENARIO_SUCCESSFUL): ParamDistribution(
        MODEL_VDM, SCENARIO_SUCCESSFUL,
        mean=(4.760, 5.158, 1.748, 3.386, 1.455, 0.476),
        variance=(3.293, 3.390, 1.945, 3.389, 2.136, 0.950),
    ),
    (MODEL_VDM, SCENARIO_UNSUCCESSFUL): ParamDistribution(
        MODEL_VDM, SCENARIO_UNSUCCESSFUL,
        mean=(3.747, 6.133, 1.641, 7.118, 0.530, 0.332),
        variance=(3.507, 3.433, 2.289, 3.528, 0.514, 0.388),
    ),
}


def preset(name: str) -> ParamDistribution:
    """Look up a bundled distribution by "<model>_<scenario>" name."""
    for (model, scenario), dist in REFERENCE_DISTRIBUTIONS.items():
        if name == f"{model}_{scenario}":
            return dist
    known = ", ".join(f"{m}_{s}" for m, s in REFERENCE_DISTRIBUTIONS)
    raise ModelError(f"unknown preset {name!r} (known: {known})")


# Fixed "textbook" IDM parameters for the baseline predictor that skips
# per-scenario calibration entirely.
IDM_FIXED_BASELINE = IdmParams(T=1.5, a_max=1.4, v0=16.0, delta=4.0, d0=2.0, b=2.0)


DISTRIBUTION_FORMAT = "param-distribution/v1"


def distribution_to_kv(dist: ParamDistribution) -> dict[str, str]:
    return {
        "format": DISTRIBUTION_FORMAT,
        "model": dist.model,
        "scenario": dist.scenario,
        "mean": kvio.format_floats(dist.mean),
        "variance": kvio.format_floats(dist.variance),
    }


def distribution_from_kv(kv: dict[str, str], path: str = "<kv>") -> ParamDistribution:
    if kvio.require(kv, "format", path) != DISTRIBUTION_FORMAT:
        raise kvio.KvError(f"{path}: unsupported format {kv['format']!r}")
    return ParamDistribution(
        model=kvio.require(kv, "model", path),
        scenario=kvio.require(kv, "scenario", path),
        mean=tuple(kvio.parse_floats(kvio.require(kv, "mean", path), 6)),
        variance=tuple(kvio.parse_floats(kvio.require(kv, "variance", path), 6)),
    )


def save_distribution(dist: ParamDistribution, path) -> None:
    kvio.write_kv(path, distribution_to_kv(dist))


def load_distribution(path) -> ParamDistribution:
    return distribution_from_kv(kvio.read_kv(path), str(path))
