"""Per-trial maximum-likelihood calibration of driver models.

A trial is one recorded back/front car pair: a time series of
(state, acceleration) samples. Under additive Gaussian acceleration noise
the log-likelihood of a parameter vector is, up to a constant, the
negated squared-residual sum, so each trial is fit by minimizing

    J(theta) = sum_i (a_i - a_hat(x_i; theta))^2 / (2 * sigma_eps^2)

with a multi-start bounded simplex search. ``sigma_eps`` only scales the
objective; the argmin never depends on it.

Across trials, fits whose converged cost exceeds Q3 + 1.5*IQR are dropped
as outliers, and the surviving parameter vectors are summarized as
independent per-parameter Gaussians (sample mean, unbiased variance).

The recorded drone data the reference distributions were fit from cannot
be redistributed; :func:`generate_trial` produces synthetic trials with
the same structure (known parameters, Gaussian acceleration noise) for
tests, examples, and end-to-end runs.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .driver_models import (
    MODEL_IDM,
    MODEL_VDM,
    SCENARIO_SUCCESSFUL,
    SCENARIO_UNSUCCESSFUL,
    CarFollowInput,
    DriverParams,
    ParamDistribution,
    REFERENCE_DISTRIBUTIONS,
    params_from_array,
    predict_accel,
    sample_params,
)

# Benchmark prediction errors measured on the original drone-data
# calibration (average MSE, max MSE across trials); shipped for context
# only, the raw data is not included.
REFERENCE_MSE = {MODEL_VDM: (0.046, 0.139), MODEL_IDM: (0.072, 0.451)}

# Real trials shorter than this carry too little signal to calibrate.
MIN_TRIAL_SAMPLES = 10

TRIAL_CSV_HEADER = ["trial_id", "scenario", "t", "v_back", "dv", "gap", "a"]


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class TrialRecord:
    """One back/front car pair: ordered (state, acceleration, time) samples."""

    trial_id: str
    scenario: str
    samples: tuple[tuple[CarFollowInput, float, float], ...]

    def __post_init__(self) -> None:
        if self.scenario not in (SCENARIO_SUCCESSFUL, SCENARIO_UNSUCCESSFUL):
            raise CalibrationError(f"trial {self.trial_id}: unknown scenario {self.scenario!r}")
        if not self.samples:
            raise CalibrationError(f"trial {self.trial_id}: no samples")
        times = [t for (_, _, t) in self.samples]
        if any(t2 <= t1 for t1, t2 in zip(times, times[1:])):
            raise CalibrationError(f"trial {self.trial_id}: timestamps must be strictly increasing")
        if any(x.gap <= 0 for (x, _, _) in self.samples):
            raise CalibrationError(f"trial {self.trial_id}: all gaps must be positive")

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(v_back, dv, gap, a) as flat arrays for vectorized evaluation."""
        v = np.array([x.v_back for (x, _, _) in self.samples])
        dv = np.array([x.dv for (x, _, _) in self.samples])
        gap = np.array([x.gap for (x, _, _) in self.samples])
        a = np.array([a for (_, a, _) in self.samples])
        return v, dv, gap, a

    def __len__(self) -> int:
        return len(self.samples)


@dataclass(frozen=True)
class FitResult:
    theta: DriverParams
    cost: float
    mse: float
    trial_id: str
    scenario: str


def cost(theta: DriverParams, trial: TrialRecord, model: str, sigma_eps: float = 1.0) -> float:
    """Squared-residual objective; its minimizer maximizes the Gaussian
    log-likelihood of the recorded accelerations."""
    v, dv, gap, a = trial.arrays()
    residuals = a - predict_accel(model, theta, v, dv, gap)
    return float(np.sum(residuals**2) / (2.0 * sigma_eps**2))


def trial_mse(theta: DriverParams, trial: TrialRecord, model: str) -> float:
    v, dv, gap, a = trial.arrays()
    residuals = a - predict_accel(model, theta, v, dv, gap)
    return float(np.mean(residuals**2))


# Box constraints keep the simplex search inside each model's valid region.
FIT_BOUNDS = {
    MODEL_IDM: (
        (0.0, 10.0),      # T
        (1e-3, 10.0),     # a_max
        (0.1, 60.0),      # v0
        (1e-3, 20.0),     # delta
        (0.0, 30.0),      # d0
        (1e-3, 200.0),    # b
    ),
    MODEL_VDM: (
        (-50.0, 50.0),    # V1
        (-50.0, 50.0),    # V2
        (-10.0, 10.0),    # C1
        (-50.0, 50.0),    # C2
        (-10.0, 10.0),    # lam
        (0.0, 10.0),      # kappa
    ),
}


@dataclass(frozen=True)
class FitConfig:
    n_starts: int = 16
    sigma_eps: float = 1.0
    seed: int = 0
    max_iter: int = 4000
    xatol: float = 1e-6
    fatol: float = 1e-9
    bounds: tuple[tuple[float, float], ...] | None = None  # default: FIT_BOUNDS[model]


def _start_points(model: str, scenario: str, cfg: FitConfig, bounds) -> np.ndarray:
    """Reference-distribution mean plus seeded Gaussian perturbations,
    clipped to the search box."""
    ref = REFERENCE_DISTRIBUTIONS[(model, scenario)]
    mean = np.asarray(ref.mean)
    sigma = np.sqrt(np.asarray(ref.variance))
    rng = np.random.default_rng(cfg.seed)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    starts = [mean]
    for _ in range(cfg.n_starts - 1):
        starts.append(mean + sigma * rng.standard_normal(6))
    return np.clip(np.array(starts), lo, hi)


def fit_mle(trial: TrialRecord, model: str, cfg: FitConfig = FitConfig()) -> FitResult:
    """Best local optimum of the likelihood cost over multiple starts.

    Raises :class:`CalibrationError` if no start converges; the exception
    carries the best partial result in ``.partial``.
    """
    bounds = cfg.bounds if cfg.bounds is not None else FIT_BOUNDS[model]
    v, dv, gap, a = trial.arrays()
    inv_two_sigma = 1.0 / (2.0 * cfg.sigma_eps**2)

    def objective(theta: np.ndarray) -> float:
        pred = predict_accel(model, params_from_array(model, theta), v, dv, gap)
        r = a - pred
        return float(np.dot(r, r)) * inv_two_sigma

    best = None
    best_converged = False
    for x0 in _start_points(model, trial.scenario, cfg, bounds):
        res = minimize(
            objective,
            x0,
            method="Nelder-Mead",
            bounds=bounds,
            options={
                "maxiter": cfg.max_iter,
                "xatol": cfg.xatol,
                "fatol": cfg.fatol,
                "adaptive": True,
            },
        )
        if best is None or res.fun < best.fun:
            best = res
        best_converged = best_converged or bool(res.success)
    theta = params_from_array(model, best.x)
    result = FitResult(
        theta=theta,
        cost=float(best.fun),
        mse=trial_mse(theta, trial, model),
        trial_id=trial.trial_id,
        scenario=trial.scenario,
    )
    if not best_converged:
        err = CalibrationError(
            f"trial {trial.trial_id}: no start converged within {cfg.max_iter} iterations"
        )
        err.partial = result
        raise err
    return result


def filter_outliers(costs) -> list[int]:
    """Indices of costs at or below Q3 + 1.5*IQR.

    Quartiles use linear interpolation between order statistics (numpy's
    default percentile rule). Fewer than 4 values cannot support quartile
    estimates, so everything is kept with a warning.
    """
    costs = list(costs)
    if len(costs) < 4:
        warnings.warn(
            f"only {len(costs)} costs; outlier filter needs >= 4, keeping all",
            stacklevel=2,
        )
        return list(range(len(costs)))
    q1, q3 = np.percentile(costs, [25.0, 75.0])
    limit = q3 + 1.5 * (q3 - q1)
    return [i for i, c in enumerate(costs) if c <= limit]


def fit_gaussian(fits) -> ParamDistribution:
    """Componentwise sample mean / unbiased variance of surviving fits.

    Cross-covariances are deliberately ignored: parameters are modeled as
    independent.
    """
    fits = list(fits)
    if len(fits) < 2:
        raise CalibrationError(f"need at least 2 fits to estimate a distribution, got {len(fits)}")
    models = {type(f.theta) for f in fits}
    if len(models) != 1:
        raise CalibrationError("fits mix parameter types")
    scenarios = {f.scenario for f in fits}
    if len(scenarios) != 1:
        raise CalibrationError(f"fits mix scenarios: {sorted(scenarios)}")
    thetas = np.array([f.theta.as_array() for f in fits])
    model = MODEL_IDM if fits[0].theta.__class__.__name__ == "IdmParams" else MODEL_VDM
    return ParamDistribution(
        model=model,
        scenario=fits[0].scenario,
        mean=tuple(float(m) for m in thetas.mean(axis=0)),
        variance=tuple(float(v) for v in thetas.var(axis=0, ddof=1)),
    )


def evaluate_mse(theta: DriverParams, trials, model: str) -> tuple[float, float]:
    """(average, max) per-trial MSE of predicted vs recorded acceleration."""
    trials = list(trials)
    if not trials:
        raise CalibrationError("no trials to evaluate")
    mses = [trial_mse(theta, trial, model) for trial in trials]
    return float(np.mean(mses)), float(np.max(mses))


def split_trial(trial: TrialRecord, suffix: str = "") -> tuple[TrialRecord, TrialRecord]:
    """Interleaved train/held-out split (even-index vs odd-index samples),
    keeping both halves on the trial's full excitation range."""
    train = trial.samples[0::2]
    test = trial.samples[1::2]
    return (
        TrialRecord(trial.trial_id + suffix, trial.scenario, train),
        TrialRecord(trial.trial_id + suffix, trial.scenario, test),
    )


# ---------------------------------------------------------------------------
# Trial CSV I/O
# ---------------------------------------------------------------------------

def load_trials(path, min_samples: int = MIN_TRIAL_SAMPLES) -> list[TrialRecord]:
    """Parse the trial CSV (`trial_id,scenario,t,v_back,dv,gap,a`).

    Rows belonging to one trial must be contiguous with strictly
    increasing timestamps. A header-only file yields an empty list.
    """
    groups: dict[str, list] = {}
    scenarios: dict[str, str] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return []
        if [h.strip() for h in header] != TRIAL_CSV_HEADER:
            raise CalibrationError(
                f"{path}:1: expected header {','.join(TRIAL_CSV_HEADER)!r}, got {','.join(header)!r}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(TRIAL_CSV_HEADER):
                raise CalibrationError(f"{path}:{lineno}: expected {len(TRIAL_CSV_HEADER)} fields")
            trial_id, scenario = row[0], row[1]
            try:
                t, v_back, dv, gap, a = (float(x) for x in row[2:])
            except ValueError as exc:
                raise CalibrationError(f"{path}:{lineno}: bad number: {exc}") from exc
            try:
                sample = (CarFollowInput(v_back, dv, gap), a, t)
            except ValueError as exc:
                raise CalibrationError(f"{path}:{lineno}: {exc}") from exc
            if trial_id in scenarios and scenarios[trial_id] != scenario:
                raise CalibrationError(
                    f"{path}:{lineno}: trial {trial_id!r} changes scenario mid-file"
                )
            scenarios[trial_id] = scenario
            groups.setdefault(trial_id, []).append(sample)

    trials = []
    for trial_id, samples in groups.items():
        if len(samples) < min_samples:
            raise CalibrationError(
                f"{path}: trial {trial_id!r} has {len(samples)} samples, need >= {min_samples}"
            )
        try:
            trials.append(TrialRecord(trial_id, scenarios[trial_id], tuple(samples)))
        except CalibrationError as exc:
            raise CalibrationError(f"{path}: {exc}") from exc
    return trials


def save_trials(trials, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRIAL_CSV_HEADER)
        for trial in trials:
            for x, a, t in trial.samples:
                writer.writerow(
                    [trial.trial_id, trial.scenario]
                    + [repr(float(v)) for v in (t, x.v_back, x.dv, x.gap, a)]
                )


# ---------------------------------------------------------------------------
# Synthetic trial generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    n_samples: int = 50
    dt: float = 0.1
    noise_sigma: float = 0.05
    lead_length: float = 4.5
    v_lead_base: float = 12.0
    v_lead_amp: tuple[float, float] = (1.5, 0.8)
    v_lead_freq: tuple[float, float] = (0.9, 2.3)
    gap0_range: tuple[float, float] = (12.0, 30.0)
    v_back0_range: tuple[float, float] = (8.0, 15.0)
    min_gap: float = 0.5
    max_abs_accel: float = 8.0   # reject physically implausible runs
    max_regen: int = 40


def _lead_speed_profile(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """Smooth two-tone speed profile so the follower sees varying gaps and
    closing speeds (enough excitation to identify parameters)."""
    t = np.arange(cfg.n_samples + 1) * cfg.dt
    phase1, phase2 = rng.uniform(0.0, 2.0 * np.pi, size=2)
    v = (
        cfg.v_lead_base
        + cfg.v_lead_amp[0] * np.sin(cfg.v_lead_freq[0] * t + phase1)
        + cfg.v_lead_amp[1] * np.sin(cfg.v_lead_freq[1] * t + phase2)
    )
    return np.maximum(v, 0.0)


def generate_trial(
    trial_id: str,
    scenario: str,
    model: str,
    theta: DriverParams,
    rng: np.random.Generator | int,
    cfg: SynthConfig = SynthConfig(),
) -> TrialRecord:
    """Simulate a follower driven by ``model(theta)`` behind a smoothly
    varying leader; recorded accelerations carry the configured Gaussian
    noise (the trajectory integrates the noisy command, with no clamping,
    so recorded pairs satisfy the additive-noise model exactly).

    Runs whose bumper gap collapses below ``cfg.min_gap`` or whose
    commanded acceleration leaves ``[-max_abs_accel, max_abs_accel]`` are
    discarded and redrawn deterministically from the same stream.
    """
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    for _ in range(cfg.max_regen):
        v_lead = _lead_speed_profile(cfg, rng)
        gap0 = float(rng.uniform(*cfg.gap0_range))
        v_back = float(rng.uniform(*cfg.v_back0_range))
        noise = rng.normal(0.0, cfg.noise_sigma, size=cfg.n_samples)
        s_back = 0.0
        s_lead = gap0 - cfg.lead_length
        samples = []
        ok = True
        for i in range(cfg.n_samples):
            gap = s_lead + cfg.lead_length - s_back
            if gap <= cfg.min_gap:
                ok = False
                break
            x = CarFollowInput(v_back, v_back - float(v_lead[i]), gap)
            a_model = float(predict_accel(model, theta, x.v_back, x.dv, x.gap))
            if abs(a_model) > cfg.max_abs_accel:
                ok = False
                break
            a = a_model + float(noise[i])
            samples.append((x, a, i * cfg.dt))
            # follower integrates the noisy command; speed never reverses
            v_next = v_back + a * cfg.dt
            if v_next < 0.0:
                t_stop = -v_back / a
                s_back += v_back * t_stop + 0.5 * a * t_stop * t_stop
                v_back = 0.0
            else:
                s_back += v_back * cfg.dt + 0.5 * a * cfg.dt * cfg.dt
                v_back = v_next
            s_lead += (float(v_lead[i]) + float(v_lead[i + 1])) / 2.0 * cfg.dt
        if ok:
            return TrialRecord(trial_id, scenario, tuple(samples))
    raise CalibrationError(
        f"could not generate a plausible trial for {trial_id!r} in {cfg.max_regen} attempts"
    )


def generate_corpus(
    n_successful: int,
    n_unsuccessful: int,
    model: str,
    seed: int,
    cfg: SynthConfig = SynthConfig(),
) -> list[TrialRecord]:
    """Synthetic corpus with per-trial parameters drawn from the bundled
    reference distributions of the matching scenario."""
    master = np.random.SeedSequence(seed)
    counts = {SCENARIO_SUCCESSFUL: n_successful, SCENARIO_UNSUCCESSFUL: n_unsuccessful}
    trials = []
    children = master.spawn(n_successful + n_unsuccessful)
    idx = 0
    for scenario, n in counts.items():
        dist = REFERENCE_DISTRIBUTIONS[(model, scenario)]
        for i in range(n):
            rng = np.random.default_rng(children[idx])
            trial = None
            for _ in range(cfg.max_regen):
                theta = sample_params(dist, rng)
                try:
                    trial = generate_trial(
                        f"{scenario[:7]}_{i:03d}", scenario, model, theta, rng, cfg
                    )
                    break
                except CalibrationError:
                    continue   # implausible parameter draw; try another
            if trial is None:
                raise CalibrationError(
                    f"no plausible parameter draw for {scenario} trial {i}"
                )
            trials.append(trial)
            idx += 1
    return trials
