"""Discrete diffusion noise schedules.

A schedule is defined by the per-step retention factors ``alphas`` (alpha_t,
t = 1..T); the cumulative products ``alpha_bars`` follow with the fixed
convention alpha_bar_0 = 1, so a step landing on t = 0 is in data space.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

SCHEDULE_KINDS = ("explicit", "linear-beta")


class ScheduleError(ValueError):
    """Invalid schedule parameters or timestep arguments."""


@dataclass(frozen=True)
class NoiseSchedule:
    """An immutable discretized diffusion process over ``num_steps`` steps.

    ``alpha_bar(t)`` is valid for t in 0..T; ``alphas[t - 1]`` is alpha_t.
    """

    alphas: np.ndarray
    kind: str = "explicit"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        alphas = np.array(self.alphas, dtype=np.float64).reshape(-1)
        if alphas.size == 0:
            raise ScheduleError("num_steps must be >= 1")
        if not np.all(np.isfinite(alphas)) or np.any(alphas <= 0.0) or np.any(alphas > 1.0):
            raise ScheduleError("alphas must lie in (0, 1]")
        alphas.setflags(write=False)
        # cumulative product kept sequential so alpha_bar[t] == alpha_bar[t-1] * alpha_t bit-for-bit
        bars = np.empty(alphas.size + 1)
        bars[0] = 1.0
        for i, a in enumerate(alphas):
            bars[i + 1] = bars[i] * a
        bars.setflags(write=False)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "_bars", bars)
        object.__setattr__(self, "params", dict(self.params))

    @property
    def num_steps(self) -> int:
        return int(self.alphas.size)

    @property
    def alpha_bars(self) -> np.ndarray:
        """alpha_bar_1..alpha_bar_T (length T)."""
        return self._bars[1:]

    def alpha_bar(self, t: int) -> float:
        if not 0 <= t <= self.num_steps:
            raise ScheduleError(f"timestep {t} outside 0..{self.num_steps}")
        return float(self._bars[t])

    def alpha(self, t: int) -> float:
        self._check_step(t)
        return float(self.alphas[t - 1])

    def _check_step(self, t: int) -> None:
        if not 1 <= t <= self.num_steps:
            raise ScheduleError(f"timestep {t} outside 1..{self.num_steps}")

    # -- serialization -------------------------------------------------
    def to_record(self) -> dict:
        rec = {"kind": self.kind, "num_steps": self.num_steps}
        if self.kind == "explicit":
            rec["alphas"] = [float(a) for a in self.alphas]
        else:
            rec["params"] = dict(self.params)
        return rec

    def to_json(self) -> str:
        # repr() of a float round-trips exactly (17 significant digits at most)
        return json.dumps(self.to_record(), indent=2)

    @classmethod
    def from_record(cls, rec: dict) -> "NoiseSchedule":
        kind = rec.get("kind")
        if kind == "explicit":
            alphas = rec.get("alphas")
            if alphas is None:
                raise ScheduleError("explicit schedule requires 'alphas'")
            if "num_steps" in rec and int(rec["num_steps"]) != len(alphas):
                raise ScheduleError("num_steps does not match len(alphas)")
            return build_schedule("explicit", len(alphas), alphas=alphas)
        return build_schedule(kind, rec.get("num_steps", 0), **rec.get("params", {}))

    @classmethod
    def from_json(cls, text: str) -> "NoiseSchedule":
        return cls.from_record(json.loads(text))


def build_schedule(kind: str, num_steps: int, **params) -> NoiseSchedule:
    """Construct a schedule of the given family.

    ``explicit`` takes ``alphas``.  ``linear-beta`` takes ``beta_start``,
    ``beta_end`` and ``base_steps`` (defaults 1e-4, 0.02, 1000): betas are
    linear over the base process, and the ``num_steps`` inference steps use
    base timesteps 1, 1 + s, 1 + 2s, ... with stride s = base_steps // num_steps,
    so the final backward step lands on base timestep 1.
    """
    if kind not in SCHEDULE_KINDS:
        raise ScheduleError(f"unknown schedule kind {kind!r}; expected one of {SCHEDULE_KINDS}")
    num_steps = int(num_steps)
    if num_steps < 1:
        raise ScheduleError("num_steps must be >= 1")

    if kind == "explicit":
        alphas = params.get("alphas")
        if alphas is None or len(alphas) != num_steps:
            raise ScheduleError("explicit schedule requires len(alphas) == num_steps")
        return NoiseSchedule(np.asarray(alphas, dtype=np.float64), kind="explicit")

    beta_start = float(params.get("beta_start", 1e-4))
    beta_end = float(params.get("beta_end", 0.02))
    base_steps = int(params.get("base_steps", 1000))
    unknown = set(params) - {"beta_start", "beta_end", "base_steps"}
    if unknown:
        raise ScheduleError(f"unknown linear-beta parameters: {sorted(unknown)}")
    if not (0.0 <= beta_start <= beta_end < 1.0):
        raise ScheduleError("linear-beta requires 0 <= beta_start <= beta_end < 1")
    if base_steps < num_steps:
        raise ScheduleError("base_steps must be >= num_steps")

    betas = np.linspace(beta_start, beta_end, base_steps, dtype=np.float64)
    base_bars = np.cumprod(1.0 - betas)
    stride = base_steps // num_steps
    idx = np.arange(num_steps) * stride  # zero-based base index of timestep 1 + k*stride
    bars = base_bars[idx]
    prev = np.concatenate([[1.0], bars[:-1]])
    alphas = bars / prev
    return NoiseSchedule(
        alphas,
        kind="linear-beta",
        params={"beta_start": beta_start, "beta_end": beta_end, "base_steps": base_steps},
    )


def sigma(schedule: NoiseSchedule, t: int, eta):
    """Stochastic-term std of the generalized DDIM step at timestep ``t``.

    Accepts a scalar or an array of per-element eta values.  Raises
    ScheduleError if any eta exceeds ``eta_max(schedule, t)``.
    """
    schedule._check_step(t)
    eta_arr = np.asarray(eta, dtype=np.float64)
    if np.any(eta_arr < 0.0):
        raise ScheduleError("eta must be >= 0")
    bound = eta_max(schedule, t)
    if np.any(eta_arr > bound * (1.0 + 1e-12)):
        raise ScheduleError(
            f"eta={float(np.max(eta_arr)):.6g} exceeds admissible bound {bound:.6g} at t={t}"
        )
    out = eta_arr * sigma_unit(schedule, t)
    if np.ndim(eta) == 0:
        return float(out)
    return out


def sigma_unit(schedule: NoiseSchedule, t: int) -> float:
    """sigma_t at eta = 1, with the degenerate 0/0 cases mapped to 0."""
    ab_t = schedule.alpha_bar(t)
    ab_prev = schedule.alpha_bar(t - 1)
    one_m_t = 1.0 - ab_t
    one_m_prev = 1.0 - ab_prev
    if one_m_t <= 0.0 or one_m_prev <= 0.0:
        return 0.0
    ratio = max(1.0 - ab_t / ab_prev, 0.0)
    return math.sqrt(one_m_prev / one_m_t) * math.sqrt(ratio)


def eta_max(schedule: NoiseSchedule, t: int) -> float:
    """Largest admissible eta at timestep ``t`` (keeps 1 - abar_{t-1} - sigma^2 >= 0).

    Returns ``math.inf`` where sigma_t vanishes for every eta (alpha_t = 1, or
    alpha_bar_{t-1} = 1 at t = 1).
    """
    schedule._check_step(t)
    ab_t = schedule.alpha_bar(t)
    ab_prev = schedule.alpha_bar(t - 1)
    denom = 1.0 - ab_t / ab_prev
    if denom <= 0.0 or ab_prev >= 1.0:
        return math.inf
    return math.sqrt(1.0 - ab_t) / math.sqrt(denom)


def ddpm_posterior_std(schedule: NoiseSchedule, t: int) -> float:
    """sqrt(beta_tilde_t) = sqrt((1 - abar_{t-1}) / (1 - abar_t) * (1 - alpha_t))."""
    schedule._check_step(t)
    ab_t = schedule.alpha_bar(t)
    ab_prev = schedule.alpha_bar(t - 1)
    if 1.0 - ab_t <= 0.0:
        return 0.0
    return math.sqrt((1.0 - ab_prev) / (1.0 - ab_t) * (1.0 - schedule.alpha(t)))
