"""Generalized DDIM sampling and DDIM inversion with per-element sigma fields."""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .eta import EtaFamily, RegionMask, eta_field
from .predictor import GuidanceConfig, PredictorSpec, predict_eps_guided
from .schedule import NoiseSchedule, ScheduleError, sigma

_BLOB_MAGIC = b"ETRJ"


class SamplerError(ValueError):
    pass


@dataclass
class Trajectory:
    """Latents ordered along the direction of travel.

    Forward trajectories run t = 0..T, backward ones t = T..0.
    """

    timesteps: list
    latents: list
    direction: str
    condition: Optional[str] = None
    guidance: float = 1.0
    seed: Optional[int] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.direction not in ("forward", "backward"):
            raise SamplerError(f"bad direction {self.direction!r}")
        if len(self.timesteps) != len(self.latents):
            raise SamplerError("timesteps and latents differ in length")
        steps = np.diff(self.timesteps)
        if steps.size and not (np.all(steps > 0) if self.direction == "forward" else np.all(steps < 0)):
            raise SamplerError("timesteps are not strictly monotone in the trajectory direction")

    def at(self, t: int) -> np.ndarray:
        return self.latents[self.timesteps.index(t)]

    @property
    def final(self) -> np.ndarray:
        return self.latents[-1]

    def pairs(self):
        return list(zip(self.timesteps, self.latents))

    # -- dumps ---------------------------------------------------------
    def to_blob(self) -> bytes:
        """b"ETRJ", uint32 header length, JSON header, float64 little-endian latents."""
        shape = list(np.shape(self.latents[0]))
        header = {
            "T": max(self.timesteps), "d": int(np.prod(shape)), "shape": shape,
            "direction": self.direction, "seed": self.seed, "timesteps": list(map(int, self.timesteps)),
            "condition": self.condition, "guidance": self.guidance,
        }
        hb = json.dumps(header).encode()
        body = np.stack(self.latents).astype("<f8").tobytes()
        return _BLOB_MAGIC + struct.pack("<I", len(hb)) + hb + body

    @classmethod
    def from_blob(cls, data: bytes) -> "Trajectory":
        if data[:4] != _BLOB_MAGIC:
            raise SamplerError("not a trajectory blob")
        (n,) = struct.unpack("<I", data[4:8])
        header = json.loads(data[8 : 8 + n])
        arr = np.frombuffer(data[8 + n :], dtype="<f8").astype(np.float64)
        arr = arr.reshape([len(header["timesteps"])] + header["shape"])
        return cls(
            timesteps=header["timesteps"], latents=list(arr), direction=header["direction"],
            condition=header["condition"], guidance=header["guidance"], seed=header["seed"],
        )

    def to_columnar(self) -> str:
        """CSV rows ``timestep,element,value`` (element = flat index)."""
        buf = io.StringIO()
        buf.write("timestep,element,value\n")
        for t, x in zip(self.timesteps, self.latents):
            for i, v in enumerate(np.ravel(x)):
                buf.write(f"{t},{i},{float(v)!r}\n")
        return buf.getvalue()


def _coefficients(schedule: NoiseSchedule, t: int):
    a = math.sqrt(1.0 / schedule.alpha(t))
    c_prev = 1.0 - schedule.alpha_bar(t - 1)
    b_t = math.sqrt(1.0 - schedule.alpha_bar(t))
    return a, c_prev, b_t


def ddim_step(schedule: NoiseSchedule, x_t, eps_t, t: int, eta_field=0.0, noise=None) -> np.ndarray:
    """One generalized DDIM step x_t -> x_{t-1}.

    x_{t-1} = sqrt(1/alpha_t) (x_t - sqrt(1 - abar_t) eps)
              + sqrt(1 - abar_{t-1} - sigma^2) eps + sigma * noise,

    with sigma computed elementwise from ``eta_field``.  ``noise`` is required
    wherever sigma > 0 and ignored otherwise.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    sig = np.asarray(sigma(schedule, t, eta_field), dtype=np.float64)
    stochastic = bool(np.any(sig > 0.0))
    if stochastic:
        if noise is None:
            raise SamplerError(f"noise required at t={t}: sigma > 0")
        noise = np.asarray(noise, dtype=np.float64)
        if noise.shape != x_t.shape:
            raise SamplerError(f"noise shape {noise.shape} != latent shape {x_t.shape}")
    a, c_prev, b_t = _coefficients(schedule, t)
    return kernels.ddim_update(x_t, eps_t, sig, noise if stochastic else None, a, c_prev, b_t)


def deterministic_part(schedule: NoiseSchedule, x_t, eps_t, t: int, sig) -> np.ndarray:
    """ddim_step without the ``sigma * noise`` term, for an already-computed sigma field."""
    a, c_prev, b_t = _coefficients(schedule, t)
    return kernels.ddim_update(np.asarray(x_t, dtype=np.float64), eps_t, sig, None, a, c_prev, b_t)


def ddim_invert_step(schedule: NoiseSchedule, x_t, eps_t, t: int) -> np.ndarray:
    """DDIM inversion x_t -> x_{t+1} reusing ``eps_t`` in place of eps_{t+1}."""
    if not 0 <= t <= schedule.num_steps - 1:
        raise ScheduleError(f"inversion step needs 0 <= t <= T-1, got t={t}")
    ab_t = schedule.alpha_bar(t)
    ab_n = schedule.alpha_bar(t + 1)
    a = math.sqrt(ab_n / ab_t)
    b = math.sqrt(ab_n) * (math.sqrt(1.0 / ab_n - 1.0) - math.sqrt(1.0 / ab_t - 1.0))
    return a * np.asarray(x_t, dtype=np.float64) + b * np.asarray(eps_t, dtype=np.float64)


def run_backward(schedule: NoiseSchedule, predictor: PredictorSpec, x_T, condition: str,
                 guidance: GuidanceConfig, eta: EtaFamily, mask: Optional[RegionMask] = None,
                 rng: Optional[np.random.Generator] = None, seed: Optional[int] = None) -> Trajectory:
    """Sample from t = T down to 0.

    ``x_T`` may carry leading batch dimensions; the eta field broadcasts over
    them.  The generator is consumed only at steps where some sigma > 0, one
    full standard-normal field per step in C order.
    """
    if rng is None:
        rng = np.random.default_rng(seed)
    T = schedule.num_steps
    x = np.asarray(x_T, dtype=np.float64)
    timesteps, latents = [T], [x]
    for t in range(T, 0, -1):
        eps = predict_eps_guided(predictor, schedule, x, t, condition, guidance)
        ef = eta_field(eta, mask, t, T, predictor.shape)
        sig = np.asarray(sigma(schedule, t, ef))
        noise = rng.standard_normal(x.shape) if np.any(sig > 0.0) else None
        a, c_prev, b_t = _coefficients(schedule, t)
        x = kernels.ddim_update(x, eps, sig, noise, a, c_prev, b_t)
        timesteps.append(t - 1)
        latents.append(x)
    return Trajectory(timesteps, latents, "backward", condition, guidance.scale, seed)


def run_forward_inversion(schedule: NoiseSchedule, predictor: PredictorSpec, x_0, condition: str,
                          guidance: Optional[GuidanceConfig] = None) -> Trajectory:
    """DDIM inversion from t = 0 to T, keeping every intermediate latent.

    The noise used for the step t -> t+1 is predicted at (x_t, t + 1).
    """
    guidance = guidance or GuidanceConfig(scale=1.0)
    x = np.asarray(x_0, dtype=np.float64)
    timesteps, latents = [0], [x]
    for t in range(schedule.num_steps):
        eps = predict_eps_guided(predictor, schedule, x, t + 1, condition, guidance)
        x = ddim_invert_step(schedule, x, eps, t)
        timesteps.append(t + 1)
        latents.append(x)
    return Trajectory(timesteps, latents, "forward", condition, guidance.scale)
