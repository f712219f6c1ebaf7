"""Selected-noise eta inversion and baseline inversion strategies.

All strategies share one forward DDIM inversion of the source and one
backward loop that advances a source branch and a target branch together.
They differ in how the source branch is kept on the forward path and which
noise the target branch receives:

* ``eta_inversion``: per step, draw ``n`` standard normal candidates, keep the
  one whose stochastic source step lands closest to the stored forward
  latent, then replace the source latent by the forward latent.  The target
  step reuses the selected noise.
* ``baseline_ddim_inversion``: deterministic backward passes, no replacement.
* ``baseline_latent_replacement``: deterministic backward passes with
  replacement.
* ``baseline_compensated_noise``: solve the step for the noise that lands
  exactly on the forward latent and feed that noise to the target branch.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .eta import EtaFamily, RegionMask, SaliencyContext, constant, eta_field, saliency_from_provider
from .predictor import GuidanceConfig, PredictorSpec, difference_saliency, predict_eps_guided
from .sampler import Trajectory, _coefficients, deterministic_part, run_forward_inversion
from .schedule import NoiseSchedule, sigma


class InversionError(ValueError):
    pass


@dataclass(frozen=True)
class MaskSettings:
    enabled: bool = False
    provider: str = "forward_mean"
    threshold: float = 0.2
    mode: str = "binary"
    file: Optional[str] = None
    synthetic: Optional[np.ndarray] = None

    def to_record(self) -> dict:
        rec = {"enabled": self.enabled, "provider": self.provider, "threshold": self.threshold, "mode": self.mode}
        if self.file is not None:
            rec["file"] = self.file
        if self.synthetic is not None:
            rec["synthetic_sha"] = hashlib.sha256(np.ascontiguousarray(self.synthetic).tobytes()).hexdigest()[:16]
        return rec


@dataclass(frozen=True)
class EditConfig:
    source: str = "source"
    target: str = "target"
    null_condition: str = "null"
    w_forward: float = 1.0
    w_backward: float = 7.5
    eta: EtaFamily = field(default_factory=lambda: constant(0.0))
    mask: MaskSettings = field(default_factory=MaskSettings)
    sample_count: int = 10
    seed: int = 0
    chunk: int = 256

    def __post_init__(self):
        if self.sample_count < 1:
            raise InversionError("sample_count must be >= 1")

    def to_record(self) -> dict:
        return {
            "source": self.source, "target": self.target, "null_condition": self.null_condition,
            "w_forward": self.w_forward, "w_backward": self.w_backward, "eta": self.eta.to_record(),
            "mask": self.mask.to_record(), "sample_count": self.sample_count, "seed": self.seed,
        }

    def config_hash(self, extra: Optional[dict] = None) -> str:
        payload = dict(self.to_record())
        payload.pop("seed")
        if extra:
            payload["extra"] = extra
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class InversionRecord:
    method: str
    forward: Trajectory
    backward_source: Trajectory
    backward_target: Trajectory
    chosen_noises: dict
    noise_masks: dict
    gaps: dict
    config: dict
    noise_kind: Optional[str] = None

    @property
    def x0(self) -> np.ndarray:
        return self.forward.latents[0]

    @property
    def reconstruction(self) -> np.ndarray:
        return self.backward_source.final

    @property
    def edited(self) -> np.ndarray:
        return self.backward_target.final

    def reconstruction_error(self) -> float:
        return float(np.max(np.abs(self.reconstruction - self.x0)))

    def reconstruction_mse(self) -> float:
        return float(np.mean((self.reconstruction - self.x0) ** 2))

    def branch_distances(self) -> dict:
        """||x'_s(t) - x'_t(t)||_2 at every backward timestep."""
        return {
            t: float(np.linalg.norm(xs - xt))
            for t, xs, xt in zip(self.backward_source.timesteps, self.backward_source.latents,
                                 self.backward_target.latents)
        }

    def pooled_noise(self) -> np.ndarray:
        """Injected or recovered noise entries where sigma > 0, pooled over steps."""
        parts = [self.chosen_noises[t][self.noise_masks[t]] for t in sorted(self.chosen_noises)]
        return np.concatenate(parts) if parts else np.empty(0)

    def summary_row(self, seed: Optional[int] = None, config_hash: Optional[str] = None) -> dict:
        noise = self.pooled_noise()
        dists = self.branch_distances()
        return {
            "seed": self.config.get("seed") if seed is None else seed,
            "config_hash": config_hash or "",
            "method": self.method,
            "reconstruction_error": self.reconstruction_error(),
            "reconstruction_mse": self.reconstruction_mse(),
            "mean_branch_distance": float(np.mean([dists[t] for t in dists if t > 0])) if len(dists) > 1 else 0.0,
            "final_branch_distance": dists[0],
            "mean_gap": float(np.mean(list(self.gaps.values()))) if self.gaps else 0.0,
            "noise_count": int(noise.size),
            "noise_mean": float(noise.mean()) if noise.size else 0.0,
            "noise_std": float(noise.std()) if noise.size else 0.0,
        }


SUMMARY_FIELDS = (
    "seed", "config_hash", "method", "reconstruction_error", "reconstruction_mse", "mean_branch_distance",
    "final_branch_distance", "mean_gap", "noise_count", "noise_mean", "noise_std",
)


def write_rows_csv(rows, path, fields=None) -> None:
    """Comma-separated, header row, LF line endings, floats via repr."""
    rows = list(rows)
    fields = list(fields or (rows[0].keys() if rows else SUMMARY_FIELDS))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def select_noise(det, target, sig, n: int, rng: np.random.Generator, chunk: int = 256):
    """Draw ``n`` standard normal fields and return the one minimizing
    ||target - (det + sig * eps)||_2, plus that gap.

    Candidates are drawn in chunks from one generator, so the stream (and the
    winner) does not depend on ``chunk``.  Ties keep the earliest draw.
    """
    if n < 1:
        raise InversionError("sample_count must be >= 1")
    shape = np.shape(det)
    resid = np.asarray(target, dtype=np.float64) - det
    best, best_eps = math.inf, None
    done = 0
    while done < n:
        m = min(chunk, n - done)
        cands = rng.standard_normal((m,) + shape)
        g2 = kernels.candidate_sq_gaps(resid, sig, cands)
        k = int(np.argmin(g2))
        if g2[k] < best:
            best, best_eps = float(g2[k]), cands[k].copy()
        done += m
    return best_eps, math.sqrt(best)


def resolve_mask(schedule: NoiseSchedule, predictor: PredictorSpec, forward: Trajectory,
                 cfg: EditConfig) -> Optional[RegionMask]:
    """Build the single region mask shared by both backward branches."""
    ms = cfg.mask
    if not ms.enabled:
        return None
    ctx = SaliencyContext(
        callback=difference_saliency(predictor, schedule, cfg.source, cfg.target),
        condition=cfg.target,
        forward=forward.pairs(),
        mask_file=ms.file,
        synthetic=ms.synthetic,
    )
    mask = saliency_from_provider(ms.provider, ctx, threshold=ms.threshold, mode=ms.mode)
    if mask.values.shape != predictor.shape:
        raise InversionError(f"mask shape {mask.values.shape} does not match latent shape {predictor.shape}")
    return mask


def _run(method: str, schedule: NoiseSchedule, predictor: PredictorSpec, x_0, cfg: EditConfig,
         eta: EtaFamily, use_mask: bool, strategy: str, replace: bool) -> InversionRecord:
    T = schedule.num_steps
    shape = predictor.shape
    forward = run_forward_inversion(
        schedule, predictor, x_0, cfg.source, GuidanceConfig(cfg.w_forward, cfg.null_condition)
    )
    mask = resolve_mask(schedule, predictor, forward, cfg) if use_mask else None
    guidance = GuidanceConfig(cfg.w_backward, cfg.null_condition)
    rng = np.random.default_rng(cfg.seed)

    xs = xt = forward.final
    src_lat, tgt_lat = [xs], [xt]
    noises, noise_masks, gaps = {}, {}, {}
    for t in range(T, 0, -1):
        ef = eta_field(eta, mask, t, T, shape)
        sig = np.asarray(sigma(schedule, t, ef), dtype=np.float64)
        active = sig > 0.0
        target_latent = forward.at(t - 1)

        eps_s = predict_eps_guided(predictor, schedule, xs, t, cfg.source, guidance)
        det_s = deterministic_part(schedule, xs, eps_s, t, sig)
        noise = None
        if strategy == "select" and active.any():
            noise, gaps[t] = select_noise(det_s, target_latent, sig, cfg.sample_count, rng, cfg.chunk)
        elif strategy == "compensate" and t > 1:
            if not np.any(ef > 0.0) or np.any(sig[ef > 0.0] <= 0.0):
                raise InversionError(f"sigma vanishes at compensated step t={t}")
            noise = np.zeros(shape)
            noise[active] = (target_latent - det_s)[active] / sig[active]
            gaps[t] = float(np.linalg.norm(target_latent - (det_s + sig * noise)))
        else:
            gaps[t] = float(np.linalg.norm(target_latent - det_s))
        if noise is not None:
            noises[t] = noise
            noise_masks[t] = active.copy()

        xs = target_latent if replace else det_s
        eps_t = predict_eps_guided(predictor, schedule, xt, t, cfg.target, guidance)
        a, c_prev, b_t = _coefficients(schedule, t)
        xt = kernels.ddim_update(xt, eps_t, sig, noise if active.any() else None, a, c_prev, b_t)
        src_lat.append(xs)
        tgt_lat.append(xt)

    steps = list(range(T, -1, -1))
    snapshot = cfg.to_record()
    snapshot["eta"] = eta.to_record()
    snapshot["method"] = method
    return InversionRecord(
        method=method,
        forward=forward,
        backward_source=Trajectory(steps, src_lat, "backward", cfg.source, cfg.w_backward, cfg.seed),
        backward_target=Trajectory(steps, tgt_lat, "backward", cfg.target, cfg.w_backward, cfg.seed),
        chosen_noises=noises,
        noise_masks=noise_masks,
        gaps=gaps,
        config=snapshot,
        noise_kind={"select": "selected", "compensate": "compensated"}.get(strategy),
    )


def eta_inversion(schedule: NoiseSchedule, predictor: PredictorSpec, x_0_source, cfg: EditConfig) -> InversionRecord:
    return _run("eta_inversion", schedule, predictor, x_0_source, cfg, cfg.eta, True, "select", True)


def baseline_ddim_inversion(schedule: NoiseSchedule, predictor: PredictorSpec, x_0, cfg: EditConfig) -> InversionRecord:
    return _run("ddim_inversion", schedule, predictor, x_0, cfg, constant(0.0), False, "none", False)


def baseline_latent_replacement(schedule: NoiseSchedule, predictor: PredictorSpec, x_0,
                                cfg: EditConfig) -> InversionRecord:
    return _run("latent_replacement", schedule, predictor, x_0, cfg, constant(0.0), False, "none", True)


def baseline_compensated_noise(schedule: NoiseSchedule, predictor: PredictorSpec, x_0, cfg: EditConfig,
                               eta: Optional[EtaFamily] = None, use_mask: bool = False) -> InversionRecord:
    """Recover eps_add = (x*_{t-1} - deterministic part) / sigma at every t >= 2.

    ``eta`` defaults to the constant 1 (DDPM-style); t = 1 is replaced directly
    since sigma_1 = 0.
    """
    eta = eta if eta is not None else constant(1.0)
    return _run("compensated_noise", schedule, predictor, x_0, cfg, eta, use_mask, "compensate", True)


METHODS = {
    "eta_inversion": eta_inversion,
    "ddim_inversion": baseline_ddim_inversion,
    "latent_replacement": baseline_latent_replacement,
    "compensated_noise": baseline_compensated_noise,
}
