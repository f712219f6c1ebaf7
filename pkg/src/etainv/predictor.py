"""Analytic noise predictors with closed-form scores.

Every predictor is a score oracle for a conditional data distribution
q_0(. | c); the noise prediction follows from the score via
``eps = -sqrt(1 - abar) * score``.  Conditions are opaque string tags.

Inputs may carry leading batch dimensions in front of ``spec.shape``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .schedule import NoiseSchedule

PREDICTOR_KINDS = ("gaussian", "gaussian_mixture", "constant", "perturbed")


class PredictorError(ValueError):
    pass


@dataclass(frozen=True)
class GuidanceConfig:
    scale: float = 7.5
    null_condition: str = "null"


@dataclass(frozen=True)
class Bump:
    """Time-localized score error ``window(time) * (amplitude + slope * x)``.

    The box window has unit mass: 1/width on |time - center| <= width / 2.
    """

    center: float
    width: float
    amplitude: object = 1.0
    slope: float = 0.0

    def __post_init__(self):
        if not self.width > 0:
            raise PredictorError("perturbation width must be > 0")
        object.__setattr__(self, "amplitude", np.asarray(self.amplitude, dtype=np.float64))

    def window(self, time: float) -> float:
        return 1.0 / self.width if abs(time - self.center) <= 0.5 * self.width else 0.0


def _arr(v, shape) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64)
    return np.broadcast_to(a, shape).copy() if a.shape != tuple(shape) else a.copy()


@dataclass(frozen=True)
class PredictorSpec:
    """Parameters of an analytic predictor.

    ``conditions`` maps tag -> parameter dict:

    * gaussian: ``mean`` (broadcast to ``shape``), ``variance`` (scalar)
    * gaussian_mixture: ``weights`` (K,), ``means`` (K, *shape), ``variances`` (K,)
    * constant: ``eps`` (broadcast to ``shape``), state independent

    A perturbed spec wraps ``base`` and adds ``bumps`` to its score.
    """

    kind: str
    shape: tuple
    conditions: dict = field(default_factory=dict)
    base: Optional["PredictorSpec"] = None
    bumps: tuple = ()

    def __post_init__(self):
        if self.kind not in PREDICTOR_KINDS:
            raise PredictorError(f"unknown predictor kind {self.kind!r}")
        shape = tuple(int(s) for s in np.atleast_1d(self.shape))
        object.__setattr__(self, "shape", shape)
        if self.kind == "perturbed":
            if self.base is None or self.base.kind == "perturbed":
                raise PredictorError("perturbed spec needs a non-perturbed base")
            if self.base.shape != shape:
                raise PredictorError("perturbed spec shape must match its base")
            object.__setattr__(self, "bumps", tuple(self.bumps))
            return
        conds = {}
        for tag, params in self.conditions.items():
            conds[str(tag)] = self._validate(params)
        if not conds:
            raise PredictorError("predictor needs at least one condition")
        object.__setattr__(self, "conditions", conds)

    def _validate(self, params: dict) -> dict:
        shape = self.shape
        if self.kind == "gaussian":
            var = float(params["variance"])
            if not var > 0:
                raise PredictorError("variance must be > 0")
            return {"mean": _arr(params.get("mean", 0.0), shape), "variance": var}
        if self.kind == "constant":
            return {"eps": _arr(params["eps"], shape)}
        weights = np.asarray(params["weights"], dtype=np.float64)
        variances = np.asarray(params["variances"], dtype=np.float64)
        k = weights.size
        means = np.asarray(params["means"], dtype=np.float64)
        if means.ndim == 1:
            means = means.reshape((k,) + (1,) * len(shape))
        means = np.broadcast_to(means, (k,) + shape).copy()
        if np.any(weights <= 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise PredictorError("mixture weights must be positive and sum to 1")
        if variances.shape != (k,) or np.any(variances <= 0):
            raise PredictorError("mixture needs one positive variance per component")
        return {"weights": weights, "means": means, "variances": variances}

    @property
    def dim(self) -> int:
        return int(np.prod(self.shape))

    @property
    def tags(self) -> tuple:
        return tuple((self.base or self).conditions)

    def params(self, condition: str) -> dict:
        conds = (self.base or self).conditions
        try:
            return conds[condition]
        except KeyError:
            raise PredictorError(f"unknown condition tag {condition!r}") from None

    def _check(self, x: np.ndarray) -> None:
        n = len(self.shape)
        if x.shape[x.ndim - n:] != self.shape or x.ndim < n:
            raise PredictorError(f"latent shape {x.shape} does not end with {self.shape}")

    def score(self, x, alpha_bar: float, condition: str, time: Optional[float] = None) -> np.ndarray:
        """grad_x log q_t(x | condition) at noise level ``alpha_bar`` (+ bumps at ``time``)."""
        x = np.asarray(x, dtype=np.float64)
        self._check(x)
        if self.kind == "perturbed":
            out = self.base.score(x, alpha_bar, condition)
            if time is not None:
                for b in self.bumps:
                    w = b.window(time)
                    if w:
                        out = out + w * (b.amplitude + b.slope * x)
            return out
        p = self.params(condition)
        if self.kind == "gaussian":
            s = alpha_bar * p["variance"] + 1.0 - alpha_bar
            return -(x - math.sqrt(alpha_bar) * p["mean"]) / s
        if self.kind == "constant":
            if alpha_bar >= 1.0:
                raise PredictorError("constant predictor has no score at alpha_bar = 1")
            return -p["eps"] / math.sqrt(1.0 - alpha_bar)
        return _mixture_score(x, alpha_bar, p, len(self.shape))

    def eps(self, x, alpha_bar: float, condition: str, time: Optional[float] = None) -> np.ndarray:
        if self.kind == "constant":
            x = np.asarray(x, dtype=np.float64)
            self._check(x)
            return np.broadcast_to(self.params(condition)["eps"], x.shape).copy()
        return -math.sqrt(1.0 - alpha_bar) * self.score(x, alpha_bar, condition, time)

    def log_density(self, x, alpha_bar: float, condition: str) -> np.ndarray:
        """log q_t(x | condition); used by finite-difference checks."""
        x = np.asarray(x, dtype=np.float64)
        n = len(self.shape)
        base = self.base or self
        p = base.params(condition)
        flat = x.reshape(x.shape[: x.ndim - n] + (-1,))
        d = flat.shape[-1]
        if base.kind == "gaussian":
            s = alpha_bar * p["variance"] + 1.0 - alpha_bar
            r2 = np.sum((flat - math.sqrt(alpha_bar) * p["mean"].reshape(-1)) ** 2, axis=-1)
            return -0.5 * d * math.log(2 * math.pi * s) - 0.5 * r2 / s
        if base.kind == "gaussian_mixture":
            return logsumexp(_mixture_logits(flat, alpha_bar, p)[0], axis=-1)
        raise PredictorError("log_density needs a gaussian or mixture base")

    # -- serialization -------------------------------------------------
    def to_record(self) -> dict:
        rec = {"kind": self.kind, "shape": list(self.shape)}
        if self.kind == "perturbed":
            rec["base"] = self.base.to_record()
            rec["perturbations"] = [
                {"center": b.center, "width": b.width, "amplitude": b.amplitude.tolist(), "slope": b.slope}
                for b in self.bumps
            ]
            return rec
        rec["conditions"] = {
            tag: {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in p.items()}
            for tag, p in self.conditions.items()
        }
        return rec

    def to_json(self) -> str:
        return json.dumps(self.to_record())

    @classmethod
    def from_record(cls, rec: dict) -> "PredictorSpec":
        kind = rec.get("kind")
        if kind == "perturbed":
            bumps = tuple(Bump(**b) for b in rec.get("perturbations", []))
            base = cls.from_record(rec["base"])
            return cls(kind="perturbed", shape=tuple(rec.get("shape", base.shape)), base=base, bumps=bumps)
        if "shape" not in rec:
            raise PredictorError("predictor record needs 'shape'")
        return cls(kind=kind, shape=tuple(rec["shape"]), conditions=rec.get("conditions", {}))

    @classmethod
    def from_json(cls, text: str) -> "PredictorSpec":
        return cls.from_record(json.loads(text))


def _mixture_logits(flat, alpha_bar, p):
    means = p["means"].reshape(p["means"].shape[0], -1)
    s = alpha_bar * p["variances"] + 1.0 - alpha_bar  # (K,)
    d = flat.shape[-1]
    diff = flat[..., None, :] - math.sqrt(alpha_bar) * means  # (..., K, d)
    r2 = np.sum(diff * diff, axis=-1)
    logits = np.log(p["weights"]) - 0.5 * d * np.log(2 * math.pi * s) - 0.5 * r2 / s
    return logits, diff, s


def _mixture_score(x, alpha_bar, p, nshape):
    flat = x.reshape(x.shape[: x.ndim - nshape] + (-1,))
    logits, diff, s = _mixture_logits(flat, alpha_bar, p)
    resp = np.exp(logits - logsumexp(logits, axis=-1, keepdims=True))
    score = -np.sum(resp[..., None] * diff / s[:, None], axis=-2)
    return score.reshape(x.shape)


def predict_eps(spec: PredictorSpec, schedule: NoiseSchedule, x, t: int, c: str) -> np.ndarray:
    """Noise prediction at discrete timestep ``t`` (bumps of a perturbed spec read ``t``)."""
    return spec.eps(x, schedule.alpha_bar(t), c, time=float(t))


def predict_eps_guided(spec: PredictorSpec, schedule: NoiseSchedule, x, t: int, c: str,
                       guidance: GuidanceConfig) -> np.ndarray:
    """Classifier-free guidance: w * eps(x, c) + (1 - w) * eps(x, null)."""
    w = guidance.scale
    cond = predict_eps(spec, schedule, x, t, c)
    if w == 1.0:
        return cond
    uncond = predict_eps(spec, schedule, x, t, guidance.null_condition)
    if w == 0.0:
        return uncond
    return w * cond + (1.0 - w) * uncond


def perturbed_score(spec: PredictorSpec, schedule: NoiseSchedule, x, t, c: str) -> np.ndarray:
    if spec.kind != "perturbed":
        raise PredictorError("perturbed_score needs a perturbed spec")
    return spec.score(x, schedule.alpha_bar(int(t)), c, time=float(t))


def difference_saliency(spec: PredictorSpec, schedule: NoiseSchedule, source: str, target: str):
    """Saliency callback |eps(x, t, target) - eps(x, t, source)|.

    Plays the role of a cross-attention map for the edited concept: large
    where the two conditions disagree about the noise.
    """

    def callback(x, t, condition=None):
        t = max(int(t), 1)
        return np.abs(predict_eps(spec, schedule, x, t, target) - predict_eps(spec, schedule, x, t, source))

    return callback


def gaussian_spec(shape, conditions: dict) -> PredictorSpec:
    """Shorthand: ``conditions`` maps tag -> (mean, variance)."""
    return PredictorSpec(
        kind="gaussian", shape=tuple(np.atleast_1d(shape)),
        conditions={k: {"mean": m, "variance": v} for k, (m, v) in conditions.items()},
    )


def sample_data(spec: PredictorSpec, condition: str, rng: np.random.Generator, size=()) -> np.ndarray:
    """Draw from q_0(. | condition) for gaussian and mixture kinds."""
    base = spec.base or spec
    p = base.params(condition)
    size = tuple(np.atleast_1d(size)) if size != () else ()
    shape = size + spec.shape
    if base.kind == "gaussian":
        return p["mean"] + math.sqrt(p["variance"]) * rng.standard_normal(shape)
    if base.kind == "gaussian_mixture":
        k = rng.choice(p["weights"].size, size=size or None, p=p["weights"])
        noise = rng.standard_normal(shape)
        scale = np.sqrt(p["variances"][k]).reshape(np.shape(k) + (1,) * len(spec.shape))
        return p["means"][k] + scale * noise
    raise PredictorError(f"cannot sample data from a {base.kind} predictor")


def checkerboard(shape) -> np.ndarray:
    """+-1 pattern alternating over the last two axes (or the only axis)."""
    shape = tuple(np.atleast_1d(shape))
    idx = np.indices(shape[-2:] if len(shape) >= 2 else shape).sum(axis=0)
    return np.broadcast_to(np.where(idx % 2 == 0, 1.0, -1.0), shape).copy()


def pattern_spec(shape, source_amplitude: float = 1.0, target_amplitude: float = 1.2, variance: float = 0.5,
                 null_mean: float = 0.0, null_variance: float = 1.0, tags=("source", "target", "null")) -> PredictorSpec:
    """Gaussian conditions whose means scale a shared checkerboard."""
    pat = checkerboard(shape)
    src, tgt, null = tags
    return gaussian_spec(shape, {
        src: (source_amplitude * pat, variance),
        tgt: (target_amplitude * pat, variance),
        null: (null_mean, null_variance),
    })


def random_mixture_spec(shape, rng: np.random.Generator, components: int = 3,
                        tags=("source", "target", "null")) -> PredictorSpec:
    """Random gaussian-mixture conditions, one mixture per tag."""
    shape = tuple(np.atleast_1d(shape))
    conds = {}
    for tag in tags:
        w = rng.uniform(0.5, 1.5, components)
        conds[tag] = {
            "weights": w / w.sum(),
            "means": rng.normal(0.0, 1.5, (components,) + shape),
            "variances": rng.uniform(0.1, 1.0, components),
        }
    return PredictorSpec(kind="gaussian_mixture", shape=shape, conditions=conds)
