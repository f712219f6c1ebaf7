"""Time- and region-dependent eta functions.

Time enters through the remaining-progress coordinate ``u = t / T`` (u = 1 at
the start of sampling, u = 0 at data).  The intercept families evaluate

    eta(u) = slope * max(u - t_intercept, 0) ** p + offset,
    slope  = eta_intercept / (1 - t_intercept) ** p,

so eta(1) = eta_intercept + offset and eta is flat at ``offset`` for
u <= t_intercept.  Negative values clamp to zero.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

ETA_KINDS = ("constant", "linear_intercept", "power_intercept", "piecewise_prop3", "explicit_table")
MASK_MODES = ("binary", "smooth")
SALIENCY_PROVIDERS = ("forward_mean", "backward_source", "backward_target", "ground_truth", "synthetic")

_MASK_MAGIC = b"RMSK"


class EtaError(ValueError):
    """Invalid eta family, mask, or saliency request."""


class ProviderUnavailable(EtaError):
    """The requested saliency source has nothing to read in this context."""


@dataclass(frozen=True)
class EtaFamily:
    kind: str = "constant"
    eta_intercept: float = 0.0
    t_intercept: float = 0.0
    exponent_p: float = 1.0
    offset: float = 0.0
    eta_const: float = 0.0
    T_a: float = 0.0
    T_b: float = 0.0
    table: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in ETA_KINDS:
            raise EtaError(f"unknown eta kind {self.kind!r}; expected one of {ETA_KINDS}")
        if self.eta_intercept < 0 or self.offset < 0 or self.eta_const < 0:
            raise EtaError("eta_intercept, offset and eta_const must be >= 0")
        if not 0.0 <= self.t_intercept < 1.0:
            raise EtaError("t_intercept must lie in [0, 1)")
        if self.exponent_p <= 0:
            raise EtaError("exponent_p must be > 0")
        if self.kind == "piecewise_prop3" and not (self.T_a > self.T_b >= 0):
            raise EtaError("piecewise_prop3 requires T_a > T_b >= 0")
        if self.kind == "explicit_table":
            if self.table is None:
                raise EtaError("explicit_table requires a table")
            object.__setattr__(self, "table", tuple(float(v) for v in self.table))
            if any(v < 0 for v in self.table):
                raise EtaError("table entries must be >= 0")

    @property
    def slope(self) -> float:
        return self.eta_intercept / (1.0 - self.t_intercept) ** self.exponent_p

    def to_record(self) -> dict:
        rec = asdict(self)
        if rec["table"] is not None:
            rec["table"] = list(rec["table"])
        else:
            del rec["table"]
        return rec

    def to_json(self) -> str:
        return json.dumps(self.to_record(), indent=2)

    @classmethod
    def from_record(cls, rec: dict) -> "EtaFamily":
        unknown = set(rec) - set(cls.__dataclass_fields__)
        if unknown:
            raise EtaError(f"unknown eta fields: {sorted(unknown)}")
        return cls(**rec)

    @classmethod
    def from_json(cls, text: str) -> "EtaFamily":
        return cls.from_record(json.loads(text))


def constant(eta: float) -> EtaFamily:
    return EtaFamily(kind="constant", eta_const=eta)


def linear_intercept(eta_intercept: float, t_intercept: float, offset: float = 0.0) -> EtaFamily:
    return EtaFamily(kind="linear_intercept", eta_intercept=eta_intercept, t_intercept=t_intercept, offset=offset)


def power_intercept(eta_intercept: float, t_intercept: float, p: float, offset: float = 0.0) -> EtaFamily:
    return EtaFamily(
        kind="power_intercept", eta_intercept=eta_intercept, t_intercept=t_intercept, exponent_p=p, offset=offset
    )


def piecewise(eta_const: float, T_a: float, T_b: float) -> EtaFamily:
    return EtaFamily(kind="piecewise_prop3", eta_const=eta_const, T_a=T_a, T_b=T_b)


def slope_family(slope: float, T: int) -> EtaFamily:
    """Linear eta through (u=0.5, eta=0.5) used by the slope-sign sweep.

    A negative ``slope`` means eta decreases as sampling proceeds (large eta
    near t = T).  eta(u) = 0.5 - slope * (u - 0.5), tabulated at t = 1..T.
    """
    u = np.arange(1, T + 1) / T
    vals = np.maximum(0.5 - slope * (u - 0.5), 0.0)
    return EtaFamily(kind="explicit_table", table=tuple(vals))


def eta_of_u(family: EtaFamily, u):
    """Evaluate a constant or intercept family at progress ``u`` in [0, 1]."""
    u = np.asarray(u, dtype=np.float64)
    kind = family.kind
    if kind == "constant":
        out = np.full_like(u, family.eta_const)
    elif kind in ("linear_intercept", "power_intercept"):
        p = 1.0 if kind == "linear_intercept" else family.exponent_p
        slope = family.eta_intercept / (1.0 - family.t_intercept) ** p
        out = slope * np.maximum(u - family.t_intercept, 0.0) ** p + family.offset
    else:
        raise EtaError(f"{kind} families are evaluated per timestep, not per u")
    out = np.maximum(out, 0.0)
    return float(out) if out.ndim == 0 else out


def _piecewise(family: EtaFamily, t):
    t = np.asarray(t, dtype=np.float64)
    ramp = family.eta_const * (t - family.T_b) / (family.T_a - family.T_b)
    return np.where(t >= family.T_a, family.eta_const, np.where(t >= family.T_b, ramp, 0.0))


def eta_at(family: EtaFamily, t, T: float) -> float:
    """eta_t for timestep ``t`` of ``T``.

    ``t`` may be fractional (continuous-time use); ``piecewise_prop3`` reads
    T_a and T_b on the same axis as ``t``.
    """
    if family.kind == "explicit_table":
        if len(family.table) != int(T):
            raise EtaError(f"explicit_table has {len(family.table)} entries, expected T={T}")
        return family.table[int(t) - 1]
    if family.kind == "piecewise_prop3":
        return float(np.maximum(_piecewise(family, t), 0.0))
    return eta_of_u(family, float(t) / float(T))


@dataclass(frozen=True)
class RegionMask:
    """Per-element saliency values in [0, 1] and the threshold that gates eta."""

    values: np.ndarray
    threshold: float = 0.2
    mode: str = "binary"

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64)
        if not np.all(np.isfinite(vals)) or vals.size and (vals.min() < 0.0 or vals.max() > 1.0):
            raise EtaError("mask values must lie in [0, 1]")
        if not 0.0 <= self.threshold <= 1.0:
            raise EtaError("mask threshold must lie in [0, 1]")
        if self.mode not in MASK_MODES:
            raise EtaError(f"unknown mask mode {self.mode!r}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def binarized(self) -> np.ndarray:
        return (self.values >= self.threshold).astype(np.float64)

    def weights(self) -> np.ndarray:
        """Multiplier applied to eta: the binarized mask, or raw values in smooth mode."""
        if self.mode == "smooth":
            return self.values
        return self.binarized()

    # -- file io -------------------------------------------------------
    def save(self, path, binary: bool = False) -> None:
        save_mask_grid(self.values, path, binary=binary)

    @classmethod
    def load(cls, path, threshold: float = 0.2, mode: str = "binary") -> "RegionMask":
        return cls(load_mask_grid(path), threshold=threshold, mode=mode)


def eta_field(family: EtaFamily, mask: Optional[RegionMask], t, T, shape) -> np.ndarray:
    """Per-element eta at timestep ``t``: eta_at gated by the mask."""
    value = eta_at(family, t, T)
    if mask is None:
        return np.full(shape, value, dtype=np.float64)
    if mask.values.shape != tuple(shape):
        raise EtaError(f"mask shape {mask.values.shape} does not match latent shape {tuple(shape)}")
    return value * mask.weights()


def normalize_map(values) -> np.ndarray:
    """Min-max normalize to [0, 1]; a constant map becomes all ones."""
    v = np.asarray(values, dtype=np.float64)
    lo, hi = float(v.min()), float(v.max())
    if hi - lo <= 0.0:
        return np.ones_like(v)
    return (v - lo) / (hi - lo)


@dataclass
class SaliencyContext:
    """Everything a saliency provider may read.

    ``callback(x, t, condition)`` returns a raw per-element map; trajectories
    are sequences of (t, latent) pairs.
    """

    callback: Optional[Callable] = None
    condition: Optional[str] = None
    forward: Optional[Sequence] = None
    backward_source: Optional[Sequence] = None
    backward_target: Optional[Sequence] = None
    mask_file: Optional[str] = None
    synthetic: Optional[np.ndarray] = None


def _mean_over(traj, ctx: SaliencyContext, name: str) -> np.ndarray:
    if traj is None or ctx.callback is None:
        raise ProviderUnavailable(f"saliency provider {name!r} needs a trajectory and a callback")
    maps = [np.asarray(ctx.callback(x, t, ctx.condition), dtype=np.float64) for t, x in traj if t > 0]
    if not maps:
        raise ProviderUnavailable(f"saliency provider {name!r}: trajectory has no t > 0 entries")
    return np.mean(maps, axis=0)


def saliency_from_provider(provider: str, context: SaliencyContext, threshold: float = 0.2,
                           mode: str = "binary") -> RegionMask:
    if provider not in SALIENCY_PROVIDERS:
        raise EtaError(f"unknown saliency provider {provider!r}")
    if provider == "synthetic":
        if context.synthetic is None:
            raise ProviderUnavailable("synthetic provider needs a map")
        raw = context.synthetic
    elif provider == "ground_truth":
        if context.mask_file is None:
            raise ProviderUnavailable("ground_truth provider needs a mask file")
        raw = load_mask_grid(context.mask_file)
    elif provider == "forward_mean":
        raw = _mean_over(context.forward, context, provider)
    elif provider == "backward_source":
        raw = _mean_over(context.backward_source, context, provider)
    else:
        raw = _mean_over(context.backward_target, context, provider)
    return RegionMask(normalize_map(raw), threshold=threshold, mode=mode)


def disk_map(height: int, width: int, center=None, radius=None) -> np.ndarray:
    """Smooth disk-shaped bump: 1 at the center falling off past ``radius``."""
    cy, cx = center if center is not None else ((height - 1) / 2.0, (width - 1) / 2.0)
    radius = radius if radius is not None else min(height, width) / 4.0
    yy, xx = np.mgrid[0:height, 0:width]
    r = np.hypot(yy - cy, xx - cx)
    return np.exp(-0.5 * (r / radius) ** 2)


def save_mask_grid(values, path, binary: bool = False) -> None:
    """Write a 2-D grid.  Text: ``width height`` then one row per line.
    Binary: b"RMSK", uint32 width, uint32 height, float64 little-endian row-major."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim == 1:
        v = v.reshape(1, -1)
    h, w = v.shape
    path = Path(path)
    if binary:
        path.write_bytes(_MASK_MAGIC + struct.pack("<II", w, h) + v.astype("<f8").tobytes())
    else:
        lines = [f"{w} {h}"] + [" ".join(repr(float(x)) for x in row) for row in v]
        path.write_text("\n".join(lines) + "\n")


def load_mask_grid(path) -> np.ndarray:
    path = Path(path)
    data = path.read_bytes()
    if data[:4] == _MASK_MAGIC:
        if len(data) < 12:
            raise EtaError(f"{path}: truncated mask header")
        w, h = struct.unpack("<II", data[4:12])
        body = data[12:]
        if len(body) != 8 * w * h:
            raise EtaError(f"{path}: expected {w * h} float64 values, got {len(body) // 8}")
        return np.frombuffer(body, dtype="<f8").reshape(h, w).astype(np.float64)
    try:
        lines = data.decode("ascii").split()
        w, h = int(lines[0]), int(lines[1])
        vals = np.array([float(x) for x in lines[2:]], dtype=np.float64)
    except (UnicodeDecodeError, ValueError, IndexError) as exc:
        raise EtaError(f"{path}: malformed mask file ({exc})") from exc
    if vals.size != w * h:
        raise EtaError(f"{path}: header says {w}x{h} but found {vals.size} values")
    return vals.reshape(h, w)
