"""Numerical experiments on the role of eta.

Continuous-time quantities use a variance-preserving process described by
``log abar(t)``; drift and diffusion follow as f = 0.5 * d log abar / dt and
g^2 = -d log abar / dt.  The eta-extended backward SDE is

    dx = [f x - 0.5 (1 + eta^2) g^2 s(x, t)] dt + eta g dw_bar.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import special, stats

from .eta import EtaFamily, eta_at, constant, piecewise
from .inversion import InversionRecord
from .predictor import Bump, GuidanceConfig, PredictorSpec, gaussian_spec, predict_eps_guided, sample_data
from .sampler import deterministic_part
from .schedule import NoiseSchedule, sigma, eta_max


class AnalysisError(ValueError):
    pass


# ---------------------------------------------------------------------------
# closed forms
# ---------------------------------------------------------------------------

def folded_normal_mean(mu, sigma_):
    """E|X| for X ~ N(mu, sigma^2)."""
    sigma_ = np.asarray(sigma_, dtype=np.float64)
    if np.any(sigma_ <= 0):
        raise AnalysisError("sigma must be > 0")
    mu = np.asarray(mu, dtype=np.float64)
    out = sigma_ * math.sqrt(2.0 / math.pi) * np.exp(-mu**2 / (2.0 * sigma_**2)) + mu * special.erf(
        mu / np.sqrt(2.0 * sigma_**2)
    )
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class GaussianState:
    """Isotropic Gaussian N(mean, variance * I)."""

    mean: np.ndarray
    variance: float

    def __post_init__(self):
        if not self.variance > 0:
            raise AnalysisError("variance must be > 0")
        object.__setattr__(self, "mean", np.atleast_1d(np.asarray(self.mean, dtype=np.float64)))

    @property
    def dim(self) -> int:
        return int(self.mean.size)


def gaussian_kl(p: GaussianState, q: GaussianState) -> float:
    """KL(p || q) for isotropic Gaussians of equal dimension."""
    d = p.dim
    dm2 = float(np.sum((q.mean - p.mean) ** 2))
    r = p.variance / q.variance
    return 0.5 * (d * r + dm2 / q.variance - d - d * math.log(r))


def gaussian_fisher(p: GaussianState, q: GaussianState) -> float:
    """0.5 * E_p ||grad log p - grad log q||^2 for isotropic Gaussians."""
    d = p.dim
    dm2 = float(np.sum((p.mean - q.mean) ** 2))
    return 0.5 * (d * p.variance * (1.0 / q.variance - 1.0 / p.variance) ** 2 + dm2 / q.variance**2)


def histogram_kl(samples, mean: float, var: float, bins: int = 64) -> float:
    """Binned KL(empirical || N(mean, var)) over a +-5 sd window of the reference."""
    x = np.ravel(samples)
    sd = math.sqrt(var)
    edges = np.linspace(mean - 5 * sd, mean + 5 * sd, bins + 1)
    counts, _ = np.histogram(np.clip(x, edges[0], edges[-1]), bins=edges)
    p = counts / counts.sum()
    q = np.diff(stats.norm.cdf(edges, loc=mean, scale=sd))
    q[0] += stats.norm.cdf(edges[0], loc=mean, scale=sd)
    q[-1] += stats.norm.sf(edges[-1], loc=mean, scale=sd)
    nz = p > 0
    return float(np.sum(p[nz] * np.log(p[nz] / q[nz])))


# ---------------------------------------------------------------------------
# continuous-time process
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VPProcess:
    """Variance-preserving diffusion on [0, horizon].

    kinds: ``ou`` (abar = exp(-t), f = -1/2, g = 1), ``linear`` (beta(t) linear
    over [0, 1] from beta_min to beta_max), ``schedule`` (log abar linear
    between nodes t_k = k / T of a discrete schedule) and ``identity``
    (abar = 1, no drift or noise).
    """

    kind: str = "ou"
    horizon: float = 1.0
    beta_min: float = 0.1
    beta_max: float = 20.0
    log_bars: Optional[tuple] = None

    @classmethod
    def from_schedule(cls, schedule: NoiseSchedule) -> "VPProcess":
        bars = np.concatenate([[1.0], schedule.alpha_bars])
        return cls(kind="schedule", horizon=1.0, log_bars=tuple(np.log(bars)))

    def log_alpha_bar(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self.kind == "ou":
            out = -t
        elif self.kind == "linear":
            out = -(self.beta_min * t + 0.5 * (self.beta_max - self.beta_min) * t**2)
        elif self.kind == "schedule":
            lb = np.asarray(self.log_bars)
            nodes = np.linspace(0.0, 1.0, lb.size)
            out = np.interp(t, nodes, lb)
        elif self.kind == "identity":
            out = np.zeros_like(t)
        else:
            raise AnalysisError(f"unknown process kind {self.kind!r}")
        return float(out) if out.ndim == 0 else out

    def alpha_bar(self, t) -> float:
        return math.exp(self.log_alpha_bar(t))

    def g2(self, t: float) -> float:
        """-d log abar / dt (right derivative for the piecewise-linear kind)."""
        if self.kind == "ou":
            return 1.0
        if self.kind == "linear":
            return self.beta_min + (self.beta_max - self.beta_min) * t
        if self.kind == "identity":
            return 0.0
        lb = np.asarray(self.log_bars)
        k = lb.size - 1
        i = min(int(t * k), k - 1)
        return -(lb[i + 1] - lb[i]) * k

    def f(self, t: float) -> float:
        return -0.5 * self.g2(t)


def _marginal(spec: PredictorSpec, condition: str, abar: float) -> tuple:
    p = spec.params(condition)
    return math.sqrt(abar) * p["mean"], abar * p["variance"] + 1.0 - abar


# ---------------------------------------------------------------------------
# SDE / ODE simulation
# ---------------------------------------------------------------------------

@dataclass
class SDEResult:
    samples: np.ndarray
    t_start: float
    t_end: float
    steps: int
    discretization_flag: bool = False
    refined_mean_change: float = 0.0


def _eta_value(family: Optional[EtaFamily], t: float, horizon: float) -> float:
    if family is None:
        return 0.0
    return eta_at(family, t, horizon)


def _simulate(spec, condition, process, eta, direction, x, steps, rng, t_start, t_end):
    h = abs(t_end - t_start) / steps
    sq = math.sqrt(h)
    for k in range(steps):
        if direction == "forward":
            t = t_start + k * h
            g = math.sqrt(process.g2(t))
            x = x + process.f(t) * x * h + g * sq * rng.standard_normal(x.shape)
        else:
            t = t_start - k * h
            g2 = process.g2(t)
            e = _eta_value(eta, t, process.horizon)
            score = spec.score(x, process.alpha_bar(t), condition, time=t)
            drift = process.f(t) * x - 0.5 * (1.0 + e * e) * g2 * score
            x = x - drift * h
            if e > 0.0 and g2 > 0.0:
                x = x + e * math.sqrt(g2) * sq * rng.standard_normal(x.shape)
    return x


def sde_simulate(spec: PredictorSpec, condition: str, process: VPProcess, eta: Optional[EtaFamily],
                 direction: str, trials: int, steps: int, rng: np.random.Generator,
                 x_init=None, t_start: Optional[float] = None, t_end: Optional[float] = None,
                 check_refinement: bool = False) -> SDEResult:
    """Euler-Maruyama for the forward SDE or the eta-extended backward SDE.

    Forward runs from ``t_start`` (default 0) to ``t_end`` (default horizon),
    starting from ``x_init`` or data samples.  Backward runs from ``t_start``
    (default horizon) down to ``t_end`` (default 0), starting from ``x_init``
    or N(0, I).  eta = None or 0 integrates the probability-flow ODE.
    ``check_refinement`` reruns at twice the steps and flags a terminal mean
    change above 5 % (relative to max(|mean|, std)).
    """
    if steps < 1:
        raise AnalysisError("steps must be >= 1")
    if direction not in ("forward", "backward"):
        raise AnalysisError(f"bad direction {direction!r}")
    fwd = direction == "forward"
    t0 = (0.0 if fwd else process.horizon) if t_start is None else float(t_start)
    t1 = (process.horizon if fwd else 0.0) if t_end is None else float(t_end)
    shape = (trials,) + spec.shape
    if x_init is None:
        x_init = sample_data(spec, condition, rng, trials) if fwd else rng.standard_normal(shape)
    x0 = np.array(np.broadcast_to(x_init, shape), dtype=np.float64)
    out = _simulate(spec, condition, process, eta, direction, x0.copy(), steps, rng, t0, t1)
    res = SDEResult(out, t0, t1, steps)
    if check_refinement:
        fine = _simulate(spec, condition, process, eta, direction, x0.copy(), 2 * steps, rng, t0, t1)
        m1, m2 = out.mean(), fine.mean()
        scale = max(abs(m1), out.std(), 1e-300)
        res.refined_mean_change = abs(m2 - m1) / scale
        res.discretization_flag = res.refined_mean_change > 0.05
    return res


# ---------------------------------------------------------------------------
# branch escape under stochastic steps
# ---------------------------------------------------------------------------

def branch_distance_samples(mu, sigma_, trials: int, rng: np.random.Generator) -> np.ndarray:
    """||mu + sigma * eps||_2 for ``trials`` standard normal eps."""
    mu = np.ravel(np.asarray(mu, dtype=np.float64))
    eps = rng.standard_normal((trials, mu.size))
    return np.linalg.norm(mu + np.ravel(sigma_) * eps, axis=1)


@dataclass
class Prop1Report:
    t: int
    dim: int
    delta0: float
    proof_bound: float  # sqrt(1 - abar_{t-1}) * sqrt(2d/pi), the escape ceiling at eta_max
    eta_max: float
    eta_min_sufficient: float
    rows: list = field(default_factory=list)
    found_eta: Optional[float] = None

    @property
    def escaped(self) -> bool:
        return self.found_eta is not None

    def summary(self) -> dict:
        return {
            "experiment": "prop1", "t": self.t, "dim": self.dim, "delta0": self.delta0,
            "proof_bound": self.proof_bound, "eta_max": self.eta_max,
            "eta_min_sufficient": self.eta_min_sufficient, "found_eta": self.found_eta,
            "pass": self.escaped,
        }


def prop1_experiment(schedule: NoiseSchedule, predictor: PredictorSpec, source: str, target: str,
                     guidance: GuidanceConfig, t: int, x_t, eta_grid: Sequence[float], trials: int,
                     rng: np.random.Generator, source_next=None) -> Prop1Report:
    """Estimate E[delta_eta] = E||x_s(t-1) - DDIM(x_t, target, eta)|| on a grid of eta.

    Both branches start from ``x_t``; ``source_next`` defaults to the
    deterministic source step.  An eta counts as found when it is admissible
    and the 95 % CI of E[delta_eta] lies above delta_0.
    """
    x_t = np.asarray(x_t, dtype=np.float64)
    d = x_t.size
    eps_s = predict_eps_guided(predictor, schedule, x_t, t, source, guidance)
    eps_t = predict_eps_guided(predictor, schedule, x_t, t, target, guidance)
    if source_next is None:
        source_next = deterministic_part(schedule, x_t, eps_s, t, 0.0)
    delta0 = float(np.linalg.norm(deterministic_part(schedule, x_t, eps_t, t, 0.0) - source_next))
    unit = sigma(schedule, t, 1.0) if math.isfinite(eta_max(schedule, t)) else 0.0
    ceiling = math.sqrt(1.0 - schedule.alpha_bar(t - 1)) * math.sqrt(2.0 * d / math.pi)
    emax = eta_max(schedule, t)
    emin = delta0 / (unit * math.sqrt(2.0 * d / math.pi)) if unit > 0 else math.inf
    report = Prop1Report(t, d, delta0, ceiling, emax, emin)
    for eta in eta_grid:
        eta = float(eta)
        admissible = eta <= emax * (1 + 1e-12)
        row = {"eta": eta, "admissible": admissible}
        if admissible:
            sig = sigma(schedule, t, eta)
            mu = deterministic_part(schedule, x_t, eps_t, t, sig) - source_next
            if sig > 0:
                dist = branch_distance_samples(mu, sig, trials, rng)
                mean, se = float(dist.mean()), float(dist.std(ddof=1) / math.sqrt(trials))
            else:
                mean, se = float(np.linalg.norm(mu)), 0.0
            row.update(
                sigma=sig, mean_delta=mean, se=se, ci_low=mean - 1.96 * se, ci_high=mean + 1.96 * se,
                lower_bound=sig * math.sqrt(2.0 * d / math.pi),
            )
            if report.found_eta is None and eta > 0 and row["ci_low"] > delta0:
                report.found_eta = eta
        report.rows.append(row)
    return report


def prop1_setup(schedule: NoiseSchedule, shape, t: int, delta0_fraction: float, guidance_scale: float = 7.5,
                rng: Optional[np.random.Generator] = None):
    """Gaussian source/target pair whose branch distance at ``t`` is
    ``delta0_fraction`` times sqrt(1 - abar_{t-1}) sqrt(2d/pi).

    Returns (predictor, x_t).  The target mean is the source mean shifted
    along a fixed unit direction; delta_0 is linear in the shift.
    """
    rng = rng or np.random.default_rng(0)
    shape = tuple(np.atleast_1d(shape))
    d = int(np.prod(shape))
    direction = rng.standard_normal(shape)
    direction /= np.linalg.norm(direction)
    x_t = rng.standard_normal(shape)
    guidance = GuidanceConfig(guidance_scale)

    def delta0(shift):
        spec = gaussian_spec(shape, {"source": (0.0, 1.0), "target": (shift * direction, 1.0), "null": (0.0, 1.0)})
        es = predict_eps_guided(spec, schedule, x_t, t, "source", guidance)
        et = predict_eps_guided(spec, schedule, x_t, t, "target", guidance)
        return spec, float(np.linalg.norm(deterministic_part(schedule, x_t, et, t, 0.0)
                                          - deterministic_part(schedule, x_t, es, t, 0.0)))

    _, unit = delta0(1.0)
    want = delta0_fraction * math.sqrt(1.0 - schedule.alpha_bar(t - 1)) * math.sqrt(2.0 * d / math.pi)
    spec, _ = delta0(want / unit if unit > 0 else 0.0)
    return spec, x_t


# ---------------------------------------------------------------------------
# KL / Fisher identity on Gaussian branches
# ---------------------------------------------------------------------------

@dataclass
class DivergenceReport:
    times: np.ndarray
    kl: np.ndarray
    fisher: np.ndarray
    weighted_fisher: np.ndarray
    integral: float
    kl_start: float
    kl_end: float
    residual: float
    relative_residual: float
    kl_monotone: bool

    def rows(self) -> list:
        return [
            {"t": float(t), "kl": float(k), "fisher": float(f), "weighted_fisher": float(w)}
            for t, k, f, w in zip(self.times, self.kl, self.fisher, self.weighted_fisher)
        ]

    def summary(self) -> dict:
        return {
            "experiment": "prop2", "nodes": int(self.times.size), "kl_T": self.kl_start, "kl_0": self.kl_end,
            "integral": self.integral, "residual": self.residual, "relative_residual": self.relative_residual,
            "kl_monotone": self.kl_monotone, "min_kl": float(self.kl.min()), "min_fisher": float(self.fisher.min()),
        }


def prop2_identity_check(initial_prime: GaussianState, initial: GaussianState, spec: PredictorSpec,
                         condition: str, eta: Optional[EtaFamily], process: VPProcess,
                         nodes: int = 2000) -> DivergenceReport:
    """Evolve two Gaussian branches backward from t = horizon to 0 under the same
    eta-extended SDE with the Gaussian score of ``spec`` and compare

        KL(p'_0 || p_0)  with  KL(p'_T || p_T) - int_0^T eta^2 g^2 D_Fisher(p'_t || p_t) dt.

    Moments follow the exact Euler-Maruyama moment recursion on ``nodes``
    grid points; the integral uses the trapezoid rule on the same grid, so the
    residual is first order in the step.
    """
    if spec.kind != "gaussian":
        raise AnalysisError("prop2 needs a gaussian score spec so marginals stay Gaussian")
    if nodes < 2:
        raise AnalysisError("nodes must be >= 2")
    p = spec.params(condition)
    m = np.ravel(p["mean"])
    v = p["variance"]
    if initial.dim != m.size or initial_prime.dim != m.size:
        raise AnalysisError("initial states must match the predictor dimension")
    T = process.horizon
    times = np.linspace(T, 0.0, nodes)
    h = T / (nodes - 1)
    mu_a, var_a = initial_prime.mean.copy(), initial_prime.variance
    mu_b, var_b = initial.mean.copy(), initial.variance
    kl, fisher, weighted = np.empty(nodes), np.empty(nodes), np.empty(nodes)
    for k, t in enumerate(times):
        pa, pb = GaussianState(mu_a, var_a), GaussianState(mu_b, var_b)
        e = _eta_value(eta, t, T)
        g2 = process.g2(t)
        kl[k] = gaussian_kl(pa, pb)
        fisher[k] = gaussian_fisher(pa, pb)
        weighted[k] = e * e * g2 * fisher[k]
        if k == nodes - 1:
            break
        abar = process.alpha_bar(t)
        s = abar * v + 1.0 - abar
        c = 0.5 * (1.0 + e * e) * g2
        A = process.f(t) + c / s
        B = -c * math.sqrt(abar) * m / s
        damp = 1.0 - A * h
        mu_a = mu_a - (A * mu_a + B) * h
        mu_b = mu_b - (A * mu_b + B) * h
        var_a = damp * damp * var_a + e * e * g2 * h
        var_b = damp * damp * var_b + e * e * g2 * h
    integral = float(np.sum(0.5 * (weighted[1:] + weighted[:-1])) * h)
    residual = float(kl[-1] - (kl[0] - integral))
    scale = max(abs(kl[0]), 1e-300)
    monotone = bool(np.all(np.diff(kl) <= 1e-14 * max(kl[0], 1.0)))
    return DivergenceReport(times, kl, fisher, weighted, integral, float(kl[0]), float(kl[-1]), residual,
                            abs(residual) / scale if kl[0] > 0 else abs(residual), monotone)


# ---------------------------------------------------------------------------
# eta schedules under localized score errors
# ---------------------------------------------------------------------------

@dataclass
class Prop3Case:
    name: str
    eta: EtaFamily
    kl: float
    ci_low: float
    ci_high: float
    hist_kl: float
    exact_kl: float
    mean: float
    var: float


@dataclass
class Prop3Report:
    cases: list
    params: dict

    def by_name(self) -> dict:
        return {c.name: c for c in self.cases}

    def rows(self) -> list:
        return [
            {"case": c.name, "kl": c.kl, "ci_low": c.ci_low, "ci_high": c.ci_high, "hist_kl": c.hist_kl,
             "exact_kl": c.exact_kl, "mean": c.mean, "var": c.var}
            for c in self.cases
        ]

    def ordering_holds(self) -> bool:
        """case1 below case2 and case3 with non-overlapping 95 % CIs."""
        c = self.by_name()
        return c["case1"].ci_high < c["case2"].ci_low and c["case1"].ci_high < c["case3"].ci_low

    def summary(self) -> dict:
        c = self.by_name()
        out = {"experiment": "prop3", **self.params, "pass": self.ordering_holds()}
        for name, case in c.items():
            out[f"kl_{name}"] = case.kl
        return out


def _kl_1d(mean, var, m0, v0):
    return 0.5 * (var / v0 + (mean - m0) ** 2 / v0 - 1.0 - math.log(var / v0))


def gaussian_fit_kl(samples, m0: float, v0: float) -> float:
    x = np.ravel(samples)
    return _kl_1d(float(x.mean()), float(x.var(ddof=1)), m0, v0)


def bootstrap_kl_ci(samples, m0: float, v0: float, rng: np.random.Generator, resamples: int = 400,
                    level: float = 0.95) -> tuple:
    x = np.ravel(samples)
    n = x.size
    vals = np.empty(resamples)
    for b in range(resamples):
        xb = x[rng.integers(0, n, n)]
        vals[b] = _kl_1d(float(xb.mean()), float(xb.var(ddof=1)), m0, v0)
    lo, hi = np.quantile(vals, [(1 - level) / 2, 1 - (1 - level) / 2])
    return float(lo), float(hi)


def linear_moments_backward(spec: PredictorSpec, condition: str, process: VPProcess, eta: Optional[EtaFamily],
                            mean0: float, var0: float, steps: int, t_start=None, t_end=0.0) -> tuple:
    """Exact mean/variance of the Euler-Maruyama backward chain for a 1-D Gaussian
    (optionally perturbed with affine bumps) score."""
    base = spec.base or spec
    p = base.params(condition)
    m, v = float(np.ravel(p["mean"])[0]), p["variance"]
    t0 = process.horizon if t_start is None else t_start
    h = (t0 - t_end) / steps
    mu, var = mean0, var0
    for k in range(steps):
        t = t0 - k * h
        e = _eta_value(eta, t, process.horizon)
        g2 = process.g2(t)
        abar = process.alpha_bar(t)
        s = abar * v + 1.0 - abar
        # score = a_s * x + b_s
        a_s, b_s = -1.0 / s, math.sqrt(abar) * m / s
        if spec.kind == "perturbed":
            for bump in spec.bumps:
                w = bump.window(t)
                if w:
                    a_s += w * bump.slope
                    b_s += w * float(np.ravel(bump.amplitude)[0])
        c = 0.5 * (1.0 + e * e) * g2
        A = process.f(t) - c * a_s
        B = -c * b_s
        mu = mu - (A * mu + B) * h
        var = (1.0 - A * h) ** 2 * var + e * e * g2 * h
    return mu, var


def prop3_spec(mean: float = 0.0, variance: float = 0.5, t_a: float = 3.6, t_b: float = 0.1, width: float = 0.08,
               amplitude_a: float = 1.0, amplitude_b: float = 1.0) -> PredictorSpec:
    """1-D Gaussian base with box-window score errors centered at ``t_a`` and ``t_b``."""
    base = gaussian_spec((1,), {"data": (mean, variance)})
    bumps = []
    if amplitude_a:
        bumps.append(Bump(center=t_a, width=width, amplitude=amplitude_a))
    if amplitude_b:
        bumps.append(Bump(center=t_b, width=width, amplitude=amplitude_b))
    return PredictorSpec(kind="perturbed", shape=(1,), base=base, bumps=tuple(bumps))


def prop3_schedule_comparison(spec: PredictorSpec, process: VPProcess, eta_const: float, T_a: float, T_b: float,
                              trials: int, steps: int, rng: np.random.Generator, condition: str = "data",
                              bootstrap: int = 400, min_trials: int = 1000) -> Prop3Report:
    """Sample p_0 under the three eta cases from exact q_T draws and score each
    against q_0 by Gaussian-fit KL (bootstrap 95 % CI) and 64-bin histogram KL."""
    if trials < min_trials:
        raise AnalysisError(f"prop3 needs >= {min_trials} trials for bootstrap CIs, got {trials}")
    base = spec.base or spec
    p = base.params(condition)
    m0, v0 = float(np.ravel(p["mean"])[0]), p["variance"]
    mT, vT = _marginal(base, condition, process.alpha_bar(process.horizon))
    mT = float(np.ravel(mT)[0])
    x_T = mT + math.sqrt(vT) * rng.standard_normal((trials,) + spec.shape)
    cases = [
        ("case1", piecewise(eta_const, T_a, T_b)),
        ("case2", constant(eta_const)),
        ("case3", constant(0.0)),
    ]
    out = []
    for name, fam in cases:
        res = sde_simulate(spec, condition, process, fam, "backward", trials, steps, rng, x_init=x_T)
        x = res.samples
        lo, hi = bootstrap_kl_ci(x, m0, v0, rng, bootstrap)
        em, ev = linear_moments_backward(spec, condition, process, fam, mT, vT, steps)
        out.append(Prop3Case(name, fam, gaussian_fit_kl(x, m0, v0), lo, hi, histogram_kl(x, m0, v0),
                             _kl_1d(em, ev, m0, v0), float(x.mean()), float(x.var(ddof=1))))
    params = {"eta_const": eta_const, "T_a": T_a, "T_b": T_b, "trials": trials, "steps": steps,
              "horizon": process.horizon}
    return Prop3Report(out, params)


# ---------------------------------------------------------------------------
# noise statistics over inversion records
# ---------------------------------------------------------------------------

@dataclass
class NoiseStats:
    rows: list
    histogram: dict
    flags: dict

    def std_by_t(self, method: str) -> dict:
        return {r["t"]: r["std"] for r in self.rows if r["method"] == method}


def noise_statistics(records: Sequence[InversionRecord], bins: int = 64, hist_range=(-6.0, 6.0),
                     mean_tol: float = 0.02, std_tol: float = 0.02) -> NoiseStats:
    """Per-timestep std of injected (selected) or recovered (compensated) noise.

    Entries where sigma = 0 are excluded.  The histogram pools each method's
    noise at its smallest noisy timestep.
    """
    records = list(records)
    if not records:
        raise AnalysisError("noise_statistics needs at least one record")
    by_method: dict = {}
    for rec in records:
        for t, eps in rec.chosen_noises.items():
            by_method.setdefault(rec.method, {}).setdefault(t, []).append(eps[rec.noise_masks[t]])
    rows, histogram, flags = [], {}, {}
    edges = np.linspace(hist_range[0], hist_range[1], bins + 1)
    for method in sorted(by_method):
        per_t = by_method[method]
        for t in sorted(per_t, reverse=True):
            v = np.concatenate(per_t[t])
            rows.append({"method": method, "t": t, "count": int(v.size), "mean": float(v.mean()),
                         "std": float(v.std())})
        t_min = min(per_t)
        counts, _ = np.histogram(np.concatenate(per_t[t_min]), bins=edges)
        histogram[method] = {"t": t_min, "edges": edges.tolist(), "counts": counts.tolist()}
        pooled = np.concatenate([np.concatenate(per_t[t]) for t in per_t])
        flags[method] = {
            "count": int(pooled.size), "mean": float(pooled.mean()), "std": float(pooled.std()),
            "gaussian_moments": bool(abs(pooled.mean()) <= mean_tol and abs(pooled.std() - 1.0) <= std_tol),
        }
    return NoiseStats(rows, histogram, flags)
