"""Config-driven experiment runner.

    etainv run CONFIG [--seed N] [--out DIR] [--trials N]
    etainv preset NAME

Configs are TOML files with dotted keys (see README for the key list).
Exit codes: 0 all enabled assertions pass, 1 an assertion failed, 2 config
error.  Nothing is written when the config fails validation.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import analysis
from .eta import MASK_MODES, EtaError, EtaFamily, eta_at, linear_intercept, slope_family
from .inversion import METHODS, SUMMARY_FIELDS, EditConfig, InversionError, MaskSettings, write_rows_csv
from .predictor import GuidanceConfig, PredictorError, PredictorSpec, pattern_spec, sample_data
from .schedule import ScheduleError, build_schedule

EXPERIMENTS = ("reconstruct", "edit", "noise-stats", "prop1", "prop2", "prop3", "sweep-eta")
OUTPUT_ROOT_ENV = "ETAINV_OUTPUT_ROOT"
REPLACING_METHODS = ("eta_inversion", "latent_replacement", "compensated_noise")
# backward providers need the trajectory being built and synthetic needs an in-memory map
CLI_MASK_PROVIDERS = ("forward_mean", "ground_truth")

# section -> {key: default}; None marks keys without a default
SCHEMA = {
    "": {"experiment": None, "seed": 0, "trials": 1, "output": None},
    "schedule": {"kind": "linear-beta", "steps": 50, "beta_start": 1e-4, "beta_end": 0.02, "base_steps": 1000,
                 "alphas": None},
    "predictor": {"kind": "pattern", "shape": [4, 64, 64], "source_amplitude": 1.0, "target_amplitude": 1.2,
                  "variance": 0.5, "null_mean": 0.0, "null_variance": 1.0, "file": None},
    "edit": {"source": "source", "target": "target", "null_condition": "null", "w_forward": 1.0,
             "w_backward": 7.5, "sample_count": 10, "chunk": 256, "methods": ["eta_inversion"]},
    "eta": {"preset": None, "kind": "constant", "eta_intercept": 0.0, "t_intercept": 0.0, "exponent_p": 1.0,
            "offset": 0.0, "eta_const": 0.0, "T_a": 0.0, "T_b": 0.0, "table": None},
    "mask": {"enabled": False, "provider": "forward_mean", "threshold": 0.2, "mode": "binary", "file": None},
    "prop1": {"t": 25, "delta0_fraction": 0.1, "eta_grid": [0.0, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0]},
    "prop2": {"horizon": 1.0, "nodes": 2000, "dim": 1, "data_mean": 0.0, "data_variance": 1.0,
              "prime_mean": 0.0, "prime_variance": 1.0, "mean": 0.5, "variance": 1.0, "tolerance": 1e-3},
    "prop3": {"horizon": 5.0, "steps": 2000, "eta_const": 2.0, "T_a": 2.5, "T_b": 1.0, "t_a": 4.5, "t_b": 0.2,
              "width": 0.1, "amplitude_a": 1.0, "amplitude_b": 1.0, "mean": 0.0, "variance": 0.5,
              "bootstrap": 400},
    "sweep": {"slopes": [round(-1.0 + 0.2 * k, 10) for k in range(11)]},
    "assert": {"enabled": True, "noise_tolerance": 0.02, "compensated_min_std": 1.0},
}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

PRESETS = {
    "etainv1": (linear_intercept(0.2, 0.3), {"mask": MaskSettings(enabled=True, threshold=0.2), "sample_count": 10}),
    "etainv2": (linear_intercept(0.7, 0.6), {"mask": MaskSettings(enabled=True, threshold=0.2), "sample_count": 10}),
    "etainv3": (linear_intercept(0.2, 0.0, offset=0.6), {"mask": MaskSettings(enabled=False), "sample_count": 1}),
}


def preset(name: str):
    """Return (EtaFamily, EditConfig field overrides) for a named preset."""
    try:
        fam, frag = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; expected one of {sorted(PRESETS)}") from None
    return fam, dict(frag)


# ---------------------------------------------------------------------------
# config parsing
# ---------------------------------------------------------------------------

@dataclass
class RunConfig:
    experiment: str
    seed: int
    trials: int
    output: Optional[str]
    sections: dict
    schedule: object = None
    predictor: Optional[PredictorSpec] = None
    edit: Optional[EditConfig] = None
    eta: Optional[EtaFamily] = None
    seeds: list = field(default_factory=list)
    explicit: set = field(default_factory=set)

    def digest(self) -> str:
        payload = dict(self.sections)
        payload[""] = {k: v for k, v in payload[""].items() if k != "output"}
        return hashlib.sha256(json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()[:12]


def _flatten(raw: dict) -> tuple:
    """Split a parsed TOML table into {section: {key: value}} plus the set of
    explicitly given (section, key) pairs; unknown keys are rejected."""
    out = {sec: dict(defaults) for sec, defaults in SCHEMA.items()}
    given = set()
    for key, value in raw.items():
        if isinstance(value, dict):
            if key not in SCHEMA or key == "":
                raise ConfigError(f"{key}: unknown section")
            for sub, v in value.items():
                if sub not in SCHEMA[key]:
                    raise ConfigError(f"{key}.{sub}: unknown key")
                if isinstance(v, dict):
                    raise ConfigError(f"{key}.{sub}: nested tables are not supported")
                out[key][sub] = v
                given.add((key, sub))
        else:
            if key not in SCHEMA[""]:
                raise ConfigError(f"{key}: unknown key")
            out[""][key] = value
            given.add(("", key))
    return out, given


def load_config(path, seed: Optional[int] = None, out: Optional[str] = None,
                trials: Optional[int] = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config ({exc.strerror})") from None
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: parse error: {exc}") from None
    try:
        cfg = parse_config(raw)
        if seed is not None:
            cfg.seed = int(seed)
        if trials is not None:
            cfg.trials = _check_trials(trials)
        if out is not None:
            cfg.output = out
        cfg.sections[""].update(seed=cfg.seed, trials=cfg.trials)
        _build(cfg)
    except ConfigError as exc:
        line = _locate(text, str(exc).split(":", 1)[0])
        raise ConfigError(f"{path}:{line}: {exc}" if line else f"{path}: {exc}") from None
    return cfg


def _locate(text: str, key: str) -> Optional[int]:
    """1-based line where dotted ``key`` (or its section header) is set."""
    section = ""
    header_line = None
    for i, line in enumerate(text.splitlines(), 1):
        s = line.split("#", 1)[0].strip()
        if s.startswith("[") and s.endswith("]"):
            section = s.strip("[] ")
            if section == key:
                header_line = i
            continue
        if "=" in s:
            name = s.split("=", 1)[0].strip().strip('"')
            full = f"{section}.{name}" if section else name
            if full == key:
                return i
    return header_line


def _check_trials(value) -> int:
    if value is None or value == "" or value == []:
        raise ConfigError("trials: empty; give a positive integer")
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"trials: expected a positive integer, got {value!r}")
    if value < 1:
        raise ConfigError(f"trials: must be >= 1, got {value}")
    return value


def parse_config(raw: dict) -> RunConfig:
    sections, given = _flatten(raw)
    top = sections[""]
    exp = top["experiment"]
    if exp is None:
        raise ConfigError("experiment: missing")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"experiment: unknown kind {exp!r}; expected one of {EXPERIMENTS}")
    seed = top["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed: expected a non-negative integer, got {seed!r}")
    return RunConfig(exp, seed, _check_trials(top["trials"]), top["output"], sections, explicit=given)


def _section_error(section: str, exc: Exception) -> ConfigError:
    return ConfigError(f"{section}: {exc}")


def _build(cfg: RunConfig) -> None:
    """Validate every referenced spec before any computation."""
    s = cfg.sections
    sch = s["schedule"]
    try:
        if sch["kind"] == "explicit":
            cfg.schedule = build_schedule("explicit", sch["steps"], alphas=sch["alphas"])
        else:
            cfg.schedule = build_schedule(sch["kind"], sch["steps"], beta_start=sch["beta_start"],
                                          beta_end=sch["beta_end"], base_steps=sch["base_steps"])
    except (ScheduleError, TypeError, ValueError) as exc:
        raise _section_error("schedule", exc) from None

    p = s["predictor"]
    try:
        if p["kind"] == "file":
            if not p["file"]:
                raise ConfigError("predictor.file: required when predictor.kind = 'file'")
            cfg.predictor = PredictorSpec.from_json(Path(p["file"]).read_text())
        elif p["kind"] == "pattern":
            e = s["edit"]
            cfg.predictor = pattern_spec(
                tuple(p["shape"]), p["source_amplitude"], p["target_amplitude"], p["variance"], p["null_mean"],
                p["null_variance"], tags=(e["source"], e["target"], e["null_condition"]),
            )
        else:
            raise ConfigError(f"predictor.kind: unknown kind {p['kind']!r}; expected 'pattern' or 'file'")
    except ConfigError:
        raise
    except (PredictorError, OSError, KeyError, TypeError, ValueError) as exc:
        raise _section_error("predictor", exc) from None

    e = s["eta"]
    fragment = {}
    try:
        if e["preset"] is not None:
            cfg.eta, fragment = preset(e["preset"])
        else:
            fields = {k: v for k, v in e.items() if k != "preset" and v is not None}
            cfg.eta = EtaFamily.from_record(fields)
    except ConfigError as exc:
        raise ConfigError(f"eta.preset: {exc}") from None
    except (EtaError, TypeError) as exc:
        raise _section_error("eta", exc) from None

    m = s["mask"]
    try:
        mask = MaskSettings(enabled=bool(m["enabled"]), provider=m["provider"], threshold=float(m["threshold"]),
                            mode=m["mode"], file=m["file"])
        if "mask" in fragment:
            # preset supplies enabled/threshold unless the config sets them
            preset_mask = fragment["mask"]
            if ("mask", "enabled") not in cfg.explicit:
                mask = replace(mask, enabled=preset_mask.enabled)
            if ("mask", "threshold") not in cfg.explicit:
                mask = replace(mask, threshold=preset_mask.threshold)
    except (TypeError, ValueError) as exc:
        raise _section_error("mask", exc) from None
    if mask.enabled:
        if mask.provider not in CLI_MASK_PROVIDERS:
            raise ConfigError(f"mask.provider: {mask.provider!r} is not available from configs; "
                              f"expected one of {CLI_MASK_PROVIDERS}")
        if mask.provider == "ground_truth" and not mask.file:
            raise ConfigError("mask.file: required by the ground_truth provider")
        if mask.mode not in MASK_MODES:
            raise ConfigError(f"mask.mode: expected one of {MASK_MODES}, got {mask.mode!r}")

    ed = s["edit"]
    unknown = [mth for mth in ed["methods"] if mth not in METHODS]
    if unknown:
        raise ConfigError(f"edit.methods: unknown methods {unknown}; expected from {sorted(METHODS)}")
    n = ed["sample_count"]
    if ("edit", "sample_count") not in cfg.explicit:
        n = fragment.get("sample_count", n)
    try:
        cfg.edit = EditConfig(source=ed["source"], target=ed["target"], null_condition=ed["null_condition"],
                              w_forward=float(ed["w_forward"]), w_backward=float(ed["w_backward"]), eta=cfg.eta,
                              mask=mask, sample_count=int(n), seed=cfg.seed, chunk=int(ed["chunk"]))
    except (InversionError, TypeError, ValueError) as exc:
        raise _section_error("edit", exc) from None
    for tag in (cfg.edit.source, cfg.edit.target, cfg.edit.null_condition):
        if cfg.experiment not in ("prop2", "prop3") and tag not in cfg.predictor.tags:
            raise ConfigError(f"edit: condition {tag!r} is not defined by the predictor")
    _check_experiment_sections(cfg)
    cfg.seeds = [cfg.seed + k for k in range(cfg.trials)]


def _check_experiment_sections(cfg: RunConfig) -> None:
    s = cfg.sections
    T = cfg.schedule.num_steps
    if cfg.experiment == "prop1":
        t = s["prop1"]["t"]
        if not (isinstance(t, int) and 2 <= t <= T):
            raise ConfigError(f"prop1.t: must be an integer in [2, {T}], got {t!r}")
        if not s["prop1"]["delta0_fraction"] >= 0:
            raise ConfigError("prop1.delta0_fraction: must be >= 0")
    if cfg.experiment == "prop2":
        p = s["prop2"]
        for k in ("data_variance", "prime_variance", "variance", "horizon"):
            if not p[k] > 0:
                raise ConfigError(f"prop2.{k}: must be > 0")
        if p["nodes"] < 2:
            raise ConfigError("prop2.nodes: must be >= 2")
    if cfg.experiment == "prop3":
        p = s["prop3"]
        if not p["T_a"] > p["T_b"] >= 0:
            raise ConfigError("prop3.T_a: need T_a > T_b >= 0")
        if not p["width"] > 0:
            raise ConfigError("prop3.width: must be > 0")
        if cfg.trials < 1000:
            raise ConfigError(f"trials: prop3 needs >= 1000 Monte Carlo trials, got {cfg.trials}")


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

@dataclass
class Artifacts:
    tables: dict = field(default_factory=dict)  # filename -> (rows, fields)
    summary: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)  # name -> bool


def _data_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng([seed, 1])


def _records(cfg: RunConfig, methods, seed: int):
    x0 = sample_data(cfg.predictor, cfg.edit.source, _data_rng(seed))
    ecfg = replace(cfg.edit, seed=seed)
    return [METHODS[m](cfg.schedule, cfg.predictor, x0, ecfg) for m in methods]


def _exp_runs(cfg: RunConfig, with_distances: bool) -> Artifacts:
    art = Artifacts()
    methods = cfg.sections["edit"]["methods"]
    h = cfg.edit.config_hash({"schedule": cfg.sections["schedule"], "predictor": cfg.sections["predictor"]})
    rows, dist_rows = [], []
    exact = True
    for seed in cfg.seeds:
        for rec in _records(cfg, methods, seed):
            rows.append(rec.summary_row(seed, h))
            if rec.method in REPLACING_METHODS:
                exact &= rec.reconstruction_error() == 0.0
            if with_distances:
                for t, d in rec.branch_distances().items():
                    dist_rows.append({"seed": seed, "method": rec.method, "t": t, "distance": d})
    art.tables["summary.csv"] = (rows, SUMMARY_FIELDS)
    if with_distances:
        art.tables["branch_distances.csv"] = (dist_rows, ("seed", "method", "t", "distance"))
    art.checks["perfect_reconstruction"] = exact
    art.summary = {"config_hash": h, "runs": len(rows),
                   "max_reconstruction_error": max(r["reconstruction_error"] for r in rows)}
    return art


def _exp_noise_stats(cfg: RunConfig) -> Artifacts:
    a = cfg.sections["assert"]
    records = []
    for seed in cfg.seeds:
        records.extend(_records(cfg, ["eta_inversion", "compensated_noise"], seed))
    stats = analysis.noise_statistics(records, mean_tol=a["noise_tolerance"], std_tol=a["noise_tolerance"])
    art = Artifacts()
    art.tables["noise_std.csv"] = (stats.rows, ("method", "t", "count", "mean", "std"))
    hist_rows = []
    for method, h in stats.histogram.items():
        for lo, hi, c in zip(h["edges"][:-1], h["edges"][1:], h["counts"]):
            hist_rows.append({"method": method, "t": h["t"], "bin_low": lo, "bin_high": hi, "count": c})
    art.tables["noise_histogram.csv"] = (hist_rows, ("method", "t", "bin_low", "bin_high", "count"))
    art.summary = {"flags": stats.flags}
    if "eta_inversion" in stats.flags:
        art.checks["eta_inversion_gaussian"] = stats.flags["eta_inversion"]["gaussian_moments"]
    comp = stats.std_by_t("compensated_noise")
    if comp:
        art.summary["compensated_std_smallest_t"] = comp[min(comp)]
        art.checks["compensated_inflated"] = comp[min(comp)] > a["compensated_min_std"]
    return art


def _exp_prop1(cfg: RunConfig) -> Artifacts:
    p = cfg.sections["prop1"]
    rng = np.random.default_rng(cfg.seed)
    spec, x_t = analysis.prop1_setup(cfg.schedule, cfg.predictor.shape, p["t"], p["delta0_fraction"],
                                     cfg.edit.w_backward, rng)
    report = analysis.prop1_experiment(cfg.schedule, spec, "source", "target", GuidanceConfig(cfg.edit.w_backward),
                                       p["t"], x_t, p["eta_grid"], cfg.trials, rng)
    fields = ("eta", "admissible", "sigma", "mean_delta", "se", "ci_low", "ci_high", "lower_bound")
    art = Artifacts()
    art.tables["prop1.csv"] = ([{k: r.get(k, "") for k in fields} for r in report.rows], fields)
    art.summary = report.summary()
    art.checks["escape_found"] = report.escaped
    return art


def _exp_prop2(cfg: RunConfig) -> Artifacts:
    p = cfg.sections["prop2"]
    d = int(p["dim"])
    spec = PredictorSpec(kind="gaussian", shape=(d,), conditions={"data": {"mean": p["data_mean"],
                                                                            "variance": p["data_variance"]}})
    process = analysis.VPProcess("ou", horizon=float(p["horizon"]))
    a = analysis.GaussianState(np.full(d, float(p["prime_mean"])), p["prime_variance"])
    b = analysis.GaussianState(np.full(d, float(p["mean"])), p["variance"])
    rep = analysis.prop2_identity_check(a, b, spec, "data", cfg.eta, process, int(p["nodes"]))
    fine = analysis.prop2_identity_check(a, b, spec, "data", cfg.eta, process, 2 * int(p["nodes"]) - 1)
    art = Artifacts()
    art.tables["prop2.csv"] = (rep.rows(), ("t", "kl", "fisher", "weighted_fisher"))
    ratio = rep.residual / fine.residual if fine.residual != 0 else math.nan
    art.summary = {**rep.summary(), "refined_residual": fine.residual, "residual_ratio": ratio}
    art.checks["residual_within_tolerance"] = rep.relative_residual <= p["tolerance"]
    art.checks["non_negative"] = bool(np.all(rep.kl >= -1e-15) and np.all(rep.fisher >= 0))
    if rep.integral > 0:
        art.checks["kl_monotone"] = rep.kl_monotone
    return art


def _exp_prop3(cfg: RunConfig) -> Artifacts:
    p = cfg.sections["prop3"]
    spec = analysis.prop3_spec(p["mean"], p["variance"], p["t_a"], p["t_b"], p["width"], p["amplitude_a"],
                               p["amplitude_b"])
    process = analysis.VPProcess("ou", horizon=float(p["horizon"]))
    rep = analysis.prop3_schedule_comparison(spec, process, p["eta_const"], p["T_a"], p["T_b"], cfg.trials,
                                             int(p["steps"]), np.random.default_rng(cfg.seed),
                                             bootstrap=int(p["bootstrap"]))
    art = Artifacts()
    art.tables["prop3.csv"] = (rep.rows(), ("case", "kl", "ci_low", "ci_high", "hist_kl", "exact_kl", "mean", "var"))
    art.summary = rep.summary()
    art.checks["ordering"] = rep.ordering_holds()
    return art


def _exp_sweep(cfg: RunConfig) -> Artifacts:
    T = cfg.schedule.num_steps
    rows = []
    for slope in cfg.sections["sweep"]["slopes"]:
        fam = slope_family(float(slope), T)
        ecfg = replace(cfg.edit, eta=fam)
        recs = []
        for seed in cfg.seeds:
            x0 = sample_data(cfg.predictor, ecfg.source, _data_rng(seed))
            recs.append(METHODS["eta_inversion"](cfg.schedule, cfg.predictor, x0, replace(ecfg, seed=seed)))
        sums = [r.summary_row() for r in recs]
        rows.append({
            "slope": float(slope), "eta_start": eta_at(fam, T, T), "eta_end": eta_at(fam, 1, T),
            "trials": len(recs),
            "final_branch_distance": float(np.mean([s["final_branch_distance"] for s in sums])),
            "mean_branch_distance": float(np.mean([s["mean_branch_distance"] for s in sums])),
            "mean_gap": float(np.mean([s["mean_gap"] for s in sums])),
            "max_reconstruction_error": float(max(s["reconstruction_error"] for s in sums)),
        })
    art = Artifacts()
    fields = ("slope", "eta_start", "eta_end", "trials", "final_branch_distance", "mean_branch_distance",
              "mean_gap", "max_reconstruction_error")
    art.tables["sweep_eta.csv"] = (rows, fields)
    art.summary = {"rows": len(rows)}
    art.checks["perfect_reconstruction"] = all(r["max_reconstruction_error"] == 0.0 for r in rows)
    return art


RUNNERS = {
    "reconstruct": lambda c: _exp_runs(c, False),
    "edit": lambda c: _exp_runs(c, True),
    "noise-stats": _exp_noise_stats,
    "prop1": _exp_prop1,
    "prop2": _exp_prop2,
    "prop3": _exp_prop3,
    "sweep-eta": _exp_sweep,
}


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def output_dir(cfg: RunConfig) -> Path:
    if cfg.output:
        return Path(cfg.output)
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
    return root / f"{cfg.experiment}-{cfg.digest()}-s{cfg.seed}"


def write_artifacts(cfg: RunConfig, art: Artifacts, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    assertions_on = cfg.sections["assert"]["enabled"]
    passed = all(art.checks.values()) if assertions_on else True
    for name, (rows, fields) in art.tables.items():
        write_rows_csv(rows, out / name, fields)
    summary = {
        "experiment": cfg.experiment,
        "parameters": {sec or "run": vals for sec, vals in cfg.sections.items()},
        "statistics": art.summary,
        "checks": art.checks,
        "assertions_enabled": assertions_on,
        "pass": passed,
    }
    (out / "summary.json").write_text(json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
    files = sorted(list(art.tables) + ["summary.json"])
    manifest = {"files": {f: hashlib.sha256((out / f).read_bytes()).hexdigest() for f in files}}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return summary


def run(path, seed: Optional[int] = None, out: Optional[str] = None, trials: Optional[int] = None) -> int:
    try:
        cfg = load_config(path, seed=seed, out=out, trials=trials)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    art = RUNNERS[cfg.experiment](cfg)
    target = output_dir(cfg)
    summary = write_artifacts(cfg, art, target)
    for name, ok in art.checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    print(f"wrote {target}")
    return 0 if summary["pass"] else 1


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="etainv", description="Eta-schedule inversion experiments on analytic predictors.")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    r.add_argument("--trials", type=int)
    p = sub.add_parser("preset", help="print a named eta preset")
    p.add_argument("name")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "run":
        return run(args.config, seed=args.seed, out=args.out, trials=args.trials)
    try:
        fam, frag = preset(args.name)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    doc = {"eta": fam.to_record(), "edit": {"sample_count": frag["sample_count"], "mask": frag["mask"].to_record()}}
    print(json.dumps(doc, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
