"""Exit criteria.  Each test prints one ``PASS``/``FAIL`` line to the terminal.

Run with ``pytest tests/test_acceptance.py -v``; the verdict lines appear in
the terminal summary (or inline with ``-s``).
"""

import math

import numpy as np
import pytest
from scipy import stats

from etainv.analysis import (
    GaussianState, VPProcess, branch_distance_samples, folded_normal_mean, noise_statistics, prop1_experiment,
    prop1_setup, prop2_identity_check, prop3_schedule_comparison, prop3_spec,
)
from etainv.cli import main, preset
from etainv.eta import constant, eta_at, linear_intercept
from etainv.inversion import (
    EditConfig, baseline_compensated_noise, baseline_ddim_inversion, baseline_latent_replacement, eta_inversion,
)
from etainv.predictor import (
    GuidanceConfig, PredictorSpec, gaussian_spec, pattern_spec, random_mixture_spec, sample_data,
)
from etainv.sampler import run_backward, run_forward_inversion
from etainv.schedule import build_schedule, ddpm_posterior_std, sigma

pytestmark = pytest.mark.acceptance

VERDICTS = []


@pytest.fixture(scope="module", autouse=True)
def _print_verdicts(request):
    yield
    reporter = request.config.pluginmanager.get_plugin("terminalreporter")
    if reporter is not None and VERDICTS:
        reporter.write_sep("-", "acceptance criteria")
        for line in VERDICTS:
            reporter.write_line(line)


def verdict(name: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
    VERDICTS.append(line)
    print(line)
    assert ok, line


def _sign_test(wins: int, n: int) -> float:
    return stats.binomtest(wins, n, 0.5, alternative="greater").pvalue


def test_perfect_reconstruction():
    worst = 0.0
    for k in range(100):
        rng = np.random.default_rng([k, 7])
        steps = int(rng.integers(5, 60))
        beta_end = float(rng.uniform(0.01, 0.03))
        s = build_schedule("linear-beta", steps, beta_end=beta_end)
        shape = (int(rng.integers(1, 5)), int(rng.integers(1, 9)))
        spec = random_mixture_spec(shape, rng, components=int(rng.integers(1, 5)))
        x0 = rng.standard_normal(shape)
        cfg = EditConfig(eta=linear_intercept(0.7, 0.6), seed=int(rng.integers(2**31)),
                         sample_count=int(rng.integers(1, 12)), w_backward=float(rng.uniform(1, 10)))
        for method in (eta_inversion, baseline_latent_replacement):
            worst = max(worst, float(np.max(np.abs(method(s, spec, x0, cfg).reconstruction - x0))))
    verdict("perfect_reconstruction", worst == 0.0, f"max |x'_0 - x_0| over 100 triples x 2 methods = {worst!r}")


def test_injected_noise_gaussianity():
    s = build_schedule("linear-beta", 50)
    spec = pattern_spec((4, 64, 64))
    x0 = sample_data(spec, "source", np.random.default_rng([0, 1]))
    cfg = EditConfig(eta=linear_intercept(0.7, 0.6), sample_count=10, seed=0, w_forward=1.0, w_backward=7.5)
    records = [eta_inversion(s, spec, x0, cfg), baseline_compensated_noise(s, spec, x0, cfg)]
    ns = noise_statistics(records)
    f = ns.flags["eta_inversion"]
    comp = ns.std_by_t("compensated_noise")
    t_min = min(comp)
    ok = (f["count"] >= 100_000 and abs(f["mean"]) <= 0.02 and abs(f["std"] - 1.0) <= 0.02
          and comp[t_min] > 1.2)
    verdict("injected_noise_gaussianity", ok,
            f"n={f['count']} mean={f['mean']:.4f} std={f['std']:.4f}; compensated std at t={t_min} = {comp[t_min]:.3f}")


def test_ddpm_equivalence():
    s = build_schedule("linear-beta", 50)
    worst = max(abs(float(sigma(s, t, 1.0)) - ddpm_posterior_std(s, t)) for t in range(1, 51))
    verdict("ddpm_equivalence", worst <= 1e-12, f"max |sigma(eta=1) - posterior std| = {worst:.2e}")


def test_inversion_roundtrip():
    s = build_schedule("linear-beta", 50)
    rng = np.random.default_rng(3)
    eps = rng.standard_normal((4, 4))
    const = PredictorSpec("constant", (4, 4), {c: {"eps": eps} for c in ("source", "null")})
    x0 = rng.standard_normal((4, 4))
    back = run_backward(s, const, run_forward_inversion(s, const, x0, "source").final, "source",
                        GuidanceConfig(7.5, "null"), constant(0.0))
    err = float(np.max(np.abs(back.final - x0)))

    spec = pattern_spec((8, 8))
    wins = 0
    for seed in range(50):
        x = sample_data(spec, "source", np.random.default_rng([seed, 1]))
        mse = [baseline_ddim_inversion(s, spec, x, EditConfig(w_backward=w, seed=seed)).reconstruction_mse()
               for w in (1.0, 7.5)]
        wins += mse[1] > mse[0]
    p = _sign_test(wins, 50)
    verdict("inversion_roundtrip", err <= 1e-9 and p < 0.01,
            f"constant-oracle error {err:.2e}; MSE(w=7.5) > MSE(w=1) in {wins}/50 seeds, p={p:.2e}")


def test_branch_escape():
    rng = np.random.default_rng(11)
    worst = 0.0
    for mu, sd in zip(rng.uniform(-3, 3, 20), rng.uniform(0.1, 2.0, 20)):
        x = branch_distance_samples(mu, sd, 200_000, rng)
        worst = max(worst, abs(x.mean() - float(folded_normal_mean(mu, sd))) / (x.std() / math.sqrt(x.size)))

    s = build_schedule("linear-beta", 50)
    t = 25
    spec, x_t = prop1_setup(s, (4, 32, 32), t, 0.1, rng=np.random.default_rng(0))
    rep = prop1_experiment(s, spec, "source", "target", GuidanceConfig(7.5), t, x_t,
                           [0.0, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0], 2000, np.random.default_rng(1))
    escape = rep.found_eta is not None
    detail = f"worst folded-normal deviation {worst:.2f} SE; delta0/bound = {rep.delta0 / rep.proof_bound:.3f}"
    if escape:
        row = next(r for r in rep.rows if r["eta"] == rep.found_eta)
        detail += f"; eta={rep.found_eta} CI [{row['ci_low']:.4f}, {row['ci_high']:.4f}] > delta0={rep.delta0:.4f}"
    verdict("branch_escape", worst < 4.0 and escape, detail)


def test_divergence_identity():
    spec = gaussian_spec((1,), {"c": (0.0, 1.0)})
    process = VPProcess("ou", horizon=1.0)
    a, b = GaussianState(0.0, 1.0), GaussianState(0.5, 1.0)
    r1 = prop2_identity_check(a, b, spec, "c", constant(1.0), process, 2000)
    r2 = prop2_identity_check(a, b, spec, "c", constant(1.0), process, 3999)
    ratio = r1.residual / r2.residual
    verdict("divergence_identity", r1.relative_residual <= 1e-3 and abs(ratio - 2.0) <= 0.5,
            f"relative residual {r1.relative_residual:.2e} at 2000 nodes; ratio on doubling {ratio:.3f}")


def test_schedule_comparison():
    spec = prop3_spec(0.0, 0.5, 4.5, 0.2, 0.1, 1.0, 1.0)
    rep = prop3_schedule_comparison(spec, VPProcess("ou", horizon=5.0), 2.0, 2.5, 1.0, 10_000, 2000,
                                    np.random.default_rng(0))
    c = rep.by_name()
    ok = c["case1"].ci_high < min(c["case2"].ci_low, c["case3"].ci_low)
    detail = "; ".join(f"{k} KL={v.kl:.3f} [{v.ci_low:.3f}, {v.ci_high:.3f}]" for k, v in c.items())
    verdict("schedule_comparison", ok, detail)


def test_preset_fidelity():
    curves = {
        "etainv1": lambda x: 0.28571428571428575 * ((1 - x) - 0.3),
        "etainv2": lambda x: 1.7499999999999998 * ((1 - x) - 0.6),
        "etainv3": lambda x: 0.20000000000000007 * ((1 - x) - 0.0) + 0.6,
    }
    worst = 0.0
    for name, curve in curves.items():
        fam, _ = preset(name)
        for u in (0.0, 0.25, 0.5, 0.75, 1.0):
            worst = max(worst, abs(eta_at(fam, u * 50, 50) - max(curve(1 - u), 0.0)))
    fam2, _ = preset("etainv2")
    ok = worst <= 1e-12 and (fam2.eta_intercept, fam2.t_intercept) == (0.7, 0.6)
    verdict("preset_fidelity", ok, f"max deviation {worst:.1e}; etainv2 intercepts ({fam2.eta_intercept}, "
                                   f"{fam2.t_intercept})")


def test_sample_count_monotonicity():
    s = build_schedule("linear-beta", 50)
    spec = pattern_spec((8, 8))
    wins = 0
    for seed in range(100):
        x0 = sample_data(spec, "source", np.random.default_rng([seed, 1]))
        gap = [np.mean(list(eta_inversion(s, spec, x0, EditConfig(eta=linear_intercept(0.7, 0.6), sample_count=n,
                                                                   seed=seed)).gaps.values()))
               for n in (1, 10)]
        wins += gap[1] <= gap[0]
    p = _sign_test(wins, 100)
    verdict("sample_count_monotonicity", p < 0.01, f"gap(n=10) <= gap(n=1) in {wins}/100 seeds, p={p:.2e}")


def test_determinism(tmp_path):
    cfg = tmp_path / "edit.toml"
    cfg.write_text('experiment = "edit"\ntrials = 2\n[eta]\npreset = "etainv2"\n[schedule]\nsteps = 20\n'
                   '[predictor]\nshape = [2, 8, 8]\n')
    for out in ("a", "b"):
        assert main(["run", str(cfg), "--out", str(tmp_path / out), "--seed", "5"]) == 0
    names = sorted(p.name for p in (tmp_path / "a").glob("*.csv"))
    same = all((tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() for n in names)
    verdict("determinism", bool(names) and same, f"{len(names)} CSV files byte-identical across two runs")
