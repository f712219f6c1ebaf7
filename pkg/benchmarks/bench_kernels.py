"""Compare the compiled and numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints per-call wall time for both backends and the speedup, plus an
end-to-end eta_inversion timing.  Needs the extension built
(``pip install -e . --no-build-isolation``).
"""

import argparse
import timeit

import numpy as np

from etainv import _pykernels, kernels
from etainv.eta import linear_intercept
from etainv.inversion import EditConfig, eta_inversion
from etainv.predictor import pattern_spec, sample_data
from etainv.schedule import build_schedule

try:
    from etainv import _ckernels
except ImportError:
    _ckernels = None


def _time(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    if _ckernels is None:
        print("compiled extension not built; only the numpy backend is available")
    rng = np.random.default_rng(0)
    impls = {"python": _pykernels, "cython": _ckernels}
    print(f"{'kernel':<22}{'d':>8}{'python ms':>12}{'cython ms':>12}{'speedup':>9}")
    for d in (4096, 16384, 65536):
        x, eps, noise = rng.standard_normal((3, d))
        sig = np.full(d, 0.3)
        cands = rng.standard_normal((10, d))
        cases = {
            "ddim_update": lambda impl: kernels.ddim_update(x, eps, sig, noise, 1.01, 0.4, 0.6, impl=impl),
            "candidate_sq_gaps n=10": lambda impl: kernels.candidate_sq_gaps(x, sig, cands, impl=impl),
        }
        for name, fn in cases.items():
            times = {k: _time(lambda: fn(m), args.repeat) * 1e3 for k, m in impls.items() if m is not None}
            c = times.get("cython", float("nan"))
            print(f"{name:<22}{d:>8}{times['python']:>12.3f}{c:>12.3f}{times['python'] / c:>9.2f}")

    schedule = build_schedule("linear-beta", 50)
    spec = pattern_spec((4, 64, 64))
    x0 = sample_data(spec, "source", np.random.default_rng(1))
    cfg = EditConfig(eta=linear_intercept(0.7, 0.6), seed=0)
    t = _time(lambda: eta_inversion(schedule, spec, x0, cfg), max(3, args.repeat // 5))
    print(f"eta_inversion (4x64x64, T=50, n=10, backend={kernels.BACKEND}): {t * 1e3:.1f} ms")


if __name__ == "__main__":
    main()
