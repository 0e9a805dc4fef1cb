"""Time the numba kernels against the numpy fallback.

Usage::

    python benchmarks/bench_kernels.py [--config configs/medium.yaml] [--episodes 20000]

Compilation happens in a warm-up call and is reported separately.
"""
import argparse
import time
from pathlib import Path

import numpy as np

from ncsopt import _kernels, load_problem, synthesize
from ncsopt._accel import HAVE_NUMBA
from ncsopt.simulation import draw_uniforms, paths_from_uniforms, rollout_costs

ROOT = Path(__file__).resolve().parent.parent


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - start)
    return min(times), out


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", default=str(ROOT / "configs" / "medium.yaml"))
    parser.add_argument("--episodes", type=int, default=20_000)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()
    if not HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")

    spec = load_problem(args.config)
    schedule = synthesize(spec)
    U = draw_uniforms(spec, args.episodes, 0)
    n_r = spec.cost.N + 1 - spec.cost.k0
    cdf, lo, start = spec.d_chain.cdf(), spec.d_chain.lo, spec.init.d_init
    r_paths, d_paths = paths_from_uniforms(spec, U)

    t0 = time.perf_counter()
    _kernels._sample_paths_jit(cdf, lo, start, U[:2, n_r:])
    rollout_costs(spec, schedule, r_paths[:2], d_paths[:2], backend="numba")
    warmup = time.perf_counter() - t0

    rows = []
    t_nb, a = best_of(lambda: _kernels._sample_paths_jit(cdf, lo, start, U[:, n_r:]), args.repeat)
    t_np, b = best_of(lambda: _kernels._sample_paths_numpy(cdf, lo, start, U[:, n_r:]), args.repeat)
    rows.append(("sample_paths", t_nb, t_np, bool(np.array_equal(a, b))))
    t_nb, a = best_of(lambda: rollout_costs(spec, schedule, r_paths, d_paths, backend="numba"),
                      args.repeat)
    t_np, b = best_of(lambda: rollout_costs(spec, schedule, r_paths, d_paths, backend="numpy"),
                      args.repeat)
    rows.append(("rollout", t_nb, t_np, bool(np.allclose(a[0], b[0], rtol=1e-12, atol=0))))

    lay = spec.layout
    print(f"config {args.config}: n={spec.n} m={spec.m} N-k0={spec.cost.N - spec.cost.k0} "
          f"m_tilde={lay.m_tilde} m_hat={lay.m_hat}, {args.episodes} episodes")
    print(f"numba warm-up (compile or cache load): {warmup:.2f} s")
    print(f"{'kernel':<14}{'numba [s]':>12}{'numpy [s]':>12}{'speed-up':>10}  agree")
    for name, t_nb, t_np, agree in rows:
        print(f"{name:<14}{t_nb:>12.4f}{t_np:>12.4f}{t_np / t_nb:>10.1f}  {agree}")


if __name__ == "__main__":
    main()
