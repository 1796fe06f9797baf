"""Compare the compiled and numpy constraint kernels on the CIGRE FC-OPF problem.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--solve]
"""
from __future__ import annotations

import argparse
import contextlib
import time

import numpy as np

from fcopf_engine import _kernels, build_cigre_lv_fixture, build_fcopf, solve_fcopf

NAMES = ("quad_residual", "quad_jacobian", "quad_hessian")


@contextlib.contextmanager
def use_backend(name: str):
    module = _kernels.backend(name)
    saved = {k: getattr(_kernels, k) for k in NAMES}
    for k in NAMES:
        setattr(_kernels, k, getattr(module, k))
    try:
        yield
    finally:
        for k, v in saved.items():
            setattr(_kernels, k, v)


def _best(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def evaluations(problem, repeat: int) -> dict[str, float]:
    rng = np.random.default_rng(0)
    x = problem.x0 + 1e-3 * rng.standard_normal(problem.n)
    lam = rng.standard_normal(problem.equalities.m)
    mu = rng.random(problem.inequalities.m)

    def sweep():
        problem.g(x)
        problem.h(x)
        problem.jac_g(x)
        problem.jac_h(x)
        problem.hess(x, lam, mu)

    return {"residual+jacobian+hessian": _best(sweep, repeat)}


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=50)
    ap.add_argument("--solve", action="store_true", help="also time a full FC-OPF solve per backend")
    args = ap.parse_args(argv)

    net = build_cigre_lv_fixture()
    problem = build_fcopf(net).problem
    print(f"problem: {problem.n} variables, {problem.equalities.m} equalities, "
          f"{problem.inequalities.m} inequalities")
    backends = ["numpy"] + (["cython"] if _kernels.compiled_available() else [])
    if len(backends) == 1:
        print("compiled kernels not built; timing numpy only")
    results = {}
    for name in backends:
        with use_backend(name):
            results[name] = evaluations(problem, args.repeat)
            if args.solve:
                t = time.perf_counter()
                res = solve_fcopf(net)
                results[name]["fcopf solve"] = time.perf_counter() - t
                assert res.status == "Optimal", res.status
    print(f"{'task':<28}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) == 2 else ""))
    for task in results["numpy"]:
        row = [results[b][task] for b in backends]
        line = f"{task:<28}" + "".join(f"{t * 1e3:>10.2f}ms" for t in row)
        if len(row) == 2:
            line += f"{row[0] / row[1]:>11.1f}x"
        print(line)


if __name__ == "__main__":
    main()
