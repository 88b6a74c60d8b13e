"""Compiled kernels against the pure-Python fallback.

Three layers are timed:

* element kernels (stiffness, fluxes, grouped sums) on the whole fine mesh,
* one patch factorization and solve with the Cholesky kernels of both
  backends,
* a full per-sample upscaling, run once per backend in a fresh interpreter
  because the backend is fixed at import.

Usage: python benchmarks/bench_backends.py [--coarse 1] [--fine 5] [--repeat 3]
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def field(h, seed=0):
    from qlhom.random_field import FieldModel, draw_sample, restrict_to_fine
    return restrict_to_fine(draw_sample(FieldModel(1.0, 10.0, h.eps_level, seed), h, 0), h)


def kernel_rows(h, repeat):
    from qlhom import _kernels as cy
    from qlhom import _kernels_py as py
    from qlhom.correctors import CorrectorLevel

    fine = h.fine
    A = np.ascontiguousarray(field(h))
    lvl = CorrectorLevel(h, h.coarse_level + 1, solver="cholesky")
    T = h.coarse.n_triangles // 2
    s = lvl.structure(T)
    fe = s.fine_elements
    W = np.ascontiguousarray(lvl.element_weights(A)[fe])
    G = np.ascontiguousarray(fine.gradients[fe])
    q = np.random.default_rng(0).standard_normal((s.dofs.size, 2))
    data = lvl.stiffness_values(A)
    pl = s.plan
    vals = data[pl.positions]
    n, m = pl.constraint_t.shape
    R = np.zeros((n, m + 2))
    R[:, 2:] = pl.constraint_t.toarray()

    def chol(mod):
        def run():
            Li, Lx = mod.chol_numeric(pl.indptr, pl.indices, vals, pl.Lp, pl.parent)
            X = R.copy()
            mod.chol_forward(pl.Lp, Li, Lx, X)
            mod.chol_backward(pl.Lp, Li, Lx, X)
            return X
        return run

    cases = [
        ("local_stiffness", lambda mod: lambda: mod.local_stiffness(fine.gradients, fine.areas, A)),
        ("element_fluxes", lambda mod: lambda: mod.element_fluxes(q, s.cell_dofs, G, W)),
        ("group_sum", lambda mod: lambda: mod.group_sum(
            mod.element_fluxes(q, s.cell_dofs, G, W), lvl.ratio)),
        (f"cholesky ({n} dofs, {m} constraints)", chol),
    ]
    rows = []
    for name, make in cases:
        t_cy, out_cy = best_of(make(cy), repeat)
        t_py, out_py = best_of(make(py), 1 if "cholesky" in name else repeat)
        err = float(np.abs(out_cy - out_py).max() / max(np.abs(out_cy).max(), 1e-300))
        rows.append((name, t_cy, t_py, err))
    return rows


def child(coarse, fine, solver):
    """Runs in a fresh interpreter: upscale one sample, print timings as JSON."""
    from qlhom import kernels
    from qlhom.mesh import MeshHierarchy
    from qlhom.upscaling import SampleUpscaler

    h = MeshHierarchy(coarse, min(fine, coarse + 2), fine)
    up = SampleUpscaler(h, coarse + 1, solver=solver)
    t0 = time.perf_counter()
    up.prepare()
    t_setup = time.perf_counter() - t0
    A = field(h)
    t0 = time.perf_counter()
    Q = up.compute(A)
    t_sample = time.perf_counter() - t0
    print(json.dumps({"backend": kernels.BACKEND, "solver": solver, "setup": t_setup,
                      "sample": t_sample, "checksum": float(np.abs(Q.blocks).sum())}))


def run_child(coarse, fine, solver, pure):
    env = dict(os.environ)
    if pure:
        env["QLHOM_PURE_PYTHON"] = "1"
    else:
        env.pop("QLHOM_PURE_PYTHON", None)
    out = subprocess.run([sys.executable, __file__, "--child", solver, "--coarse", str(coarse),
                          "--fine", str(fine)], env=env, capture_output=True, text=True,
                         check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--coarse", type=int, default=1)
    p.add_argument("--fine", type=int, default=5)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--child", choices=["superlu", "cholesky"], help=argparse.SUPPRESS)
    args = p.parse_args()
    if args.child:
        child(args.coarse, args.fine, args.child)
        return

    from qlhom import kernels
    from qlhom.mesh import MeshHierarchy
    if kernels.BACKEND != "cython":
        sys.exit("compiled extension not available; build with `pip install -e .`")

    h = MeshHierarchy(args.coarse, min(args.fine, args.coarse + 2), args.fine)
    print(f"mesh: coarse level {args.coarse}, fine level {args.fine} "
          f"({h.fine.n_triangles} fine triangles)\n")
    print(f"{'kernel':<40}{'cython [s]':>12}{'python [s]':>12}{'speedup':>10}{'rel diff':>11}")
    for name, t_cy, t_py, err in kernel_rows(h, args.repeat):
        print(f"{name:<40}{t_cy:>12.4g}{t_py:>12.4g}{t_py / t_cy:>10.1f}{err:>11.1e}")

    print(f"\n{'per-sample upscaling':<40}{'setup [s]':>12}{'sample [s]':>12}{'checksum':>22}")
    for label, solver, pure in [("compiled + cholesky", "cholesky", False),
                                ("compiled + superlu", "superlu", False),
                                ("pure python + superlu", "superlu", True)]:
        r = run_child(args.coarse, args.fine, solver, pure)
        print(f"{label:<40}{r['setup']:>12.3f}{r['sample']:>12.3f}{r['checksum']:>22.15e}")


if __name__ == "__main__":
    main()
