"""Time the numba kernels against the numpy reference.

Each backend runs in its own interpreter because the switch is read at
import time.  Usage::

    python benchmarks/bench_kernels.py [--iters 2000] [--repeat 5]
"""

import argparse
import json
import os
import subprocess
import sys

CHILD = r"""
import json, sys, time
import numpy as np
from attn_mirror import kernels
from attn_mirror._accel import use_numba
from attn_mirror.experiments import gen_synthetic
from attn_mirror.mirror import record_schedule

iters, repeat = int(sys.argv[1]), int(sys.argv[2])
ds, v = gen_synthetic(6, 8, 10, 0)
W0 = np.zeros((10, 10))
sched = record_schedule(iters, 10)
args = (ds.X, ds.y, ds.Z, W0, v)

def best(fn, reps):
    fn()  # warm-up, includes compilation
    times = []
    for _ in range(reps):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out

t_grad, _ = best(lambda: [kernels.objective_grads(*args, 1) for _ in range(1000)], repeat)
t_loop, out = best(lambda: kernels.train_loop(*args, 2.0, 0.1, 0.1, sched, True, 1, False, False), repeat)
print(json.dumps({"numba": use_numba(), "grad_x1000_s": t_grad, "train_loop_s": t_loop,
                  "final_loss": float(out[2][-1])}))
"""


def run(disable, iters, repeat):
    env = dict(os.environ)
    if disable:
        env["ATTN_MIRROR_DISABLE_NUMBA"] = "1"
    else:
        env.pop("ATTN_MIRROR_DISABLE_NUMBA", None)
    res = subprocess.run([sys.executable, "-c", CHILD, str(iters), str(repeat)],
                         env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--iters", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    nb = run(False, args.iters, args.repeat)
    np_ = run(True, args.iters, args.repeat)
    print(f"{'kernel':<26}{'numpy [s]':>12}{'numba [s]':>12}{'speedup':>10}")
    for key, label in (("grad_x1000_s", "objective_grads x1000"), ("train_loop_s", f"train_loop ({args.iters} it)")):
        print(f"{label:<26}{np_[key]:>12.4f}{nb[key]:>12.4f}{np_[key] / nb[key]:>9.1f}x")
    diff = abs(nb["final_loss"] - np_["final_loss"])
    print(f"final loss numba {nb['final_loss']:.17g} numpy {np_['final_loss']:.17g} (|diff| {diff:.2e})")
    if not nb["numba"]:
        print("note: numba unavailable, both runs used numpy")


if __name__ == "__main__":
    main()
