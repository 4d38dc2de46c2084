"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 infeasible SVM, 3 divergence,
iteration cap, or a failed check.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .core import AttnDataset, dumps, make_rng, unit_sphere_vector
from .errors import AttnMirrorError, DivergedError, InfeasibleError, MaxIterError
from .losses import LossKind
from .mirror import ConeSeed, NearZero, TrainConfig, train_attention, train_joint
from .model import globally_optimal_tokens
from .plotting import emit_svg
from .regpath import RpConfig, joint_rp, rp_sweep, sweep_to_csv
from .svm import solve_att_svm, solve_v_svm, head_svm_points

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE, EXIT_FAILED = 0, 1, 2, 3
SEED_ENV = "ATTN_MIRROR_SEED"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _floats(text):
    try:
        return tuple(float(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text):
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _common(p, *, p_default=2.0, iters=2000, normalize="on"):
    p.add_argument("--p", type=float, default=p_default)
    p.add_argument("--eta", type=float, default=0.1)
    p.add_argument("--iters", type=int, default=iters)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--loss", choices=("exp", "logistic"), default="logistic")
    p.add_argument("--normalize-grad", choices=("on", "off"), default=normalize)
    p.add_argument("--out", default=None, metavar="DIR")
    p.add_argument("--format", choices=("csv", "json", "svg"), default="csv")


def _data_args(p, example_default=None):
    p.add_argument("--example", type=int, choices=(1, 2), default=example_default)
    p.add_argument("--data", default=None, metavar="FILE", help="dataset JSON (as written by gen)")
    p.add_argument("--n", type=int, default=6)
    p.add_argument("--T", type=int, default=8)
    p.add_argument("--d", type=int, default=10)


def build_parser():
    top = _Parser(prog="attn-mirror", description="l_p mirror descent for softmax attention")
    sub = top.add_subparsers(dest="cmd", parser_class=_Parser)
    sub.required = True

    g = sub.add_parser("gen", help="write a dataset as JSON")
    _data_args(g)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default=None, metavar="DIR")

    s = sub.add_parser("svm", help="solve the attention or head SVM and print JSON")
    _data_args(s, example_default=None)
    s.add_argument("--p", type=float, default=2.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--alpha", type=_ints, default=None, help="selected token per sample (default: first token)")
    s.add_argument("--head", action="store_true", help="solve the head SVM on the selected tokens instead")
    s.add_argument("--out", default=None, metavar="DIR")

    t = sub.add_parser("train", help="mirror descent on W with a fixed head")
    _common(t)
    _data_args(t)
    t.add_argument("--record-every", type=int, default=10)
    t.add_argument("--init", choices=("near-zero", "zero", "cone"), default="near-zero")

    j = sub.add_parser("joint", help="joint mirror descent on (W, v)")
    _common(j)
    _data_args(j, example_default=2)
    j.add_argument("--record-every", type=int, default=10)
    j.add_argument("--init", choices=("near-zero", "zero"), default="near-zero")

    r = sub.add_parser("rp", help="regularization-path sweep")
    r.add_argument("--p", type=float, default=2.0)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--loss", choices=("exp", "logistic"), default="logistic")
    r.add_argument("--radii", type=_floats, default=(2.0, 4.0, 8.0, 16.0, 32.0))
    r.add_argument("--joint", action="store_true")
    r.add_argument("--r-schedule", type=_floats, default=(1.0, 0.8), metavar="C0,C1")
    r.add_argument("--fw-iters", type=int, default=5000)
    r.add_argument("--fw-tol", type=float, default=1e-10)
    r.add_argument("--out", default=None, metavar="DIR")
    r.add_argument("--format", choices=("csv", "json", "svg"), default="csv")
    _data_args(r)

    f = sub.add_parser("fig-corr", help="cross-p directional divergence experiment")
    f.add_argument("--p", type=_floats, default=ex.DEFAULT_PS, help="comma-separated exponents")
    f.add_argument("--trials", type=int, default=20)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--eta", type=float, default=0.1)
    f.add_argument("--iters", type=int, default=None, help="override every per-p budget")
    f.add_argument("--loss", choices=("exp", "logistic"), default="logistic")
    f.add_argument("--normalize-grad", choices=("on", "off"), default="on")
    f.add_argument("--workers", type=int, default=1)
    f.add_argument("--out", default=None, metavar="DIR")
    f.add_argument("--format", choices=("csv", "json", "svg"), default="json")
    f.add_argument("--n", type=int, default=6)
    f.add_argument("--T", type=int, default=8)
    f.add_argument("--d", type=int, default=10)

    c = sub.add_parser("check", help="empirical convergence-law checks")
    c.add_argument("what", choices=("rates", "growth"))
    _common(c, normalize=None)
    _data_args(c)
    c.add_argument("--record-every", type=int, default=10)

    gc = sub.add_parser("gradcheck", help="analytic gradients against central differences")
    gc.add_argument("--seed", type=int, default=42)
    gc.add_argument("--instances", type=int, default=20)
    gc.add_argument("--tol", type=float, default=1e-5)
    return top


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _seed(args):
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return args.seed


def _dataset(args, seed):
    """``(ds, v, alpha_hint)`` from ``--example``, ``--data`` or the generator."""
    if args.example == 1:
        ds, alpha = ex.example1_dataset()
        return ds, unit_sphere_vector(ds.d, make_rng(seed)), alpha
    if args.example == 2:
        ds = ex.example2_dataset()
        return ds, unit_sphere_vector(ds.d, make_rng(seed)), None
    if args.data:
        text = Path(args.data).read_text()
        ds = AttnDataset.from_json(text)
        doc = json.loads(text)
        v = np.asarray(doc["v"], dtype=np.float64) if "v" in doc else unit_sphere_vector(ds.d, make_rng(seed))
        return ds, v, None
    ds, v = ex.gen_synthetic(args.n, args.T, args.d, seed)
    return ds, v, None


def _emit(text, out_dir, name):
    if out_dir is None:
        sys.stdout.write(text)
        return
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    (Path(out_dir) / name).write_text(text)


def _traj_json(traj):
    return dumps({"p": traj.p, "columns": traj.columns(), "eta_halvings": traj.eta_halvings}, null_nonfinite=True) + "\n"


def _traj_svg(traj, title):
    cols = traj.columns()
    series = [{"label": "loss", "x": cols["iter"].tolist(), "y": cols["loss"].tolist()}]
    if np.any(np.isfinite(cols["dir_bregman"])):
        series.append({"label": "directional divergence", "x": cols["iter"].tolist(), "y": cols["dir_bregman"].tolist()})
    return emit_svg(series, {"title": title, "xlabel": "iteration", "logy": True})


def _write_traj(traj, args, experiment, summary):
    out = None if args.out is None else Path(args.out) / experiment / f"{traj.p:g}"
    render = {"csv": traj.to_csv, "json": lambda: _traj_json(traj), "svg": lambda: _traj_svg(traj, experiment)}
    if out is None:
        sys.stdout.write(render[args.format]())
        return
    out.mkdir(parents=True, exist_ok=True)
    (out / "trajectory.csv").write_text(traj.to_csv())
    (out / "summary.json").write_text(dumps(summary, null_nonfinite=True) + "\n")
    try:
        (out / "plot.svg").write_text(_traj_svg(traj, experiment))
    except AttnMirrorError:
        pass  # nothing plottable (e.g. a zero-iteration run at the origin)


def _train_cfg(args, init):
    return TrainConfig(
        eta=args.eta, max_iters=args.iters, loss=LossKind.parse(args.loss),
        normalize_grad=args.normalize_grad == "on", init=init, record_every=args.record_every,
    )


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_gen(args):
    seed = _seed(args)
    ds, v, _ = _dataset(args, seed)
    doc = json.loads(ds.to_json())
    doc["v"] = v.tolist()
    _emit(dumps(doc) + "\n", None if args.out is None else Path(args.out) / "gen", "dataset.json")
    return EXIT_OK


def cmd_svm(args):
    seed = _seed(args)
    ds, v, hint = _dataset(args, seed)
    if args.alpha is not None:
        alpha = np.array(args.alpha)
    elif hint is not None:
        alpha = hint
    else:
        alpha = np.zeros(ds.n, dtype=np.int64)
    if args.head:
        sol = solve_v_svm(head_svm_points(ds, alpha), args.p)
    else:
        sol = solve_att_svm(ds, alpha, args.p)
    sol.require_optimal()
    _emit(dumps(sol.to_dict(), null_nonfinite=True) + "\n", None if args.out is None else Path(args.out) / "svm", "solution.json")
    return EXIT_OK


def _reference_for(ds, alpha, p):
    try:
        return solve_att_svm(ds, alpha, p).require_optimal().weights
    except (InfeasibleError, MaxIterError) as exc:
        logging.getLogger(__name__).warning("no reference solution: %s", exc)
        return None


def cmd_train(args):
    seed = _seed(args)
    ds, v, hint = _dataset(args, seed)
    if args.init == "cone":
        alpha = hint if hint is not None else globally_optimal_tokens(v, ds)
        init = ConeSeed(solve_att_svm(ds, alpha, args.p).require_optimal().weights)
    else:
        init = NearZero(0.0 if args.init == "zero" else 1e-3, seed)
    W, traj = train_attention(ds, v, args.p, _train_cfg(args, init))
    alpha = traj.final_alpha()
    traj.reference = _reference_for(ds, alpha, args.p)
    summary = {
        "p": args.p, "iters": args.iters, "final_loss": float(traj.loss[-1]),
        "alpha": alpha.tolist(), "W": W.tolist(), "final_dir_bregman": float(traj.dir_bregman()[-1]),
    }
    _write_traj(traj, args, "train", summary)
    return EXIT_OK


def cmd_joint(args):
    seed = _seed(args)
    ds, _, _ = _dataset(args, seed)
    init = NearZero(0.0 if args.init == "zero" else 1e-3, seed)
    params, traj = train_joint(ds, args.p, _train_cfg(args, init))
    alpha = traj.final_alpha()
    traj.alpha = alpha
    traj.reference = _reference_for(ds, alpha, args.p)
    summary = {
        "p": args.p, "iters": args.iters, "alpha": alpha.tolist(),
        "W": params.W.tolist(), "v": params.v.tolist(),
        "mean_opt_softmax": float(traj.mean_opt_softmax()[-1]),
        "mean_logistic_prob": float(traj.mean_logistic_prob()[-1]),
    }
    _write_traj(traj, args, "joint", summary)
    return EXIT_OK


def cmd_rp(args):
    seed = _seed(args)
    if args.joint and args.example is None and args.data is None:
        args.example = 2
    ds, v, _ = _dataset(args, seed)
    cfg = RpConfig(
        p=args.p, radii=args.radii, loss=LossKind.parse(args.loss), fw_iters=args.fw_iters,
        fw_tol=args.fw_tol, joint=args.joint, r_schedule=tuple(args.r_schedule), seed=seed,
    )
    rows = joint_rp(ds, cfg) if args.joint else rp_sweep(ds, v, cfg)
    if args.format == "json":
        text = dumps([{k: getattr(r, k) for k in ("R", "r", "loss", "w_dir_div", "v_dir_div", "gap", "converged")} for r in rows], null_nonfinite=True) + "\n"
    elif args.format == "svg":
        series = [{"label": "W direction", "x": [r.R for r in rows], "y": [r.w_dir_div for r in rows]}]
        if args.joint:
            series.append({"label": "v direction", "x": [r.R for r in rows], "y": [r.v_dir_div for r in rows]})
        text = emit_svg(series, {"title": "regularization path", "xlabel": "R", "logy": True})
    else:
        text = sweep_to_csv(rows)
    name = {"csv": "sweep.csv", "json": "sweep.json", "svg": "plot.svg"}[args.format]
    _emit(text, None if args.out is None else Path(args.out) / "rp" / f"{args.p:g}", name)
    if not all(r.converged for r in rows):
        return EXIT_FAILED
    return EXIT_OK


def cmd_fig_corr(args):
    budgets = None if args.iters is None else {p: args.iters for p in args.p}
    spec = ex.ExperimentSpec(
        ps=args.p, trials=args.trials, seed=_seed(args), eta=args.eta, budgets=budgets,
        loss=LossKind.parse(args.loss), normalize_grad=args.normalize_grad == "on",
        out=args.out, workers=args.workers, n=args.n, T=args.T, d=args.d,
    )
    res = ex.run_fig_corr(spec)
    if args.out is None:
        if args.format == "csv":
            sys.stdout.write("".join(res.csv_for(p) for p in res.ps))
        elif args.format == "svg":
            sys.stdout.write(res.svg_for(res.ps[0]))
        else:
            sys.stdout.write(dumps(res.summary(), null_nonfinite=True) + "\n")
    return EXIT_OK


def cmd_check(args):
    seed = _seed(args)
    ds, v, hint = _dataset(args, seed)
    growth = args.what == "growth"
    if args.normalize_grad is None:
        # norm growth is a statement about plain steps from inside the cone
        args.normalize_grad = "off" if growth else "on"
    if growth:
        alpha = hint if hint is not None else globally_optimal_tokens(v, ds)
        init = ConeSeed(solve_att_svm(ds, alpha, args.p).require_optimal().weights)
    else:
        init = NearZero(1e-3, seed)
    _, traj = train_attention(ds, v, args.p, _train_cfg(args, init))
    traj.reference = solve_att_svm(ds, traj.final_alpha(), args.p).require_optimal().weights
    if growth:
        rep = ex.fit_log_growth(traj)
        rep.passed = rep.passed and ex.tail_nondecreasing(traj.pq_norm)
    else:
        rep = ex.rate_envelope_check(traj, args.p)
    sys.stdout.write(dumps(rep.to_dict(), null_nonfinite=True) + "\n")
    return EXIT_OK if rep.passed else EXIT_FAILED


def cmd_gradcheck(args):
    worst = ex.gradient_check(_seed(args), args.instances)
    ok = max(worst.values()) < args.tol
    sys.stdout.write(dumps({"instances": args.instances, "max_rel_error": worst, "passed": ok}) + "\n")
    return EXIT_OK if ok else EXIT_FAILED


COMMANDS = {
    "gen": cmd_gen, "svm": cmd_svm, "train": cmd_train, "joint": cmd_joint, "rp": cmd_rp,
    "fig-corr": cmd_fig_corr, "check": cmd_check, "gradcheck": cmd_gradcheck,
}


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.cmd](args)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_USAGE
    except InfeasibleError as exc:
        sys.stderr.write(f"infeasible: {exc}\n")
        return EXIT_INFEASIBLE
    except (DivergedError, MaxIterError) as exc:
        sys.stderr.write(f"{type(exc).__name__}: {exc}\n")
        return EXIT_FAILED
    except (AttnMirrorError, ValueError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
