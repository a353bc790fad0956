"""Command-line driver: ``greenlearn <subcommand> --config CFG [--desk] [--seed N] [--out DIR] [--set k=v]``.

Subcommands write into the output directory::

    generate     data/train, data/test             (inputs.csv, outputs.csv, meta.json)
    train        model/, history.csv
    evaluate     metrics.json
    extrapolate  extrapolation.csv
    spectra      spectra/kernel_eigs.csv, spectra/input_cov_eigs.csv, spectra/spectra.json
    export       export/greens.csv, export/bias.csv, export/x_grid.csv, export/y_grid.csv
    all          every step above in order
"""

import argparse
import json
import os
import sys

import numpy as np

from . import config as cfgmod
from .estimator import GreensModel, _kernel_op, _pair_points, assemble_bias, assemble_greens, forward, load_model, save_model
from .exceptions import ConfigError
from .grid import Grid, make_tensor_grid, split_axes
from .kernels import kernel_from_dict
from .pde_data import analytic_green, load_dataset, make_dataset, save_dataset
from .spectral import mercer_eig
from .training import TrainConfig, mse, per_sample_rse, rse, solve_direct, solve_ridge_exact, train

SUBCOMMANDS = ("generate", "train", "evaluate", "extrapolate", "spectra", "export", "all")
MAX_SPECTRA_POINTS = 1600


def _fmt(v):
    return format(float(v), ".17g")


def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        if header:
            fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) if not isinstance(v, (int, np.integer)) else str(v)
                              for v in row) + "\n")


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _paths(cfg):
    out = cfg["out"]
    return {
        "out": out,
        "train": os.path.join(out, "data", "train"),
        "test": os.path.join(out, "data", "test"),
        "model": os.path.join(out, "model"),
    }


def _test_set(cfg, problem, m):
    return make_dataset(problem, cfg["data"]["n_test"], cfg_rng(cfg, "test", m), m=m)


def cfg_rng(cfg, *tags):
    return cfgmod.seed_for(cfg["seed"], *tags)


# ---------------------------------------------------------------------------
# steps


def cmd_generate(cfg):
    p = _paths(cfg)
    problem = cfgmod.build_problem(cfg)
    m = problem.m
    ds = make_dataset(problem, cfg["data"]["n_train"], cfg_rng(cfg, "train", m), m=m,
                      noise=cfg["data"]["noise"])
    save_dataset(ds, p["train"])
    save_dataset(_test_set(cfg, problem, m), p["test"])
    cfgmod.dump_config(cfg, os.path.join(p["out"], "config.yaml"))
    return ds


def _build_model(cfg, ds):
    mc = cfg["model"]
    kB = mc.get("kernel_B")
    return GreensModel(
        kernel_from_dict(mc["kernel_G"]),
        ds.x_grid,
        ds.y_grid,
        kernel_B=kernel_from_dict(kB) if kB else None,
        null_G=mc.get("null_G") or None,
        null_B=mc.get("null_B") or None,
        lam=float(mc["lam"]),
        rho=float(mc["rho"]),
    )


def cmd_train(cfg, verbose=False):
    p = _paths(cfg)
    ds = load_dataset(p["train"])
    model = _build_model(cfg, ds)
    tc = cfg["train"]
    solver = tc["solver"]
    if solver == "adam":
        conf = TrainConfig(
            epochs=int(tc["epochs"]),
            batch_size=min(int(tc["batch_size"]), ds.n),
            learning_rate=float(tc["learning_rate"]),
            adam_beta1=float(tc["adam_beta1"]),
            adam_beta2=float(tc["adam_beta2"]),
            adam_eps=float(tc["adam_eps"]),
            amsgrad=bool(tc["amsgrad"]),
            seed=int(cfg_rng(cfg, "shuffle").integers(2**31)),
        )
        hist = train(model, ds.inputs, ds.outputs, conf, verbose=verbose)
    elif solver == "direct":
        solve_direct(model, ds.inputs, ds.outputs)
        hist = None
    else:
        if model.bias:
            raise ConfigError(["train.solver"], "the ridge solver does not fit a bias term")
        sol = solve_ridge_exact(model.kernel_G, model.null_G, ds.inputs, ds.outputs,
                                model.x_grid, model.y_grid, model.lam)
        model.set_params_dict({"W": sol.W, "d": sol.d})
        hist = None
    if hist is None:
        pred = forward(model, ds.inputs)
        m = mse(pred, ds.outputs, model.y_grid)
        hist = {"epoch": [0], "mse": [m], "rse": [rse(pred, ds.outputs, model.y_grid)],
                "risk": [m], "wall_time": [0.0]}
    save_model(model, p["model"])
    keys = ["epoch", "risk", "mse", "rse", "wall_time"]
    _write_csv(os.path.join(p["out"], "history.csv"), keys, zip(*(hist[k] for k in keys)))
    return model, hist


def _split_metrics(model, ds):
    pred = forward(model, ds.inputs)
    per = per_sample_rse(pred, ds.outputs, ds.y_grid)
    return {
        "mse": mse(pred, ds.outputs, ds.y_grid),
        "rse": rse(pred, ds.outputs, ds.y_grid),
        "per_sample_rse": [float(v) for v in per],
        "best": int(np.argmin(per)),
        "worst": int(np.argmax(per)),
    }


def greens_oracle(cfg, x_grid, y_grid):
    """Analytic Green's function on the model grids, when one is known."""
    kind = cfg["problem"]["kind"]
    if kind not in ("poisson1d", "helmholtz1d"):
        return None
    x = x_grid.points[:, 0]
    y = y_grid.points[:, 0]
    params = cfg["problem"].get("params") or {}
    if kind == "poisson1d":
        return analytic_green("poisson1d", x[:, None], y[None, :])
    return analytic_green("helmholtz1d", x[:, None], y[None, :], omega=params.get("omega", 20.0))


def cmd_evaluate(cfg):
    p = _paths(cfg)
    model = load_model(p["model"])
    metrics = {
        "name": cfg["name"],
        "seed": cfg["seed"],
        "train": _split_metrics(model, load_dataset(p["train"])),
        "test": _split_metrics(model, load_dataset(p["test"])),
    }
    G_true = greens_oracle(cfg, model.x_grid, model.y_grid)
    if G_true is not None:
        G = assemble_greens(model)
        w = model.weight_outer
        metrics["greens_rse"] = float(np.sum((G - G_true) ** 2 * w) / np.sum(G_true**2 * w))
    _write_json(os.path.join(p["out"], "metrics.json"), metrics)
    return metrics


def cmd_extrapolate(cfg):
    p = _paths(cfg)
    model = load_model(p["model"])
    problem = cfgmod.build_problem(cfg)
    rows = []
    for m in cfg["extrapolate"]["grids"]:
        ds = _test_set(cfg, problem, int(m))
        pred = forward(model, ds.inputs, ds.x_grid, ds.y_grid)
        rows.append((int(m), rse(pred, ds.outputs, ds.y_grid), mse(pred, ds.outputs, ds.y_grid)))
    _write_csv(os.path.join(p["out"], "extrapolation.csv"), ["m", "rse", "mse"], rows)
    return rows


def cmd_spectra(cfg):
    """Mercer spectrum of ``kernel_G`` on a coarse pair grid and of the empirical input covariance."""
    p = _paths(cfg)
    out = os.path.join(p["out"], "spectra")
    os.makedirs(out, exist_ok=True)
    sc = cfg["spectra"]
    problem = cfgmod.build_problem(cfg)
    # the kernel matrix is dense: coarsen until the pair grid is small enough
    m = int(sc["m"])
    while True:
        xg, yg = problem.grids(m)
        if xg.size * yg.size <= MAX_SPECTRA_POINTS or m <= 2:
            break
        m -= 1
    pair = make_tensor_grid_pair(xg, yg)
    kernel = kernel_from_dict(cfg["model"]["kernel_G"])
    top = min(int(sc["top_k"]), pair.size)
    # structured operator applied to unit vectors: cheaper than pointwise series evaluation
    Kmat = _kernel_op(kernel, [xg, yg], [xg, yg])(np.eye(pair.size)).T
    rep_k = mercer_eig(0.5 * (Kmat + Kmat.T), pair, top)
    rep_k.metadata["kernel"] = kernel.to_dict()
    ds = load_dataset(p["train"])
    Fc = ds.inputs - ds.inputs.mean(axis=0)
    C = Fc.T @ Fc / max(ds.n - 1, 1)
    rep_c = mercer_eig(C, ds.x_grid, min(int(sc["top_k"]), ds.x_grid.size))
    _write_csv(os.path.join(out, "kernel_eigs.csv"), ["k", "eigenvalue"], rep_k.to_rows())
    _write_csv(os.path.join(out, "input_cov_eigs.csv"), ["k", "eigenvalue"], rep_c.to_rows())
    summary = {
        "kernel_grid_size": pair.size,
        "kernel_decay": list(rep_k.decay_fit) if rep_k.decay_fit else None,
        "input_cov_decay": list(rep_c.decay_fit) if rep_c.decay_fit else None,
    }
    _write_json(os.path.join(out, "spectra.json"), summary)
    return rep_k, rep_c


def make_tensor_grid_pair(xg, yg):
    """Product grid ``D_X x D_Y`` (coordinates of x first, then y)."""
    if xg.is_tensor and yg.is_tensor:
        return make_tensor_grid(split_axes(xg) + split_axes(yg))
    pts = _pair_points(xg, yg)
    w = np.multiply.outer(xg.weights, yg.weights).ravel()
    return Grid(points=pts, weights=w, bounds=tuple(xg.bounds) + tuple(yg.bounds))


def cmd_export(cfg, m=None):
    p = _paths(cfg)
    model = load_model(p["model"])
    out = os.path.join(p["out"], "export")
    os.makedirs(out, exist_ok=True)
    xt = yt = None
    if m is not None:
        xt, yt = cfgmod.build_problem(cfg).grids(int(m))
    xg, yg = xt or model.x_grid, yt or model.y_grid
    G = assemble_greens(model, xt, yt)
    np.savetxt(os.path.join(out, "greens.csv"), G, delimiter=",", fmt="%.17g")
    if model.bias:
        np.savetxt(os.path.join(out, "bias.csv"), assemble_bias(model, yt)[None, :],
                   delimiter=",", fmt="%.17g")
    np.savetxt(os.path.join(out, "x_grid.csv"), xg.points, delimiter=",", fmt="%.17g")
    np.savetxt(os.path.join(out, "y_grid.csv"), yg.points, delimiter=",", fmt="%.17g")
    return G


# ---------------------------------------------------------------------------
# entry point


def build_parser():
    ap = argparse.ArgumentParser(prog="greenlearn", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True,
                    help="YAML config path or bundled name (" + ", ".join(cfgmod.bundled_configs()) + ")")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--desk", action="store_true", help="apply the config's reduced-scale block")
    ap.add_argument("--out", default=None, help="output directory")
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    ap.add_argument("--export-m", type=int, default=None, help="export on an m-point grid")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def run(command, cfg, verbose=False, export_m=None):
    if command in ("generate", "all"):
        cmd_generate(cfg)
    if command in ("train", "all"):
        cmd_train(cfg, verbose)
    if command in ("evaluate", "all"):
        cmd_evaluate(cfg)
    if command in ("extrapolate", "all"):
        cmd_extrapolate(cfg)
    if command in ("spectra", "all"):
        cmd_spectra(cfg)
    if command in ("export", "all"):
        cmd_export(cfg, export_m)
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = cfgmod.load_config(args.config, desk=args.desk, overrides=args.overrides,
                                 seed=args.seed, out=args.out)
        os.makedirs(cfg["out"], exist_ok=True)
        return run(args.command, cfg, args.verbose, args.export_m)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"not found: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
