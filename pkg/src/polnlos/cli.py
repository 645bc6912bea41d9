"""Command-line entry point: one subcommand per pipeline stage."""
import argparse
import sys
import warnings
from pathlib import Path

import numpy as np

from polnlos import __version__
from polnlos.conditioning import active_sweep, condition_number, roughness_sweep
from polnlos.io import (RunManifest, load_config, read_image, read_matrix, read_vector, sweep_rows,
                        write_csv, write_image, write_matrix)
from polnlos.metrics import ImageBuffer, psnr, ssim, zncc
from polnlos.reconstruct import AdmmParams, admm_tv_box, default_penalty
from polnlos.transport import (TruncationWarning, build_active, build_occluded, build_passive, forward,
                               synthetic_scene)


def _side_path(out, tag):
    out = Path(out)
    return out.with_name(f"{out.stem}.{tag}")


def _manifest(args, outputs, **params):
    m = RunManifest(config_path=str(getattr(args, "config", "") or ""), subcommand=args.command,
                    parameters=params, outputs=[str(p) for p in outputs], seed=args.seed)
    m.write(_side_path(outputs[0], "manifest.json"))
    return m


def _stamp(args):
    return {"seed": args.seed, "version": __version__}


def _passive_transport(cfg, polarizer):
    builder = build_occluded if cfg.occluders else build_passive
    return builder(cfg, use_polarizer=polarizer)


def _write_truth(out, T, truth, args):
    shape = T.scene_shape
    if len(shape) == 2:
        path = _side_path(out, "truth.pgm")
        write_image(ImageBuffer(truth.reshape(shape)), path, comment=f"polnlos {__version__} seed {args.seed}")
    else:
        path = _side_path(out, "truth.bin")
        write_matrix(truth, path, extra=_stamp(args))
    return path


def cmd_transport(args):
    cfg = load_config(args.config)
    T = _passive_transport(cfg, args.polarizer == "on")
    write_matrix(T, args.out, extra=_stamp(args))
    _manifest(args, [args.out], polarizer=args.polarizer)
    print(f"transport: {T.rows}x{T.cols} written to {args.out}")


def _simulate(args, T, cfg):
    truth = synthetic_scene(T.scene_shape, seed=args.seed)
    obs = forward(T, truth, noise_sigma=cfg.noise_sigma, seed=args.seed)
    write_matrix(obs, args.out, extra=_stamp(args))
    outputs = [args.out, _write_truth(args.out, T, truth, args)]
    if args.transport:
        write_matrix(T, args.transport, extra=_stamp(args))
        outputs.append(args.transport)
    _manifest(args, outputs, polarizer=args.polarizer, noise_sigma=cfg.noise_sigma)
    return obs


def cmd_simulate(args):
    cfg = load_config(args.config)
    T = _passive_transport(cfg, args.polarizer == "on")
    obs = _simulate(args, T, cfg)
    print(f"simulate: {obs.size} observations written to {args.out}")


def cmd_active_sim(args):
    cfg = load_config(args.config)
    if cfg.active is None:
        raise ValueError("config has no 'active' section")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", TruncationWarning)
        T = build_active(cfg, use_polarizer=args.polarizer == "on")
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    obs = _simulate(args, T, cfg)
    print(f"active-sim: {obs.size} transient samples written to {args.out}")


def cmd_cond(args):
    T = read_matrix(args.transport)
    k = condition_number(T)
    print(f"condition_number={k:.17g} rows={T.rows} cols={T.cols}")


def cmd_reconstruct(args):
    T = read_matrix(args.transport)
    obs = read_vector(args.obs)
    if obs.size != T.rows:
        raise ValueError(f"dimension mismatch: transport has {T.rows} rows, observation has {obs.size} entries")
    shape = T.scene_shape
    if len(shape) != 2 or T.col_meta.shape[1] != 2:
        raise ValueError("reconstruct needs a transport matrix over a 2-D scene grid")
    params = AdmmParams(reg_weight=args.tv, penalty=default_penalty(T), max_iters=args.max_iters)
    res = admm_tv_box(T, obs, params)
    img = ImageBuffer(res.estimate.reshape(shape))
    write_image(img, args.out, comment=f"polnlos {__version__} seed {args.seed}")
    _manifest(args, [args.out], tv=args.tv, penalty=params.penalty, iterations=res.iterations,
              converged=res.converged, objective=res.objective)
    print(f"reconstruct: {img.width}x{img.height} estimate written to {args.out} "
          f"({res.iterations} iterations, converged={res.converged})")


def _grid(args):
    if args.steps < 1:
        raise ValueError("--steps must be >= 1")
    if args.steps == 1:
        return [args.from_]
    return np.linspace(args.from_, args.to, args.steps).tolist()


def cmd_sweep(args):
    cfg = load_config(args.config)
    confs = ["unpolarized", "rotating", "polarized-single", "polarized-multi"]
    if cfg.occluders:
        confs += ["unpolarized-occluded", "polarized-single-occluded", "polarized-multi-occluded"]
    result = roughness_sweep(cfg, _grid(args), confs)
    header, rows = sweep_rows(result)
    write_csv(args.out, header, rows)
    _manifest(args, [args.out], param=args.param, start=args.from_, stop=args.to, steps=args.steps)
    print(f"sweep: {len(rows)} rows written to {args.out}")


def cmd_active_sweep(args):
    cfg = load_config(args.config)
    resolutions = cfg.extras.get("active_resolutions", [2, 3])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        result = active_sweep(cfg, _grid(args), resolutions)
    header, rows = sweep_rows(result)
    write_csv(args.out, header, rows)
    _manifest(args, [args.out], param=args.param, start=args.from_, stop=args.to, steps=args.steps,
              resolutions=list(resolutions))
    print(f"active-sweep: {len(rows)} rows written to {args.out}")


def cmd_metrics(args):
    ref, test = read_image(args.ref), read_image(args.test)
    if ref.pixels.shape != test.pixels.shape:
        raise ValueError(f"dimension mismatch: ref is {ref.width}x{ref.height}, test is {test.width}x{test.height}")
    vals = {"psnr": psnr(ref, test), "zncc": zncc(ref, test)}
    try:
        vals["ssim"] = ssim(ref, test)
    except ValueError:
        vals["ssim"] = float("nan")
    if args.out:
        write_csv(args.out, list(vals), [list(vals.values())])
    print(" ".join(f"{k}={v:.6g}" for k, v in vals.items()))


def build_parser():
    parser = argparse.ArgumentParser(prog="polnlos", description=__doc__)
    parser.add_argument("--version", action="version", version=f"polnlos {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_, *flags):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(func=fn)
        for flag in flags:
            flag(p)
        return p

    config = lambda p: p.add_argument("--config", required=True, help="scene config (JSON)")
    out = lambda p: p.add_argument("--out", required=True, help="output path")
    out_opt = lambda p: p.add_argument("--out", help="optional CSV output")
    pol = lambda p: p.add_argument("--polarizer", choices=("on", "off"), default="on")
    seed = lambda p: p.add_argument("--seed", type=int, default=0, help="random seed (u64)")
    trans_in = lambda p: p.add_argument("--transport", required=True, help="PNLT transport matrix")
    trans_out = lambda p: p.add_argument("--transport", help="also write the transport matrix here")

    def sweep_flags(p):
        p.add_argument("--param", choices=("roughness",), default="roughness")
        p.add_argument("--from", dest="from_", type=float, default=0.0)
        p.add_argument("--to", type=float, default=1.0)
        p.add_argument("--steps", type=int, default=11)

    def recon_flags(p):
        p.add_argument("--obs", required=True, help="PNLT observation vector")
        p.add_argument("--tv", type=float, default=1e-2, help="TV regularization weight")
        p.add_argument("--max-iters", dest="max_iters", type=int, default=3000)

    def metric_flags(p):
        p.add_argument("--ref", required=True, help="reference PGM")
        p.add_argument("--test", required=True, help="test PGM")

    add("simulate", cmd_simulate, "simulate passive observations of a synthetic scene",
        config, out, pol, seed, trans_out)
    add("transport", cmd_transport, "build the passive transport matrix", config, out, pol, seed)
    add("cond", cmd_cond, "print the condition number of a transport matrix", trans_in, seed)
    add("reconstruct", cmd_reconstruct, "TV-regularized reconstruction", trans_in, recon_flags, out, seed)
    add("sweep", cmd_sweep, "condition numbers over wall roughness", config, sweep_flags, out, seed)
    add("active-sim", cmd_active_sim, "simulate transient observations", config, out, pol, seed, trans_out)
    add("active-sweep", cmd_active_sweep, "active condition numbers over roughness and resolution",
        config, sweep_flags, out, seed)
    add("metrics", cmd_metrics, "PSNR, ZNCC and SSIM between two PGM images", metric_flags, out_opt, seed)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.seed < 0 or args.seed >= 2**64:
        parser.error("--seed must be an unsigned 64-bit integer")
    try:
        args.func(args)
    except (ValueError, OSError) as exc:
        print(f"polnlos {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
