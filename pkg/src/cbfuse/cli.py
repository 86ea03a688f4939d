"""``cbfuse`` command line: one subcommand per pipeline stage plus the grid runner."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import CbfuseError

log = logging.getLogger("cbfuse")


def _cmd_phantom(a):
    from .phantom import PhantomSpec, generate_phantom
    from .volio import store_volume

    ct, labels = generate_phantom(PhantomSpec(seed=a.seed, dims=tuple(a.dims), spacing=a.spacing))
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    store_volume(ct, out / "ct.cbv")
    store_volume(labels, out / "labels.cbv")
    print(f"wrote {out / 'ct.cbv'} and {out / 'labels.cbv'}")


def _cmd_project(a):
    from .projsim import forward_project, make_geometry, save_projections
    from .volio import load_volume

    p = forward_project(load_volume(a.inp), make_geometry(a.np))
    save_projections(p, a.out)
    print(f"wrote {a.out} ({p.images.shape[0]} views)")


def _cmd_reconstruct(a):
    from .fdk import ReconConfig, reconstruct
    from .projsim import load_projections
    from .volgrid import Grid
    from .volio import store_volume

    p = load_projections(a.inp)
    grid = Grid.centered(tuple(a.dims), a.spacing)
    store_volume(reconstruct(p, ReconConfig(grid, a.filter)), a.out)
    print(f"wrote {a.out}")


def _cmd_misalign(a):
    from .misalign import MisalignmentSpec, apply_misalignment, dump_params
    from .volio import load_volume, store_volume

    mode = "affine_only" if a.mode == "affine" else "affine_then_elastic"
    out, params = apply_misalignment(load_volume(a.inp), MisalignmentSpec(a.alpha_a, a.seed, mode),
                                     return_params=True)
    store_volume(out, a.out)
    if a.dump_params:
        dump_params(params, a.dump_params)
    print(f"wrote {a.out}")


def _cmd_fuse(a):
    from .exprunner import DataConfig, PairCache, build_dataset, save_dataset
    from .misalign import MisalignmentSpec

    spec = None
    if not a.cbct_only:
        mode = "affine_only" if a.mode == "affine" else "affine_then_elastic"
        spec = MisalignmentSpec(a.alpha_a, a.seed, mode)
    samples = build_dataset(a.n_phantoms, a.np, spec, DataConfig(base_seed=a.base_seed),
                            PairCache(a.cache))
    save_dataset(samples, a.out, split_seed=a.split_seed)
    print(f"wrote {len(samples)} samples to {a.out}")


def _cmd_train(a):
    from .exprunner import load_dataset
    from .nnet import TrainConfig, UNetConfig, build_unet, save_checkpoint, train

    cfg = json.loads(Path(a.config).read_text()) if a.config else {}
    parts = load_dataset(a.data)
    tr = [s.arrays() for s in parts["train"]]
    va = [s.arrays() for s in parts["val"]]
    ucfg = UNetConfig(in_channels=tr[0][0].shape[0], **cfg.get("unet", {}))
    tcfg = TrainConfig(**cfg.get("train", {}))
    model = build_unet(ucfg, seed=tcfg.seed)
    res = train(model, tr, tcfg, va)
    save_checkpoint(model, a.out, extra={"train": cfg.get("train", {}),
                                         "epoch_loss": res.epoch_loss,
                                         "val_loss": res.val_loss,
                                         "best_epoch": res.best_epoch})
    print(f"wrote {a.out}; final epoch loss {res.epoch_loss[-1]:.4f}")


def _cmd_eval(a):
    from .evalmetrics import DiceReport
    from .exprunner import load_dataset
    from .nnet import load_checkpoint, predict

    model, _ = load_checkpoint(a.model)
    rep = DiceReport()
    for s in load_dataset(a.data)[a.split]:
        x, _ = s.arrays()
        rep.add(predict(model, x), s.labels, a.threshold)
    out = json.dumps(rep.to_dict(), indent=2)
    if a.out:
        Path(a.out).write_text(out)
    print(out)


def _cmd_grid(a):
    from .exprunner import GridSpec, render_table, run_grid

    cfg = json.loads(Path(a.config).read_text()) if a.config else {}
    grid = GridSpec.from_dict(cfg)
    res = run_grid(grid, a.out, a.workers)
    print(render_table(res).to_markdown())


def _cmd_report(a):
    from .exprunner import GridResult, reference_table, render_table

    res = reference_table() if a.reference else GridResult.read_csv(a.results)
    base = GridResult.read_csv(a.baseline) if a.baseline else None
    table = render_table(res, base)
    text = table.to_csv() if a.format == "csv" else table.to_markdown()
    if a.out:
        Path(a.out).write_text(text)
    print(text, end="")


def build_parser():
    p = argparse.ArgumentParser(prog="cbfuse", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("phantom", help="generate a CT phantom and its labels")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--dims", type=int, nargs=3, default=[64, 64, 64])
    s.add_argument("--spacing", type=float, default=2.0)
    s.add_argument("--out", required=True, help="output directory")
    s.set_defaults(func=_cmd_phantom)

    s = sub.add_parser("project", help="simulate cone-beam projections of a volume")
    s.add_argument("--np", type=int, required=True, help="number of projections")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True, help=".cbp file")
    s.set_defaults(func=_cmd_project)

    s = sub.add_parser("reconstruct", help="FDK reconstruction of a .cbp file")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--filter", default="ramp", choices=["ramp", "ramp_hann"])
    s.add_argument("--dims", type=int, nargs=3, default=[64, 64, 64])
    s.add_argument("--spacing", type=float, default=2.0)
    s.set_defaults(func=_cmd_reconstruct)

    s = sub.add_parser("misalign", help="apply a random misalignment")
    s.add_argument("--alpha-a", type=float, required=True)
    s.add_argument("--mode", default="affine", choices=["affine", "elastic"])
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--dump-params", help="write sampled parameters as JSON")
    s.set_defaults(func=_cmd_misalign)

    s = sub.add_parser("fuse", help="build a fused dataset directory")
    s.add_argument("--n-phantoms", type=int, default=20)
    s.add_argument("--np", type=int, default=128)
    s.add_argument("--alpha-a", type=float, default=0.0)
    s.add_argument("--mode", default="affine", choices=["affine", "elastic"])
    s.add_argument("--seed", type=int, default=1000, help="misalignment seed")
    s.add_argument("--base-seed", type=int, default=0, help="first phantom seed")
    s.add_argument("--split-seed", type=int, default=0)
    s.add_argument("--cbct-only", action="store_true", help="omit the CT channel")
    s.add_argument("--cache", help="directory for cached CT/CBCT pairs")
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_fuse)

    s = sub.add_parser("train", help="train a U-Net on a dataset directory")
    s.add_argument("--config", help='JSON with optional "train" and "unet" sections')
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True, help="checkpoint path")
    s.set_defaults(func=_cmd_train)

    s = sub.add_parser("eval", help="Dice of a checkpoint on a dataset split")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--split", default="test", choices=["train", "val", "test"])
    s.add_argument("--threshold", type=float, default=0.5)
    s.add_argument("--out")
    s.set_defaults(func=_cmd_eval)

    s = sub.add_parser("grid", help="run the alpha_np x alpha_a grid")
    s.add_argument("--config", help="JSON grid config (axes, seeds, scale)")
    s.add_argument("--out", default="grid_out")
    s.add_argument("--workers", type=int, help="parallel cells (default CBFUSE_THREADS or 1)")
    s.set_defaults(func=_cmd_grid)

    s = sub.add_parser("report", help="render the results table")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--results", help="results.csv of a grid run")
    g.add_argument("--reference", action="store_true", help="use the shipped reference values")
    s.add_argument("--baseline", help="results.csv holding the base CBCT rows")
    s.add_argument("--format", default="md", choices=["md", "csv"])
    s.add_argument("--out")
    s.set_defaults(func=_cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except CbfuseError as exc:
        print(f"cbfuse: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
