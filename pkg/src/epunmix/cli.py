"""Command line front end: ``epunmix {synth,unmix,refine,eval,rerun}``.

Exit codes: 0 success, 1 numerical failure, 2 usage or input error.
Every run writes ``manifest.json``; ``epunmix rerun manifest.json --out d``
replays it.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import default_fcls_delta, fcls
from .dataio import (
    SCHEMA,
    read_cube,
    read_cube_array,
    read_library,
    read_noise,
    write_cube,
    write_library,
    write_noise,
)
from .em import run_em
from .ep import run_ep
from .kernels import logistic
from .metrics import evaluate
from .model import EPUnmixError, Hyperparams, NumericalError
from .synth import generate_scene

logger = logging.getLogger("epunmix")

EXIT_OK, EXIT_NUMERICAL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _manifest(args, command, argv, outputs, started, **extra):
    return {
        "schema": SCHEMA,
        "version": __version__,
        "command": command,
        "argv": list(argv),
        "outputs": sorted(str(p) for p in outputs),
        "elapsed_s": time.perf_counter() - started,
        **extra,
    }


def _hyper(args) -> Hyperparams:
    fields = dict(
        slab_variance=args.slab_v,
        ising_beta=args.beta,
        damping=args.damping,
        asc_delta=args.asc_delta,
        ep_tolerance=args.tol,
        max_ep_iters=args.max_iters,
    )
    for key, attr in (
        ("tv_lambda", "lam"),
        ("admm_rho", "rho"),
        ("max_em_iters", "em_iters"),
        ("em_tolerance", "em_tol"),
    ):
        if hasattr(args, attr):
            fields[key] = getattr(args, attr)
    try:
        return Hyperparams(**fields)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _write_maps(out: Path, post, width, height):
    return [
        write_cube(out / "abundances.bin", post.means, width, height),
        write_cube(out / "std.bin", post.std, width, height),
        write_cube(out / "presence.bin", logistic(post.logits), width, height),
    ]


def _load_inputs(args, library_path):
    image = read_cube(args.cube)
    lib = read_library(library_path)
    if lib.bands != image.bands:
        raise UsageError(f"library has {lib.bands} bands, cube has {image.bands}")
    noise = None
    if args.noise is not None:
        noise = read_noise(args.noise)
        if noise.n_bands != image.bands:
            raise UsageError(f"noise model has {noise.n_bands} bands, cube has {image.bands}")
    return image, lib, noise


def cmd_synth(args, argv):
    started = time.perf_counter()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        scene = generate_scene(
            args.width, args.height, args.endmembers, args.bands,
            regions=args.regions, sparsity=args.sparsity, asc=not args.no_asc,
            seed=args.seed, snr_db=args.snr, noise_shape=args.noise_shape,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    w, h = scene.width, scene.height
    outputs = [
        write_cube(out / "scene.bin", scene.image),
        write_cube(out / "abundances_true.bin", scene.abundances, w, h),
        write_cube(out / "support_true.bin", scene.support.astype(np.float64), w, h),
        write_library(out / "library.csv", scene.endmembers),
        write_noise(out / "noise.json", scene.noise),
    ]
    _write_json(out / "manifest.json", _manifest(args, "synth", argv, outputs, started, seed=args.seed, snr_db=scene.snr_db))
    return EXIT_OK


def cmd_unmix(args, argv):
    started = time.perf_counter()
    out = Path(args.out)
    image, lib, noise = _load_inputs(args, args.library)
    hyper = _hyper(args)
    out.mkdir(parents=True, exist_ok=True)
    extra = {"hyperparams": dataclasses.asdict(hyper), "method": args.method}
    if args.method == "fcls":
        delta = args.fcls_delta if args.fcls_delta is not None else default_fcls_delta(image)
        x = fcls(image, lib, delta)
        outputs = [write_cube(out / "abundances.bin", x, image.width, image.height)]
        extra.update(fcls_delta=delta, maps="abundances only; FCLS gives no std or presence maps")
    else:
        if noise is None:
            raise UsageError("--noise is required for --method ep")
        post, report = run_ep(image, lib, noise, hyper, threads=args.threads)
        outputs = _write_maps(out, post, image.width, image.height)
        extra.update(report=report.to_dict(), threads=args.threads)
    _write_json(out / "manifest.json", _manifest(args, "unmix", argv, outputs, started, **extra))
    return EXIT_OK


def cmd_refine(args, argv):
    started = time.perf_counter()
    out = Path(args.out)
    if args.init_library is None:
        raise UsageError("refine needs --init-library")
    image, lib, noise = _load_inputs(args, args.init_library)
    if noise is None:
        raise UsageError("refine needs --noise")
    hyper = _hyper(args)
    out.mkdir(parents=True, exist_ok=True)
    s, post, report = run_em(image, lib, noise, hyper, threads=args.threads)
    outputs = _write_maps(out, post, image.width, image.height)
    outputs.append(write_library(out / "library_refined.csv", s))
    trace = {"schema": SCHEMA, **report.to_dict()}
    _write_json(out / "trace.json", trace)
    outputs.append(out / "trace.json")
    extra = {"hyperparams": dataclasses.asdict(hyper), "threads": args.threads, "em_iterations": report.iterations}
    _write_json(out / "manifest.json", _manifest(args, "refine", argv, outputs, started, **extra))
    return EXIT_OK


def cmd_eval(args, argv):
    x_true, *_ = read_cube_array(args.truth)
    x_est, *_ = read_cube_array(args.estimate)
    if x_true.shape != x_est.shape:
        raise UsageError(f"abundance shapes differ: {x_true.shape} vs {x_est.shape}")
    s_true = s_est = None
    if args.truth_library is not None or args.estimate_library is not None:
        if args.truth_library is None or args.estimate_library is None:
            raise UsageError("give both --truth-library and --estimate-library")
        s_true = read_library(args.truth_library).spectra
        s_est = read_library(args.estimate_library).spectra
        if s_true.shape != s_est.shape:
            raise UsageError(f"library shapes differ: {s_true.shape} vs {s_est.shape}")
    if args.match and s_true is None:
        raise UsageError("--match needs both libraries")
    report = evaluate(x_true, x_est, s_true, s_est, match=args.match).to_dict()
    text = json.dumps(report, indent=2, sort_keys=True) + "\n"
    if args.out is None:
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text)
    return EXIT_OK


def cmd_rerun(args, argv):
    manifest = json.loads(Path(args.manifest).read_text())
    if manifest.get("schema") != SCHEMA:
        raise UsageError(f"not an {SCHEMA} manifest")
    old = list(manifest["argv"])
    i = old.index("--out")
    old[i + 1] = args.out
    return main(old)


def _add_ep_flags(p):
    d = Hyperparams()
    p.add_argument("--cube", required=True)
    p.add_argument("--noise", help="noise description JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--slab-v", type=float, default=d.slab_variance)
    p.add_argument("--beta", type=float, default=d.ising_beta)
    p.add_argument("--damping", type=float, default=d.damping)
    p.add_argument("--asc-delta", type=float, default=d.asc_delta)
    p.add_argument("--tol", type=float, default=d.ep_tolerance)
    p.add_argument("--max-iters", type=int, default=d.max_ep_iters)
    p.add_argument("--threads", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="epunmix", description="Sparse spectral unmixing with EP.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene")
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--endmembers", type=int, required=True)
    p.add_argument("--bands", type=int, required=True)
    p.add_argument("--snr", type=float, default=30.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--regions", type=int, default=12)
    p.add_argument("--sparsity", type=int, default=3)
    p.add_argument("--no-asc", action="store_true", help="abundances sum to at most one instead of exactly one")
    p.add_argument("--noise-shape", choices=("isotropic", "diagonal"), default="isotropic")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("unmix", help="abundance estimation with a fixed library")
    _add_ep_flags(p)
    p.add_argument("--library", required=True)
    p.add_argument("--method", choices=("ep", "fcls"), default="ep")
    p.add_argument("--fcls-delta", type=float)
    p.set_defaults(func=cmd_unmix)

    d = Hyperparams()
    p = sub.add_parser("refine", help="semi-supervised EM refinement of the library")
    _add_ep_flags(p)
    p.add_argument("--init-library")
    p.add_argument("--lambda", dest="lam", type=float, default=d.tv_lambda)
    p.add_argument("--rho", type=float, default=d.admm_rho)
    p.add_argument("--em-iters", type=int, default=d.max_em_iters)
    p.add_argument("--em-tol", type=float, default=d.em_tolerance)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("eval", help="score estimates against ground truth")
    p.add_argument("--truth", required=True, help="true abundance cube")
    p.add_argument("--estimate", required=True, help="estimated abundance cube")
    p.add_argument("--truth-library")
    p.add_argument("--estimate-library")
    p.add_argument("--match", action="store_true", help="align endmembers by minimum total SAD first")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("rerun", help="replay a run from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rerun)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, argv)
    except (NumericalError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"epunmix: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (UsageError, EPUnmixError, ValueError, OSError, KeyError) as exc:
        print(f"epunmix: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
