"""Command-line pipeline: simulate, preprocess, train, localize, evaluate, render.

Every subcommand writes its artifacts into ``--out`` together with the
fully-resolved configuration (``config.resolved.json``) and a provenance
record (``run.json``).
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy
import scipy.fft as sfft

from . import __version__, classic, io, metrics, net, simgen
from .config import SMALL_TRAIN, ConfigError, PipelineConfig, load_config
from .grid import FrameKind, FrameSequence, InvalidParameterError, LocalizationSet, PsfModel, SeedSpec
from .ista import ForwardOp, IstaConfig, ista_solve, power_iteration_L
from .preprocess import PreprocessConfig, Roi, preprocess, svd_spectrum

log = logging.getLogger("ulmsr")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DIVERGENCE = 4


def default_phantom(grid) -> simgen.VesselPhantom:
    """Two parallel horizontal vessels 62.5 um apart plus one oblique vessel."""
    w, h = grid.extent_um
    hr = grid.hr_pixel_um
    y0 = (grid.hr_height // 2 - 1.5) * hr
    return simgen.VesselPhantom(vessels=[
        simgen.Vessel([[0.1 * w, y0], [0.9 * w, y0]], 2.0, 40.0, 0.02),
        simgen.Vessel([[0.1 * w, y0 + 2 * hr], [0.9 * w, y0 + 2 * hr]], 2.0, 40.0, 0.02),
        simgen.Vessel([[0.2 * w, 0.15 * h], [0.8 * w, 0.35 * h]], 10.0, 30.0, 0.02),
    ])


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class Run:
    """Collects outputs and writes the resolved config and ``run.json``."""

    def __init__(self, command: str, cfg: PipelineConfig, out: Path, inputs=()):
        self.command = command
        self.cfg = cfg
        self.out = Path(out)
        self.inputs = [Path(p) for p in inputs if p is not None]
        self.outputs: list[Path] = []
        self.t0 = time.time()
        self.extra: dict = {}

    def path(self, name: str) -> Path:
        p = self.out / name
        self.outputs.append(p)
        return p

    def finish(self):
        io.write_json(self.out / "config.resolved.json", self.cfg.to_dict())
        t1 = time.time()
        io.write_json(self.out / "run.json", {
            "command": self.command,
            "config_sha256": self.cfg.digest(),
            "seed": self.cfg.seed,
            "versions": {
                "ulmsr": __version__,
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "python": platform.python_version(),
            },
            "inputs": {str(p): _sha256(p) for p in self.inputs if p.is_file()},
            "outputs": {p.name: _sha256(p) for p in self.outputs if p.is_file()},
            "timings": {"started": self.t0, "finished": t1, "elapsed_s": t1 - self.t0},
            **self.extra,
        })


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args, cfg: PipelineConfig) -> Run:
    grid = cfg.grid.spec()
    seed = SeedSpec(cfg.seed)
    run = Run("simulate", cfg, args.out, [args.phantom])
    if args.samples:
        frames, truth, _ = simgen.gen_frames(cfg.distributions, grid, seed, args.samples, stream=7)
        io.write_sequence(run.path("ceus.urf"), FrameSequence(frames, cfg.simulate.frame_rate_hz, FrameKind.CEUS,
                                                              grid.lr_pixel_um))
        io.write_localizations(run.path("truth.csv"), truth)
        return run
    phantom_src = args.phantom or cfg.simulate.phantom
    ph = simgen.VesselPhantom.from_dict(io.read_json(phantom_src)) if phantom_src else default_phantom(grid)
    ceus, bmode, truth = simgen.gen_phantom_sequence(ph, grid, cfg.simulate.n_frames, PsfModel(cfg.simulate.psf_sigma_lr),
                                                     seed, cfg.simulate.frame_rate_hz)
    io.write_sequence(run.path("ceus.urf"), ceus)
    io.write_sequence(run.path("bmode.urf"), bmode)
    io.write_localizations(run.path("truth.csv"), truth)
    io.write_json(run.path("phantom.json"), ph.to_dict())
    return run


def cmd_preprocess(args, cfg: PipelineConfig) -> Run:
    run = Run("preprocess", cfg, args.out, [args.ceus, args.bmode])
    ceus = io.read_sequence(args.ceus)
    bmode = io.read_sequence(args.bmode) if args.bmode else None
    pc = cfg.preprocess
    if bmode is None:
        bmode = FrameSequence(ceus.frames, ceus.frame_rate_hz, FrameKind.BMODE, ceus.pixel_um)
        pc = PreprocessConfig(**{**pc.__dict__, "register": False})
    result = preprocess(ceus, bmode, pc)
    out = run.path("filtered.urf")
    io.write_sequence(out, result.ceus)
    meta = io.read_json(io.meta_path(out))
    meta["source_frames"] = result.source_frames.tolist()
    io.write_json(io.meta_path(out), meta)
    io.write_json(run.path("report.json"), result.report())
    run.extra["n_subsequences"] = len(result.subsequences)
    return run


def cmd_svd_spectrum(args, cfg: PipelineConfig) -> Run:
    run = Run("svd-spectrum", cfg, args.out, [args.ceus])
    s = svd_spectrum(io.read_sequence(args.ceus))
    io.write_csv(run.path("spectrum.csv"), ("index", "singular_value"), [(i, repr(float(v))) for i, v in enumerate(s)])
    return run


def cmd_train(args, cfg: PipelineConfig) -> Run:
    run = Run("train", cfg, args.out)
    grid = cfg.grid.spec()
    ckpt = net.train(cfg.distributions, grid, cfg.train, cfg.net)
    ckpt.save(run.path("checkpoint.json"))
    run.outputs.append(run.out / "checkpoint.bin")
    io.write_csv(run.path("loss.csv"), ("epoch", "train_loss", "val_loss"), net.loss_curve_rows(ckpt.history))
    return run


def _source_frames(path, n):
    meta_file = io.meta_path(path)
    if meta_file.exists():
        src = io.read_json(meta_file).get("source_frames")
        if src is not None and len(src) == n:
            return np.asarray(src, dtype=np.int64)
    return np.arange(n)


def localize_frames(frames, method: str, cfg: PipelineConfig, ckpt: net.Checkpoint | None = None):
    """Localizations and per-frame HR outputs (``None`` for the classic path)."""
    grid = cfg.grid.spec().with_shape(frames.shape[2], frames.shape[1])
    if method == "classic":
        return classic.localize_sequence(frames, cfg.classic, grid), None
    if method == "net":
        if ckpt is None:
            raise InvalidParameterError("--checkpoint is required for --method net")
        if ckpt.grid.upsample != grid.upsample or ckpt.grid.lr_pixel_um != grid.lr_pixel_um:
            raise InvalidParameterError("checkpoint grid does not match the configured grid")
        outs, locs = net.infer_sequence(frames, ckpt, cfg.infer)
        return locs, outs
    if method == "ista":
        ic = cfg.ista
        op = ForwardOp(grid, ic.psf())
        L = power_iteration_L(op, 50, cfg.seed)
        x = net.normalize_sequence(frames, cfg.infer.percentile)
        outs, parts = [], []
        for t, f in enumerate(x):
            hr = ista_solve(f, op, ic.solver(), L)
            outs.append(hr)
            parts.append(net.detect_peaks(hr, grid, t, ic.detect_threshold))
        return LocalizationSet.concat(parts), np.stack(outs)
    raise InvalidParameterError(f"unknown method {method!r}")


def cmd_localize(args, cfg: PipelineConfig) -> Run:
    run = Run("localize", cfg, args.out, [args.input, args.checkpoint])
    seq = io.read_sequence(args.input)
    ckpt = net.Checkpoint.load(args.checkpoint) if args.checkpoint else None
    locs, _ = localize_frames(seq.frames, args.method, cfg, ckpt)
    src = _source_frames(args.input, len(seq))
    if len(locs):
        locs = LocalizationSet(src[locs.frame_index], locs.x_um, locs.y_um, locs.intensity)
    io.write_localizations(run.path("localizations.csv"), locs)
    grid = cfg.grid.spec().with_shape(seq.shape[1], seq.shape[0])
    acc, dropped = classic.accumulate(locs, grid, cfg.render.accumulate_mode, return_dropped=True)
    io.write_bytes(run.path("map.urf"), io.encode_urf(acc))
    run.extra.update({"method": args.method, "n_localizations": len(locs), "dropped_out_of_bounds": dropped})
    return run


def cmd_evaluate(args, cfg: PipelineConfig) -> Run:
    run = Run("evaluate", cfg, args.out, [args.pred, args.truth])
    report = metrics.match_localizations(io.read_localizations(args.pred), io.read_localizations(args.truth),
                                         cfg.evaluate.tolerance_um)
    io.write_json(run.path("report.json"), report.to_dict())
    return run


def cmd_render(args, cfg: PipelineConfig) -> Run:
    run = Run("render", cfg, args.out, [args.map])
    acc = io.decode_urf(Path(args.map).read_bytes())[0].astype(float)
    img = metrics.render_map(np.maximum(acc, 0), cfg.render.gamma, cfg.render.blur_sigma_px)
    io.write_bytes(run.path("map.pgm"), io.encode_pgm16(img))
    if args.profile:
        line = [float(v) for v in args.profile.split(",")]
        prof = metrics.resolution_probe(acc, line, width=args.profile_width)
        io.write_csv(run.path("profile.csv"), ("distance_px", "value"),
                     [(repr(float(d)), repr(float(v))) for d, v in zip(prof.distance, prof.values)])
        io.write_json(run.path("profile.json"), {"n_peaks": prof.n_peaks, "peaks": prof.peaks.tolist(),
                                                 "dip_ratio": prof.dip_ratio})
    return run


# ---------------------------------------------------------------------------


def _apply_overrides(args, cfg: PipelineConfig) -> PipelineConfig:
    cfg = cfg.override("", seed=getattr(args, "seed", None))
    cmd = args.command
    if cmd == "simulate":
        cfg = cfg.override("simulate", n_frames=args.n_frames)
    elif cmd == "preprocess":
        roi = list(Roi.parse(args.roi).__dict__.values()) if args.roi else None
        cfg = cfg.override("preprocess", roi=roi, corr_threshold=args.corr_threshold, min_len=args.min_len,
                           svd_low=args.svd_low, svd_high=args.svd_high,
                           washout=False if args.no_washout else None,
                           register=False if args.no_register else None,
                           anchored=True if args.anchored else None)
    elif cmd == "train":
        if args.small:
            cfg = cfg.override("train", **SMALL_TRAIN)
        cfg = cfg.override("train", lr=args.lr, lam=args.lam, batch_size=args.batch_size, epochs=args.epochs,
                           steps_per_epoch=args.steps_per_epoch, seed=args.seed)
        cfg = cfg.override("net", n_blocks=args.blocks, kernel_size=args.kernel_size)
    elif cmd == "localize":
        cfg = cfg.override("ista", lam=args.lam, mu=args.mu, max_iters=args.iters)
        cfg = cfg.override("infer", detect_threshold=args.detect_threshold)
    elif cmd == "evaluate":
        cfg = cfg.override("evaluate", tolerance_um=args.tolerance)
    elif cmd == "render":
        cfg = cfg.override("render", gamma=args.gamma, blur_sigma_px=args.blur)
    return cfg


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ulmsr", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="JSON pipeline config")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int)
        sp.add_argument("-v", "--verbose", action="store_true")
        sp.set_defaults(func=fn)
        return sp

    sp = add("simulate", cmd_simulate, "simulate a vessel phantom (or independent training scenes)")
    sp.add_argument("--phantom", help="phantom JSON")
    sp.add_argument("--n-frames", type=int)
    sp.add_argument("--samples", type=int, help="write N independent training scenes instead of a phantom")

    sp = add("preprocess", cmd_preprocess, "wash-out trim, subsequencing, registration, SVD filter")
    sp.add_argument("--ceus", required=True)
    sp.add_argument("--bmode")
    sp.add_argument("--roi", help="x0,y0,w,h in LR pixels")
    sp.add_argument("--corr-threshold", type=float)
    sp.add_argument("--min-len", type=int)
    sp.add_argument("--svd-low", type=int)
    sp.add_argument("--svd-high", type=int)
    sp.add_argument("--no-washout", action="store_true")
    sp.add_argument("--no-register", action="store_true")
    sp.add_argument("--anchored", action="store_true", help="correlate against the first frame of each run")

    sp = add("svd-spectrum", cmd_svd_spectrum, "singular values of the Casorati matrix")
    sp.add_argument("--ceus", required=True)

    sp = add("train", cmd_train, "train the unrolled network on synthetic data")
    sp.add_argument("--small", action="store_true", help="desk-scale preset: batch 16, 100 epochs x 50 steps")
    sp.add_argument("--lr", type=float)
    sp.add_argument("--lam", type=float)
    sp.add_argument("--batch-size", type=int)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--steps-per-epoch", type=int)
    sp.add_argument("--blocks", type=int)
    sp.add_argument("--kernel-size", type=int)

    sp = add("localize", cmd_localize, "localize bubbles frame by frame and accumulate")
    sp.add_argument("--input", required=True)
    sp.add_argument("--method", choices=("net", "ista", "classic"), default="net")
    sp.add_argument("--checkpoint")
    sp.add_argument("--lam", type=float)
    sp.add_argument("--mu", type=float)
    sp.add_argument("--iters", type=int)
    sp.add_argument("--detect-threshold", type=float)

    sp = add("evaluate", cmd_evaluate, "match localizations against ground truth")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--truth", required=True)
    sp.add_argument("--tolerance", type=float, help="match radius in um")

    sp = add("render", cmd_render, "render an accumulated map as 16-bit PGM")
    sp.add_argument("--map", required=True)
    sp.add_argument("--gamma", type=float)
    sp.add_argument("--blur", type=float)
    sp.add_argument("--profile", help="x0,y0,x1,y1 probe segment in HR pixels")
    sp.add_argument("--profile-width", type=int, default=1, help="average this many parallel lines")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    threads = int(os.environ.get("ULM_THREADS", "1") or 1)
    try:
        cfg = _apply_overrides(args, load_config(args.config))
        with sfft.set_workers(max(threads, 1)):
            run = args.func(args, cfg)
        run.finish()
    except (ConfigError, InvalidParameterError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except net.DivergenceError as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (OSError, io.FormatError, json.JSONDecodeError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
