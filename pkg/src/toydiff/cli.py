"""Command-line driver for the toy inversion/editing pipeline.

Stages read and write a single output directory::

    config.ini                 effective configuration of the run
    manifests/<stage>.txt      inputs, outputs (with sha256), config hash, seed
    data/train, data/eval      PGM images plus manifest.txt
    model.ckpt, loss.csv
    traj/NNNNN.traj
    recon/<mode>/latents.bin   plus one PGM per image
    tracks/NNNNN.ptrk, .csv    per-step rewritten embeddings (mirror mode)
    edit/latents.bin           plus edit/<mirror|plain>/*.pgm
    metrics/*.csv, summary.txt, grids/*.pgm

Exit status: 0 ok, 2 bad config or usage, 3 missing input, 4 output
exists, 5 stage failure.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import os
import shutil
import sys
from pathlib import Path

import numpy as np

from . import data as dt
from . import editing, inversion, metrics, mirror
from .config import ConfigError, RunConfig
from .container import ContainerError, read_container, write_container
from .model import Denoiser
from .training import train, write_loss_csv

log = logging.getLogger("toydiff")

OUT_ENV = "TOYDIFF_OUT"
MANIFEST_VERSION = 1
MODES = ("plain", "mirror", "simple-align")
STAGES = ("generate-data", "train", "invert", "reconstruct", "edit", "eval")


class MissingInputError(RuntimeError):
    pass


class OutputExistsError(RuntimeError):
    pass


class StageError(RuntimeError):
    pass


EXIT_CODES = {ConfigError: 2, MissingInputError: 3, OutputExistsError: 4, StageError: 5}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class Run:
    """One output directory under one effective configuration."""

    def __init__(self, cfg: RunConfig, out: Path, overwrite: bool = False):
        self.cfg = cfg
        self.out = Path(out)
        self.overwrite = overwrite

    def path(self, rel) -> Path:
        return self.out / rel

    def require(self, *rels) -> list[Path]:
        paths = [self.path(r) for r in rels]
        missing = [str(p) for p in paths if not p.exists()]
        if missing:
            raise MissingInputError(f"missing inputs {missing}; run the earlier stages first")
        return paths

    def claim(self, *rels) -> None:
        """Refuse to clobber existing outputs unless overwriting was asked for."""
        taken = [r for r in rels if self.path(r).exists()]
        if taken and not self.overwrite:
            raise OutputExistsError(f"outputs already exist in {self.out}: {taken}; pass --overwrite to replace")
        for r in taken:
            p = self.path(r)
            shutil.rmtree(p) if p.is_dir() else p.unlink()

    def write_config(self) -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        p = self.path("config.ini")
        text = self.cfg.dump()
        if p.exists() and p.read_text() != text:
            old = RunConfig.load(p)
            if old.hash() != self.cfg.hash() and not self.overwrite:
                raise OutputExistsError(
                    f"{self.out} holds a run with config hash {old.hash()}, this run is {self.cfg.hash()}; "
                    "pass --overwrite or choose another --out"
                )
        p.write_text(text)

    def write_manifest(self, stage: str, inputs, outputs, extra: dict | None = None) -> Path:
        lines = [
            f"stage = {stage}",
            f"format_version = {MANIFEST_VERSION}",
            f"config_hash = {self.cfg.hash()}",
            f"seed = {self.cfg['run.seed']}",
        ]
        for k, v in (extra or {}).items():
            lines.append(f"{k} = {v}")
        for kind, rels in (("input", inputs), ("output", outputs)):
            for rel in rels:
                p = self.path(rel)
                files = sorted(f for f in p.rglob("*") if f.is_file()) if p.is_dir() else [p]
                for f in files:
                    lines.append(f"{kind} {f.relative_to(self.out).as_posix()} sha256={_sha256(f)}")
        mdir = self.path("manifests")
        mdir.mkdir(exist_ok=True)
        name = stage if not extra or "mode" not in extra else f"{stage}-{extra['mode']}"
        p = mdir / f"{name}.txt"
        p.write_text("\n".join(lines) + "\n")
        return p

    # -- shared loaders -----------------------------------------------------

    def model(self) -> Denoiser:
        (p,) = self.require("model.ckpt")
        return Denoiser.load(p)

    def eval_images(self):
        (p,) = self.require("data/eval/manifest.txt")
        imgs, labels, _ = dt.read_dataset(p)
        return imgs, labels

    def trajectories(self) -> list[inversion.Trajectory]:
        self.require("traj")
        files = sorted(self.path("traj").glob("*.traj"))
        if not files:
            raise MissingInputError(f"no trajectories in {self.path('traj')}")
        return [inversion.Trajectory.load(f) for f in files]


# -- stages ---------------------------------------------------------------------


def stage_generate_data(run: Run) -> None:
    run.claim("data")
    train_ds = dt.generate(run.cfg.dataset_spec())
    eval_ds = dt.generate(run.cfg.eval_spec())
    dt.write_dataset(train_ds, run.path("data/train"))
    dt.write_dataset(eval_ds, run.path("data/eval"))
    log.info("wrote %d training and %d eval images", len(train_ds), len(eval_ds))
    run.write_manifest("generate-data", [], ["data"])


def stage_train(run: Run) -> None:
    (mpath,) = run.require("data/train/manifest.txt")
    run.claim("model.ckpt", "loss.csv")
    imgs, labels, seeds = dt.read_dataset(mpath)
    ds = dt.Dataset([dt.ToyImage(im, lab, sd, (0.0, 0.0), 0.0, 0.0) for im, lab, sd in zip(imgs, labels, seeds)])
    v = run.cfg.values
    m = Denoiser.init(imgs.shape[1:], sorted(set(labels)), v["model.width"], v["model.time_dim"], v["model.cond_dim"],
                      v["schedule.T_train"], v["run.seed"], v["schedule.beta_start"], v["schedule.beta_end"],
                      v["model.parameterization"])
    m, curve = train(m, run.cfg.schedule(), ds, run.cfg.train_config())
    m.save(run.path("model.ckpt"))
    write_loss_csv(run.path("loss.csv"), curve)
    log.info("final epoch loss %.4f", curve[-1])
    run.write_manifest("train", ["data/train"], ["model.ckpt", "loss.csv"])


def stage_invert(run: Run) -> None:
    m = run.model()
    imgs, labels = run.eval_images()
    run.claim("traj")
    run.path("traj").mkdir()
    s, g = run.cfg.schedule(), run.cfg.guidance()
    guided = run.cfg["guidance.invert_guided"]
    for i, (img, lab) in enumerate(zip(imgs, labels)):
        traj = inversion.invert(m, s, editing.encode(img), m.embed_label(lab), g, guided)
        traj.save(run.path(f"traj/{i:05d}.traj"))
        log.info("inverted %d: |zT|^2/dim = %.3f", i, float(np.mean(traj.zT**2)))
    run.write_manifest("invert", ["model.ckpt", "data/eval"], ["traj"])


def stage_reconstruct(run: Run, mode: str) -> None:
    if mode not in MODES:
        raise ConfigError(f"unknown reconstruction mode {mode!r}; choose from {MODES}")
    m = run.model()
    trajs = run.trajectories()
    outs = [f"recon/{mode}"] + (["tracks"] if mode == "mirror" else [])
    run.claim(*outs)
    rdir = run.path(f"recon/{mode}")
    rdir.mkdir(parents=True)
    s, g, rcfg = run.cfg.schedule(), run.cfg.guidance(), run.cfg.rewrite()
    if mode == "mirror":
        run.path("tracks").mkdir()
    latents, extra = [], []
    for i, traj in enumerate(trajs):
        if mode == "plain":
            z = inversion.reconstruct_plain(m, s, traj).z0
        elif mode == "mirror":
            res = mirror.mirror_reconstruct(m, s, g, traj, rcfg)
            res.track.save(run.path(f"tracks/{i:05d}.ptrk"))
            res.track.write_csv(run.path(f"tracks/{i:05d}.csv"))
            z = res.z0
        else:
            res = mirror.simple_align_reconstruct(m, s, g, traj, rcfg)
            extra.append(res.c_shared)
            z = res.z0
        latents.append(z)
        dt.write_image(rdir / f"{i:05d}.pgm", editing.decode(z))
        log.info("%s reconstruction %d: rel displacement %.4f", mode, i, metrics.rel_displacement(traj.z0, z))
    arrays = {"latents": np.stack(latents)}
    if extra:
        arrays["c_shared"] = np.stack(extra)
    write_container(rdir / "latents.bin", b"LATS", {"mode": mode}, arrays)
    run.write_manifest("reconstruct", ["model.ckpt", "traj"], outs, {"mode": mode})


def stage_edit(run: Run, strength: float | None = None) -> None:
    strength = run.cfg["eval.strength"] if strength is None else float(strength)
    m = run.model()
    trajs = run.trajectories()
    run.require("tracks")
    tracks = sorted(run.path("tracks").glob("*.ptrk"))
    if len(tracks) != len(trajs):
        raise MissingInputError(f"found {len(tracks)} prompt tracks for {len(trajs)} trajectories; "
                                "run `reconstruct --mode mirror` first")
    run.claim("edit")
    s, g = run.cfg.schedule(), run.cfg.guidance()
    gap = editing.domain_gap(m, [run.cfg["eval.source"]], [run.cfg["eval.target"]])
    out = {"mirror": [], "plain": []}
    for i, (traj, tp) in enumerate(zip(trajs, tracks)):
        out["mirror"].append(editing.edit_sample(m, s, g, traj, mirror.PromptTrack.load(tp), gap, strength))
        out["plain"].append(editing.edit_sample(m, s, g, traj, None, gap, strength))
    for kind, zs in out.items():
        d = run.path(f"edit/{kind}")
        d.mkdir(parents=True)
        for i, z in enumerate(zs):
            dt.write_image(d / f"{i:05d}.pgm", editing.decode(z))
    write_container(run.path("edit/latents.bin"), b"LATS", {"strength": strength},
                    {k: np.stack(v) for k, v in out.items()})
    log.info("edited %d images at strength %g", len(trajs), strength)
    run.write_manifest("edit", ["model.ckpt", "traj", "tracks"], ["edit"], {"strength": repr(strength)})


def stage_eval(run: Run) -> None:
    imgs, _ = run.eval_images()
    (tpath,) = run.require("data/train/manifest.txt")
    modes = [md for md in MODES if run.path(f"recon/{md}/latents.bin").exists()]
    has_edit = run.path("edit/latents.bin").exists()
    if not modes and not has_edit:
        raise MissingInputError("nothing to evaluate: no reconstructions or edits found")
    run.claim("metrics", "grids")
    run.path("metrics").mkdir()
    run.path("grids").mkdir()
    timgs, tlabels, _ = dt.read_dataset(tpath)
    clf = metrics.train_oracle(timgs, tlabels, seed=run.cfg["run.seed"], epochs=run.cfg["eval.oracle_epochs"])
    summary = {"oracle_heldout_accuracy": clf.heldout_accuracy}
    decoded, reports = {}, {}
    for md in modes:
        _, arr = read_container(run.path(f"recon/{md}/latents.bin"), b"LATS")
        decoded[md] = arr["latents"]
    if has_edit:
        meta, arr = read_container(run.path("edit/latents.bin"), b"LATS")
        summary["edit_strength"] = meta["strength"]
        for kind in ("mirror", "plain"):
            decoded[f"edit-{kind}"] = arr[kind]
    for name, zs in decoded.items():
        if len(zs) != len(imgs):
            raise StageError(f"{name}: {len(zs)} latents for {len(imgs)} eval images")
        rep = metrics.MetricReport()
        for i, (src, z) in enumerate(zip(imgs, zs)):
            rep.add(f"{i:05d}", src, editing.decode(z, src.shape), clf, latent=z.reshape(src.shape))
        rep.write_csv(run.path(f"metrics/{name}.csv"), title=name)
        reports[name] = rep
        agg = rep.aggregate()
        summary[f"{name}.mean_rel_displacement"] = agg["mean_rel_displacement"]
        summary[f"{name}.mean_ssim"] = agg["mean_ssim"]
    if "plain" in reports and "mirror" in reports:
        p = np.array([r["rel_displacement"] for r in reports["plain"].rows])
        q = np.array([r["rel_displacement"] for r in reports["mirror"].rows])
        summary["mirror_over_plain_displacement"] = float(q.mean() / p.mean())
        sp = np.array([r["ssim"] for r in reports["plain"].rows])
        sq = np.array([r["ssim"] for r in reports["mirror"].rows])
        summary["ssim_mirror_ge_plain_fraction"] = float(np.mean(sq >= sp))
    target = run.cfg["eval.target"]
    for kind in ("mirror", "plain"):
        if f"edit-{kind}" in reports:
            rows = reports[f"edit-{kind}"].rows
            summary[f"edit-{kind}.target_fraction"] = float(np.mean([r["oracle_label"] == target for r in rows]))
    for i, src in enumerate(imgs):
        panel = [src] + [editing.decode(decoded[k][i], src.shape) for k in ("plain", "mirror", "edit-mirror")
                         if k in decoded]
        dt.write_image(run.path(f"grids/{i:05d}.pgm"), dt.image_grid(panel))
    with open(run.path("metrics/summary.txt"), "w") as fh:
        for k, v in summary.items():
            fh.write(f"{k} = {v!r}\n")
    for k, v in summary.items():
        log.info("%s = %s", k, v)
    inputs = ["data"] + [f"recon/{md}" for md in modes] + (["edit"] if has_edit else [])
    run.write_manifest("eval", inputs, ["metrics", "grids"])


def stage_pipeline(run: Run, strength: float | None = None) -> None:
    stage_generate_data(run)
    stage_train(run)
    stage_invert(run)
    for md in MODES:
        stage_reconstruct(run, md)
    stage_edit(run, strength)
    stage_eval(run)


# -- argument handling ----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI config; unspecified keys take built-in defaults")
    common.add_argument("--out", metavar="DIR", help=f"output directory (beats ${OUT_ENV} and run.out)")
    common.add_argument("--seed", type=int, metavar="N", help="override run.seed")
    common.add_argument("--overwrite", action="store_true", help="replace existing stage outputs")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="toydiff", description="Toy diffusion inversion, reconstruction and editing.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate-data", parents=[common], help="render train and eval shape images")
    sub.add_parser("train", parents=[common], help="train the conditional denoiser")
    sub.add_parser("invert", parents=[common], help="invert eval images to noise latents")
    p = sub.add_parser("reconstruct", parents=[common], help="sample back from inverted latents")
    p.add_argument("--mode", choices=MODES, default="plain")
    p = sub.add_parser("edit", parents=[common], help="edit with rewritten embeddings plus the domain gap")
    p.add_argument("--strength", type=float, help="domain-gap multiplier (default eval.strength)")
    sub.add_parser("eval", parents=[common], help="score reconstructions and edits, write image grids")
    p = sub.add_parser("pipeline", parents=[common], help="all stages end to end")
    p.add_argument("--strength", type=float)
    sub.add_parser("show-config", parents=[common], help="print the effective configuration and its hash")
    return parser


def resolve(args) -> Run:
    cfg = RunConfig.load(args.config) if args.config else RunConfig.default()
    if args.seed is not None:
        cfg = cfg.replace(run__seed=args.seed)
    out = args.out or os.environ.get(OUT_ENV) or cfg["run.out"]
    return Run(cfg, Path(out), args.overwrite)


def run_command(args) -> None:
    run = resolve(args)
    if args.command == "show-config":
        sys.stdout.write(run.cfg.dump())
        sys.stdout.write(f"# config_hash = {run.cfg.hash()}\n")
        return
    run.write_config()
    log.info("output %s, config hash %s", run.out, run.cfg.hash())
    try:
        if args.command == "generate-data":
            stage_generate_data(run)
        elif args.command == "train":
            stage_train(run)
        elif args.command == "invert":
            stage_invert(run)
        elif args.command == "reconstruct":
            stage_reconstruct(run, args.mode)
        elif args.command == "edit":
            stage_edit(run, args.strength)
        elif args.command == "eval":
            stage_eval(run)
        elif args.command == "pipeline":
            stage_pipeline(run, args.strength)
    except (ContainerError, dt.PGMFormatError, FloatingPointError, ValueError, KeyError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise StageError(f"{args.command}: {type(exc).__name__}: {exc}") from exc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        run_command(args)
    except tuple(EXIT_CODES) as exc:
        category = type(exc).__name__
        print(f"error[{category}]: {exc}", file=sys.stderr)
        return EXIT_CODES[type(exc)]
    return 0


if __name__ == "__main__":
    sys.exit(main())
