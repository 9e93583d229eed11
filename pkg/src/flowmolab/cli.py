"""Command-line surface: training, sampling, profiling and diagnostics.

Subcommands: train, corpus, sample, variance-profile, guidance-effect,
visualize, ablate. Every command is deterministic given its config (all
seeds live in the config); flags override config-file values. Exit codes:
0 success, 1 config error, 2 missing input, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import (
    ConfigError,
    MissingInputError,
    RunConfig,
    load_config,
    parse_index_set,
    require_file,
)
from .freeinit import FreqFilterSpec, freeinit_sample
from .guidance import GuidanceConfig, flowmo_loss
from .model import Architecture, ToyVelocityModel
from .pgm import write_frames
from .rng import Rng, derive_seed
from .sampler import NoiseSchedule, cfg_combine, sample
from .synth import LABEL_IDS, build_corpus, read_manifest
from .tensors import NumericError, TensorFormatError, tensor_read, tensor_write
from .training import TrainConfig, train_fm

VARIANTS = ("MEAN_LOSS", "NO_DEBIAS", "ALL_STEPS")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("FLOWMO_THREADS", "1")))
    except ValueError:
        return 1


def _pmap(fn, items):
    """Order-preserving map, optionally threaded (FLOWMO_THREADS)."""
    n = worker_count()
    if n <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out.dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _checkpoint_path(cfg: RunConfig) -> Path:
    p = Path(cfg.model.checkpoint)
    return p if p.is_absolute() else Path(cfg.out.dir) / p


def _architecture(cfg: RunConfig) -> Architecture:
    return Architecture(
        in_channels=cfg.data.channels,
        hidden=cfg.model.hidden,
        kernel=cfg.model.kernel,
        temb_width=cfg.model.temb_width,
        cemb_width=cfg.model.cemb_width,
        vocab=cfg.model.vocab,
    )


def _schedule(cfg: RunConfig) -> NoiseSchedule:
    return NoiseSchedule.uniform(cfg.schedule.steps, cfg.schedule.strategy)


def _load_model(cfg: RunConfig) -> ToyVelocityModel:
    path = require_file(_checkpoint_path(cfg), "model checkpoint")
    return ToyVelocityModel.load(path)


def _guidance_config(cfg: RunConfig, **overrides) -> GuidanceConfig:
    g = cfg.guidance
    kwargs = dict(
        eta=g.eta,
        refine_steps=parse_index_set(g.refine_steps),
        rho=cfg.sample.rho,
        optimizer=g.optimizer,
        inner_iterations=g.inner_iterations,
        grad_through_uncond=g.grad_through_uncond,
    )
    kwargs.update(overrides)
    return GuidanceConfig(**kwargs)


def _load_dataset(cfg: RunConfig):
    manifest = require_file(cfg.data.manifest, "corpus manifest")
    items = read_manifest(manifest)
    dataset = []
    for item in items:
        require_file(item.path, "corpus tensor")
        dataset.append((tensor_read(item.path), LABEL_IDS[item.label]))
    return items, dataset


def _trace_rows(trace):
    for rec in trace:
        yield (
            rec.step,
            rec.t,
            rec.sigma,
            rec.loss_before,
            rec.loss_after,
            rec.argmax_w,
            rec.argmax_h,
            rec.refined,
        )


TRACE_HEADER = [
    "step", "t", "sigma", "loss_before", "loss_after",
    "argmax_w", "argmax_h", "refined",
]


def cmd_train(cfg: RunConfig) -> int:
    _, dataset = _load_dataset(cfg)
    out = _out_dir(cfg)
    arch = _architecture(cfg)
    model = ToyVelocityModel.initialize(arch, derive_seed(cfg.train.seed, 101))
    tc = TrainConfig(
        steps=cfg.train.steps,
        batch_size=cfg.train.batch_size,
        learning_rate=cfg.train.learning_rate,
        seed=cfg.train.seed,
        cond_dropout=cfg.train.cond_dropout,
    )
    trained, losses = train_fm(model, dataset, tc)
    ckpt = _checkpoint_path(cfg)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    trained.save(ckpt)
    write_csv(out / "train_loss.csv", ["step", "loss"],
              [(i, loss) for i, loss in enumerate(losses)])
    print(f"trained {tc.steps} steps -> {ckpt}")
    return 0


def cmd_corpus(cfg: RunConfig) -> int:
    manifest_path = Path(cfg.data.manifest)
    manifest = build_corpus(
        cfg.data.n_per_class,
        cfg.data.dims,
        manifest_path.parent,
        base_seed=cfg.data.corpus_seed,
        blob_count=cfg.data.blob_count,
        blob_radius=cfg.data.blob_radius,
    )
    print(f"corpus with {2 * cfg.data.n_per_class} videos -> {manifest}")
    return 0


def _run_one_sample(cfg, model, schedule, seed, mode, guidance=None):
    dims = cfg.data.dims
    if mode == "freeinit":
        fi = cfg.freeinit
        spec = FreqFilterSpec(
            order=fi.order,
            spatial_cutoff=fi.spatial_cutoff,
            temporal_cutoff=fi.temporal_cutoff,
        )
        return freeinit_sample(
            model, dims, schedule, cfg.sample.cond, seed, cfg.sample.rho,
            rounds=fi.rounds, spec=spec, t_renoise=fi.t_renoise,
        )
    return sample(
        model, dims, schedule, cfg.sample.cond, seed, cfg.sample.rho,
        guidance=guidance,
    )


def cmd_sample(cfg: RunConfig, mode: str = "plain") -> int:
    model = _load_model(cfg)
    schedule = _schedule(cfg)
    out = _out_dir(cfg)
    guidance = _guidance_config(cfg) if mode == "guided" else None
    seeds = parse_index_set(cfg.sample.seeds)
    for seed in seeds:
        z, trace = _run_one_sample(cfg, model, schedule, seed, mode, guidance)
        tensor_write(z, out / f"sample_seed{seed}.fmt")
        write_csv(out / f"trace_seed{seed}.csv", TRACE_HEADER, _trace_rows(trace))
        if cfg.sample.dump_denoised and mode != "freeinit":
            _, dtrace = sample(
                model, cfg.data.dims, schedule, cfg.sample.cond, seed,
                cfg.sample.rho, guidance=guidance, record_denoised=True,
            )
            for rec in dtrace:
                tensor_write(
                    rec.denoised, out / f"denoised_seed{seed}_step{rec.step:04d}.fmt"
                )
    print(f"wrote {len(seeds)} samples ({mode}) -> {out}")
    return 0


def profile_video(model, schedule, rho, video, label_id, noise_seed):
    """max/mean coherence map stats of the model prediction along the
    interpolation path of one video; returns one row per schedule step."""
    z0 = Rng(noise_seed).normal(video.shape)
    rows = []
    for i, t in enumerate(schedule.timesteps):
        zt = (1.0 - t) * video + t * z0
        u_cond = model.forward(zt, t, label_id)
        u_uncond = model.forward(zt, t, None)
        u = cfg_combine(u_cond, u_uncond, rho)
        bd = flowmo_loss(u)
        rows.append((i, float(bd.map.mean()), float(bd.map.max())))
    return rows


def cmd_variance_profile(cfg: RunConfig) -> int:
    model = _load_model(cfg)
    schedule = _schedule(cfg)
    out = _out_dir(cfg)
    items, dataset = _load_dataset(cfg)

    def work(pair):
        item, (video, label_id) = pair
        rows = profile_video(
            model, schedule, cfg.sample.rho, video, label_id,
            derive_seed(item.seed, 777),
        )
        return [
            (item.path.name, item.label, step, mean_s, max_s)
            for step, mean_s, max_s in rows
        ]

    results = _pmap(work, list(zip(items, dataset)))
    all_rows = [row for rows in results for row in rows]
    path = write_csv(
        out / "variance_profile.csv",
        ["video", "label", "step", "mean_s", "max_s"],
        all_rows,
    )
    print(f"profiled {len(items)} videos -> {path}")
    return 0


def cmd_guidance_effect(cfg: RunConfig) -> int:
    model = _load_model(cfg)
    schedule = _schedule(cfg)
    out = _out_dir(cfg)
    guidance = _guidance_config(cfg)
    seeds = [cfg.guidance_effect.base_seed + i
             for i in range(cfg.guidance_effect.n_seeds)]

    def work(seed):
        _, guided = sample(
            model, cfg.data.dims, schedule, cfg.sample.cond, seed,
            cfg.sample.rho, guidance=guidance,
        )
        _, plain = sample(
            model, cfg.data.dims, schedule, cfg.sample.cond, seed, cfg.sample.rho
        )
        return [
            (seed, g.step, g.loss_after, p.loss_after)
            for g, p in zip(guided, plain)
        ]

    results = _pmap(work, seeds)
    rows = [row for rows in results for row in rows]
    path = write_csv(
        out / "guidance_effect.csv",
        ["seed", "step", "max_s_guided", "max_s_unguided"],
        rows,
    )
    print(f"paired runs over {len(seeds)} seeds -> {path}")
    return 0


def cmd_visualize(cfg: RunConfig, latent_path, channel: int) -> int:
    video = tensor_read(require_file(latent_path, "latent tensor"))
    out = _out_dir(cfg)
    paths = write_frames(video, channel, out)
    print(f"wrote {len(paths)} frames -> {out}")
    return 0


def cmd_ablate(cfg: RunConfig, variant: str) -> int:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}, expected {VARIANTS}")
    model = _load_model(cfg)
    schedule = _schedule(cfg)
    out = _out_dir(cfg)
    if variant == "MEAN_LOSS":
        guidance = _guidance_config(cfg, aggregate="mean")
    elif variant == "NO_DEBIAS":
        guidance = _guidance_config(cfg, debias=False)
    else:
        guidance = _guidance_config(cfg, refine_steps=tuple(range(len(schedule))))
    seeds = parse_index_set(cfg.sample.seeds)
    grad_norms = []
    for seed in seeds:
        _, trace = sample(
            model, cfg.data.dims, schedule, cfg.sample.cond, seed,
            cfg.sample.rho, guidance=guidance,
        )
        write_csv(
            out / f"trace_{variant}_seed{seed}.csv", TRACE_HEADER,
            _trace_rows(trace),
        )
        grad_norms.extend(r.grad_norm for r in trace if r.refined)
    mean_norm = float(np.mean(grad_norms)) if grad_norms else 0.0
    print(f"ablation {variant}: mean refine gradient norm {mean_norm!r} -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowmo",
        description="flow-matching video lab with temporal-coherence guidance",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI config file")
        p.add_argument("--seed", type=int, help="override the command's base seed")
        p.add_argument("--out", help="override the output directory")

    common(sub.add_parser("train", help="train the velocity model"))
    common(sub.add_parser("corpus", help="build the synthetic corpus"))
    p = sub.add_parser("sample", help="sample videos")
    common(p)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--plain", action="store_true", help="no guidance (default)")
    group.add_argument("--guided", action="store_true",
                       help="temporal-coherence guidance")
    group.add_argument("--baseline", choices=["freeinit"],
                       help="frequency re-initialization baseline")
    common(sub.add_parser("variance-profile",
                          help="coherence map stats over the corpus"))
    common(sub.add_parser("guidance-effect",
                          help="paired guided/unguided comparison"))
    p = sub.add_parser("visualize", help="write grayscale PGM frames")
    common(p)
    p.add_argument("latent", help="FMT1 tensor file")
    p.add_argument("--channel", type=int, default=0)
    p = sub.add_parser("ablate", help="run a loss/window ablation variant")
    common(p)
    p.add_argument("--variant", required=True, choices=VARIANTS)
    return parser


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if args.out is not None:
        cfg = replace(cfg, out=replace(cfg.out, dir=args.out))
    if args.seed is not None:
        seed = int(args.seed)
        cfg = replace(
            cfg,
            train=replace(cfg.train, seed=seed),
            data=replace(cfg.data, corpus_seed=seed),
            sample=replace(cfg.sample, seeds=str(seed)),
            guidance_effect=replace(cfg.guidance_effect, base_seed=seed),
        )
    return cfg


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = _apply_overrides(load_config(args.config), args)
    if args.command == "train":
        return cmd_train(cfg)
    if args.command == "corpus":
        return cmd_corpus(cfg)
    if args.command == "sample":
        mode = "plain"
        if args.guided:
            mode = "guided"
        elif args.baseline:
            mode = "freeinit"
        return cmd_sample(cfg, mode)
    if args.command == "variance-profile":
        return cmd_variance_profile(cfg)
    if args.command == "guidance-effect":
        return cmd_guidance_effect(cfg)
    if args.command == "visualize":
        return cmd_visualize(cfg, args.latent, args.channel)
    if args.command == "ablate":
        return cmd_ablate(cfg, args.variant)
    raise ConfigError(f"unknown command {args.command!r}")


def main() -> None:
    try:
        sys.exit(run())
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        sys.exit(3)
    except (MissingInputError, FileNotFoundError, TensorFormatError) as exc:
        print(f"missing or unreadable input: {exc}", file=sys.stderr)
        sys.exit(2)
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        sys.exit(1)


if __name__ == "__main__":
    main()
