"""``flipconcept`` command line.

Exit codes: 0 success, 1 config error, 2 I/O error, 3 numeric-contract
failure, 4 mask-disjointness failure.
"""
from __future__ import annotations

import argparse
import csv
import io as _io
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load_config
from .denoiser import build_denoiser, embed_prompt
from .errors import ConfigError, FlipConceptError, FormatError, NumericContractError
from .field import Rng, derive_seed, load_ltf, save_ltf
from .fixtures import write_fixtures
from .inversion import ddim_invert, invert, noise_map_stats, replay, save_track
from .io import atomic_write, read_pnm, write_json, write_pnm
from .masks import downsample_mask, load_mask
from .pipeline import ConceptInput, decode, encode, prepare, step

log = logging.getLogger("flipconcept")

RECON_TOLERANCE = 1e-4
CSV_HEADER = ["t", "var_ef", "var_ddim", "adj_corr"]


def load_latent(path: Path, cfg: RunConfig) -> np.ndarray:
    """Image or LTF1 file -> latent at latent resolution."""
    if path.suffix.lower() == ".ltf":
        z = load_ltf(path)
        if z.shape != cfg.latent_shape:
            raise FormatError(f"{path}: latent shape {z.shape} != expected {cfg.latent_shape}")
        return z
    img = read_pnm(path)
    shape = img.shape if img.ndim == 3 else (*img.shape, 1)
    if shape != (cfg.h, cfg.w, cfg.c):
        raise FormatError(f"{path}: image is {shape}, config says {(cfg.h, cfg.w, cfg.c)}")
    return encode(img, cfg.latent_factor)


def _denoiser(cfg: RunConfig):
    return build_denoiser(channels=cfg.c, **cfg.denoiser)


def _images(cfg: RunConfig):
    yield "background", cfg.background
    for i, spec in enumerate(cfg.concepts, start=1):
        yield f"concept_{i}", spec


def _inversion_seed(cfg: RunConfig, name: str) -> int:
    # same derivation as the pipeline so tracks written here match generate
    if name == "background":
        return derive_seed(cfg.seed, "background")
    return derive_seed(cfg.seed, "concept", int(name.split("_")[1]) - 1)


def cmd_make_fixtures(args) -> int:
    out = Path(args.out or ".")
    seed = args.seed if args.seed is not None else 0
    if not 0 <= seed < 2**64:
        raise ConfigError(f"seed must be a u64, got {seed}")
    path = write_fixtures(out, seed)
    print(f"wrote fixtures and {path}")
    return 0


def cmd_invert(cfg: RunConfig) -> int:
    d = _denoiser(cfg)
    s = cfg.blend_config().schedule()
    errors = {}
    for name, spec in _images(cfg):
        x0 = load_latent(spec.image_path, cfg)
        cond = embed_prompt(spec.prompt, d.embed_dim)
        track = invert(x0, d, cond, s, Rng(_inversion_seed(cfg, name)))
        save_track(track, cfg.output_dir / "tracks" / name)
        errors[name] = float(np.abs(replay(track, d, cond, s) - x0).max())
    report = {"max_abs_err": max(errors.values()), "T": cfg.T, "seed": cfg.seed, "per_image": errors}
    write_json(cfg.output_dir / "invert_report.json", report)
    print(json.dumps(report, sort_keys=True))
    if not report["max_abs_err"] < RECON_TOLERANCE:
        raise NumericContractError(
            f"reconstruction error {report['max_abs_err']:.3g} exceeds {RECON_TOLERANCE}"
        )
    return 0


def _concept_inputs(cfg: RunConfig) -> list:
    concepts = []
    for spec in cfg.concepts:
        mask = load_mask(spec.mask_path, (cfg.h, cfg.w))
        concepts.append(
            ConceptInput(
                image=load_latent(spec.image_path, cfg),
                mask=downsample_mask(mask, cfg.latent_factor),
                prompt_tokens=tuple(spec.prompt.lower().split()),
            )
        )
    return concepts


def cmd_generate(cfg: RunConfig) -> int:
    d = _denoiser(cfg)
    bcfg = cfg.blend_config()
    s = bcfg.schedule()
    background = load_latent(cfg.background.image_path, cfg)
    concepts = _concept_inputs(cfg)

    t0 = time.perf_counter()
    state = prepare(background, concepts, bcfg, d, cfg.background.prompt)
    prepare_s = time.perf_counter() - t0
    step_s = []
    while state.t > 0:
        t1 = time.perf_counter()
        state = step(state, d, bcfg, s)
        step_s.append(time.perf_counter() - t1)
        log.debug("step t=%d took %.4fs", state.t + 1, step_s[-1])

    img = decode(state.z_out)
    name = "out.ppm" if cfg.c == 3 else "out.pgm"
    write_pnm(cfg.output_dir / name, img)
    save_ltf(state.z_out, cfg.output_dir / "out.ltf")
    manifest = {
        "config": cfg.echo(),
        "output": name,
        "latent_shape": list(state.z_out.shape),
        "counters": state.counters,
        "timing": {"prepare_s": prepare_s, "steps_s": step_s, "total_s": time.perf_counter() - t0},
    }
    write_json(cfg.output_dir / "manifest.json", manifest)
    print(f"wrote {cfg.output_dir / name}")
    return 0


def diagnose_rows(cfg: RunConfig) -> list:
    d = _denoiser(cfg)
    s = cfg.blend_config().schedule()
    ef_var, dd_var, corr = [], [], []
    for name, spec in _images(cfg):
        x0 = load_latent(spec.image_path, cfg)
        cond = embed_prompt(spec.prompt, d.embed_dim)
        ef = noise_map_stats(invert(x0, d, cond, s, Rng(_inversion_seed(cfg, name))))
        dd = noise_map_stats(ddim_invert(x0, d, cond, s))
        ef_var.append(ef["var"])
        dd_var.append(dd["var"])
        corr.append(ef["corr"])
    rows = []
    for t in range(2, s.T + 1):
        c = [cs[t] for cs in corr if t in cs]
        rows.append(
            [
                t,
                float(np.mean([v[t] for v in ef_var])),
                float(np.mean([v[t] for v in dd_var])),
                float(np.mean(c)) if c else None,
            ]
        )
    summary = ["mean"]
    for col in range(1, 4):
        vals = [r[col] for r in rows if r[col] is not None]
        summary.append(float(np.mean(vals)) if vals else None)
    rows.append(summary)
    return rows


def cmd_diagnose(cfg: RunConfig) -> int:
    rows = diagnose_rows(cfg)
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in rows:
        writer.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in r])
    text = buf.getvalue()
    atomic_write(cfg.output_dir / "diagnose.csv", text.encode())
    sys.stdout.write(text)
    return 0


COMMANDS = {"invert": cmd_invert, "generate": cmd_generate, "diagnose": cmd_diagnose}


class _Parser(argparse.ArgumentParser):
    # usage mistakes are config errors (exit 1), not argparse's default 2
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="flipconcept", description="Tuning-free multi-concept blending")
    p.add_argument("command", choices=["make-fixtures", *COMMANDS])
    p.add_argument("--config", type=Path, help="JSON run config")
    p.add_argument("--out", type=Path, help="output directory (overrides config output_dir)")
    p.add_argument("--seed", type=int, help="u64 seed (overrides config seed)")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    if args.command == "make-fixtures":
        return cmd_make_fixtures(args)
    if args.config is None:
        raise ConfigError(f"{args.command} needs --config")
    cfg = load_config(args.config)
    if args.out is not None:
        cfg.output_dir = args.out
        cfg.raw["output_dir"] = str(args.out)
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError(f"seed must be a u64, got {args.seed}")
        cfg.seed = args.seed
    return COMMANDS[args.command](cfg)


def main(argv=None) -> int:
    try:
        return run(argv)
    except FlipConceptError as exc:
        print(f"flipconcept: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"flipconcept: I/O error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
