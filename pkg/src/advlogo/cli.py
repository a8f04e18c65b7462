"""Command-line entry point: gen-assets, train-detector, attack, eval.

Settings come from built-in defaults, then an optional ``--config`` JSON
file, then explicit flags. Exit codes: 0 success, 2 bad configuration or
usage, 3 unreadable input file, 4 non-finite numbers, 5 detector below the
recall gate, 6 any other pipeline error, 7 filesystem error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import glyphs
from .attack import AttackConfig, run_attack
from .config import FIELDS, RunConfig, config_from_dict, load_config
from .detector import DetectorModel, load_weights, max_confidences, save_weights, train_detector
from .errors import AdvLogoError, ConfigError, NumericError, ParseError
from .harness import EvalProtocol, person_by_name, render_frames, run_protocol
from .imageio import load_background, load_mask, load_rgb, save_mask, save_png
from .logo import LogoTexture, apply_3d_mapping, rasterize_shape_mask
from .mesh import write_obj
from .scene import (DEFAULT_PEOPLE, build_person, detector_holdout, detector_stream,
                    generate_backgrounds, place_logo, rng_for, scene_camera)

EXIT_OK, EXIT_CONFIG, EXIT_PARSE, EXIT_NUMERIC, EXIT_GATE, EXIT_PIPELINE, EXIT_IO = 0, 2, 3, 4, 5, 6, 7
COMMANDS = ("gen-assets", "train-detector", "attack", "eval")


def _sub_seed(seed, key):
    return int(rng_for(seed, key).integers(0, 2 ** 62))


def _write_text(path: Path, text):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(text if isinstance(text, bytes) else text.encode())


def _camera_kw(cfg: RunConfig):
    return {"distance": cfg.distance, "elevation_deg": cfg.elevation, "fov_deg": cfg.fov}


# ------------------------------------------------------------------ assets


def backgrounds(cfg: RunConfig, split: str) -> np.ndarray:
    """Training or test backgrounds, procedural unless ``background_dir`` is set."""
    n = cfg.n_train_backgrounds if split == "train" else cfg.n_test_backgrounds
    if cfg.background_dir:
        folder = Path(cfg.background_dir) / split
        files = sorted(p for p in folder.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
        if not files:
            raise ConfigError(f"no images in {folder}")
        return np.stack([load_background(p, cfg.image_size) for p in files[:n]])
    key = 1 if split == "train" else 2
    return generate_backgrounds(n, _sub_seed(cfg.seed, key), cfg.image_size).array()


def logo_mask(cfg: RunConfig) -> np.ndarray:
    src = load_mask(cfg.mask_path) if cfg.mask_path else cfg.shape
    return rasterize_shape_mask(src, cfg.texture_size, cfg.texture_size)


def cmd_gen_assets(cfg: RunConfig, log=print) -> dict:
    root = Path(cfg.out_dir) / "assets"
    counts = {"meshes": 0, "masks": 0, "train_backgrounds": 0, "test_backgrounds": 0}
    for spec in DEFAULT_PEOPLE:
        mesh, panel = build_person(spec)
        _write_text(root / "meshes" / f"{spec.name}.obj", write_obj(mesh))
        _write_text(root / "meshes" / f"{spec.name}_panel.txt", "\n".join(map(str, panel)) + "\n")
        counts["meshes"] += 1
    for name in glyphs.NAMES:
        (root / "masks").mkdir(parents=True, exist_ok=True)
        save_mask(root / "masks" / f"{name}.png", rasterize_shape_mask(name, cfg.texture_size, cfg.texture_size))
        counts["masks"] += 1
    for split in ("train", "test"):
        folder = root / "backgrounds" / split
        folder.mkdir(parents=True, exist_ok=True)
        for i, img in enumerate(backgrounds(cfg, split)):
            save_png(folder / f"{i:05d}.png", img)
            counts[f"{split}_backgrounds"] += 1
    _write_text(root / "manifest.json", json.dumps(counts, indent=2, sort_keys=True) + "\n")
    log(f"assets written to {root}: {counts}")
    return counts


# ------------------------------------------------------------------ detector


def cmd_train_detector(cfg: RunConfig, log=print) -> int:
    stream = detector_stream(cfg.det_scenes_per_epoch, _sub_seed(cfg.seed, 3), cfg.image_size)
    holdout = detector_holdout(cfg.det_holdout, _sub_seed(cfg.seed, 4), cfg.image_size)
    model, metrics = train_detector(DetectorModel.init(_sub_seed(cfg.seed, 5)), stream, cfg.det_epochs,
                                    lr=cfg.det_lr, seed=_sub_seed(cfg.seed, 6), batch_size=cfg.det_batch,
                                    holdout=holdout, threshold=cfg.threshold, smoothing=cfg.det_smoothing,
                                    pos_weight=cfg.det_pos_weight,
                                    log=log)
    cfg.weights_path.parent.mkdir(parents=True, exist_ok=True)
    save_weights(cfg.weights_path, model)
    out = Path(cfg.out_dir)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "value"])
    w.writerow(["recall", repr(metrics.recall)])
    w.writerow(["false_positive_rate", repr(metrics.false_positive_rate)])
    w.writerow(["final_loss", repr(metrics.final_loss)])
    w.writerow(["train_scenes", cfg.det_scenes_per_epoch * cfg.det_epochs])
    _write_text(out / "detector_metrics.csv", buf.getvalue())
    _write_text(out / "detector_losses.csv",
                "step,loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(metrics.losses)))
    if metrics.recall < cfg.min_recall:
        log(f"held-out recall {metrics.recall:.3f} is below the gate {cfg.min_recall}")
        return EXIT_GATE
    return EXIT_OK


# ------------------------------------------------------------------ attack


def starting_texture(cfg: RunConfig, path: Path | None = None) -> LogoTexture:
    mask = logo_mask(cfg)
    if path is None:
        return LogoTexture.uniform(mask)
    pixels = load_rgb(path)
    if pixels.shape[:2] != mask.shape:
        raise ConfigError(f"texture {path} is {pixels.shape[1]}x{pixels.shape[0]}, "
                          f"expected {cfg.texture_size}x{cfg.texture_size}")
    return LogoTexture(pixels, mask)


def cmd_attack(cfg: RunConfig, log=print) -> int:
    detector = load_weights(cfg.weights_path)
    texture = starting_texture(cfg, Path(cfg.texture) if cfg.texture else None)
    out = Path(cfg.out_dir)
    scene = [place_logo(person_by_name(m), texture, cfg.logo_scale) for m in cfg.people("train_meshes")]
    acfg = AttackConfig(
        lambda_dis=cfg.lambda_dis, lambda_tv=cfg.lambda_tv, lr0=cfg.lr0, lr_decay=cfg.lr_decay,
        decay_every=cfg.decay_every, epochs=cfg.attack_epochs, background_batch=cfg.background_batch,
        seed=_sub_seed(cfg.seed, 7), threshold=cfg.threshold, augment=cfg.augment,
        snapshot_every=cfg.snapshot_every,
        views=[scene_camera(v, cfg.image_size, **_camera_kw(cfg)) for v in cfg.train_views],
    )
    tex, report = run_attack(scene, texture, backgrounds(cfg, "train"), detector, acfg, log=log)
    out.mkdir(parents=True, exist_ok=True)
    save_png(out / "texture.png", tex.pixels)
    _write_text(out / "train_report.csv", report.to_csv())
    for epoch, snap in report.snapshots:
        (out / "snapshots").mkdir(exist_ok=True)
        save_png(out / "snapshots" / f"texture_epoch_{epoch:04d}.png", snap.pixels)
    return EXIT_OK


# ------------------------------------------------------------------ eval


def cmd_eval(cfg: RunConfig, log=print) -> int:
    detector = load_weights(cfg.weights_path)
    path = cfg.texture_path
    texture = starting_texture(cfg, path if path.exists() else None)
    if not path.exists():
        log(f"{path} not found; evaluating the untrained gray logo")
    out = Path(cfg.out_dir)
    test_bgs = backgrounds(cfg, "test")
    if cfg.smoke:
        pl = place_logo(person_by_name(cfg.people("test_meshes")[0]), texture, cfg.logo_scale)
        apply_3d_mapping(texture, pl.texmap, pl.logo)
        frame = render_frames(pl, scene_camera(0, cfg.image_size, **_camera_kw(cfg)), test_bgs[:1])[0]
        out.mkdir(parents=True, exist_ok=True)
        save_png(out / "smoke.png", frame)
        conf = float(max_confidences(detector, frame[None])[0])
        log(f"smoke frame: max confidence {conf:.4f} ({'detected' if conf > cfg.threshold else 'missed'})")
        return EXIT_OK
    proto = EvalProtocol(test_views=cfg.test_views, test_meshes=cfg.people("test_meshes"), texture=texture,
                         detector=detector, threshold=cfg.threshold, train_views=cfg.train_views,
                         train_meshes=cfg.people("train_meshes"), logo_scale=cfg.logo_scale,
                         image_size=cfg.image_size, seed=cfg.seed, backgrounds=test_bgs,
                         camera_kw=_camera_kw(cfg))
    result = run_protocol(proto, jobs=cfg.jobs)
    _write_text(out / "eval.csv", result.to_csv())
    _write_text(out / "eval.json", result.to_json())
    log(f"mean success rate {result.mean:.4f} over {len(result.views)} views")
    if cfg.gallery:
        pl = place_logo(person_by_name(cfg.people("test_meshes")[0]), texture, cfg.logo_scale)
        apply_3d_mapping(texture, pl.texmap, pl.logo)
        frames = render_frames(pl, scene_camera(0, cfg.image_size, **_camera_kw(cfg)), test_bgs[:cfg.gallery])
        confs = max_confidences(detector, frames)
        (out / "gallery").mkdir(parents=True, exist_ok=True)
        for i, (frame, c) in enumerate(zip(frames, confs)):
            save_png(out / "gallery" / f"frame_{i:03d}_{'detected' if c > cfg.threshold else 'missed'}.png",
                     frame)
    return EXIT_OK


# ------------------------------------------------------------------ argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="advlogo", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, argument_default=argparse.SUPPRESS)
        p.add_argument("--config", help="JSON file with any of the settings below")
        for f in FIELDS.values():
            flag = "--" + f.name.replace("_", "-")
            helptext = f"{f.metadata['help']} (default: {f.default})"
            if f.type == "bool":
                p.add_argument(flag, action=argparse.BooleanOptionalAction, help=helptext)
            else:
                p.add_argument(flag, type={"int": int, "float": float}.get(f.type, str), help=helptext)
    return parser


def resolve_config(args: argparse.Namespace) -> RunConfig:
    given = {k: v for k, v in vars(args).items() if k in FIELDS}
    base = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    return config_from_dict(given, base)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    log = lambda msg: print(msg, file=sys.stderr)  # noqa: E731
    try:
        cfg = resolve_config(args)
        if args.command == "gen-assets":
            cmd_gen_assets(cfg, log)
            return EXIT_OK
        handler = {"train-detector": cmd_train_detector, "attack": cmd_attack, "eval": cmd_eval}
        return handler[args.command](cfg, log)
    except ConfigError as e:
        log(f"config error: {e}")
        return EXIT_CONFIG
    except ParseError as e:
        log(f"parse error: {e}")
        return EXIT_PARSE
    except NumericError as e:
        log(f"numeric error: {e}")
        return EXIT_NUMERIC
    except AdvLogoError as e:
        log(f"error: {e}")
        return EXIT_PIPELINE
    except OSError as e:
        log(f"i/o error: {e}")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
