"""Command line entry point: ``dsw theory|generate|evaluate|synth``.

Command-line flags take precedence over a flat ``key = value`` config file
(``--config`` or ``$DSW_CONFIG``); keys set in neither keep their defaults.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import logging
import math
import os
import sys
from dataclasses import dataclass, fields
from typing import Optional, Sequence

import numpy as np
from PIL import Image

from . import dataset, metrics, theory
from .baseline import generate_dense_array
from .camera import CameraIntrinsics, ObjectModel, Point3D
from .errors import DswError
from .proposer import (
    CLIPPED,
    EMITTED,
    INHOMOGENEOUS,
    TOO_NARROW,
    DswConfig,
    Region3D,
    proposals_to_csv,
    scan,
)
from .sizelut import LutConfig, build_lut

log = logging.getLogger("dsw")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    model_width: float = 0.60
    model_height: float = 1.73
    d_min: float = 1.0
    d_max: float = 128.0
    delta_d: float = 1.0
    theta: float = 0.5
    sigma: float = 0.1
    homogeneity_mode: str = "relative"
    homogeneity: bool = True
    jump_threshold: float = 1.0
    min_box_width: int = 10
    min_step: int = 1
    roi: Optional[str] = None  # "xmin,ymin,zmin,xmax,ymax,zmax"
    class_name: str = "Pedestrian"
    dataset: Optional[str] = None
    output: Optional[str] = None
    widths: str = "10:100:1"
    jobs: int = 0
    seed: int = 0

    def model(self) -> ObjectModel:
        return ObjectModel(self.model_width, self.model_height)

    def lut_config(self) -> LutConfig:
        return LutConfig(self.d_min, self.d_max, self.delta_d)

    def region(self) -> Optional[Region3D]:
        if not self.roi:
            return None
        v = [float(t) for t in self.roi.split(",")]
        if len(v) != 6:
            raise UsageError("roi needs six comma-separated numbers")
        return Region3D(Point3D(*v[:3]), Point3D(*v[3:]))

    def dsw_config(self) -> DswConfig:
        return DswConfig(
            theta_iou=self.theta,
            homogeneity_sigma=self.sigma,
            homogeneity_mode=self.homogeneity_mode,
            verify_homogeneity=self.homogeneity,
            jump_threshold=self.jump_threshold,
            min_box_width_px=self.min_box_width,
            roi=self.region(),
            min_step_px=self.min_step,
        )

    def validate(self) -> None:
        """Build every derived object once so bad values fail before any work."""
        self.model()
        self.lut_config()
        self.dsw_config()
        parse_range(self.widths)


_BOOL = {"1": True, "true": True, "yes": True, "on": True, "0": False, "false": False, "no": False, "off": False}


def _coerce(f: dataclasses.Field, raw: str):
    kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    if "bool" in kind:
        try:
            return _BOOL[raw.strip().lower()]
        except KeyError:
            raise UsageError(f"{f.name}: not a boolean: {raw!r}") from None
    try:
        if kind == "float":
            return float(raw)
        if kind == "int":
            return int(raw)
    except ValueError:
        raise UsageError(f"{f.name}: bad value {raw!r}") from None
    return raw.strip()


def load_config_file(path: str) -> dict:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    with open(path) as fh:
        parser.read_string("[dsw]\n" + fh.read(), source=path)
    known = {f.name: f for f in fields(RunConfig)}
    out = {}
    for key, raw in parser["dsw"].items():
        key = key.replace("-", "_")
        if key not in known:
            raise UsageError(f"{path}: unknown key {key!r}")
        out[key] = _coerce(known[key], raw)
    return out


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults < config file < command-line flags."""
    values = {}
    path = getattr(args, "config", None) or os.environ.get("DSW_CONFIG")
    if path:
        if not os.path.exists(path):
            raise UsageError(f"config file not found: {path}")
        values.update(load_config_file(path))
    for f in fields(RunConfig):
        flag = getattr(args, f.name, None)
        if flag is not None:
            values[f.name] = flag
    cfg = RunConfig(**values)
    try:
        cfg.validate()
    except DswError as exc:
        raise UsageError(str(exc)) from None
    return cfg


def parse_range(text: str) -> list[float]:
    """``a:b:step`` (inclusive), ``a,b,c`` or a single number."""
    text = text.strip()
    try:
        if ":" in text:
            a, b, step = (float(t) for t in text.split(":"))
            if step <= 0 or b < a:
                raise UsageError(f"bad range {text!r}")
            n = int(math.floor((b - a) / step + 1e-9))
            return [round(a + i * step, 10) for i in range(n + 1)]
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise UsageError(f"bad number list {text!r}") from None


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def _write_csv(path: str, header: Sequence[str], rows) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) if isinstance(v, float) else str(v) for v in row) + "\n")


# --- subcommands -----------------------------------------------------------


def cmd_theory(args) -> int:
    grid = parse_range(args.theta_grid)
    for t in grid:
        if not 0 < t < 1:
            raise UsageError(f"InvalidTheta: theta must lie in (0, 1), got {t}")
    try:
        width, height = (int(v) for v in args.image.lower().split("x"))
    except ValueError:
        raise UsageError(f"--image expects WxH, got {args.image!r}") from None
    widths = parse_range(args.widths)
    aspects = tuple(parse_range(args.aspect))
    step = widths[1] - widths[0] if len(widths) > 1 else 1.0
    params = theory.TheoryParams(width, height, widths[0], widths[-1], aspects, 0.5, theory.ADDITIVE, step)

    out = args.out_dir
    _write_csv(os.path.join(out, "error_curves.csv"), ["theta", "eps_k", "eps_delta"], theory.error_curves(grid))
    _write_csv(
        os.path.join(out, "hypotheses.csv"),
        ["theta", "n_hypotheses"],
        [(t, n) for t, n in theory.hypothesis_curve(params, grid)],
    )
    print(f"eps_k(0.5)={theory.scaling_error(0.5):.4f}")
    print(f"eps_delta(0.5)={theory.positioning_error(0.5):.4f}")
    print(f"step_fraction(0.5)={theory.step_fraction(0.5):.4f}")
    print(f"n_hypotheses(0.5)={theory.count_total(params)}")
    print(f"n_hypotheses_simplified(0.5)={theory.count_simplified(params):.0f}")
    return EXIT_OK


def cmd_generate(args) -> int:
    cfg = resolve_config(args)
    intr = dataset.parse_calibration(_read_text(args.calib))
    img = dataset.load_disparity(args.disparity)
    lut = build_lut(intr, cfg.model(), cfg.lut_config())
    result = scan(img, intr, lut, cfg.dsw_config())
    image_id = args.image_id or os.path.splitext(os.path.basename(args.disparity))[0]
    out = cfg.output or args.out or "proposals.csv"
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    with open(out, "w") as fh:
        fh.write(proposals_to_csv(result.proposals, image_id))
    if args.mask:
        Image.fromarray(result.sampled_mask().astype(np.uint8) * 255).save(args.mask)
    print(
        f"proposals={result.count(EMITTED)} rejected_homogeneity={result.count(INHOMOGENEOUS)} "
        f"rejected_clipped={result.count(CLIPPED)} rejected_narrow={result.count(TOO_NARROW)} "
        f"out_of_table={result.n_out_of_range}"
    )
    return EXIT_OK


def _read_text(path: str) -> str:
    with open(path) as fh:
        return fh.read()


def cmd_evaluate(args) -> int:
    cfg = resolve_config(args)
    root = cfg.dataset or args.dataset_pos
    if not root:
        raise UsageError("evaluate needs --dataset")
    scenes = []
    for image_id in dataset.scene_ids(root):
        try:
            scenes.append(dataset.load_scene(root, image_id, cfg.class_name))
        except (OSError, DswError) as exc:
            log.warning("skipping %s: %s", image_id, exc)
    if not scenes:
        print(f"no usable scenes under {root}", file=sys.stderr)
        return EXIT_RUNTIME

    model = cfg.model()
    dsw_cfg = cfg.dsw_config()
    luts = {}

    def dsw_generator(scene):
        key = scene.intrinsics
        if key not in luts:
            luts[key] = build_lut(key, model, cfg.lut_config())
        return scan(scene.disparity, key, luts[key], dsw_cfg).proposals

    widths = parse_range(cfg.widths)
    step = widths[1] - widths[0] if len(widths) > 1 else 1.0
    dense_cache = {}

    def baseline_generator(scene):
        shape = (scene.disparity.width, scene.disparity.height)
        if shape not in dense_cache:
            p = theory.TheoryParams(
                shape[0], shape[1], widths[0], widths[-1], (model.aspect,), cfg.theta, theory.ADDITIVE, step
            )
            dense_cache[shape] = generate_dense_array(p)
        return dense_cache[shape]

    # tables are built before timing starts
    if args.generator == "dsw":
        for scene in scenes:
            dsw_generator(scene)
    generator = dsw_generator if args.generator == "dsw" else baseline_generator
    jobs = cfg.jobs or os.cpu_count() or 1
    grid = parse_range(args.theta_grid)
    result = metrics.evaluate(scenes, generator, grid, jobs=jobs)
    out = cfg.output or args.out_dir
    result.write(out)
    for image_id, msg in result.failures:
        print(f"failed {image_id}: {msg}", file=sys.stderr)
    print(
        f"scenes={len(result.images)} failures={len(result.failures)} ppi={_fmt(result.ppi)} "
        f"mean_ms={_fmt(result.mean_ms)} recall@0.5={_fmt(result.recall_at(0.5))} "
        f"recall@0.3={_fmt(result.recall_at(0.3))}"
    )
    return EXIT_OK if result.images else EXIT_RUNTIME


def _parse_plant(text: str) -> dataset.Plant:
    try:
        x, y, d = text.split(",")
        return dataset.Plant(int(x), int(y), float(d))
    except ValueError:
        raise UsageError(f"--plant expects x,y,disparity, got {text!r}") from None


def cmd_synth(args) -> int:
    cfg = resolve_config(args)
    model = cfg.model()
    intr = CameraIntrinsics(args.fx, args.fx, args.cx, args.cy, args.baseline)
    try:
        width, height = (int(v) for v in args.image.lower().split("x"))
    except ValueError:
        raise UsageError(f"--image expects WxH, got {args.image!r}") from None
    dims = (width, height)
    if args.background == "ramp":
        background = dataset.Background.ground(intr)
    elif args.background == "constant":
        background = dataset.Background("constant", disparity=args.background_disparity)
    else:
        background = dataset.Background()

    rng = np.random.default_rng(cfg.seed)
    inline = [_parse_plant(p) for p in args.plant or []]
    written = 0
    for k in range(args.count):
        image_id = f"{args.start_id + k:06d}"
        if inline:
            candidates = inline
        elif args.background == "ramp":
            candidates = dataset.ground_plants(rng, model, intr, dims, background, args.plants)
        else:
            candidates = dataset.random_plants(rng, model, intr, dims, args.plants)
        good = []
        for plant in candidates:
            try:
                dataset.check_plant(plant, model, intr, dims)
                good.append(plant)
            except DswError as exc:
                print(f"{image_id}: {exc}", file=sys.stderr)
        if candidates and not good:
            print(f"{image_id}: no valid plants", file=sys.stderr)
            continue
        scene = dataset.synth_scene(
            good, model, intr, dims, background, args.noise, seed=cfg.seed + k, image_id=image_id,
            class_name=cfg.class_name,
        )
        dataset.write_scene(cfg.output or args.out_dir, scene, args.format)
        written += 1
    print(f"scenes={written}")
    return EXIT_OK if written else EXIT_RUNTIME


# --- argument parsing ------------------------------------------------------


def _add_shared(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("shared settings (override config file)")
    g.add_argument("--config", help="key=value config file (default: $DSW_CONFIG)")
    g.add_argument("--model-width", dest="model_width", type=float)
    g.add_argument("--model-height", dest="model_height", type=float)
    g.add_argument("--d-min", dest="d_min", type=float)
    g.add_argument("--d-max", dest="d_max", type=float)
    g.add_argument("--delta-d", dest="delta_d", type=float)
    g.add_argument("--theta", type=float, help="target IoU that sets the adaptive stride")
    g.add_argument("--sigma", type=float, help="homogeneity threshold")
    g.add_argument("--homogeneity-mode", dest="homogeneity_mode", choices=["relative", "absolute"])
    g.add_argument("--no-homogeneity", dest="homogeneity", action="store_const", const=False)
    g.add_argument("--jump-threshold", dest="jump_threshold", type=float)
    g.add_argument("--min-box-width", dest="min_box_width", type=int)
    g.add_argument("--min-step", dest="min_step", type=int)
    g.add_argument("--roi", help="xmin,ymin,zmin,xmax,ymax,zmax in meters, camera frame")
    g.add_argument("--class", dest="class_name")
    g.add_argument("--widths", help="baseline window widths a:b:step")
    g.add_argument("--jobs", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--output", help="output path (overrides the command default)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dsw", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("theory", help="error curves and sliding-window hypothesis counts")
    p.add_argument("--theta-grid", default="0.3:0.9:0.05")
    p.add_argument("--image", default="1242x375")
    p.add_argument("--widths", default="10:100:1")
    p.add_argument("--aspect", default="3")
    p.add_argument("--out-dir", default="theory_out")
    p.set_defaults(func=cmd_theory)

    p = sub.add_parser("generate", help="proposals for one disparity map")
    p.add_argument("--disparity", required=True)
    p.add_argument("--calib", required=True)
    p.add_argument("--out", help="proposal CSV (default proposals.csv)")
    p.add_argument("--mask", help="write visited pixels as a PNG")
    p.add_argument("--image-id")
    _add_shared(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="recall and proposals per image over a dataset")
    p.add_argument("dataset_pos", nargs="?", metavar="DATASET")
    p.add_argument("--dataset")
    p.add_argument("--generator", choices=["dsw", "baseline"], default="dsw")
    p.add_argument("--theta-grid", default="0.3:0.9:0.1")
    p.add_argument("--out-dir", default="eval_out")
    _add_shared(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="write synthetic scenes in KITTI layout")
    p.add_argument("--out-dir", default="synth_out")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--plants", type=int, default=3, help="random plants per scene")
    p.add_argument("--plant", action="append", help="explicit plant x,y,disparity (repeatable)")
    p.add_argument("--background", choices=["invalid", "constant", "ramp"], default="invalid")
    p.add_argument("--background-disparity", type=float, default=5.0)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--image", default="1242x375")
    p.add_argument("--fx", type=float, default=721.0)
    p.add_argument("--cx", type=float, default=609.0)
    p.add_argument("--cy", type=float, default=172.0)
    p.add_argument("--baseline", type=float, default=0.54)
    p.add_argument("--format", choices=["png", "pfm"], default="png")
    p.add_argument("--start-id", type=int, default=0)
    _add_shared(p)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, DswError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
