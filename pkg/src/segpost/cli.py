"""Command-line interface.

Subcommands mirror the pipeline stages (vote, crf, morph) plus eval,
colorize, synth, and the full pipeline. Files are paired by stem across
directories. Flag values override config-file values, and every command
that writes an output directory leaves a config_echo.toml there with
the effective parameters.
"""

from __future__ import annotations

import argparse
import colorsys
import dataclasses
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .core import argmax_labels
from .densecrf import FILTER_BACKENDS, crf_refine
from .ensemble import TIE_BREAKS, EnsembleConfig, average_probs, vote
from .errors import ConfigError, SegpostError
from .io import (
    Palette,
    colorize,
    read_labelmap_png,
    read_palette_csv,
    read_probmap,
    read_rgb_png,
    write_labelmap_png,
    write_palette_csv,
    write_probmap,
    write_rgb_png,
)
from .metrics import REPORT_FORMATS, ConfusionMatrix, EvalReport, accumulate, render_report
from .morphology import CONNECTIVITIES, mode_filter, remove_small_components
from .pipeline import (
    CRF_INPUTS,
    MemberSource,
    crf_from_mapping,
    discover_stems,
    dump_params_toml,
    labels_to_soft_probs,
    load_config,
    members_from_rows,
    morph_from_mapping,
    run_over_stems,
    run_pipeline,
)
from .synth import SceneSpec, corrupt_to_probs, generate_scene


def _load_raw_config(path) -> tuple:
    """Raw TOML mapping plus the directory relative paths resolve from."""
    if path is None:
        return {}, Path.cwd()
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh), path.parent
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}") from exc


def _merge(flag, config_value, default):
    if flag is not None:
        return flag
    return config_value if config_value is not None else default


def _report_errors(errors) -> None:
    for stem, message in errors:
        print(f"error: {stem}: {message}", file=sys.stderr)


def _finish(out_dir: Path, count: int, what: str, errors, echo: dict) -> int:
    _report_errors(errors)
    (out_dir / "config_echo.toml").write_text(dump_params_toml(echo), encoding="utf-8")
    print(f"wrote {count} {what} -> {out_dir}")
    return 0 if not errors else 1


def _stems_or_fail(sources) -> tuple:
    stems, errors = discover_stems(sources)
    if not stems and not errors:
        raise ConfigError("no input files found in " + ", ".join(str(s[1]) for s in sources))
    return stems, errors


def _member_from_flag(text: str) -> MemberSource:
    name, sep, raw = text.partition("=")
    if not sep or not name or not raw:
        raise ConfigError(f"--member expects NAME=DIR, got {text!r}")
    directory = Path(raw)
    if any(directory.glob("*.spm1")):
        return MemberSource(name, probmap_dir=directory)
    if any(directory.glob("*.png")):
        return MemberSource(name, labelmap_dir=directory)
    raise ConfigError(f"{directory}: contains no .spm1 or .png files")


def synth_palette(num_classes: int) -> Palette:
    """Hue-spaced display palette with generated class names."""
    entries = []
    for i in range(num_classes):
        r, g, b = colorsys.hsv_to_rgb(i / num_classes, 0.75, 0.95)
        entries.append((i, (round(r * 255), round(g * 255), round(b * 255)), f"class_{i}"))
    return Palette(tuple(entries))


def _cmd_synth(args) -> int:
    out = Path(args.out)
    for sub in ["images", "gt"] + [f"member_{k:02d}" for k in range(args.members)]:
        (out / sub).mkdir(parents=True, exist_ok=True)
    write_palette_csv(synth_palette(args.classes), out / "palette.csv")
    for i in range(args.scenes):
        spec = SceneSpec(
            height=args.height,
            width=args.width,
            num_classes=args.classes,
            num_seeds=args.seeds,
            noise_flip_rate=args.flip,
            flip_confidence=args.confidence,
            speckle_rate=args.speckle,
            rng_seed=(args.seed + i) % 2**64,
        )
        gt, image = generate_scene(spec)
        stem = f"scene_{i:03d}"
        write_labelmap_png(gt, out / "gt" / f"{stem}.png")
        write_rgb_png(image, out / "images" / f"{stem}.png")
        for k in range(args.members):
            write_probmap(
                corrupt_to_probs(gt, spec, stream=k),
                out / f"member_{k:02d}" / f"{stem}.spm1",
            )
    echo = {
        "scenes": args.scenes, "height": args.height, "width": args.width,
        "classes": args.classes, "seeds": args.seeds, "members": args.members,
        "flip": args.flip, "speckle": args.speckle,
        "confidence": args.confidence, "seed": args.seed,
    }
    (out / "manifest.txt").write_text(dump_params_toml(echo), encoding="utf-8")
    print(f"wrote {args.scenes} scene(s) with {args.members} member(s) -> {out}")
    return 0


def _cmd_vote(args) -> int:
    data, base = _load_raw_config(args.config)
    if args.member:
        members = tuple(_member_from_flag(m) for m in args.member)
    else:
        members = members_from_rows(data.get("members"), base)
    tie_break = _merge(args.tie_break, data.get("ensemble", {}).get("tie_break"), "priority")
    config = EnsembleConfig(tuple(m.name for m in members), tie_break)
    palette = read_palette_csv(args.palette) if args.palette else None
    if palette is None and any(m.labelmap_dir is not None for m in members):
        raise ConfigError("label-map members need --palette for the class count")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sources = [(m.name, m.directory, m.suffix) for m in members]
    stems, errors = _stems_or_fail(sources)

    def worker(stem):
        labels, probs = [], []
        for m in members:
            path = m.directory / f"{stem}{m.suffix}"
            if m.probmap_dir is not None:
                p = read_probmap(path)
                labels.append(argmax_labels(p))
            else:
                lab = read_labelmap_png(path, palette.num_classes)
                p = labels_to_soft_probs(lab)
                labels.append(lab)
            probs.append(p)
        voted = vote(labels, config)
        write_labelmap_png(voted, out / f"{stem}.png")
        if args.save_avg_probs:
            write_probmap(average_probs(probs), out / f"{stem}.spm1")

    results, run_errors, _ = run_over_stems(stems, worker, args.threads or 1, bool(args.fail_fast))
    echo = {
        "members": [m.name for m in members],
        "ensemble": {"tie_break": tie_break},
        "save_avg_probs": bool(args.save_avg_probs),
    }
    return _finish(out, len(results), "voted label map(s)", errors + run_errors, echo)


def _cmd_crf(args) -> int:
    data, base = _load_raw_config(args.config)
    params = crf_from_mapping(data.get("crf", {}))
    backend = _merge(args.backend, data.get("filter_backend"), "lattice")
    palette = read_palette_csv(args.palette) if args.palette else None
    if args.labels is not None and palette is None:
        raise ConfigError("--labels input needs --palette for the class count")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.probs is not None:
        input_source = ("probs", Path(args.probs), ".spm1")
    else:
        input_source = ("labels", Path(args.labels), ".png")
    stems, errors = _stems_or_fail([("images", Path(args.images), ".png"), input_source])

    def worker(stem):
        image = read_rgb_png(Path(args.images) / f"{stem}.png")
        if args.probs is not None:
            probs = read_probmap(Path(args.probs) / f"{stem}.spm1")
        else:
            hard = read_labelmap_png(Path(args.labels) / f"{stem}.png", palette.num_classes)
            probs = labels_to_soft_probs(hard)
        refined = crf_refine(probs, image, params, backend)
        write_labelmap_png(argmax_labels(refined), out / f"{stem}.png")

    results, run_errors, _ = run_over_stems(stems, worker, args.threads or 1, bool(args.fail_fast))
    echo = {
        "filter_backend": backend,
        "input": "probs" if args.probs is not None else "labels",
        "crf": {f.name: getattr(params, f.name) for f in dataclasses.fields(params)},
    }
    return _finish(out, len(results), "refined label map(s)", errors + run_errors, echo)


def _cmd_morph(args) -> int:
    data, _ = _load_raw_config(args.config)
    params = morph_from_mapping(data.get("morph", {}))
    overrides = {}
    if args.min_area is not None:
        overrides["min_area"] = args.min_area
    if args.connectivity is not None:
        overrides["connectivity"] = args.connectivity
    if args.mode_radius is not None:
        overrides["mode_radius"] = args.mode_radius
    if overrides:
        params = dataclasses.replace(params, **overrides)
    num_classes = read_palette_csv(args.palette).num_classes if args.palette else 255
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stems, errors = _stems_or_fail([("labels", Path(args.labels), ".png")])

    def worker(stem):
        labels = read_labelmap_png(Path(args.labels) / f"{stem}.png", num_classes)
        cleaned = remove_small_components(
            labels, params.min_area, params.connectivity, params.max_passes
        ).labels
        if params.mode_radius >= 1:
            cleaned = mode_filter(cleaned, params.mode_radius)
        write_labelmap_png(cleaned, out / f"{stem}.png")

    results, run_errors, _ = run_over_stems(stems, worker, args.threads or 1, bool(args.fail_fast))
    echo = {"morph": {f.name: getattr(params, f.name) for f in dataclasses.fields(params)}}
    return _finish(out, len(results), "cleaned label map(s)", errors + run_errors, echo)


def _cmd_eval(args) -> int:
    palette = read_palette_csv(args.palette)
    stems, errors = _stems_or_fail(
        [("pred", Path(args.pred), ".png"), ("gt", Path(args.gt), ".png")]
    )

    def worker(stem):
        pred = read_labelmap_png(Path(args.pred) / f"{stem}.png", palette.num_classes)
        gt = read_labelmap_png(Path(args.gt) / f"{stem}.png", palette.num_classes)
        return pred, gt

    pairs, run_errors, aborted = run_over_stems(
        stems, worker, args.threads or 1, bool(args.fail_fast)
    )
    errors += run_errors
    _report_errors(errors)
    if aborted or (errors and args.fail_fast):
        return 1
    cm = ConfusionMatrix.zeros(palette.num_classes)
    for stem in sorted(pairs):
        pred, gt = pairs[stem]
        cm = accumulate(pred, gt, cm)
    report = EvalReport.from_confusion(
        cm,
        palette.names,
        args.stage_tag,
        {"absent_as_zero": args.absent_as_zero, "images": len(pairs)},
        args.absent_as_zero,
    )
    text = render_report(report, args.format)
    print(text, end="")
    if args.out is not None:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.md").write_text(render_report(report, "markdown"), encoding="utf-8")
        (out / "report.csv").write_text(render_report(report, "csv"), encoding="utf-8")
    return 0 if not errors else 1


def _cmd_colorize(args) -> int:
    palette = read_palette_csv(args.palette)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stems, errors = _stems_or_fail([("labels", Path(args.labels), ".png")])

    def worker(stem):
        labels = read_labelmap_png(Path(args.labels) / f"{stem}.png", palette.num_classes)
        write_rgb_png(colorize(labels, palette), out / f"{stem}.png")

    results, run_errors, _ = run_over_stems(stems, worker, args.threads or 1, bool(args.fail_fast))
    echo = {"palette": str(Path(args.palette).resolve())}
    return _finish(out, len(results), "colorized image(s)", errors + run_errors, echo)


def _cmd_pipeline(args) -> int:
    config = load_config(args.config)
    overrides = {}
    if args.threads is not None:
        overrides["threads"] = args.threads
    if args.fail_fast:
        overrides["fail_fast"] = True
    if args.backend is not None:
        overrides["filter_backend"] = args.backend
    if args.crf_input is not None:
        overrides["crf_input"] = args.crf_input
    if args.out is not None:
        overrides["output_dir"] = Path(args.out)
    if args.absent_as_zero:
        overrides["absent_as_zero"] = True
    if overrides:
        config = dataclasses.replace(config, **overrides)
    result = run_pipeline(config)
    _report_errors(result.errors)
    if result.reports is not None:
        print(render_report(result.reports, "markdown"), end="")
    print(f"processed {len(result.processed)} image(s) -> {config.output_dir}")
    return result.exit_code


def _add_common(parser, backend: bool = False) -> None:
    parser.add_argument("--config", type=Path, default=None,
                        help="TOML config file supplying parameter sections")
    parser.add_argument("--threads", type=int, default=None,
                        help="process images concurrently (default 1)")
    parser.add_argument("--fail-fast", action="store_true", default=None,
                        help="abort on the first per-file error")
    if backend:
        parser.add_argument("--backend", choices=FILTER_BACKENDS, default=None,
                            help="pairwise filter backend (default lattice)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segpost",
        description="Post-process semantic segmentation outputs: ensemble "
        "voting, dense-CRF refinement, and morphological cleanup.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic scenes with corrupted members")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--scenes", type=int, default=20)
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--classes", type=int, default=9)
    p.add_argument("--seeds", type=int, default=40, help="Voronoi seeds per scene")
    p.add_argument("--members", type=int, default=3)
    p.add_argument("--flip", type=float, default=0.1)
    p.add_argument("--speckle", type=float, default=0.02)
    p.add_argument("--confidence", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0, help="base rng seed (u64)")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("vote", help="majority-vote ensemble members into labels")
    _add_common(p)
    p.add_argument("--member", action="append", metavar="NAME=DIR",
                   help="member source directory; repeatable")
    p.add_argument("--palette", type=Path, default=None)
    p.add_argument("--tie-break", choices=TIE_BREAKS, default=None)
    p.add_argument("--save-avg-probs", action="store_true",
                   help="also write the averaged probabilities per stem")
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=_cmd_vote)

    p = sub.add_parser("crf", help="dense-CRF mean-field refinement")
    _add_common(p, backend=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--probs", type=Path, help="directory of .spm1 probability maps")
    group.add_argument("--labels", type=Path, help="directory of label PNGs")
    p.add_argument("--images", required=True, type=Path)
    p.add_argument("--palette", type=Path, default=None)
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=_cmd_crf)

    p = sub.add_parser("morph", help="remove small components and smooth boundaries")
    _add_common(p)
    p.add_argument("--labels", required=True, type=Path)
    p.add_argument("--palette", type=Path, default=None)
    p.add_argument("--min-area", type=int, default=None)
    p.add_argument("--connectivity", choices=CONNECTIVITIES, default=None)
    p.add_argument("--mode-radius", type=int, default=None)
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=_cmd_morph)

    p = sub.add_parser("eval", help="mIoU evaluation against ground truth")
    _add_common(p)
    p.add_argument("--pred", required=True, type=Path)
    p.add_argument("--gt", required=True, type=Path)
    p.add_argument("--palette", required=True, type=Path)
    p.add_argument("--stage-tag", default="eval")
    p.add_argument("--absent-as-zero", action="store_true")
    p.add_argument("--format", choices=REPORT_FORMATS, default="markdown")
    p.add_argument("--out", type=Path, default=None)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("colorize", help="render label maps through a palette")
    _add_common(p)
    p.add_argument("--labels", required=True, type=Path)
    p.add_argument("--palette", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=_cmd_colorize)

    p = sub.add_parser("pipeline", help="run the configured stage ladder end to end")
    _add_common(p, backend=True)
    p.add_argument("--crf-input", choices=CRF_INPUTS, default=None)
    p.add_argument("--absent-as-zero", action="store_true")
    p.add_argument("--out", type=Path, default=None, help="override output_dir")
    p.set_defaults(func=_cmd_pipeline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "command", None) == "pipeline" and args.config is None:
        parser.error("pipeline requires --config")
    try:
        return args.func(args)
    except (SegpostError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
