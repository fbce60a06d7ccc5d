"""Directory-level orchestration of the vote -> crf -> morph ladder.

Files are paired across directories by stem. Each stage consumes the
previous stage's labels, mirroring the cumulative rows of the ablation
table: members, then +E, +E+D, +E+D+M. Running the standalone
subcommands in sequence over intermediate files yields bit-identical
final labels, because every intermediate format round-trips exactly.
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .core import IGNORE_LABEL, LabelMap, ProbMap, argmax_labels, probs_from_labels
from .densecrf import FILTER_BACKENDS, CrfParams, crf_refine
from .ensemble import EnsembleConfig, average_probs, vote
from .errors import (
    ConfigError,
    EmptyEvaluationError,
    SegpostError,
    ShapeMismatchError,
    ValidationError,
)
from .io import (
    Palette,
    colorize,
    read_labelmap_png,
    read_palette_csv,
    read_probmap,
    read_rgb_png,
    write_labelmap_png,
    write_rgb_png,
)
from .metrics import ConfusionMatrix, EvalReport, accumulate, render_report
from .morphology import CONNECTIVITIES, mode_filter, remove_small_components

STAGES = ("vote", "crf", "morph")
STAGE_LETTERS = {"vote": "E", "crf": "D", "morph": "M"}
CRF_INPUTS = ("hard", "soft")

HARD_INPUT_EPSILON = 0.05


@dataclass(frozen=True)
class MemberSource:
    """One ensemble member: a directory of .spm1 probmaps or .png labels."""

    name: str
    probmap_dir: Optional[Path] = None
    labelmap_dir: Optional[Path] = None

    def __post_init__(self) -> None:
        if not self.name:
            raise ConfigError("member name must be non-empty")
        if (self.probmap_dir is None) == (self.labelmap_dir is None):
            raise ConfigError(
                f"member {self.name!r} needs exactly one of probmap_dir/labelmap_dir"
            )

    @property
    def directory(self) -> Path:
        return self.probmap_dir if self.probmap_dir is not None else self.labelmap_dir

    @property
    def suffix(self) -> str:
        return ".spm1" if self.probmap_dir is not None else ".png"


@dataclass(frozen=True)
class MorphParams:
    min_area: int = 64
    connectivity: str = "four"
    mode_radius: int = 0
    max_passes: int = 8

    def __post_init__(self) -> None:
        if self.min_area < 1:
            raise ConfigError(f"min_area must be >= 1, got {self.min_area}")
        if self.connectivity not in CONNECTIVITIES:
            raise ConfigError(
                f"connectivity must be one of {CONNECTIVITIES}, got {self.connectivity!r}"
            )
        if self.mode_radius < 0:
            raise ConfigError(f"mode_radius must be >= 0, got {self.mode_radius}")
        if self.max_passes < 1:
            raise ConfigError(f"max_passes must be >= 1, got {self.max_passes}")


@dataclass(frozen=True)
class PipelineConfig:
    """Everything one run needs; flag values override file values upstream."""

    members: tuple
    image_dir: Path
    palette: Path
    output_dir: Path
    stages: tuple = STAGES
    gt_dir: Optional[Path] = None
    crf: CrfParams = CrfParams()
    morph: MorphParams = MorphParams()
    ensemble: EnsembleConfig = None
    filter_backend: str = "lattice"
    crf_input: str = "hard"
    threads: int = 1
    fail_fast: bool = False
    absent_as_zero: bool = False

    def __post_init__(self) -> None:
        if not self.members:
            raise ConfigError("at least one member is required")
        names = [m.name for m in self.members]
        if len(set(names)) != len(names):
            raise ConfigError(f"member names must be unique, got {names}")
        if not self.stages:
            raise ConfigError("stages must be non-empty")
        for s in self.stages:
            if s not in STAGES:
                raise ConfigError(f"unknown stage {s!r}; choose from {STAGES}")
        order = [STAGES.index(s) for s in self.stages]
        if order != sorted(set(order)):
            raise ConfigError(
                f"stages must follow the fixed order {' -> '.join(STAGES)}, "
                f"got {list(self.stages)}"
            )
        if "vote" not in self.stages and len(self.members) > 1:
            raise ConfigError(
                "multiple members require the vote stage; drop members or add it"
            )
        if self.filter_backend not in FILTER_BACKENDS:
            raise ConfigError(
                f"filter_backend must be one of {FILTER_BACKENDS}, "
                f"got {self.filter_backend!r}"
            )
        if self.crf_input not in CRF_INPUTS:
            raise ConfigError(
                f"crf_input must be one of {CRF_INPUTS}, got {self.crf_input!r}"
            )
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        if self.ensemble is None:
            object.__setattr__(self, "ensemble", EnsembleConfig(tuple(names)))
        elif tuple(self.ensemble.member_names) != tuple(names):
            raise ConfigError("ensemble member names must match the members list")
        object.__setattr__(self, "members", tuple(self.members))
        object.__setattr__(self, "stages", tuple(self.stages))


def stage_tags(stages: Sequence[str]) -> list:
    """Cumulative tags for the configured stages, e.g. +E, +E+D, +E+D+M."""
    letters = [STAGE_LETTERS[s] for s in stages]
    return ["+" + "+".join(letters[: i + 1]) for i in range(len(letters))]


def _resolve(base: Path, value) -> Path:
    p = Path(value)
    return p if p.is_absolute() else base / p


def _pop(mapping: dict, key: str, default=None):
    return mapping.pop(key) if key in mapping else default


def members_from_rows(rows, base_dir: Path) -> tuple:
    """Parse [[members]] rows (name plus one source directory)."""
    if not rows:
        raise ConfigError("config needs a non-empty [[members]] list")
    members = []
    for row in rows:
        row = dict(row)
        name = _pop(row, "name")
        if name is None:
            raise ConfigError("every member needs a name")
        probmap_dir = _pop(row, "probmap_dir")
        labelmap_dir = _pop(row, "labelmap_dir")
        if row:
            raise ConfigError(f"unknown member keys: {sorted(row)}")
        members.append(
            MemberSource(
                str(name),
                _resolve(base_dir, probmap_dir) if probmap_dir else None,
                _resolve(base_dir, labelmap_dir) if labelmap_dir else None,
            )
        )
    return tuple(members)


def crf_from_mapping(mapping: dict) -> CrfParams:
    try:
        return CrfParams(**mapping)
    except TypeError as exc:
        raise ConfigError(f"bad [crf] section: {exc}") from exc


def morph_from_mapping(mapping: dict) -> MorphParams:
    try:
        return MorphParams(**mapping)
    except TypeError as exc:
        raise ConfigError(f"bad [morph] section: {exc}") from exc


def config_from_mapping(data: dict, base_dir: Path) -> PipelineConfig:
    """Build a PipelineConfig from parsed TOML, resolving relative paths."""
    data = dict(data)
    try:
        members = members_from_rows(_pop(data, "members"), base_dir)
        image_dir = _pop(data, "image_dir")
        palette = _pop(data, "palette")
        output_dir = _pop(data, "output_dir")
        for key, value in (("image_dir", image_dir), ("palette", palette),
                           ("output_dir", output_dir)):
            if value is None:
                raise ConfigError(f"config is missing required key {key!r}")
        gt_dir = _pop(data, "gt_dir")
        stages = tuple(_pop(data, "stages", list(STAGES)))
        crf = crf_from_mapping(_pop(data, "crf", {}))
        morph = morph_from_mapping(_pop(data, "morph", {}))
        ensemble_tbl = dict(_pop(data, "ensemble", {}))
        tie_break = ensemble_tbl.pop("tie_break", "priority")
        if ensemble_tbl:
            raise ConfigError(f"unknown ensemble keys: {sorted(ensemble_tbl)}")
        config = PipelineConfig(
            members=tuple(members),
            image_dir=_resolve(base_dir, image_dir),
            palette=_resolve(base_dir, palette),
            output_dir=_resolve(base_dir, output_dir),
            stages=stages,
            gt_dir=_resolve(base_dir, gt_dir) if gt_dir else None,
            crf=crf,
            morph=morph,
            ensemble=EnsembleConfig(tuple(m.name for m in members), str(tie_break)),
            filter_backend=str(_pop(data, "filter_backend", "lattice")),
            crf_input=str(_pop(data, "crf_input", "hard")),
            threads=int(_pop(data, "threads", 1)),
            fail_fast=bool(_pop(data, "fail_fast", False)),
            absent_as_zero=bool(_pop(data, "absent_as_zero", False)),
        )
    except TypeError as exc:
        raise ConfigError(f"bad config value: {exc}") from exc
    if data:
        raise ConfigError(f"unknown config keys: {sorted(data)}")
    return config


def load_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}") from exc
    return config_from_mapping(data, path.parent)


def _toml_scalar(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    text = str(value).replace("\\", "\\\\").replace('"', '\\"')
    return f'"{text}"'


def _toml_value(value) -> str:
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_scalar(v) for v in value) + "]"
    return _toml_scalar(value)


def dump_params_toml(sections: dict) -> str:
    """Render a {key: value or section dict} mapping as TOML text.

    Used for the config echoes the subcommands leave in their output
    directories; only the types our configs use are supported.
    """
    lines = [
        f"{key} = {_toml_value(value)}"
        for key, value in sections.items()
        if not isinstance(value, dict)
    ]
    for name, table in sections.items():
        if isinstance(table, dict):
            lines += ["", f"[{name}]"]
            lines += [f"{k} = {_toml_value(v)}" for k, v in table.items()]
    return "\n".join(lines) + "\n"


def render_config_toml(config: PipelineConfig) -> str:
    """Effective config as TOML; load_config on the result round-trips."""
    lines = [
        f"image_dir = {_toml_scalar(config.image_dir.resolve())}",
        f"palette = {_toml_scalar(config.palette.resolve())}",
        f"output_dir = {_toml_scalar(config.output_dir.resolve())}",
    ]
    if config.gt_dir is not None:
        lines.append(f"gt_dir = {_toml_scalar(config.gt_dir.resolve())}")
    stages = ", ".join(_toml_scalar(s) for s in config.stages)
    lines += [
        f"stages = [{stages}]",
        f"filter_backend = {_toml_scalar(config.filter_backend)}",
        f"crf_input = {_toml_scalar(config.crf_input)}",
        f"threads = {_toml_scalar(config.threads)}",
        f"fail_fast = {_toml_scalar(config.fail_fast)}",
        f"absent_as_zero = {_toml_scalar(config.absent_as_zero)}",
        "",
        "[crf]",
    ]
    for name in ("w_appearance", "theta_alpha", "theta_beta", "w_smooth",
                 "theta_gamma", "iterations", "clamp_floor"):
        lines.append(f"{name} = {_toml_scalar(getattr(config.crf, name))}")
    lines += ["", "[morph]"]
    for name in ("min_area", "connectivity", "mode_radius", "max_passes"):
        lines.append(f"{name} = {_toml_scalar(getattr(config.morph, name))}")
    lines += ["", "[ensemble]", f"tie_break = {_toml_scalar(config.ensemble.tie_break)}"]
    for m in config.members:
        key = "probmap_dir" if m.probmap_dir is not None else "labelmap_dir"
        lines += [
            "",
            "[[members]]",
            f"name = {_toml_scalar(m.name)}",
            f"{key} = {_toml_scalar(m.directory.resolve())}",
        ]
    return "\n".join(lines) + "\n"


def params_echo(config: PipelineConfig) -> dict:
    """Flat record of every effective parameter, embedded in reports."""
    echo = {
        "stages": "/".join(config.stages),
        "tie_break": config.ensemble.tie_break,
        "filter_backend": config.filter_backend,
        "crf_input": config.crf_input,
        "absent_as_zero": config.absent_as_zero,
    }
    for name in ("w_appearance", "theta_alpha", "theta_beta", "w_smooth",
                 "theta_gamma", "iterations", "clamp_floor"):
        echo[name] = getattr(config.crf, name)
    for name in ("min_area", "connectivity", "mode_radius", "max_passes"):
        echo[name] = getattr(config.morph, name)
    return echo


def labels_to_soft_probs(labels: LabelMap, epsilon: float = HARD_INPUT_EPSILON) -> ProbMap:
    """Re-expand hard labels for the CRF; ignore pixels become uniform."""
    c = labels.num_classes
    eps = epsilon if c > 1 else 0.0
    ignored = labels.data == IGNORE_LABEL
    if not ignored.any():
        return probs_from_labels(labels, eps)
    safe = labels.data.copy()
    safe[ignored] = 0
    probs = probs_from_labels(LabelMap(safe, c), eps)
    arr = probs.data.copy()
    arr[ignored] = np.float32(1.0 / c)
    return ProbMap(arr)


@dataclass
class StemOutcome:
    stem: str
    member_labels: dict
    stage_labels: dict


@dataclass
class PipelineResult:
    exit_code: int
    processed: list
    errors: list
    reports: Optional[list] = None


def run_over_stems(stems, worker, threads: int = 1, fail_fast: bool = False) -> tuple:
    """Apply worker(stem) to each stem, optionally in a thread pool.

    Returns (results dict, error list, aborted flag); a failing stem
    records (stem, message) and, under fail_fast, stops the run.
    """
    results = {}
    errors = []
    aborted = False
    if threads <= 1:
        for stem in stems:
            try:
                results[stem] = worker(stem)
            except (SegpostError, OSError) as exc:
                errors.append((stem, str(exc)))
                if fail_fast:
                    aborted = True
                    break
        return results, errors, aborted
    with concurrent.futures.ThreadPoolExecutor(threads) as pool:
        futures = {pool.submit(worker, stem): stem for stem in stems}
        for future in concurrent.futures.as_completed(futures):
            stem = futures[future]
            try:
                results[stem] = future.result()
            except (SegpostError, OSError) as exc:
                errors.append((stem, str(exc)))
                if fail_fast:
                    aborted = True
                    pool.shutdown(wait=True, cancel_futures=True)
                    break
    return results, errors, aborted


def _check_inputs(config: PipelineConfig) -> None:
    missing = []
    if not config.palette.is_file():
        missing.append(str(config.palette))
    dirs = [config.image_dir] + [m.directory for m in config.members]
    if config.gt_dir is not None:
        dirs.append(config.gt_dir)
    missing += [str(d) for d in dirs if not d.is_dir()]
    if missing:
        raise ConfigError("missing inputs: " + ", ".join(missing))


def discover_stems(sources) -> tuple:
    """Pair files across (label, directory, suffix) sources by stem.

    Returns stems present in every source (sorted) and one error per
    stem that some source lacks, naming the sources it is missing from.
    """
    stem_sets = {
        label: {p.stem for p in Path(d).glob(f"*{suffix}")}
        for label, d, suffix in sources
    }
    universe = set().union(*stem_sets.values())
    complete = set.intersection(*stem_sets.values())
    errors = []
    for stem in sorted(universe - complete):
        absent = [label for label, stems in stem_sets.items() if stem not in stems]
        errors.append((stem, f"missing from: {', '.join(absent)}"))
    return sorted(complete), errors


def _discover_stems(config: PipelineConfig) -> tuple:
    sources = [("image_dir", config.image_dir, ".png")]
    sources += [(f"member {m.name}", m.directory, m.suffix) for m in config.members]
    if config.gt_dir is not None:
        sources.append(("gt_dir", config.gt_dir, ".png"))
    return discover_stems(sources)


def _read_members(config: PipelineConfig, palette: Palette, stem: str, image) -> tuple:
    member_labels = {}
    member_probs = []
    for m in config.members:
        path = m.directory / f"{stem}{m.suffix}"
        if m.probmap_dir is not None:
            probs = read_probmap(path)
            if probs.num_classes != palette.num_classes:
                raise ValidationError(
                    f"{path}: {probs.num_classes} classes, palette has "
                    f"{palette.num_classes}"
                )
            labels = argmax_labels(probs)
        else:
            probs = None
            labels = read_labelmap_png(path, palette.num_classes)
        if (labels.height, labels.width) != (image.height, image.width):
            raise ShapeMismatchError(
                f"{path}: {labels.height}x{labels.width} does not match image "
                f"{image.height}x{image.width}"
            )
        member_labels[m.name] = labels
        member_probs.append(probs if probs is not None
                            else labels_to_soft_probs(labels))
    return member_labels, member_probs


def _process_stem(config: PipelineConfig, palette: Palette, stem: str) -> StemOutcome:
    image = read_rgb_png(config.image_dir / f"{stem}.png")
    member_labels, member_probs = _read_members(config, palette, stem, image)
    tags = stage_tags(config.stages)
    current = next(iter(member_labels.values()))
    stage_labels = {}
    for stage, tag in zip(config.stages, tags):
        if stage == "vote":
            current = vote(list(member_labels.values()), config.ensemble)
        elif stage == "crf":
            if config.crf_input == "hard":
                probs_in = labels_to_soft_probs(current)
            else:
                probs_in = average_probs(member_probs)
            refined = crf_refine(probs_in, image, config.crf, config.filter_backend)
            current = argmax_labels(refined)
        else:
            current = remove_small_components(
                current,
                config.morph.min_area,
                config.morph.connectivity,
                config.morph.max_passes,
            ).labels
            if config.morph.mode_radius >= 1:
                current = mode_filter(current, config.morph.mode_radius)
        stage_labels[tag] = current
    write_labelmap_png(current, config.output_dir / "labels" / f"{stem}.png")
    write_rgb_png(colorize(current, palette), config.output_dir / "color" / f"{stem}.png")
    return StemOutcome(stem, member_labels, stage_labels)


def _evaluate(
    config: PipelineConfig, palette: Palette, outcomes: dict, errors: list
) -> list:
    """Accumulate per-stage confusion matrices in sorted-stem order."""
    c = palette.num_classes
    tags = stage_tags(config.stages)
    member_cms = {m.name: ConfusionMatrix.zeros(c) for m in config.members}
    stage_cms = {t: ConfusionMatrix.zeros(c) for t in tags}
    for stem in sorted(outcomes):
        outcome = outcomes[stem]
        try:
            gt = read_labelmap_png(config.gt_dir / f"{stem}.png", c)
            for name, labels in outcome.member_labels.items():
                member_cms[name] = accumulate(labels, gt, member_cms[name])
            for tag, labels in outcome.stage_labels.items():
                stage_cms[tag] = accumulate(labels, gt, stage_cms[tag])
        except (SegpostError, OSError) as exc:
            errors.append((stem, str(exc)))
            if config.fail_fast:
                return None
    echo = params_echo(config)
    reports = [
        EvalReport.from_confusion(
            member_cms[m.name], palette.names, m.name, echo, config.absent_as_zero
        )
        for m in config.members
    ]
    reports += [
        EvalReport.from_confusion(
            stage_cms[t], palette.names, t, echo, config.absent_as_zero
        )
        for t in tags
    ]
    return reports


def run_pipeline(config: PipelineConfig) -> PipelineResult:
    """Run the configured stages over every complete stem, then report."""
    _check_inputs(config)
    palette = read_palette_csv(config.palette)
    stems, errors = _discover_stems(config)
    for sub in ("", "labels", "color"):
        (config.output_dir / sub).mkdir(parents=True, exist_ok=True)
    (config.output_dir / "config_echo.toml").write_text(
        render_config_toml(config), encoding="utf-8"
    )
    if errors and config.fail_fast:
        return PipelineResult(1, [], errors)

    outcomes, run_errors, aborted = run_over_stems(
        stems,
        lambda stem: _process_stem(config, palette, stem),
        config.threads,
        config.fail_fast,
    )
    errors += run_errors

    reports = None
    if config.gt_dir is not None and outcomes and not aborted:
        try:
            reports = _evaluate(config, palette, outcomes, errors)
        except EmptyEvaluationError as exc:
            errors.append(("<eval>", str(exc)))
        if reports is not None:
            (config.output_dir / "report.md").write_text(
                render_report(reports, "markdown"), encoding="utf-8"
            )
            (config.output_dir / "report.csv").write_text(
                render_report(reports, "csv"), encoding="utf-8"
            )
    exit_code = 0 if not errors else 1
    return PipelineResult(exit_code, sorted(outcomes), errors, reports)
