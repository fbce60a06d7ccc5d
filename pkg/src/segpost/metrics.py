"""Confusion-matrix accumulation, per-class IoU, mIoU, and report rendering.

Ground-truth ignore pixels are excluded entirely. Predictions of the
ignore sentinel where the ground truth is valid land in a separate void
bucket: they count toward the ground-truth class's union (a refusal to
predict is a false negative) but toward no class's intersection.
"""

from __future__ import annotations

import csv
import io as _io
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .core import IGNORE_LABEL, LabelMap
from .errors import EmptyEvaluationError, ParameterError, ShapeMismatchError, ValidationError

REPORT_FORMATS = ("markdown", "csv")


@dataclass(frozen=True)
class ConfusionMatrix:
    """Pixel counts by (ground truth, prediction) plus a void-pred bucket.

    counts[g, p] is the number of pixels with ground truth g predicted p;
    void_pred[g] counts pixels with ground truth g predicted as ignore.
    """

    num_classes: int
    counts: np.ndarray
    void_pred: np.ndarray

    def __post_init__(self) -> None:
        c = self.num_classes
        if not 1 <= c <= 255:
            raise ValidationError(f"num_classes must be in [1, 255], got {c}")
        if self.counts.shape != (c, c):
            raise ValidationError(
                f"counts must have shape ({c}, {c}), got {self.counts.shape}"
            )
        if self.void_pred.shape != (c,):
            raise ValidationError(
                f"void_pred must have shape ({c},), got {self.void_pred.shape}"
            )
        for name in ("counts", "void_pred"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.uint64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def zeros(cls, num_classes: int) -> "ConfusionMatrix":
        return cls(
            num_classes,
            np.zeros((num_classes, num_classes), dtype=np.uint64),
            np.zeros(num_classes, dtype=np.uint64),
        )

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        """Elementwise sum; equals accumulating the union of the inputs."""
        if other.num_classes != self.num_classes:
            raise ValidationError(
                f"cannot merge matrices with {self.num_classes} and "
                f"{other.num_classes} classes"
            )
        return ConfusionMatrix(
            self.num_classes,
            self.counts + other.counts,
            self.void_pred + other.void_pred,
        )

    def total(self) -> int:
        """Number of evaluated pixels (ground truth not ignore)."""
        return int(self.counts.sum()) + int(self.void_pred.sum())


def accumulate(pred: LabelMap, gt: LabelMap, cm: ConfusionMatrix) -> ConfusionMatrix:
    """Add one prediction/ground-truth pair into a confusion matrix.

    Returns a new matrix; accumulation is commutative across images.
    """
    if pred.data.shape != gt.data.shape:
        raise ShapeMismatchError(
            f"pred shape {pred.data.shape} != gt shape {gt.data.shape}"
        )
    if pred.num_classes != cm.num_classes or gt.num_classes != cm.num_classes:
        raise ValidationError(
            f"class counts differ: pred {pred.num_classes}, gt {gt.num_classes}, "
            f"matrix {cm.num_classes}"
        )
    c = cm.num_classes
    valid = gt.data != IGNORE_LABEL
    g = gt.data[valid].astype(np.int64)
    p = pred.data[valid].astype(np.int64)
    void = p == IGNORE_LABEL
    pair = np.bincount(g[~void] * c + p[~void], minlength=c * c).reshape(c, c)
    voids = np.bincount(g[void], minlength=c)
    return ConfusionMatrix(
        c,
        cm.counts + pair.astype(np.uint64),
        cm.void_pred + voids.astype(np.uint64),
    )


def iou_per_class(cm: ConfusionMatrix) -> list[Optional[float]]:
    """IoU per class, or None for absent classes (zero union).

    IoU_c = TP_c / (gt_total_c + pred_total_c - TP_c), with void
    predictions included in gt_total_c and nowhere else.
    """
    tp = np.diag(cm.counts).astype(np.float64)
    gt_total = cm.counts.sum(axis=1).astype(np.float64) + cm.void_pred.astype(np.float64)
    pred_total = cm.counts.sum(axis=0).astype(np.float64)
    union = gt_total + pred_total - tp
    out: list[Optional[float]] = []
    for c in range(cm.num_classes):
        out.append(float(tp[c] / union[c]) if union[c] > 0 else None)
    return out


def miou(cm: ConfusionMatrix, absent_as_zero: bool = False) -> float:
    """Mean IoU over present classes (or all classes with absent_as_zero)."""
    ious = iou_per_class(cm)
    present = [v for v in ious if v is not None]
    if not present:
        raise EmptyEvaluationError(
            "all classes are absent; nothing was evaluated"
        )
    if absent_as_zero:
        return float(sum(present) / len(ious))
    return float(sum(present) / len(present))


@dataclass(frozen=True)
class EvalReport:
    """Per-class IoUs and mIoU for one pipeline stage.

    Built from a confusion matrix via from_confusion, miou always equals
    the mean of present per-class IoUs. Direct construction accepts an
    explicit miou so externally published rows (which may average over
    classes not listed) can be transcribed for rendering.
    """

    per_class_iou: tuple
    miou: float
    stage_tag: str
    params_echo: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.stage_tag:
            raise ValidationError("stage_tag must be non-empty")
        names = [name for name, _ in self.per_class_iou]
        if len(set(names)) != len(names) or any(not n for n in names):
            raise ValidationError("class names must be unique and non-empty")
        for name, value in self.per_class_iou:
            if value is not None and not 0.0 <= value <= 1.0:
                raise ValidationError(f"IoU for {name!r} out of [0, 1]: {value}")
        if not 0.0 <= self.miou <= 1.0:
            raise ValidationError(f"miou out of [0, 1]: {self.miou}")
        object.__setattr__(self, "per_class_iou", tuple(self.per_class_iou))

    @classmethod
    def from_confusion(
        cls,
        cm: ConfusionMatrix,
        class_names: Sequence[str],
        stage_tag: str,
        params_echo: Optional[Mapping[str, object]] = None,
        absent_as_zero: bool = False,
    ) -> "EvalReport":
        if len(class_names) != cm.num_classes:
            raise ValidationError(
                f"{len(class_names)} class names for {cm.num_classes} classes"
            )
        ious = iou_per_class(cm)
        if absent_as_zero:
            ious = [0.0 if v is None else v for v in ious]
        return cls(
            per_class_iou=tuple(zip(class_names, ious)),
            miou=miou(cm, absent_as_zero=absent_as_zero),
            stage_tag=stage_tag,
            params_echo=dict(params_echo or {}),
        )

    @property
    def class_names(self) -> tuple:
        return tuple(name for name, _ in self.per_class_iou)


def _fmt(value: Optional[float]) -> str:
    return "" if value is None else f"{100.0 * value:.2f}"


def _params_line(report: EvalReport) -> str:
    parts = [f"{k}={v}" for k, v in report.params_echo.items()]
    return f"{report.stage_tag}: " + (", ".join(parts) if parts else "none")


def render_report(
    report: Union[EvalReport, Sequence[EvalReport]], format: str = "markdown"
) -> str:
    """Render one row per stage, mIoU first then per-class columns.

    Values are scaled by 100 and rounded to two decimals; absent classes
    render as empty cells. All stages must share one class-name order.
    """
    if format not in REPORT_FORMATS:
        raise ParameterError(f"format must be one of {REPORT_FORMATS}, got {format!r}")
    reports = [report] if isinstance(report, EvalReport) else list(report)
    if not reports:
        raise ValidationError("no reports to render")
    names = reports[0].class_names
    for r in reports[1:]:
        if r.class_names != names:
            raise ValidationError(
                f"stage {r.stage_tag!r} has different class names than "
                f"{reports[0].stage_tag!r}"
            )
    header = ["stage", "miou", *names]
    rows = [
        [r.stage_tag, _fmt(r.miou), *(_fmt(v) for _, v in r.per_class_iou)]
        for r in reports
    ]
    if format == "csv":
        buf = _io.StringIO()
        for r in reports:
            buf.write(f"# {_params_line(r)}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
        return buf.getvalue()
    lines = ["| " + " | ".join(header) + " |"]
    lines.append("|" + "|".join(" --- " for _ in header) + "|")
    for row in rows:
        lines.append("| " + " | ".join(cell if cell else "-" for cell in row) + " |")
    lines.append("")
    lines.append("Parameters:")
    for r in reports:
        lines.append(f"- {_params_line(r)}")
    return "\n".join(lines) + "\n"


def parse_report_csv(text: str) -> list[EvalReport]:
    """Parse a CSV report back into reports (params lines are dropped)."""
    rows = [
        row
        for row in csv.reader(_io.StringIO(text))
        if row and not row[0].startswith("#")
    ]
    if len(rows) < 2:
        raise ValidationError("CSV report needs a header and at least one row")
    header = rows[0]
    if header[:2] != ["stage", "miou"]:
        raise ValidationError(f"unexpected CSV header: {header!r}")
    names = header[2:]
    out = []
    for row in rows[1:]:
        if len(row) != len(header):
            raise ValidationError(f"row length {len(row)} != header {len(header)}")
        ious = tuple(
            (name, None if cell == "" else float(cell) / 100.0)
            for name, cell in zip(names, row[2:])
        )
        out.append(EvalReport(ious, float(row[1]) / 100.0, row[0]))
    return out
