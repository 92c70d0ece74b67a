"""End-to-end detection: cluster the cloud, propose boxes, classify crops, filter.

Stage order is parse, cluster, denoise (small clusters), project, denoise
(top corners), crop, classify, filter. Each stage is timed on the monotonic
clock and any exception leaving a stage carries the stage name in its
``stage`` attribute so callers can report where a run failed.
"""

from __future__ import annotations

import contextlib
import json
import logging
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .calibration import DLTCalibrator, ProjectionMatrix, load_correspondences, solve_projection_dlt
from .classifier import Detection, ExternalClassifier, StubClassifier, classify_all, filter_by_lambda
from .clustering import cluster_grid
from .config import PipelineConfig
from .evaluation import dump_frames, evaluate, load_frames
from .exceptions import ConfigError, InputError, ParseError
from .pointcloud_io import Image, PointCloud, draw_bbox, draw_text, read_cloud, read_image, text_size, write_ppm
from .proposal import crop_subimage, denoise_small, denoise_top_corners, project_cluster_bbox

__all__ = [
    "STAGES",
    "StageTimings",
    "FrameResult",
    "make_backend",
    "load_projection",
    "detect_frame",
    "annotate",
    "run_detect",
    "run_eval",
    "run_bench",
    "format_bench_table",
    "DepthObjectDetector",
]

log = logging.getLogger(__name__)

STAGES = ("parse", "cluster", "denoise", "project", "crop", "classify", "filter")
_UNKNOWN_LABEL_COLOR = (255, 255, 255)


@dataclass
class StageTimings:
    """Wall-clock milliseconds per stage; ``total`` spans the whole run."""

    ms: dict = field(default_factory=lambda: dict.fromkeys(STAGES, 0.0))
    total: float = 0.0

    def to_json(self) -> dict:
        out = {k: round(v, 3) for k, v in self.ms.items()}
        out["total"] = round(self.total, 3)
        return out


@dataclass
class FrameResult:
    frame: str
    detections: list[Detection]
    annotated: Image
    timings: StageTimings
    n_clusters: int
    n_proposals: int


@contextlib.contextmanager
def _stage(name, timings: StageTimings):
    t0 = time.perf_counter()
    try:
        yield
    except Exception as exc:
        if not hasattr(exc, "stage"):
            exc.stage = name
        raise
    finally:
        timings.ms[name] += (time.perf_counter() - t0) * 1e3


def make_backend(config: PipelineConfig):
    if config.backend == "external":
        return ExternalClassifier(config.external_cmd, config.timeout_s)
    return StubClassifier(config.palette_dict())


def load_projection(path) -> ProjectionMatrix:
    """Projection from a calibration file holding either correspondences or a matrix."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    if isinstance(doc, dict) and "projection" in doc:
        try:
            return ProjectionMatrix(doc["projection"])
        except (TypeError, ValueError) as exc:
            raise ParseError(f"{path}: bad projection matrix: {exc}") from None
    return solve_projection_dlt(load_correspondences(text))


def annotate(image: Image, detections, palette) -> Image:
    """Draw each detection's box and ``LABEL 0.97`` tag in the label's palette color."""
    out = image
    for det in detections:
        color = palette.get(det.label, _UNKNOWN_LABEL_COLOR)
        out = draw_bbox(out, det.bbox, color)
        tag = f"{det.label} {det.prob:.2f}"
        _, th = text_size(tag)
        y = det.bbox.y_min - th - 1
        if y < 0:
            y = det.bbox.y_min + 2
        out = draw_text(out, det.bbox.x_min + 1, y, tag, color)
    return out


def detect_frame(
    cloud: PointCloud,
    image: Image,
    projection: ProjectionMatrix,
    config: PipelineConfig = PipelineConfig(),
    backend=None,
    frame: str = "frame",
    timings: StageTimings | None = None,
) -> FrameResult:
    """Run every stage after parsing on one frame.

    Only proposals that survive both denoising rules reach the backend, and
    detections keep proposal order whatever order the backend finishes in.
    """
    timings = timings or StageTimings()
    backend = backend if backend is not None else make_backend(config)
    params = config.proposal_params()
    t0 = time.perf_counter()

    with _stage("cluster", timings):
        clusters = cluster_grid(cloud, config.cluster_params())
    with _stage("denoise", timings):
        kept = denoise_small(clusters, len(cloud), params.min_fraction) if len(cloud) else []
    proposals = []
    with _stage("project", timings):
        ids = {id(c): k for k, c in enumerate(clusters)}
        for c in kept:
            p = project_cluster_bbox(projection, c, cloud, image.width, image.height, params, ids[id(c)])
            if p is not None:
                proposals.append(p)
    with _stage("denoise", timings):
        proposals = denoise_top_corners(proposals, image.width, image.height, params.corner_frac)
    with _stage("crop", timings):
        crops = [crop_subimage(image, p.bbox) for p in proposals]
    with _stage("classify", timings):
        scores = classify_all(backend, crops, config.pool_size)
    with _stage("filter", timings):
        detections = filter_by_lambda(zip(proposals, scores), config.lambda_)
    annotated = annotate(image, detections, config.palette_dict())

    timings.total += (time.perf_counter() - t0) * 1e3
    log.info("%s: %d clusters, %d proposals, %d detections", frame, len(clusters), len(proposals), len(detections))
    return FrameResult(frame, detections, annotated, timings, len(clusters), len(proposals))


def _frame_name(config: PipelineConfig) -> str:
    if config.frame:
        return config.frame
    cloud = Path(config.cloud)
    return cloud.parent.name or cloud.stem


def run_detect(config: PipelineConfig, backend=None, write: bool = True) -> FrameResult:
    """Read the configured inputs, detect, and write outputs to ``config.out``.

    Outputs: ``detections.json`` (evaluation frame format), ``annotated.ppm``
    and ``timings.json`` (milliseconds, 3 decimals).
    """
    for key in ("cloud", "image", "calib"):
        if not getattr(config, key):
            raise ConfigError(f"detect needs the '{key}' path")
    if backend is None:
        backend = make_backend(config)
    timings = StageTimings()
    t0 = time.perf_counter()
    with _stage("parse", timings):
        cloud = read_cloud(config.cloud)
        image = read_image(config.image)
        projection = load_projection(config.calib)
    result = detect_frame(cloud, image, projection, config, backend, _frame_name(config), timings)
    timings.total = (time.perf_counter() - t0) * 1e3
    if write and config.out:
        write_outputs(result, config.out)
    return result


def write_outputs(result: FrameResult, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "detections.json").write_text(dump_frames([(result.frame, result.detections)]))
    (out / "annotated.ppm").write_bytes(write_ppm(result.annotated))
    (out / "timings.json").write_text(json.dumps(result.timings.to_json(), indent=2) + "\n")


# -- evaluation ------------------------------------------------------------------


def _merge(frame_lists, what):
    merged = []
    seen = set()
    for frames in frame_lists:
        for name, boxes in frames:
            if name in seen:
                raise InputError(f"frame {name!r} appears in more than one {what} file")
            seen.add(name)
            merged.append((name, boxes))
    return merged


def align_frames(det_frames, gt_frames):
    """Order detections by ground-truth frame; a detection file with no frames means none anywhere."""
    if not gt_frames:
        raise InputError("empty dataset: no ground-truth frames")
    if not det_frames:
        return [[] for _ in gt_frames], [g for _, g in gt_frames]
    dets = dict(det_frames)
    gt_names = [n for n, _ in gt_frames]
    missing = [n for n in gt_names if n not in dets]
    extra = sorted(set(dets) - set(gt_names))
    if missing or extra:
        parts = []
        if missing:
            parts.append(f"missing from detections: {', '.join(missing)}")
        if extra:
            parts.append(f"missing from ground truth: {', '.join(extra)}")
        raise InputError("frame sets differ; " + "; ".join(parts))
    return [dets[n] for n in gt_names], [g for _, g in gt_frames]


def run_eval(det_paths, gt_paths, iou_thresh: float = 0.5, class_aware: bool = True) -> dict:
    """Evaluate detection files against ground-truth files (frames matched by name).

    The report carries the configured matching mode plus the mean IoU under
    the other mode, so both readings of an IoU figure are available.
    """
    if isinstance(det_paths, (str, Path)):
        det_paths = [det_paths]
    if isinstance(gt_paths, (str, Path)):
        gt_paths = [gt_paths]
    dets = _merge([load_frames(p, with_prob=True) for p in det_paths], "detection")
    gts = _merge([load_frames(p, with_prob=False) for p in gt_paths], "ground-truth")
    d, g = align_frames(dets, gts)
    report = evaluate(d, g, iou_thresh, class_aware)
    other = evaluate(d, g, iou_thresh, not class_aware)
    doc = report.to_json()
    doc["class_agnostic_mean_iou" if class_aware else "class_aware_mean_iou"] = other.mean_iou
    return doc


# -- bench -----------------------------------------------------------------------


def run_bench(config: PipelineConfig, repeat: int = 5, backend=None) -> dict:
    """Run detection ``repeat`` times on the same inputs; min/median/mean per stage in ms."""
    if not isinstance(repeat, int) or repeat < 1:
        raise ConfigError("repeat must be a positive integer")
    if backend is None:
        backend = make_backend(config)
    runs = [run_detect(config, backend, write=False) for _ in range(repeat)]
    summary = {}
    for stage in STAGES + ("total",):
        vals = [r.timings.total if stage == "total" else r.timings.ms[stage] for r in runs]
        summary[stage] = {
            "min": round(min(vals), 3),
            "median": round(statistics.median(vals), 3),
            "mean": round(statistics.fmean(vals), 3),
        }
    return {
        "repeat": repeat,
        "frame": runs[0].frame,
        "clusters": runs[0].n_clusters,
        "proposals": runs[0].n_proposals,
        "detections": len(runs[0].detections),
        "stages_ms": summary,
    }


def format_bench_table(bench: dict) -> str:
    rows = [f"{'stage':<10}{'min':>12}{'median':>12}{'mean':>12}"]
    for stage, s in bench["stages_ms"].items():
        rows.append(f"{stage:<10}{s['min']:>12.3f}{s['median']:>12.3f}{s['mean']:>12.3f}")
    rows.append(
        f"frame {bench['frame']}: {bench['clusters']} clusters, {bench['proposals']} proposals, "
        f"{bench['detections']} detections, {bench['repeat']} runs (ms)"
    )
    return "\n".join(rows)


# -- estimator -------------------------------------------------------------------


class DepthObjectDetector(BaseEstimator):
    """Estimator wrapper around the full pipeline.

    ``fit(world, pixels)`` calibrates the camera from correspondences;
    ``predict(frames)`` takes ``(cloud, image)`` pairs and returns one list of
    :class:`~depthdet.classifier.Detection` per frame. A fixed ``projection``
    may be passed instead of fitting.

    Parameters
    ----------
    tau, min_points : clustering cutoff (m) and minimum cluster size
    min_fraction, corner_frac, margin_frac : proposal parameters
    lam : float, default=0.2
        Minimum top-1 probability kept by the filter.
    backend : classifier backend or None
        ``None`` uses the mean-color stub.
    projection : ProjectionMatrix or None
    pool_size : int, default=4
    """

    def __init__(
        self,
        tau=0.06,
        min_points=50,
        min_fraction=0.02,
        corner_frac=0.15,
        margin_frac=0.02,
        lam=0.2,
        backend=None,
        projection=None,
        pool_size=4,
    ):
        self.tau = tau
        self.min_points = min_points
        self.min_fraction = min_fraction
        self.corner_frac = corner_frac
        self.margin_frac = margin_frac
        self.lam = lam
        self.backend = backend
        self.projection = projection
        self.pool_size = pool_size

    def _config(self) -> PipelineConfig:
        return PipelineConfig(
            tau=self.tau,
            min_points=self.min_points,
            min_fraction=self.min_fraction,
            corner_frac=self.corner_frac,
            margin_frac=self.margin_frac,
            lambda_=self.lam,
            pool_size=self.pool_size,
        )

    def fit(self, X, y):
        self._config()
        self.calibrator_ = DLTCalibrator().fit(X, y)
        self.projection_ = self.calibrator_.projection_
        return self

    def _projection(self):
        if self.projection is not None:
            return self.projection
        check_is_fitted(self, "projection_")
        return self.projection_

    def predict(self, frames):
        config = self._config()
        P = self._projection()
        backend = self.backend if self.backend is not None else make_backend(config)
        return [detect_frame(cloud, image, P, config, backend).detections for cloud, image in frames]

    def score(self, frames, ground_truth):
        """mAP of the predictions against per-frame ground-truth boxes."""
        return evaluate(self.predict(frames), ground_truth).map_score
