"""Sub-image classification backends and the probability-threshold filter.

A backend is any object with ``classify(image) -> list[ClassScore]`` returning
scores sorted by descending probability. Two are provided: a deterministic
mean-color backend for tests and synthetic data, and an adapter that runs an
external program speaking PPM-on-stdin / JSON-on-stdout, so that a real
pretrained network can be plugged in without an in-process dependency.
"""

from __future__ import annotations

import json
import math
import shlex
import subprocess
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from ._validation import check_interval, check_rgb
from .exceptions import BackendError, BackendTimeoutError, ConfigError, ProtocolError
from .pointcloud_io import BBox2D, Image, write_ppm

__all__ = [
    "ClassScore",
    "Detection",
    "ClassifierBackend",
    "DEFAULT_PALETTE",
    "DEFAULT_LAMBDA",
    "stub_classify",
    "StubClassifier",
    "external_classify",
    "ExternalClassifier",
    "classify_all",
    "filter_by_lambda",
    "parse_palette",
    "format_palette",
]

DEFAULT_LAMBDA = 0.2
DEFAULT_TEMPERATURE = 25.0
DEFAULT_TIMEOUT_S = 10.0
DEFAULT_POOL = 4

# Shared with the synthetic scene generator. Colors are pairwise >= 200 apart
# in RGB space and far from the (200, 200, 200) scene background.
DEFAULT_PALETTE = {
    "red": (220, 30, 30),
    "green": (30, 190, 50),
    "blue": (30, 50, 220),
}


@dataclass(frozen=True)
class ClassScore:
    label: str
    prob: float

    def __post_init__(self):
        if not isinstance(self.label, str):
            raise TypeError("label must be a string")
        p = float(self.prob)
        if not (0.0 <= p <= 1.0):
            raise ValueError(f"prob must lie in [0, 1], got {self.prob!r}")
        object.__setattr__(self, "prob", p)


@dataclass(frozen=True)
class Detection:
    bbox: BBox2D
    label: str
    prob: float
    cluster_id: int = -1

    def to_json(self) -> dict:
        return {"bbox": self.bbox.as_list(), "label": self.label, "prob": self.prob}


class ClassifierBackend(Protocol):
    def classify(self, subimage: Image) -> list[ClassScore]:
        """Scores for ``subimage``, sorted by descending probability."""


def _sorted_scores(scores):
    return sorted(scores, key=lambda s: (-s.prob, s.label))


def _check_palette(palette):
    if not palette:
        raise ConfigError("palette must contain at least one label")
    colors = {label: check_rgb(rgb, f"palette[{label!r}]") for label, rgb in palette.items()}
    if len(set(colors.values())) != len(colors):
        raise ConfigError("palette colors must be pairwise distinct")
    return colors


def stub_classify(subimage: Image, palette=None, temperature: float = DEFAULT_TEMPERATURE) -> list[ClassScore]:
    """Softmax over negative RGB distances between the mean color and each palette color."""
    colors = _check_palette(DEFAULT_PALETTE if palette is None else palette)
    labels = list(colors)
    ref = np.array([colors[k] for k in labels], dtype=np.float64)
    mean = subimage.pixels.reshape(-1, 3).astype(np.float64).mean(axis=0)
    dist = np.sqrt(((ref - mean) ** 2).sum(axis=1))
    logits = -(dist - dist.min()) / temperature
    e = np.exp(logits)
    probs = e / e.sum()
    return _sorted_scores(ClassScore(k, min(float(p), 1.0)) for k, p in zip(labels, probs))


class StubClassifier:
    """Deterministic mean-color backend (see :func:`stub_classify`)."""

    def __init__(self, palette=None, temperature=DEFAULT_TEMPERATURE):
        self.palette = dict(_check_palette(DEFAULT_PALETTE if palette is None else palette))
        if not temperature > 0:
            raise ConfigError("temperature must be positive")
        self.temperature = float(temperature)

    def classify(self, subimage: Image) -> list[ClassScore]:
        return stub_classify(subimage, self.palette, self.temperature)


def _parse_scores(stdout: bytes) -> list[ClassScore]:
    try:
        doc = json.loads(stdout.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"classifier output is not JSON: {exc}") from None
    if not isinstance(doc, list):
        raise ProtocolError("classifier output must be a JSON array")
    scores = []
    for item in doc:
        if not isinstance(item, dict) or set(item) != {"label", "prob"}:
            raise ProtocolError(f"bad score entry {item!r}")
        label, prob = item["label"], item["prob"]
        if not isinstance(label, str):
            raise ProtocolError(f"label must be a string: {item!r}")
        if isinstance(prob, bool) or not isinstance(prob, (int, float)) or not math.isfinite(prob):
            raise ProtocolError(f"prob must be a number: {item!r}")
        if not 0.0 <= prob <= 1.0:
            raise ProtocolError(f"prob {prob} outside [0, 1]")
        scores.append(ClassScore(label, float(prob)))
    if sum(s.prob for s in scores) > 1.0 + 1e-9:
        raise ProtocolError("class probabilities sum to more than 1")
    return _sorted_scores(scores)


def external_classify(subimage: Image, command, timeout_s: float = DEFAULT_TIMEOUT_S) -> list[ClassScore]:
    """Classify by piping the sub-image as binary PPM into ``command``.

    ``command`` is an argv list or a shell-style string (split with
    :func:`shlex.split`, never run through a shell). The child must print a
    JSON array of ``{"label": str, "prob": number}`` and exit 0.
    """
    argv = shlex.split(command) if isinstance(command, str) else list(command)
    if not argv:
        raise ConfigError("external classifier command is empty")
    try:
        proc = subprocess.run(argv, input=write_ppm(subimage), capture_output=True, timeout=timeout_s)
    except subprocess.TimeoutExpired:
        raise BackendTimeoutError(f"classifier {argv[0]!r} timed out after {timeout_s} s") from None
    except OSError as exc:
        raise BackendError(f"cannot run classifier {argv[0]!r}: {exc}") from None
    if proc.returncode != 0:
        err = proc.stderr.decode("utf-8", errors="replace").strip()
        raise BackendError(f"classifier exited with status {proc.returncode}: {err}")
    return _parse_scores(proc.stdout)


class ExternalClassifier:
    """Backend adapter for an external classification program."""

    def __init__(self, command, timeout_s=DEFAULT_TIMEOUT_S):
        if not command:
            raise ConfigError("external classifier command is empty")
        if not timeout_s > 0:
            raise ConfigError("timeout_s must be positive")
        self.command = command
        self.timeout_s = float(timeout_s)

    def classify(self, subimage: Image) -> list[ClassScore]:
        return external_classify(subimage, self.command, self.timeout_s)


def classify_all(backend: ClassifierBackend, images, max_workers: int = DEFAULT_POOL) -> list[list[ClassScore]]:
    """Classify every image, at most ``max_workers`` at a time; results keep input order."""
    images = list(images)
    if max_workers <= 1 or len(images) <= 1:
        return [backend.classify(im) for im in images]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(backend.classify, images))


def filter_by_lambda(scored, lam: float = DEFAULT_LAMBDA) -> list[Detection]:
    """Turn (proposal, scores) pairs into detections, dropping top-1 probs below ``lam``.

    ``scored`` yields ``(proposal, scores)``; proposals need ``bbox`` and
    ``cluster_id``. A probability equal to ``lam`` is kept.
    """
    lam = check_interval(lam, "lambda", 0.0, 1.0)
    out = []
    for proposal, scores in scored:
        if not scores:
            continue
        top = max(scores, key=lambda s: s.prob)
        if top.prob >= lam:
            out.append(Detection(proposal.bbox, top.label, top.prob, proposal.cluster_id))
    return out


def parse_palette(text: str) -> dict[str, tuple[int, int, int]]:
    """Parse ``"red:220,40,40 green:40,190,60"`` (entries split on whitespace or ';')."""
    palette = {}
    for entry in text.replace(";", " ").split():
        label, sep, rgb = entry.partition(":")
        if not sep or not label:
            raise ConfigError(f"bad palette entry {entry!r} (want label:r,g,b)")
        try:
            palette[label] = check_rgb([int(v) for v in rgb.split(",")], label)
        except ValueError:
            raise ConfigError(f"bad palette color in {entry!r}") from None
    return dict(_check_palette(palette))


def format_palette(palette) -> str:
    return " ".join(f"{k}:{r},{g},{b}" for k, (r, g, b) in palette.items())
