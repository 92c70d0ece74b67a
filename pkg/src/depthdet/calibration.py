"""Camera projection matrix estimation (DLT) and point projection.

The 3x4 matrix maps homogeneous sensor-frame points to pixels. It is solved
from >= 6 world/pixel correspondences as the right singular vector of the
DLT design matrix with the smallest singular value, on Hartley-normalized
coordinates. The stored representative has unit Frobenius norm and the sign
that gives points in front of the camera positive homogeneous depth.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_pixels, check_points
from .exceptions import (
    ArityError,
    BehindCameraError,
    CalibrationError,
    DegenerateConfigurationError,
    ParseError,
)

__all__ = [
    "ProjectionMatrix",
    "Correspondence",
    "solve_projection_dlt",
    "project_point",
    "project_points",
    "reprojection_rms",
    "load_correspondences",
    "dump_correspondences",
    "DLTCalibrator",
]

MIN_CORRESPONDENCES = 6
EPSILON_W = 1e-9
DEGENERACY_RATIO = 0.1
# second-smallest singular value below this (relative to the largest) means a
# null space of dimension >= 2 even when the smallest/second ratio is noisy
_RANK_TOL = 1e-10
# entries this small after normalization count as zero for sign canonicalization
_SIGN_TOL = 1e-12


@dataclass(frozen=True)
class Correspondence:
    world: tuple[float, float, float]
    pixel: tuple[float, float]

    def __post_init__(self):
        w = tuple(float(v) for v in self.world)
        p = tuple(float(v) for v in self.pixel)
        if len(w) != 3 or len(p) != 2:
            raise ValueError("world must have 3 coordinates and pixel 2")
        if not all(np.isfinite(w + p)):
            raise ValueError("correspondence coordinates must be finite")
        object.__setattr__(self, "world", w)
        object.__setattr__(self, "pixel", p)


class ProjectionMatrix:
    """Canonical 3x4 homogeneous camera matrix.

    Any non-zero scalar multiple of ``m`` describes the same camera; the stored
    representative has Frobenius norm 1 and ``det(m[:, :3]) > 0``, which makes
    the homogeneous depth of points in front of the camera positive. When the
    left block is singular the sign falls back to ``m[2, 3] >= 0``, then to the
    first non-zero entry of the third row.
    """

    __slots__ = ("m",)

    def __init__(self, m):
        m = np.array(m, dtype=np.float64)
        if m.shape != (3, 4):
            raise ValueError(f"projection matrix must be 3x4, got {m.shape}")
        if not np.isfinite(m).all():
            raise ValueError("projection matrix must be finite")
        norm = np.linalg.norm(m)
        if norm == 0:
            raise ValueError("projection matrix is zero")
        m = m / norm
        if np.linalg.matrix_rank(m) < 3:
            raise ValueError("projection matrix must have rank 3")
        pivot = np.linalg.det(m[:, :3])
        if abs(pivot) <= _SIGN_TOL:
            pivot = m[2, 3]
        if abs(pivot) <= _SIGN_TOL:
            nz = np.flatnonzero(np.abs(m[2]) > _SIGN_TOL)
            pivot = m[2, nz[0]] if nz.size else 0.0
        if pivot < 0:
            m = -m
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    def __setattr__(self, name, value):
        raise AttributeError("ProjectionMatrix is immutable")

    @classmethod
    def from_intrinsics(cls, fx, fy, cx, cy, rotation=None, translation=(0.0, 0.0, 0.0)):
        """Build ``K [R | t]`` for a pinhole camera."""
        K = np.array([[fx, 0.0, cx], [0.0, fy, cy], [0.0, 0.0, 1.0]])
        R = np.eye(3) if rotation is None else np.asarray(rotation, dtype=np.float64)
        Rt = np.hstack([R, np.asarray(translation, dtype=np.float64).reshape(3, 1)])
        return cls(K @ Rt)

    def project(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized projection: returns ``(uv, w)`` with uv of shape (n, 2).

        ``uv`` rows are NaN where ``w <= EPSILON_W``.
        """
        X = check_points(points)
        h = X @ self.m[:, :3].T + self.m[:, 3]
        w = h[:, 2]
        front = w > EPSILON_W
        uv = np.full((len(X), 2), np.nan)
        uv[front] = h[front, :2] / w[front, None]
        return uv, w

    def allclose(self, other, atol=1e-9) -> bool:
        return np.allclose(self.m, other.m, rtol=0.0, atol=atol)

    def __eq__(self, other):
        if not isinstance(other, ProjectionMatrix):
            return NotImplemented
        return np.array_equal(self.m, other.m)

    __hash__ = None

    def tolist(self):
        return self.m.tolist()

    def __repr__(self):
        return f"ProjectionMatrix({np.array2string(self.m, precision=6)})"


def _as_arrays(corr):
    if isinstance(corr, tuple) and len(corr) == 2 and not isinstance(corr[0], Correspondence):
        world, pixel = corr
    else:
        corr = list(corr)
        world = [c.world for c in corr]
        pixel = [c.pixel for c in corr]
    X = check_points(np.asarray(world, dtype=np.float64).reshape(-1, 3), name="world")
    x = check_pixels(np.asarray(pixel, dtype=np.float64).reshape(-1, 2), len(X))
    return X, x


def _similarity(points, target_rms):
    """Matrix translating ``points`` to zero mean and scaling to RMS ``target_rms``."""
    dim = points.shape[1]
    mean = points.mean(axis=0)
    rms = np.sqrt(((points - mean) ** 2).sum(axis=1).mean())
    if rms == 0:
        raise DegenerateConfigurationError("all correspondence points coincide")
    s = target_rms / rms
    T = np.eye(dim + 1)
    T[:dim, :dim] *= s
    T[:dim, dim] = -s * mean
    return T


def _design_matrix(X, x):
    n = len(X)
    Xh = np.hstack([X, np.ones((n, 1))])
    A = np.zeros((2 * n, 12))
    # u * (p3 . X) - p1 . X = 0 ;  v * (p3 . X) - p2 . X = 0
    A[0::2, 0:4] = -Xh
    A[0::2, 8:12] = x[:, [0]] * Xh
    A[1::2, 4:8] = -Xh
    A[1::2, 8:12] = x[:, [1]] * Xh
    return A


def solve_projection_dlt(corr, *, normalize=True, degeneracy_ratio=DEGENERACY_RATIO) -> ProjectionMatrix:
    """Estimate the projection matrix from world/pixel correspondences.

    Parameters
    ----------
    corr : sequence of Correspondence, or ``(world, pixel)`` arrays
    normalize : bool, default=True
        Apply Hartley normalization (pixels to RMS sqrt(2), world points to
        RMS sqrt(3), both zero-mean) before the SVD.
    degeneracy_ratio : float, default=0.1
        Reject when smallest / second-smallest singular value exceeds this.

    Raises
    ------
    ArityError
        Fewer than 6 correspondences.
    DegenerateConfigurationError
        The null space is not one-dimensional (e.g. coplanar world points).
    """
    X, x = _as_arrays(corr)
    if len(X) < MIN_CORRESPONDENCES:
        raise ArityError(f"need at least {MIN_CORRESPONDENCES} correspondences, got {len(X)}")
    if normalize:
        T3 = _similarity(X, np.sqrt(3.0))
        T2 = _similarity(x, np.sqrt(2.0))
        Xn = X @ T3[:3, :3].T + T3[:3, 3]
        xn = x @ T2[:2, :2].T + T2[:2, 2]
    else:
        Xn, xn = X, x
    A = _design_matrix(Xn, xn)
    _, s, Vt = np.linalg.svd(A, full_matrices=True)
    if len(s) < 12:
        s = np.concatenate([s, np.zeros(12 - len(s))])
    if s[10] <= _RANK_TOL * s[0] or s[11] / s[10] > degeneracy_ratio:
        raise DegenerateConfigurationError(
            f"ambiguous null space (singular values {s[10]:.3g}, {s[11]:.3g}); "
            "are the world points coplanar?"
        )
    P = Vt[-1].reshape(3, 4)
    if normalize:
        P = np.linalg.inv(T2) @ P @ T3
    try:
        return ProjectionMatrix(P)
    except ValueError as exc:
        raise CalibrationError(str(exc)) from None


def project_point(P: ProjectionMatrix, p) -> tuple[float, float]:
    """Project one point; raises :class:`BehindCameraError` if its depth is <= 1e-9."""
    h = P.m @ np.append(np.asarray(p, dtype=np.float64), 1.0)
    if not h[2] > EPSILON_W:
        raise BehindCameraError(f"point {tuple(p)} is behind the camera (w={h[2]:.3g})")
    return float(h[0] / h[2]), float(h[1] / h[2])


def project_points(P: ProjectionMatrix, points) -> np.ndarray:
    """Project many points; raises if any lies behind the camera."""
    uv, w = P.project(points)
    if not (w > EPSILON_W).all():
        k = int(np.flatnonzero(~(w > EPSILON_W))[0])
        raise BehindCameraError(f"point index {k} is behind the camera (w={w[k]:.3g})")
    return uv


def reprojection_rms(P: ProjectionMatrix, corr) -> float:
    """Root-mean-square pixel distance between projected world points and measurements."""
    X, x = _as_arrays(corr)
    if len(X) == 0:
        raise ArityError("reprojection error needs at least one correspondence")
    uv = project_points(P, X)
    return float(np.sqrt(((uv - x) ** 2).sum(axis=1).mean()))


# -- JSON ----------------------------------------------------------------------


def load_correspondences(source) -> list[Correspondence]:
    """Read ``{"correspondences": [{"world": [x,y,z], "pixel": [u,v]}, ...]}``."""
    if isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
        text = Path(source).read_text()
    elif isinstance(source, (bytes, str)):
        text = source
    else:
        text = source.read()
    try:
        doc = json.loads(text)
        return [Correspondence(c["world"], c["pixel"]) for c in doc["correspondences"]]
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"invalid calibration file: {exc}") from None


def dump_correspondences(corr) -> str:
    doc = {"correspondences": [{"world": list(c.world), "pixel": list(c.pixel)} for c in corr]}
    return json.dumps(doc, indent=2) + "\n"


def projection_report(P: ProjectionMatrix, rms: float) -> str:
    return json.dumps({"projection": P.tolist(), "rms_px": rms}, indent=2) + "\n"


class DLTCalibrator(BaseEstimator):
    """Estimator front end: ``fit(world, pixels)`` solves the projection matrix.

    Parameters
    ----------
    normalize : bool, default=True
    degeneracy_ratio : float, default=0.1

    Attributes
    ----------
    projection_ : ProjectionMatrix
    rms_ : float
        Reprojection RMS on the training correspondences, in pixels.
    """

    def __init__(self, normalize=True, degeneracy_ratio=DEGENERACY_RATIO):
        self.normalize = normalize
        self.degeneracy_ratio = degeneracy_ratio

    def fit(self, X, y):
        X = check_points(X, name="X", allow_empty=False)
        y = check_pixels(y, len(X), name="y")
        self.projection_ = solve_projection_dlt(
            (X, y), normalize=self.normalize, degeneracy_ratio=self.degeneracy_ratio
        )
        self.rms_ = reprojection_rms(self.projection_, (X, y))
        self.n_features_in_ = 3
        return self

    def predict(self, X):
        """Pixel coordinates of ``X``; NaN rows for points behind the camera."""
        check_is_fitted(self, "projection_")
        return self.projection_.project(X)[0]

    def score(self, X, y):
        """Negative reprojection RMS (higher is better)."""
        check_is_fitted(self, "projection_")
        return -reprojection_rms(self.projection_, (X, y))
