"""Similarity (sRT) alignment of 2D landmark sets onto a frontal template."""

import json
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput, InvalidArgument
from .landmarks import N_LANDMARKS, fit_to_box

RESOLUTION = 128


@dataclass(frozen=True)
class SimilarityTransform:
    s: float
    R: np.ndarray  # (2, 2)
    t: np.ndarray  # (2,)

    @classmethod
    def identity(cls):
        return cls(1.0, np.eye(2), np.zeros(2))

    @classmethod
    def from_angle(cls, s, theta, t):
        c, si = np.cos(theta), np.sin(theta)
        return cls(float(s), np.array([[c, -si], [si, c]]), np.asarray(t, dtype=float))

    @property
    def angle(self):
        return float(np.arctan2(self.R[1, 0], self.R[0, 0]))

    def compose(self, other):
        """``self`` after ``other``: x -> self(other(x))."""
        return SimilarityTransform(self.s * other.s, self.R @ other.R, self.s * self.R @ other.t + self.t)

    def inverse(self):
        Rt = self.R.T
        return SimilarityTransform(1.0 / self.s, Rt, -(Rt @ self.t) / self.s)

    def matrix(self):
        M = np.eye(3)
        M[:2, :2] = self.s * self.R
        M[:2, 2] = self.t
        return M


@dataclass(frozen=True)
class AlignmentTemplate:
    points: np.ndarray  # (68, 2)
    resolution: int = RESOLUTION

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float)
        if p.shape != (N_LANDMARKS, 2):
            raise InvalidArgument("template must have 68 (x, y) points")
        if (p < 0).any() or (p > self.resolution).any():
            raise InvalidArgument(f"template points must lie inside [0, {self.resolution}]^2")
        centered = p - p.mean(axis=0)
        if np.linalg.matrix_rank(centered, tol=1e-9) < 2:
            raise InvalidArgument("template points are collinear")

    @classmethod
    def from_layout(cls, layout, margin=8.0):
        """Rescale a frontal landmark layout to fit ``[margin, 128 - margin]^2``."""
        return cls(fit_to_box(layout, margin, RESOLUTION - margin))

    def to_dict(self):
        return {"resolution": self.resolution, "points": np.asarray(self.points).tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["points"], dtype=float), int(d.get("resolution", RESOLUTION)))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def _as_points(lms, name="landmarks"):
    p = np.asarray(lms, dtype=float)
    if p.ndim != 2 or p.shape[1] != 2:
        raise InvalidArgument(f"{name} must be an (n, 2) array, got {p.shape}")
    if not np.isfinite(p).all():
        raise InvalidArgument(f"{name} contain non-finite coordinates")
    return p


def estimate_similarity(src, dst, subset=None):
    """Closed-form least-squares similarity mapping ``src`` onto ``dst`` (Umeyama 1991).

    Reflections are excluded. ``subset`` restricts the fit to those point indices.
    """
    src = _as_points(src, "src")
    dst = _as_points(dst, "dst")
    if src.shape != dst.shape:
        raise InvalidArgument(f"point sets differ in shape: {src.shape} vs {dst.shape}")
    if subset is not None:
        src, dst = src[subset], dst[subset]

    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    xs, xd = src - mu_s, dst - mu_d
    var_s = (xs ** 2).sum() / len(src)
    if var_s < 1e-12:
        raise DegenerateInput("source landmarks have zero spatial variance")

    cov = xd.T @ xs / len(src)
    U, d, Vt = np.linalg.svd(cov)
    S = np.ones(2)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[1] = -1.0
    R = U @ np.diag(S) @ Vt
    s = float((d * S).sum() / var_s)
    if s <= 0:
        raise DegenerateInput("fit collapsed to a non-positive scale")
    t = mu_d - s * R @ mu_s
    return SimilarityTransform(s, R, t)


def apply_similarity(T, lms):
    p = np.asarray(lms, dtype=float)
    return T.s * p @ T.R.T + T.t


def align_to_template(lms, tmpl, subset=None):
    T = estimate_similarity(lms, tmpl.points, subset=subset)
    return apply_similarity(T, lms), T
