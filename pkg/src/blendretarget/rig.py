"""Blendshape rig: linear morph-target evaluation, landmark projection, and
reasonable-combination rules."""

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import InvalidArgument
from .groups import GroupSpec, RegionPartition
from .landmarks import N_LANDMARKS

# Pose rotations pivot here; the neutral frontal face spans roughly [0,128]^2 around it.
PROJECTION_CENTER = np.array([64.0, 64.0, 0.0])


@dataclass(frozen=True)
class HeadPose:
    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0

    def __post_init__(self):
        for v in (self.yaw, self.pitch, self.roll):
            if not -np.pi <= v <= np.pi:
                raise InvalidArgument(f"pose angle {v} outside [-pi, pi]")

    def as_list(self):
        return [self.yaw, self.pitch, self.roll]


@dataclass(frozen=True)
class DeltaTarget:
    name: str
    indices: np.ndarray  # (n,) vertex indices
    deltas: np.ndarray  # (n, 3) displacements

    def __post_init__(self):
        if len(np.unique(self.indices)) != len(self.indices):
            raise InvalidArgument(f"target {self.name!r} has duplicate vertex indices")
        if self.deltas.shape != (len(self.indices), 3):
            raise InvalidArgument(f"target {self.name!r}: deltas must be (n, 3)")


class ReasonableArray:
    """Symmetric K x K matrix of pairs allowed to be active together."""

    def __init__(self, allowed):
        allowed = np.array(allowed, dtype=bool)
        if allowed.ndim != 2 or allowed.shape[0] != allowed.shape[1]:
            raise InvalidArgument("reasonable array must be square")
        if not (allowed == allowed.T).all():
            raise InvalidArgument("reasonable array must be symmetric")
        if not allowed.diagonal().all():
            raise InvalidArgument("reasonable array diagonal must be all true")
        self.allowed = allowed
        self.allowed.setflags(write=False)

    @property
    def size(self):
        return self.allowed.shape[0]

    @classmethod
    def all_allowed(cls, k):
        return cls(np.ones((k, k), dtype=bool))

    @classmethod
    def from_disallowed(cls, k, pairs):
        allowed = np.ones((k, k), dtype=bool)
        for i, j in pairs:
            if i == j:
                raise InvalidArgument(f"cannot disallow a target with itself ({i})")
            allowed[i, j] = allowed[j, i] = False
        return cls(allowed)

    def disallowed_pairs(self):
        i, j = np.nonzero(np.triu(~self.allowed, 1))
        return [[int(a), int(b)] for a, b in zip(i, j)]

    def __eq__(self, other):
        return isinstance(other, ReasonableArray) and np.array_equal(self.allowed, other.allowed)


@dataclass(frozen=True, eq=False)
class BlendshapeRig:
    name: str
    neutral: np.ndarray  # (V, 3)
    targets: list
    landmark_indices: np.ndarray  # (68,)
    reasonable: ReasonableArray
    group_spec: GroupSpec
    partition: RegionPartition = field(default_factory=RegionPartition)

    def __post_init__(self):
        V = self.vertex_count
        if self.neutral.ndim != 2 or self.neutral.shape[1] != 3:
            raise InvalidArgument("neutral must be (V, 3)")
        for t in self.targets:
            if len(t.indices) and (t.indices.min() < 0 or t.indices.max() >= V):
                raise InvalidArgument(f"target {t.name!r} references vertices outside [0, {V})")
        lm = self.landmark_indices
        if lm.shape != (N_LANDMARKS,) or len(np.unique(lm)) != N_LANDMARKS:
            raise InvalidArgument("landmark_indices must be 68 distinct vertex indices")
        if lm.min() < 0 or lm.max() >= V:
            raise InvalidArgument("landmark index out of range")
        if len(set(self.target_names)) != len(self.targets):
            raise InvalidArgument("target names must be distinct")
        if self.reasonable.size != self.K:
            raise InvalidArgument("reasonable array size does not match target count")
        self.group_spec.validate(self.partition, self.target_names)

    @property
    def vertex_count(self):
        return self.neutral.shape[0]

    @property
    def K(self):
        return len(self.targets)

    @property
    def target_names(self):
        return [t.name for t in self.targets]

    @cached_property
    def dense_deltas(self):
        """(K, V, 3) dense displacement tensor."""
        D = np.zeros((self.K, self.vertex_count, 3))
        for k, t in enumerate(self.targets):
            D[k, t.indices] = t.deltas
        D.setflags(write=False)
        return D

    def to_dict(self):
        return {
            "name": self.name,
            "vertex_count": int(self.vertex_count),
            "neutral": self.neutral.tolist(),
            "targets": [
                {
                    "name": t.name,
                    "deltas": [[int(i), *map(float, d)] for i, d in zip(t.indices, t.deltas)],
                }
                for t in self.targets
            ],
            "landmark_indices": [int(i) for i in self.landmark_indices],
            "disallowed_pairs": self.reasonable.disallowed_pairs(),
            "groups": {"regions": self.partition.to_dict(), **self.group_spec.to_dict()},
        }

    @classmethod
    def from_dict(cls, d):
        targets = []
        for t in d["targets"]:
            rows = np.asarray(t["deltas"], dtype=float).reshape(-1, 4)
            targets.append(DeltaTarget(t["name"], rows[:, 0].astype(np.int64), rows[:, 1:].copy()))
        neutral = np.asarray(d["neutral"], dtype=float)
        if neutral.shape[0] != d["vertex_count"]:
            raise InvalidArgument("vertex_count does not match neutral")
        groups = d["groups"]
        partition = RegionPartition(groups["regions"]) if "regions" in groups else RegionPartition()
        return cls(
            name=d["name"],
            neutral=neutral,
            targets=targets,
            landmark_indices=np.asarray(d["landmark_indices"], dtype=np.int64),
            reasonable=ReasonableArray.from_disallowed(len(targets), d["disallowed_pairs"]),
            group_spec=GroupSpec.from_dict(groups),
            partition=partition,
        )

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def check_weights(w, K):
    w = np.asarray(w, dtype=float)
    if w.shape != (K,):
        raise InvalidArgument(f"weight vector has shape {w.shape}, expected ({K},)")
    return w


def apply_weights(rig, w):
    """Neutral mesh plus the weighted sum of target deltas."""
    w = check_weights(w, rig.K)
    if (w < 0).any() or (w > 1).any():
        raise InvalidArgument("weights must lie in [0, 1]")
    return rig.neutral + np.tensordot(w, rig.dense_deltas, axes=1)


def rotation_matrix(pose):
    """R = Rz(roll) @ Rx(pitch) @ Ry(yaw): yaw is applied first, roll last.

    Axes are x right, y down (image convention), z toward the camera.
    """
    cy, sy = np.cos(pose.yaw), np.sin(pose.yaw)
    cp, sp = np.cos(pose.pitch), np.sin(pose.pitch)
    cr, sr = np.cos(pose.roll), np.sin(pose.roll)
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    Rx = np.array([[1, 0, 0], [0, cp, -sp], [0, sp, cp]])
    Rz = np.array([[cr, -sr, 0], [sr, cr, 0], [0, 0, 1]])
    return Rz @ Rx @ Ry


def project_landmarks(rig, mesh, pose):
    """Rotate the landmark vertices about the projection center and drop depth."""
    mesh = np.asarray(mesh, dtype=float)
    if mesh.shape != (rig.vertex_count, 3):
        raise InvalidArgument(f"mesh has shape {mesh.shape}, expected ({rig.vertex_count}, 3)")
    pts = mesh[rig.landmark_indices] - PROJECTION_CENTER
    rotated = pts @ rotation_matrix(pose).T + PROJECTION_CENTER
    return rotated[:, :2]


def is_reasonable(arr, w):
    active = np.flatnonzero(np.asarray(w) > 0)
    sub = arr.allowed[np.ix_(active, active)]
    return bool(sub.all())


def enforce_reasonable(arr, w):
    """Zero the smaller weight of every disallowed active pair.

    Pairs are visited once in ascending (i, j) order; on a tie the higher index
    is zeroed. A single pass suffices because zeroing never activates a pair.
    """
    w = check_weights(w, arr.size).copy()
    active = np.flatnonzero(w > 0)
    for a, i in enumerate(active):
        for j in active[a + 1:]:
            if w[i] > 0 and w[j] > 0 and not arr.allowed[i, j]:
                if w[j] <= w[i]:
                    w[j] = 0.0
                else:
                    w[i] = 0.0
    return w
