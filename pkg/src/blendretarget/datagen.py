"""Constrained synthetic (landmarks, weights) corpus from a single rig, and a
procedural stand-in rig."""

import hashlib
import json
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .align import AlignmentTemplate, align_to_template
from .errors import GenerationFailure, InvalidArgument
from .groups import default_group_spec
from .landmarks import DEFAULT_REGIONS, MEAN_SHAPE_UNIT, N_LANDMARKS, fit_to_box
from .rig import (
    BlendshapeRig, DeltaTarget, HeadPose, ReasonableArray, apply_weights, is_reasonable,
    project_landmarks,
)

MAX_ACTIVE = 5
DEFAULT_COUNT = 30000


@dataclass(frozen=True)
class PoseDistribution:
    poses: tuple

    def __post_init__(self):
        if not self.poses:
            raise InvalidArgument("pose distribution is empty")

    def to_dict(self):
        return {"poses": [p.as_list() for p in self.poses]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(HeadPose(*map(float, p)) for p in d["poses"]))

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f)

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


def default_pose_distribution(seed=0, n=2000, sigma=(0.3, 0.2, 0.1)):
    """Zero-mean normals clipped at 3 sigma for (yaw, pitch, roll), in radians."""
    rng = np.random.default_rng(seed)
    sig = np.asarray(sigma)
    draws = np.clip(rng.normal(size=(n, 3)) * sig, -3 * sig, 3 * sig)
    return PoseDistribution(tuple(HeadPose(*map(float, row)) for row in draws))


@dataclass(frozen=True)
class GenConfig:
    count: int = DEFAULT_COUNT
    seed: int = 0
    max_active: int = MAX_ACTIVE
    neutral_fraction: float = 0.05

    def __post_init__(self):
        if self.count < 1:
            raise InvalidArgument("count must be >= 1")
        if self.max_active < 1:
            raise InvalidArgument("max_active must be >= 1")
        if not 0 <= self.neutral_fraction < 1:
            raise InvalidArgument("neutral_fraction must lie in [0, 1)")


@dataclass(frozen=True, eq=False)
class Sample:
    landmarks: np.ndarray  # (68, 2), aligned
    weights: np.ndarray  # (K,)
    pose: HeadPose

    def to_json(self):
        return json.dumps({"lm": self.landmarks.tolist(), "w": self.weights.tolist(), "pose": self.pose.as_list()})

    @classmethod
    def from_json(cls, line):
        d = json.loads(line)
        return cls(np.asarray(d["lm"], dtype=float), np.asarray(d["w"], dtype=float), HeadPose(*d["pose"]))


def sample_expression(rng, arr, K, max_active=MAX_ACTIVE):
    """Random weight vector with 1..max_active active targets, each in (0, 1],
    all pairwise allowed by ``arr``.

    The active count is drawn uniformly, then targets are accepted greedily from a
    shuffled order while they stay compatible with those already accepted.
    """
    if max_active < 1:
        raise InvalidArgument("max_active must be >= 1")
    if arr.size != K:
        raise InvalidArgument("reasonable array does not match K")
    n = int(rng.integers(1, max_active + 1))
    chosen = []
    for k in rng.permutation(K):
        if all(arr.allowed[k, c] for c in chosen):
            chosen.append(int(k))
            if len(chosen) == n:
                break
    if not chosen:
        raise GenerationFailure("no admissible active set")
    w = np.zeros(K)
    # 1 - U[0,1) lies in (0, 1]
    w[chosen] = 1.0 - rng.random(len(chosen))
    return w


def sample_pose(rng, dist):
    if not dist.poses:
        raise InvalidArgument("pose distribution is empty")
    return dist.poses[int(rng.integers(len(dist.poses)))]


def render_landmarks(rig, weights, pose, tmpl):
    raw = project_landmarks(rig, apply_weights(rig, weights), pose)
    aligned, _ = align_to_template(raw, tmpl)
    return aligned


def synth_sample(rig, tmpl, arr, dist, rng, max_active=MAX_ACTIVE, neutral_fraction=0.0, weights=None, pose=None):
    if weights is None:
        if neutral_fraction > 0 and rng.random() < neutral_fraction:
            weights = np.zeros(rig.K)
        else:
            weights = sample_expression(rng, arr, rig.K, max_active)
    if pose is None:
        pose = sample_pose(rng, dist)
    weights = np.asarray(weights, dtype=float)
    return Sample(render_landmarks(rig, weights, pose, tmpl), weights, pose)


def sample_rng(seed, index):
    """Independent generator for sample ``index``; no dependence on other samples."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))


def generate_dataset(rig, tmpl, arr, dist, cfg, start=0, stop=None):
    """Samples ``start..stop`` (default: all ``cfg.count``) of the corpus."""
    if cfg.count < 1:
        raise InvalidArgument("count must be >= 1")
    stop = cfg.count if stop is None else min(stop, cfg.count)
    out = []
    for i in range(start, stop):
        try:
            out.append(synth_sample(rig, tmpl, arr, dist, sample_rng(cfg.seed, i),
                                    cfg.max_active, cfg.neutral_fraction))
        except Exception as e:
            raise type(e)(f"sample {i}: {e}") from e
    return out


def audit_samples(samples, arr, max_active=MAX_ACTIVE):
    """Active-count histogram and constraint-violation count."""
    hist = Counter()
    violations = 0
    for s in samples:
        w = s.weights
        n = int((w > 0).sum())
        hist[n] += 1
        if n > max_active or (w < 0).any() or (w > 1).any() or not is_reasonable(arr, w):
            violations += 1
    return {"count": len(samples), "active_histogram": {str(k): hist[k] for k in sorted(hist)},
            "violations": violations}


def save_dataset(samples, path):
    with open(path, "w", encoding="utf-8") as f:
        for s in samples:
            f.write(s.to_json() + "\n")


def load_dataset(path):
    with open(path, encoding="utf-8") as f:
        return [Sample.from_json(line) for line in f if line.strip()]


def dataset_hash(samples):
    h = hashlib.sha256()
    for s in samples:
        h.update(s.to_json().encode())
        h.update(b"\n")
    return h.hexdigest()


def stack(samples):
    X = np.stack([s.landmarks for s in samples])
    Y = np.stack([s.weights for s in samples])
    return X, Y


# --- procedural rig -------------------------------------------------------

BROW_TARGETS = ["brow_down_l", "brow_down_r", "brow_inner_up_l", "brow_inner_up_r",
                "brow_outer_up_l", "brow_outer_up_r"]
EYE_TARGETS = ["eye_blink_l", "eye_blink_r", "eye_wide_l", "eye_wide_r", "eye_squint_l", "eye_squint_r",
               "eye_look_up", "eye_look_down", "eye_look_left", "eye_look_right",
               "eye_lid_raise_l", "eye_lid_raise_r", "eye_lid_tight_l", "eye_lid_tight_r"]
NOSE_TARGETS = ["nose_sneer_l", "nose_sneer_r", "nose_wrinkle", "nose_flare"]
MOUTH_TARGETS = ["mouth_jaw_open", "mouth_close", "mouth_funnel", "mouth_pucker", "mouth_left", "mouth_right",
                 "mouth_smile_l", "mouth_smile_r", "mouth_frown_l", "mouth_frown_r",
                 "mouth_dimple_l", "mouth_dimple_r", "mouth_stretch_l", "mouth_stretch_r",
                 "mouth_roll_lower", "mouth_roll_upper", "mouth_shrug_lower", "mouth_shrug_upper",
                 "mouth_press_l", "mouth_press_r", "mouth_lower_down_l", "mouth_lower_down_r",
                 "mouth_upper_up_l", "mouth_upper_up_r"]
VISEME_TARGETS = ["viseme_aa", "viseme_e", "viseme_ih", "viseme_oh", "viseme_ou", "viseme_pp", "viseme_ff",
                  "viseme_th", "viseme_dd", "viseme_kk", "viseme_ch", "viseme_ss", "viseme_nn", "viseme_rr"]
CATEGORIES = [BROW_TARGETS, EYE_TARGETS, NOSE_TARGETS, MOUTH_TARGETS, VISEME_TARGETS]

ANTAGONISTS = [
    ("brow_down_{s}", "brow_inner_up_{s}"), ("brow_down_{s}", "brow_outer_up_{s}"),
    ("eye_blink_{s}", "eye_wide_{s}"), ("eye_squint_{s}", "eye_wide_{s}"), ("eye_lid_raise_{s}", "eye_lid_tight_{s}"),
    ("mouth_smile_{s}", "mouth_frown_{s}"), ("mouth_stretch_{s}", "mouth_funnel"), ("mouth_smile_{s}", "mouth_pucker"),
    ("mouth_press_{s}", "mouth_jaw_open"),
]
FIXED_ANTAGONISTS = [
    ("eye_look_up", "eye_look_down"), ("eye_look_left", "eye_look_right"), ("mouth_left", "mouth_right"),
    ("mouth_roll_lower", "mouth_shrug_lower"), ("mouth_roll_upper", "mouth_shrug_upper"),
    ("mouth_funnel", "mouth_pucker"),
]

_SIDE_LM = {
    "brow": {"l": DEFAULT_REGIONS["eyebrow-left"], "r": DEFAULT_REGIONS["eyebrow-right"]},
    "eye": {"l": DEFAULT_REGIONS["eye-left"], "r": DEFAULT_REGIONS["eye-right"]},
    "nose": {"l": [33, 34, 35], "r": [31, 32, 33]},
    "mouth": {"l": [51, 52, 53, 54, 55, 56, 57, 62, 63, 64, 65, 66],
              "r": [48, 49, 50, 51, 57, 58, 59, 60, 61, 62, 66, 67]},
}
_ALL_LM = {
    "brow": list(range(17, 27)),
    "eye": list(range(36, 48)),
    "nose": list(range(27, 36)),
    "mouth": list(range(48, 68)),
    "viseme": list(range(48, 68)),
}

# Hand-shaped targets: (anchor landmarks, displacement in px, falloff sigma in px).
# Mirrored for the other side by negating x. Sides use the subject's left/right.
_SHAPED = {
    "eye_blink_l": ([43, 44], (0.0, 5.4, 0.0), 2.0),
    "eye_wide_l": ([43, 44], (0.0, -2.5, 0.0), 3.0),
    "eye_squint_l": ([46, 47], (0.0, -1.5, 0.0), 2.5),
    "brow_down_l": ([23, 24, 25], (0.0, 4.0, -0.5), 5.0),
    "brow_inner_up_l": ([22, 23], (0.0, -4.5, 0.0), 4.0),
    "brow_outer_up_l": ([25, 26], (0.0, -4.5, 0.0), 4.0),
    "mouth_smile_l": ([54], (3.5, -3.5, 0.0), 5.0),
    "mouth_frown_l": ([54], (0.5, 4.0, 0.0), 5.0),
    "mouth_jaw_open": ([57, 66, 8], (0.0, 12.0, -1.0), 14.0),
    "eye_look_up": ([37, 38, 43, 44], (0.0, -1.2, 0.0), 2.5),
    "eye_look_down": ([37, 38, 43, 44], (0.0, 1.5, 0.0), 2.5),
    "eye_look_left": ([42, 45, 36, 39], (0.8, 0.0, 0.0), 3.0),
    "eye_look_right": ([42, 45, 36, 39], (-0.8, 0.0, 0.0), 3.0),
}

_MIRROR = {i: j for i, j in [
    (17, 26), (18, 25), (19, 24), (20, 23), (21, 22), (36, 45), (37, 44), (38, 43), (39, 42), (40, 47), (41, 46),
    (31, 35), (32, 34), (48, 54), (49, 53), (50, 52), (55, 59), (56, 58), (60, 64), (61, 63), (65, 67),
] + [(k, 16 - k) for k in range(8)]}
_MIRROR.update({j: i for i, j in list(_MIRROR.items())})


def target_names_for(K):
    """Canonical 62 names for K=62; otherwise a category round-robin subset or extension."""
    full = [n for cat in CATEGORIES for n in cat]
    if K == len(full):
        return full
    picked, extra = [], 0
    cursors = [0] * len(CATEGORIES)
    while len(picked) < K:
        for c, cat in enumerate(CATEGORIES):
            if len(picked) == K:
                break
            if cursors[c] < len(cat):
                picked.append(cat[cursors[c]])
                cursors[c] += 1
            elif all(cursors[i] >= len(CATEGORIES[i]) for i in range(len(CATEGORIES))):
                picked.append(f"{cat[0].split('_')[0]}_extra_{extra:02d}")
                extra += 1
    order = {n: i for i, n in enumerate(full)}
    return sorted(picked, key=lambda n: (order.get(n, len(full)), n))


def _anchor_pool(name):
    prefix = name.split("_")[0]
    side = name[-1] if name[-2:] in ("_l", "_r") else None
    if side and prefix in _SIDE_LM:
        return _SIDE_LM[prefix][side]
    return _ALL_LM[prefix]


def _shape_for(name, rng):
    if name in _SHAPED:
        anchors, disp, sigma = _SHAPED[name]
        return [(list(anchors), np.asarray(disp, dtype=float), sigma)]
    if name.endswith("_r") and name[:-2] + "_l" in _SHAPED:
        anchors, disp, sigma = _SHAPED[name[:-2] + "_l"]
        d = np.asarray(disp, dtype=float) * np.array([-1.0, 1.0, 1.0])
        return [([_MIRROR[a] for a in anchors], d, sigma)]
    pool = _anchor_pool(name)
    bumps = []
    for _ in range(int(rng.integers(1, 3))):
        anchor = int(rng.choice(pool))
        ang = rng.uniform(0, 2 * np.pi)
        mag = rng.uniform(2.5, 5.0)
        disp = np.array([mag * np.cos(ang), mag * np.sin(ang), rng.uniform(-1.0, 1.0)])
        bumps.append(([anchor], disp, rng.uniform(3.0, 6.0)))
    return bumps


def _face_depth(xy):
    """Ellipsoidal face surface depth (toward the camera) for image-plane points."""
    dx = (xy[:, 0] - 64.0) / 70.0
    dy = (xy[:, 1] - 62.0) / 82.0
    z = 45.0 * np.sqrt(np.clip(1.0 - dx ** 2 - dy ** 2, 0.0, None))
    nose = 14.0 * np.exp(-((xy[:, 0] - 64.0) ** 2 / 60.0 + (xy[:, 1] - 62.0) ** 2 / 500.0))
    return z + nose


def _reasonable_for(names):
    index = {n: i for i, n in enumerate(names)}
    pairs = []
    for a, b in ANTAGONISTS:
        for s in ("l", "r"):
            na, nb = a.format(s=s), b.format(s=s)
            if na in index and nb in index:
                pairs.append((index[na], index[nb]))
    for a, b in FIXED_ANTAGONISTS:
        if a in index and b in index:
            pairs.append((index[a], index[b]))
    visemes = [index[n] for n in names if n.startswith("viseme_")]
    pairs += [(i, j) for a, i in enumerate(visemes) for j in visemes[a + 1:]]
    return ReasonableArray.from_disallowed(len(names), pairs)


def make_procedural_rig(seed=0, V=2000, K=62, name=None):
    """Face-like point cloud with 68 iBUG landmark vertices and K localized morph targets.

    Each target is a sum of Gaussian-falloff displacement bumps anchored on
    landmarks of its region, so at weight 1 it moves at least one landmark.
    """
    if V < 500:
        raise InvalidArgument("vertex count must be >= 500")
    if K < 8:
        raise InvalidArgument("target count must be >= 8")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5EED]))

    lm_xy = fit_to_box(MEAN_SHAPE_UNIT, 4.0, 124.0) + rng.normal(scale=0.8, size=(N_LANDMARKS, 2))
    lm_xyz = np.column_stack([lm_xy, _face_depth(lm_xy)])

    n_extra = V - N_LANDMARKS
    theta = rng.uniform(0, 2 * np.pi, n_extra)
    r = np.sqrt(rng.uniform(0, 1, n_extra))
    extra_xy = np.column_stack([64.0 + 66.0 * r * np.cos(theta), 62.0 + 78.0 * r * np.sin(theta)])
    extra_xyz = np.column_stack([extra_xy, _face_depth(extra_xy)])

    order = rng.permutation(V)
    neutral = np.empty((V, 3))
    landmark_indices = order[:N_LANDMARKS].astype(np.int64)
    neutral[landmark_indices] = lm_xyz
    neutral[order[N_LANDMARKS:]] = extra_xyz

    names = target_names_for(K)
    targets = []
    for tname in names:
        field_ = np.zeros((V, 3))
        for anchors, disp, sigma in _shape_for(tname, rng):
            for a in anchors:
                d2 = ((neutral - lm_xyz[a]) ** 2).sum(axis=1)
                field_ += np.exp(-d2 / (2 * sigma ** 2))[:, None] * disp
        mag = np.linalg.norm(field_, axis=1)
        idx = np.flatnonzero(mag > 1e-3 * mag.max())
        targets.append(DeltaTarget(tname, idx.astype(np.int64), field_[idx]))

    return BlendshapeRig(
        name=name or f"procedural-{seed}",
        neutral=neutral,
        targets=targets,
        landmark_indices=landmark_indices,
        reasonable=_reasonable_for(names),
        group_spec=default_group_spec(names),
    )


def default_template(rig):
    """Frontal neutral projection of ``rig``, rescaled to [8, 120]^2."""
    return AlignmentTemplate.from_layout(project_landmarks(rig, rig.neutral, HeadPose()))
