"""Streaming post-processing: EMA smoothing, geometric gaze, blink-range
adaptation, and the per-frame retargeting pipeline."""

import json
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .align import align_to_template, apply_similarity
from .errors import DegenerateInput, InvalidArgument, NotWarmedUp, StageError
from .landmarks import EYE_LEFT, EYE_RIGHT, MEAN_SHAPE_UNIT, N_LANDMARKS
from .net import predict
from .rig import HeadPose, apply_weights, enforce_reasonable, project_landmarks

log = logging.getLogger(__name__)


# --- EMA ------------------------------------------------------------------

@dataclass(frozen=True)
class EmaState:
    alpha: float = 0.6
    prev: np.ndarray = None

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise InvalidArgument("EMA alpha must lie in (0, 1]")


def ema_update(state, w):
    w = np.asarray(w, dtype=float)
    if state.prev is None:
        out = w.copy()
    else:
        if state.prev.shape != w.shape:
            raise InvalidArgument(f"EMA dimension changed: {state.prev.shape} -> {w.shape}")
        # where the input repeats, keep it bit-exact (the blend can round by an ulp)
        out = np.where(w == state.prev, w, state.alpha * w + (1.0 - state.alpha) * state.prev)
    return out, replace(state, prev=out)


# --- eye geometry ---------------------------------------------------------

@dataclass(frozen=True)
class EyeObservation:
    inner: np.ndarray
    outer: np.ndarray
    upper: np.ndarray  # (n, 2) upper-lid points
    lower: np.ndarray  # (n, 2) lower-lid points, paired with ``upper``
    iris: np.ndarray = None

    @classmethod
    def from_landmarks(cls, lms, eye, iris=None, eyelids=None):
        lms = np.asarray(lms, dtype=float)
        upper, lower = lms[eye["upper"]], lms[eye["lower"]]
        if eyelids is not None:
            upper = np.asarray(eyelids["upper"], dtype=float)
            lower = np.asarray(eyelids["lower"], dtype=float)
        return cls(lms[eye["inner"]], lms[eye["outer"]], upper, lower,
                   None if iris is None else np.asarray(iris, dtype=float))

    def transformed(self, fn):
        return EyeObservation(fn(self.inner), fn(self.outer), fn(self.upper), fn(self.lower),
                              None if self.iris is None else fn(self.iris))


@dataclass(frozen=True)
class EyeLine:
    midpoint: np.ndarray
    direction: np.ndarray  # unit vector, inner -> outer
    length: float
    slope: float  # nan when vertical
    bias: float  # nan when vertical
    vertical: bool


def eye_line(obs):
    """Line through the eye corners: midpoint, direction, corner distance, and y = slope*x + bias."""
    d = np.asarray(obs.outer, dtype=float) - np.asarray(obs.inner, dtype=float)
    L = float(np.hypot(*d))
    if L < 1e-12:
        raise DegenerateInput("eye corners coincide")
    mid = 0.5 * (np.asarray(obs.inner, dtype=float) + obs.outer)
    vertical = abs(d[0]) < 1e-12 * L
    if vertical:
        slope = bias = float("nan")
    else:
        slope = float(d[1] / d[0])
        bias = float(obs.inner[1] - slope * obs.inner[0])
    return EyeLine(mid, d / L, L, slope, bias, vertical)


def iris_intersection(obs):
    """Foot of the perpendicular from the iris onto the eye line, and its
    normalized position along the line (0 at the inner corner, 1 at the outer)."""
    if obs.iris is None:
        raise DegenerateInput("no iris point")
    line = eye_line(obs)
    s = float(np.dot(obs.iris - obs.inner, line.direction))
    q = obs.inner + s * line.direction
    return q, s / line.length


@dataclass(frozen=True)
class GazeCalibration:
    h_max: float = 0.25
    v_max: float = 0.15
    deadzone: float = 0.05


@dataclass(frozen=True)
class GazeCoefficients:
    """Secondary gaze positions, each in [0, 1]; left/right are the subject's."""
    left: float = 0.0
    right: float = 0.0
    up: float = 0.0
    down: float = 0.0

    def as_dict(self):
        return {"left": self.left, "right": self.right, "up": self.up, "down": self.down}


def _eye_offsets(obs, side):
    """(horizontal, vertical) iris offset in eye widths.

    Horizontal is positive toward the subject's left; vertical is positive
    toward the top of the head. Both are measured in the eye's own frame, so
    they are unchanged by rotating, scaling or moving the whole face.
    """
    line = eye_line(obs)
    q, t = iris_intersection(obs)
    # inner->outer points to the subject's left for the left eye, right for the right eye
    sign = 1.0 if side == "left" else -1.0
    across = sign * line.direction
    up = np.array([across[1], -across[0]])  # image y points down
    return sign * (t - 0.5), float(np.dot(obs.iris - q, up)) / line.length


def _coefficients(h, v, cal):
    def clamp(x):
        return float(min(max(x, 0.0), 1.0))

    left = clamp(h / cal.h_max) if h > cal.deadzone else 0.0
    right = clamp(-h / cal.h_max) if h < -cal.deadzone else 0.0
    up = clamp(v / cal.v_max) if v > cal.deadzone else 0.0
    down = clamp(-v / cal.v_max) if v < -cal.deadzone else 0.0
    return GazeCoefficients(left, right, up, down)


def gaze_offsets(left, right):
    """Per-eye (h, v) offsets, skipping an eye that is degenerate or lacks an iris."""
    out = {}
    for side, obs in (("left", left), ("right", right)):
        try:
            out[side] = _eye_offsets(obs, side)
        except DegenerateInput as e:
            log.debug("gaze: %s eye unusable: %s", side, e)
    if not out:
        raise DegenerateInput("neither eye gives a usable gaze observation")
    return out


def gaze_detect(left, right, cal=GazeCalibration()):
    """Gaze coefficients from both eyes, averaged before thresholding."""
    offs = gaze_offsets(left, right)
    h = float(np.mean([o[0] for o in offs.values()]))
    v = float(np.mean([o[1] for o in offs.values()]))
    return _coefficients(h, v, cal)


def gaze_detect_per_eye(left, right, cal=GazeCalibration()):
    return {side: _coefficients(h, v, cal) for side, (h, v) in gaze_offsets(left, right).items()}


# --- blink ----------------------------------------------------------------

def eyelid_gap(obs):
    """Mean upper-to-lower lid distance over paired lid points, in eye widths."""
    upper, lower = np.atleast_2d(obs.upper), np.atleast_2d(obs.lower)
    if len(upper) == 0 or upper.shape != lower.shape:
        raise InvalidArgument("eyelid point lists must be non-empty and paired")
    L = eye_line(obs).length
    return float(np.linalg.norm(upper - lower, axis=1).mean() / L)


def _reference_gap(points):
    return float(np.mean([eyelid_gap(EyeObservation.from_landmarks(points, eye)) for eye in (EYE_LEFT, EYE_RIGHT)]))


MEAN_SHAPE_GAP = _reference_gap(MEAN_SHAPE_UNIT)


@dataclass(frozen=True)
class BlinkCalibration:
    a: float = 1.0
    b: float = 0.0
    t_max: float = 0.5
    d_ref: float = MEAN_SHAPE_GAP
    ear_open_ref: float = MEAN_SHAPE_GAP
    ear_closed_ref: float = 0.05
    n_min: int = 10
    eta: float = 0.05

    def __post_init__(self):
        if self.d_ref <= 0 or self.ear_open_ref <= self.ear_closed_ref:
            raise InvalidArgument("blink calibration needs d_ref > 0 and ear_open_ref > ear_closed_ref")
        if not 0 <= self.t_max < 1:
            raise InvalidArgument("t_max must lie in [0, 1)")

    @classmethod
    def from_template(cls, tmpl, **kw):
        """Use the template's open-eye gap as both the geometry and the open-EAR reference."""
        gap = _reference_gap(tmpl.points)
        return cls(d_ref=gap, ear_open_ref=gap, **kw)


@dataclass(frozen=True)
class BlinkAdaptState:
    c_open: float
    c_closed: float
    eta: float = 0.05
    count: int = 0

    @classmethod
    def initial(cls, cal):
        return cls(c_open=cal.d_ref, c_closed=0.5 * cal.d_ref, eta=cal.eta)


def blink_adapt_update(state, obs):
    """Online 2-means step on the normalized lid gap: move the nearer centroid toward it."""
    return blink_adapt_update_gap(state, eyelid_gap(obs))


def blink_adapt_update_gap(state, d):
    c_open, c_closed = state.c_open, state.c_closed
    if abs(d - c_open) <= abs(d - c_closed):
        c_open += state.eta * (d - c_open)
    else:
        c_closed += state.eta * (d - c_closed)
    if c_open < c_closed:
        c_open, c_closed = c_closed, c_open
    return replace(state, c_open=c_open, c_closed=c_closed, count=state.count + 1)


def blink_threshold(state, cal):
    """Low edge for blink predictions from the actor's open-eye centroid; eyes
    narrower than the reference raise it, wider ones leave it at 0."""
    if state.count < cal.n_min:
        raise NotWarmedUp(f"blink adaptation has {state.count} of {cal.n_min} observations")
    t = cal.a * (cal.d_ref - state.c_open) / cal.d_ref + cal.b
    return float(min(max(t, 0.0), cal.t_max))


def blink_remap(raw, t):
    if not 0 <= t < 1:
        raise InvalidArgument("threshold must lie in [0, 1)")
    return float(min(max((raw - t) / (1.0 - t), 0.0), 1.0))


def blink_raw(obs, cal):
    """Geometric blink amount: 0 at the open reference gap, 1 at the closed one."""
    ear = eyelid_gap(obs)
    return float(min(max((cal.ear_open_ref - ear) / (cal.ear_open_ref - cal.ear_closed_ref), 0.0), 1.0))


# --- pipeline -------------------------------------------------------------

DEFAULT_BLINK_TARGETS = {"left": ("eye_blink_l",), "right": ("eye_blink_r",)}
DEFAULT_GAZE_TARGETS = {"left": ("eye_look_left",), "right": ("eye_look_right",),
                        "up": ("eye_look_up",), "down": ("eye_look_down",)}


@dataclass(frozen=True)
class RuntimeConfig:
    ema_alpha: float = 0.6
    gaze: GazeCalibration = field(default_factory=GazeCalibration)
    blink: BlinkCalibration = field(default_factory=BlinkCalibration)
    blink_targets: dict = field(default_factory=lambda: dict(DEFAULT_BLINK_TARGETS))
    gaze_targets: dict = field(default_factory=lambda: dict(DEFAULT_GAZE_TARGETS))
    use_blink: bool = True
    use_gaze: bool = True


@dataclass(frozen=True)
class StreamState:
    ema: EmaState
    blink: dict  # side -> BlinkAdaptState
    frame: int = 0
    gaze_missing: int = 0

    @classmethod
    def fresh(cls, cfg):
        init = BlinkAdaptState.initial(cfg.blink)
        return cls(EmaState(cfg.ema_alpha), {"left": init, "right": init})


@dataclass(frozen=True)
class Frame:
    lm: np.ndarray
    iris_left: np.ndarray = None
    iris_right: np.ndarray = None
    eyelids_left: dict = None
    eyelids_right: dict = None

    def __post_init__(self):
        lm = np.asarray(self.lm, dtype=float)
        if lm.shape != (N_LANDMARKS, 2) or not np.isfinite(lm).all():
            raise InvalidArgument(f"frame landmarks must be 68 finite (x, y) pairs, got shape {lm.shape}")

    def eyes(self):
        return (EyeObservation.from_landmarks(self.lm, EYE_LEFT, self.iris_left, self.eyelids_left),
                EyeObservation.from_landmarks(self.lm, EYE_RIGHT, self.iris_right, self.eyelids_right))

    def to_json(self):
        def pt(p):
            return None if p is None else [float(v) for v in p]

        def lids(d):
            return None if d is None else {k: np.asarray(v, dtype=float).tolist() for k, v in d.items()}

        return json.dumps({"lm": np.asarray(self.lm).tolist(), "iris_left": pt(self.iris_left),
                           "iris_right": pt(self.iris_right), "eyelids_left": lids(self.eyelids_left),
                           "eyelids_right": lids(self.eyelids_right)})

    @classmethod
    def from_json(cls, line):
        d = json.loads(line)

        def pt(p):
            return None if p is None else np.asarray(p, dtype=float)

        return cls(np.asarray(d["lm"], dtype=float), pt(d.get("iris_left")), pt(d.get("iris_right")),
                   d.get("eyelids_left"), d.get("eyelids_right"))


def load_frames(path):
    """Frames from a JSON-lines file; errors name the offending line."""
    frames = []
    with open(path, encoding="utf-8") as f:
        for n, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                frames.append(Frame.from_json(line))
            except (ValueError, KeyError, TypeError) as e:
                raise InvalidArgument(f"{path}:{n}: malformed frame: {e}") from e
    return frames


def save_frames(frames, path):
    with open(path, "w", encoding="utf-8") as f:
        for fr in frames:
            f.write(fr.to_json() + "\n")


def _overwrite(w, names, index, value):
    for n in names:
        if n in index:
            w[index[n]] = value


def retarget_frame(frame, params, spec, rig, tmpl, state, cfg=RuntimeConfig()):
    """align -> predict -> blink/gaze overwrite -> reasonable-combination -> EMA (re-checked)."""
    index = {n: i for i, n in enumerate(rig.target_names)}
    try:
        aligned, _ = align_to_template(frame.lm, tmpl)
    except Exception as e:
        raise StageError("align", e) from e
    try:
        w = np.array(predict(params, spec, aligned), dtype=float)
    except Exception as e:
        raise StageError("predict", e) from e

    left, right = frame.eyes()
    blink_states = dict(state.blink)
    if cfg.use_blink:
        try:
            for side, obs in (("left", left), ("right", right)):
                st = blink_adapt_update(blink_states[side], obs)
                blink_states[side] = st
                t = blink_threshold(st, cfg.blink) if st.count >= cfg.blink.n_min else 0.0
                _overwrite(w, cfg.blink_targets.get(side, ()), index, blink_remap(blink_raw(obs, cfg.blink), t))
        except Exception as e:
            raise StageError("blink", e) from e

    gaze_missing = state.gaze_missing
    if cfg.use_gaze:
        if left.iris is None and right.iris is None:
            coeffs = GazeCoefficients()
            gaze_missing += 1
        else:
            try:
                coeffs = gaze_detect(left, right, cfg.gaze)
            except Exception as e:
                raise StageError("gaze", e) from e
        for key, value in coeffs.as_dict().items():
            _overwrite(w, cfg.gaze_targets.get(key, ()), index, value)

    w = enforce_reasonable(rig.reasonable, w)
    out, ema = ema_update(state.ema, w)
    # blending two reasonable frames can reactivate a disallowed pair; the
    # re-enforced vector is both the output and the smoothing memory
    out = enforce_reasonable(rig.reasonable, out)
    return out, StreamState(replace(ema, prev=out), blink_states, state.frame + 1, gaze_missing)


def retarget_sequence(frames, params, spec, rig, tmpl, cfg=RuntimeConfig(), errors=None):
    """Fold ``retarget_frame`` over a sequence with one stream state.

    A failing frame repeats the previous smoothed output (zeros before the
    first success); ``(frame index, message)`` is appended to ``errors``.
    """
    if not frames:
        raise InvalidArgument("need at least one frame")
    state = StreamState.fresh(cfg)
    out = []
    for i, fr in enumerate(frames):
        try:
            w, state = retarget_frame(fr, params, spec, rig, tmpl, state, cfg)
        except Exception as e:
            log.warning("frame %d dropped: %s", i, e)
            if errors is not None:
                errors.append((i, str(e)))
            w = state.ema.prev.copy() if state.ema.prev is not None else np.zeros(rig.K)
            state = replace(state, frame=state.frame + 1)
        out.append(w)
    return out


def write_weights_csv(weights, names, path):
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write("frame," + ",".join(names) + "\n")
        for i, w in enumerate(weights):
            f.write(f"{i}," + ",".join(f"{v:.6f}" for v in w) + "\n")


def place_iris(obs, side, h, v):
    """Iris point for offsets (h, v) in eye widths; the inverse of the gaze measurement."""
    line = eye_line(obs)
    sign = 1.0 if side == "left" else -1.0
    across = sign * line.direction
    up = np.array([across[1], -across[0]])
    return line.midpoint + line.length * (h * across + v * up)


def synth_frame(rig, weights, pose=HeadPose(), camera=None, gaze=(0.0, 0.0)):
    """Camera-space frame of ``rig`` posed and expressed, with irises placed at
    gaze offsets ``(h, v)``. ``camera`` is a SimilarityTransform to image pixels."""
    lm = project_landmarks(rig, apply_weights(rig, weights), pose)
    if camera is not None:
        lm = apply_similarity(camera, lm)
    h, v = gaze
    irises = {}
    for side, eye in (("left", EYE_LEFT), ("right", EYE_RIGHT)):
        irises[side] = place_iris(EyeObservation.from_landmarks(lm, eye), side, h, v)
    return Frame(lm, irises["left"], irises["right"])
