"""Landmark-similarity metric, round-trip evaluation, and the grouping ablation."""

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .align import align_to_template
from .datagen import stack
from .net import NetworkSpec, Variant, predict, split_indices, train
from .rig import apply_weights, project_landmarks

log = logging.getLogger(__name__)

METRIC_NAME = "landmark_mse_px2_per_point"


def landmark_similarity_mse(a, b, tmpl):
    """Mean squared point distance (px^2 in the 128 frame) after aligning each set to ``tmpl``."""
    a_al, _ = align_to_template(a, tmpl)
    b_al, _ = align_to_template(b, tmpl)
    return float(((a_al - b_al) ** 2).sum(axis=1).mean())


@dataclass
class EvalReport:
    per_frame: list
    config_hash: str = ""

    @property
    def frames(self):
        return len(self.per_frame)

    @property
    def mean(self):
        return math.fsum(self.per_frame) / len(self.per_frame)

    @property
    def median(self):
        return float(np.median(self.per_frame))

    @property
    def p95(self):
        return float(np.percentile(self.per_frame, 95))

    def to_dict(self):
        return {
            "metric": METRIC_NAME,
            "frames": self.frames,
            "mean": self.mean,
            "median": self.median,
            "p95": self.p95,
            "config_hash": self.config_hash,
            "per_frame": list(self.per_frame),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)


REPORT_SCHEMA = {
    "type": "object",
    "required": ["metric", "frames", "mean", "median", "p95", "per_frame"],
    "properties": {
        "metric": {"const": METRIC_NAME},
        "frames": {"type": "integer", "minimum": 1},
        "mean": {"type": "number", "minimum": 0},
        "median": {"type": "number", "minimum": 0},
        "p95": {"type": "number", "minimum": 0},
        "config_hash": {"type": "string"},
        "per_frame": {"type": "array", "items": {"type": "number", "minimum": 0}},
    },
}


def round_trip_eval(rig, tmpl, samples, predictor, config_hash=""):
    """Predict weights from each sample's landmarks, re-synthesize landmarks at the
    sample's pose, and score them against the sample with the similarity metric.

    ``predictor`` maps an aligned (68, 2) landmark set to a weight vector; use
    :func:`network_predictor` for a trained model or :func:`oracle_predictor`.
    """
    per_frame = []
    for i, s in enumerate(samples):
        try:
            w = np.clip(predictor(s), 0.0, 1.0)
            resynth = project_landmarks(rig, apply_weights(rig, w), s.pose)
            per_frame.append(landmark_similarity_mse(s.landmarks, resynth, tmpl))
        except Exception as e:
            raise type(e)(f"sample {i}: {e}") from e
    return EvalReport(per_frame, config_hash)


def network_predictor(params, spec):
    return lambda s: predict(params, spec, s.landmarks)


def oracle_predictor(s):
    return s.weights


def _batched_predictions(params, spec, samples):
    X, _ = stack(samples)
    return predict(params, spec, X)


def evaluate_network(rig, tmpl, params, spec, samples, config_hash=""):
    """``round_trip_eval`` with one batched forward pass."""
    W = _batched_predictions(params, spec, samples)
    lookup = {id(s): w for s, w in zip(samples, W)}
    return round_trip_eval(rig, tmpl, samples, lambda s: lookup[id(s)], config_hash)


@dataclass
class AblationReport:
    rows: list = field(default_factory=list)  # dicts: variant, seed, heldout_mse, error

    def medians(self):
        out = {}
        for v in dict.fromkeys(r["variant"] for r in self.rows):
            vals = [r["heldout_mse"] for r in self.rows if r["variant"] == v and r["error"] is None]
            out[v] = float(np.median(vals)) if vals else float("nan")
        return out

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["variant", "seed", "heldout_mse"])
            for r in self.rows:
                w.writerow([r["variant"], r["seed"], repr(r["heldout_mse"])])

    def to_dict(self):
        return {"metric": METRIC_NAME, "rows": self.rows, "medians": self.medians()}


def config_hash(obj):
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def ablation_run(rig, tmpl, samples, variants, seeds, cfg, progress=None):
    """Train every variant under every seed on one shared split; score each on the held-out part.

    A failing cell is recorded with its error and the run moves on.
    """
    if not variants or not seeds:
        raise ValueError("need at least one variant and one seed")
    X, Y = stack(samples)
    _, va = split_indices(len(samples), cfg)
    heldout = [samples[i] for i in va]
    report = AblationReport()
    for v in variants:
        spec = NetworkSpec.for_rig(rig, Variant(v))
        for seed in seeds:
            cell_cfg = replace(cfg, seed=int(seed))
            try:
                params, _ = train(X, Y, spec, cell_cfg)
                mse = evaluate_network(rig, tmpl, params, spec, heldout).mean
                row = {"variant": spec.variant.value, "seed": int(seed), "heldout_mse": mse, "error": None}
            except Exception as e:
                log.warning("ablation cell %s/%s failed: %s", v, seed, e)
                row = {"variant": spec.variant.value, "seed": int(seed), "heldout_mse": float("nan"),
                       "error": str(e)}
            report.rows.append(row)
            if progress:
                progress(row)
    return report
