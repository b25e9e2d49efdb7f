"""Retarget 68-point facial landmarks to blendshape weights with a network
trained on synthetic data from a single rig."""

from .align import AlignmentTemplate, SimilarityTransform, align_to_template, apply_similarity, estimate_similarity
from .datagen import (
    GenConfig, PoseDistribution, Sample, default_pose_distribution, default_template, generate_dataset,
    make_procedural_rig,
)
from .errors import (
    DegenerateInput, GenerationFailure, InputNotAligned, InvalidArgument, NotWarmedUp, NumericFailure,
    RetargetError, StageError,
)
from .evaluation import AblationReport, EvalReport, ablation_run, landmark_similarity_mse, round_trip_eval
from .groups import GroupSpec, RegionPartition
from .net import NetworkSpec, TrainConfig, Variant, init_params, predict, train
from .rig import (
    BlendshapeRig, DeltaTarget, HeadPose, ReasonableArray, apply_weights, enforce_reasonable, is_reasonable,
    project_landmarks,
)
from .runtime import Frame, RuntimeConfig, StreamState, retarget_frame, retarget_sequence

__version__ = "0.1.0"
