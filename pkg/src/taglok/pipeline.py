"""Visual-odometry estimator over tag detections.

Stages, in order: hierarchical tag selection (THS), per-tag body-pose
recovery through the known frame chain, IQR-based outlier removal (OR),
weighted multi-estimate fusion (MEF: Euclidean mean for position, quaternion
averaging for orientation), and a FIR moving average over the last few
estimates. Every stage is configurable through PipelineConfig; `step` wires
them together for one frame and never raises on degenerate inputs - frames
that cannot produce an estimate yield pose = None with a reason in the
stage trace.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np

from .camsim import Detection
from .geometry import (
    Pose,
    UnitQuaternion,
    compose,
    inverse,
    quat_rotation_angle,
)
from .tagmap import SizeClass, TagMap

# Treat a coordinate axis whose sample spread is below this as "all equal":
# the strict IQR fences would otherwise reject every sample over floating-
# point jitter. Zero spread means no outliers.
EQUAL_SPREAD_TOL = 1e-9

_DEGENERATE_NORM = 1e-12
_EIGENVALUE_GAP_TOL = 1e-9


class ThsMode(Enum):
    """Tag selection strategy: single biggest tag, everything, or the two
    biggest size classes present in the scene."""

    JBT = "jbt"
    ALL = "all"
    TBS = "tbs"


class WeightScheme(Enum):
    """Per-tag fusion weights by size-class index h: 4**h, 2**h, or flat."""

    W1 = "w1"
    W2 = "w2"
    UNIFORM = "uniform"

    def weight_for(self, size_class: SizeClass) -> float:
        h = size_class.class_index
        if self is WeightScheme.W1:
            return float(4**h)
        if self is WeightScheme.W2:
            return float(2**h)
        return 1.0


class RotMeanMethod(Enum):
    QL2 = "ql2"
    CL2 = "cl2"


@dataclass(frozen=True)
class PipelineConfig:
    """Method switches; the defaults are the proposed full configuration
    (TBS selection, outlier removal on, 2**h weights, quaternion L2 mean,
    5-tap FIR)."""

    ths: ThsMode = ThsMode.TBS
    outlier_removal: bool = True
    iqr_gain: float = 1.5
    weights: WeightScheme = WeightScheme.W2
    rot_mean: RotMeanMethod = RotMeanMethod.QL2
    fir_length: int = 5
    camera_in_body: Pose = field(default_factory=Pose.identity)

    def __post_init__(self) -> None:
        if self.iqr_gain <= 0:
            raise ValueError("iqr_gain must be positive")
        if self.fir_length < 1:
            raise ValueError("fir_length must be at least 1")


@dataclass(frozen=True)
class PerTagEstimate:
    """Body pose in the world frame recovered from a single tag detection."""

    tag_id: int
    body_pose_est: Pose
    weight: float

    def __post_init__(self) -> None:
        if self.weight <= 0:
            raise ValueError("weight must be positive")


@dataclass(frozen=True)
class StageTrace:
    """Per-frame diagnostics of every stage."""

    n_detections: int = 0
    unknown_ids: tuple[int, ...] = ()
    selected_ids: tuple[int, ...] = ()
    or_applied: bool = False
    rejected_ids: tuple[int, ...] = ()
    fusion_method: str | None = None
    dispersion_warning: bool = False
    fusion_degenerate: bool = False
    fir_taps: int = 0
    reason: str | None = None

    def to_dict(self) -> dict:
        return {
            "n_detections": self.n_detections,
            "unknown_ids": list(self.unknown_ids),
            "selected_ids": list(self.selected_ids),
            "or_applied": self.or_applied,
            "rejected_ids": list(self.rejected_ids),
            "fusion_method": self.fusion_method,
            "dispersion_warning": self.dispersion_warning,
            "fusion_degenerate": self.fusion_degenerate,
            "fir_taps": self.fir_taps,
            "reason": self.reason,
        }


@dataclass(frozen=True)
class EstimateOutput:
    timestamp: float
    pose: Pose | None
    tags_used: tuple[int, ...]
    tags_rejected: tuple[int, ...]
    stage_trace: StageTrace


@dataclass(frozen=True)
class PipelineState:
    """Carried between frames: the last few raw (pre-FIR) fused poses."""

    fir_history: tuple[Pose, ...] = ()


@dataclass(frozen=True)
class RotationFusion:
    quaternion: UnitQuaternion | None
    dispersion_warning: bool = False
    degenerate: bool = False


def select_tags(detections: Sequence[Detection], tag_map: TagMap,
                mode: ThsMode) -> list[Detection]:
    """Hierarchical tag selection. Input ids must resolve in the map.

    JBT keeps the single detection of the largest tag (ties: smallest id),
    ALL keeps everything, TBS keeps detections belonging to the two largest
    size classes present. Output is sorted by tag id.
    """
    if not detections:
        return []
    sides = {d.tag_id: tag_map.lookup(d.tag_id).size_class.side_length for d in detections}
    ordered = sorted(detections, key=lambda d: d.tag_id)
    if mode is ThsMode.ALL:
        return ordered
    if mode is ThsMode.JBT:
        best = max(ordered, key=lambda d: (sides[d.tag_id], -d.tag_id))
        return [best]
    top_two = sorted(set(sides.values()), reverse=True)[:2]
    return [d for d in ordered if sides[d.tag_id] in top_two]


def estimate_body_pose_per_tag(detection: Detection, tag_map: TagMap,
                               camera_in_body: Pose,
                               weights: WeightScheme = WeightScheme.UNIFORM
                               ) -> PerTagEstimate | None:
    """Recover the body pose from one detection through the frame chain
    world<-tag, tag<-camera (inverted detection), camera<-body (inverted
    mount). Returns None when the id is not in the map."""
    entry = tag_map.lookup(detection.tag_id)
    if entry is None:
        return None
    body_in_world = compose(
        entry.pose_in_world,
        compose(inverse(detection.pose_tag_in_camera), inverse(camera_in_body)),
    )
    return PerTagEstimate(detection.tag_id, body_in_world,
                          weights.weight_for(entry.size_class))


def iqr_bounds(samples: Sequence[float], gain: float = 1.5) -> tuple[float, float] | None:
    """Tukey fences (Q1 - gain*IQR, Q3 + gain*IQR) with linearly interpolated
    quartiles. Returns None for fewer than three samples."""
    if len(samples) < 3:
        return None
    q1, q3 = np.percentile(np.asarray(samples, dtype=float), [25.0, 75.0])
    spread = q3 - q1
    return float(q1 - gain * spread), float(q3 + gain * spread)


def remove_outliers(estimates: Sequence[PerTagEstimate], gain: float = 1.5
                    ) -> tuple[list[PerTagEstimate], list[PerTagEstimate]]:
    """Keep estimates whose position lies strictly inside the IQR fences on
    every axis (intersection of the per-axis id sets). With fewer than three
    estimates the stage passes everything through; an axis with negligible
    spread keeps all samples on that axis."""
    ordered = sorted(estimates, key=lambda e: e.tag_id)
    if len(ordered) < 3:
        return ordered, []
    positions = np.array([e.body_pose_est.position for e in ordered])
    keep = np.ones(len(ordered), dtype=bool)
    for axis in range(3):
        column = positions[:, axis]
        if column.max() - column.min() <= EQUAL_SPREAD_TOL:
            continue
        lower, upper = iqr_bounds(column, gain)
        keep &= (column > lower) & (column < upper)
    kept = [e for e, k in zip(ordered, keep) if k]
    rejected = [e for e, k in zip(ordered, keep) if not k]
    return kept, rejected


def fuse_positions(kept: Sequence[PerTagEstimate]) -> np.ndarray:
    """Weighted Euclidean mean of the kept positions."""
    if not kept:
        raise ValueError("cannot fuse an empty estimate set")
    weights = np.array([e.weight for e in kept])
    positions = np.array([e.body_pose_est.position for e in kept])
    return (weights[:, None] * positions).sum(axis=0) / weights.sum()


def _reference_index(kept: Sequence[PerTagEstimate]) -> int:
    """Largest weight wins, ties broken by smallest tag id."""
    return max(range(len(kept)), key=lambda i: (kept[i].weight, -kept[i].tag_id))


def _sign_aligned_weighted_sum(quats: Sequence[UnitQuaternion],
                               weights: Sequence[float],
                               ref_index: int) -> UnitQuaternion | None:
    """Flip each quaternion to the hemisphere of the reference, then return
    the normalized weighted sum, or None when the sum collapses."""
    ref = quats[ref_index].as_array()
    total = np.zeros(4)
    for q, w in zip(quats, weights):
        qv = q.as_array()
        if ref @ qv < 0.0:
            qv = -qv
        total += w * qv
    norm = np.linalg.norm(total)
    if norm < _DEGENERATE_NORM:
        return None
    return UnitQuaternion.from_array(total / norm)


def _pairwise_dispersion_exceeds(quats: Sequence[UnitQuaternion], limit: float) -> bool:
    for i in range(len(quats)):
        for j in range(i + 1, len(quats)):
            if quat_rotation_angle(quats[i], quats[j]) >= limit:
                return True
    return False


def fuse_rotations_ql2(kept: Sequence[PerTagEstimate]) -> RotationFusion:
    """Closed-form weighted quaternion L2 mean: sign-align to the largest-
    weight estimate, sum, normalize. The closed form is the global optimum
    when all pairwise rotation angles stay under pi/2; beyond that the
    result is still returned but flagged."""
    if not kept:
        raise ValueError("cannot fuse an empty estimate set")
    quats = [e.body_pose_est.orientation for e in kept]
    weights = [e.weight for e in kept]
    mean = _sign_aligned_weighted_sum(quats, weights, _reference_index(kept))
    warning = _pairwise_dispersion_exceeds(quats, math.pi / 2.0)
    if mean is None:
        return RotationFusion(None, dispersion_warning=warning, degenerate=True)
    return RotationFusion(mean, dispersion_warning=warning)


def fuse_rotations_cl2(kept: Sequence[PerTagEstimate]) -> RotationFusion:
    """Chordal L2 mean: unit eigenvector of the largest eigenvalue of
    Q = sum(w * q * q^T). Insensitive to input sign flips by construction;
    an (almost) repeated top eigenvalue marks the fusion degenerate."""
    if not kept:
        raise ValueError("cannot fuse an empty estimate set")
    accumulator = np.zeros((4, 4))
    for e in kept:
        q = e.body_pose_est.orientation.as_array()
        accumulator += e.weight * np.outer(q, q)
    eigenvalues, eigenvectors = np.linalg.eigh(accumulator)
    if eigenvalues[-1] - eigenvalues[-2] < _EIGENVALUE_GAP_TOL:
        return RotationFusion(None, degenerate=True)
    return RotationFusion(UnitQuaternion.from_array(eigenvectors[:, -1]).canonical())


def fir_smooth(history: Sequence[Pose], new_pose: Pose, length: int) -> Pose:
    """Moving average over the last `length` raw poses (fewer during warm-up):
    unweighted mean position, uniform quaternion L2 mean for orientation with
    the newest pose as sign reference. A constant window is reproduced
    bit-exactly (a plain mean of identical doubles is not)."""
    window = (list(history) + [new_pose])[-length:]
    head = window[0]
    if all(
        np.array_equal(p.position, head.position) and p.orientation == head.orientation
        for p in window[1:]
    ):
        return head
    position = np.mean([p.position for p in window], axis=0)
    quats = [p.orientation for p in window]
    mean = _sign_aligned_weighted_sum(quats, [1.0] * len(quats), len(quats) - 1)
    if mean is None:
        mean = new_pose.orientation
    return Pose(position, mean)


def step(detections: Sequence[Detection], tag_map: TagMap, config: PipelineConfig,
         state: PipelineState | None = None, timestamp: float = 0.0
         ) -> tuple[EstimateOutput, PipelineState]:
    """Run one frame through THS -> per-tag estimation -> OR -> MEF -> FIR.

    Detections with ids missing from the map are dropped up front and
    counted in the trace. Frames yielding no usable estimate return
    pose = None with a reason; the FIR history then stays untouched.
    """
    if state is None:
        state = PipelineState()
    known = [d for d in detections if d.tag_id in tag_map]
    unknown = tuple(sorted(d.tag_id for d in detections if d.tag_id not in tag_map))

    def no_estimate(reason: str, rejected: tuple[int, ...] = (),
                    trace_kwargs: dict | None = None) -> tuple[EstimateOutput, PipelineState]:
        trace = StageTrace(n_detections=len(detections), unknown_ids=unknown,
                           reason=reason, rejected_ids=rejected,
                           **(trace_kwargs or {}))
        return EstimateOutput(timestamp, None, (), rejected, trace), state

    if not known:
        return no_estimate("no-tags")

    selected = select_tags(known, tag_map, config.ths)
    estimates = [
        estimate_body_pose_per_tag(d, tag_map, config.camera_in_body, config.weights)
        for d in selected
    ]

    if config.outlier_removal:
        kept, rejected = remove_outliers(estimates, config.iqr_gain)
        or_applied = len(estimates) >= 3
    else:
        kept, rejected = sorted(estimates, key=lambda e: e.tag_id), []
        or_applied = False
    rejected_ids = tuple(e.tag_id for e in rejected)
    selected_ids = tuple(e.tag_id for e in sorted(estimates, key=lambda e: e.tag_id))

    if not kept:
        return no_estimate("all-rejected", rejected_ids,
                           {"selected_ids": selected_ids, "or_applied": or_applied})

    position = fuse_positions(kept)
    if config.rot_mean is RotMeanMethod.QL2:
        fusion = fuse_rotations_ql2(kept)
    else:
        fusion = fuse_rotations_cl2(kept)
    quaternion = fusion.quaternion
    if quaternion is None:
        # antipodal / maximally dispersed inputs: fall back to the reference
        quaternion = kept[_reference_index(kept)].body_pose_est.orientation

    raw_pose = Pose(position, quaternion)
    smoothed = fir_smooth(state.fir_history, raw_pose, config.fir_length)
    new_state = PipelineState((state.fir_history + (raw_pose,))[-config.fir_length:])

    trace = StageTrace(
        n_detections=len(detections),
        unknown_ids=unknown,
        selected_ids=selected_ids,
        or_applied=or_applied,
        rejected_ids=rejected_ids,
        fusion_method=config.rot_mean.value,
        dispersion_warning=fusion.dispersion_warning,
        fusion_degenerate=fusion.degenerate,
        fir_taps=len(new_state.fir_history),
    )
    output = EstimateOutput(timestamp, smoothed,
                            tuple(e.tag_id for e in kept), rejected_ids, trace)
    return output, new_state


def apply_variant(config: PipelineConfig, variant: str) -> PipelineConfig:
    """Override method axes from a dash-separated token string, e.g.
    'tbs-or-w2-ql2' or 'all-noor'. Unknown tokens raise ValueError."""
    ths = {m.value: m for m in ThsMode}
    weights = {w.value: w for w in WeightScheme}
    rot = {r.value: r for r in RotMeanMethod}
    for token in variant.lower().split("-"):
        if not token:
            continue
        if token in ths:
            config = replace(config, ths=ths[token])
        elif token in weights:
            config = replace(config, weights=weights[token])
        elif token in rot:
            config = replace(config, rot_mean=rot[token])
        elif token == "or":
            config = replace(config, outlier_removal=True)
        elif token in ("noor", "notor"):
            config = replace(config, outlier_removal=False)
        else:
            raise ValueError(f"unknown variant token {token!r} in {variant!r}")
    return config
