"""Demonstration data model, object-centric subtask segmentation, scene
resampling, trajectory expansion, and candidate validation.

Expansion re-anchors each per-arm subtask to the newly sampled pose of its
anchor object: tool keyposes are stored relative to the anchor (at the
subtask's start timestep) and recomposed against the anchor's new pose,
then joint values are recovered with sequentially seeded IK. At a subtask
boundary the first few timesteps blend between the previous and current
subtask's rigid re-anchoring transforms (applied to the same source pose),
so an identity scene reproduces the source trajectory exactly.

Candidates are validated by kinematic replay plus pluggable validators
(joint limits, IK residual, workspace box, final relative pose). This
replaces physics execution: there is no contact or dynamics checking here,
which is the main fidelity gap of the artifact and is called out in the
README. The validator interface is the hook for a physics backend.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import imgio
from .geometry import Pose, compose, express_in_frame, interpolate, inverse, quat_from_axis_angle, quat_mul
from .kinematics import (
    ArmAction,
    BimanualRobot,
    IkNonConvergent,
    IkParams,
    fk,
    ik_dls,
)
from .seeds import STAGE_EXPAND, child_seed, rng_for

ARMS = ("left", "right")

SceneConfig = dict[str, Pose]


class TrajectoryError(Exception):
    pass


class AnnotationError(TrajectoryError):
    pass


class IkFailure(TrajectoryError):
    def __init__(self, t: int, arm: str, residual: float):
        self.t = t
        self.arm = arm
        self.residual = residual
        super().__init__(f"IK failed during expansion at t={t} ({arm}), residual {residual:.6g} m")


class BudgetExhausted(TrajectoryError):
    def __init__(self, accepted: list, attempts: int):
        self.accepted = accepted
        self.attempts = attempts
        super().__init__(f"attempt budget exhausted after {attempts} tries, {len(accepted)} accepted")


@dataclass
class Demonstration:
    """Timestep-aligned bimanual episode (Eq.-style tuple of frames + actions)."""

    id: str
    robot: BimanualRobot
    actions: list[tuple[ArmAction, ArmAction]]
    object_track: dict[str, list[Pose]]
    scene: SceneConfig
    camera_streams: dict[str, list[np.ndarray]] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        t = len(self.actions)
        if t < 2:
            raise ValueError(f"demonstration needs T >= 2, got {t}")
        for oid, track in self.object_track.items():
            if len(track) != t:
                raise ValueError(f"object '{oid}' track length {len(track)} != T={t}")
        for cam, frames in self.camera_streams.items():
            if len(frames) != t:
                raise ValueError(f"camera '{cam}' stream length {len(frames)} != T={t}")

    @property
    def length(self) -> int:
        return len(self.actions)

    def arm_actions(self, arm: str) -> list[ArmAction]:
        idx = 0 if arm == "left" else 1
        return [a[idx] for a in self.actions]


@dataclass(frozen=True)
class SubtaskAnnotation:
    arm: str
    start_t: int  # 1-based, inclusive
    end_t: int  # 1-based, inclusive
    anchor_object: str

    def __post_init__(self):
        if self.arm not in ARMS:
            raise ValueError(f"arm must be left or right, got {self.arm}")
        if not 1 <= self.start_t < self.end_t:
            raise ValueError(f"need 1 <= start_t < end_t, got [{self.start_t}, {self.end_t}]")


def check_coverage(annotations: list[SubtaskAnnotation], t_len: int) -> dict[str, list[SubtaskAnnotation]]:
    """Per-arm subtasks must be non-overlapping and cover [1, T]."""
    by_arm: dict[str, list[SubtaskAnnotation]] = {arm: [] for arm in ARMS}
    for ann in annotations:
        if ann.end_t > t_len:
            raise AnnotationError(f"{ann.arm} subtask ends at {ann.end_t} > T={t_len}")
        by_arm[ann.arm].append(ann)
    for arm, anns in by_arm.items():
        anns.sort(key=lambda a: a.start_t)
        if not anns:
            raise AnnotationError(f"no subtasks annotated for {arm} arm")
        cursor = 1
        for ann in anns:
            if ann.start_t > cursor:
                raise AnnotationError(f"{arm} arm: gap before t={ann.start_t}")
            if ann.start_t < cursor:
                raise AnnotationError(f"{arm} arm: overlap at t={ann.start_t}")
            cursor = ann.end_t + 1
        if cursor != t_len + 1:
            raise AnnotationError(f"{arm} arm: coverage ends at {cursor - 1}, T={t_len}")
    return by_arm


@dataclass
class Subtask:
    """One segmented arm subtask with its object-frame tool keyposes."""

    arm: str
    start_t: int
    end_t: int
    anchor_object: str
    anchor_pose: Pose  # anchor object's pose at start_t
    actions: list[ArmAction]
    tool_poses: list[Pose]  # world tool poses, one per timestep in [start_t, end_t]
    relative_poses: list[Pose]  # tool poses expressed in the anchor frame


def segment(demo: Demonstration, annotations: list[SubtaskAnnotation]) -> dict[str, list[Subtask]]:
    by_arm = check_coverage(annotations, demo.length)
    out: dict[str, list[Subtask]] = {}
    for arm, anns in by_arm.items():
        chain = demo.robot.chain(arm)
        arm_acts = demo.arm_actions(arm)
        subtasks = []
        for ann in anns:
            if ann.anchor_object not in demo.object_track:
                raise AnnotationError(f"unknown anchor object '{ann.anchor_object}'")
            anchor_pose = demo.object_track[ann.anchor_object][ann.start_t - 1]
            acts = arm_acts[ann.start_t - 1 : ann.end_t]
            tool_poses = [fk(chain, a.joints) for a in acts]
            rel = [express_in_frame(p, anchor_pose) for p in tool_poses]
            subtasks.append(
                Subtask(
                    arm=arm,
                    start_t=ann.start_t,
                    end_t=ann.end_t,
                    anchor_object=ann.anchor_object,
                    anchor_pose=anchor_pose,
                    actions=acts,
                    tool_poses=tool_poses,
                    relative_poses=rel,
                )
            )
        out[arm] = subtasks
    return out


# --------------------------------------------------------------------------
# scene sampling


@dataclass(frozen=True)
class ObjectRanges:
    """Uniform perturbation half-ranges for one object."""

    dx: float = 0.05
    dy: float = 0.05
    dz: float = 0.0
    yaw: float = math.radians(15.0)

    def __post_init__(self):
        for name in ("dx", "dy", "dz", "yaw"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} range must be >= 0")


@dataclass
class PoseSampler:
    """Per-object uniform pose perturbations; the same attempt index draws
    the same unit offsets regardless of range magnitudes."""

    default: ObjectRanges = field(default_factory=ObjectRanges)
    per_object: dict[str, ObjectRanges] = field(default_factory=dict)

    def ranges_for(self, obj_id: str) -> ObjectRanges:
        return self.per_object.get(obj_id, self.default)


def sample_scene(base: SceneConfig, sampler: PoseSampler, seed: int) -> SceneConfig:
    """Independently perturb every object pose; deterministic in `seed`.

    Translation offsets are uniform in +-(dx, dy, dz); yaw is a world-z
    rotation about the object's own origin, uniform in +-yaw.
    """
    rng = rng_for(seed)
    out: SceneConfig = {}
    for obj_id in sorted(base):
        r = sampler.ranges_for(obj_id)
        unit = rng.uniform(-1.0, 1.0, size=4)
        offset = np.array([unit[0] * r.dx, unit[1] * r.dy, unit[2] * r.dz])
        yaw = float(unit[3] * r.yaw)
        pose = base[obj_id]
        out[obj_id] = Pose(
            pose.position + offset,
            quat_mul(quat_from_axis_angle((0.0, 0.0, 1.0), yaw), pose.orientation),
        )
    return out


def scene_delta(base: SceneConfig, new: SceneConfig) -> dict[str, Pose]:
    """World-frame rigid delta per object: new = delta * base."""
    missing = set(base) - set(new)
    if missing:
        raise TrajectoryError(f"new scene missing objects: {sorted(missing)}")
    return {oid: compose(new[oid], inverse(base[oid])) for oid in base}


# --------------------------------------------------------------------------
# expansion


def default_blend_steps(subtask_len: int) -> int:
    return min(subtask_len, max(3, round(0.05 * subtask_len)))


def expand(
    demo: Demonstration,
    annotations: list[SubtaskAnnotation],
    new_scene: SceneConfig,
    ik: IkParams | None = None,
    blend_steps: int | None = None,
) -> Demonstration:
    """Produce a candidate trajectory consistent with `new_scene`.

    Raises IkFailure when any re-anchored keypose cannot be solved; callers
    treat that as candidate rejection.
    """
    ik = ik or IkParams()
    segments = segment(demo, annotations)
    deltas = scene_delta(demo.scene, new_scene)
    t_len = demo.length

    new_arm_joints: dict[str, list[tuple[float, ...]]] = {}
    target_tool: dict[str, list[Pose]] = {}
    residuals: dict[str, list[float]] = {}
    blend_mask: dict[str, list[bool]] = {}

    for arm in ARMS:
        chain = demo.robot.chain(arm)
        source_actions = demo.arm_actions(arm)
        joints_out: list[tuple[float, ...]] = [None] * t_len  # type: ignore[list-item]
        targets: list[Pose] = [None] * t_len  # type: ignore[list-item]
        res: list[float] = [0.0] * t_len
        blended = [False] * t_len
        seed = np.asarray(source_actions[0].joints, dtype=np.float64)
        prev_delta: Pose | None = None

        for sub in segments[arm]:
            delta = deltas[sub.anchor_object]
            n_blend = 0
            if prev_delta is not None:
                n_blend = default_blend_steps(len(sub.actions)) if blend_steps is None else min(blend_steps, len(sub.actions))
            for i, src_pose in enumerate(sub.tool_poses):
                t = sub.start_t - 1 + i
                target = compose(delta, src_pose)
                if i < n_blend:
                    s = (i + 1) / n_blend
                    target = interpolate(compose(prev_delta, src_pose), target, s)
                    blended[t] = True
                try:
                    q = ik_dls(chain, target, seed, ik)
                except IkNonConvergent as exc:
                    raise IkFailure(t + 1, arm, exc.pos_residual) from exc
                seed = q
                joints_out[t] = tuple(q)
                targets[t] = target
                achieved = fk(chain, q)
                res[t] = float(np.linalg.norm(achieved.position - target.position))
            prev_delta = delta

        new_arm_joints[arm] = joints_out
        target_tool[arm] = targets
        residuals[arm] = res
        blend_mask[arm] = blended

    actions = [
        (
            ArmAction(new_arm_joints["left"][t], demo.actions[t][0].gripper),
            ArmAction(new_arm_joints["right"][t], demo.actions[t][1].gripper),
        )
        for t in range(t_len)
    ]
    new_track = {
        oid: [compose(deltas[oid], p) for p in track] for oid, track in demo.object_track.items()
    }
    meta = dict(demo.meta)
    meta["expansion"] = {
        "source_id": demo.id,
        "target_tool": {arm: [p.to_list() for p in target_tool[arm]] for arm in ARMS},
        "ik_residuals": {arm: residuals[arm] for arm in ARMS},
        "blend_mask": {arm: blend_mask[arm] for arm in ARMS},
    }
    return Demonstration(
        id=f"{demo.id}-cand",
        robot=demo.robot,
        actions=actions,
        object_track=new_track,
        scene=dict(new_scene),
        camera_streams={},
        meta=meta,
    )


# --------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Validator:
    """Named pure predicate; returns a list of failure strings (empty = pass)."""

    name: str
    check: Callable[[Demonstration], list[str]]


@dataclass
class ValidationReport:
    passed: bool
    failures: list[str]


def joint_limit_validator(margin: float = 0.0) -> Validator:
    def check(demo: Demonstration) -> list[str]:
        fails = []
        for arm in ARMS:
            chain = demo.robot.chain(arm)
            for t, act in enumerate(demo.arm_actions(arm)):
                q = np.asarray(act.joints)
                if np.any(q < chain.lower - margin) or np.any(q > chain.upper + margin):
                    fails.append(f"joint-limit: t={t + 1} arm={arm}")
        return fails

    return Validator("joint-limit", check)


def ik_residual_validator(max_residual: float) -> Validator:
    def check(demo: Demonstration) -> list[str]:
        info = demo.meta.get("expansion")
        if info is None:
            return []
        fails = []
        for arm in ARMS:
            chain = demo.robot.chain(arm)
            targets = info["target_tool"][arm]
            for t, act in enumerate(demo.arm_actions(arm)):
                target = Pose.from_list(targets[t])
                achieved = fk(chain, act.joints)
                err = float(np.linalg.norm(achieved.position - target.position))
                if err > max_residual:
                    fails.append(f"ik-residual: t={t + 1} arm={arm} residual={err:.4g}")
        return fails

    return Validator("ik-residual", check)


def workspace_box_validator(lo, hi) -> Validator:
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)

    def check(demo: Demonstration) -> list[str]:
        fails = []
        for arm in ARMS:
            chain = demo.robot.chain(arm)
            for t, act in enumerate(demo.arm_actions(arm)):
                p = fk(chain, act.joints).position
                if np.any(p < lo) or np.any(p > hi):
                    fails.append(f"workspace: t={t + 1} arm={arm} pos={p.round(4).tolist()}")
        return fails

    return Validator("workspace", check)


def final_pose_validator(arm: str, object_id: str, expected_relative: Pose, pos_tol: float, rot_tol: float) -> Validator:
    """Tool pose relative to `object_id` at the final timestep must match."""

    def check(demo: Demonstration) -> list[str]:
        if object_id not in demo.object_track:
            return [f"final-pose: object '{object_id}' missing"]
        chain = demo.robot.chain(arm)
        tool = fk(chain, demo.arm_actions(arm)[-1].joints)
        rel = express_in_frame(tool, demo.object_track[object_id][-1])
        if not rel.approx_equal(expected_relative, pos_tol, rot_tol):
            return [f"final-pose: arm={arm} object={object_id}"]
        return []

    return Validator("final-pose", check)


def validate(candidate: Demonstration, validators: list[Validator]) -> ValidationReport:
    failures = []
    for v in validators:
        failures.extend(f"{v.name}: {msg}" if not msg.startswith(v.name) else msg for msg in v.check(candidate))
    return ValidationReport(passed=not failures, failures=failures)


# --------------------------------------------------------------------------
# batch expansion


@dataclass
class CandidateRecord:
    demo: Demonstration
    source_id: str
    attempt: int
    scene_seed: int


@dataclass
class BatchResult:
    candidates: list[CandidateRecord]
    attempts: int
    rejected: int

    def per_source_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for c in self.candidates:
            counts[c.source_id] = counts.get(c.source_id, 0) + 1
        return counts


def expand_batch(
    demos: list[Demonstration],
    annotations: dict[str, list[SubtaskAnnotation]],
    sampler: PoseSampler,
    count: int,
    seed: int,
    ik: IkParams | None = None,
    validators: list[Validator] | None = None,
    blend_steps: int | None = None,
    budget_factor: int = 20,
) -> BatchResult:
    """Sample / expand / validate until `count` candidates are accepted.

    Attempts are indexed deterministically (attempt k perturbs source
    k % len(demos) with seed child_seed(seed, STAGE_EXPAND, k)), so a fixed
    seed reproduces the batch exactly regardless of worker count. Raises
    BudgetExhausted (accepted candidates attached) after
    budget_factor * count failed-heavy attempts.
    """
    if count < 0:
        raise ValueError("count must be >= 0")
    if count == 0:
        return BatchResult([], 0, 0)
    if not demos:
        raise ValueError("need at least one source demonstration")
    validators = validators if validators is not None else [joint_limit_validator()]
    accepted: list[CandidateRecord] = []
    budget = budget_factor * count
    attempt = 0
    rejected = 0
    while len(accepted) < count:
        if attempt >= budget:
            raise BudgetExhausted(accepted, attempt)
        src = demos[attempt % len(demos)]
        scene_seed = child_seed(seed, STAGE_EXPAND, attempt)
        new_scene = sample_scene(src.scene, sampler, scene_seed)
        try:
            cand = expand(src, annotations[src.id], new_scene, ik, blend_steps)
        except IkFailure:
            rejected += 1
            attempt += 1
            continue
        report = validate(cand, validators)
        if report.passed:
            cand = replace(cand, id=f"{src.id}-c{len(accepted):05d}")
            cand.meta["provenance"] = {
                "source_id": src.id,
                "attempt": attempt,
                "scene_seed": scene_seed,
            }
            accepted.append(CandidateRecord(cand, src.id, attempt, scene_seed))
        else:
            rejected += 1
        attempt += 1
    return BatchResult(accepted, attempt, rejected)


# --------------------------------------------------------------------------
# episode disk format
#
# <dir>/episode.json    id, robot name, T, annotations, provenance/meta
# <dir>/actions.jsonl   one record per timestep (1-based t)
# <dir>/objects.jsonl   per-timestep object poses (7-real lists)
# <dir>/frames/<camera>/000001.png ...


def save_episode(demo: Demonstration, path: str | Path, annotations: list[SubtaskAnnotation] | None = None) -> None:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    header = {
        "id": demo.id,
        "robot": demo.robot.name,
        "T": demo.length,
        "annotations": [
            {"arm": a.arm, "start_t": a.start_t, "end_t": a.end_t, "anchor_object": a.anchor_object}
            for a in (annotations or [])
        ],
        "provenance": demo.meta.get("provenance", {}),
        "meta": {k: v for k, v in demo.meta.items() if k not in ("provenance", "expansion")},
    }
    (root / "episode.json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    with open(root / "actions.jsonl", "w", encoding="utf-8") as f:
        for t, (left, right) in enumerate(demo.actions):
            rec = {
                "t": t + 1,
                "left_joints": list(left.joints),
                "left_gripper": left.gripper,
                "right_joints": list(right.joints),
                "right_gripper": right.gripper,
            }
            f.write(json.dumps(rec) + "\n")

    with open(root / "objects.jsonl", "w", encoding="utf-8") as f:
        for t in range(demo.length):
            rec = {"t": t + 1, "poses": {oid: demo.object_track[oid][t].to_list() for oid in sorted(demo.object_track)}}
            f.write(json.dumps(rec) + "\n")

    for cam, frames in demo.camera_streams.items():
        cam_dir = root / "frames" / cam
        cam_dir.mkdir(parents=True, exist_ok=True)
        for t, frame in enumerate(frames):
            imgio.save_png(frame, cam_dir / f"{t + 1:06d}.png")


def load_episode(path: str | Path, robots: dict[str, BimanualRobot]) -> tuple[Demonstration, list[SubtaskAnnotation]]:
    root = Path(path)
    header = json.loads((root / "episode.json").read_text(encoding="utf-8"))
    robot = robots[header["robot"]]
    actions = []
    with open(root / "actions.jsonl", "r", encoding="utf-8") as f:
        for line in f:
            rec = json.loads(line)
            actions.append(
                (
                    ArmAction(rec["left_joints"], rec["left_gripper"]),
                    ArmAction(rec["right_joints"], rec["right_gripper"]),
                )
            )
    object_track: dict[str, list[Pose]] = {}
    with open(root / "objects.jsonl", "r", encoding="utf-8") as f:
        for line in f:
            rec = json.loads(line)
            for oid, vals in rec["poses"].items():
                object_track.setdefault(oid, []).append(Pose.from_list(vals))
    camera_streams: dict[str, list[np.ndarray]] = {}
    frames_root = root / "frames"
    if frames_root.is_dir():
        for cam_dir in sorted(frames_root.iterdir()):
            if cam_dir.is_dir():
                camera_streams[cam_dir.name] = [imgio.load_png(p) for p in sorted(cam_dir.glob("*.png"))]
    scene = {oid: track[0] for oid, track in object_track.items()}
    meta = dict(header.get("meta", {}))
    if header.get("provenance"):
        meta["provenance"] = header["provenance"]
    demo = Demonstration(
        id=header["id"],
        robot=robot,
        actions=actions,
        object_track=object_track,
        scene=scene,
        camera_streams=camera_streams,
        meta=meta,
    )
    annotations = [
        SubtaskAnnotation(a["arm"], a["start_t"], a["end_t"], a["anchor_object"])
        for a in header.get("annotations", [])
    ]
    return demo, annotations


def load_annotations(path: str | Path) -> list[SubtaskAnnotation]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return [SubtaskAnnotation(a["arm"], a["start_t"], a["end_t"], a["anchor_object"]) for a in data]
