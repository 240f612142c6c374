"""Bundled fixtures: the two 7-DoF bimanual robot descriptions and a
scripted synthetic demonstration generator.

The demos are built by solving IK for a handful of tool waypoints around
two tabletop objects (a cube and a bowl) and interpolating joints between
them, so every fixture trajectory is reachable by construction. They act
as the stand-in for teleoperated episodes when exercising the pipeline
offline.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .geometry import Pose
from .kinematics import (
    ArmAction,
    BimanualRobot,
    JointSpec,
    SerialChain,
    fk,
    save_robot,
)
from .render import RenderConfig, render_stream
from .seeds import rng_for
from .trajectory import Demonstration, SubtaskAnnotation, save_episode

_Z_LIMITS = (-2.9, 2.9)
_Y_LIMITS = (-2.2, 2.0)


def _arm(base_y: float, scale: float) -> SerialChain:
    def t(z: float) -> Pose:
        return Pose.from_translation(0.0, 0.0, z * scale)

    joints = [
        JointSpec("j1", "revolute", t(0.11), np.array([0.0, 0.0, 1.0]), _Z_LIMITS),
        JointSpec("j2", "revolute", t(0.0), np.array([0.0, 1.0, 0.0]), _Y_LIMITS),
        JointSpec("j3", "revolute", t(0.25), np.array([0.0, 0.0, 1.0]), _Z_LIMITS),
        JointSpec("j4", "revolute", t(0.0), np.array([0.0, 1.0, 0.0]), _Y_LIMITS),
        JointSpec("j5", "revolute", t(0.25), np.array([0.0, 0.0, 1.0]), _Z_LIMITS),
        JointSpec("j6", "revolute", t(0.0), np.array([0.0, 1.0, 0.0]), _Y_LIMITS),
        JointSpec("j7", "revolute", t(0.12), np.array([0.0, 0.0, 1.0]), _Z_LIMITS),
    ]
    return SerialChain(
        base=Pose.from_translation(0.0, base_y, 0.0),
        joints=joints,
        ee_offset=t(0.10),
    )


def make_bimanual_robot(name: str) -> BimanualRobot:
    """Fixture robots: "bimanual_A", and "bimanual_B" with 5% longer links."""
    if name == "bimanual_A":
        scale = 1.0
    elif name == "bimanual_B":
        scale = 1.05
    else:
        raise ValueError(f"unknown fixture robot: {name}")
    return BimanualRobot(
        name=name,
        left=_arm(0.30, scale),
        right=_arm(-0.30, scale),
        gripper_range=(0.0, 0.08),
    )


# elbow-down posture with the tool axis vertical (q2+q4+q6 = pi) and the
# tool close to the base, so translated / rotated scenes stay solvable
REFERENCE_POSTURE = np.array([0.0, 0.3, 0.0, 1.6, 0.0, math.pi - 0.3 - 1.6, 0.0])


def _interp_joints(configs: list[np.ndarray], knots: list[int], t_len: int) -> list[np.ndarray]:
    """Piecewise-linear joint path through configs at 0-based knot steps."""
    out: list[np.ndarray] = [None] * t_len  # type: ignore[list-item]
    for (k0, q0), (k1, q1) in zip(zip(knots, configs), zip(knots[1:], configs[1:])):
        for t in range(k0, k1 + 1):
            s = 0.0 if k1 == k0 else (t - k0) / (k1 - k0)
            out[t] = (1.0 - s) * q0 + s * q1
    return out


def make_demo(
    robot: BimanualRobot,
    demo_id: str = "demo_000",
    t_len: int = 12,
    render_size: int = 96,
    cameras: tuple[str, ...] = ("third_person", "third_person_b", "left_wrist", "right_wrist"),
    variation: int = 0,
) -> tuple[Demonstration, list[SubtaskAnnotation], int]:
    """Scripted touch-then-move task; returns (demo, annotations, contact_t).

    The trajectory is authored in joint space (interpolated waypoint
    postures), and the objects are placed under the resulting tool points,
    so every fixture demo is feasible by construction. `variation` jitters
    the waypoints deterministically so multi-demo sets are not identical.
    """
    if t_len < 6:
        raise ValueError("fixture demos need t_len >= 6")
    contact_t = t_len // 2

    # waypoint postures: hover, descend over the cube, swing toward the bowl
    ref = REFERENCE_POSTURE
    jitter = rng_for(1000 + variation).uniform(-0.03, 0.03, size=(6, 7)) if variation else np.zeros((6, 7))
    left_cfg = [
        ref + np.array([0.06, -0.12, 0.0, -0.06, 0.0, 0.06, 0.05]) + jitter[0],
        ref + np.array([0.10, 0.10, 0.0, 0.10, 0.0, -0.08, 0.10]) + jitter[1],
        ref + np.array([-0.55, -0.02, -0.05, 0.02, 0.05, 0.0, -0.10]) + jitter[2],
    ]
    right_cfg = [
        ref + np.array([-0.45, -0.08, 0.0, -0.04, 0.0, 0.04, -0.05]) + jitter[3],
        ref + np.array([-0.50, 0.06, 0.0, 0.06, 0.0, -0.04, 0.05]) + jitter[4],
        ref + np.array([-0.42, -0.04, 0.05, 0.0, -0.05, 0.02, 0.0]) + jitter[5],
    ]
    left_knots = [0, contact_t - 1, t_len - 1]
    right_knots = [0, t_len // 2 - 1, t_len - 1]
    left_path = _interp_joints(left_cfg, left_knots, t_len)
    right_path = _interp_joints(right_cfg, right_knots, t_len)

    # objects sit on the table directly under the relevant tool points
    cube_touch = fk(robot.left, left_cfg[1]).position
    cube = Pose(np.array([cube_touch[0], cube_touch[1], 0.0]), np.array([1.0, 0.0, 0.0, 0.0]))
    bowl_xy = 0.5 * (fk(robot.left, left_cfg[2]).position + fk(robot.right, right_cfg[2]).position)
    bowl = Pose(np.array([bowl_xy[0], bowl_xy[1], 0.0]), np.array([1.0, 0.0, 0.0, 0.0]))
    scene = {"cube": cube, "bowl": bowl}

    actions = []
    for t in range(t_len):
        grip_l = 1.0 if t + 1 < contact_t else 0.1
        actions.append(
            (
                ArmAction(tuple(left_path[t]), grip_l),
                ArmAction(tuple(right_path[t]), 0.8),
            )
        )
    object_track = {oid: [pose] * t_len for oid, pose in scene.items()}

    demo = Demonstration(
        id=demo_id,
        robot=robot,
        actions=actions,
        object_track=object_track,
        scene=scene,
        meta={"task": "touch-cube-then-bowl"},
    )
    config = RenderConfig(size=render_size)
    demo.camera_streams = {
        cam: render_stream(robot, actions, object_track, cam, config) for cam in cameras
    }
    annotations = [
        SubtaskAnnotation("left", 1, contact_t, "cube"),
        SubtaskAnnotation("left", contact_t + 1, t_len, "bowl"),
        SubtaskAnnotation("right", 1, t_len, "bowl"),
    ]
    return demo, annotations, contact_t


def make_single_anchor_demo(
    robot: BimanualRobot,
    demo_id: str = "anchor_demo",
    t_len: int = 10,
    render_size: int = 96,
) -> tuple[Demonstration, list[SubtaskAnnotation], int]:
    """One whole-trajectory subtask per arm, each hovering over its own
    anchor object. Tool points stay within a few centimetres of the anchor,
    so rigidly translated or yawed scenes remain reachable."""
    contact_t = t_len // 2
    ref = REFERENCE_POSTURE
    # small bobbing motion: hover, dip toward the object, rise again
    cfg = [
        ref + np.array([0.0, -0.06, 0.0, -0.02, 0.0, 0.04, 0.03]),
        ref + np.array([0.03, 0.05, 0.0, 0.04, 0.0, -0.04, -0.03]),
        ref + np.array([-0.02, -0.02, 0.02, 0.0, -0.02, 0.02, 0.0]),
    ]
    knots = [0, contact_t - 1, t_len - 1]
    left_path = _interp_joints(cfg, knots, t_len)
    right_path = _interp_joints(cfg, knots, t_len)

    cube_touch = fk(robot.left, cfg[1]).position
    bowl_touch = fk(robot.right, cfg[1]).position
    scene = {
        "cube": Pose(np.array([cube_touch[0], cube_touch[1], 0.0]), np.array([1.0, 0.0, 0.0, 0.0])),
        "bowl": Pose(np.array([bowl_touch[0], bowl_touch[1], 0.0]), np.array([1.0, 0.0, 0.0, 0.0])),
    }
    actions = [
        (ArmAction(tuple(left_path[t]), 1.0 if t + 1 < contact_t else 0.1), ArmAction(tuple(right_path[t]), 0.8))
        for t in range(t_len)
    ]
    object_track = {oid: [pose] * t_len for oid, pose in scene.items()}
    demo = Demonstration(
        id=demo_id,
        robot=robot,
        actions=actions,
        object_track=object_track,
        scene=scene,
        meta={"task": "hover-anchors"},
    )
    config = RenderConfig(size=render_size)
    demo.camera_streams = {"third_person": render_stream(robot, actions, object_track, "third_person", config)}
    annotations = [
        SubtaskAnnotation("left", 1, t_len, "cube"),
        SubtaskAnnotation("right", 1, t_len, "bowl"),
    ]
    return demo, annotations, contact_t


def make_retarget_trajectory(robot: BimanualRobot, steps: int = 50) -> list[tuple[ArmAction, ArmAction]]:
    """Smooth bimanual joint trajectory used by the retargeting checks."""
    base = REFERENCE_POSTURE
    actions = []
    for t in range(steps):
        phase = 2.0 * math.pi * t / steps
        dq = np.array(
            [
                0.25 * math.sin(phase),
                0.15 * math.sin(phase * 0.5),
                0.20 * math.cos(phase) * 0.3,
                0.18 * math.sin(phase * 0.5 + 0.4),
                0.15 * math.sin(phase * 0.7),
                0.12 * math.cos(phase * 0.5),
                0.30 * math.sin(phase * 0.3),
            ]
        )
        q_l = base + dq
        q_r = base + dq * np.array([-1.0, 1.0, -1.0, 1.0, -1.0, 1.0, -1.0])
        grip = 0.5 + 0.5 * math.sin(phase)
        actions.append((ArmAction(tuple(q_l), grip), ArmAction(tuple(q_r), 1.0 - grip)))
    return actions


def write_fixture_tree(root: str | Path, n_demos: int = 3, t_len: int = 12, render_size: int = 96) -> dict:
    """Materialize robots, demos, and a ready-to-run config under `root`."""
    root = Path(root)
    robots_dir = root / "robots"
    robots_dir.mkdir(parents=True, exist_ok=True)
    robot_a = make_bimanual_robot("bimanual_A")
    robot_b = make_bimanual_robot("bimanual_B")
    save_robot(robot_a, robots_dir / "bimanual_A.json")
    save_robot(robot_b, robots_dir / "bimanual_B.json")

    demos_dir = root / "demos"
    contact_t = None
    for i in range(n_demos):
        demo, annotations, contact_t = make_demo(
            robot_a, demo_id=f"demo_{i:03d}", t_len=t_len, render_size=render_size, variation=i
        )
        save_episode(demo, demos_dir / "episodes" / demo.id, annotations)

    return {
        "robots": {"source": str(robots_dir / "bimanual_A.json"), "target": str(robots_dir / "bimanual_B.json")},
        "demos": str(demos_dir),
        "contact_t": contact_t,
    }
