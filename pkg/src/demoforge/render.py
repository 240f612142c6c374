"""Deterministic wireframe renderer for kinematic replay.

The original data flow renders replayed trajectories in a physics
simulator; this artifact has no simulator, so candidate and retargeted
trajectories are replayed kinematically and drawn as simple wireframe
scenes (arm link polylines from FK, object outlines at their tracked
poses). The resulting frames only need to carry structural contours:
they exist to be turned into edge maps, not to look photorealistic.

Cameras:
- "third_person": top-down orthographic view of the workspace
- "third_person_b": an alternative third-person window (shifted, wider)
- "left_wrist" / "right_wrist": zoomed top-down windows that follow the
  respective tool point
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image, ImageDraw

from .geometry import Pose, quat_rotate
from .kinematics import ArmAction, BimanualRobot, SerialChain, fk

BACKGROUND = (214, 214, 214)
TABLE = (120, 120, 120)
ARM = (30, 30, 30)
OBJECT_OUTLINE = (60, 60, 60)
TOOL = (10, 10, 10)

WRIST_WINDOW = 0.30  # metres of workspace shown by a wrist camera


@dataclass(frozen=True)
class RenderConfig:
    size: int = 96
    workspace: tuple[float, float, float, float] = (-0.2, 1.0, -0.8, 0.8)  # x_min, x_max, y_min, y_max

    def scale(self) -> float:
        x_min, x_max, y_min, y_max = self.workspace
        return self.size / max(x_max - x_min, y_max - y_min)


class _Camera:
    """Maps world (x, y) to pixel coordinates for one view window."""

    def __init__(self, size: int, center_xy: tuple[float, float], metres_across: float):
        self.size = size
        self.cx, self.cy = center_xy
        self.scale = size / metres_across

    def project(self, p: np.ndarray) -> tuple[float, float]:
        u = (p[1] - self.cy) * self.scale + self.size / 2.0
        v = (p[0] - self.cx) * self.scale + self.size / 2.0
        return (u, v)


def _chain_points(chain: SerialChain, joints) -> list[np.ndarray]:
    q = np.asarray(joints, dtype=np.float64)
    joint_p, _, _, tool_p = chain._frames(q)
    pts = [chain.base.position]
    pts.extend(joint_p)
    pts.append(tool_p)
    return pts


def _draw_arm(draw: ImageDraw.ImageDraw, cam: _Camera, chain: SerialChain, action: ArmAction):
    pts = [cam.project(p) for p in _chain_points(chain, action.joints)]
    draw.line(pts, fill=ARM, width=2)
    # gripper: two jaw ticks whose spread tracks the command
    tip = np.array(pts[-1])
    prev = np.array(pts[-2]) if len(pts) > 1 else tip + (4.0, 0.0)
    d = tip - prev
    n = np.linalg.norm(d)
    d = d / n if n > 1e-9 else np.array([1.0, 0.0])
    perp = np.array([-d[1], d[0]])
    half = 1.5 + 2.5 * action.gripper
    for s in (-1.0, 1.0):
        a = tip + perp * s * half
        b = a + d * 4.0
        draw.line([tuple(a), tuple(b)], fill=TOOL, width=1)


def _draw_object(draw: ImageDraw.ImageDraw, cam: _Camera, obj_id: str, pose: Pose):
    # object ids starting with "b" as round, others rectangular, so scenes
    # contain both curved and straight contours
    center = cam.project(pose.position)
    r = 0.035 * cam.scale
    if obj_id[:1] in ("b", "o"):
        draw.ellipse([center[0] - r, center[1] - r, center[0] + r, center[1] + r], outline=OBJECT_OUTLINE, width=2)
    else:
        corners_local = [(-0.03, -0.03, 0.0), (0.03, -0.03, 0.0), (0.03, 0.03, 0.0), (-0.03, 0.03, 0.0)]
        pts = [cam.project(pose.position + quat_rotate(pose.orientation, np.array(c))) for c in corners_local]
        draw.polygon(pts, outline=OBJECT_OUTLINE, width=2)


def render_frame(
    robot: BimanualRobot,
    action: tuple[ArmAction, ArmAction],
    objects: dict[str, Pose],
    camera: str,
    config: RenderConfig | None = None,
) -> np.ndarray:
    config = config or RenderConfig()
    x_min, x_max, y_min, y_max = config.workspace
    if camera == "third_person":
        cam = _Camera(config.size, ((x_min + x_max) / 2.0, (y_min + y_max) / 2.0), max(x_max - x_min, y_max - y_min))
    elif camera == "third_person_b":
        span = 1.3 * max(x_max - x_min, y_max - y_min)
        cam = _Camera(config.size, ((x_min + x_max) / 2.0 + 0.12, (y_min + y_max) / 2.0 - 0.08), span)
    elif camera in ("left_wrist", "right_wrist"):
        arm = "left" if camera == "left_wrist" else "right"
        act = action[0] if arm == "left" else action[1]
        tool = fk(robot.chain(arm), act.joints)
        cam = _Camera(config.size, (float(tool.position[0]), float(tool.position[1])), WRIST_WINDOW)
    else:
        raise ValueError(f"unknown camera: {camera}")

    img = Image.new("RGB", (config.size, config.size), BACKGROUND)
    draw = ImageDraw.Draw(img)
    if camera.startswith("third_person"):
        tl = cam.project(np.array([x_min + 0.05, y_min + 0.05, 0.0]))
        br = cam.project(np.array([x_max - 0.05, y_max - 0.05, 0.0]))
        draw.rectangle([tl, br], outline=TABLE, width=2)
    for obj_id in sorted(objects):
        _draw_object(draw, cam, obj_id, objects[obj_id])
    _draw_arm(draw, cam, robot.left, action[0])
    _draw_arm(draw, cam, robot.right, action[1])
    return np.asarray(img, dtype=np.uint8)


def render_stream(
    robot: BimanualRobot,
    actions: list[tuple[ArmAction, ArmAction]],
    object_track: dict[str, list[Pose]],
    camera: str,
    config: RenderConfig | None = None,
) -> list[np.ndarray]:
    frames = []
    for t, action in enumerate(actions):
        objects = {oid: track[t] for oid, track in object_track.items()}
        frames.append(render_frame(robot, action, objects, camera, config))
    return frames
