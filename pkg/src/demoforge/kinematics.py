"""Serial-chain robot models, forward kinematics, damped-least-squares IK,
and bimanual trajectory retargeting.

The solver is damped least squares on the 6-D pose error (position plus
rotation-vector of the orientation error), with analytic Jacobian columns
(revolute: axis x (p_ee - p_joint); prismatic: axis). Joint limits are
enforced by clamping every iterate. Defaults: damping 0.05, 200 iterations,
1e-3 m / 1e-2 rad tolerances, unit step scale. These defaults are our own
choice; upstream descriptions of the retargeting never pin a solver.

Robot descriptions load from a small declarative JSON format (see
``load_robot``), deliberately a hand-authorable subset of the usual robot
description formats. Two 7-DoF bimanual fixtures ship with the package
("bimanual_A", "bimanual_B"), differing only in link lengths.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .geometry import Pose, canonicalize_quat, quat_to_matrix

REVOLUTE = "revolute"
PRISMATIC = "prismatic"


class KinematicsError(Exception):
    pass


class IkNonConvergent(KinematicsError):
    """IK residual above tolerance after max_iters; carries best-effort joints."""

    def __init__(self, joints: np.ndarray, pos_residual: float, rot_residual: float):
        self.joints = joints
        self.pos_residual = pos_residual
        self.rot_residual = rot_residual
        super().__init__(
            f"IK did not converge: pos residual {pos_residual:.6g} m, "
            f"rot residual {rot_residual:.6g} rad"
        )


class RetargetFailure(KinematicsError):
    def __init__(self, timestep: int, arm: str, residual: float):
        self.timestep = timestep
        self.arm = arm
        self.residual = residual
        super().__init__(f"retargeting failed at t={timestep} ({arm} arm), residual {residual:.6g} m")


@dataclass(frozen=True)
class JointSpec:
    name: str
    kind: str  # revolute | prismatic
    origin: Pose  # parent frame -> joint frame
    axis: np.ndarray  # unit direction in the joint frame
    limits: tuple[float, float]

    def __post_init__(self):
        if self.kind not in (REVOLUTE, PRISMATIC):
            raise ValueError(f"unknown joint kind: {self.kind}")
        ax = np.asarray(self.axis, dtype=np.float64).reshape(3)
        n = float(np.linalg.norm(ax))
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"joint {self.name}: axis must be unit length, |axis|={n}")
        ax = ax.copy()
        ax.flags.writeable = False
        object.__setattr__(self, "axis", ax)
        lo, hi = float(self.limits[0]), float(self.limits[1])
        if not lo < hi:
            raise ValueError(f"joint {self.name}: limits must satisfy lo < hi, got {self.limits}")
        object.__setattr__(self, "limits", (lo, hi))


class SerialChain:
    """Immutable serial kinematic chain: base pose, ordered joints, tool offset."""

    def __init__(self, base: Pose, joints: list[JointSpec], ee_offset: Pose):
        if not joints:
            raise ValueError("chain needs at least one joint")
        names = [j.name for j in joints]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate joint names: {names}")
        self.base = base
        self.joints = tuple(joints)
        self.ee_offset = ee_offset
        # cache per-joint fixed transforms for the FK hot loop
        self._origin_r = np.stack([j.origin.rotation_matrix() for j in joints])
        self._origin_p = np.stack([j.origin.position for j in joints])
        self._axes = np.stack([j.axis for j in joints])
        self._kinds = [j.kind for j in joints]
        self._base_r = base.rotation_matrix()
        self._base_p = base.position
        self._ee_r = ee_offset.rotation_matrix()
        self._ee_p = ee_offset.position
        self.lower = np.array([j.limits[0] for j in joints])
        self.upper = np.array([j.limits[1] for j in joints])

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    def mid_joints(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def clamp(self, q: np.ndarray) -> np.ndarray:
        return np.clip(q, self.lower, self.upper)

    def _check_joints(self, joints) -> np.ndarray:
        q = np.asarray(joints, dtype=np.float64).reshape(-1)
        if q.shape[0] != self.n_joints:
            raise ValueError(f"expected {self.n_joints} joint values, got {q.shape[0]}")
        if not np.all(np.isfinite(q)):
            raise ValueError(f"non-finite joint values: {q}")
        return q

    def _frames(self, q: np.ndarray):
        """World rotation/position of every joint frame plus the tool frame.

        Returns (joint_r, joint_p, world_axes, tool_r, tool_p) where joint_r/p
        describe each joint frame after its origin offset (so the joint motion
        happens about world_axes[i] through joint_p[i]).
        """
        n = self.n_joints
        joint_p = np.empty((n, 3))
        world_axes = np.empty((n, 3))
        r = self._base_r
        p = self._base_p
        for i in range(n):
            p = p + r @ self._origin_p[i]
            r = r @ self._origin_r[i]
            axis = r @ self._axes[i]
            joint_p[i] = p
            world_axes[i] = axis
            qi = q[i]
            if self._kinds[i] == REVOLUTE:
                r = _rodrigues(axis, qi) @ r
            else:
                p = p + axis * qi
        tool_p = p + r @ self._ee_p
        tool_r = r @ self._ee_r
        return joint_p, world_axes, tool_r, tool_p


def _rodrigues(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rotation matrix about a world-frame unit axis."""
    x = float(axis[0])
    y = float(axis[1])
    z = float(axis[2])
    c = math.cos(angle)
    s = math.sin(angle)
    t = 1.0 - c
    out = np.empty((3, 3))
    out[0, 0] = t * x * x + c
    out[0, 1] = t * x * y - s * z
    out[0, 2] = t * x * z + s * y
    out[1, 0] = t * x * y + s * z
    out[1, 1] = t * y * y + c
    out[1, 2] = t * y * z - s * x
    out[2, 0] = t * x * z - s * y
    out[2, 1] = t * y * z + s * x
    out[2, 2] = t * z * z + c
    return out


def _matrix_to_quat(r: np.ndarray) -> np.ndarray:
    t = float(np.trace(r))
    if t > 0.0:
        s = math.sqrt(t + 1.0) * 2.0
        q = [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
        q = [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
    elif r[1, 1] > r[2, 2]:
        s = math.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2.0
        q = [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
    else:
        s = math.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2.0
        q = [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
    return canonicalize_quat(q)


def fk(chain: SerialChain, joints) -> Pose:
    """World pose of the tool frame for the given joint values."""
    q = chain._check_joints(joints)
    _, _, tool_r, tool_p = chain._frames(q)
    return Pose(tool_p, _matrix_to_quat(tool_r))


@dataclass(frozen=True)
class IkParams:
    damping: float = 0.05
    max_iters: int = 600
    pos_tol: float = 1e-3  # metres
    rot_tol: float = 1e-2  # radians
    step_scale: float = 1.0
    rot_weight: float = 1.0  # 0 -> position-only solve
    max_error_step: float = 0.5  # clamp on the 6-D error fed to one iterate
    stall_iters: int = 25  # iterations without meaningful progress before a restart

    def __post_init__(self):
        if self.damping <= 0:
            raise ValueError("damping must be > 0")
        if self.pos_tol <= 0 or self.rot_tol <= 0:
            raise ValueError("tolerances must be > 0")


def _rotvec_from_matrix(r: np.ndarray) -> np.ndarray:
    """Axis-angle log map of a rotation matrix."""
    cos = max(-1.0, min(1.0, (r[0, 0] + r[1, 1] + r[2, 2] - 1.0) * 0.5))
    angle = math.acos(cos)
    if angle < 1e-10:
        return np.zeros(3)
    if angle > math.pi - 1e-6:
        # near a half turn the skew part vanishes; recover the axis from
        # the diagonal and fix signs from the symmetric part
        ax = math.sqrt(max(0.0, (r[0, 0] + 1.0) * 0.5))
        ay = math.sqrt(max(0.0, (r[1, 1] + 1.0) * 0.5))
        az = math.sqrt(max(0.0, (r[2, 2] + 1.0) * 0.5))
        if ax >= ay and ax >= az:
            if r[0, 1] + r[1, 0] < 0.0:
                ay = -ay
            if r[0, 2] + r[2, 0] < 0.0:
                az = -az
        elif ay >= az:
            if r[0, 1] + r[1, 0] < 0.0:
                ax = -ax
            if r[1, 2] + r[2, 1] < 0.0:
                az = -az
        else:
            if r[0, 2] + r[2, 0] < 0.0:
                ax = -ax
            if r[1, 2] + r[2, 1] < 0.0:
                ay = -ay
        v = np.array([ax, ay, az])
        n = math.sqrt(float(v @ v))
        return v * (angle / n) if n > 0.0 else np.zeros(3)
    scale = angle / (2.0 * math.sin(angle))
    return np.array(
        [
            (r[2, 1] - r[1, 2]) * scale,
            (r[0, 2] - r[2, 0]) * scale,
            (r[1, 0] - r[0, 1]) * scale,
        ]
    )


def _pose_error(target: Pose, tool_r: np.ndarray, tool_p: np.ndarray, target_r: np.ndarray | None = None):
    e_pos = target.position - tool_p
    if target_r is None:
        target_r = quat_to_matrix(target.orientation)
    e_rot = _rotvec_from_matrix(target_r @ tool_r.T)
    return e_pos, e_rot


def _restart_postures(chain: SerialChain) -> list[np.ndarray]:
    """Fixed posture set used to escape local minima, derived from limits."""
    mid = chain.mid_joints()
    half = 0.4 * (chain.upper - chain.lower) / 2.0
    n = chain.n_joints
    alt = np.array([1.0 if i % 2 == 0 else -1.0 for i in range(n)])
    ramp = np.linspace(-1.0, 1.0, n)
    front = np.array([1.0 if i % 2 == 1 else 0.0 for i in range(n)])
    out = []
    for pattern in (alt, ramp, np.ones(n), front, np.roll(alt, 1), np.roll(ramp, 2)):
        out.append(chain.clamp(mid + half * pattern))
        out.append(chain.clamp(mid - half * pattern))
    return out


def ik_dls(chain: SerialChain, target: Pose, seed, params: IkParams | None = None) -> np.ndarray:
    """Solve joints so fk(chain, q) reaches `target` within tolerance.

    Deterministic: the same inputs always produce the same iterate sequence.
    When the residual stops improving for `stall_iters` iterations, the
    iterate jumps to the next entry of a fixed posture ladder (seeded solves
    that start near the answer never stall, so trajectory-continuity callers
    are unaffected). Raises IkNonConvergent (with best-effort joints
    attached) if the residual stays above tolerance after max_iters.
    """
    params = params or IkParams()
    q = chain.clamp(chain._check_joints(seed))
    lam2_floor = params.damping * params.damping
    use_rot = params.rot_weight > 0.0
    revolute = np.array([k == REVOLUTE for k in chain._kinds])
    target_r = quat_to_matrix(target.orientation)
    best_q = q.copy()
    best_res = math.inf
    since_progress = 0
    restarts: list[np.ndarray] | None = None
    next_restart = 0

    def residuals(config: np.ndarray):
        _, _, tool_r, tool_p = chain._frames(config)
        e_pos, e_rot = _pose_error(target, tool_r, tool_p, target_r)
        return e_pos, e_rot

    for it in range(params.max_iters + 1):
        joint_p, axes, tool_r, tool_p = chain._frames(q)
        e_pos, e_rot = _pose_error(target, tool_r, tool_p, target_r)
        pos_res = math.sqrt(float(e_pos @ e_pos))
        rot_res = math.sqrt(float(e_rot @ e_rot))
        score = pos_res + (params.rot_weight * rot_res if use_rot else 0.0)
        if score < best_res:
            best_q = q.copy()
        # sub-0.1%-relative improvements count as a stall: creeping toward a
        # nearby local minimum wastes the budget a branch flip would not
        if score < best_res * (1.0 - 1e-3):
            best_res = score
            since_progress = 0
        else:
            best_res = min(best_res, score)
            since_progress += 1
        if pos_res < params.pos_tol and (not use_rot or rot_res < params.rot_tol):
            return q
        if it == params.max_iters:
            break
        if since_progress >= params.stall_iters:
            if restarts is None:
                # tier 1: the four generic postures closest to the target
                def start_score(c: np.ndarray) -> float:
                    ep, er = residuals(c)
                    return float(np.linalg.norm(ep)) + params.rot_weight * float(np.linalg.norm(er))

                restarts = sorted(_restart_postures(chain), key=start_score)[:4]
            if next_restart == len(restarts) and next_restart < 8:
                # tier 2: first/last-joint half-turn flips of the best iterate
                # (the classic wrist-flip / base-flip branch escapes)
                n = chain.n_joints
                for sign in (1.0, -1.0):
                    flip = best_q.copy()
                    flip[n - 1] += sign * math.pi
                    if n >= 2:
                        flip[n - 2] = 2.0 * chain.mid_joints()[n - 2] - flip[n - 2]
                    restarts.append(chain.clamp(flip))
                    base_flip = best_q.copy()
                    base_flip[0] += sign * math.pi
                    restarts.append(chain.clamp(base_flip))
            elif next_restart == len(restarts):
                # tier 3: mid-range reflections of the best iterate
                mid = chain.mid_joints()
                even = np.arange(len(q)) % 2 == 0
                for mask in (np.ones(len(q), dtype=bool), even, ~even):
                    refl = best_q.copy()
                    refl[mask] = (2.0 * mid - best_q)[mask]
                    restarts.append(chain.clamp(refl))
            if next_restart < len(restarts):
                q = restarts[next_restart]
                next_restart += 1
                since_progress = 0
                continue

        # analytic Jacobian: revolute columns axis x (p_tool - p_joint), prismatic axis
        lever = tool_p[None, :] - joint_p
        cross = np.empty_like(axes)
        cross[:, 0] = axes[:, 1] * lever[:, 2] - axes[:, 2] * lever[:, 1]
        cross[:, 1] = axes[:, 2] * lever[:, 0] - axes[:, 0] * lever[:, 2]
        cross[:, 2] = axes[:, 0] * lever[:, 1] - axes[:, 1] * lever[:, 0]
        jac_lin = np.where(revolute[:, None], cross, axes).T
        jac_ang = np.where(revolute[:, None], axes, 0.0).T

        if use_rot:
            jac = np.vstack([jac_lin, params.rot_weight * jac_ang])
            err = np.concatenate([e_pos, params.rot_weight * e_rot])
        else:
            jac = jac_lin
            err = e_pos
        norm = math.sqrt(float(err @ err))
        if norm > params.max_error_step:
            err = err * (params.max_error_step / norm)
        # damping floor plus an error-proportional term: behaves like
        # Gauss-Newton near the solution, stays stable far from it
        lam2 = lam2_floor + 0.5 * float(err @ err)
        m = jac.shape[0]
        jjt = jac @ jac.T + lam2 * np.eye(m)
        dq = jac.T @ np.linalg.solve(jjt, err)
        q = chain.clamp(q + params.step_scale * dq)

    e_pos, e_rot = residuals(best_q)
    raise IkNonConvergent(best_q, float(np.linalg.norm(e_pos)), float(np.linalg.norm(e_rot)))


# --------------------------------------------------------------------------
# bimanual robots and retargeting


@dataclass(frozen=True)
class ArmAction:
    """One arm's command at one timestep: joint values plus normalized gripper."""

    joints: tuple[float, ...]
    gripper: float

    def __post_init__(self):
        object.__setattr__(self, "joints", tuple(float(v) for v in self.joints))
        g = float(self.gripper)
        if not 0.0 <= g <= 1.0:
            raise ValueError(f"gripper must be in [0,1], got {g}")
        object.__setattr__(self, "gripper", g)


@dataclass(frozen=True)
class BimanualRobot:
    name: str
    left: SerialChain
    right: SerialChain
    gripper_range: tuple[float, float] = (0.0, 0.08)

    def __post_init__(self):
        closed, open_ = self.gripper_range
        if not closed < open_:
            raise ValueError("gripper_range must satisfy closed < open")

    def chain(self, arm: str) -> SerialChain:
        if arm == "left":
            return self.left
        if arm == "right":
            return self.right
        raise ValueError(f"unknown arm: {arm}")


def retarget_trajectory(
    source: BimanualRobot,
    target: BimanualRobot,
    actions: list[tuple[ArmAction, ArmAction]],
    params: IkParams | None = None,
) -> list[tuple[ArmAction, ArmAction]]:
    """Map a bimanual joint trajectory onto another robot.

    Per timestep the source tool poses are recovered with FK and solved on
    the target chains with IK; gripper values are copied through untouched.
    Each step is seeded with the previous step's solution (first step with
    mid-range joints) so the output stays on one solution branch.
    """
    params = params or IkParams()
    out: list[tuple[ArmAction, ArmAction]] = []
    seeds = {"left": target.left.mid_joints(), "right": target.right.mid_joints()}
    for t, (left_act, right_act) in enumerate(actions):
        solved = {}
        for arm, act in (("left", left_act), ("right", right_act)):
            pose = fk(source.chain(arm), act.joints)
            try:
                q = ik_dls(target.chain(arm), pose, seeds[arm], params)
            except IkNonConvergent as exc:
                raise RetargetFailure(t + 1, arm, exc.pos_residual) from exc
            seeds[arm] = q
            solved[arm] = ArmAction(joints=tuple(q), gripper=act.gripper)
        out.append((solved["left"], solved["right"]))
    return out


# --------------------------------------------------------------------------
# declarative robot descriptions


def _pose_from_json(vals) -> Pose:
    return Pose.from_list(vals)


def _chain_from_json(node: dict) -> SerialChain:
    joints = [
        JointSpec(
            name=j["name"],
            kind=j["kind"],
            origin=_pose_from_json(j["origin"]),
            axis=np.asarray(j["axis"], dtype=np.float64),
            limits=(j["limits"][0], j["limits"][1]),
        )
        for j in node["joints"]
    ]
    return SerialChain(
        base=_pose_from_json(node["base"]),
        joints=joints,
        ee_offset=_pose_from_json(node["ee_offset"]),
    )


def robot_from_dict(data: dict) -> BimanualRobot:
    return BimanualRobot(
        name=data["name"],
        left=_chain_from_json(data["left"]),
        right=_chain_from_json(data["right"]),
        gripper_range=(data["gripper_range"][0], data["gripper_range"][1]),
    )


def robot_to_dict(robot: BimanualRobot) -> dict:
    def chain_node(chain: SerialChain) -> dict:
        return {
            "base": chain.base.to_list(),
            "ee_offset": chain.ee_offset.to_list(),
            "joints": [
                {
                    "name": j.name,
                    "kind": j.kind,
                    "origin": j.origin.to_list(),
                    "axis": list(j.axis),
                    "limits": list(j.limits),
                }
                for j in chain.joints
            ],
        }

    return {
        "name": robot.name,
        "gripper_range": list(robot.gripper_range),
        "left": chain_node(robot.left),
        "right": chain_node(robot.right),
    }


def load_robot(path: str | Path) -> BimanualRobot:
    with open(path, "r", encoding="utf-8") as f:
        return robot_from_dict(json.load(f))


def save_robot(robot: BimanualRobot, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(robot_to_dict(robot), f, indent=2)
        f.write("\n")


def load_bundled_robot(name: str) -> BimanualRobot:
    """Load one of the packaged fixtures ("bimanual_A" or "bimanual_B")."""
    ref = resources.files("demoforge").joinpath(f"robots/{name}.json")
    return robot_from_dict(json.loads(ref.read_text(encoding="utf-8")))
