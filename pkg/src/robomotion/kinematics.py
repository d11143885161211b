"""Robot kinematics: model description, FK over the joint tree, virtual
keypoints, damped-least-squares IK retargeting, and clip post-processing.

Conventions: distances in meters, angles in radians. Orientations use
roll-pitch-yaw with R = Rz(yaw) @ Ry(pitch) @ Rx(roll); pitch is reported
in [-pi/2, pi/2] and roll is zeroed at gimbal lock.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import yaml

from .hashing import obj_sha256

GIMBAL_EPS = 1e-14  # on 1 - |sin(pitch)|; equals |pitch - pi/2| < ~1e-7


class ModelValidationError(ValueError):
    pass


class ModelParseError(ValueError):
    pass


@dataclass(frozen=True)
class JointSpec:
    name: str
    parent: int | None
    offset: tuple[float, float, float]
    axis: tuple[float, float, float]
    limits: tuple[float, float]


@dataclass(frozen=True)
class KeypointBinding:
    name: str
    joint: int
    local_offset: tuple[float, float, float]
    parent: int | None = None  # parent keypoint in the binding topology


@dataclass(frozen=True)
class Frame:
    """One robot state: world root pose plus all DoF angles."""

    root_pos: np.ndarray
    root_rpy: np.ndarray
    dofs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "root_pos", np.asarray(self.root_pos, dtype=np.float64))
        object.__setattr__(self, "root_rpy", np.asarray(self.root_rpy, dtype=np.float64))
        object.__setattr__(self, "dofs", np.asarray(self.dofs, dtype=np.float64))


@dataclass(frozen=True)
class KeypointFrame:
    positions: np.ndarray          # (n, 3) world meters
    orientations_rpy: np.ndarray   # (n, 3) radians


@dataclass(frozen=True)
class RobotModel:
    joints: tuple[JointSpec, ...]
    keypoint_bindings: tuple[KeypointBinding, ...]
    dof_count: int
    active_dof_mask: tuple[bool, ...]
    tpose_dofs: tuple[float, ...]
    name: str = "robot"

    def validate(self) -> None:
        d = self.dof_count
        if len(self.joints) != d:
            raise ModelValidationError(f"dof_count {d} != number of joints {len(self.joints)}")
        for i, j in enumerate(self.joints):
            if j.parent is not None and not (0 <= j.parent < i):
                raise ModelValidationError(
                    f"joint '{j.name}' parent index {j.parent} must precede index {i}")
            if abs(np.linalg.norm(j.axis) - 1.0) > 1e-9:
                raise ModelValidationError(f"joint '{j.name}' axis is not unit length")
            lo, hi = j.limits
            if not lo < hi:
                raise ModelValidationError(f"joint '{j.name}' limits ({lo}, {hi}) need lo < hi")
        names = [j.name for j in self.joints]
        if len(set(names)) != len(names):
            raise ModelValidationError("duplicate joint names")
        n = len(self.keypoint_bindings)
        for i, b in enumerate(self.keypoint_bindings):
            if not 0 <= b.joint < d:
                raise ModelValidationError(f"binding '{b.name}' references joint {b.joint}")
            if b.parent is not None and not (0 <= b.parent < n and b.parent != i):
                raise ModelValidationError(f"binding '{b.name}' has bad parent {b.parent}")
        if len(self.active_dof_mask) != d:
            raise ModelValidationError("active_dof_mask length mismatch")
        if len(self.tpose_dofs) != d:
            raise ModelValidationError("tpose_dofs length mismatch")

    @property
    def keypoint_count(self) -> int:
        return len(self.keypoint_bindings)

    # flat arrays for vectorized FK
    @cached_property
    def parents(self) -> np.ndarray:
        return np.array([-1 if j.parent is None else j.parent for j in self.joints])

    @cached_property
    def offsets(self) -> np.ndarray:
        return np.array([j.offset for j in self.joints], dtype=np.float64)

    @cached_property
    def axes(self) -> np.ndarray:
        return np.array([j.axis for j in self.joints], dtype=np.float64)

    @cached_property
    def limits_lo(self) -> np.ndarray:
        return np.array([j.limits[0] for j in self.joints], dtype=np.float64)

    @cached_property
    def limits_hi(self) -> np.ndarray:
        return np.array([j.limits[1] for j in self.joints], dtype=np.float64)

    @cached_property
    def active_mask(self) -> np.ndarray:
        return np.array(self.active_dof_mask, dtype=bool)

    @cached_property
    def tpose(self) -> np.ndarray:
        return np.array(self.tpose_dofs, dtype=np.float64)

    @cached_property
    def kp_joint(self) -> np.ndarray:
        return np.array([b.joint for b in self.keypoint_bindings])

    @cached_property
    def kp_offsets(self) -> np.ndarray:
        return np.array([b.local_offset for b in self.keypoint_bindings], dtype=np.float64)

    @cached_property
    def kp_parents(self) -> np.ndarray:
        return np.array([-1 if b.parent is None else b.parent for b in self.keypoint_bindings])

    @cached_property
    def ancestor_mask(self) -> np.ndarray:
        """(n_keypoints, n_joints) bool: joint j moves keypoint i."""
        d = self.dof_count
        mask = np.zeros((self.keypoint_count, d), dtype=bool)
        for i, b in enumerate(self.keypoint_bindings):
            j = b.joint
            while j >= 0:
                mask[i, j] = True
                j = self.parents[j]
        return mask

    def to_dict(self) -> dict:
        return {
            "format_version": 1,
            "name": self.name,
            "joints": [
                {
                    "name": j.name,
                    "parent": None if j.parent is None else self.joints[j.parent].name,
                    "offset": list(j.offset),
                    "axis": list(j.axis),
                    "limits": list(j.limits),
                }
                for j in self.joints
            ],
            "keypoint_bindings": [
                {
                    "name": b.name,
                    "joint": self.joints[b.joint].name,
                    "parent": None if b.parent is None else self.keypoint_bindings[b.parent].name,
                    "local_offset": list(b.local_offset),
                }
                for b in self.keypoint_bindings
            ],
            "tpose_dofs": list(self.tpose_dofs),
            "active_dof_mask": [bool(m) for m in self.active_dof_mask],
        }

    def content_hash(self) -> str:
        return obj_sha256(self.to_dict())[:12]


def model_from_dict(doc: dict) -> RobotModel:
    if not isinstance(doc, dict):
        raise ModelParseError("model document must be a mapping")
    if doc.get("format_version") != 1:
        raise ModelParseError(f"unsupported format_version {doc.get('format_version')!r}")
    try:
        joint_docs = doc["joints"]
        binding_docs = doc["keypoint_bindings"]
        tpose = [float(v) for v in doc["tpose_dofs"]]
        mask = [bool(v) for v in doc["active_dof_mask"]]
    except (KeyError, TypeError, ValueError) as e:
        raise ModelParseError(f"bad model document: {e}") from e
    joint_index: dict[str, int] = {}
    joints = []
    for i, jd in enumerate(joint_docs):
        try:
            parent_name = jd.get("parent")
            if parent_name is None:
                parent = None
            elif parent_name in joint_index:
                parent = joint_index[parent_name]
            else:
                raise ModelParseError(
                    f"joint '{jd.get('name')}' parent '{parent_name}' not defined earlier")
            joints.append(JointSpec(
                name=str(jd["name"]),
                parent=parent,
                offset=tuple(float(v) for v in jd["offset"]),
                axis=tuple(float(v) for v in jd["axis"]),
                limits=tuple(float(v) for v in jd["limits"]),
            ))
            joint_index[str(jd["name"])] = i
        except (KeyError, TypeError, ValueError) as e:
            raise ModelParseError(f"bad joint entry {i}: {e}") from e
    kp_index = {str(bd["name"]): i for i, bd in enumerate(binding_docs)}
    bindings = []
    for i, bd in enumerate(binding_docs):
        try:
            jname = str(bd["joint"])
            if jname not in joint_index:
                raise ModelParseError(f"binding '{bd.get('name')}' references unknown joint '{jname}'")
            pname = bd.get("parent")
            parent = None if pname is None else kp_index.get(str(pname))
            if pname is not None and parent is None:
                raise ModelParseError(f"binding '{bd.get('name')}' parent '{pname}' unknown")
            bindings.append(KeypointBinding(
                name=str(bd["name"]),
                joint=joint_index[jname],
                local_offset=tuple(float(v) for v in bd["local_offset"]),
                parent=parent,
            ))
        except (KeyError, TypeError, ValueError) as e:
            raise ModelParseError(f"bad binding entry {i}: {e}") from e
    model = RobotModel(
        joints=tuple(joints),
        keypoint_bindings=tuple(bindings),
        dof_count=len(joints),
        active_dof_mask=tuple(mask),
        tpose_dofs=tuple(tpose),
        name=str(doc.get("name", "robot")),
    )
    model.validate()
    return model


def load_robot_model(path) -> RobotModel:
    try:
        doc = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as e:
        raise ModelParseError(f"{path}: {e}") from e
    return model_from_dict(doc)


def save_robot_model(model: RobotModel, path) -> None:
    Path(path).write_text(yaml.safe_dump(model.to_dict(), sort_keys=False))


# ---------------------------------------------------------------------------
# rotations


def rpy_to_matrix(rpy) -> np.ndarray:
    """Rotation matrix R = Rz(yaw) @ Ry(pitch) @ Rx(roll). Accepts (..., 3)."""
    rpy = np.asarray(rpy, dtype=np.float64)
    r, p, y = rpy[..., 0], rpy[..., 1], rpy[..., 2]
    sr, cr = np.sin(r), np.cos(r)
    sp, cp = np.sin(p), np.cos(p)
    sy, cy = np.sin(y), np.cos(y)
    R = np.empty(rpy.shape[:-1] + (3, 3))
    R[..., 0, 0] = cy * cp
    R[..., 0, 1] = cy * sp * sr - sy * cr
    R[..., 0, 2] = cy * sp * cr + sy * sr
    R[..., 1, 0] = sy * cp
    R[..., 1, 1] = sy * sp * sr + cy * cr
    R[..., 1, 2] = sy * sp * cr - cy * sr
    R[..., 2, 0] = -sp
    R[..., 2, 1] = cp * sr
    R[..., 2, 2] = cp * cr
    return R


def matrix_to_rpy(R, check: bool = True) -> np.ndarray:
    """Inverse of rpy_to_matrix; pitch in [-pi/2, pi/2], roll = 0 at gimbal lock."""
    R = np.asarray(R, dtype=np.float64)
    if check:
        err = np.abs(np.swapaxes(R, -1, -2) @ R - np.eye(3)).max()
        if err > 1e-6:
            raise ValueError(f"matrix is not orthonormal (max |R^T R - I| = {err:.3g})")
    sp = np.clip(-R[..., 2, 0], -1.0, 1.0)
    pitch = np.arcsin(sp)
    locked = 1.0 - np.abs(sp) < GIMBAL_EPS
    roll = np.where(locked, 0.0, np.arctan2(R[..., 2, 1], R[..., 2, 2]))
    yaw_free = np.arctan2(R[..., 1, 0], R[..., 0, 0])
    # at lock only yaw -/+ roll is determined; with roll = 0 the yaw comes
    # from the surviving third-column entries
    yaw_lock = np.arctan2(R[..., 1, 2] * np.sign(sp), R[..., 0, 2] * np.sign(sp))
    yaw = np.where(locked, yaw_lock, yaw_free)
    return np.stack([roll, pitch, yaw], axis=-1)


def wrap_angle(a):
    """Wrap angles to the half-open interval (-pi, pi]."""
    return np.pi - np.mod(np.pi - np.asarray(a), 2.0 * np.pi)


def _axis_rotations(axis: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """Rodrigues rotation about a fixed unit axis for a batch of angles."""
    x, y, z = axis
    K = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    K2 = K @ K
    s = np.sin(angles)[:, None, None]
    c = (1.0 - np.cos(angles))[:, None, None]
    return np.eye(3) + s * K + c * K2


# ---------------------------------------------------------------------------
# forward kinematics


def fk_joints(model: RobotModel, root_pos, root_rpy, dofs):
    """World joint frames for a batch of robot states.

    root_pos/root_rpy: (N, 3); dofs: (N, d).
    Returns (joint_pos (N, d, 3), joint_rot (N, d, 3, 3)).
    """
    root_pos = np.asarray(root_pos, dtype=np.float64)
    root_rpy = np.asarray(root_rpy, dtype=np.float64)
    dofs = np.asarray(dofs, dtype=np.float64)
    N, d = dofs.shape
    if d != model.dof_count:
        raise ValueError(f"dofs have {d} columns, model has {model.dof_count} DoFs")
    R_root = rpy_to_matrix(root_rpy)
    joint_pos = np.empty((N, d, 3))
    joint_rot = np.empty((N, d, 3, 3))
    parents = model.parents
    offsets = model.offsets
    axes = model.axes
    for j in range(d):
        if parents[j] < 0:
            Rp, Op = R_root, root_pos
        else:
            Rp, Op = joint_rot[:, parents[j]], joint_pos[:, parents[j]]
        joint_pos[:, j] = Op + np.einsum("nab,b->na", Rp, offsets[j])
        joint_rot[:, j] = Rp @ _axis_rotations(axes[j], dofs[:, j])
    return joint_pos, joint_rot


def fk_keypoints(model: RobotModel, root_pos, root_rpy, dofs):
    """Virtual keypoint poses. Returns (positions (N, n, 3), rpy (N, n, 3))."""
    joint_pos, joint_rot = fk_joints(model, root_pos, root_rpy, dofs)
    kp_rot = joint_rot[:, model.kp_joint]
    kp_pos = joint_pos[:, model.kp_joint] + np.einsum(
        "nkab,kb->nka", kp_rot, model.kp_offsets)
    return kp_pos, matrix_to_rpy(kp_rot, check=False)


def forward_kinematics(model: RobotModel, frame: Frame) -> KeypointFrame:
    """Keypoint poses for a single frame."""
    if frame.dofs.shape != (model.dof_count,):
        raise ValueError(f"frame has {frame.dofs.shape} dofs, model needs ({model.dof_count},)")
    pos, rpy = fk_keypoints(model, frame.root_pos[None], frame.root_rpy[None], frame.dofs[None])
    return KeypointFrame(positions=pos[0], orientations_rpy=rpy[0])


# ---------------------------------------------------------------------------
# representation rows


def representation_dim(model: RobotModel) -> int:
    return 6 + model.dof_count + 6 * model.keypoint_count


def assemble_representation(frame: Frame, keypoints: KeypointFrame) -> np.ndarray:
    """Feature row [root_pos, root_rpy, dofs, kp positions, kp rpy]."""
    return np.concatenate([
        frame.root_pos, frame.root_rpy, frame.dofs,
        keypoints.positions.reshape(-1), keypoints.orientations_rpy.reshape(-1),
    ])


def disassemble_representation(row: np.ndarray, model: RobotModel) -> tuple[Frame, KeypointFrame]:
    row = np.asarray(row, dtype=np.float64)
    D = representation_dim(model)
    if row.shape != (D,):
        raise ValueError(f"row has shape {row.shape}, expected ({D},)")
    d, n = model.dof_count, model.keypoint_count
    frame = Frame(root_pos=row[0:3], root_rpy=row[3:6], dofs=row[6:6 + d])
    kp = KeypointFrame(
        positions=row[6 + d:6 + d + 3 * n].reshape(n, 3),
        orientations_rpy=row[6 + d + 3 * n:].reshape(n, 3),
    )
    return frame, kp


def rows_to_arrays(rows: np.ndarray, model: RobotModel):
    """Split (T, D) rows into root_pos, root_rpy, dofs arrays."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[1] != representation_dim(model):
        raise ValueError(f"rows shape {rows.shape} does not match model (D={representation_dim(model)})")
    d = model.dof_count
    return rows[:, 0:3], rows[:, 3:6], rows[:, 6:6 + d]


# ---------------------------------------------------------------------------
# retargeting


def tpose_scale_calibration(model: RobotModel, source_tpose_keypoints) -> np.ndarray:
    """Per-keypoint segment scales: robot segment length / source segment length.

    Segments follow the binding topology (keypoint -> parent keypoint);
    parentless keypoints get scale 1.0.
    """
    src = np.asarray(source_tpose_keypoints, dtype=np.float64)
    n = model.keypoint_count
    if src.shape != (n, 3):
        raise ValueError(f"source T-pose keypoints have shape {src.shape}, expected ({n}, 3)")
    tpose_frame = Frame(np.zeros(3), np.zeros(3), model.tpose)
    robot_kp = forward_kinematics(model, tpose_frame).positions
    scales = np.ones(n)
    for i in range(n):
        par = model.kp_parents[i]
        if par < 0:
            continue
        src_len = np.linalg.norm(src[i] - src[par])
        if src_len < 1e-6:
            raise ValueError(
                f"degenerate source segment '{model.keypoint_bindings[i].name}' (length {src_len:.2e} m)")
        scales[i] = np.linalg.norm(robot_kp[i] - robot_kp[par]) / src_len
    return scales


def scale_keypoints(model: RobotModel, scales: np.ndarray, source_positions: np.ndarray) -> np.ndarray:
    """Rescale source keypoint trajectories segment-by-segment onto robot proportions.

    source_positions: (T, n, 3). Children are re-rooted at their parent's
    rescaled position with the segment vector multiplied by its scale.
    """
    src = np.asarray(source_positions, dtype=np.float64)
    out = np.empty_like(src)
    order = _topo_keypoint_order(model)
    for i in order:
        par = model.kp_parents[i]
        if par < 0:
            out[:, i] = src[:, i]
        else:
            out[:, i] = out[:, par] + scales[i] * (src[:, i] - src[:, par])
    return out


def _topo_keypoint_order(model: RobotModel) -> list[int]:
    order, placed = [], set()
    pending = list(range(model.keypoint_count))
    while pending:
        progressed = False
        for i in list(pending):
            par = model.kp_parents[i]
            if par < 0 or par in placed:
                order.append(i)
                placed.add(i)
                pending.remove(i)
                progressed = True
        if not progressed:
            raise ModelValidationError("keypoint parent topology has a cycle")
    return order


@dataclass(frozen=True)
class IkConfig:
    damping: float = 0.01
    tol: float = 1e-4          # mean keypoint error, meters
    max_iters: int = 100
    restarts: int = 2
    seed: int = 0


@dataclass(frozen=True)
class IkResult:
    frame: Frame
    mean_error: float
    iterations: int
    converged: bool


def _euler_rate_axes(rpy: np.ndarray) -> np.ndarray:
    """World-frame rotation axes for roll/pitch/yaw rate, columns (3, 3)."""
    r, p, y = rpy
    Rz = rpy_to_matrix(np.array([0.0, 0.0, y]))
    Rzy = rpy_to_matrix(np.array([0.0, p, y]))
    return np.stack([Rzy @ np.array([1.0, 0.0, 0.0]),
                     Rz @ np.array([0.0, 1.0, 0.0]),
                     np.array([0.0, 0.0, 1.0])], axis=1)


def _ik_jacobian(model: RobotModel, root_pos, root_rpy, dofs, kp_pos, joint_pos, joint_rot):
    """Position Jacobian (3n, 6 + n_active) for root pose and active DoFs."""
    n = model.keypoint_count
    active = np.flatnonzero(model.active_mask)
    J = np.zeros((3 * n, 6 + active.size))
    rel_root = kp_pos - root_pos
    J[:, 0:3] = np.tile(np.eye(3), (n, 1))
    axes_rpy = _euler_rate_axes(root_rpy)
    for c in range(3):
        J[:, 3 + c] = np.cross(axes_rpy[:, c], rel_root).reshape(-1)
    world_axes = np.einsum("jab,jb->ja", joint_rot, model.axes)
    for col, j in enumerate(active):
        moved = model.ancestor_mask[:, j]
        if not moved.any():
            continue
        arm = kp_pos[moved] - joint_pos[j]
        block = np.cross(world_axes[j], arm)
        rows = np.flatnonzero(moved)
        J[(3 * rows[:, None] + np.arange(3)).reshape(-1), 6 + col] = block.reshape(-1)
    return J


def retarget_ik(model: RobotModel, target_keypoint_positions, init: Frame,
                config: IkConfig = IkConfig()) -> IkResult:
    """Damped-least-squares IK: find the frame whose FK keypoints match targets.

    Inactive DoFs stay at their init values. Active DoFs are clamped to
    joint limits every iteration. Never raises on non-convergence; the
    best frame found and its residual are returned. Deterministic.
    """
    targets = np.asarray(target_keypoint_positions, dtype=np.float64)
    n = model.keypoint_count
    if targets.shape != (n, 3):
        raise ValueError(f"targets have shape {targets.shape}, expected ({n}, 3)")
    if not np.all(np.isfinite(targets)):
        raise ValueError("targets contain non-finite values")
    rng = np.random.default_rng(config.seed)
    active = np.flatnonzero(model.active_mask)
    lo, hi = model.limits_lo, model.limits_hi

    def solve_from(pos, rpy, dofs):
        pos, rpy, dofs = pos.copy(), rpy.copy(), dofs.copy()
        lam = config.damping
        best = None
        iters_done = 0
        for it in range(config.max_iters):
            jp, jr = fk_joints(model, pos[None], rpy[None], dofs[None])
            kp = jp[0, model.kp_joint] + np.einsum("kab,kb->ka", jr[0, model.kp_joint], model.kp_offsets)
            err = float(np.linalg.norm(targets - kp, axis=1).mean())
            if best is None or err < best[0]:
                best = (err, pos.copy(), rpy.copy(), dofs.copy())
            iters_done = it
            if err < config.tol:
                break
            J = _ik_jacobian(model, pos, rpy, dofs, kp, jp[0], jr[0])
            r = (targets - kp).reshape(-1)
            H = J.T @ J + (lam ** 2) * np.eye(J.shape[1])
            step = np.linalg.solve(H, J.T @ r)
            pos = pos + step[0:3]
            rpy = rpy + step[3:6]
            dofs[active] = np.clip(dofs[active] + step[6:], lo[active], hi[active])
        return best, iters_done

    best, iters = solve_from(init.root_pos, init.root_rpy, init.dofs)
    attempts = 0
    while best[0] >= config.tol and attempts < config.restarts:
        attempts += 1
        dofs = init.dofs.copy()
        dofs[active] = np.clip(
            model.tpose[active] + rng.uniform(-0.4, 0.4, active.size), lo[active], hi[active])
        pos = targets.mean(axis=0) + rng.normal(0.0, 0.05, 3)
        rpy = rng.normal(0.0, 0.1, 3)
        cand, it2 = solve_from(pos, rpy, dofs)
        iters += it2
        if cand[0] < best[0]:
            best = cand
    err, pos, rpy, dofs = best
    frame = Frame(root_pos=pos, root_rpy=wrap_angle(rpy), dofs=dofs)
    return IkResult(frame=frame, mean_error=err, iterations=iters, converged=err < config.tol)


# ---------------------------------------------------------------------------
# clip post-processing (clips are duck-typed: root_pos/root_rpy/dofs arrays)


def height_correct(clip, model: RobotModel):
    """Shift all root heights by one constant so the clip's minimum keypoint
    height becomes exactly zero."""
    if clip.n_frames == 0:
        raise ValueError("empty clip")
    kp_pos, _ = fk_keypoints(model, clip.root_pos, clip.root_rpy, clip.dofs)
    offset = -float(kp_pos[:, :, 2].min())
    if offset == 0.0:
        return clip
    root_pos = clip.root_pos.copy()
    root_pos[:, 2] += offset
    return dataclasses.replace(clip, root_pos=root_pos)


def _moving_average(x: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average per column with shrinking windows at edges."""
    T = x.shape[0]
    h = window // 2
    csum = np.concatenate([np.zeros((1,) + x.shape[1:]), np.cumsum(x, axis=0)])
    t = np.arange(T)
    lo = np.maximum(t - h, 0)
    hi = np.minimum(t + h + 1, T)
    return (csum[hi] - csum[lo]) / (hi - lo).reshape(-1, *([1] * (x.ndim - 1)))


def smooth(clip, window: int):
    """Moving-average smoothing; orientations are smoothed on unwrapped angles."""
    if window % 2 != 1 or window < 1:
        raise ValueError(f"window must be odd and >= 1, got {window}")
    if window > clip.n_frames:
        raise ValueError(f"window {window} exceeds clip length {clip.n_frames}")
    if window == 1:
        return clip
    rpy = np.unwrap(clip.root_rpy, axis=0)
    return dataclasses.replace(
        clip,
        root_pos=_moving_average(clip.root_pos, window),
        root_rpy=wrap_angle(_moving_average(rpy, window)),
        dofs=_moving_average(clip.dofs, window),
    )


# ---------------------------------------------------------------------------
# default model: 29-DoF humanoid with 17 virtual keypoints


def _mirror(name: str) -> str:
    return name.replace("left_", "right_")


def default_model() -> RobotModel:
    """A G1-class 29-DoF humanoid: 6-DoF legs, 3-DoF waist, 7-DoF arms.

    The six wrist DoFs are fixed (not actively controlled), leaving 23
    active. Left/right offsets and axes mirror across the x-z plane.
    """
    X, Y, Z = (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0)
    joints: list[JointSpec] = []
    index: dict[str, int] = {}

    def add(name, parent, offset, axis, limits):
        index[name] = len(joints)
        joints.append(JointSpec(
            name=name,
            parent=None if parent is None else index[parent],
            offset=offset, axis=axis, limits=limits))

    def add_leg(side, sign):
        add(f"{side}_hip_yaw", None, (0.0, sign * 0.10, -0.08), Z, (-1.0, 1.0))
        add(f"{side}_hip_roll", f"{side}_hip_yaw", (0.0, 0.0, 0.0), X, (-0.7, 0.7))
        add(f"{side}_hip_pitch", f"{side}_hip_roll", (0.0, 0.0, 0.0), Y, (-2.5, 2.5))
        add(f"{side}_knee", f"{side}_hip_pitch", (0.0, 0.0, -0.30), Y, (-0.1, 2.6))
        add(f"{side}_ankle_pitch", f"{side}_knee", (0.0, 0.0, -0.30), Y, (-0.9, 0.6))
        add(f"{side}_ankle_roll", f"{side}_ankle_pitch", (0.0, 0.0, 0.0), X, (-0.35, 0.35))

    def add_arm(side, sign):
        add(f"{side}_shoulder_pitch", "waist_pitch", (0.0, sign * 0.17, 0.30), Y, (-3.0, 3.0))
        roll_limits = (-0.4, 2.8) if sign > 0 else (-2.8, 0.4)
        add(f"{side}_shoulder_roll", f"{side}_shoulder_pitch", (0.0, 0.0, 0.0), X, roll_limits)
        add(f"{side}_shoulder_yaw", f"{side}_shoulder_roll", (0.0, 0.0, 0.0), Z, (-2.6, 2.6))
        add(f"{side}_elbow", f"{side}_shoulder_yaw", (0.0, 0.0, -0.22), Y, (-0.3, 2.6))
        add(f"{side}_wrist_roll", f"{side}_elbow", (0.0, 0.0, -0.20), Z, (-1.6, 1.6))
        add(f"{side}_wrist_pitch", f"{side}_wrist_roll", (0.0, 0.0, 0.0), Y, (-1.6, 1.6))
        add(f"{side}_wrist_yaw", f"{side}_wrist_pitch", (0.0, 0.0, 0.0), X, (-1.6, 1.6))

    add_leg("left", +1)
    add_leg("right", -1)
    add("waist_yaw", None, (0.0, 0.0, 0.05), Z, (-1.5, 1.5))
    add("waist_roll", "waist_yaw", (0.0, 0.0, 0.0), X, (-0.5, 0.5))
    add("waist_pitch", "waist_roll", (0.0, 0.0, 0.0), Y, (-0.5, 1.0))
    add_arm("left", +1)
    add_arm("right", -1)

    bindings: list[KeypointBinding] = []
    kp_index: dict[str, int] = {}

    def bind(name, joint, offset, parent):
        kp_index[name] = len(bindings)
        bindings.append(KeypointBinding(
            name=name, joint=index[joint], local_offset=offset,
            parent=None if parent is None else kp_index[parent]))

    bind("pelvis", "waist_yaw", (0.0, 0.0, -0.05), None)
    bind("torso", "waist_pitch", (0.0, 0.0, 0.18), "pelvis")
    bind("head", "waist_pitch", (0.0, 0.0, 0.42), "torso")
    for side, sign in (("left", +1), ("right", -1)):
        bind(f"{side}_shoulder", f"{side}_shoulder_roll", (0.0, 0.0, 0.0), "torso")
        bind(f"{side}_elbow", f"{side}_elbow", (0.0, 0.0, 0.0), f"{side}_shoulder")
        bind(f"{side}_wrist", f"{side}_wrist_roll", (0.0, 0.0, 0.0), f"{side}_elbow")
        bind(f"{side}_hip", f"{side}_hip_pitch", (0.0, 0.0, 0.0), "pelvis")
        bind(f"{side}_knee", f"{side}_knee", (0.0, 0.0, 0.0), f"{side}_hip")
        bind(f"{side}_ankle", f"{side}_ankle_pitch", (0.0, 0.0, 0.0), f"{side}_knee")
        bind(f"{side}_foot_tip", f"{side}_ankle_roll", (0.13, 0.0, -0.05), f"{side}_ankle")

    tpose = np.zeros(len(joints))
    tpose[index["left_shoulder_roll"]] = np.pi / 2
    tpose[index["right_shoulder_roll"]] = -np.pi / 2
    mask = [not j.name.startswith(("left_wrist", "right_wrist")) for j in joints]

    model = RobotModel(
        joints=tuple(joints),
        keypoint_bindings=tuple(bindings),
        dof_count=len(joints),
        active_dof_mask=tuple(mask),
        tpose_dofs=tuple(float(v) for v in tpose),
        name="g1_like_29dof",
    )
    model.validate()
    return model


STANDING_ROOT_HEIGHT = 0.73  # root z putting the default model's foot tips at ground
