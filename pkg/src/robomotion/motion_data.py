"""Text-motion corpus tooling: synthetic clip families with templated
descriptions, kinematic feasibility filtering, dataset splits, feature
normalization, and a line-delimited motion file format.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .kinematics import (
    RobotModel,
    STANDING_ROOT_HEIGHT,
    fk_keypoints,
    height_correct,
    representation_dim,
    wrap_angle,
)

SOURCE_TAGS = ("synthetic", "retargeted", "external")

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True, eq=False)
class MotionClip:
    """An immutable motion: root trajectory plus DoF curves at fixed fps."""

    fps: float
    root_pos: np.ndarray   # (T, 3)
    root_rpy: np.ndarray   # (T, 3)
    dofs: np.ndarray       # (T, d)
    text: str
    clip_id: str
    source_tag: str = "synthetic"
    keypoint_count: int = 0
    model_hash: str = ""

    def __post_init__(self):
        object.__setattr__(self, "root_pos", np.asarray(self.root_pos, dtype=np.float64))
        object.__setattr__(self, "root_rpy", np.asarray(self.root_rpy, dtype=np.float64))
        object.__setattr__(self, "dofs", np.asarray(self.dofs, dtype=np.float64))
        if not self.fps > 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        T = self.dofs.shape[0]
        if T < 2:
            raise ValueError(f"clip '{self.clip_id}' has {T} frames; need at least 2")
        if self.root_pos.shape != (T, 3) or self.root_rpy.shape != (T, 3) or self.dofs.ndim != 2:
            raise ValueError(f"clip '{self.clip_id}' has inconsistent array shapes")
        for name in ("root_pos", "root_rpy", "dofs"):
            if not np.isfinite(getattr(self, name)).all():
                raise ValueError(f"clip '{self.clip_id}' has non-finite {name}")
        if self.source_tag not in SOURCE_TAGS:
            raise ValueError(f"unknown source_tag '{self.source_tag}'")

    @property
    def n_frames(self) -> int:
        return self.dofs.shape[0]

    @property
    def duration_s(self) -> float:
        return self.n_frames / self.fps

    @property
    def dof_count(self) -> int:
        return self.dofs.shape[1]


def clip_to_rows(clip: MotionClip, model: RobotModel) -> np.ndarray:
    """Enriched feature rows (T, 6 + d + 6n): root pose, DoFs, FK keypoints."""
    if clip.dof_count != model.dof_count:
        raise ValueError(f"clip has {clip.dof_count} DoFs, model has {model.dof_count}")
    kp_pos, kp_rpy = fk_keypoints(model, clip.root_pos, clip.root_rpy, clip.dofs)
    T = clip.n_frames
    return np.concatenate([
        clip.root_pos, clip.root_rpy, clip.dofs,
        kp_pos.reshape(T, -1), kp_rpy.reshape(T, -1),
    ], axis=1)


def clip_from_rows(rows: np.ndarray, model: RobotModel, fps: float, text: str = "",
                   clip_id: str = "", source_tag: str = "synthetic") -> MotionClip:
    """Rebuild a clip from feature rows; keypoint columns are dropped (they
    are a function of the rest)."""
    rows = np.asarray(rows, dtype=np.float64)
    D = representation_dim(model)
    if rows.ndim != 2 or rows.shape[1] != D:
        raise ValueError(f"rows shape {rows.shape} does not match model (D={D})")
    d = model.dof_count
    return MotionClip(
        fps=fps,
        root_pos=rows[:, 0:3],
        root_rpy=wrap_angle(rows[:, 3:6]),
        dofs=rows[:, 6:6 + d],
        text=text,
        clip_id=clip_id,
        source_tag=source_tag,
        keypoint_count=model.keypoint_count,
        model_hash=model.content_hash(),
    )


# ---------------------------------------------------------------------------
# synthetic families

_NUM_WORDS = {1: "once", 2: "twice", 3: "three times", 4: "four times"}


def _num_word(n: int) -> str:
    return _NUM_WORDS.get(n, f"{n} times")


def _joint_index(model: RobotModel) -> dict[str, int]:
    return {j.name: i for i, j in enumerate(model.joints)}


def _smooth_noise(rng: np.random.Generator, t: np.ndarray, n_channels: int,
                  amp_range=(0.01, 0.05), corr_s: float = 0.12) -> np.ndarray:
    """Band-limited per-channel wander: white noise smoothed by a Gaussian
    kernel with time constant corr_s, rescaled to the drawn amplitude."""
    dt = t[1] - t[0] if t.size > 1 else 1.0 / 30.0
    sig = max(corr_s / dt, 1e-6)
    half = max(1, int(round(3.0 * sig)))
    k = np.exp(-0.5 * (np.arange(-half, half + 1) / sig) ** 2)
    k /= np.sqrt((k ** 2).sum())  # unit variance gain for white input
    amps = rng.uniform(*amp_range, size=n_channels)
    white = rng.standard_normal((t.size + 2 * half, n_channels))
    out = np.empty((t.size, n_channels))
    for c in range(n_channels):
        out[:, c] = np.convolve(white[:, c], k, mode="valid")[:t.size] * amps[c]
    return out


# channels for idle wander; ground contact is restored afterwards by
# height_correct, and the one-sided penetration rule tolerates lift-off
_NOISE_JOINTS = (
    "waist_yaw", "waist_roll", "waist_pitch",
    "left_shoulder_pitch", "left_shoulder_roll", "left_shoulder_yaw", "left_elbow",
    "left_wrist_roll", "left_wrist_pitch", "left_wrist_yaw",
    "right_shoulder_pitch", "right_shoulder_roll", "right_shoulder_yaw", "right_elbow",
    "right_wrist_roll", "right_wrist_pitch", "right_wrist_yaw",
    "left_hip_yaw", "left_hip_roll", "right_hip_yaw", "right_hip_roll",
    "left_hip_pitch", "left_knee", "left_ankle_pitch", "left_ankle_roll",
    "right_hip_pitch", "right_knee", "right_ankle_pitch", "right_ankle_roll",
)


def _base_state(model: RobotModel, T: int):
    root_pos = np.tile([0.0, 0.0, STANDING_ROOT_HEIGHT], (T, 1))
    root_rpy = np.zeros((T, 3))
    dofs = np.zeros((T, model.dof_count))
    return root_pos, root_rpy, dofs


def _add_idle_motion(model, rng, t, dofs, root_pos, root_rpy,
                     amp_range=(0.05, 0.13)):
    idx = _joint_index(model)
    chans = [idx[n] for n in _NOISE_JOINTS if n in idx]
    # two bands with a random per-channel mix: fast texture plus slow drift,
    # so nearby frames differ and distant windows decorrelate
    fast = _smooth_noise(rng, t, len(chans), amp_range, corr_s=0.095)
    slow = _smooth_noise(rng, t, len(chans), amp_range, corr_s=0.45)
    w = rng.uniform(0.35, 0.75, size=len(chans))
    noise = w * fast + (1.0 - w) * slow
    # ankle texture tips the foot plate toward the ground and knee noise rides
    # on walk/squat flexion, so the whole leg chain runs at half amplitude
    legs = [i for i, n in enumerate(_NOISE_JOINTS)
            if "ankle" in n or "hip_pitch" in n or "knee" in n]
    noise[:, legs] *= 0.5
    # shoulder pitch stacks on top of wave/walk swings; keep it shy of the
    # orientation-flip cone
    pitch = [i for i, n in enumerate(_NOISE_JOINTS) if "shoulder_pitch" in n]
    noise[:, pitch] *= 0.6
    # wrists sit past every keypoint frame the rpy extraction can wrap on,
    # and their limits are wide, so they can carry full-strength texture
    wrists = [i for i, n in enumerate(_NOISE_JOINTS) if "wrist" in n]
    noise[:, wrists] *= 1.8
    dofs[:, chans] += noise
    sway = _smooth_noise(rng, t, 2, (0.01, 0.024), corr_s=0.2)
    root_pos[:, 0] += sway[:, 0]
    root_pos[:, 1] += sway[:, 1]
    root_rpy[:, 2] += _smooth_noise(rng, t, 1, (0.02, 0.06), corr_s=0.5)[:, 0]


def _squat_leg_angles(crouch: np.ndarray):
    """Hip/knee/ankle pitch keeping the foot flat while the root drops by
    `crouch`. The ankle saturates at 0.85 rad; beyond that the knee and hip
    absorb the rest."""
    D = np.clip(0.6 - crouch, 0.05, 0.6)  # vertical hip-to-ankle distance
    a = np.minimum(0.85, np.arccos(np.clip(D / 0.6, -1.0, 1.0)))
    k = a + np.arccos(np.clip(D / 0.3 - np.cos(a), -1.0, 1.0))
    hip = -(k - a)
    return hip, k, -a, D


def _family_stand(model, rng, t, params):
    T = t.size
    root_pos, root_rpy, dofs = _base_state(model, T)
    _add_idle_motion(model, rng, t, dofs, root_pos, root_rpy, amp_range=(0.01, 0.03))
    secs = int(round(t[-1]))
    text = rng.choice([
        "a robot stands still",
        "the robot stands in place without moving",
        "a humanoid robot remains standing",
        f"a robot stands still for {secs} seconds",
        f"the robot holds a standing pose for {secs} seconds",
    ])
    return root_pos, root_rpy, dofs, str(text)


def _family_squat(model, rng, t, params):
    T = t.size
    root_pos, root_rpy, dofs = _base_state(model, T)
    depth = float(params.get("depth", rng.uniform(0.12, 0.28)))
    reps = int(params.get("reps", rng.integers(1, 4)))
    # at least 2 s per rep: the knee leaves full extension with unbounded
    # angular rate, so fast squats blow the velocity budget
    reps = max(1, min(reps, int(t[-1] / 2.0)))
    crouch = 0.005 + depth * 0.5 * (1.0 - np.cos(TWO_PI * reps * t / t[-1]))
    hip, knee, ankle, D = _squat_leg_angles(crouch)
    idx = _joint_index(model)
    for side in ("left", "right"):
        dofs[:, idx[f"{side}_hip_pitch"]] = hip
        dofs[:, idx[f"{side}_knee"]] = knee
        dofs[:, idx[f"{side}_ankle_pitch"]] = ankle
    root_pos[:, 2] = 0.13 + D
    _add_idle_motion(model, rng, t, dofs, root_pos, root_rpy)
    pace = "slowly " if t[-1] / reps > 3.0 else ""
    deep = "deep " if depth > 0.22 else ""
    counts = {1: "one", 2: "two", 3: "three", 4: "four"}
    secs = int(round(t[-1]))
    text = rng.choice([
        f"a robot {pace}performs {counts.get(reps, reps)} {deep}squat{'s' if reps > 1 else ''}",
        f"a robot {pace}squats down {_num_word(reps)}",
        f"the robot bends its knees and does a {deep}squat {_num_word(reps)}",
        f"the humanoid crouches {deep}and stands back up {_num_word(reps)}",
        f"a robot does {counts.get(reps, reps)} {deep}squat{'s' if reps > 1 else ''} in {secs} seconds",
    ])
    return root_pos, root_rpy, dofs, str(text)


def _family_wave(model, rng, t, params):
    T = t.size
    root_pos, root_rpy, dofs = _base_state(model, T)
    side = str(params.get("side", rng.choice(["left", "right"])))
    reps = int(params.get("reps", rng.integers(2, 5)))
    dur = t[-1]
    # raise envelope: up in 0.7 s, down in the last 0.7 s
    ramp = 0.7
    env = np.clip(t / ramp, 0.0, 1.0) * np.clip((dur - t) / ramp, 0.0, 1.0)
    env = np.clip(env, 0.0, 1.0)
    env = env * env * (3.0 - 2.0 * env)  # smoothstep
    reps = max(1, min(reps, int(1.5 * max(dur - 2.0 * ramp, 1.0))))
    f = reps / max(dur - 2.0 * ramp, 1.0)
    osc = np.sin(TWO_PI * f * np.clip(t - ramp, 0.0, None))
    idx = _joint_index(model)
    sign = 1.0 if side == "left" else -1.0
    # cap the raise well short of pitch pi/2: composed clips add arm-swing
    # and waist wander on top, and the orientation channels must stay clear
    # of the gimbal cone where rpy flips branch
    dofs[:, idx[f"{side}_shoulder_pitch"]] = -1.05 * env
    dofs[:, idx[f"{side}_shoulder_roll"]] = sign * 0.25 * env
    dofs[:, idx[f"{side}_elbow"]] = env * (0.9 + 0.45 * osc)
    dofs[:, idx[f"{side}_shoulder_yaw"]] = sign * 0.2 * env * osc
    _add_idle_motion(model, rng, t, dofs, root_pos, root_rpy)
    secs = int(round(dur))
    text = rng.choice([
        f"a robot waves its {side} hand {_num_word(reps)}",
        f"the robot raises its {side} arm and waves {_num_word(reps)}",
        f"a humanoid greets by waving the {side} hand {_num_word(reps)}",
        f"a robot waves the {side} hand {_num_word(reps)} over {secs} seconds",
    ])
    return root_pos, root_rpy, dofs, str(text)


def _family_walk(model, rng, t, params):
    T = t.size
    root_pos, root_rpy, dofs = _base_state(model, T)
    dur = t[-1]
    cadence = float(params.get("cadence", rng.uniform(0.7, 1.2)))
    cycles = max(1, int(round(cadence * dur)))
    f = cycles / dur
    lift_amp = float(params.get("lift", rng.uniform(0.3, 0.5)))
    phase = TWO_PI * f * t
    idx = _joint_index(model)
    for side, sgn in (("left", 1.0), ("right", -1.0)):
        lift = np.maximum(0.0, np.sin(phase) * sgn)
        dofs[:, idx[f"{side}_hip_pitch"]] = -lift_amp * lift
        dofs[:, idx[f"{side}_knee"]] = 2.0 * lift_amp * lift
        dofs[:, idx[f"{side}_ankle_pitch"]] = -lift_amp * lift
        dofs[:, idx[f"{side}_shoulder_pitch"]] = -0.25 * np.sin(phase) * sgn
    _add_idle_motion(model, rng, t, dofs, root_pos, root_rpy)
    pace = "quickly" if f > 1.0 else ("slowly" if f < 0.85 else "at a steady pace")
    high = "high " if lift_amp > 0.42 else ""
    text = rng.choice([
        f"a robot marches in place {pace}",
        f"the robot walks in place lifting its knees {high}{pace}",
        f"a humanoid steps in place {pace} for {cycles} steps",
    ])
    return root_pos, root_rpy, dofs, str(text)


_TURN_WORD = {30: "thirty", 45: "forty five", 60: "sixty", 90: "ninety", 120: "one hundred twenty"}


def _family_turn(model, rng, t, params):
    T = t.size
    root_pos, root_rpy, dofs = _base_state(model, T)
    degrees = int(params.get("degrees", rng.choice([30, 45, 60, 90])))
    direction = str(params.get("direction", rng.choice(["left", "right"])))
    sgn = 1.0 if direction == "left" else -1.0
    dur = t[-1]
    u = np.clip((t - 0.3) / max(dur - 0.6, 0.1), 0.0, 1.0)
    ramp = u * u * (3.0 - 2.0 * u)
    root_rpy[:, 2] = sgn * np.deg2rad(degrees) * ramp
    # small stepping while turning
    f = max(1, int(round(dur))) / dur
    phase = TWO_PI * f * t
    envelope = np.sin(np.pi * np.clip(t / dur, 0.0, 1.0))
    idx = _joint_index(model)
    for side, s in (("left", 1.0), ("right", -1.0)):
        lift = np.maximum(0.0, np.sin(phase) * s) * envelope
        dofs[:, idx[f"{side}_hip_pitch"]] = -0.25 * lift
        dofs[:, idx[f"{side}_knee"]] = 0.5 * lift
        dofs[:, idx[f"{side}_ankle_pitch"]] = -0.25 * lift
    _add_idle_motion(model, rng, t, dofs, root_pos, root_rpy)
    word = _TURN_WORD.get(degrees, str(degrees))
    secs = int(round(dur))
    text = rng.choice([
        f"a robot turns {direction} by {word} degrees",
        f"the robot rotates {word} degrees to the {direction}",
        f"a humanoid pivots {word} degrees {direction}ward while stepping",
        f"a robot takes {secs} seconds to turn {word} degrees {direction}",
    ])
    return root_pos, root_rpy, dofs, str(text)


def _family_freeform(model, rng, t, params):
    """Unstructured whole-body fidgeting: arms and waist wander independently
    around a per-clip rest pose while the legs ride a slow crouch drift. This
    family carries most of the corpus entropy, so quantizer capacity actually
    gets exercised."""
    T = t.size
    root_pos, root_rpy, dofs = _base_state(model, T)
    energy = float(params.get("energy", rng.uniform(0.7, 1.3)))
    idx = _joint_index(model)
    # (joint, per-clip rest angle, wander amplitude); the envelopes keep the
    # arm frames clear of the rpy-extraction singularities, and the tanh
    # squash below caps the gaussian tail that would otherwise reach them
    plan = [
        ("waist_yaw", rng.uniform(-0.12, 0.12), 0.18),
        ("waist_roll", rng.uniform(-0.08, 0.08), 0.12),
        ("waist_pitch", rng.uniform(0.05, 0.35), 0.22),
    ]
    for side, sgn in (("left", 1.0), ("right", -1.0)):
        plan += [
            (f"{side}_shoulder_pitch", rng.uniform(-0.40, -0.05), 0.25),
            (f"{side}_shoulder_roll", sgn * rng.uniform(0.20, 0.55), 0.28),
            (f"{side}_shoulder_yaw", rng.uniform(-0.20, 0.20), 0.30),
            (f"{side}_elbow", rng.uniform(0.45, 0.90), 0.30),
            (f"{side}_wrist_roll", rng.uniform(-0.15, 0.15), 0.35),
            # the wrist keypoint frame sits before the pitch/yaw axes, so
            # these two carry entropy with zero wrap exposure
            (f"{side}_wrist_pitch", rng.uniform(-0.25, 0.25), 0.45),
            (f"{side}_wrist_yaw", rng.uniform(-0.25, 0.25), 0.45),
        ]
    wander = _smooth_noise(rng, t, len(plan), amp_range=(1.0, 1.0), corr_s=0.22)
    wander = 1.8 * np.tanh(wander / 1.8)
    ramp = np.clip(t / 0.6, 0.0, 1.0) * np.clip((t[-1] - t) / 0.6, 0.0, 1.0)
    ramp = ramp * ramp * (3.0 - 2.0 * ramp)
    for c, (name, center, amp) in enumerate(plan):
        dofs[:, idx[name]] = (center + energy * amp * wander[:, c]) * ramp
    # slow crouch drift: the flat-foot closure moves six leg joints, the root
    # height, and every leg keypoint together with no ground-clearance risk,
    # so the lower body contributes entropy too
    drift = _smooth_noise(rng, t, 3, amp_range=(1.0, 1.0), corr_s=0.8)
    drift = 1.8 * np.tanh(drift / 1.8)
    crouch = np.clip(rng.uniform(0.03, 0.16) + energy * 0.07 * drift[:, 0], 0.0, None)
    crouch = crouch * ramp + 0.005
    hip, knee, ankle, D = _squat_leg_angles(crouch)
    for i, side in enumerate(("left", "right")):
        dofs[:, idx[f"{side}_hip_pitch"]] = hip
        dofs[:, idx[f"{side}_knee"]] = knee
        dofs[:, idx[f"{side}_ankle_pitch"]] = ankle
        dofs[:, idx[f"{side}_hip_yaw"]] = (
            rng.uniform(-0.12, 0.12) + 0.15 * drift[:, 1 + i]) * ramp
    root_pos[:, 2] = 0.13 + D
    # moderate joint values can still compose into a near-vertical forearm,
    # where the extracted roll/yaw of the frame become discontinuous; verify
    # with fk and damp the whole upper-body program until margins hold
    arm_kp = [i for i, b in enumerate(model.keypoint_bindings)
              if b.name.endswith(("elbow", "wrist"))]
    cols = [idx[name] for name, _, _ in plan]
    for _ in range(12):
        _, krpy = fk_keypoints(model, root_pos, root_rpy, dofs)
        arm = krpy[:, arm_kp, :]
        if (np.abs(arm[..., 0]).max() <= 2.55
                and np.abs(arm[..., 1]).max() <= 1.15
                and np.abs(arm[..., 2]).max() <= 1.60):
            break
        dofs[:, cols] *= 0.9
    _add_idle_motion(model, rng, t, dofs, root_pos, root_rpy)
    word = "gently" if energy < 0.9 else ("energetically" if energy > 1.15 else "loosely")
    text = rng.choice([
        f"a robot {word} moves its arms around in no particular pattern",
        f"the robot {word} swings and twists its arms and torso",
        f"a humanoid {word} shakes out its arms while shifting its stance",
        f"the robot {word} fidgets with its whole body",
        f"the robot stretches and sways its upper body {word}",
    ])
    return root_pos, root_rpy, dofs, str(text)


_ATOMS = {
    "stand": _family_stand,
    "squat": _family_squat,
    "wave": _family_wave,
    "walk": _family_walk,
    "turn": _family_turn,
    "freeform": _family_freeform,
}


def _family_compose(model, rng, t, params, fps):
    k = int(params.get("parts", rng.integers(2, 4)))
    names = params.get("sequence")
    if not names:
        pool = [n for n in _ATOMS if n != "stand"]
        names = []
        for _ in range(k):
            choices = [n for n in pool if not names or n != names[-1]]
            # a turn's carried heading plus freeform's torso wander would
            # overrun the yaw wrap budget, so the two never share a clip
            if "turn" in names:
                choices = [n for n in choices if n != "freeform"]
            elif "freeform" in names:
                choices = [n for n in choices if n != "turn"]
            names.append(str(rng.choice(choices)))
    k = len(names)
    dur = t[-1] + 1.0 / fps
    blend = 0.5
    seg_dur = max(1.0, (dur + blend * (k - 1)) / k)
    B = int(round(blend * fps))
    segs = []
    cum_deg = 0.0  # chained turns must keep the heading short of the yaw wrap
    for name in names:
        Ts = int(round(seg_dur * fps))
        ts = np.arange(Ts) / fps
        part_params = {}
        if name == "turn":
            degrees = int(rng.choice([30, 45, 60, 90]))
            direction = str(rng.choice(["left", "right"]))
            signed = degrees if direction == "left" else -degrees
            if abs(cum_deg + signed) > 90.0:
                direction = "left" if cum_deg < 0 else "right"
                signed = degrees if direction == "left" else -degrees
            cum_deg += signed
            part_params = {"degrees": degrees, "direction": direction}
        segs.append((_ATOMS[name](model, rng, ts, part_params), name))
    # concatenate with cosine crossfades; a turn's final yaw and a walk's
    # final position carry forward, and each segment's travel is rotated
    # into the carried facing so gaits keep moving the way the robot faces
    (rp, rr, df, text0), _ = segs[0]
    texts = [text0]
    for (rp2, rr2, df2, text2), _name in segs[1:]:
        yaw_off = rr[-1, 2]
        rr2 = rr2.copy()
        rr2[:, 2] += yaw_off
        c, s = np.cos(yaw_off), np.sin(yaw_off)
        rp2 = rp2.copy()
        disp = (rp2[:, :2] - rp2[0:1, :2]) @ np.array([[c, s], [-s, c]])
        rp2[:, :2] = disp + rp[-1:, :2]
        nb = min(B, rp.shape[0], rp2.shape[0])
        w = 0.5 * (1.0 - np.cos(np.pi * np.arange(1, nb + 1) / (nb + 1)))[:, None]
        rp_mix = (1 - w) * rp[-nb:] + w * rp2[:nb]
        rr_mix = (1 - w) * rr[-nb:] + w * rr2[:nb]
        df_mix = (1 - w) * df[-nb:] + w * df2[:nb]
        rp = np.concatenate([rp[:-nb], rp_mix, rp2[nb:]])
        rr = np.concatenate([rr[:-nb], rr_mix, rr2[nb:]])
        df = np.concatenate([df[:-nb], df_mix, df2[nb:]])
        texts.append(text2)
    T = t.size
    rp, rr, df = rp[:T], rr[:T], df[:T]
    if rp.shape[0] < T:
        pad = T - rp.shape[0]
        rp = np.concatenate([rp, np.repeat(rp[-1:], pad, axis=0)])
        rr = np.concatenate([rr, np.repeat(rr[-1:], pad, axis=0)])
        df = np.concatenate([df, np.repeat(df[-1:], pad, axis=0)])
    text = ", then ".join(texts)
    return rp, rr, df, text


FAMILIES = tuple(_ATOMS) + ("compose",)


def synth_motion(model: RobotModel, family: str, params: dict | None = None,
                 seed: int = 0, duration_s: float = 4.0, fps: float = 30.0) -> MotionClip:
    """Deterministic synthetic clip with a templated description."""
    if duration_s < 0.5:
        raise ValueError(f"duration_s must be >= 0.5, got {duration_s}")
    if family not in FAMILIES:
        raise ValueError(f"unknown family '{family}'; choose from {FAMILIES}")
    params = params or {}
    rng = np.random.default_rng(seed)
    T = int(round(duration_s * fps))
    t = np.arange(T) / fps
    if family == "compose":
        root_pos, root_rpy, dofs, text = _family_compose(model, rng, t, params, fps)
    else:
        root_pos, root_rpy, dofs, text = _ATOMS[family](model, rng, t, params)
    # random facing direction: a rigid rotation about world z, so joint
    # velocities, root accel magnitude, and keypoint heights are unchanged.
    # |heading| + |turn yaw| (<= 90 deg) must stay clear of the pi wrap in
    # the orientation channels, hence the 1.2 rad cap
    heading = float(params.get("heading", rng.uniform(-1.2, 1.2)))
    c, s = np.cos(heading), np.sin(heading)
    root_pos[:, :2] = root_pos[:, :2] @ np.array([[c, s], [-s, c]])
    root_rpy[:, 2] += heading
    margin = 1e-3
    dofs = np.clip(dofs, model.limits_lo + margin, model.limits_hi - margin)
    clip = MotionClip(
        fps=fps, root_pos=root_pos, root_rpy=root_rpy, dofs=dofs,
        text=text, clip_id=f"{family}-{seed}", source_tag="synthetic",
        keypoint_count=model.keypoint_count, model_hash=model.content_hash(),
    )
    # plant the clip on the ground: blends and idle wander move the lowest
    # keypoint, and FK is nonlinear in the mixed angles
    return height_correct(clip, model)


DEFAULT_FAMILY_WEIGHTS = {
    "stand": 0.04, "squat": 0.14, "wave": 0.16, "walk": 0.14,
    "turn": 0.12, "freeform": 0.24, "compose": 0.16,
}


def synth_corpus(model: RobotModel, n_clips: int, seed: int = 0,
                 duration_range=(3.0, 8.0), fps: float = 30.0,
                 family_weights: dict | None = None) -> list[MotionClip]:
    """A corpus of independent seeded clips with family mix by weight.

    Descriptions are kept distinct where possible (resampling the clip seed
    a few times) so text-motion retrieval has unambiguous ground truth.
    """
    weights = family_weights or DEFAULT_FAMILY_WEIGHTS
    fams = sorted(weights)
    p = np.array([weights[f] for f in fams], dtype=float)
    p /= p.sum()
    picker = np.random.default_rng(seed)
    children = np.random.SeedSequence(seed).spawn(n_clips)
    clips = []
    seen_texts = set()
    for i in range(n_clips):
        fam = str(picker.choice(fams, p=p))
        dur = float(picker.uniform(*duration_range))
        base = children[i].generate_state(1)[0]
        for attempt in range(20):
            clip = synth_motion(model, fam, seed=int(base + attempt), duration_s=dur, fps=fps)
            if clip.text not in seen_texts:
                break
        seen_texts.add(clip.text)
        clips.append(dataclasses.replace(clip, clip_id=f"synth-{seed}-{i:04d}"))
    return clips


# ---------------------------------------------------------------------------
# feasibility filtering


class Violation(NamedTuple):
    rule: str
    frame: int
    value: float
    threshold: float


@dataclass(frozen=True)
class FilterLimits:
    max_dof_velocity: float = 12.0       # rad/s
    max_root_accel: float = 20.0         # m/s^2
    ground_penetration_tol: float = 0.01  # meters

    def __post_init__(self):
        for f in dataclasses.fields(self):
            if not getattr(self, f.name) > 0:
                raise ValueError(f"{f.name} must be positive")


@dataclass(frozen=True)
class FilterReport:
    clip_id: str
    verdict: str                     # "keep" | "reject"
    violations: tuple[Violation, ...]

    @property
    def keep(self) -> bool:
        return self.verdict == "keep"


def feasibility_filter(clip: MotionClip, model: RobotModel,
                       limits: FilterLimits = FilterLimits()) -> FilterReport:
    """Kinematic feasibility screen: joint limits, DoF velocity, root
    acceleration, and ground penetration of FK keypoints."""
    violations: list[Violation] = []
    lo, hi = model.limits_lo, model.limits_hi
    eps = 1e-9
    below = clip.dofs < lo - eps
    above = clip.dofs > hi + eps
    for t, j in zip(*np.nonzero(below | above)):
        bound = lo[j] if below[t, j] else hi[j]
        violations.append(Violation("joint_limit", int(t), float(clip.dofs[t, j]), float(bound)))

    vel = np.abs(np.diff(clip.dofs, axis=0)) * clip.fps
    vmax = vel.max(axis=1)
    for t in np.nonzero(vmax > limits.max_dof_velocity)[0]:
        violations.append(Violation("dof_velocity", int(t) + 1, float(vmax[t]),
                                    limits.max_dof_velocity))

    if clip.n_frames >= 3:
        acc = np.linalg.norm(np.diff(clip.root_pos, n=2, axis=0), axis=1) * clip.fps ** 2
        for t in np.nonzero(acc > limits.max_root_accel)[0]:
            violations.append(Violation("root_accel", int(t) + 1, float(acc[t]),
                                        limits.max_root_accel))

    kp_pos, _ = fk_keypoints(model, clip.root_pos, clip.root_rpy, clip.dofs)
    minz = kp_pos[:, :, 2].min(axis=1)
    for t in np.nonzero(minz < -limits.ground_penetration_tol)[0]:
        violations.append(Violation("ground_penetration", int(t), float(minz[t]),
                                    -limits.ground_penetration_tol))

    violations.sort(key=lambda v: (v.frame, v.rule))
    return FilterReport(
        clip_id=clip.clip_id,
        verdict="keep" if not violations else "reject",
        violations=tuple(violations),
    )


DEFECTS = ("velocity_spike", "limit_breach", "ground_penetration")


def inject_infeasible(clip: MotionClip, defect: str, seed: int = 0,
                      model: RobotModel | None = None) -> MotionClip:
    """Copy of the clip with one seeded defect; the frame is recorded in the
    clip id as '<id>-<defect>@<frame>'."""
    if defect not in DEFECTS:
        raise ValueError(f"unknown defect '{defect}'; choose from {DEFECTS}")
    rng = np.random.default_rng(seed)
    T = clip.n_frames
    dofs = clip.dofs.copy()
    root_pos = clip.root_pos.copy()
    if defect == "velocity_spike":
        if model is None:
            raise ValueError("velocity_spike needs the robot model for its limits")
        # a spike that stays inside joint limits, so only velocity rules fire
        for _ in range(50):
            t0 = int(rng.integers(1, T - 1))
            j = int(rng.integers(0, clip.dof_count))
            q = dofs[t0, j]
            room_up = model.limits_hi[j] - 0.01 - q
            room_dn = q - (model.limits_lo[j] + 0.01)
            room = max(room_up, room_dn)
            if room > 0.5:
                delta = min(0.9, room)
                dofs[t0, j] += delta if room_up >= room_dn else -delta
                break
        else:
            raise ValueError("could not place a velocity spike within joint limits")
    elif defect == "limit_breach":
        if model is None:
            raise ValueError("limit_breach needs the robot model for its limits")
        t0 = int(rng.integers(0, T))
        j = int(rng.integers(0, clip.dof_count))
        dofs[t0, j] = model.limits_hi[j] + 0.1
    else:  # ground_penetration: smooth dip so only the penetration rule fires
        if model is None:
            raise ValueError("ground_penetration needs the robot model for FK")
        ramp = min(10, max(2, (T - 4) // 3))
        hold = min(5, max(3, T - 2 * ramp - 2))
        t0 = int(rng.integers(1, max(2, T - (2 * ramp + hold))))
        window = slice(t0, min(T, t0 + 2 * ramp + hold))
        kp_pos, _ = fk_keypoints(model, clip.root_pos[window], clip.root_rpy[window],
                                 clip.dofs[window])
        dz = float(kp_pos[:, :, 2].min()) + 0.05
        prof = np.concatenate([
            0.5 * (1.0 - np.cos(np.pi * np.arange(1, ramp + 1) / ramp)),
            np.ones(hold),
            0.5 * (1.0 + np.cos(np.pi * np.arange(1, ramp + 1) / ramp)),
        ])
        end = min(T, t0 + prof.size)
        root_pos[t0:end, 2] -= dz * prof[:end - t0]
        t0 = t0 + ramp  # first fully-sunk frame
    return dataclasses.replace(
        clip, dofs=dofs, root_pos=root_pos,
        clip_id=f"{clip.clip_id}-{defect}@{t0}")


# ---------------------------------------------------------------------------
# splits and normalization


def split_dataset(clips: list, ratios=(0.8, 0.15, 0.05), seed: int = 0):
    """Seeded shuffle then contiguous (train, test, val) cut. Test and val
    sizes are round(N * ratio); train takes the remainder."""
    if not clips:
        raise ValueError("cannot split an empty corpus")
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError(f"need three positive ratios, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    N = len(clips)
    n_test = int(np.floor(N * ratios[1] + 0.5))
    n_val = int(np.floor(N * ratios[2] + 0.5))
    n_train = N - n_test - n_val
    if n_train < 0:
        raise ValueError("rounded test+val sizes exceed the corpus")
    order = np.random.default_rng(seed).permutation(N)
    train = [clips[i] for i in order[:n_train]]
    test = [clips[i] for i in order[n_train:n_train + n_test]]
    val = [clips[i] for i in order[n_train + n_test:]]
    return train, test, val


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "std", np.asarray(self.std, dtype=np.float64))
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ValueError("mean/std must be equal-length vectors")
        if not (self.std >= 1e-8).all():
            raise ValueError("std entries must be >= 1e-8")

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @staticmethod
    def from_dict(doc: dict) -> "NormStats":
        return NormStats(np.array(doc["mean"]), np.array(doc["std"]))


def compute_norm_stats(rows: np.ndarray) -> NormStats:
    """Per-channel mean and population std, floored at 1e-8."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] < 2:
        raise ValueError(f"need at least 2 rows, got shape {rows.shape}")
    return NormStats(mean=rows.mean(axis=0), std=np.maximum(rows.std(axis=0), 1e-8))


def normalize(rows: np.ndarray, stats: NormStats) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.float64)
    if rows.shape[-1] != stats.mean.shape[0]:
        raise ValueError(f"rows have {rows.shape[-1]} channels, stats have {stats.mean.shape[0]}")
    return (rows - stats.mean) / stats.std


def denormalize(rows: np.ndarray, stats: NormStats) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.float64)
    if rows.shape[-1] != stats.mean.shape[0]:
        raise ValueError(f"rows have {rows.shape[-1]} channels, stats have {stats.mean.shape[0]}")
    return rows * stats.std + stats.mean


# ---------------------------------------------------------------------------
# motion files


class MotionFileError(ValueError):
    pass


FILE_FORMAT_VERSION = 1


def write_motion_file(clips, path) -> None:
    """Line-delimited motion file: one header object then one array per
    frame; clips separated by a blank line. Floats use shortest
    round-trip decimal form, so writing a just-read file is byte-identical."""
    if isinstance(clips, MotionClip):
        clips = [clips]
    lines = []
    for clip in clips:
        header = {
            "format_version": FILE_FORMAT_VERSION,
            "fps": clip.fps,
            "dof_count": clip.dof_count,
            "keypoint_count": clip.keypoint_count,
            "model_hash": clip.model_hash,
            "text": clip.text,
            "id": clip.clip_id,
            "source_tag": clip.source_tag,
        }
        lines.append(json.dumps(header, ensure_ascii=False))
        frames = np.concatenate([clip.root_pos, clip.root_rpy, clip.dofs], axis=1)
        for row in frames:
            lines.append(json.dumps(row.tolist()))
        lines.append("")
    Path(path).write_text("\n".join(lines[:-1]) + "\n")


def read_motion_file(path) -> list[MotionClip]:
    text = Path(path).read_text()
    clips = []
    header = None
    frames: list[list[float]] = []
    start_line = 0

    def finish(line_no):
        if header is None:
            return
        if len(frames) < 2:
            raise MotionFileError(
                f"{path}: clip '{header.get('id')}' starting at line {start_line} has "
                f"{len(frames)} frames; need at least 2")
        arr = np.array(frames, dtype=np.float64)
        d = int(header["dof_count"])
        try:
            clips.append(MotionClip(
                fps=float(header["fps"]),
                root_pos=arr[:, 0:3], root_rpy=arr[:, 3:6], dofs=arr[:, 6:6 + d],
                text=str(header.get("text", "")),
                clip_id=str(header.get("id", "")),
                source_tag=str(header.get("source_tag", "external")),
                keypoint_count=int(header.get("keypoint_count", 0)),
                model_hash=str(header.get("model_hash", "")),
            ))
        except ValueError as e:
            raise MotionFileError(f"{path}: clip ending at line {line_no}: {e}") from e

    for i, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            finish(i)
            header, frames = None, []
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as e:
            raise MotionFileError(f"{path}: corrupt record at line {i}: {e}") from e
        if header is None:
            if not isinstance(record, dict):
                raise MotionFileError(f"{path}: line {i}: expected a header object")
            if record.get("format_version") != FILE_FORMAT_VERSION:
                raise MotionFileError(
                    f"{path}: line {i}: unsupported format_version "
                    f"{record.get('format_version')!r}")
            header, frames, start_line = record, [], i
        else:
            width = 6 + int(header["dof_count"])
            if not isinstance(record, list) or len(record) != width:
                raise MotionFileError(
                    f"{path}: corrupt record at line {i}: expected {width} floats")
            frames.append(record)
    finish(len(text.splitlines()))
    if not clips:
        raise MotionFileError(f"{path}: no clips found")
    return clips
