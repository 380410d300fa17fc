"""Poses and forward kinematics."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import quat
from ..asset.types import Skeleton


@dataclass
class Pose:
    """Per-joint local rotations (xyzw) applied on top of the rest pose, plus root translation.

    The root rotation turns the whole avatar about the world origin; other
    joints rotate about their own rest frames.
    """

    joint_rotations: np.ndarray  # (J, 4)
    root_translation: np.ndarray  # (3,)

    def __post_init__(self):
        self.joint_rotations = np.asarray(self.joint_rotations, dtype=np.float64).reshape(-1, 4)
        self.root_translation = np.asarray(self.root_translation, dtype=np.float64).reshape(3)
        norms = np.linalg.norm(self.joint_rotations, axis=1)
        if np.any(np.abs(norms - 1) > 1e-6):
            raise ValueError(f"pose quaternion {int(np.argmax(np.abs(norms - 1)))} is not unit length")

    @classmethod
    def rest(cls, joint_count: int) -> "Pose":
        rot = np.zeros((joint_count, 4))
        rot[:, 3] = 1
        return cls(rot, np.zeros(3))

    @property
    def joint_count(self) -> int:
        return len(self.joint_rotations)

    def with_joint(self, joint: int, rotation) -> "Pose":
        rot = self.joint_rotations.copy()
        rot[joint] = rotation
        return Pose(rot, self.root_translation.copy())

    def transformed(self, rotation, translation) -> "Pose":
        """Compose a global rigid motion (rotation quaternion, translation) on top of this pose."""
        rot = self.joint_rotations.copy()
        rot[0] = quat.normalize(quat.multiply(rotation, rot[0]))
        r = quat.to_matrix(rotation)
        return Pose(rot, r @ self.root_translation + np.asarray(translation, dtype=np.float64))

    def encoding(self) -> np.ndarray:
        """6D rotation features (first two matrix columns per joint) for the MLPs.

        The root slot is always the identity so the nets see body articulation
        only; a global rigid motion of the avatar leaves their outputs fixed.
        """
        m = quat.to_matrix(self.joint_rotations)
        m[0] = np.eye(3)
        return np.concatenate([m[:, :, 0], m[:, :, 1]], axis=1).reshape(-1)


def evaluate_pose(skeleton: Skeleton, pose: Pose) -> np.ndarray:
    """Global 4x4 joint transforms, composed root first."""
    j = skeleton.joint_count
    if pose.joint_count != j:
        raise ValueError(f"pose has {pose.joint_count} joints, skeleton has {j}")
    local = quat.rigid(quat.to_matrix(skeleton.rest_rotation), skeleton.rest_translation)
    articulation = quat.rigid(quat.to_matrix(pose.joint_rotations), np.zeros((j, 3)))
    out = np.empty((j, 4, 4))
    for i in range(j):
        p = int(skeleton.parents[i])
        if p < 0:
            root = quat.rigid(np.eye(3), pose.root_translation) @ articulation[i]
            out[i] = root @ local[i]
        else:
            out[i] = out[p] @ local[i] @ articulation[i]
    return out


def skinning_matrices(skeleton: Skeleton, pose: Pose) -> np.ndarray:
    return evaluate_pose(skeleton, pose) @ skeleton.inverse_bind.astype(np.float64)


# ---------------------------------------------------------------------------
# pose sequence JSON: {"fps": n, "frames": [{"root_t": [x,y,z], "rotations": [[qx,qy,qz,qw], ...]}]}


@dataclass
class PoseSequence:
    fps: float
    frames: list

    def __len__(self) -> int:
        return len(self.frames)

    def to_json(self) -> dict:
        return {
            "fps": self.fps,
            "frames": [
                {"root_t": [float(x) for x in p.root_translation], "rotations": [[float(x) for x in q] for q in p.joint_rotations]}
                for p in self.frames
            ],
        }


def load_pose_sequence(path) -> PoseSequence:
    data = json.loads(Path(path).read_text())
    return pose_sequence_from_json(data)


def pose_sequence_from_json(data: dict) -> PoseSequence:
    try:
        frames = [Pose(np.asarray(f["rotations"], dtype=np.float64), np.asarray(f["root_t"], dtype=np.float64)) for f in data["frames"]]
        fps = float(data.get("fps", 30))
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed pose sequence: {exc}") from None
    if not frames:
        raise ValueError("pose sequence has no frames")
    return PoseSequence(fps=fps, frames=frames)


def save_pose_sequence(seq: PoseSequence, path) -> None:
    Path(path).write_text(json.dumps(seq.to_json()))


def arm_raise_sequence(skeleton: Skeleton, frames: int = 60, fps: float = 30.0, max_angle_deg: float = 80.0) -> PoseSequence:
    """Both arms rotate from T-pose toward overhead, elbows bending slightly."""
    names = {n: i for i, n in enumerate(skeleton.names)}
    poses = []
    for f in range(frames):
        phase = 0.5 - 0.5 * np.cos(np.pi * f / max(frames - 1, 1))
        ang = np.radians(max_angle_deg) * phase
        pose = Pose.rest(skeleton.joint_count)
        pose = pose.with_joint(names["l_shoulder"], quat.from_axis_angle([0, 0, 1], ang))
        pose = pose.with_joint(names["r_shoulder"], quat.from_axis_angle([0, 0, 1], -ang))
        pose = pose.with_joint(names["l_elbow"], quat.from_axis_angle([0, 1, 0], 0.3 * ang))
        pose = pose.with_joint(names["r_elbow"], quat.from_axis_angle([0, 1, 0], -0.3 * ang))
        poses.append(pose)
    return PoseSequence(fps=fps, frames=poses)
