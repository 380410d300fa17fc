from .kinematics import (
    Pose,
    PoseSequence,
    arm_raise_sequence,
    evaluate_pose,
    load_pose_sequence,
    pose_sequence_from_json,
    save_pose_sequence,
    skinning_matrices,
)
from .largesteps import LaplacianSystem, SolverError, dirichlet_energy, largesteps_map, uniform_laplacian
from .mlp import forward, predict_deformation, predict_illumination
from .skinning import PosedGeometry, Rig, TriangleFrames, skin_vertices, triangle_frames

__all__ = [
    "LaplacianSystem", "Pose", "PoseSequence", "PosedGeometry", "Rig", "SolverError", "TriangleFrames",
    "arm_raise_sequence", "dirichlet_energy", "evaluate_pose", "forward", "largesteps_map",
    "load_pose_sequence", "pose_sequence_from_json", "predict_deformation", "predict_illumination",
    "save_pose_sequence", "skin_vertices", "skinning_matrices", "triangle_frames", "uniform_laplacian",
]
