"""Avatar data model: skeleton, mesh components, splat attributes, MLP weights."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Union

import numpy as np

FORMAT_VERSION = 1


class AssetError(Exception):
    """Base class for asset loading and validation failures."""


class MalformedContainerError(AssetError):
    pass


class UnsupportedVersionError(AssetError):
    pass


class InvariantViolationError(AssetError):
    def __init__(self, violation):
        super().__init__(str(violation))
        self.violation = violation


class ComponentKind(IntEnum):
    BODY = 0
    GARMENT = 1
    HAIR = 2


class Activation(IntEnum):
    RELU = 0
    TANH = 1


class InputSpec(IntEnum):
    POSE_AND_CANONICAL_VERTEX = 0
    POSE_ONLY = 1


class OutputSpace(IntEnum):
    LARGESTEPS_OFFSET = 0
    INTENSITY = 1


@dataclass
class Skeleton:
    names: list[str]
    parents: np.ndarray  # (J,) int32, -1 for the root
    rest_rotation: np.ndarray  # (J, 4) float32 xyzw, local to parent
    rest_translation: np.ndarray  # (J, 3) float32, local to parent
    inverse_bind: np.ndarray  # (J, 4, 4) float32

    @property
    def joint_count(self) -> int:
        return len(self.names)


@dataclass
class MeshComponent:
    kind: ComponentKind
    vertices: np.ndarray  # (N, 3) float32, template positions V_T
    triangles: np.ndarray  # (M, 3) uint32, component-local indices
    skin_joints: np.ndarray  # (N, 4) uint16
    skin_weights: np.ndarray  # (N, 4) float32
    closed: bool
    sphere_center: np.ndarray  # (3,) float32
    sphere_radius: float

    @property
    def vertex_count(self) -> int:
        return len(self.vertices)

    @property
    def triangle_count(self) -> int:
        return len(self.triangles)


@dataclass
class SplatAttributes:
    """Structure-of-arrays splat set bound to mesh triangles.

    ``log_scale`` holds natural-log scales in the parent triangle's rest
    frame (tangent, bitangent, normal). Surface splats carry ``-inf`` on the
    normal axis, i.e. a scale of exactly zero.
    """

    t: np.ndarray  # (n,) uint32 global triangle id
    u: np.ndarray  # (n,) float32
    v: np.ndarray  # (n,) float32
    w: np.ndarray  # (n,) float32 normal offset, meters
    rotation: np.ndarray  # (n, 4) float32 xyzw
    log_scale: np.ndarray  # (n, 3) float32
    opacity: np.ndarray  # (n,) float32
    sh: np.ndarray  # (n, (D+1)^2, 3) float32
    label: np.ndarray  # (n,) uint8
    surface2d: np.ndarray  # (n,) bool

    def __len__(self) -> int:
        return len(self.t)

    @property
    def sh_degree(self) -> int:
        return int(round(np.sqrt(self.sh.shape[1]))) - 1

    def take(self, index) -> "SplatAttributes":
        return SplatAttributes(**{name: getattr(self, name)[index] for name in SPLAT_FIELDS})

    def scale(self) -> np.ndarray:
        with np.errstate(under="ignore"):
            return np.exp(self.log_scale.astype(np.float64))


SPLAT_FIELDS = ("t", "u", "v", "w", "rotation", "log_scale", "opacity", "sh", "label", "surface2d")


@dataclass
class MlpLayer:
    weight: np.ndarray  # (in_dim, out_dim) float32
    bias: np.ndarray  # (out_dim,) float32

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]


@dataclass
class MlpWeights:
    layers: list[MlpLayer]
    activation: Activation
    input_spec: InputSpec
    output_space: OutputSpace

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim


@dataclass
class AvatarAsset:
    skeleton: Skeleton
    components: list[MeshComponent]
    splats: Union[SplatAttributes, "ChunkedSplatBuffer"]  # noqa: F821
    static_offsets: np.ndarray  # (V, 3) float32, already in Euclidean space
    deform_net: MlpWeights
    illum_net: MlpWeights
    laplacian_lambda: float = 10.0
    seed: int = 0
    sh_degree: int = 3
    version: int = FORMAT_VERSION
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def vertex_count(self) -> int:
        return sum(c.vertex_count for c in self.components)

    @property
    def triangle_count(self) -> int:
        return sum(c.triangle_count for c in self.components)

    @property
    def splat_count(self) -> int:
        return len(self.splats)

    @property
    def compressed(self) -> bool:
        return not isinstance(self.splats, SplatAttributes)

    def vertex_offsets(self) -> np.ndarray:
        """Start index of each component in the concatenated vertex array."""
        return np.concatenate([[0], np.cumsum([c.vertex_count for c in self.components])]).astype(np.int64)

    def triangle_offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum([c.triangle_count for c in self.components])]).astype(np.int64)

    def template_vertices(self) -> np.ndarray:
        return self._cached("template", lambda: np.concatenate([c.vertices for c in self.components]).astype(np.float64))

    def triangles(self) -> np.ndarray:
        """Global (M, 3) int64 triangle array with vertex ids offset per component."""
        def build():
            offs = self.vertex_offsets()
            return np.concatenate([c.triangles.astype(np.int64) + offs[i] for i, c in enumerate(self.components)])
        return self._cached("triangles", build)

    def triangle_component(self) -> np.ndarray:
        def build():
            return np.concatenate([np.full(c.triangle_count, i, dtype=np.int32) for i, c in enumerate(self.components)])
        return self._cached("tri_component", build)

    def vertex_component(self) -> np.ndarray:
        def build():
            return np.concatenate([np.full(c.vertex_count, i, dtype=np.int32) for i, c in enumerate(self.components)])
        return self._cached("vert_component", build)

    def skin(self) -> tuple[np.ndarray, np.ndarray]:
        def build():
            joints = np.concatenate([c.skin_joints for c in self.components]).astype(np.int64)
            weights = np.concatenate([c.skin_weights for c in self.components]).astype(np.float64)
            return joints, weights
        return self._cached("skin", build)

    def _cached(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]


def raw_bytes_per_splat(sh_degree: int) -> int:
    """float32 SoA baseline: u, v, w, rotation(4), scale(3), opacity, SH."""
    return 4 * (11 + 3 * (sh_degree + 1) ** 2)


def sh_coeff_count(sh_degree: int) -> int:
    return (sh_degree + 1) ** 2

