from .container import from_bytes, load_asset, save_asset, to_bytes
from .synth import SynthSpec, generate_synthetic_asset
from .types import (
    Activation,
    AssetError,
    AvatarAsset,
    ComponentKind,
    InputSpec,
    InvariantViolationError,
    MalformedContainerError,
    MeshComponent,
    MlpLayer,
    MlpWeights,
    OutputSpace,
    Skeleton,
    SplatAttributes,
    UnsupportedVersionError,
)
from .validate import Violation, validate_asset

__all__ = [
    "Activation", "AssetError", "AvatarAsset", "ComponentKind", "InputSpec", "InvariantViolationError",
    "MalformedContainerError", "MeshComponent", "MlpLayer", "MlpWeights", "OutputSpace", "Skeleton",
    "SplatAttributes", "SynthSpec", "UnsupportedVersionError", "Violation", "from_bytes",
    "generate_synthetic_asset", "load_asset", "save_asset", "to_bytes", "validate_asset",
]
