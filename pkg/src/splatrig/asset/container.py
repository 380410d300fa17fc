"""Reader and writer for the sectioned little-endian ``.hra`` container."""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Union

import numpy as np

from .. import codec
from .types import (
    FORMAT_VERSION,
    Activation,
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

MAGIC = b"HRMA"


class _Reader:
    def __init__(self, data, where: str):
        self.mv = memoryview(data)
        self.pos = 0
        self.where = where

    def remaining(self) -> int:
        return len(self.mv) - self.pos

    def need(self, size: int):
        if size < 0 or self.pos + size > len(self.mv):
            raise MalformedContainerError(f"{self.where}: truncated at byte {self.pos} (needs {size} more)")

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        self.need(size)
        out = struct.unpack_from(fmt, self.mv, self.pos)
        self.pos += size
        return out

    def array(self, dtype, shape):
        dtype = np.dtype(dtype)
        count = int(np.prod(shape))
        self.need(count * dtype.itemsize)
        arr = np.frombuffer(self.mv, dtype=dtype, count=count, offset=self.pos).reshape(shape)
        self.pos += count * dtype.itemsize
        return arr.astype(dtype.newbyteorder("="))

    def bytes(self, size: int) -> bytes:
        self.need(size)
        out = bytes(self.mv[self.pos:self.pos + size])
        self.pos += size
        return out

    def done(self):
        if self.remaining():
            raise MalformedContainerError(f"{self.where}: {self.remaining()} trailing bytes")


def _f4(a) -> bytes:
    return np.ascontiguousarray(a, dtype="<f4").tobytes()


# ---------------------------------------------------------------------------
# section encoders


def _skel_bytes(sk: Skeleton) -> bytes:
    out = [struct.pack("<I", sk.joint_count)]
    for j, name in enumerate(sk.names):
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<i", int(sk.parents[j])))
        out.append(_f4(sk.rest_rotation[j]))
        out.append(_f4(sk.rest_translation[j]))
        out.append(_f4(sk.inverse_bind[j]))
    return b"".join(out)


def _mesh_bytes(c: MeshComponent) -> bytes:
    return b"".join([
        struct.pack("<BBII", int(c.kind), int(bool(c.closed)), c.vertex_count, c.triangle_count),
        _f4(c.vertices),
        np.ascontiguousarray(c.triangles, dtype="<u4").tobytes(),
        np.ascontiguousarray(c.skin_joints, dtype="<u2").tobytes(),
        _f4(c.skin_weights),
        _f4(c.sphere_center),
        _f4([c.sphere_radius]),
    ])


def _splt_bytes(s: SplatAttributes) -> bytes:
    return b"".join([
        struct.pack("<IB", len(s), s.sh_degree),
        np.ascontiguousarray(s.t, dtype="<u4").tobytes(),
        _f4(s.u), _f4(s.v), _f4(s.w),
        _f4(s.rotation), _f4(s.log_scale), _f4(s.opacity), _f4(s.sh),
        np.ascontiguousarray(s.label, dtype="u1").tobytes(),
        np.ascontiguousarray(s.surface2d, dtype="u1").tobytes(),
    ])


def _net_bytes(net: MlpWeights) -> bytes:
    out = [struct.pack("<BBBI", int(net.activation), int(net.input_spec), int(net.output_space), len(net.layers))]
    for layer in net.layers:
        out.append(struct.pack("<II", layer.in_dim, layer.out_dim))
        out.append(_f4(layer.weight))
        out.append(_f4(layer.bias))
    return b"".join(out)


def _section(tag: bytes, payload: bytes) -> bytes:
    return tag + struct.pack("<Q", len(payload)) + payload


def to_bytes(asset: AvatarAsset) -> bytes:
    parts = [MAGIC, struct.pack("<I", asset.version)]
    parts.append(_section(b"SKEL", _skel_bytes(asset.skeleton)))
    for comp in asset.components:
        parts.append(_section(b"MESH", _mesh_bytes(comp)))
    offs = np.asarray(asset.static_offsets)
    parts.append(_section(b"OFFS", struct.pack("<I", len(offs)) + _f4(offs)))
    if isinstance(asset.splats, SplatAttributes):
        parts.append(_section(b"SPLT", _splt_bytes(asset.splats)))
    else:
        parts.append(_section(b"SPLC", codec.to_bytes(asset.splats)))
    parts.append(_section(b"NETD", _net_bytes(asset.deform_net)))
    parts.append(_section(b"NETI", _net_bytes(asset.illum_net)))
    parts.append(_section(b"META", struct.pack("<fQB", asset.laplacian_lambda, asset.seed, asset.sh_degree)))
    return b"".join(parts)


def save_asset(asset: AvatarAsset, path: Union[str, Path]) -> None:
    Path(path).write_bytes(to_bytes(asset))


# ---------------------------------------------------------------------------
# section decoders


def _read_skel(r: _Reader) -> Skeleton:
    (count,) = r.unpack("<I")
    names, parents, rots, trans, ib = [], [], [], [], []
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        try:
            names.append(r.bytes(nlen).decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise MalformedContainerError(f"SKEL: bad joint name: {exc}") from None
        parents.append(r.unpack("<i")[0])
        rots.append(r.array("<f4", (4,)))
        trans.append(r.array("<f4", (3,)))
        ib.append(r.array("<f4", (4, 4)))
    r.done()
    return Skeleton(
        names=names,
        parents=np.asarray(parents, dtype=np.int32),
        rest_rotation=np.asarray(rots, dtype=np.float32).reshape(count, 4),
        rest_translation=np.asarray(trans, dtype=np.float32).reshape(count, 3),
        inverse_bind=np.asarray(ib, dtype=np.float32).reshape(count, 4, 4),
    )


def _read_mesh(r: _Reader) -> MeshComponent:
    kind, closed, nv, nt = r.unpack("<BBII")
    try:
        kind = ComponentKind(kind)
    except ValueError:
        raise MalformedContainerError(f"MESH: unknown component kind {kind}") from None
    comp = MeshComponent(
        kind=kind,
        vertices=r.array("<f4", (nv, 3)),
        triangles=r.array("<u4", (nt, 3)),
        skin_joints=r.array("<u2", (nv, 4)),
        skin_weights=r.array("<f4", (nv, 4)),
        closed=bool(closed),
        sphere_center=r.array("<f4", (3,)),
        sphere_radius=float(r.array("<f4", (1,))[0]),
    )
    r.done()
    return comp


def _read_splt(r: _Reader) -> SplatAttributes:
    n, degree = r.unpack("<IB")
    if degree > 3:
        raise MalformedContainerError(f"SPLT: SH degree {degree} unsupported")
    k = (degree + 1) ** 2
    s = SplatAttributes(
        t=r.array("<u4", (n,)),
        u=r.array("<f4", (n,)),
        v=r.array("<f4", (n,)),
        w=r.array("<f4", (n,)),
        rotation=r.array("<f4", (n, 4)),
        log_scale=r.array("<f4", (n, 3)),
        opacity=r.array("<f4", (n,)),
        sh=r.array("<f4", (n, k, 3)),
        label=r.array("u1", (n,)),
        surface2d=r.array("u1", (n,)).astype(bool),
    )
    r.done()
    return s


def _read_net(r: _Reader, tag: str) -> MlpWeights:
    act, spec, space, nlayers = r.unpack("<BBBI")
    try:
        act, spec, space = Activation(act), InputSpec(spec), OutputSpace(space)
    except ValueError:
        raise MalformedContainerError(f"{tag}: bad network enum") from None
    layers = []
    for _ in range(nlayers):
        i, o = r.unpack("<II")
        layers.append(MlpLayer(weight=r.array("<f4", (i, o)), bias=r.array("<f4", (o,))))
    r.done()
    return MlpWeights(layers=layers, activation=act, input_spec=spec, output_space=space)


def from_bytes(data: bytes, validate: bool = True) -> AvatarAsset:
    r = _Reader(data, "header")
    if r.remaining() < 8 or r.bytes(4) != MAGIC:
        raise MalformedContainerError("not an .hra file (bad magic)")
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported .hra version {version}")

    sections = []
    while r.remaining():
        tag = r.bytes(4).decode("ascii", errors="replace")
        (length,) = r.unpack("<Q")
        sections.append((tag, r.bytes(length)))

    order = [tag for tag, _ in sections]
    mesh_count = order.count("MESH")
    splat_tag = "SPLC" if "SPLC" in order else "SPLT"
    expected = ["SKEL"] + ["MESH"] * mesh_count + ["OFFS", splat_tag, "NETD", "NETI", "META"]
    if mesh_count == 0 or order != expected:
        raise MalformedContainerError(f"unexpected section order {order}")

    payload = dict()
    meshes = []
    for tag, body in sections:
        if tag == "MESH":
            meshes.append(_read_mesh(_Reader(body, "MESH")))
        else:
            payload[tag] = body

    skeleton = _read_skel(_Reader(payload["SKEL"], "SKEL"))
    r_offs = _Reader(payload["OFFS"], "OFFS")
    (nv,) = r_offs.unpack("<I")
    static_offsets = r_offs.array("<f4", (nv, 3))
    r_offs.done()
    if splat_tag == "SPLT":
        splats = _read_splt(_Reader(payload["SPLT"], "SPLT"))
    else:
        try:
            splats = codec.from_bytes(payload["SPLC"])
        except codec.CodecError as exc:
            raise MalformedContainerError(f"SPLC: {exc}") from None
    deform = _read_net(_Reader(payload["NETD"], "NETD"), "NETD")
    illum = _read_net(_Reader(payload["NETI"], "NETI"), "NETI")
    r_meta = _Reader(payload["META"], "META")
    lam, seed, degree = r_meta.unpack("<fQB")
    r_meta.done()

    asset = AvatarAsset(
        skeleton=skeleton, components=meshes, splats=splats, static_offsets=static_offsets,
        deform_net=deform, illum_net=illum, laplacian_lambda=float(np.float32(lam)),
        seed=int(seed), sh_degree=int(degree), version=version,
    )
    if validate:
        from .validate import validate_asset

        report = validate_asset(asset)
        if report:
            raise InvariantViolationError(report[0])
    return asset


def load_asset(path: Union[str, Path], validate: bool = True) -> AvatarAsset:
    return from_bytes(Path(path).read_bytes(), validate=validate)
