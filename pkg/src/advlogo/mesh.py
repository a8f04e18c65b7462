"""Triangle meshes, OBJ I/O, logo submeshes and the procedural person proxy."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError, MeshIndexError, ParseError, UnsupportedFaceError

CUBE_SIZE = 4
DEFAULT_GRAY = 0.5


@dataclass
class TextureCube:
    """q x q x q grid of RGB samples attached to one face."""

    colors: np.ndarray

    def __post_init__(self):
        self.colors = np.asarray(self.colors, dtype=np.float64)
        q = self.colors.shape[0]
        if self.colors.shape != (q, q, q, 3):
            raise DomainError(f"texture cube must be q*q*q*3, got {self.colors.shape}")
        if self.colors.min() < 0.0 or self.colors.max() > 1.0:
            raise DomainError("texture cube channels must lie in [0, 1]")

    @classmethod
    def filled(cls, rgb, q=CUBE_SIZE):
        return cls(np.broadcast_to(np.asarray(rgb, dtype=np.float64), (q, q, q, 3)).copy())

    def centroid_color(self):
        return cube_centroid_colors(self.colors[None])[0]


def cube_centroid_colors(cubes: np.ndarray) -> np.ndarray:
    """Trilinear sample at the cube centre for a stack of cubes [F,q,q,q,3]."""
    q = cubes.shape[1]
    lo, hi = (q - 1) // 2, q // 2 + 1
    return cubes[:, lo:hi, lo:hi, lo:hi].mean(axis=(1, 2, 3))


def cube_centroid_weights(q=CUBE_SIZE) -> np.ndarray:
    """Weights of each cube sample in the centroid colour (sums to one)."""
    w = np.zeros((q, q, q))
    lo, hi = (q - 1) // 2, q // 2 + 1
    w[lo:hi, lo:hi, lo:hi] = 1.0
    return w / w.sum()


@dataclass
class TriMesh:
    vertices: np.ndarray
    faces: np.ndarray
    face_textures: np.ndarray = None
    name: str = "mesh"

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(self.faces) == 0:
            raise DomainError("a mesh needs at least one face")
        if self.faces.min() < 0 or self.faces.max() >= len(self.vertices):
            raise MeshIndexError("face index outside vertex range")
        if self.face_textures is None:
            self.face_textures = np.full((len(self.faces), CUBE_SIZE, CUBE_SIZE, CUBE_SIZE, 3),
                                         DEFAULT_GRAY)
        else:
            self.face_textures = np.asarray(self.face_textures, dtype=np.float64)
            if self.face_textures.shape[0] != len(self.faces):
                raise DomainError("one texture cube per face required")

    @property
    def n_faces(self):
        return len(self.faces)

    def cube(self, face_id) -> TextureCube:
        return TextureCube(self.face_textures[face_id])

    def face_colors(self) -> np.ndarray:
        """Per-face colour as seen by the renderer (cube centroid sample)."""
        return cube_centroid_colors(self.face_textures)

    def set_face_colors(self, face_ids, colors):
        colors = np.asarray(colors, dtype=np.float64)
        self.face_textures[np.asarray(face_ids)] = colors[:, None, None, None, :]

    def face_centroids(self, face_ids=None) -> np.ndarray:
        faces = self.faces if face_ids is None else self.faces[np.asarray(face_ids)]
        return self.vertices[faces].mean(axis=1)

    def copy(self):
        return TriMesh(self.vertices.copy(), self.faces.copy(), self.face_textures.copy(), self.name)


def parse_obj(text, name="mesh") -> TriMesh:
    """Read the ``v``/``f`` subset of Wavefront OBJ.

    Faces must be triangles; ``f a/b/c`` forms keep only the vertex index.
    Everything else (normals, uvs, groups, materials) is skipped.
    """
    if isinstance(text, (bytes, bytearray)):
        text = text.decode("utf-8")
    vertices, faces = [], []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        toks = raw.split()
        if not toks or toks[0].startswith("#"):
            continue
        tag = toks[0]
        if tag == "v":
            if len(toks) < 4:
                raise ParseError("vertex needs three coordinates", lineno)
            try:
                vertices.append([float(t) for t in toks[1:4]])
            except ValueError as exc:
                raise ParseError(f"malformed number in {raw.strip()!r}", lineno) from exc
        elif tag == "f":
            refs = toks[1:]
            if len(refs) != 3:
                raise UnsupportedFaceError(f"only triangles are supported, got {len(refs)} vertices", lineno)
            try:
                idx = [int(r.split("/")[0]) for r in refs]
            except ValueError as exc:
                raise ParseError(f"malformed face index in {raw.strip()!r}", lineno) from exc
            for i in idx:
                if i < 1 or i > len(vertices):
                    raise MeshIndexError(f"line {lineno}: vertex index {i} out of range")
            faces.append([i - 1 for i in idx])
    if not faces:
        raise ParseError("no faces found")
    return TriMesh(np.array(vertices), np.array(faces), name=name)


def write_obj(mesh: TriMesh) -> bytes:
    lines = [f"# {mesh.name}"]
    lines += ["v %r %r %r" % tuple(float(c) for c in v) for v in mesh.vertices]
    lines += ["f %d %d %d" % tuple(int(i) + 1 for i in f) for f in mesh.faces]
    return ("\n".join(lines) + "\n").encode("utf-8")


@dataclass
class LogoSubmesh:
    host: TriMesh
    face_ids: np.ndarray
    centroids: np.ndarray
    bbox_min: np.ndarray
    bbox_max: np.ndarray

    def __len__(self):
        return len(self.face_ids)


def extract_logo_submesh(mesh: TriMesh, face_ids: Sequence[int]) -> LogoSubmesh:
    ids = [int(i) for i in face_ids]
    if not ids:
        raise DomainError("logo submesh needs at least one face")
    for i in ids:
        if i < 0 or i >= mesh.n_faces:
            raise MeshIndexError(f"face id {i} out of range for {mesh.n_faces} faces")
    ids = list(dict.fromkeys(ids))
    ids = np.array(ids, dtype=np.int64)
    cents = mesh.face_centroids(ids)
    return LogoSubmesh(mesh, ids, cents, cents.min(axis=0), cents.max(axis=0))


@dataclass
class MeshScene:
    """Meshes trained jointly, each with its own logo submesh."""

    pairs: list = field(default_factory=list)

    def __post_init__(self):
        if not self.pairs:
            raise DomainError("a scene needs at least one (mesh, logo) pair")

    def __iter__(self):
        return iter(self.pairs)

    def __len__(self):
        return len(self.pairs)


def generate_person_proxy(height: float, radius: float, segments: int, rings: int = 1,
                          panel_half_angle: float = 60.0, panel_band=(-0.3, 0.3),
                          name="proxy"):
    """Capped cylinder standing on the y axis, centred at the origin.

    Angle zero points at +z (towards the camera at azimuth 0). Returns the
    mesh and the ids of the side faces forming the front panel: centroid
    azimuth within ``panel_half_angle`` degrees of +z and centroid height
    within ``panel_band`` (fractions of ``height`` around the centre).

    Face count is ``2 * segments * rings + 2 * segments``.
    """
    if not height > 0 or not radius > 0:
        raise DomainError("height and radius must be positive")
    if segments < 8:
        raise DomainError("segments must be >= 8")
    if rings < 1:
        raise DomainError("rings must be >= 1")
    theta = 2.0 * np.pi * np.arange(segments) / segments
    ys = -height / 2 + height * np.arange(rings + 1) / rings
    ring_pts = np.stack([
        np.tile(radius * np.sin(theta), rings + 1),
        np.repeat(ys, segments),
        np.tile(radius * np.cos(theta), rings + 1),
    ], axis=1)
    bottom_c = len(ring_pts)
    top_c = bottom_c + 1
    vertices = np.vstack([ring_pts, [[0.0, -height / 2, 0.0], [0.0, height / 2, 0.0]]])

    def vid(i, j):
        return i * segments + (j % segments)

    faces = []
    for i in range(rings):
        for j in range(segments):
            a, b = vid(i, j), vid(i, j + 1)
            c, d = vid(i + 1, j + 1), vid(i + 1, j)
            faces.append((a, b, c))
            faces.append((a, c, d))
    for j in range(segments):
        faces.append((bottom_c, vid(0, j + 1), vid(0, j)))
    for j in range(segments):
        faces.append((top_c, vid(rings, j), vid(rings, j + 1)))
    mesh = TriMesh(vertices, np.array(faces), name=name)

    n_side = 2 * segments * rings
    cents = mesh.face_centroids(np.arange(n_side))
    ang = np.degrees(np.arctan2(cents[:, 0], cents[:, 2]))
    lo, hi = panel_band
    # rounding guards the mirror-symmetric selection against last-bit noise
    ang = np.round(ang, 9)
    yrel = np.round(cents[:, 1] / height, 9)
    panel = np.nonzero((np.abs(ang) <= panel_half_angle) & (yrel >= lo) & (yrel <= hi))[0]
    if len(panel) == 0:
        raise DomainError("front panel selection is empty; widen the band or add rings")
    return mesh, panel.astype(np.int64)


def proxy_face_count(segments: int, rings: int = 1) -> int:
    return 2 * segments * rings + 2 * segments


def translate(mesh: TriMesh, offset) -> TriMesh:
    out = mesh.copy()
    out.vertices = out.vertices + np.asarray(offset, dtype=np.float64)
    return out
