"""Plain-file formats: PFM depth, KITTI pose lists, PGM/PPM images, intrinsics and scenes."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .errors import ParseError
from .geometry import CameraIntrinsics, Se3Pose, orthonormalize
from .synth import TEXTURES, Plane, SceneSpec, pose_from_params

POSE_ORTHO_TOL = 1e-3


# ---------------------------------------------------------------- PFM

def _read_header_line(data: bytes, pos: int, lineno: int, what: str) -> tuple[str, int]:
    end = data.find(b"\n", pos)
    if end < 0:
        raise ParseError(f"PFM line {lineno} (offset {pos}): missing {what}")
    try:
        return data[pos:end].decode("ascii").strip(), end + 1
    except UnicodeDecodeError:
        raise ParseError(f"PFM line {lineno} (offset {pos}): {what} is not ASCII") from None


def parse_pfm(data: bytes) -> np.ndarray:
    """Decode a single-channel PFM; rows are stored bottom-to-top."""
    magic, pos = _read_header_line(data, 0, 1, "magic")
    if magic == "PF":
        raise ParseError("PFM line 1 (offset 0): 3-channel 'PF' file where a single-channel map was expected")
    if magic != "Pf":
        raise ParseError(f"PFM line 1 (offset 0): bad magic {magic!r}")
    start = pos
    dims, pos = _read_header_line(data, pos, 2, "dimensions")
    parts = dims.split()
    if len(parts) != 2 or not all(p.isdigit() for p in parts):
        raise ParseError(f"PFM line 2 (offset {start}): expected 'width height', got {dims!r}")
    width, height = int(parts[0]), int(parts[1])
    if width == 0 or height == 0:
        raise ParseError(f"PFM line 2 (offset {start}): empty image {width}x{height}")
    start = pos
    scale_text, pos = _read_header_line(data, pos, 3, "scale")
    try:
        scale = float(scale_text)
    except ValueError:
        raise ParseError(f"PFM line 3 (offset {start}): bad scale {scale_text!r}") from None
    if scale == 0 or not np.isfinite(scale):
        raise ParseError(f"PFM line 3 (offset {start}): scale must be finite and non-zero")
    dtype = "<f4" if scale < 0 else ">f4"
    need = 4 * width * height
    if len(data) - pos != need:
        raise ParseError(f"PFM offset {pos}: expected {need} bytes of pixel data, found {len(data) - pos}")
    values = np.frombuffer(data, dtype=dtype, count=width * height, offset=pos)
    return np.flipud(values.reshape(height, width)).astype(np.float32)


def encode_pfm(grid: np.ndarray) -> bytes:
    grid = np.asarray(grid)
    if grid.ndim != 2:
        raise ParseError(f"PFM writer takes a single-channel 2-D map, got shape {grid.shape}")
    h, w = grid.shape
    header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    return header + np.flipud(grid).astype("<f4").tobytes()


def read_pfm(path) -> np.ndarray:
    return parse_pfm(Path(path).read_bytes())


def write_pfm(path, grid: np.ndarray) -> None:
    Path(path).write_bytes(encode_pfm(grid))


# ---------------------------------------------------------------- poses

def format_pose(pose: Se3Pose) -> str:
    m = pose.matrix[:3]
    return " ".join(f"{v:.17g}" for v in m.ravel())


def parse_pose_line(line: str, lineno: int = 1) -> Se3Pose:
    tokens = line.split()
    if len(tokens) != 12:
        raise ParseError(f"pose line {lineno}: expected 12 numbers, found {len(tokens)}")
    try:
        m = np.array([float(t) for t in tokens]).reshape(3, 4)
    except ValueError as exc:
        raise ParseError(f"pose line {lineno}: {exc}") from None
    if not np.all(np.isfinite(m)):
        raise ParseError(f"pose line {lineno}: non-finite value")
    rot = m[:, :3]
    drift = np.abs(rot.T @ rot - np.eye(3)).max()
    if drift > POSE_ORTHO_TOL or np.linalg.det(rot) <= 0:
        raise ParseError(f"pose line {lineno}: rotation block is not a rotation (tolerance {POSE_ORTHO_TOL:g})")
    if drift > 1e-12 or abs(np.linalg.det(rot) - 1) > 1e-12:
        rot = orthonormalize(rot)  # printed rotations are rarely exact; exact ones stay bit-identical
    return Se3Pose(rot, m[:, 3].copy())


def parse_poses(text: str) -> list[Se3Pose]:
    """One pose per non-blank line: row-major ``[R | t]``."""
    poses = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if line.strip():
            poses.append(parse_pose_line(line, lineno))
    return poses


def read_poses(path) -> list[Se3Pose]:
    return parse_poses(Path(path).read_text())


def write_poses(path, poses) -> None:
    Path(path).write_text("".join(format_pose(p) + "\n" for p in poses))


# ---------------------------------------------------------------- PGM / PPM

_NETPBM = {"P2": (1, False), "P3": (3, False), "P5": (1, True), "P6": (3, True)}


def _netpbm_tokens(data: bytes, count: int):
    """First ``count`` header tokens (skipping comments) and the offset after them."""
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise ParseError(f"image header truncated at offset {pos}")
        if data[pos:pos + 1] == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append((data[start:pos].decode("ascii", "replace"), start))
    return tokens, pos


def parse_netpbm(data: bytes) -> np.ndarray:
    """Decode PGM/PPM (ASCII or binary) to floats in [0, 1]."""
    tokens, pos = _netpbm_tokens(data, 4)
    magic = tokens[0][0]
    if magic not in _NETPBM:
        raise ParseError(f"image offset 0: unsupported magic {magic!r} (expected P2, P3, P5 or P6)")
    channels, binary = _NETPBM[magic]
    fields = []
    for text, off in tokens[1:]:
        if not text.isdigit():
            raise ParseError(f"image offset {off}: expected a positive integer, got {text!r}")
        fields.append(int(text))
    width, height, maxval = fields
    if width == 0 or height == 0 or not 0 < maxval < 65536:
        raise ParseError(f"image header: bad size {width}x{height} or maxval {maxval}")
    count = width * height * channels
    if binary:
        pos += 1  # single whitespace byte before the raster
        dtype = ">u2" if maxval > 255 else "u1"
        need = count * np.dtype(dtype).itemsize
        if len(data) - pos < need:
            raise ParseError(f"image offset {pos}: raster needs {need} bytes, found {len(data) - pos}")
        raw = np.frombuffer(data, dtype=dtype, count=count, offset=pos).astype(np.float64)
    else:
        body = data[pos:].split()
        if len(body) < count:
            raise ParseError(f"image offset {pos}: raster needs {count} values, found {len(body)}")
        try:
            raw = np.array([int(v) for v in body[:count]], dtype=np.float64)
        except ValueError:
            raise ParseError(f"image offset {pos}: non-integer sample in ASCII raster") from None
    if raw.max(initial=0) > maxval:
        raise ParseError(f"image: sample exceeds maxval {maxval}")
    shape = (height, width) if channels == 1 else (height, width, 3)
    return raw.reshape(shape) / maxval


def encode_pgm(image: np.ndarray, maxval: int = 65535) -> bytes:
    """Binary PGM of a single-channel image with values in [0, 1]."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ParseError(f"PGM writer takes a 2-D image, got shape {image.shape}")
    q = np.rint(np.clip(image, 0.0, 1.0) * maxval)
    dtype = ">u2" if maxval > 255 else "u1"
    h, w = image.shape
    return f"P5\n{w} {h}\n{maxval}\n".encode("ascii") + q.astype(dtype).tobytes()


def read_image(path) -> np.ndarray:
    return parse_netpbm(Path(path).read_bytes())


def write_pgm(path, image: np.ndarray, maxval: int = 65535) -> None:
    Path(path).write_bytes(encode_pgm(image, maxval))


# ---------------------------------------------------------------- intrinsics

def parse_intrinsics(text: str) -> CameraIntrinsics:
    """``fx fy cx cy width height``, whitespace-separated, comments after ``#``."""
    tokens = re.sub(r"#[^\n]*", "", text).split()
    if len(tokens) != 6:
        raise ParseError(f"intrinsics: expected 6 values 'fx fy cx cy width height', found {len(tokens)}")
    try:
        fx, fy, cx, cy = (float(t) for t in tokens[:4])
        width, height = int(tokens[4]), int(tokens[5])
    except ValueError as exc:
        raise ParseError(f"intrinsics: {exc}") from None
    return CameraIntrinsics(fx, fy, cx, cy, width, height)


def format_intrinsics(K: CameraIntrinsics) -> str:
    return f"{K.fx!r} {K.fy!r} {K.cx!r} {K.cy!r} {K.width} {K.height}\n"


def read_intrinsics(path) -> CameraIntrinsics:
    return parse_intrinsics(Path(path).read_text())


# ---------------------------------------------------------------- scene files

def _key_values(text: str, source: str):
    """Yield ``(lineno, key, value)`` from ``key = value`` lines; ``#`` starts a comment."""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"{source} line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ParseError(f"{source} line {lineno}: empty key")
        yield lineno, key, value


def _floats(value: str, n: int, where: str) -> list[float]:
    parts = value.split()
    if len(parts) != n:
        raise ParseError(f"{where}: expected {n} numbers, found {len(parts)}")
    try:
        return [float(p) for p in parts]
    except ValueError as exc:
        raise ParseError(f"{where}: {exc}") from None


class SceneFile:
    """A renderable two-view setup: planes, camera and the source pose."""

    def __init__(self, scene: SceneSpec, K: CameraIntrinsics, rotation_deg, translation, supersample: int = 3):
        self.scene = scene
        self.K = K
        self.rotation_deg = tuple(float(v) for v in rotation_deg)
        self.translation = tuple(float(v) for v in translation)
        self.supersample = int(supersample)

    @property
    def pose(self) -> Se3Pose:
        return pose_from_params(self.rotation_deg, self.translation)

    def dumps(self) -> str:
        K = self.K
        lines = [
            f"width = {K.width}", f"height = {K.height}",
            f"fx = {K.fx!r}", f"fy = {K.fy!r}", f"cx = {K.cx!r}", f"cy = {K.cy!r}",
            "rotation_deg = " + " ".join(repr(v) for v in self.rotation_deg),
            "translation = " + " ".join(repr(v) for v in self.translation),
            f"supersample = {self.supersample}",
            "background_depth = " + ("none" if self.scene.background_depth is None
                                     else repr(float(self.scene.background_depth))),
        ]
        for p in self.scene.planes:
            n = " ".join(repr(float(v)) for v in p.normal)
            lines.append(f"plane = {n} {float(p.offset)!r} {p.texture} {float(p.scale)!r} {float(p.angle_deg)!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "SceneFile":
        single: dict[str, tuple[int, str]] = {}
        planes = []
        for lineno, key, value in _key_values(text, "scene"):
            where = f"scene line {lineno}"
            if key == "plane":
                parts = value.split()
                if len(parts) not in (6, 7):
                    raise ParseError(f"{where}: plane needs 'nx ny nz offset texture scale [angle_deg]'")
                nums = _floats(" ".join(parts[:4]), 4, where)
                if parts[4] not in TEXTURES:
                    raise ParseError(f"{where}: unknown texture {parts[4]!r} (one of {', '.join(TEXTURES)})")
                extra = _floats(" ".join(parts[5:]), len(parts) - 5, where)
                n = np.array(nums[:3])
                norm = np.linalg.norm(n)
                if not norm > 0:
                    raise ParseError(f"{where}: zero plane normal")
                try:
                    planes.append(Plane(tuple(n / norm), nums[3], parts[4], *extra))
                except ValueError as exc:
                    raise ParseError(f"{where}: {exc}") from None
            elif key in _SCENE_KEYS:
                if key in single:
                    raise ParseError(f"{where}: duplicate key {key!r}")
                single[key] = (lineno, value)
            else:
                raise ParseError(f"{where}: unknown key {key!r}")
        missing = [k for k in ("width", "height", "fx", "fy", "cx", "cy") if k not in single]
        if missing:
            raise ParseError(f"scene: missing keys {', '.join(missing)}")
        if not planes:
            raise ParseError("scene: no planes")

        def num(key, default=None, kind=float):
            if key not in single:
                return default
            lineno, value = single[key]
            try:
                return kind(value)
            except ValueError:
                raise ParseError(f"scene line {lineno}: {key} must be {kind.__name__}, got {value!r}") from None

        def vec(key):
            if key not in single:
                return (0.0, 0.0, 0.0)
            lineno, value = single[key]
            return tuple(_floats(value, 3, f"scene line {lineno}"))

        background = None
        if "background_depth" in single and single["background_depth"][1].lower() != "none":
            background = num("background_depth")
        try:
            K = CameraIntrinsics(num("fx"), num("fy"), num("cx"), num("cy"), num("width", kind=int),
                                 num("height", kind=int))
        except ValueError as exc:
            raise ParseError(f"scene: {exc}") from None
        return cls(SceneSpec(tuple(planes), background), K, vec("rotation_deg"), vec("translation"),
                   num("supersample", 3, int))


_SCENE_KEYS = ("width", "height", "fx", "fy", "cx", "cy", "rotation_deg", "translation",
               "supersample", "background_depth")


def read_scene(path) -> SceneFile:
    return SceneFile.loads(Path(path).read_text())
