"""File formats: guide images, label maps, score maps, parameter bundles and manifests.

Binary formats are little-endian with 32-bit floats on disk (64-bit in
memory):

* score map: ``b"SCM1"``, ``u32`` height, width, channels, then
  ``H*W*C`` ``f32`` values, row-major with channels innermost;
* parameter bundle: ``b"PRM1"``, ``u32`` version, ``u32`` entry count, then
  per entry ``u16`` name length, UTF-8 name, ``u32`` ndim, ``u32`` dims and
  the ``f32`` payload.

Images are 8-bit PNG (through Pillow) or binary PPM/PGM; label maps are 8-bit
PGM with 255 marking ignored pixels.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import guided_filter as gf

__all__ = [
    "FormatError",
    "MagicMismatch",
    "TruncatedPayload",
    "ShapeMismatch",
    "UnknownComponent",
    "ImageFormatError",
    "Sample",
    "ManifestEntry",
    "KNOWN_PARAMS",
    "load_image",
    "save_image",
    "load_labels",
    "save_labels",
    "load_score_map",
    "save_score_map",
    "load_bundle",
    "save_bundle",
    "load_manifest",
    "load_dataset",
    "write_dataset",
    "filter_config_entry",
    "filter_config_from_entry",
]

SCORE_MAGIC = b"SCM1"
BUNDLE_MAGIC = b"PRM1"
BUNDLE_VERSION = 1
PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"

# every name a parameter bundle may hold
KNOWN_PARAMS = (
    "context.net.w1", "context.net.b1", "context.net.w2", "context.net.b2",
    "context.mu_g", "context.global.scale", "context.global.bias",
    "guidance.mu", "guidance.lambda", "guidance.filter",
)


class FormatError(ValueError):
    """Base class for malformed files; ``code`` identifies the failure kind."""

    code = "format"


class MagicMismatch(FormatError):
    code = "magic mismatch"


class TruncatedPayload(FormatError):
    code = "truncated payload"


class ShapeMismatch(FormatError):
    code = "shape mismatch"


class UnknownComponent(FormatError):
    code = "unknown component"


class ImageFormatError(FormatError):
    code = "image format"


# -- images ------------------------------------------------------------------

def _pnm_header(data: bytes, fields: int) -> tuple[list[int], int]:
    """Parse ``fields`` integers after the 2-byte magic; returns them and the payload offset."""
    pos = 2
    values = []
    while len(values) < fields:
        while pos < len(data) and data[pos] in b" \t\r\n":
            pos += 1
        if pos < len(data) and data[pos] == ord("#"):
            while pos < len(data) and data[pos] not in b"\r\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and data[pos] in b"0123456789":
            pos += 1
        if start == pos:
            raise ImageFormatError(f"bad PNM header: expected an integer at byte offset {start}")
        values.append(int(data[start:pos]))
    if pos >= len(data) or data[pos] not in b" \t\r\n":
        raise ImageFormatError(f"bad PNM header: expected whitespace at byte offset {pos}")
    return values, pos + 1


def _read_pnm(data: bytes) -> np.ndarray:
    magic = data[:2]
    if magic not in (b"P5", b"P6"):
        raise ImageFormatError(f"unsupported PNM type {magic!r} at byte offset 0")
    channels = 3 if magic == b"P6" else 1
    (width, height, maxval), offset = _pnm_header(data, 3)
    if width < 1 or height < 1:
        raise ImageFormatError(f"bad PNM dimensions {width}x{height}")
    if maxval != 255:
        raise ImageFormatError(f"only 8-bit PNM (maxval 255) is supported, got {maxval}")
    size = width * height * channels
    if len(data) - offset < size:
        raise TruncatedPayload(
            f"PNM payload truncated: need {size} bytes from offset {offset}, have {len(data) - offset}")
    return np.frombuffer(data, np.uint8, size, offset).reshape(height, width, channels)


def _read_bytes_image(path) -> np.ndarray:
    """8-bit ``(H, W, C)`` array from a PNG or binary PNM file."""
    data = Path(path).read_bytes()
    if data[:8] == PNG_SIGNATURE:
        try:
            with Image.open(path) as im:
                im.load()
                if im.mode in ("L", "RGB"):
                    arr = np.asarray(im)
                elif im.mode in ("P", "RGBA", "LA"):
                    arr = np.asarray(im.convert("RGB"))
                else:
                    raise ImageFormatError(f"unsupported PNG mode {im.mode}")
        except (OSError, SyntaxError) as exc:
            raise ImageFormatError(f"corrupt PNG: {exc}") from exc
        return arr[..., None] if arr.ndim == 2 else arr
    if data[:2] in (b"P5", b"P6"):
        return _read_pnm(data)
    raise ImageFormatError(f"unrecognised image format {data[:8]!r} at byte offset 0")


def load_image(path) -> np.ndarray:
    """``(H, W, 3)`` float64 guide image in [0, 1]; gray images are replicated to 3 channels."""
    arr = _read_bytes_image(path)
    if arr.shape[2] == 1:
        arr = np.repeat(arr, 3, axis=2)
    return arr.astype(np.float64) / 255.0


def _to_uint8(image) -> np.ndarray:
    arr = np.asarray(image)
    if arr.dtype == np.uint8:
        return arr
    arr = np.asarray(arr, dtype=np.float64)
    if not np.isfinite(arr).all():
        raise ValueError("image contains non-finite values")
    return np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)


def save_image(path, image) -> None:
    """Write an RGB image (floats in [0, 1] or uint8) as PNG or binary PPM, by extension."""
    arr = _to_uint8(image)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[..., 0]
    suffix = Path(path).suffix.lower()
    if suffix == ".png":
        Image.fromarray(arr).save(path, format="PNG")
    elif suffix in (".ppm", ".pgm", ".pnm"):
        if arr.ndim == 2:
            header = f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode()
        else:
            header = f"P6\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode()
        Path(path).write_bytes(header + np.ascontiguousarray(arr).tobytes())
    else:
        raise ValueError(f"unsupported image extension {suffix!r} (use .png or .ppm)")


def load_labels(path) -> np.ndarray:
    """``(H, W)`` uint8 label map from an 8-bit PGM (or single-channel PNG); 255 = ignore."""
    arr = _read_bytes_image(path)
    if arr.shape[2] != 1:
        raise ImageFormatError("label maps must be single-channel")
    return arr[..., 0].copy()


def save_labels(path, labels) -> None:
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError("label map must be 2-D")
    if labels.min(initial=0) < 0 or labels.max(initial=0) > 255:
        raise ValueError("labels must fit in 8 bits")
    lab = labels.astype(np.uint8)
    header = f"P5\n{lab.shape[1]} {lab.shape[0]}\n255\n".encode()
    Path(path).write_bytes(header + np.ascontiguousarray(lab).tobytes())


# -- score maps --------------------------------------------------------------

def save_score_map(path, scores) -> None:
    arr = np.asarray(scores, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[..., None]
    if arr.ndim != 3:
        raise ValueError("score map must be (H, W, C)")
    h, w, c = arr.shape
    with open(path, "wb") as fh:
        fh.write(SCORE_MAGIC + struct.pack("<3I", h, w, c))
        fh.write(arr.astype("<f4").tobytes())


def load_score_map(path) -> np.ndarray:
    """``(H, W, C)`` float64 array (values are exact f32)."""
    data = Path(path).read_bytes()
    if data[:4] != SCORE_MAGIC:
        raise MagicMismatch(f"{path}: expected magic {SCORE_MAGIC!r}, found {data[:4]!r}")
    if len(data) < 16:
        raise TruncatedPayload(f"{path}: header truncated at {len(data)} bytes")
    h, w, c = struct.unpack_from("<3I", data, 4)
    need = h * w * c * 4
    if len(data) - 16 < need:
        raise TruncatedPayload(f"{path}: payload has {len(data) - 16} bytes, expected {need}")
    if len(data) - 16 > need:
        raise FormatError(f"{path}: {len(data) - 16 - need} trailing bytes after payload")
    return np.frombuffer(data, "<f4", h * w * c, 16).reshape(h, w, c).astype(np.float64)


# -- parameter bundles -------------------------------------------------------

def filter_config_entry(cfg: gf.GuidedFilterConfig) -> np.ndarray:
    return np.array([cfg.radius, cfg.epsilon, cfg.subsample], dtype=np.float64)


def filter_config_from_entry(entry) -> gf.GuidedFilterConfig:
    r, eps, s = (float(v) for v in np.asarray(entry).ravel())
    # shortest decimal of the stored f32, so 0.01 comes back as 0.01
    return gf.GuidedFilterConfig(int(round(r)), float(str(np.float32(eps))), int(round(s)))


def save_bundle(path, params: dict[str, np.ndarray]) -> None:
    """Write named arrays; only names in :data:`KNOWN_PARAMS` are accepted."""
    chunks = [BUNDLE_MAGIC, struct.pack("<2I", BUNDLE_VERSION, len(params))]
    for name in sorted(params):
        if name not in KNOWN_PARAMS:
            raise UnknownComponent(f"unknown component {name!r}")
        arr = np.asarray(params[name], dtype=np.float64)
        if not np.isfinite(arr).all():
            raise ValueError(f"{name} contains non-finite values")
        raw = name.encode()
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        chunks.append(arr.astype("<f4").tobytes())
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, data: bytes, path):
        self.data, self.pos, self.path = data, 0, path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedPayload(
                f"{self.path}: need {n} bytes at offset {self.pos}, file has {len(self.data)}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_bundle(path, expected_shapes: dict[str, tuple] | None = None) -> dict[str, np.ndarray]:
    """Read a parameter bundle.

    Unknown names raise :class:`UnknownComponent`.  With ``expected_shapes``
    every entry must also appear there with the same shape.
    """
    rd = _Reader(Path(path).read_bytes(), path)
    magic = rd.take(4) if len(rd.data) >= 4 else rd.data
    if magic != BUNDLE_MAGIC:
        raise MagicMismatch(f"{path}: expected magic {BUNDLE_MAGIC!r}, found {magic!r}")
    version, count = rd.unpack("<2I")
    if version != BUNDLE_VERSION:
        raise FormatError(f"{path}: unsupported bundle version {version}")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = rd.unpack("<H")
        name = rd.take(nlen).decode("utf-8", errors="replace")
        if name not in KNOWN_PARAMS:
            raise UnknownComponent(f"{path}: unknown component {name!r}")
        (ndim,) = rd.unpack("<I")
        shape = rd.unpack(f"<{ndim}I") if ndim else ()
        size = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(rd.take(4 * size), "<f4").reshape(shape).astype(np.float64)
        if expected_shapes is not None:
            if name not in expected_shapes:
                raise UnknownComponent(f"{path}: component {name!r} is not used by this architecture")
            if tuple(expected_shapes[name]) != tuple(shape):
                raise ShapeMismatch(
                    f"{path}: shape mismatch for {name}: file has {tuple(shape)}, "
                    f"expected {tuple(expected_shapes[name])}")
        out[name] = arr
    if rd.pos != len(rd.data):
        raise FormatError(f"{path}: {len(rd.data) - rd.pos} trailing bytes")
    return out


# -- manifests ---------------------------------------------------------------

@dataclass
class Sample:
    image: np.ndarray
    labels: np.ndarray
    unary: np.ndarray


@dataclass
class ManifestEntry:
    image: Path
    labels: Path
    unary: Path


def load_manifest(path) -> list[ManifestEntry]:
    """Tab-separated ``image label unary`` paths, relative to the manifest's directory.

    Blank lines and lines starting with ``#`` are skipped.
    """
    base = Path(path).parent
    entries = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.rstrip("\r\n").split("\t")
        if len(parts) != 3:
            raise FormatError(f"{path}:{lineno}: expected 3 tab-separated paths, got {len(parts)}")
        entries.append(ManifestEntry(*(base / p for p in parts)))
    return entries


def load_dataset(path) -> list[Sample]:
    samples = []
    for e in load_manifest(path):
        image = load_image(e.image)
        labels = load_labels(e.labels)
        unary = load_score_map(e.unary)
        if labels.shape != image.shape[:2]:
            raise ShapeMismatch(f"{e.labels}: label dims {labels.shape} != image dims {image.shape[:2]}")
        if unary.shape[0] > image.shape[0] or unary.shape[1] > image.shape[1]:
            raise ShapeMismatch(f"{e.unary}: unary dims {unary.shape[:2]} exceed image dims")
        samples.append(Sample(image, labels, unary))
    return samples


def write_dataset(directory, samples, manifest_name: str = "manifest.txt") -> Path:
    """Write samples as PPM / PGM / score-map files plus a manifest; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for k, s in enumerate(samples):
        names = (f"image_{k:04d}.ppm", f"labels_{k:04d}.pgm", f"unary_{k:04d}.scm")
        save_image(directory / names[0], s.image)
        save_labels(directory / names[1], s.labels)
        save_score_map(directory / names[2], s.unary)
        lines.append("\t".join(names))
    manifest = directory / manifest_name
    manifest.write_text("".join(line + "\n" for line in lines))
    return manifest
