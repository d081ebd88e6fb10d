"""Colour-bar frames, parametric interference, and labelled dataset generation.

Frames are 8-bit YCbCr 4:4:4. Randomness comes from numpy's PCG64 bit
generator seeded through ``SeedSequence``; every frame gets its own stream
keyed by ``(seed, level, split, index)`` so frames can be produced in any
order and still come out byte-identical.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

LEVELS = (1, 2, 3, 4, 5)
SPLITS = ("train", "val", "test")
SPLIT_SIZES = {"train": 800, "val": 200, "test": 100}

STUDIO, FULL = "studio", "full"
EMIF_MAGIC = b"EMIF"
EMIF_VERSION = 1
_EMIF_HEADER = struct.Struct("<4sBIIB")

# BT.601 luma weights
KR, KG, KB = 0.299, 0.587, 0.114

BAR_RGB = (
    (1, 1, 1),  # white
    (1, 1, 0),  # yellow
    (0, 1, 1),  # cyan
    (0, 1, 0),  # green
    (1, 0, 1),  # magenta
    (1, 0, 0),  # red
    (0, 0, 1),  # blue
    (0, 0, 0),  # black
)


class FrameFormatError(ValueError):
    """Malformed EMIF data."""


@dataclass
class Frame:
    y: np.ndarray
    cb: np.ndarray
    cr: np.ndarray
    range_tag: str = STUDIO

    def __post_init__(self):
        if self.range_tag not in (STUDIO, FULL):
            raise ValueError(f"range_tag must be {STUDIO!r} or {FULL!r}")
        for plane in self.planes:
            if plane.shape != self.y.shape or plane.ndim != 2 or plane.dtype != np.uint8:
                raise ValueError("planes must be equally shaped 2-D uint8 arrays")

    @property
    def planes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.y, self.cb, self.cr

    @property
    def height(self) -> int:
        return self.y.shape[0]

    @property
    def width(self) -> int:
        return self.y.shape[1]

    def stack(self) -> np.ndarray:
        """``[3, H, W]`` uint8 array (Y, Cb, Cr)."""
        return np.stack(self.planes)

    @classmethod
    def from_stack(cls, planes: np.ndarray, range_tag: str = STUDIO) -> Frame:
        return cls(*(np.ascontiguousarray(p, dtype=np.uint8) for p in planes), range_tag=range_tag)

    def __eq__(self, other):
        if not isinstance(other, Frame):
            return NotImplemented
        return self.range_tag == other.range_tag and np.array_equal(self.stack(), other.stack())


def _round_clip(x: np.ndarray) -> np.ndarray:
    return np.clip(np.floor(x + 0.5), 0, 255).astype(np.uint8)


def rgb_to_ycbcr(rgb, range_tag: str = STUDIO) -> tuple[int, int, int]:
    """BT.601 conversion of normalised R'G'B' (0..1) to 8-bit Y, Cb, Cr."""
    r, g, b = (float(v) for v in rgb)
    y = KR * r + KG * g + KB * b
    pb = (b - y) / (2 * (1 - KB))
    pr = (r - y) / (2 * (1 - KR))
    if range_tag == STUDIO:
        vals = (16 + 219 * y, 128 + 224 * pb, 128 + 224 * pr)
    else:
        vals = (255 * y, 128 + 255 * pb, 128 + 255 * pr)
    return tuple(int(v) for v in _round_clip(np.array(vals)))


def render_colour_bars(width: int = 1280, height: int = 720, range_tag: str = STUDIO,
                       amplitude: float = 0.75) -> Frame:
    """Eight vertical bars, white through black; the last bar takes any remainder."""
    if width < 1 or height < 1:
        raise ValueError("frame dimensions must be positive")
    bar = width // 8
    planes = np.empty((3, height, width), dtype=np.uint8)
    for i, rgb in enumerate(BAR_RGB):
        start = i * bar
        stop = width if i == 7 else start + bar
        ycc = rgb_to_ycbcr([amplitude * c for c in rgb], range_tag)
        planes[:, :, start:stop] = np.array(ycc, dtype=np.uint8)[:, None, None]
    return Frame.from_stack(planes, range_tag)


@dataclass
class NoiseParams:
    """Interference model parameters. Amplitudes are in LSB (8-bit code values)."""

    amplitude_ranges: dict[int, tuple[float, float]] = field(default_factory=lambda: {
        1: (0.0, 0.0), 2: (4.0, 12.0), 3: (16.0, 40.0), 4: (48.0, 120.0)})
    cycles_per_line: tuple[float, float] = (0.5, 30.0)
    phase_drift_per_line: tuple[float, float] = (0.0, 0.3)
    dither_sigma: float = 0.5
    burst_probability: dict[int, float] = field(default_factory=lambda: {
        1: 0.0, 2: 0.0, 3: 0.05, 4: 0.15})
    blue: tuple[int, int, int] | None = None  # loss-of-lock colour; None = BT.601 blue
    seed: int = 0

    def __post_init__(self):
        ranges = [self.amplitude_ranges[lv] for lv in (2, 3, 4)]
        for lo, hi in ranges:
            if lo < 0 or hi < lo:
                raise ValueError(f"bad amplitude range {(lo, hi)}")
        for (_, hi), (lo, _) in zip(ranges, ranges[1:]):
            if lo <= hi:
                raise ValueError("amplitude ranges must be disjoint and increase with level")
        if not all(0 <= p <= 1 for p in self.burst_probability.values()):
            raise ValueError("burst probabilities must lie in [0, 1]")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must fit in 64 unsigned bits")

    def blue_for(self, range_tag: str) -> tuple[int, int, int]:
        return self.blue if self.blue is not None else rgb_to_ycbcr((0, 0, 1), range_tag)


def frame_rng(seed: int, level: int, split: str, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, level, SPLITS.index(split), index]))


def inject_noise(frame: Frame, level: int, params: NoiseParams, rng: np.random.Generator) -> Frame:
    """Corrupt ``frame`` at severity ``level`` (1-5).

    Level 1 adds rounded Gaussian dither. Levels 2-4 add one sinusoidal
    interferer per frame, ``A*sin(2*pi*f*x/width + phase(row))`` with a
    linear per-line phase drift, equally to all three planes, plus random
    whole-line bursts of +/-2A. Level 5 replaces the frame with flat blue.
    """
    if level not in LEVELS:
        raise ValueError(f"noise level must be one of {LEVELS}, got {level!r}")
    h, w = frame.height, frame.width
    if level == 5:
        blue = np.array(params.blue_for(frame.range_tag), dtype=np.uint8)
        return Frame.from_stack(np.broadcast_to(blue[:, None, None], (3, h, w)), frame.range_tag)

    clean = frame.stack().astype(np.float64)
    if level == 1:
        if params.dither_sigma == 0:
            return Frame.from_stack(frame.stack(), frame.range_tag)
        return Frame.from_stack(_round_clip(clean + rng.normal(0, params.dither_sigma, clean.shape)),
                                frame.range_tag)

    amp = rng.uniform(*params.amplitude_ranges[level])
    cycles = rng.uniform(*params.cycles_per_line)
    drift = rng.uniform(*params.phase_drift_per_line)
    phase0 = rng.uniform(0, 2 * np.pi)
    col_angle = 2 * np.pi * cycles * np.arange(w) / w
    row_phase = phase0 + drift * np.arange(h)
    # sin(a + b) expanded as two outer products
    wave = amp * (np.outer(np.cos(row_phase), np.sin(col_angle))
                  + np.outer(np.sin(row_phase), np.cos(col_angle)))
    burst_p = params.burst_probability.get(level, 0.0)
    bursts = rng.random(h) < burst_p
    signs = rng.choice((-1.0, 1.0), size=h)
    wave += (bursts * signs * 2 * amp)[:, None]
    return Frame.from_stack(_round_clip(clean + wave[None]), frame.range_tag)


# ---------------------------------------------------------------- EMIF files

def encode_frame(frame: Frame) -> bytes:
    header = _EMIF_HEADER.pack(EMIF_MAGIC, EMIF_VERSION, frame.width, frame.height,
                               0 if frame.range_tag == STUDIO else 1)
    return header + frame.stack().tobytes()


def decode_frame(data: bytes) -> Frame:
    if len(data) < _EMIF_HEADER.size:
        raise FrameFormatError("truncated EMIF header")
    magic, version, w, h, tag = _EMIF_HEADER.unpack_from(data)
    if magic != EMIF_MAGIC:
        raise FrameFormatError(f"bad magic {magic!r}")
    if version != EMIF_VERSION:
        raise FrameFormatError(f"unsupported EMIF version {version}")
    if tag not in (0, 1):
        raise FrameFormatError(f"bad range tag {tag}")
    if w == 0 or h == 0:
        raise FrameFormatError("zero frame dimension")
    expected = _EMIF_HEADER.size + 3 * w * h
    if len(data) != expected:
        raise FrameFormatError(f"expected {expected} bytes for {w}x{h}, got {len(data)}")
    planes = np.frombuffer(data, dtype=np.uint8, offset=_EMIF_HEADER.size).reshape(3, h, w)
    return Frame.from_stack(planes, STUDIO if tag == 0 else FULL)


def write_frame(path, frame: Frame) -> None:
    Path(path).write_bytes(encode_frame(frame))


def read_frame(path) -> Frame:
    return decode_frame(Path(path).read_bytes())


def frame_to_rgb(frame: Frame) -> np.ndarray:
    """BT.601 inverse to an ``[H, W, 3]`` uint8 RGB image."""
    y, cb, cr = (p.astype(np.float64) for p in frame.planes)
    if frame.range_tag == STUDIO:
        yn, pb, pr = (y - 16) / 219, (cb - 128) / 224, (cr - 128) / 224
    else:
        yn, pb, pr = y / 255, (cb - 128) / 255, (cr - 128) / 255
    r = yn + 2 * (1 - KR) * pr
    b = yn + 2 * (1 - KB) * pb
    g = (yn - KR * r - KB * b) / KG
    return _round_clip(np.stack([r, g, b], axis=-1) * 255)


def export_image(frame: Frame, path, plane: str | None = None) -> None:
    """Write a PNG for visual inspection: one plane in greyscale, or an RGB composite."""
    from PIL import Image

    if plane is None:
        img = Image.fromarray(frame_to_rgb(frame))
    else:
        img = Image.fromarray(dict(zip(("y", "cb", "cr"), frame.planes))[plane])
    img.save(path)


# ---------------------------------------------------------------- manifest

@dataclass(frozen=True)
class ManifestEntry:
    path: str
    level: int
    split: str


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    root: Path = Path(".")
    comments: list[str] = field(default_factory=list)

    def counts(self) -> dict[tuple[int, str], int]:
        out = {(lv, sp): 0 for lv in LEVELS for sp in SPLITS}
        for e in self.entries:
            out[e.level, e.split] += 1
        return out

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def resolve(self, entry: ManifestEntry) -> Path:
        return self.root / entry.path

    def to_text(self) -> str:
        lines = [f"# {c}" for c in self.comments]
        lines += [f"{e.path}\t{e.level}\t{e.split}" for e in self.entries]
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def read(cls, path) -> DatasetManifest:
        path = Path(path)
        entries, comments = [], []
        for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            if line.startswith("#"):
                comments.append(line[1:].strip())
                continue
            parts = line.split("\t")
            if len(parts) != 3 or parts[2] not in SPLITS or parts[1] not in {str(v) for v in LEVELS}:
                raise ValueError(f"{path}:{n}: malformed manifest line {line!r}")
            entries.append(ManifestEntry(parts[0], int(parts[1]), parts[2]))
        return cls(entries, path.parent, comments)


MANIFEST_NAME = "manifest.tsv"
REFERENCE_NAME = "reference.emif"


def split_counts(scale: float) -> dict[str, int]:
    if not 0 < scale <= 1:
        raise ValueError("scale must lie in (0, 1]")
    counts = {sp: int(round(scale * n)) for sp, n in SPLIT_SIZES.items()}
    if counts["test"] < 1:
        raise ValueError(f"scale {scale} leaves no test samples per class")
    return counts


def build_dataset(output_dir, params: NoiseParams | None = None, scale: float = 1.0,
                  width: int = 1280, height: int = 720, range_tag: str = STUDIO) -> DatasetManifest:
    """Render the clean pattern once and write ``scale * (800, 200, 100)`` noisy
    frames per level to ``output_dir/<split>/L<level>/``, plus ``manifest.tsv``
    and the clean ``reference.emif``."""
    params = params or NoiseParams()
    counts = split_counts(scale)
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    clean = render_colour_bars(width, height, range_tag)
    write_frame(out / REFERENCE_NAME, clean)

    entries = []
    for split in SPLITS:
        for level in LEVELS:
            sub = Path(split) / f"L{level}"
            (out / sub).mkdir(parents=True, exist_ok=True)
            for i in range(counts[split]):
                rel = sub / f"{split}_L{level}_{i:05d}.emif"
                noisy = inject_noise(clean, level, params, frame_rng(params.seed, level, split, i))
                write_frame(out / rel, noisy)
                entries.append(ManifestEntry(rel.as_posix(), level, split))
        log.info("wrote %s split: %d frames per level", split, counts[split])
    manifest = DatasetManifest(entries, out, [
        f"seed={params.seed} scale={scale} size={width}x{height} range={range_tag}",
        "path\tlevel\tsplit",
    ])
    manifest.write(out / MANIFEST_NAME)
    return manifest
