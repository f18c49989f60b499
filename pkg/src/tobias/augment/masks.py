"""Foreground patch masks from a frozen random network, and their cache file.

Cache layout (little endian)::

    magic   4 bytes  b"TBMK"
    version u16
    seed    u64      seed of the mask network
    count   u32
    count x u16      bit k set <=> cell k (row-major) is foreground
"""
from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from tobias.augment.patches import GRID, check_mask, top_half_mask
from tobias.errors import ConfigError, InvariantError, ParseError, TobiasIOError
from tobias.images.transforms import IMAGENET_MEAN, IMAGENET_STD, to_batch
from tobias.localize import aggregate
from tobias.net.builder import Network, extract_features
from tobias.tensor.kernels import maxpool2d

MAGIC = b"TBMK"
VERSION = 1
_HEADER = struct.Struct("<4sHQI")
_BIT_WEIGHTS = (1 << np.arange(GRID * GRID)).astype(np.uint32)


@dataclass(frozen=True)
class PatchMask:
    m: np.ndarray
    seed: int
    image_id: int

    def __post_init__(self):
        m = check_mask(self.m).copy()
        m.flags.writeable = False
        object.__setattr__(self, "m", m)


def reduce_to_grid(q: np.ndarray) -> np.ndarray:
    """Kernel-2, stride-2, ceil-mode max pooling of an ``(h, w, d)`` volume.

    Applied once; the result must be 4x4 (7x7 and 8x8 maps both qualify).
    """
    x = np.ascontiguousarray(q.transpose(2, 0, 1)[None])
    pooled = maxpool2d(x, 2, 2, 0, ceil_mode=True)[0].transpose(1, 2, 0)
    if pooled.shape[:2] != (GRID, GRID):
        raise ConfigError(f"feature map {q.shape[0]}x{q.shape[1]} does not pool to "
                          f"{GRID}x{GRID}; pick an architecture whose final map is 7x7 or 8x8")
    return pooled


def patch_aggregation(net: Network, image: np.ndarray, mean=IMAGENET_MEAN, std=IMAGENET_STD) -> np.ndarray:
    """The pooled 4x4 aggregation map of one HWC image."""
    batch = to_batch([image], size=net.spec.input_size, mean=mean, std=std)
    q = extract_features(net, batch)[0]
    return aggregate(reduce_to_grid(q))


def compute_patch_mask(image: np.ndarray, mask_net: Network, image_id: int = 0,
                       mean=IMAGENET_MEAN, std=IMAGENET_STD) -> PatchMask:
    a = patch_aggregation(mask_net, image, mean, std)
    return PatchMask(top_half_mask(a), mask_net.seed, image_id)


def pack_mask(m: np.ndarray) -> int:
    return int((np.asarray(m, dtype=bool).ravel() * _BIT_WEIGHTS).sum())


def unpack_mask(bits: int) -> np.ndarray:
    return ((int(bits) >> np.arange(GRID * GRID)) & 1).astype(bool).reshape(GRID, GRID)


class MaskCache:
    """Read-only table of precomputed masks, indexed by image id."""

    def __init__(self, masks: np.ndarray, seed: int):
        masks = np.array(masks, dtype=bool).reshape(-1, GRID, GRID)
        for i, m in enumerate(masks):
            if int(m.sum()) != GRID * GRID // 2:
                raise InvariantError(f"mask {i} has {int(m.sum())} foreground cells")
        masks.flags.writeable = False
        self.masks = masks
        self.seed = int(seed)

    def __len__(self):
        return len(self.masks)

    def __getitem__(self, i) -> np.ndarray:
        return self.masks[i]

    def patch_mask(self, i) -> PatchMask:
        return PatchMask(self.masks[i], self.seed, int(i))

    def __eq__(self, other):
        return (isinstance(other, MaskCache) and self.seed == other.seed
                and np.array_equal(self.masks, other.masks))

    def to_bytes(self) -> bytes:
        header = _HEADER.pack(MAGIC, VERSION, self.seed, len(self))
        bits = (self.masks.reshape(len(self), -1) * _BIT_WEIGHTS).sum(axis=1).astype("<u2")
        return header + bits.tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "MaskCache":
        if len(data) < _HEADER.size:
            raise ParseError("mask cache shorter than its header", len(data))
        magic, version, seed, count = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise ParseError(f"bad mask cache magic {magic!r}", 0)
        if version != VERSION:
            raise ParseError(f"unsupported mask cache version {version}", 4)
        need = _HEADER.size + 2 * count
        if len(data) != need:
            raise ParseError(f"mask cache holds {len(data)} bytes, header implies {need}", len(data))
        bits = np.frombuffer(data, dtype="<u2", count=count, offset=_HEADER.size).astype(np.uint32)
        masks = ((bits[:, None] >> np.arange(GRID * GRID)) & 1).astype(bool)
        return cls(masks.reshape(count, GRID, GRID), seed)

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.to_bytes())
        return path

    @classmethod
    def load(cls, path) -> "MaskCache":
        path = Path(path)
        try:
            data = path.read_bytes()
        except OSError as exc:
            raise TobiasIOError(f"cannot read mask cache {path}: {exc}") from exc
        return cls.from_bytes(data)


def precompute_masks(images, mask_net: Network, workers: int = 1,
                     mean=IMAGENET_MEAN, std=IMAGENET_STD) -> MaskCache:
    """One pass of the frozen mask network over a sequence of HWC images."""
    images = list(images)

    def job(i):
        return top_half_mask(patch_aggregation(mask_net, images[i], mean, std))

    with threadpool_limits(limits=1):
        if workers <= 1:
            masks = [job(i) for i in range(len(images))]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                masks = list(pool.map(job, range(len(images))))
    return MaskCache(np.array(masks, dtype=bool).reshape(-1, GRID, GRID), mask_net.seed)
