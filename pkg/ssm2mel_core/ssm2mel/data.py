"""
Tensor files, recordings and the synthetic EEG -> mel generator.

TensorFile layout (all little-endian):

    magic  "SSMT"            4 bytes
    version u32 = 1          4 bytes
    dtype   u8               0 = float64, 1 = float32
    ndim    u8
    dims    u64 x ndim
    payload row-major IEEE-754

Dataset directories: <root>/<split>/<recording_id>/{eeg.ssmt, mel.ssmt, meta.txt}
"""

import logging
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
from dotenv import dotenv_values

from .config import SyntheticSpec
from .errors import (
    BadMagicError,
    DataIOError,
    DataShapeError,
    InvalidValueError,
    TruncatedPayloadError,
    UnknownDtypeError,
    UnsupportedVersionError,
)
from .numerics import Tensor, as_tensor
from .prng import Xoshiro256pp

logger = logging.getLogger(__name__)

MAGIC = b"SSMT"
VERSION = 1
DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}
SPLITS = ("train", "val", "test")
DEFAULT_SEGMENT = 320

PathLike = Union[str, os.PathLike]


# ---------------------------------------------------------------------------
# TensorFile
# ---------------------------------------------------------------------------

def encode_tensor(tensor, dtype: int = 0) -> bytes:
    if dtype not in DTYPES:
        raise UnknownDtypeError(f"unknown dtype code {dtype}")
    array = as_tensor(tensor).data
    if array.ndim > 255:
        raise DataShapeError(f"cannot store {array.ndim} dimensions")
    header = MAGIC + struct.pack("<IBB", VERSION, dtype, array.ndim)
    header += struct.pack(f"<{array.ndim}Q", *array.shape)
    return header + np.ascontiguousarray(array, dtype=DTYPES[dtype]).tobytes()


def write_tensor(path: PathLike, tensor, dtype: int = 0) -> None:
    payload = encode_tensor(tensor, dtype)
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as handle:
            handle.write(payload)
    except OSError as e:
        raise DataIOError(f"cannot write {path}: {e}") from e


def read_tensor(path: PathLike) -> Tensor:
    """Read and validate a TensorFile; the payload length is checked before allocation."""
    try:
        file_size = os.path.getsize(path)
        with open(path, "rb") as handle:
            head = handle.read(10)
            if len(head) < 4 or head[:4] != MAGIC:
                if len(head) < 4 and MAGIC.startswith(head):
                    raise TruncatedPayloadError(f"{path}: file ends inside the header")
                raise BadMagicError(f"{path}: bad magic {head[:4]!r}")
            if len(head) < 10:
                raise TruncatedPayloadError(f"{path}: file ends inside the header")
            version, dtype, ndim = struct.unpack("<IBB", head[4:10])
            if version != VERSION:
                raise UnsupportedVersionError(f"{path}: unsupported version {version}")
            if dtype not in DTYPES:
                raise UnknownDtypeError(f"{path}: unknown dtype code {dtype}")
            dims_raw = handle.read(8 * ndim)
            if len(dims_raw) < 8 * ndim:
                raise TruncatedPayloadError(f"{path}: file ends inside the dims")
            dims = struct.unpack(f"<{ndim}Q", dims_raw)
            expected = DTYPES[dtype].itemsize * math.prod(dims)
            available = file_size - 10 - 8 * ndim
            if available < expected:
                raise TruncatedPayloadError(
                    f"{path}: payload needs {expected} bytes, file has {available}"
                )
            if available > expected:
                raise DataIOError(f"{path}: {available - expected} trailing bytes after payload")
            payload = handle.read(expected)
    except OSError as e:
        raise DataIOError(f"cannot read {path}: {e}") from e
    array = np.frombuffer(payload, dtype=DTYPES[dtype]).astype(np.float64).reshape(dims)
    return Tensor(array)


# ---------------------------------------------------------------------------
# recordings and splits
# ---------------------------------------------------------------------------

@dataclass
class Recording:
    eeg: Tensor  # [T x C]
    mel: Tensor  # [T x M]
    subject_id: int
    recording_id: str

    def __post_init__(self):
        self.eeg, self.mel = as_tensor(self.eeg), as_tensor(self.mel)
        if self.eeg.ndim != 2 or self.mel.ndim != 2 or self.eeg.shape[0] != self.mel.shape[0]:
            raise DataShapeError(
                f"recording {self.recording_id}: eeg {list(self.eeg.shape)} and "
                f"mel {list(self.mel.shape)} must share the time axis"
            )

    @property
    def length(self) -> int:
        return self.eeg.shape[0]


@dataclass
class DatasetSplits:
    train: List[Recording] = field(default_factory=list)
    val: List[Recording] = field(default_factory=list)
    test: List[Recording] = field(default_factory=list)

    def split(self, name: str) -> List[Recording]:
        if name not in SPLITS:
            raise InvalidValueError(f"unknown split '{name}' (expected one of {', '.join(SPLITS)})")
        return getattr(self, name)

    def counts(self) -> Dict[str, int]:
        return {name: len(self.split(name)) for name in SPLITS}


def split_dataset(
    recordings: Sequence[Recording],
    ratios: Tuple[float, float, float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> DatasetSplits:
    """
    Seeded Fisher-Yates shuffle, then a proportional split.

    Validation and test each get max(1, floor(ratio * n)) recordings, or none
    when their ratio is 0; the remainder goes to training.
    """
    n = len(recordings)
    wanted = [ratio > 0 for ratio in ratios[1:]]
    needed = 1 + sum(wanted)
    if n < needed:
        raise DataShapeError(f"need at least {needed} recordings to split, got {n}")
    n_val, n_test = (
        max(1, int(math.floor(ratio * n + 1e-9))) if on else 0
        for ratio, on in zip(ratios[1:], wanted)
    )
    if n_val + n_test >= n:
        n_val, n_test = int(wanted[0]), int(wanted[1])
    order = list(range(n))
    Xoshiro256pp(seed).shuffle(order)
    n_train = n - n_val - n_test
    pick = lambda idx: [recordings[i] for i in idx]
    return DatasetSplits(
        train=pick(order[:n_train]),
        val=pick(order[n_train:n_train + n_val]),
        test=pick(order[n_train + n_val:]),
    )


def crop_start(length: int, rng: Xoshiro256pp, segment: int = DEFAULT_SEGMENT) -> int:
    if length < segment:
        raise DataShapeError(f"recording of {length} samples is shorter than a {segment}-sample crop")
    return rng.integers(length - segment + 1)


def random_crop(recording: Recording, rng: Xoshiro256pp, segment: int = DEFAULT_SEGMENT) -> Tuple[Tensor, Tensor]:
    """Paired crop of eeg and mel at one uniform offset."""
    start = crop_start(recording.length, rng, segment)
    end = start + segment
    return Tensor(recording.eeg.data[start:end]), Tensor(recording.mel.data[start:end])


def inference_segments(T: int, segment: int = DEFAULT_SEGMENT) -> List[Tuple[int, int]]:
    """Consecutive windows covering [0, T); the remainder is its own shorter segment."""
    return [(start, min(segment, T - start)) for start in range(0, T, segment)]


# ---------------------------------------------------------------------------
# synthetic data
# ---------------------------------------------------------------------------

def moving_average(x: np.ndarray, width: int) -> np.ndarray:
    """Trailing mean over the last `width` samples (fewer at the start)."""
    T = x.shape[0]
    csum = np.concatenate([np.zeros((1,) + x.shape[1:]), np.cumsum(x, axis=0)], axis=0)
    ends = np.arange(1, T + 1)
    starts = np.maximum(0, ends - width)
    counts = (ends - starts).reshape((T,) + (1,) * (x.ndim - 1))
    return (csum[ends] - csum[starts]) / counts


def _zscore(mel: np.ndarray) -> np.ndarray:
    centered = mel - mel.mean(axis=0, keepdims=True)
    std = centered.std(axis=0, keepdims=True)
    return centered / np.where(std > 0, std, 1.0)


def synth_generate(spec: SyntheticSpec) -> List[Recording]:
    """
    Seeded surrogate dataset.

    eeg = moving_average(gaussian); mel = moving_average(eeg) @ W_s + σ noise,
    z-scored per band. W_s is drawn per subject.
    """
    rng = Xoshiro256pp(spec.seed)
    C, M = spec.n_channels, spec.n_mel
    mixing = [rng.normal_array((C, M)) / math.sqrt(C) for _ in range(spec.n_subjects)]
    recordings = []
    for subject in range(spec.n_subjects):
        W = mixing[subject]
        for index in range(spec.recordings_per_subject):
            eeg = moving_average(rng.normal_array((spec.n_samples, C)), spec.smoothing)
            smooth = moving_average(eeg, spec.smoothing)
            mel = np.zeros((spec.n_samples, M))
            for channel in range(C):
                mel += smooth[:, channel:channel + 1] * W[channel:channel + 1, :]
            if spec.noise_std > 0:
                mel += spec.noise_std * rng.normal_array((spec.n_samples, M))
            recordings.append(Recording(Tensor(eeg), Tensor(_zscore(mel)), subject,
                                        f"s{subject:02d}_r{index:02d}"))
    logger.info(f"Generated {len(recordings)} synthetic recordings (seed {spec.seed})")
    return recordings


def synth_splits(spec: SyntheticSpec) -> DatasetSplits:
    ratios = (1.0 - spec.val_ratio - spec.test_ratio, spec.val_ratio, spec.test_ratio)
    return split_dataset(synth_generate(spec), ratios, spec.split_seed)


# ---------------------------------------------------------------------------
# dataset directories
# ---------------------------------------------------------------------------

def save_recording(directory: PathLike, recording: Recording, sample_rate: int) -> None:
    directory = Path(directory)
    write_tensor(directory / "eeg.ssmt", recording.eeg)
    write_tensor(directory / "mel.ssmt", recording.mel)
    meta = f"subject_id={recording.subject_id}\nsample_rate={sample_rate}\n"
    try:
        (directory / "meta.txt").write_text(meta, encoding="utf-8")
    except OSError as e:
        raise DataIOError(f"cannot write {directory / 'meta.txt'}: {e}") from e


def save_dataset(root: PathLike, splits: DatasetSplits, sample_rate: int = 64) -> int:
    root = Path(root)
    count = 0
    for name in SPLITS:
        for recording in splits.split(name):
            save_recording(root / name / recording.recording_id, recording, sample_rate)
            count += 1
    logger.info(f"Wrote {count} recordings under {root}")
    return count


def load_recording(directory: PathLike) -> Recording:
    directory = Path(directory)
    meta_path = directory / "meta.txt"
    if not meta_path.is_file():
        raise DataIOError(f"missing {meta_path}")
    meta = dotenv_values(meta_path)
    try:
        subject_id = int(meta["subject_id"])
    except (KeyError, TypeError, ValueError):
        raise DataIOError(f"{meta_path}: missing or invalid subject_id") from None
    return Recording(read_tensor(directory / "eeg.ssmt"), read_tensor(directory / "mel.ssmt"),
                     subject_id, directory.name)


def load_split(root: PathLike, split: str) -> List[Recording]:
    """Recordings of one split in recording-id order; a missing split is empty."""
    directory = Path(root) / split
    if not directory.is_dir():
        return []
    return [load_recording(path) for path in sorted(directory.iterdir()) if path.is_dir()]


def load_dataset(root: PathLike) -> DatasetSplits:
    if not Path(root).is_dir():
        raise DataIOError(f"dataset directory not found: {root}")
    return DatasetSplits(*(load_split(root, name) for name in SPLITS))
