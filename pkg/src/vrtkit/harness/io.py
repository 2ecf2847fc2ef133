"""Frame sequence I/O: directories of numbered 8-bit PNGs or rank-4 NTF files."""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import ContractError
from ..tensor import ntf

_NUMBERED = re.compile(r"^(\d+)\.png$", re.IGNORECASE)


def _frame_files(directory: Path) -> list[Path]:
    files = sorted(p for p in directory.iterdir() if p.is_file())
    numbered = []
    for p in files:
        m = _NUMBERED.match(p.name)
        if m:
            numbered.append((int(m.group(1)), p))
        elif p.suffix.lower() != ".png":
            raise ContractError(f"unsupported file in sequence directory: {p.name}")
        else:
            raise ContractError(f"frame name is not numeric: {p.name}")
    if not numbered:
        raise ContractError(f"no PNG frames in {directory}")
    numbered.sort()
    first = numbered[0][0]
    for expected, (got, _) in enumerate(numbered, start=first):
        if got != expected:
            raise ContractError(f"frame numbering gap: expected {expected}, found {got}")
    return [p for _, p in numbered]


def load_sequence(path) -> np.ndarray:
    """Load frames as float32 ``[T, H, W, C]`` scaled to ``[0, 1]``."""
    path = Path(path)
    if path.is_dir():
        frames = []
        for p in _frame_files(path):
            with Image.open(p) as im:
                arr = np.asarray(im)
            if arr.dtype != np.uint8:
                raise ContractError(f"{p.name}: expected 8-bit samples, got {arr.dtype}")
            if arr.ndim == 2:
                arr = arr[..., None]
            if frames and arr.shape != frames[0].shape:
                raise ContractError(f"{p.name}: size {arr.shape} differs from {frames[0].shape}")
            frames.append(arr)
        return (np.stack(frames).astype(np.float32) / 255.0).astype(np.float32)
    if path.suffix.lower() == ".ntf":
        arr = ntf.load(path)
        if arr.ndim != 4:
            raise ContractError(f"{path.name}: expected a rank-4 tensor, got rank {arr.ndim}")
        return arr
    raise ContractError(f"unknown sequence format: {path}")


def quantize(frames: np.ndarray) -> np.ndarray:
    """Round-half-up to 8 bits after clamping to ``[0, 1]``."""
    return np.floor(np.clip(frames, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def save_sequence(frames: np.ndarray, path) -> None:
    """Write ``[T, H, W, C]`` frames as ``0000.png, 0001.png, ...`` or one ``.ntf`` file."""
    path = Path(path)
    frames = np.asarray(frames)
    if path.suffix.lower() == ".ntf":
        ntf.save(path, frames)
        return
    path.mkdir(parents=True, exist_ok=True)
    q = quantize(frames)
    for i, frame in enumerate(q):
        img = frame[..., 0] if frame.shape[-1] == 1 else frame
        Image.fromarray(img).save(path / f"{i:04d}.png")
