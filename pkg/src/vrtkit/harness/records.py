"""Per-sequence evaluation records and their CSV form."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from ..pipeline import charbonnier_loss
from ..tensor import Tensor
from .metrics import psnr, ssim

CSV_HEADER = [
    "sequence", "frames", "psnr_mean", "ssim_mean", "loss", "runtime_ms",
    "psnr_frames", "ssim_frames",
]


@dataclass
class MetricsRecord:
    sequence: str
    psnr_frames: list[float]
    ssim_frames: list[float]
    loss: float
    runtime_ms: float = 0.0
    notes: list[str] = field(default_factory=list)

    @property
    def psnr_mean(self) -> float:
        return float(np.mean(self.psnr_frames))

    @property
    def ssim_mean(self) -> float:
        return float(np.mean(self.ssim_frames))

    def row(self) -> list[str]:
        return [
            self.sequence,
            str(len(self.psnr_frames)),
            f"{self.psnr_mean:.6f}",
            f"{self.ssim_mean:.6f}",
            f"{self.loss:.8f}",
            f"{self.runtime_ms:.3f}",
            ";".join(f"{v:.6f}" for v in self.psnr_frames),
            ";".join(f"{v:.6f}" for v in self.ssim_frames),
        ]


def evaluate(name: str, restored: np.ndarray, reference: np.ndarray,
             runtime_ms: float = 0.0) -> MetricsRecord:
    p, _ = psnr(restored, reference)
    s, _ = ssim(restored, reference)
    loss = charbonnier_loss(Tensor(restored, dtype=np.float64),
                            Tensor(reference, dtype=np.float64)).item()
    return MetricsRecord(name, p.tolist(), s.tolist(), loss, runtime_ms)


def to_csv(records) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for rec in records:
        writer.writerow(rec.row())
    return buf.getvalue()
