"""Momentum-SGD smoke training on the Charbonnier objective."""

from __future__ import annotations

import numpy as np

from ..errors import NumericError
from ..pipeline import VrtModel, charbonnier_loss, forward, named_parameters, replace_parameters
from ..tensor import Tape, Tensor


def train_smoke(model: VrtModel, clips, steps: int, lr: float, momentum: float = 0.9,
                loss_mode: str = "per_element_mean") -> tuple[VrtModel, list[float]]:
    """Fit ``model`` to ``clips`` (a sequence of ``(lq, hq)`` arrays), one clip per step.

    Returns the trained model and the loss recorded before each update.
    """
    dtype = model.config.np_dtype
    clips = [(Tensor(lq, dtype=dtype), Tensor(hq, dtype=dtype)) for lq, hq in clips]
    velocity: dict[str, np.ndarray] = {}
    losses: list[float] = []
    for step in range(steps):
        lq, hq = clips[step % len(clips)]
        params = dict(named_parameters(model))
        try:
            # Overflow is reported through NumericError, not numpy warnings.
            with Tape() as tape, np.errstate(over="ignore", invalid="ignore"):
                loss = charbonnier_loss(forward(model, lq), hq, mode=loss_mode)
        except NumericError as exc:
            raise NumericError(f"training diverged at step {step}: {exc}") from exc
        losses.append(loss.item())
        grads = tape.backward(loss)
        updated = {}
        for name, p in params.items():
            v = momentum * velocity.get(name, 0.0) + grads[p]
            velocity[name] = v
            new = p.data - lr * v
            if not np.isfinite(new).all():
                raise NumericError(f"training diverged at step {step}: parameter {name}")
            updated[name] = Tensor(new.astype(dtype), requires_grad=True)
        model = replace_parameters(model, updated)
    return model, losses


def restore(model: VrtModel, lq: np.ndarray) -> np.ndarray:
    """Run inference on ``[T, H, W, C_in]`` and clamp to ``[0, 1]``."""
    out = forward(model, Tensor(lq, dtype=model.config.np_dtype))
    return np.clip(out.data, 0.0, 1.0)
