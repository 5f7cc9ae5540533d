"""Training losses: flow consistency, box rollout distance, weighted total."""

from __future__ import annotations

from dataclasses import dataclass, replace

import torch

from tad.model import Batch, ModelOutput


@dataclass
class FlowLossParts:
    motion: torch.Tensor   # mean endpoint distance between flow vectors
    recon: torch.Tensor    # mean absolute component error
    total: torch.Tensor


def flow_loss(recon: torch.Tensor, target: torch.Tensor,
              smooth_eps: float = 0.0) -> FlowLossParts:
    """Endpoint distance plus L1 over [B,2,H,W] (or [2,H,W]) flow pairs.

    smooth_eps is added under the square root; keep it zero when evaluating
    the kernel and positive only where the gradient at zero must be finite.
    """
    if recon.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(recon.shape)} vs {tuple(target.shape)}")
    if recon.shape[-3] != 2:
        raise ValueError("flow tensors must have 2 channels")
    du = target[..., 0, :, :] - recon[..., 0, :, :]
    dv = target[..., 1, :, :] - recon[..., 1, :, :]
    motion = torch.sqrt(du * du + dv * dv + smooth_eps).mean()
    l1 = torch.abs(target - recon).mean()
    return FlowLossParts(motion=motion, recon=l1, total=motion + l1)


def box_loss(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Euclidean distance in box space, meaned over objects, summed over steps.

    pred and target are [N,T,4]. An empty object set contributes zero.
    """
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    if pred.shape[0] == 0:
        return pred.new_zeros(())
    dist = torch.linalg.vector_norm(pred - target, dim=-1)  # [N,T]
    return dist.mean(dim=0).sum()


@dataclass
class LossBreakdown:
    motion: torch.Tensor
    recon: torch.Tensor
    flow: torch.Tensor
    boxes: torch.Tensor
    sparsity: torch.Tensor
    total: torch.Tensor

    def to_floats(self) -> "LossBreakdown":
        def as_float(v):
            return float(v.detach()) if isinstance(v, torch.Tensor) else float(v)
        return replace(self, **{k: as_float(getattr(self, k)) for k in
                                ("motion", "recon", "flow", "boxes", "sparsity", "total")})

    def check_finite(self) -> "LossBreakdown":
        if not torch.isfinite(self.total):
            raise FloatingPointError(
                f"non-finite loss: flow={float(self.flow)} boxes={float(self.boxes)} "
                f"sparsity={float(self.sparsity)}")
        return self


def total_loss(output: ModelOutput, batch: Batch,
               lambda1: float = 1.0, lambda2: float = 1.0, lambda3: float = 0.0002,
               smooth_eps: float = 1e-8) -> LossBreakdown:
    """Weighted multi-task objective; absent task heads contribute zero."""
    zero = output.sparsity.new_zeros(()) if output.sparsity is not None else torch.zeros(())
    if output.recon is not None:
        parts = flow_loss(output.recon, batch.flow, smooth_eps=smooth_eps)
    else:
        parts = FlowLossParts(zero, zero, zero)
    if output.rollouts is not None and batch.fut is not None:
        boxes = box_loss(output.rollouts, batch.fut)
    else:
        boxes = zero
    sparsity = output.sparsity if output.sparsity is not None else zero
    total = lambda1 * parts.total + lambda2 * boxes + lambda3 * sparsity
    return LossBreakdown(motion=parts.motion, recon=parts.recon, flow=parts.total,
                         boxes=boxes, sparsity=sparsity, total=total)
