"""Full pipeline assembly and the padded-batch forward pass."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from tad.config import TrainConfig
from tad.decoders import BoxRolloutDecoder, FlowDecoder, split_tokens
from tad.encoders import FlowEncoder, ObjectEncoder
from tad.mamr import MamrStack, StackTrace, sparsity_loss


@dataclass
class Batch:
    """Collated inputs. Object arrays are concatenated across the batch;
    sample_index and slot_index place each object in the padded token grid."""

    flow: torch.Tensor                 # [B,2,H,W]
    obs: torch.Tensor                  # [N_total,obs_len,4]
    sample_index: torch.Tensor         # [N_total] long
    slot_index: torch.Tensor           # [N_total] long, within-sample position
    counts: torch.Tensor               # [B] long
    fut: torch.Tensor | None = None    # [N_total,pred_len,4]
    ts: list[int] | None = None
    object_ids: np.ndarray | None = None

    @property
    def batch_size(self) -> int:
        return self.flow.shape[0]

    @property
    def n_objects(self) -> int:
        return self.obs.shape[0]


def collate(samples, device=None, dtype=torch.float32) -> Batch:
    """Stack TrainingSample or FrameObservation records into one Batch."""
    flows = torch.stack([torch.from_numpy(np.ascontiguousarray(s.flow)) for s in samples])
    obs_parts, fut_parts, sample_idx, slot_idx, counts, ids = [], [], [], [], [], []
    has_future = all(hasattr(s, "fut_boxes") for s in samples)
    for b, s in enumerate(samples):
        n = s.obs_boxes.shape[0]
        counts.append(n)
        if n:
            obs_parts.append(torch.from_numpy(np.ascontiguousarray(s.obs_boxes)))
            if has_future:
                fut_parts.append(torch.from_numpy(np.ascontiguousarray(s.fut_boxes)))
            sample_idx.extend([b] * n)
            slot_idx.extend(range(n))
            ids.extend(s.object_ids.tolist())
    obs_len = samples[0].obs_boxes.shape[1]
    obs = (torch.cat(obs_parts) if obs_parts
           else torch.zeros((0, obs_len, 4)))
    batch = Batch(
        flow=flows.to(device=device, dtype=dtype),
        obs=obs.to(device=device, dtype=dtype),
        sample_index=torch.tensor(sample_idx, dtype=torch.long, device=device),
        slot_index=torch.tensor(slot_idx, dtype=torch.long, device=device),
        counts=torch.tensor(counts, dtype=torch.long, device=device),
        ts=[s.t for s in samples],
        object_ids=np.asarray(ids, dtype=np.int64),
    )
    if has_future and fut_parts:
        batch.fut = torch.cat(fut_parts).to(device=device, dtype=dtype)
    elif has_future:
        pred_len = samples[0].fut_boxes.shape[1]
        batch.fut = torch.zeros((0, pred_len, 4), device=device, dtype=dtype)
    return batch


@dataclass
class ModelOutput:
    recon: torch.Tensor | None         # [B,2,H,W]
    rollouts: torch.Tensor | None      # [N_total,pred_len,4]
    sparsity: torch.Tensor             # scalar, zero when memory is unused
    trace: StackTrace | None = None

    @property
    def mem_fallbacks(self) -> int:
        return self.trace.mem_fallbacks if self.trace is not None else 0


class TadModel(nn.Module):
    """Two encoders, a token mixer, and two task decoders.

    Variants prune the assembly: flow_only keeps the reconstruction path,
    fol_only keeps the localization path, concat_only swaps the mixer for a
    one-shot linear fusion, no_memory keeps attention but drops the banks.
    """

    def __init__(self, cfg: TrainConfig):
        super().__init__()
        self.cfg = cfg
        v = cfg.variant
        self.has_flow_task = v != "fol_only"
        self.has_box_task = v != "flow_only"
        self.mixer_kind = {"full": "stack", "no_memory": "stack",
                           "concat_only": "concat"}.get(v, "none")

        if self.has_flow_task:
            self.flow_encoder = FlowEncoder(cfg.d_model)
            self.flow_decoder = FlowDecoder(cfg.d_model, use_skip=cfg.use_skip)
        if self.has_box_task:
            self.object_encoder = ObjectEncoder(cfg.d_model, cfg.roi_size)
            self.box_decoder = BoxRolloutDecoder(cfg.d_model)
        if self.mixer_kind == "stack":
            self.stack = MamrStack(cfg.d_model, cfg.heads, cfg.layers, cfg.mem_slots,
                                   cfg.shrink_lambda, cfg.shrink_eps,
                                   share_memory=cfg.share_memory,
                                   use_memory=(v == "full"))
        elif self.mixer_kind == "concat":
            self.fuse_global = nn.Linear(2 * cfg.d_model, cfg.d_model)
            self.fuse_object = nn.Linear(2 * cfg.d_model, cfg.d_model)

    def forward(self, batch: Batch) -> ModelOutput:
        cfg = self.cfg
        B = batch.batch_size
        zero = batch.flow.new_zeros(())

        if not self.has_flow_task:
            tokens = self.object_encoder(batch.flow, batch.obs, batch.sample_index)
            rollouts = self.box_decoder(tokens, batch.obs[:, -1, :], cfg.pred_len)
            return ModelOutput(recon=None, rollouts=rollouts, sparsity=zero)

        motion = self.flow_encoder(batch.flow)
        if not self.has_box_task:
            recon = self.flow_decoder(motion.token, motion.skip)
            return ModelOutput(recon=recon, rollouts=None, sparsity=zero)

        obj_tokens = self.object_encoder(batch.flow, batch.obs, batch.sample_index)
        global_token, obj_tokens, trace, sparse = self._mix(
            motion.token, obj_tokens, batch)
        recon = self.flow_decoder(global_token, motion.skip)
        rollouts = self.box_decoder(obj_tokens, batch.obs[:, -1, :], cfg.pred_len)
        return ModelOutput(recon=recon, rollouts=rollouts, sparsity=sparse, trace=trace)

    def _mix(self, global_token: torch.Tensor, obj_tokens: torch.Tensor, batch: Batch):
        """Route tokens through the configured mixer; returns the fused global
        token, object tokens back in concatenated order, trace, sparsity."""
        B, D = global_token.shape
        zero = global_token.new_zeros(())
        if self.mixer_kind == "none":
            return global_token, obj_tokens, None, zero

        if self.mixer_kind == "concat":
            pooled = global_token.new_zeros((B, D))
            if batch.n_objects:
                pooled.index_add_(0, batch.sample_index, obj_tokens)
                pooled = pooled / batch.counts.clamp(min=1).unsqueeze(1).to(pooled.dtype)
            fused_g = F.relu(self.fuse_global(torch.cat([global_token, pooled], dim=1)))
            fused_o = F.relu(self.fuse_object(
                torch.cat([obj_tokens, global_token[batch.sample_index]], dim=1)))
            return fused_g, fused_o, None, zero

        n_max = int(batch.counts.max()) if B else 0
        S = 1 + n_max
        tokens = global_token.new_zeros((B, S, D))
        mask = torch.zeros((B, S), dtype=torch.bool, device=global_token.device)
        tokens[:, 0, :] = global_token
        mask[:, 0] = True
        if batch.n_objects:
            tokens[batch.sample_index, 1 + batch.slot_index] = obj_tokens
            mask[batch.sample_index, 1 + batch.slot_index] = True
        mixed, trace = self.stack(tokens, mask)
        fused_global, fused_objects, _ = split_tokens(mixed, mask)
        fused_cat = fused_objects[batch.sample_index, batch.slot_index]
        return fused_global, fused_cat, trace, sparsity_loss(trace, mask)
