"""Task decoders: dense flow reconstruction and recurrent box rollout."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F


def split_tokens(tokens: torch.Tensor, mask: torch.Tensor):
    """Partition mixed tokens back into the global row and the object rows."""
    return tokens[:, 0, :], tokens[:, 1:, :], mask[:, 1:]


class FlowDecoder(nn.Module):
    """Deconvolutional decoder conditioned on the global token.

    The token is projected and broadcast-added to the encoder skip map, then
    upsampled back to full resolution. The penultimate layer is a plain
    convolution kept behind a named attribute so richer reconstruction blocks
    can be swapped in without touching the rest of the decoder.
    """

    def __init__(self, d_model: int, use_skip: bool = True):
        super().__init__()
        self.use_skip = use_skip
        self.cond = nn.Linear(d_model, 128)
        self.up1 = nn.ConvTranspose2d(128, 64, kernel_size=4, stride=2, padding=1)
        self.up2 = nn.ConvTranspose2d(64, 32, kernel_size=4, stride=2, padding=1)
        self.penultimate = nn.Conv2d(32, 32, kernel_size=3, padding=1)
        self.out = nn.ConvTranspose2d(32, 2, kernel_size=4, stride=2, padding=1)

    def forward(self, token: torch.Tensor, skip: torch.Tensor) -> torch.Tensor:
        """token [B,D], skip [B,128,H/8,W/8] from the flow encoder."""
        cond = self.cond(token)[:, :, None, None]
        x = skip + cond if self.use_skip else cond.expand(-1, -1, *skip.shape[2:])
        x = F.relu(self.up1(x))
        x = F.relu(self.up2(x))
        x = F.relu(self.penultimate(x))
        return self.out(x)


class BoxRolloutDecoder(nn.Module):
    """Unrolls future box offsets from each object token.

    A projected token seeds a GRU cell whose input at step i is an embedding
    of its own previous state (zeros at the first step). Each step emits a
    4-vector offset; predictions are the last observed box plus the running
    sum of offsets.
    """

    def __init__(self, d_model: int):
        super().__init__()
        self.seed = nn.Sequential(nn.Linear(d_model, d_model), nn.ReLU())
        self.cell = nn.GRUCell(d_model, d_model)
        self.e_head = nn.Sequential(
            nn.Linear(d_model, d_model), nn.ReLU(), nn.Linear(d_model, d_model))
        self.y_head = nn.Sequential(
            nn.Linear(d_model, d_model), nn.ReLU(), nn.Linear(d_model, 4))

    def forward(self, object_tokens: torch.Tensor, last_boxes: torch.Tensor,
                pred_len: int) -> torch.Tensor:
        """object_tokens [N,D], last_boxes [N,4]; returns [N,pred_len,4]."""
        N, D = object_tokens.shape
        if N == 0:
            return object_tokens.new_zeros((0, pred_len, 4))
        h = self.seed(object_tokens)
        e = object_tokens.new_zeros((N, D))
        offsets = []
        for _ in range(pred_len):
            h = self.cell(e, h)
            e = self.e_head(h)
            offsets.append(self.y_head(h))
        path = torch.cumsum(torch.stack(offsets, dim=1), dim=1)  # [N,pred,4]
        return last_boxes.unsqueeze(1) + path
