"""Flow and object encoders producing same-width motion tokens."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F


@dataclass
class GlobalMotion:
    """Encoder output: one global token per sample plus the skip feature map."""

    token: torch.Tensor   # [B,D]
    skip: torch.Tensor    # [B,128,H/8,W/8]


class FlowEncoder(nn.Module):
    """Three strided convolutions, global average pooling, linear projection.

    The pre-pooling feature map is kept as a skip connection for the decoder.
    """

    def __init__(self, d_model: int):
        super().__init__()
        self.conv1 = nn.Conv2d(2, 32, kernel_size=3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(32, 64, kernel_size=3, stride=2, padding=1)
        self.conv3 = nn.Conv2d(64, 128, kernel_size=3, stride=2, padding=1)
        self.proj = nn.Linear(128, d_model)

    def forward(self, flow: torch.Tensor) -> GlobalMotion:
        if flow.dim() != 4 or flow.shape[1] != 2:
            raise ValueError(f"expected flow of shape [B,2,H,W], got {tuple(flow.shape)}")
        x = F.relu(self.conv1(flow))
        x = F.relu(self.conv2(x))
        x = F.relu(self.conv3(x))
        token = self.proj(x.mean(dim=(2, 3)))
        return GlobalMotion(token=token, skip=x)


def roi_pool(flow: torch.Tensor, boxes: torch.Tensor, grid: int,
             sample_index: torch.Tensor | None = None) -> torch.Tensor:
    """Bilinearly sample a grid x grid patch of flow inside each box.

    flow is [B,C,H,W] (or [C,H,W], treated as B=1), boxes are normalized
    corners [x_min,y_min,x_max,y_max]. Sample points span the box edges
    inclusively, and a pixel sits at index x*(W-1), so a field linear in x
    or y is reproduced exactly at the sample points. sample_index maps each
    box to its batch entry; default all zeros.
    """
    squeeze = flow.dim() == 3
    if squeeze:
        flow = flow.unsqueeze(0)
    if flow.dim() != 4:
        raise ValueError(f"expected flow of shape [B,C,H,W], got {tuple(flow.shape)}")
    if boxes.dim() != 2 or boxes.shape[1] != 4:
        raise ValueError(f"expected boxes of shape [N,4], got {tuple(boxes.shape)}")
    if grid < 1:
        raise ValueError("grid must be >= 1")
    B, C, H, W = flow.shape
    N = boxes.shape[0]
    if sample_index is None:
        sample_index = torch.zeros(N, dtype=torch.long, device=flow.device)
    if N == 0:
        return flow.new_zeros((0, C, grid, grid))
    widths = boxes[:, 2] - boxes[:, 0]
    heights = boxes[:, 3] - boxes[:, 1]
    if bool((widths <= 0).any() or (heights <= 0).any()):
        raise ValueError("degenerate box: zero or negative area")

    if grid == 1:
        offsets = boxes.new_tensor([0.5])
    else:
        offsets = torch.linspace(0, 1, grid, dtype=flow.dtype, device=flow.device)
    xs = boxes[:, 0].unsqueeze(1) + widths.unsqueeze(1) * offsets.unsqueeze(0)  # [N,grid]
    ys = boxes[:, 1].unsqueeze(1) + heights.unsqueeze(1) * offsets.unsqueeze(0)
    px = (xs * (W - 1)).clamp(0, W - 1)
    py = (ys * (H - 1)).clamp(0, H - 1)

    x0 = px.floor().long().clamp(0, max(W - 2, 0))
    y0 = py.floor().long().clamp(0, max(H - 2, 0))
    fx = (px - x0).clamp(0, 1)
    fy = (py - y0).clamp(0, 1)
    x1 = (x0 + 1).clamp(0, W - 1)
    y1 = (y0 + 1).clamp(0, H - 1)

    # expand to the full [N,grid,grid] lattice
    x0g, x1g, fxg = (v.unsqueeze(1).expand(N, grid, grid) for v in (x0, x1, fx))
    y0g, y1g, fyg = (v.unsqueeze(2).expand(N, grid, grid) for v in (y0, y1, fy))
    s = sample_index.view(N, 1, 1).expand(N, grid, grid)

    v00 = flow[s, :, y0g, x0g]  # [N,grid,grid,C]
    v01 = flow[s, :, y0g, x1g]
    v10 = flow[s, :, y1g, x0g]
    v11 = flow[s, :, y1g, x1g]
    fxg = fxg.unsqueeze(-1)
    fyg = fyg.unsqueeze(-1)
    top = v00 * (1 - fxg) + v01 * fxg
    bot = v10 * (1 - fxg) + v11 * fxg
    patch = top * (1 - fyg) + bot * fyg
    return patch.permute(0, 3, 1, 2).contiguous()


class ObjectEncoder(nn.Module):
    """Box-history GRU with a local-flow residual.

    Each observed box passes through a linear embedding, a GRU summarizes the
    history, and a two-layer MLP over the RoI-pooled flow patch at the last
    observed box is added to the final hidden state.
    """

    def __init__(self, d_model: int, roi_size: int = 5):
        super().__init__()
        self.roi_size = roi_size
        self.embed = nn.Linear(4, d_model)
        self.gru = nn.GRU(d_model, d_model, batch_first=True)
        self.local = nn.Sequential(
            nn.Linear(2 * roi_size * roi_size, d_model),
            nn.ReLU(),
            nn.Linear(d_model, d_model),
        )

    def forward(self, flow: torch.Tensor, obs_boxes: torch.Tensor,
                sample_index: torch.Tensor) -> torch.Tensor:
        """flow [B,2,H,W]; obs_boxes [N,obs,4] across the batch; returns [N,D]."""
        N = obs_boxes.shape[0]
        if N == 0:
            return flow.new_zeros((0, self.embed.out_features))
        emb = F.relu(self.embed(obs_boxes))
        _, h_n = self.gru(emb)
        hidden = h_n[0]  # [N,D]
        patch = roi_pool(flow, obs_boxes[:, -1, :], self.roi_size, sample_index)
        return hidden + self.local(patch.flatten(1))
