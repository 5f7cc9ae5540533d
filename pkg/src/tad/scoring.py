"""Frame anomaly scores, exact ranking AUC, and score reporting."""

from __future__ import annotations

import csv
import warnings
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def score_flow(recon: np.ndarray, target: np.ndarray) -> float:
    """Mean endpoint distance between two [2,H,W] flow fields."""
    recon = np.asarray(recon, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if recon.shape != target.shape or recon.shape[0] != 2:
        raise ValueError(f"expected matching [2,H,W] fields, got "
                         f"{recon.shape} vs {target.shape}")
    du = target[0] - recon[0]
    dv = target[1] - recon[1]
    return float(np.sqrt(du * du + dv * dv).mean())


class PredictionBuffer:
    """Rolling store of box rollouts, queried for the spread at each frame.

    At frame t the rollout made at frame t-j contains a prediction for t at
    step j-1. The frame score is, per object, the population standard
    deviation over those competing predictions of the absolute coordinate
    error, meaned over the 4 box components, then the maximum over objects.
    Objects seen by fewer than two usable rollouts are skipped; a frame where
    no object has two is scored 0 and flagged as warm-up.
    """

    def __init__(self, delta: int, pred_len: int):
        if delta < 1:
            raise ValueError("delta must be >= 1")
        self.delta = delta
        self.pred_len = pred_len
        self._rollouts: dict[int, deque] = {}

    def push(self, t: int, object_ids: np.ndarray, rollouts: np.ndarray) -> None:
        """Record rollouts [N,pred_len,4] produced at frame t."""
        for obj_id, rollout in zip(object_ids, rollouts):
            store = self._rollouts.setdefault(int(obj_id), deque(maxlen=self.delta))
            store.append((t, np.asarray(rollout, dtype=np.float64)))

    def score(self, t: int, object_ids: np.ndarray,
              boxes: np.ndarray) -> tuple[float, bool]:
        """Score frame t given the observed boxes [N,4]; returns (s_l, warm)."""
        best = None
        for obj_id, box in zip(object_ids, boxes):
            store = self._rollouts.get(int(obj_id))
            if not store:
                continue
            errors = []
            for made_at, rollout in store:
                step = t - made_at - 1
                if 0 <= step < self.pred_len and t - made_at <= self.delta:
                    errors.append(np.abs(np.asarray(box, dtype=np.float64)
                                         - rollout[step]))
            if len(errors) < 2:
                continue
            spread = float(np.std(np.stack(errors), axis=0).mean())
            best = spread if best is None else max(best, spread)
        if best is None:
            return 0.0, True
        return best, False


def minmax_normalize(values: np.ndarray) -> np.ndarray:
    """Scale to [0,1]; a constant series maps to all zeros."""
    values = np.asarray(values, dtype=np.float64)
    lo, hi = values.min(), values.max()
    if hi - lo == 0:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


def fuse_scores(s_e: np.ndarray, s_l: np.ndarray, alpha: float = 0.4) -> np.ndarray:
    """Normalized convex mix of the two score series, normalized again."""
    s_e, s_l = np.asarray(s_e, dtype=np.float64), np.asarray(s_l, dtype=np.float64)
    if s_e.shape != s_l.shape:
        raise ValueError(f"series length mismatch {s_e.shape} vs {s_l.shape}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    mixed = alpha * minmax_normalize(s_e) + (1 - alpha) * minmax_normalize(s_l)
    return minmax_normalize(mixed)


def frame_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Probability a random anomalous frame outscores a random normal one,
    ties at half weight. Counting via sorted search, no pair enumeration."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError(f"scores/labels length mismatch {scores.shape} vs {labels.shape}")
    pos = scores[labels == 1]
    neg = np.sort(scores[labels == 0])
    if pos.size == 0 or neg.size == 0:
        raise ValueError("AUC needs at least one frame of each class")
    below = np.searchsorted(neg, pos, side="left")
    upto = np.searchsorted(neg, pos, side="right")
    wins = int(below.sum())
    ties = int((upto - below).sum())
    return (wins + 0.5 * ties) / (pos.size * neg.size)


def per_class_auc(scores: np.ndarray, labels: np.ndarray,
                  categories: np.ndarray, ego_flags: np.ndarray) -> dict:
    """AUC overall and per (category, ego-flag) bucket, plus ego groupings.

    Each bucket's positives are its anomalous frames; negatives are all
    label-0 frames. Buckets without positives are omitted with a warning.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    categories = np.asarray(categories)
    ego_flags = np.asarray(ego_flags, dtype=bool)
    report: dict = {"overall": frame_auc(scores, labels), "buckets": {}}
    neg_mask = labels == 0
    pos_mask = labels == 1
    pairs = sorted({(str(c), bool(e)) for c, e in
                    zip(categories[pos_mask], ego_flags[pos_mask])})
    for code, flag in pairs:
        key = f"{code}/{'ego' if flag else 'non_ego'}"
        mask = neg_mask | (pos_mask & (categories == code) & (ego_flags == flag))
        report["buckets"][key] = frame_auc(scores[mask], labels[mask])
    for name, group in (("ego", ego_flags), ("non_ego", ~ego_flags)):
        if not (pos_mask & group).any():
            warnings.warn(f"no anomalous frames in group {name!r}; omitting its AUC")
            report[name] = None
            continue
        mask = neg_mask | (pos_mask & group)
        report[name] = frame_auc(scores[mask], labels[mask])
    return report


@dataclass
class ScoreSeries:
    """Per-frame scores for one clip over the frames that could be scored."""

    clip_id: str
    frames: np.ndarray      # [T'] frame indices
    s_e: np.ndarray
    s_l: np.ndarray
    s_f: np.ndarray
    labels: np.ndarray
    warm: np.ndarray = field(default=None)  # True where s_l was a warm-up zero

    def __post_init__(self):
        n = len(self.frames)
        for name in ("s_e", "s_l", "s_f", "labels"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} length does not match frames")
        if self.warm is None:
            self.warm = np.zeros(n, dtype=bool)


def write_scores_csv(path: str | Path, series: ScoreSeries) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "s_e", "s_l", "s_f", "label"])
        for i in range(len(series.frames)):
            writer.writerow([int(series.frames[i]),
                             f"{series.s_e[i]:.9g}",
                             f"{series.s_l[i]:.9g}",
                             f"{series.s_f[i]:.9g}",
                             int(series.labels[i])])


def plot_score_curve(series: ScoreSeries, path: str | Path) -> None:
    """Line plot of the three scores with anomalous spans shaded red."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(8, 3))
    ax.plot(series.frames, series.s_e, label="s_e", color="tab:blue", alpha=0.6)
    ax.plot(series.frames, series.s_l, label="s_l", color="tab:green", alpha=0.6)
    ax.plot(series.frames, series.s_f, label="s_f", color="tab:red", linewidth=2)
    in_span = False
    start = None
    for i, frame in enumerate(series.frames):
        if series.labels[i] == 1 and not in_span:
            in_span, start = True, frame
        elif series.labels[i] == 0 and in_span:
            ax.axvspan(start - 0.5, series.frames[i - 1] + 0.5, color="red", alpha=0.15)
            in_span = False
    if in_span:
        ax.axvspan(start - 0.5, series.frames[-1] + 0.5, color="red", alpha=0.15)
    ax.set_xlabel("frame")
    ax.set_ylabel("score")
    ax.set_title(series.clip_id)
    ax.legend(loc="upper left", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
