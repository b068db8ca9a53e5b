"""Grad-CAM over the upsampled feature map that feeds the classifier head."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, DataError
from .model import ModelConfig, forward
from .tensor import Tape, backward, mean_all

TARGET = "gradcam.activation"


@dataclass
class Heatmap:
    values: np.ndarray
    target_class: int
    target_span: tuple[int, int]


def gradcam(x, params, cfg: ModelConfig, target_class: int, target_span: tuple[int, int] | None = None) -> Heatmap:
    """Attribute the mean pre-softmax logit of ``target_class`` over
    ``target_span`` to time steps.

    Filter weights are the time-averaged gradients of that score w.r.t. the
    activation map; the map is the ReLU of the weighted filter sum, resized to
    the input length and min-max scaled to [0, 1] (a flat map becomes zeros).
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    n = len(x)
    if not 0 <= target_class < cfg.num_classes:
        raise ContractError(f"class {target_class} outside [0, {cfg.num_classes})")
    start, stop = (0, n) if target_span is None else (int(target_span[0]), int(target_span[1]))
    if not 0 <= start < stop <= n:
        raise ContractError(f"target span [{start}, {stop}) is empty or outside the window")
    tape = Tape()
    _, cache = forward(x[:, None], params, cfg, training=False, tape=tape)
    act = tape.mark(cache["activation"], TARGET)
    score = mean_all(cache["logits"][start:stop, target_class])
    grad = backward(score, tape)[TARGET]
    weights = grad.mean(axis=0)
    raw = np.maximum(act.data @ weights, 0.0)
    if len(raw) != n:
        raw = np.interp(np.linspace(0, len(raw) - 1, n), np.arange(len(raw)), raw)
    lo, hi = raw.min(), raw.max()
    values = np.zeros(n) if hi - lo <= 1e-12 * max(1.0, abs(hi)) else (raw - lo) / (hi - lo)
    return Heatmap(values, target_class, (start, stop))


def write_heatmap_csv(hm: Heatmap, path):
    meta = {"target_class": hm.target_class, "target_span": list(hm.target_span)}
    lines = ["# " + json.dumps(meta), "sample_index,value"]
    lines += [f"{i},{float(v)!r}" for i, v in enumerate(hm.values)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_heatmap_csv(path) -> Heatmap:
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not lines or not lines[0].startswith("# "):
        raise DataError(f"{path}: missing JSON header line")
    meta = json.loads(lines[0][2:])
    values = np.array([float(line.split(",")[1]) for line in lines[2:] if line])
    return Heatmap(values, int(meta["target_class"]), tuple(meta["target_span"]))
