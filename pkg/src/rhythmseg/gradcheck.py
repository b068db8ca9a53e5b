"""Central finite-difference checks of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import class_weights, compound_loss, label_counts, one_hot
from .model import ModelConfig, forward, init_params
from .tensor import Tape, backward

# parameters spanning every block type of the network
PROBE_PARAMS = (
    "enc1.tcn.conv1.w", "enc3.tcn.conv2.w", "enc2.tcn.proj.w", "enc4.tcn.norm1.gain",
    "enc1.tif.conv1.w", "enc5.tif.conv3.w", "enc2.tif.pointwise.w", "dec3.tif.pointwise.w",
    "mha1.head0.wq", "mha3.head2.wk", "mha5.head1.wv", "mha2.out",
    "bridge.path1.conv4.w", "bridge.path2.conv1.w", "bridge.path3.conv2.b", "bridge.path4.conv1.w",
    "up1.w", "up4.w", "up6.w", "dec1.tcn.conv1.w", "dec5.tcn.conv2.w", "head.w", "head.b",
)

# |analytic - numeric| is divided by max(|analytic|, |numeric|, GRAD_FLOOR);
# below the floor the difference is float noise of the loss itself.
GRAD_FLOOR = 1e-8


@dataclass
class GradCheck:
    name: str
    index: tuple
    analytic: float
    numeric: float

    @property
    def rel_error(self) -> float:
        return abs(self.analytic - self.numeric) / max(abs(self.analytic), abs(self.numeric), GRAD_FLOOR)


def reduced_config(**overrides) -> ModelConfig:
    kw = dict(input_len=256, base_filters=4, num_classes=4, heads=4, dropout=0.0)
    kw.update(overrides)
    return ModelConfig(**kw)


def relative_error(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), GRAD_FLOOR)


def central_difference(f, arr: np.ndarray, idx, h: float = 1e-5) -> float:
    old = arr[idx]
    arr[idx] = old + h
    up = f()
    arr[idx] = old - h
    down = f()
    arr[idx] = old
    return (up - down) / (2 * h)


def model_gradcheck(cfg: ModelConfig | None = None, seed: int = 0, per_param: int = 2, batch: int = 2,
                    names=PROBE_PARAMS, h: float = 1e-5) -> list[GradCheck]:
    """Compare tape gradients of the compound loss with central differences
    at ``per_param`` random coordinates of each probed parameter."""
    cfg = cfg or reduced_config()
    rng = np.random.default_rng(seed)
    params = init_params(cfg, rng)
    for k in params:
        if k.endswith(".b") or k.endswith(".bias"):
            params[k] = rng.uniform(-0.1, 0.1, params[k].shape)
    x = rng.standard_normal((batch, cfg.input_len, 1))
    labels = rng.integers(0, cfg.num_classes, size=(batch, cfg.input_len))
    y = one_hot(labels, cfg.num_classes)
    w = class_weights(label_counts(labels, cfg.num_classes))

    def loss_value():
        probs, _ = forward(x, params, cfg)
        return float(compound_loss(probs, y, w).data)

    tape = Tape()
    probs, _ = forward(x, params, cfg, tape=tape)
    grads = backward(compound_loss(probs, y, w), tape)
    results = []
    for name in names:
        arr = params[name]
        for _ in range(per_param):
            idx = tuple(int(rng.integers(s)) for s in arr.shape)
            num = central_difference(loss_value, arr, idx, h)
            results.append(GradCheck(name, idx, float(grads[name][idx]), num))
    return results
