"""Encoder / bridge / decoder sequence labeller.

Parameters live in a flat ``dict`` mapping a dotted layer path to a float64
array, e.g. ``"enc3.tcn.conv1.w"`` or ``"mha2.head0.wq"``.  Conv weights are
``(kernel, in_channels, out_channels)``.

Layer stack for the default configuration (input 2560 x 1, 10 classes)::

    enc1..enc5   TCN+TIF block (64..1024 filters, dilation 1..16), max-pool /2
    pool         one extra max-pool                          -> 40 x 1024
    bridge       x + four chains of kernel-2 dilated convs   -> 40 x 1024
    up1..up5     transposed conv x2, + MHA(pooled encoder output), dec block
    up6          transposed conv x2                          -> 2560 x 64
    head         kernel-3 conv to classes, softmax           -> 2560 x 10
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DimensionError, InputError
from .tensor import (
    ConvSpec,
    Tape,
    Tensor,
    add,
    concat_channels,
    conv1d,
    conv1d_transpose,
    dropout,
    layer_norm,
    matmul,
    max_pool2,
    relu,
    scale,
    softmax,
)

N_STAGES = 5
BRIDGE_RATES = (1, 2, 4, 8)


@dataclass
class ModelConfig:
    input_len: int = 2560
    num_classes: int = 10
    base_filters: int = 64
    heads: int = 4
    dropout: float = 0.2
    seed: int = 0
    encoder_dilations: tuple[int, ...] = (1, 2, 4, 8, 16)
    decoder_dilations: tuple[int, ...] = (1, 2, 4, 8, 16)
    tcn_kernel: int = 3
    tif_kernel: int = 10
    bridge_kernel: int = 2
    head_kernel: int = 3
    layer_norm_eps: float = 1e-5
    use_tif: bool = True
    use_mha: bool = True
    use_bridge: bool = True
    init_scale: float = 1.0
    filters: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        self.encoder_dilations = tuple(int(d) for d in self.encoder_dilations)
        self.decoder_dilations = tuple(int(d) for d in self.decoder_dilations)
        self.filters = tuple(self.base_filters * 2 ** i for i in range(N_STAGES))
        self.validate()

    def validate(self):
        if self.input_len < 64 or self.input_len % 64:
            raise ConfigurationError(f"input_len must be a positive multiple of 64, got {self.input_len}")
        if self.num_classes < 2:
            raise ConfigurationError("num_classes must be >= 2")
        if self.base_filters < 1 or self.heads < 1:
            raise ConfigurationError("base_filters and heads must be >= 1")
        if self.base_filters % self.heads:
            raise ConfigurationError(
                f"every skip width must divide into {self.heads} heads; base_filters={self.base_filters}")
        if len(self.encoder_dilations) != N_STAGES or len(self.decoder_dilations) != N_STAGES:
            raise ConfigurationError("need five encoder and five decoder dilation rates")
        if min(self.encoder_dilations + self.decoder_dilations) < 1:
            raise ConfigurationError("dilation rates must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError(f"dropout must be in [0, 1), got {self.dropout}")


# --------------------------------------------------------------------------
# parameter layout


def _block_shapes(prefix: str, cin: int, f: int, cfg: ModelConfig) -> dict[str, tuple]:
    k, kt = cfg.tcn_kernel, cfg.tif_kernel
    s = {
        f"{prefix}.tcn.conv1.w": (k, cin, f), f"{prefix}.tcn.conv1.b": (f,),
        f"{prefix}.tcn.norm1.gain": (f,), f"{prefix}.tcn.norm1.bias": (f,),
        f"{prefix}.tcn.conv2.w": (k, f, f), f"{prefix}.tcn.conv2.b": (f,),
        f"{prefix}.tcn.norm2.gain": (f,), f"{prefix}.tcn.norm2.bias": (f,),
    }
    if cin != f:
        s[f"{prefix}.tcn.proj.w"] = (1, cin, f)
        s[f"{prefix}.tcn.proj.b"] = (f,)
    s.update({
        f"{prefix}.tif.conv1.w": (kt, cin, f), f"{prefix}.tif.conv1.b": (f,),
        f"{prefix}.tif.conv2.w": (kt, f, f), f"{prefix}.tif.conv2.b": (f,),
        f"{prefix}.tif.conv3.w": (kt, f, f), f"{prefix}.tif.conv3.b": (f,),
        f"{prefix}.tif.pointwise.w": (1, 2 * f, f), f"{prefix}.tif.pointwise.b": (f,),
    })
    return s


def _mha_shapes(prefix: str, d: int, heads: int) -> dict[str, tuple]:
    dk = d // heads
    s = {}
    for h in range(heads):
        s[f"{prefix}.head{h}.wq"] = (d, dk)
        s[f"{prefix}.head{h}.wk"] = (d, dk)
        s[f"{prefix}.head{h}.wv"] = (d, dk)
    s[f"{prefix}.out"] = (heads * dk, d)
    return s


def param_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    """Ordered map of every parameter path to its shape."""
    F = cfg.filters
    shapes: dict[str, tuple] = {}
    cin = 1
    for i, f in enumerate(F):
        shapes.update(_block_shapes(f"enc{i + 1}", cin, f, cfg))
        cin = f
    top = F[-1]
    for p, depth in enumerate(range(len(BRIDGE_RATES), 0, -1), start=1):
        for j in range(depth):
            shapes[f"bridge.path{p}.conv{j + 1}.w"] = (cfg.bridge_kernel, top, top)
            shapes[f"bridge.path{p}.conv{j + 1}.b"] = (top,)
    dec_filters = F[::-1]
    cin = top
    for i, f in enumerate(dec_filters):
        shapes[f"up{i + 1}.w"] = (2, cin, f)
        shapes[f"up{i + 1}.b"] = (f,)
        shapes.update(_mha_shapes(f"mha{i + 1}", f, cfg.heads))
        shapes.update(_block_shapes(f"dec{i + 1}", f, f, cfg))
        cin = f
    shapes["up6.w"] = (2, F[0], F[0])
    shapes["up6.b"] = (F[0],)
    shapes["head.w"] = (cfg.head_kernel, F[0], cfg.num_classes)
    shapes["head.b"] = (cfg.num_classes,)
    return shapes


def param_count(cfg: ModelConfig) -> int:
    return sum(math.prod(s) for s in param_shapes(cfg).values())


def _fan_in(name: str, shape: tuple) -> int:
    if name.startswith("up") and name.endswith(".w"):
        return shape[1]  # one input step per output step
    if len(shape) == 3:
        return shape[0] * shape[1]
    return shape[0]


def init_params(cfg: ModelConfig, rng: np.random.Generator | int | None = None) -> dict[str, np.ndarray]:
    """Fan-in scaled uniform weights, zero biases, unit layer-norm gains."""
    if rng is None or isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(cfg.seed if rng is None else rng)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".gain"):
            params[name] = np.ones(shape)
        elif name.endswith(".b") or name.endswith(".bias"):
            params[name] = np.zeros(shape)
        else:
            limit = cfg.init_scale * math.sqrt(3.0 / _fan_in(name, shape))
            params[name] = rng.uniform(-limit, limit, size=shape)
    return params


def check_params(params, cfg: ModelConfig):
    expected = param_shapes(cfg)
    missing = [k for k in expected if k not in params]
    if missing:
        raise ConfigurationError(f"missing parameters, e.g. {missing[:3]}")
    extra = [k for k in params if k not in expected]
    if extra:
        raise ConfigurationError(f"unexpected parameters, e.g. {extra[:3]}")
    for k, shape in expected.items():
        if tuple(np.shape(_raw(params[k]))) != shape:
            raise ConfigurationError(f"parameter {k} has shape {np.shape(_raw(params[k]))}, config needs {shape}")


def _raw(v):
    return v.data if isinstance(v, Tensor) else v


def bind(params, tape: Tape | None = None) -> dict[str, Tensor]:
    """Wrap raw arrays as tensors, registering them as named leaves on ``tape``."""
    if tape is None:
        return {k: v if isinstance(v, Tensor) else Tensor(v) for k, v in params.items()}
    return {k: tape.param(k, _raw(v)) for k, v in params.items()}


def sub(p, prefix: str) -> dict:
    head = prefix + "."
    return {k[len(head):]: v for k, v in p.items() if k.startswith(head)}


# --------------------------------------------------------------------------
# building blocks


def tcn_tif_block(x: Tensor, p, dilation: int = 1, *, tcn_kernel: int = 3, tif_kernel: int = 10,
                  rate: float = 0.0, training: bool = False, rng=None, use_tif: bool = True,
                  eps: float = 1e-5) -> Tensor:
    """Residual TCN path plus multiscale TIF path, summed.

    TCN: two rounds of causal dilated conv -> layer norm -> ReLU -> dropout,
    added to the input (1x1 projection when the width changes).
    TIF: three chained kernel-10 same-padded convs; the second and third
    outputs are concatenated and fused by a 1x1 conv.
    """
    cin = p["tcn.conv1.w"].shape[1]
    if x.shape[-1] != cin:
        raise DimensionError(f"block expects {cin} input channels, got {x.shape[-1]}", axis="channels")
    causal = ConvSpec(tcn_kernel, dilation, padding="causal")
    h = conv1d(x, p["tcn.conv1.w"], p["tcn.conv1.b"], causal)
    h = dropout(relu(layer_norm(h, p["tcn.norm1.gain"], p["tcn.norm1.bias"], eps)), rate, rng, training)
    h = conv1d(h, p["tcn.conv2.w"], p["tcn.conv2.b"], causal)
    h = dropout(relu(layer_norm(h, p["tcn.norm2.gain"], p["tcn.norm2.bias"], eps)), rate, rng, training)
    if "tcn.proj.w" in p:
        res = conv1d(x, p["tcn.proj.w"], p["tcn.proj.b"], ConvSpec(1, padding="none"))
    else:
        res = x
    out = add(res, h)
    if not use_tif:
        return out
    wide = ConvSpec(tif_kernel, padding="same")
    c1 = relu(conv1d(x, p["tif.conv1.w"], p["tif.conv1.b"], wide))
    c2 = relu(conv1d(c1, p["tif.conv2.w"], p["tif.conv2.b"], wide))
    c3 = relu(conv1d(c2, p["tif.conv3.w"], p["tif.conv3.b"], wide))
    tif = conv1d(concat_channels([c2, c3]), p["tif.pointwise.w"], p["tif.pointwise.b"], ConvSpec(1, padding="none"))
    return add(out, tif)


def mha(x: Tensor, p, heads: int, return_attention: bool = False):
    """Multi-head self-attention with Q = K = V = x and no positional encoding."""
    d = x.shape[-1]
    if d % heads:
        raise ConfigurationError(f"width {d} is not divisible by {heads} heads")
    dk = d // heads
    outs, attn = [], []
    for h in range(heads):
        q = matmul(x, p[f"head{h}.wq"])
        k = matmul(x, p[f"head{h}.wk"])
        v = matmul(x, p[f"head{h}.wv"])
        a = softmax(scale(matmul(q, k, transpose_b=True), 1.0 / math.sqrt(dk)))
        attn.append(a)
        outs.append(matmul(a, v))
    y = matmul(outs[0] if heads == 1 else concat_channels(outs), p["out"])
    return (y, attn) if return_attention else y


def bridge(x: Tensor, p, rates=BRIDGE_RATES, kernel: int = 2) -> Tensor:
    """Input plus four parallel chains of causal dilated convs.

    Chain ``i`` uses the first ``len(rates) - i + 1`` rates, with ReLU between
    consecutive convs.
    """
    top = p["path1.conv1.w"].shape[1]
    if x.shape[-1] != top:
        raise DimensionError(f"bridge expects {top} channels, got {x.shape[-1]}", axis="channels")
    terms = [x]
    for path, depth in enumerate(range(len(rates), 0, -1), start=1):
        h = x
        for j in range(depth):
            if j:
                h = relu(h)
            h = conv1d(h, p[f"path{path}.conv{j + 1}.w"], p[f"path{path}.conv{j + 1}.b"],
                       ConvSpec(kernel, rates[j], padding="causal"))
        terms.append(h)
    return add(*terms)


# --------------------------------------------------------------------------
# full network


def _prepare_input(x, cfg: ModelConfig) -> Tensor:
    data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    if data.ndim == 1:
        data = data[:, None]
    if data.ndim not in (2, 3) or data.shape[-1] != 1:
        raise DimensionError(f"input must be (time, 1) or (batch, time, 1), got {data.shape}", axis="channels")
    if data.shape[-2] != cfg.input_len:
        raise DimensionError(f"input length {data.shape[-2]} != configured {cfg.input_len}", axis="time")
    if not np.all(np.isfinite(data)):
        raise InputError("input contains NaN or Inf")
    return x if isinstance(x, Tensor) and x.data is data else Tensor(data)


def forward(x, params, cfg: ModelConfig, training: bool = False, *, tape: Tape | None = None,
            rng: np.random.Generator | None = None, skip_mha: bool = False):
    """Run the network; returns ``(probabilities, cache)``.

    ``cache`` holds ``logits``, ``activation`` (the upsampled 64-filter map
    feeding the head, used by Grad-CAM), ``params`` (the bound tensors) and
    ``layers``: ``(row, name, per-sample shape)`` for every stage.
    """
    x = _prepare_input(x, cfg)
    if not isinstance(next(iter(params.values())), Tensor) or tape is not None:
        check_params(params, cfg)
        p = bind(params, tape)
    else:
        p = params
    if training and cfg.dropout > 0 and rng is None:
        rng = np.random.default_rng(cfg.seed)
    rate = cfg.dropout
    layers = []

    def log(row, name, t):
        layers.append((row, name, tuple(t.shape[-2:])))

    def block(h, prefix, dil):
        return tcn_tif_block(h, sub(p, prefix), dil, tcn_kernel=cfg.tcn_kernel, tif_kernel=cfg.tif_kernel,
                             rate=rate, training=training, rng=rng, use_tif=cfg.use_tif, eps=cfg.layer_norm_eps)

    log(1, "input", x)
    h = x
    skips = []
    row = 2
    for i in range(N_STAGES):
        h = block(h, f"enc{i + 1}", cfg.encoder_dilations[i])
        log(row, f"enc{i + 1}", h)
        h = max_pool2(h)
        log(row + 1, f"pool{i + 1}", h)
        skips.append(h)
        row += 2
    h = max_pool2(h)
    log(12, "pool6", h)
    if cfg.use_bridge:
        h = bridge(h, sub(p, "bridge"), kernel=cfg.bridge_kernel)
    log(13, "bridge", h)

    rows = [(14, "14"), (16, 17), (19, 20), (22, 23), (25, 26)]
    block_rows = [15, 18, 21, 24, 27]
    for i in range(N_STAGES):
        h = relu(conv1d_transpose(h, p[f"up{i + 1}.w"], p[f"up{i + 1}.b"], 2))
        up_row, add_row = rows[i]
        log(up_row, f"up{i + 1}", h)
        if cfg.use_mha and not skip_mha:
            h = add(h, mha(skips[N_STAGES - 1 - i], sub(p, f"mha{i + 1}"), cfg.heads))
        log(add_row, f"skip{i + 1}", h)
        h = block(h, f"dec{i + 1}", cfg.decoder_dilations[i])
        log(block_rows[i], f"dec{i + 1}", h)
    act = relu(conv1d_transpose(h, p["up6.w"], p["up6.b"], 2))
    log(28, "up6", act)
    logits = conv1d(act, p["head.w"], p["head.b"], ConvSpec(cfg.head_kernel, padding="same"))
    log(29, "head", logits)
    probs = softmax(logits)
    cache = {"logits": logits, "activation": act, "params": p, "layers": layers, "skips": skips}
    return probs, cache


def predict(x, params, cfg: ModelConfig, batch_size: int = 64) -> np.ndarray:
    """Per-sample class probabilities for ``(n, time)`` windows, no tape."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None]
    bound = bind(params)
    out = []
    for s in range(0, len(x), batch_size):
        probs, _ = forward(x[s:s + batch_size, :, None], bound, cfg)
        out.append(probs.data)
    res = np.concatenate(out, axis=0)
    return res[0] if single else res
