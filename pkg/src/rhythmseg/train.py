"""Mini-batch training, evaluation and sliding-window inference."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .losses import class_weights, compound_loss, label_counts
from .metrics import MetricsReport, merge_counts, report_from_counts, window_counts
from .model import ModelConfig, forward, init_params, predict
from .optim import AdamState, adam_step
from .postprocess import extract_events, merge_short
from .serialization import save_params
from .tensor import Tape, backward

log = logging.getLogger(__name__)


@dataclass
class TrainSettings:
    epochs: int = 50
    batch_size: int = 64
    lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lr_decay: float = 0.99
    loss_lambda: float = 1.0
    cce_reduction: str = "mean"
    seed: int = 0
    min_len: int = 256
    iou_threshold: float = 0.7
    average: str = "macro"


@dataclass
class TrainResult:
    params: dict
    best_params: dict
    best_epoch: int
    best_f1: float
    history: list = field(default_factory=list)


def stack(examples):
    x = np.stack([ex.x for ex in examples])[:, :, None]
    labels = np.stack([ex.labels for ex in examples])
    return x, labels


def evaluate(params, cfg: ModelConfig, examples, thresh: float = 0.7, min_len: int | None = 256,
             average: str = "macro", batch_size: int = 64, predictions=None) -> MetricsReport:
    """forward -> argmax -> short-event merge -> per-window counts -> report.

    ``predictions`` (per-window label arrays) bypasses the model.
    """
    if predictions is None:
        x, _ = stack(examples)
        predictions = predict(x[:, :, 0], params, cfg, batch_size).argmax(axis=-1)
    counts = {}
    for ex, pred in zip(examples, predictions):
        merge_counts(counts, window_counts(pred, ex.labels, thresh, min_len))
    return report_from_counts(counts, average)


def train(train_set, val_set, cfg: ModelConfig, settings: TrainSettings | None = None, *,
          params=None, checkpoint_dir=None) -> TrainResult:
    """Adam on the compound loss; validates every epoch and keeps the best
    parameters by validation macro duration F1.

    With ``checkpoint_dir`` set, writes ``epoch_000.ckpt`` (initial weights),
    ``epoch_NNN.ckpt`` after each epoch, ``best.ckpt`` and ``history.csv``.
    """
    s = settings or TrainSettings()
    init_seq, shuffle_seq, drop_seq = np.random.SeedSequence(s.seed).spawn(3)
    params = init_params(cfg, np.random.default_rng(init_seq)) if params is None else params
    shuffle_rng = np.random.default_rng(shuffle_seq)
    drop_rng = np.random.default_rng(drop_seq)
    x_all, lab_all = stack(train_set)
    weights = class_weights(label_counts(lab_all, cfg.num_classes), cfg.num_classes)
    eye = np.eye(cfg.num_classes)
    state = AdamState(s.lr, s.beta1, s.beta2, s.adam_eps, s.lr_decay)
    out = Path(checkpoint_dir) if checkpoint_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        save_params(params, out / "epoch_000.ckpt")

    def score():
        if not val_set:
            return 0.0
        return evaluate(params, cfg, val_set, s.iou_threshold, s.min_len, s.average).f1("duration")

    best_f1 = score()
    best_params = {k: v.copy() for k, v in params.items()}
    best_epoch = 0
    history = []
    for epoch in range(1, s.epochs + 1):
        order = shuffle_rng.permutation(len(train_set))
        losses = []
        for b in range(0, len(order), s.batch_size):
            idx = order[b:b + s.batch_size]
            tape = Tape()
            probs, _ = forward(x_all[idx], params, cfg, training=True, tape=tape, rng=drop_rng)
            loss = compound_loss(probs, eye[lab_all[idx]], weights, s.loss_lambda, s.cce_reduction)
            grads = backward(loss, tape)
            adam_step(params, grads, state, epoch - 1)
            losses.append(float(loss.data) * len(idx))
        mean_loss = sum(losses) / len(order)
        f1 = score()
        history.append({"epoch": epoch, "loss": mean_loss, "val_duration_f1": f1})
        log.info("epoch %d loss %.6f val duration F1 %.4f", epoch, mean_loss, f1)
        if f1 > best_f1:
            best_f1, best_epoch = f1, epoch
            best_params = {k: v.copy() for k, v in params.items()}
        if out:
            save_params(params, out / f"epoch_{epoch:03d}.ckpt")
    if out:
        save_params(best_params, out / "best.ckpt")
        lines = ["epoch,loss,val_duration_f1"] + [f"{h['epoch']},{float(h['loss'])!r},{float(h['val_duration_f1'])!r}"
                                                   for h in history]
        (out / "history.csv").write_text("\n".join(lines) + "\n")
    return TrainResult(params, best_params, best_epoch, best_f1, history)


def infer_record(samples, params, cfg: ModelConfig, stride: int | None = None, min_len: int = 256):
    """Label a long (already preprocessed) record with sliding windows.

    Each window is z-scored, labelled and postprocessed on its own; every
    sample then takes the label from the window whose centre is nearest.
    Returns ``(labels, events)``; samples past the last full window keep the
    last window's labels.
    """
    from .signals import zscore

    L = cfg.input_len
    stride = L if stride is None else stride
    n = len(samples)
    if n < L:
        return np.zeros(0, dtype=np.int64), []
    starts = list(range(0, n - L + 1, stride))
    windows = np.stack([zscore(samples[s:s + L]) for s in starts])
    raw = predict(windows, params, cfg).argmax(axis=-1)
    labels = np.empty(n, dtype=np.int64)
    best = np.full(n, np.inf)
    for s, lab in zip(starts, raw):
        fixed = np.empty(L, dtype=np.int64)
        for ev in merge_short(extract_events(lab), min_len):
            fixed[ev.onset:ev.offset] = ev.class_id
        dist = np.abs(np.arange(s, s + L) - (s + (L - 1) / 2))
        take = dist < best[s:s + L]
        labels[s:s + L][take] = fixed[take]
        best[s:s + L][take] = dist[take]
    last = starts[-1] + L
    if last < n:
        labels[last:] = labels[last - 1]
    return labels, extract_events(labels)
