"""Flat ``key = value`` run configuration.

One setting per line, ``#`` starts a comment, unknown keys are rejected::

    # desk-scale run
    input_len = 256
    base_filters = 4
    lr = 5e-4
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .errors import ConfigurationError
from .model import ModelConfig
from .train import TrainSettings

DATA_DIR_ENV = "RHYTHMSEG_DATA_DIR"


@dataclass
class RunConfig:
    # model
    input_len: int = 2560
    num_classes: int = 10
    base_filters: int = 64
    heads: int = 4
    dropout: float = 0.2
    encoder_dilations: tuple = (1, 2, 4, 8, 16)
    decoder_dilations: tuple = (1, 2, 4, 8, 16)
    use_tif: bool = True
    use_mha: bool = True
    use_bridge: bool = True
    init_scale: float = 1.0
    # loss and optimizer
    loss_lambda: float = 1.0
    cce_reduction: str = "mean"
    lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    lr_decay: float = 0.99
    batch_size: int = 64
    epochs: int = 50
    # preprocessing
    target_fs: float = 256.0
    highpass_cutoff: float = 0.5
    filter_order: int = 3
    window_stride: int = 0
    # synthetic data
    synth_records: int = 16
    synth_seconds: float = 120.0
    synth_fs: float = 360.0
    synth_short_fraction: float = 0.05
    # postprocessing and scoring
    min_len: int = 256
    iou_threshold: float = 0.7
    average: str = "macro"
    # folds
    folds: int = 5
    fold: int = 0
    fold_seed: int = 0
    eval_split: str = "val"
    seed: int = 0
    # paths (empty = derived from data_dir)
    data_dir: str = ""
    dataset: str = ""
    out_dir: str = ""
    checkpoint: str = ""

    def __post_init__(self):
        if not self.data_dir:
            self.data_dir = os.environ.get(DATA_DIR_ENV, "data")
        if self.cce_reduction not in ("mean", "sum"):
            raise ConfigurationError(f"cce_reduction must be mean or sum, got {self.cce_reduction!r}")
        if self.average not in ("macro", "micro"):
            raise ConfigurationError(f"average must be macro or micro, got {self.average!r}")
        if self.eval_split not in ("val", "train", "all"):
            raise ConfigurationError(f"eval_split must be val, train or all, got {self.eval_split!r}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigurationError("batch_size must be >= 1 and epochs >= 0")
        if not 0 <= self.fold < self.folds:
            raise ConfigurationError(f"fold {self.fold} outside [0, {self.folds})")

    # derived paths
    @property
    def dataset_path(self) -> Path:
        return Path(self.dataset or Path(self.data_dir) / "windows.bin")

    @property
    def out_path(self) -> Path:
        return Path(self.out_dir or Path(self.data_dir) / "run")

    @property
    def checkpoint_path(self) -> Path:
        return Path(self.checkpoint or self.out_path / "best.ckpt")

    @property
    def raw_dir(self) -> Path:
        return Path(self.data_dir) / "raw"

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            input_len=self.input_len, num_classes=self.num_classes, base_filters=self.base_filters,
            heads=self.heads, dropout=self.dropout, seed=self.seed,
            encoder_dilations=self.encoder_dilations, decoder_dilations=self.decoder_dilations,
            use_tif=self.use_tif, use_mha=self.use_mha, use_bridge=self.use_bridge, init_scale=self.init_scale)

    def train_settings(self) -> TrainSettings:
        return TrainSettings(
            epochs=self.epochs, batch_size=self.batch_size, lr=self.lr, beta1=self.beta1, beta2=self.beta2,
            adam_eps=self.adam_eps, lr_decay=self.lr_decay, loss_lambda=self.loss_lambda,
            cce_reduction=self.cce_reduction, seed=self.seed, min_len=self.min_len,
            iou_threshold=self.iou_threshold, average=self.average)

    def dumps(self) -> str:
        lines = []
        for k, v in asdict(self).items():
            if isinstance(v, tuple):
                v = ",".join(str(i) for i in v)
            elif isinstance(v, bool):
                v = str(v).lower()
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    default = _FIELDS[key].default
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("true", "1", "yes", "on"):
                return True
            if raw.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(int(v) for v in raw.replace(" ", "").split(",") if v)
    except ValueError as exc:
        raise ConfigurationError(f"bad value for {key}: {exc}") from exc
    return raw


def parse_pairs(lines, source: str = "<config>") -> dict:
    values = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigurationError(f"{source}:{lineno}: unknown key {key!r}")
        values[key] = _coerce(key, raw)
    return values


def load_config(path=None, overrides=()) -> RunConfig:
    values = {}
    if path:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        values.update(parse_pairs(text.splitlines(), str(path)))
    values.update(parse_pairs(overrides, "--set"))
    return RunConfig(**values)
