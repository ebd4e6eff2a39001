"""Flat ``key = value`` run configuration.

Every key has a default, so an empty file is a valid config.  Command-line
flags override file values.
"""

import configparser
import hashlib
import json
import typing
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .decoder import DecoderConfig
from .embedding import PRESETS, EmbedDims
from .errors import ConfigError
from .trainer import TrainConfig

_SECTION = "run"


@dataclass
class RunConfig:
    preset: str | None = None        # vgg | googlenet | None for custom dims
    d_h: int = 1000
    d_e: int = 300
    # training
    n_negatives: int = 50
    margin: str = "auto"
    lr: float = 1e-4
    epochs: int = 15
    dropout: float = 0.5
    checkpoint_every: int = 100
    gt_cap: int = 5
    window: int = 5
    stride: int = 1
    max_updates: int | None = None
    # decoder
    dec_lr: float = 1e-4
    dec_epochs: int = 15
    dec_d_w: int | None = None
    max_len: int = 30
    # paths and evaluation
    manifest: str | None = None
    checkpoint_dir: str = "runs"
    report_dir: str = "reports"
    top_k: str = "1,5,10"
    seed: int = 0

    def __post_init__(self):
        if self.preset is not None and self.preset not in PRESETS:
            raise ConfigError(f"unknown preset {self.preset!r}; choose from {sorted(PRESETS)}")
        if self.preset is not None:
            p = PRESETS[self.preset]
            self.d_h, self.d_e = p.d_h, p.d_e
        if self.d_h < 1 or self.d_e < 1:
            raise ConfigError("d_h and d_e must be positive")
        self.top_k_list()

    def top_k_list(self) -> tuple:
        try:
            ks = tuple(sorted({int(k) for k in str(self.top_k).split(",") if k.strip()}))
        except ValueError as exc:
            raise ConfigError(
                f"top_k must be a comma separated list of integers: {self.top_k!r}") from exc
        if not ks or ks[0] < 1:
            raise ConfigError("top_k values must be >= 1")
        return ks

    def dims(self, d_v: int, d_c: int) -> EmbedDims:
        """Network dims for a manifest; a preset must agree with its feature sizes."""
        if self.preset is not None:
            p = PRESETS[self.preset]
            if (p.d_v, p.d_c) != (d_v, d_c):
                raise ConfigError(
                    f"preset {self.preset} expects d_v={p.d_v}, d_c={p.d_c}; "
                    f"manifest has d_v={d_v}, d_c={d_c}")
        return EmbedDims(d_v=d_v, d_c=d_c, d_h=self.d_h, d_e=self.d_e)

    def train_config(self) -> TrainConfig:
        return TrainConfig(n_negatives=self.n_negatives, margin=self.margin, lr=self.lr,
                           epochs=self.epochs, dropout=self.dropout,
                           checkpoint_every=self.checkpoint_every, seed=self.seed,
                           gt_cap=self.gt_cap, window=self.window, stride=self.stride,
                           max_updates=self.max_updates)

    def decoder_config(self) -> DecoderConfig:
        return DecoderConfig(lr=self.dec_lr, epochs=self.dec_epochs, seed=self.seed,
                             d_w=self.dec_d_w, max_len=self.max_len)

    def fingerprint(self) -> str:
        blob = {k: v for k, v in asdict(self).items()
                if k not in ("manifest", "checkpoint_dir", "report_dir")}
        raw = json.dumps(blob, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(raw.encode()).hexdigest()[:16]


def _kind(t) -> tuple:
    args = typing.get_args(t)
    base = [a for a in args if a is not type(None)]
    return (base[0] if base else t), type(None) in args


_TYPES = {f.name: _kind(f.type) for f in fields(RunConfig)}


def _coerce(key: str, raw):
    kind, optional = _TYPES[key]
    if raw is None or (optional and str(raw).strip().lower() in ("", "none")):
        return None
    try:
        return kind(raw.strip() if isinstance(raw, str) else raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config key {key}: cannot parse {raw!r} as {kind.__name__}") from exc


def make_config(values: dict) -> RunConfig:
    unknown = sorted(set(values) - set(_TYPES))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return RunConfig(**{k: _coerce(k, v) for k, v in values.items()})


def read_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(f"[{_SECTION}]\n" + path.read_text())
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return dict(parser[_SECTION])


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """File values (if any) with ``overrides`` on top; ``None`` overrides are ignored."""
    values = read_config_file(path) if path is not None else {}
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = v
    return make_config(values)
