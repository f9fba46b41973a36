"""Flat key=value run configuration with typed validation.

One `key = value` per line, `#` comments, booleans as true/false, integer
lists comma-separated. Unknown keys, duplicates and bad types are rejected
with line diagnostics. parse -> serialize -> parse is the identity.
"""

from dataclasses import dataclass, fields

from .afrdl import TrainConfig
from .numeric import DomainError
from .synth import SynthSpec


class ConfigError(ValueError):
    """Malformed or invalid run configuration."""


@dataclass
class RunConfig:
    # synthetic corpus
    attributes: int = 8
    frames: int = 64
    behaviors: int = 6
    reactions: int = 4
    modes: int = 2
    noise: float = 0.03
    # model shape
    coeffs: int = 8
    top_k: int = 3
    layers: int = 4
    att_dim: int = 8
    hidden_dim: int = 48
    shared_mefl: bool = True
    # training
    learning_rate: float = 1e-4
    weight_decay: float = 5e-4
    epochs: int = 100
    decay_epochs: tuple = (20, 50)
    decay_factor: float = 0.1
    align_weight: float = 1.0
    dist_weight: float = 1.0
    alternate: bool = False
    # distribution / inference
    sigma: float = 0.6
    component_mode: str = "per_node"
    samples: int = 10
    predict_sigma: float = 0.0  # 0 -> use sigma
    # metrics
    metric_window: int = 0  # 0 -> frames // 10
    # misc
    seed: int = 0
    corpus_dir: str = ""
    out_dir: str = ""
    checkpoint: str = ""

    def train_config(self):
        return TrainConfig(
            learning_rate=self.learning_rate, weight_decay=self.weight_decay,
            epochs=self.epochs, decay_epochs=self.decay_epochs,
            decay_factor=self.decay_factor, sigma=self.sigma, seed=self.seed,
            align_weight=self.align_weight, dist_weight=self.dist_weight,
            alternate=self.alternate, component_mode=self.component_mode)

    def synth_spec(self):
        return SynthSpec(
            attributes=self.attributes, frames=self.frames,
            behaviors=self.behaviors, reactions=self.reactions,
            modes=self.modes, noise=self.noise, seed=self.seed)


_BOOLS = {"true": True, "false": False, "1": True, "0": False,
          "yes": True, "no": False}


def _parse_value(key, kind, text, lineno):
    try:
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if kind is bool:
            if text.lower() not in _BOOLS:
                raise ValueError(text)
            return _BOOLS[text.lower()]
        if kind is tuple:
            if not text:
                return ()
            return tuple(int(piece.strip()) for piece in text.split(","))
        return text
    except ValueError:
        raise ConfigError(
            f"line {lineno}: field {key!r} expects {kind.__name__}, "
            f"got {text!r}") from None


def _schema():
    named = {"int": int, "float": float, "bool": bool, "tuple": tuple, "str": str}
    return {f.name: (named[f.type] if isinstance(f.type, str) else f.type)
            for f in fields(RunConfig)}


def parse_config(text):
    schema = _schema()
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if key not in schema:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _parse_value(key, schema[key], val, lineno)
    cfg = RunConfig(**values)
    validate_config(cfg)
    return cfg


def validate_config(cfg):
    if cfg.coeffs > cfg.frames:
        raise ConfigError("coeffs may not exceed frames")
    if not 1 <= cfg.top_k <= cfg.attributes - 1:
        raise ConfigError(f"top_k must be in [1, {cfg.attributes - 1}]")
    if cfg.layers < 1 or cfg.att_dim < 1 or cfg.hidden_dim < 1:
        raise ConfigError("layers, att_dim and hidden_dim must be >= 1")
    if cfg.samples < 1:
        raise ConfigError("samples must be >= 1")
    if cfg.metric_window < 0 or cfg.metric_window >= cfg.frames:
        raise ConfigError("metric_window must lie in [0, frames)")
    if cfg.predict_sigma < 0:
        raise ConfigError("predict_sigma must be >= 0")
    if cfg.component_mode not in ("per_node", "global"):
        raise ConfigError("component_mode must be per_node or global")
    try:
        cfg.train_config()
        cfg.synth_spec()
    except DomainError as err:
        raise ConfigError(str(err)) from None
    return cfg


def serialize_config(cfg):
    lines = []
    for f in fields(RunConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, tuple):
            text = ",".join(str(v) for v in value)
        elif isinstance(value, float):
            text = repr(value)
        else:
            text = str(value)
        lines.append(f"{f.name} = {text}")
    return "\n".join(lines) + "\n"


def load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from None
