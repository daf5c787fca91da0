"""Flat ``key = value`` experiment configs with one include level."""
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigurationError

SUBCOMMANDS = ("two-layer", "scattering", "theorem1", "counterexample", "fisher-report")


def parse_value(text):
    text = text.strip()
    low = text.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if low in ("none", "null", ""):
        return None
    if "," in text:
        return tuple(parse_value(t) for t in text.split(",") if t.strip())
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "none"
    if isinstance(v, (tuple, list)):
        return ",".join(format_value(x) for x in v) + ("," if len(v) == 1 else "")
    if isinstance(v, float):
        return repr(v)
    return str(v)


def read_config(path, _depth=0):
    """Read ``key = value`` lines; ``include = other`` (relative to this file) is allowed once."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    out = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = (t.strip() for t in line.split("=", 1))
        key = key.replace("-", "_")
        if key == "include":
            if _depth >= 1:
                raise ConfigurationError(f"{path}:{lineno}: includes may not be nested")
            base = read_config(path.parent / value, _depth + 1)
            out = {**base, **out}
            continue
        out[key] = parse_value(value)
    return out


@dataclass
class ExperimentConfig:
    subcommand: str = "two-layer"
    dataset: str = None
    data_root: str = None
    subset: int = None
    seed: int = 0
    threads: int = 1
    out: str = None
    full: bool = False
    epochs: int = None
    lr: float = 0.01
    batch_size: int = 128
    rho: str = "abs"
    k: int = None
    p: int = None
    variant: str = "concentrated"
    J: int = None
    L: int = 8
    order: int = 2
    dims: tuple = None
    widths: tuple = None
    tree_dim: int = None
    nonlinearity: str = "relu_t"
    augment: bool = None
    d: int = 8
    seeds: int = 10
    control: bool = True
    frame: str = "bounded"
    lam: float = 0.0
    s_values: tuple = (0.75, 1.0, 2.0)
    sigmas: tuple = (0.0125, 0.025, 0.05, 0.1)
    sweep_dim: int = 256
    sweep_dims: tuple = (64, 256, 1024)
    sweep_n: int = 2000
    state: str = None
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_mapping(cls, mapping):
        names = {f.name for f in fields(cls)} - {"extra"}
        unknown = sorted(set(mapping) - names)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
        cfg = cls(**mapping)
        if cfg.subcommand not in SUBCOMMANDS:
            raise ConfigurationError(f"unknown subcommand {cfg.subcommand!r}")
        return cfg

    def to_mapping(self):
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "extra"}

    def dump(self):
        return "".join(f"{k} = {format_value(v)}\n" for k, v in sorted(self.to_mapping().items()))
