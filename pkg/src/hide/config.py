"""Model configuration: flat key=value text files, canonical hashing.

Config keys use the architecture's own names (M, s, C_d, ...).  The
"lambda" key maps to the ``lam`` attribute because of the Python
keyword.  Variants select which modules a model instantiates:

    baseline  single-level dictionary + shallow estimator
    hd        hierarchical dictionaries + shallow estimator
    cape      single-level dictionary + context-aware estimator
    hide      hierarchical dictionaries + context-aware estimator
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace

from .constants import SIGMA_MAX, SIGMA_MIN
from .errors import ConfigError

VARIANTS = ("baseline", "hd", "cape", "hide")

_VARIANT_ALIASES = {
    "baseline": "baseline",
    "hd": "hd", "+hd": "hd",
    "cape": "cape", "+cape": "cape",
    "hide": "hide", "hd+cape": "hide",
}

_KEY_TO_ATTR = {"lambda": "lam"}
_ATTR_TO_KEY = {"lam": "lambda"}


def normalize_variant(name: str) -> str:
    v = _VARIANT_ALIASES.get(name.strip().lower())
    if v is None:
        raise ConfigError(f"unknown variant {name!r}; expected one of {VARIANTS}")
    return v


@dataclass
class ModelConfig:
    variant: str = "hide"
    seed: int = 0
    M: int = 32                 # latent channels
    s: int = 4                  # channel slices
    hyper_channels: int = 16
    C_d: int = 128              # dictionary entry dimension
    N_G: int = 64               # global dictionary entries
    N_D: int = 64               # detail dictionary entries
    heads: int = 4
    C_ctx: int = 64             # slice context channels
    sigma_min: float = SIGMA_MIN
    sigma_max: float = SIGMA_MAX
    lam: float = 0.0035
    tie_temperatures: bool = False
    dtype: str = "float64"
    steps: int = 500
    batch_size: int = 4
    lr: float = 1e-4
    lr_drop_frac: float = 0.8   # lr decays x0.1 at this fraction of steps
    patch_size: int = 64

    def __post_init__(self):
        self.variant = normalize_variant(self.variant)
        if self.s < 1 or self.M < self.s:
            raise ConfigError(f"need 1 <= s <= M, got s={self.s}, M={self.M}")
        if self.C_d % self.heads != 0:
            raise ConfigError(f"C_d={self.C_d} must be divisible by heads={self.heads}")
        if self.sigma_min != SIGMA_MIN or self.sigma_max != SIGMA_MAX:
            raise ConfigError("sigma bounds are fixed by the coder at "
                              f"[{SIGMA_MIN}, {SIGMA_MAX}]")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")

    def with_overrides(self, **kw) -> "ModelConfig":
        return replace(self, **kw)

    def to_text(self) -> str:
        lines = []
        for f in sorted(fields(self), key=lambda f: _ATTR_TO_KEY.get(f.name, f.name)):
            key = _ATTR_TO_KEY.get(f.name, f.name)
            value = getattr(self, f.name)
            if isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{key}={value}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> bytes:
        return hashlib.sha256(self.to_text().encode("utf-8")).digest()[:8]


def parse_config_text(text: str, base: ModelConfig | None = None) -> ModelConfig:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        attr = _KEY_TO_ATTR.get(key, key)
        values[attr] = value
    base = base or ModelConfig()
    kwargs = {}
    for f in fields(ModelConfig):
        if f.name not in values:
            continue
        raw = values.pop(f.name)
        if f.type == "bool" or isinstance(getattr(base, f.name), bool):
            kwargs[f.name] = raw.lower() in ("1", "true", "yes")
        elif isinstance(getattr(base, f.name), int):
            kwargs[f.name] = int(raw)
        elif isinstance(getattr(base, f.name), float):
            kwargs[f.name] = float(raw)
        else:
            kwargs[f.name] = raw
    if values:
        raise ConfigError(f"unknown config keys: {sorted(values)}")
    return replace(base, **kwargs)


def load_config(path: str, base: ModelConfig | None = None) -> ModelConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read(), base=base)
