"""Line-based `key = value` configuration.

Lines hold one assignment each; `#` starts a comment; blank lines are
ignored. Unknown keys are rejected. Missing keys take the documented
defaults below (notably D=64, tau=0.5, lr=1e-3, K=1, groups=4).
"""

from __future__ import annotations

from dataclasses import dataclass, fields

from .correlation import PyramidSpec
from .errors import ConfigError


@dataclass(frozen=True)
class Config:
    levels: tuple = (8, 4, 2)          # pyramid spatial extents, fine to coarse
    layers: tuple = (2, 2, 2)          # correlation channels |N_p| per level
    feat_channels: tuple = (8, 8, 8)   # synthetic feature width per level
    skip_channels: tuple = (8, 8)      # low-level skip widths, coarse then fine
    d: int = 64                        # quaternion-channel embedding width
    qcl_depth: int = 2                 # quaternion conv blocks per level
    decoder_width: int = 64
    skip_width: int = 48               # 1x1 skip projection width
    groups: int = 4                    # normalization groups (GN and QN)
    tau: float = 0.5                   # fusion threshold
    k: int = 1                         # shots per episode
    seed: int = 0
    lr: float = 1e-3
    steps: int = 300
    episodes: int = 1                  # distinct synthetic episodes to train on

    def __post_init__(self) -> None:
        for key in ("levels", "layers", "feat_channels", "skip_channels"):
            object.__setattr__(self, key, tuple(getattr(self, key)))
        if not (len(self.levels) == len(self.layers) == len(self.feat_channels)):
            raise ConfigError("levels, layers and feat_channels must have equal "
                              f"lengths, got {len(self.levels)}/{len(self.layers)}"
                              f"/{len(self.feat_channels)}")
        if len(self.skip_channels) != 2:
            raise ConfigError(f"skip_channels needs exactly 2 entries, "
                              f"got {len(self.skip_channels)}")
        for key in ("levels", "layers", "feat_channels", "skip_channels"):
            if any(v < 1 for v in getattr(self, key)):
                raise ConfigError(f"{key} entries must be positive, "
                                  f"got {getattr(self, key)}")
        for key in ("d", "qcl_depth", "decoder_width", "skip_width", "groups", "k",
                    "episodes"):
            if getattr(self, key) < 1:
                shown = {"d": "D", "k": "K"}.get(key, key)
                raise ConfigError(f"{shown} must be >= 1, got {getattr(self, key)}")
        if self.d % self.groups != 0:
            raise ConfigError(f"D={self.d} must be divisible by groups={self.groups}")
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError(f"tau must lie in [0,1], got {self.tau}")
        if self.lr < 0.0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if self.steps < 0:
            raise ConfigError(f"steps must be >= 0, got {self.steps}")
        try:
            self.pyramid_spec()
        except Exception as e:
            raise ConfigError(f"levels: {e}") from None

    def pyramid_spec(self) -> PyramidSpec:
        return PyramidSpec(extents=self.levels, layers=self.layers,
                           channels=self.feat_channels)

    @property
    def frame_extent(self) -> int:
        """Mask/prediction edge length: the finest level upsampled twice."""
        return self.levels[0] * 4


_INT_TUPLE_KEYS = {"levels", "layers", "feat_channels", "skip_channels"}
_INT_KEYS = {"d", "qcl_depth", "decoder_width", "skip_width", "groups", "k",
             "seed", "steps", "episodes"}
_FLOAT_KEYS = {"tau", "lr"}
_KEY_ALIASES = {"D": "d", "K": "k"}


def _parse_value(key: str, raw: str, line_no: int):
    try:
        if key in _INT_TUPLE_KEYS:
            return tuple(int(p.strip()) for p in raw.split(",") if p.strip())
        if key in _INT_KEYS:
            return int(raw)
        return float(raw)
    except ValueError:
        raise ConfigError(f"line {line_no}: cannot parse value {raw!r} "
                          f"for key {key}") from None


def parse_config(text: str) -> Config:
    values = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected `key = value`, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        key = _KEY_ALIASES.get(key, key)
        if key not in _INT_TUPLE_KEYS | _INT_KEYS | _FLOAT_KEYS:
            raise ConfigError(f"line {line_no}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {line_no}: duplicate key {key!r}")
        values[key] = _parse_value(key, raw, line_no)
    return Config(**values)


def load_config(path: str) -> Config:
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return parse_config(text)


def config_keys() -> list:
    """Documented key names with their defaults, for --help and the README."""
    defaults = Config()
    out = []
    for f in fields(Config):
        shown = {"d": "D", "k": "K"}.get(f.name, f.name)
        out.append((shown, getattr(defaults, f.name)))
    return out
