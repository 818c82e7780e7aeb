"""Run configuration: scale presets, derived layer widths, and the
key = value config-file format with CLI overrides.

A preset pins the scale knobs (feature width, image size, cloud sizes); every
other field keeps its default unless a config file or explicit override says
otherwise. Precedence: defaults < preset < config file < overrides. All
derived widths are pure functions of the stored fields, so a serialized
config fully determines every parameter shape.
"""

import configparser
import dataclasses
import hashlib
import io

VARIANTS = ("full", "no-ipadain", "swap-features", "no-local", "no-global",
            "serial", "no-image", "coarse-only")

# scale knobs per preset: feature width C, square image size, points per
# cloud N, grid points per folded surface, surface count M, kNN k, batch
PRESETS = {
    "full": dict(channels=1024, image_size=224, n_points=2048, grid_points=512,
                 surfaces=4, k_neighbors=16, batch_size=8),
    "desk": dict(channels=128, image_size=64, n_points=512, grid_points=128,
                 surfaces=4, k_neighbors=16, batch_size=4),
    "micro": dict(channels=16, image_size=16, n_points=16, grid_points=8,
                  surfaces=2, k_neighbors=2, batch_size=2),
}

# reference widths at C=1024; everything scales by C/1024 (floor 1)
_POINT_ENC_WIDTHS = (64, 64, 64, 128, 1024)
_CONV_CHANNELS = (32, 64, 128, 256, 512, 1024, 1024)
CONV_STRIDES = (2, 2, 2, 2, 2, 1, 1)
PYRAMID_TAPS = (1, 2, 3, 4)  # conv layers (0-based) whose outputs form the pyramid
_FOLD_HIDDEN = (256, 128)
_EDGE_WIDTHS = (32, 128, 512)
_OFFSET_HIDDEN = (256, 128, 32)
_FEATURE_WIDTH = 512


class ConfigError(Exception):
    pass


@dataclasses.dataclass
class Config:
    preset: str = "desk"
    # model scale
    channels: int = 128
    image_size: int = 64
    n_points: int = 512
    grid_points: int = 128
    surfaces: int = 4
    k_neighbors: int = 16
    variant: str = "full"
    # training schedule
    learning_rate: float = 5e-5
    lr_decay: float = 0.1
    lr_decay_epochs: int = 10
    epochs: int = 50
    alpha_start: float = 0.01
    alpha_end: float = 2.0
    alpha_ramp_iters: int = 30000
    batch_size: int = 4
    seed: int = 0
    precision: int = 32
    deterministic: bool = False
    # reporting
    report_cd: str = "l2"
    fscore_tau: float = 0.001

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown preset '{self.preset}'")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant '{self.variant}'; "
                              f"expected one of {', '.join(VARIANTS)}")
        if not self.alpha_start < self.alpha_end:
            raise ConfigError("alpha_start must be below alpha_end")
        if self.alpha_ramp_iters <= 0:
            raise ConfigError("alpha_ramp_iters must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.precision not in (32, 64):
            raise ConfigError("precision must be 32 or 64")
        if self.report_cd not in ("l2", "squared_l2"):
            raise ConfigError("report_cd must be l2 or squared_l2")
        if min(self.channels, self.image_size, self.n_points, self.grid_points,
               self.surfaces, self.k_neighbors, self.batch_size, self.epochs) < 1:
            raise ConfigError("scale fields must be positive")

    # --- derived widths ----------------------------------------------------

    def scaled(self, width):
        return max(1, round(width * self.channels / 1024))

    @property
    def point_encoder_widths(self):
        return tuple(self.scaled(w) for w in _POINT_ENC_WIDTHS)

    @property
    def conv_channels(self):
        return tuple(self.scaled(w) for w in _CONV_CHANNELS)

    @property
    def pyramid_channels(self):
        ch = self.conv_channels
        return tuple(ch[i] for i in PYRAMID_TAPS)

    @property
    def pyramid_sizes(self):
        sizes = []
        s = self.image_size
        for i, stride in enumerate(CONV_STRIDES):
            s = (s + 2 * 1 - 3) // stride + 1  # 3x3 kernels, pad 1
            if i in PYRAMID_TAPS:
                sizes.append(s)
        return tuple(sizes)

    @property
    def fold_hidden(self):
        return tuple(self.scaled(w) for w in _FOLD_HIDDEN)

    @property
    def edge_widths(self):
        return tuple(self.scaled(w) for w in _EDGE_WIDTHS)

    @property
    def offset_hidden(self):
        return tuple(self.scaled(w) for w in _OFFSET_HIDDEN)

    @property
    def feature_width(self):
        return self.scaled(_FEATURE_WIDTH)

    @property
    def n_coarse(self):
        return self.surfaces * self.grid_points

    @property
    def grid_shape(self):
        """Near-square a x b factorization of grid_points (a <= b)."""
        n = self.grid_points
        a = int(n ** 0.5)
        while n % a:
            a -= 1
        return (a, n // a)

    @property
    def dtype(self):
        import numpy as np
        return np.float32 if self.precision == 32 else np.float64


_FIELDS = {f.name: f for f in dataclasses.fields(Config)}
# fields the scale preset pins; everything else is schedule/reporting
_SCALE_FIELDS = ("channels", "image_size", "n_points", "grid_points",
                 "surfaces", "k_neighbors", "batch_size")
_SECTIONS = {
    "model": ("preset", "channels", "image_size", "n_points", "grid_points",
              "surfaces", "k_neighbors", "variant", "precision"),
    "train": ("learning_rate", "lr_decay", "lr_decay_epochs", "epochs",
              "alpha_start", "alpha_end", "alpha_ramp_iters", "batch_size",
              "seed", "deterministic"),
    "report": ("report_cd", "fscore_tau"),
}


def _parse_value(name, raw):
    ftype = _FIELDS[name].type
    raw = raw.strip()
    if ftype == "bool" or ftype is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"field '{name}': cannot parse boolean from '{raw}'")
    if ftype == "int" or ftype is int:
        return int(raw)
    if ftype == "float" or ftype is float:
        return float(raw)
    return raw


def make_config(preset=None, config_path=None, overrides=None):
    """Assemble a Config with precedence defaults < preset < file < overrides."""
    values = {}
    file_values = {}
    if config_path is not None:
        file_values = _read_config_file(config_path)
    # the preset may come from the file when not given explicitly
    chosen = preset or file_values.get("preset") or Config.preset
    if chosen not in PRESETS:
        raise ConfigError(f"unknown preset '{chosen}'")
    values["preset"] = chosen
    values.update(PRESETS[chosen])
    for name, val in file_values.items():
        if name != "preset":
            values[name] = val
    for name, val in (overrides or {}).items():
        if val is None:
            continue
        if name not in _FIELDS:
            raise ConfigError(f"unknown config field '{name}'")
        values[name] = _parse_value(name, str(val))
    return Config(**values)


def _read_config_file(path):
    parser = configparser.ConfigParser()
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file {path}: {exc}") from exc
    values = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}] in {path}")
        for name, raw in parser.items(section):
            if name not in _SECTIONS[section]:
                raise ConfigError(
                    f"unknown field '{name}' in section [{section}] of {path}")
            values[name] = _parse_value(name, raw)
    return values


def to_text(cfg):
    """Canonical key = value rendering (stable ordering, parse round-trip)."""
    out = io.StringIO()
    for section, names in _SECTIONS.items():
        out.write(f"[{section}]\n")
        for name in names:
            out.write(f"{name} = {getattr(cfg, name)}\n")
        out.write("\n")
    return out.getvalue()


def from_text(text):
    parser = configparser.ConfigParser()
    parser.read_string(text)
    values = {}
    for section in parser.sections():
        for name, raw in parser.items(section):
            values[name] = _parse_value(name, raw)
    return Config(**values)


def config_hash(cfg):
    """Short stable digest of the full config for reproducibility headers."""
    return hashlib.sha256(to_text(cfg).encode()).hexdigest()[:12]
