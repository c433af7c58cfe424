"""``config.ini`` run configuration: strict parsing, validation and serialisation.

Example::

    [data]
    cube = indian_pines.hdr
    labels = indian_pines_gt.hdr
    output_dir = runs/ip

    [preprocess]
    window_size = 27
    decomposition = FA
    input_channels = 9

    [network]
    hsi_filters = none
    filter_size = 9

    [training]
    optimizer = Adadelta
    learning_rate = 0.1
    batch_size = 106
    max_epochs = 500
    patience = 20

Keys are case-insensitive.  Unknown sections and keys are errors.
"""
from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .decompose import canonical_method
from .errors import ValidationError
from .graph import NetworkSpec
from .trainer import MONITORS, OPTIMIZERS, TrainConfig

_MODULE = "cli-config"
DEFAULT_SEED = 1337


def _none_or_int(text):
    return None if text.strip().lower() in ("", "none", "off") else int(text)


def _int_list(text):
    return tuple(int(v) for v in text.replace(" ", "").split(",") if v)


def _bool(text):
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _names(text):
    return tuple(v.strip() for v in text.split(",") if v.strip())


# (section, key) -> (field name, parser)
SCHEMA = {
    "data": {
        "cube": ("cube", str),
        "labels": ("labels", str),
        "class_names": ("class_names", _names),
        "output_dir": ("output_dir", str),
    },
    "preprocess": {
        "window_size": ("window_size", int),
        "decomposition": ("decomposition", str),
        "input_channels": ("input_channels", int),
        "fit_scope": ("fit_scope", str),
    },
    "network": {
        "hsi_filters": ("hsi_filters", _none_or_int),
        "module_a": ("module_a", _int_list),
        "filter_size": ("filter_size", int),
        "branch_units": ("branch_units", int),
        "nin_before": ("nin_before", _none_or_int),
        "nin_after": ("nin_after", _none_or_int),
        "maxpool_size": ("maxpool_size", int),
        "avg_pool_size": ("avg_pool_size", int),
        "crop": ("crop", _bool),
        "dense_units": ("dense_units", _int_list),
        "dropout": ("dropout", float),
        "l2": ("l2", float),
    },
    "training": {
        "optimizer": ("optimizer", str),
        "learning_rate": ("learning_rate", float),
        "batch_size": ("batch_size", int),
        "max_epochs": ("max_epochs", int),
        "patience": ("patience", int),
        "val_fraction": ("val_fraction", float),
        "monitor": ("monitor", str),
        "seed": ("seed", int),
        "train_frac": ("train_frac", float),
        "stratified": ("stratified", _bool),
    },
}
REQUIRED = {("data", "cube"), ("data", "labels"), ("preprocess", "window_size"),
            ("preprocess", "decomposition"), ("preprocess", "input_channels")}


@dataclass
class RunConfig:
    cube: str
    labels: str
    window_size: int
    decomposition: str
    input_channels: int
    class_names: tuple[str, ...] = ()
    output_dir: str = "output"
    fit_scope: str = "full"
    hsi_filters: int | None = None
    module_a: tuple[int, ...] = ()
    filter_size: int = 9
    branch_units: int = 64
    nin_before: int | None = None
    nin_after: int | None = None
    maxpool_size: int = 3
    avg_pool_size: int = 2
    crop: bool = True
    dense_units: tuple[int, ...] = (256, 128)
    dropout: float = 0.4
    l2: float = 1e-4
    optimizer: str = "adadelta"
    learning_rate: float = 0.1
    batch_size: int = 106
    max_epochs: int = 500
    patience: int = 20
    val_fraction: float = 0.1
    monitor: str = "val_accuracy"
    seed: int = DEFAULT_SEED
    train_frac: float = 0.3
    stratified: bool = True
    base_dir: Path = field(default=Path("."), compare=False)

    def __post_init__(self):
        self.validate()

    def validate(self):
        def bad(msg):
            raise ValidationError(msg, _MODULE)

        if self.window_size < 1 or self.window_size % 2 == 0:
            bad("window_size must be odd")
        if self.input_channels < 1:
            bad("input_channels must be >= 1")
        try:
            self.decomposition = canonical_method(self.decomposition)
        except ValidationError as exc:
            bad(exc.args[0])
        self.fit_scope = self.fit_scope.strip().lower()
        if self.fit_scope not in ("full", "train"):
            bad(f"fit_scope must be 'full' or 'train', got {self.fit_scope!r}")
        if self.filter_size < 1 or self.filter_size % 2 == 0:
            bad("filter_size must be odd")
        if self.filter_size > self.window_size:
            bad(f"filter_size {self.filter_size} exceeds window_size {self.window_size}")
        self.optimizer = self.optimizer.strip().lower()
        if self.optimizer not in OPTIMIZERS:
            bad(f"optimizer must be one of SGD, Adam, Adadelta, got {self.optimizer!r}")
        self.monitor = self.monitor.strip().lower()
        if self.monitor not in MONITORS:
            bad(f"monitor must be one of {', '.join(MONITORS)}, got {self.monitor!r}")
        if not 0.0 < self.train_frac < 1.0:
            bad("train_frac must lie strictly between 0 and 1")
        # Remaining network and training constraints live with their owners.
        try:
            self.network_spec(num_classes=2)
            self.train_config()
        except ValidationError as exc:
            bad(exc.args[0])

    def network_spec(self, num_classes: int) -> NetworkSpec:
        return NetworkSpec(
            window=self.window_size, channels=self.input_channels, num_classes=num_classes,
            hsi_filters=self.hsi_filters, module_a=self.module_a, max_filter_size=self.filter_size,
            branch_units=self.branch_units, nin_before=self.nin_before, nin_after=self.nin_after,
            maxpool_size=self.maxpool_size, avg_pool_size=self.avg_pool_size, crop=self.crop,
            dense_units=self.dense_units, dropout=self.dropout, l2=self.l2,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            optimizer=self.optimizer, learning_rate=self.learning_rate, batch_size=self.batch_size,
            max_epochs=self.max_epochs, patience=self.patience, val_fraction=self.val_fraction,
            seed=self.seed, monitor=self.monitor,
        )

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def cube_path(self) -> Path:
        return self.resolve(self.cube)

    @property
    def labels_path(self) -> Path:
        return self.resolve(self.labels)

    @property
    def output_path(self) -> Path:
        return self.resolve(self.output_dir)


def _parser():
    return configparser.ConfigParser(
        interpolation=None, inline_comment_prefixes=("#", ";"), comment_prefixes=("#", ";"),
        strict=True, empty_lines_in_values=False, default_section="__defaults__",
    )


def parse_config(text: str, base_dir=None) -> RunConfig:
    parser = _parser()
    try:
        parser.read_string(text)
    except configparser.MissingSectionHeaderError as exc:
        raise ValidationError(f"line {exc.lineno}: key outside of any [section]: {exc.line.strip()!r}", _MODULE) from None
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0]
        raise ValidationError(f"line {lineno}: malformed line {line.strip()!r} (expected key = value)", _MODULE) from None
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as exc:
        raise ValidationError(f"line {exc.lineno}: {exc.message if hasattr(exc, 'message') else exc}", _MODULE) from None

    kwargs = {}
    for section in parser.sections():
        sect_key = section.strip().lower()
        if sect_key not in SCHEMA:
            raise ValidationError(f"unknown section [{section}]", _MODULE)
        for key, raw in parser.items(section):
            if key not in SCHEMA[sect_key]:
                raise ValidationError(f"unknown key {key!r} in [{section}]", _MODULE)
            name, convert = SCHEMA[sect_key][key]
            try:
                kwargs[name] = convert(raw)
            except ValueError:
                raise ValidationError(f"[{section}] {key} = {raw!r} is not a valid value", _MODULE) from None
    present = {(s.strip().lower(), k) for s in parser.sections() for k in parser[s]}
    missing = sorted(f"[{s}] {k}" for s, k in REQUIRED - present)
    if missing:
        raise ValidationError(f"missing required keys: {', '.join(missing)}", _MODULE)
    if base_dir is not None:
        kwargs["base_dir"] = Path(base_dir)
    return RunConfig(**kwargs)


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    return parse_config(path.read_text(), base_dir=path.parent)


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(cfg: RunConfig) -> str:
    values = {f.name: getattr(cfg, f.name) for f in dataclasses.fields(cfg)}
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for key, (name, _) in keys.items():
            lines.append(f"{key} = {_format(values[name])}")
        lines.append("")
    return "\n".join(lines)
