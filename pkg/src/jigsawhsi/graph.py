"""The Jigsaw network: spectral 1x1 trunk, multi-scale branch pyramid, centre-pixel
crop branch and a dense softmax head, assembled from a :class:`NetworkSpec`.

Layout (dotted parts optional)::

    input (S, S, c)
      -> [hsi 1x1 conv] -> [module A 1x1 convs] = trunk
    trunk -> branches k = 1, 3, ..., n  ([1x1 reduce] -> kxk conv -> [1x1 project])
          -> max-pool branch ([1x1 project])
          -> concat -> avg pool -> flatten                      = left
    trunk -> [crop centre -> flatten]                           = right
    concat(left, right) -> dense+relu+dropout x2 -> dense -> softmax
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nn
from .errors import FormatError, ValidationError
from .hsi_io import payload_path, read_header, write_header

_MODULE = "jigsaw-graph"


@dataclass(frozen=True)
class NetworkSpec:
    window: int
    channels: int
    num_classes: int
    hsi_filters: int | None = None
    module_a: tuple[int, ...] = ()
    max_filter_size: int = 9
    branch_units: int = 64
    nin_before: int | None = None
    nin_after: int | None = None
    maxpool_size: int = 3
    avg_pool_size: int = 2
    crop: bool = True
    dense_units: tuple[int, int] = (256, 128)
    dropout: float = 0.4
    l2: float = 1e-4

    def __post_init__(self):
        object.__setattr__(self, "module_a", tuple(int(v) for v in self.module_a))
        object.__setattr__(self, "dense_units", tuple(int(v) for v in self.dense_units))
        self.validate()

    def validate(self):
        def bad(msg):
            raise ValidationError(msg, _MODULE)

        if self.window < 1 or self.window % 2 == 0:
            bad(f"window size must be a positive odd integer, got {self.window}")
        if self.channels < 1:
            bad(f"input channels must be >= 1, got {self.channels}")
        if self.num_classes < 2:
            bad(f"need at least 2 classes, got {self.num_classes}")
        if self.hsi_filters is not None and self.hsi_filters < 1:
            bad("hsi_filters must be positive when given")
        if any(v < 1 for v in self.module_a):
            bad("module A filter counts must be positive")
        if self.max_filter_size < 1 or self.max_filter_size % 2 == 0:
            bad(f"filter size must be a positive odd integer, got {self.max_filter_size}")
        if self.max_filter_size > self.window:
            bad(f"filter size {self.max_filter_size} is wider than the {self.window}-pixel tile")
        if self.branch_units < 1:
            bad("branch_units must be positive")
        for name in ("nin_before", "nin_after"):
            v = getattr(self, name)
            if v is not None and v < 1:
                bad(f"{name} must be positive when given")
        if self.maxpool_size < 1 or self.maxpool_size % 2 == 0:
            bad(f"max-pool size must be a positive odd integer, got {self.maxpool_size}")
        if self.avg_pool_size < 1:
            bad("avg_pool_size must be positive")
        if len(self.dense_units) != 2 or min(self.dense_units) < 1:
            bad(f"dense_units must be two positive integers, got {self.dense_units}")
        if not 0.0 <= self.dropout < 1.0:
            bad(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.l2 < 0:
            bad("l2 must be >= 0")

    @property
    def kernel_sizes(self) -> tuple[int, ...]:
        return tuple(range(1, self.max_filter_size + 1, 2))

    @property
    def trunk_channels(self) -> int:
        if self.module_a:
            return self.module_a[-1]
        return self.hsi_filters if self.hsi_filters is not None else self.channels

    @property
    def pooled_side(self) -> int:
        return -(-self.window // self.avg_pool_size)

    def to_fields(self) -> dict[str, str]:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if v is None:
                out[f.name] = "none"
            elif isinstance(v, tuple):
                out[f.name] = ",".join(str(i) for i in v)
            elif isinstance(v, float):
                out[f.name] = repr(v)
            else:
                out[f.name] = str(v)
        return out

    @classmethod
    def from_fields(cls, fields: dict[str, str]) -> "NetworkSpec":
        kwargs = {}
        for f in dataclasses.fields(cls):
            if f.name not in fields:
                continue
            raw = fields[f.name]
            if f.name in ("module_a", "dense_units"):
                kwargs[f.name] = tuple(int(v) for v in raw.split(",") if v.strip())
            elif f.name in ("dropout", "l2"):
                kwargs[f.name] = float(raw)
            elif f.name == "crop":
                kwargs[f.name] = raw.lower() == "true"
            elif raw.lower() == "none":
                kwargs[f.name] = None
            else:
                kwargs[f.name] = int(raw)
        return cls(**kwargs)


def _conv_relu(size, cin, cout, rng, dtype):
    return [nn.Conv2D(size, cin, cout, rng, dtype), nn.ReLU()]


class Model:
    """Instantiated network.  Parameters are kept in a fixed topological order."""

    def __init__(self, spec: NetworkSpec, seed: int = 0, dtype=np.float32):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)

        trunk, ch = [], spec.channels
        if spec.hsi_filters is not None:
            trunk += _conv_relu(1, ch, spec.hsi_filters, rng, dtype)
            ch = spec.hsi_filters
        for units in spec.module_a:
            trunk += _conv_relu(1, ch, units, rng, dtype)
            ch = units
        self.trunk = nn.Sequential(trunk)

        self.branches = []
        self.branch_channels = []
        for k in spec.kernel_sizes:
            layers, bch = [], ch
            if spec.nin_before is not None:
                layers += _conv_relu(1, bch, spec.nin_before, rng, dtype)
                bch = spec.nin_before
            layers += _conv_relu(k, bch, spec.branch_units, rng, dtype)
            bch = spec.branch_units
            if spec.nin_after is not None:
                layers += _conv_relu(1, bch, spec.nin_after, rng, dtype)
                bch = spec.nin_after
            self.branches.append(nn.Sequential(layers))
            self.branch_channels.append(bch)
        pool = [nn.MaxPool(spec.maxpool_size)]
        pch = ch
        if spec.nin_after is not None:
            pool += _conv_relu(1, ch, spec.nin_after, rng, dtype)
            pch = spec.nin_after
        self.branches.append(nn.Sequential(pool))
        self.branch_channels.append(pch)

        self.avg_pool = nn.AvgPool(spec.avg_pool_size)
        self.flatten_left = nn.Flatten()
        self.crop = nn.Sequential([nn.CropCenter(), nn.Flatten()]) if spec.crop else None

        self.left_features = spec.pooled_side**2 * sum(self.branch_channels)
        self.right_features = ch if spec.crop else 0
        d1, d2 = spec.dense_units
        self.head = nn.Sequential([
            nn.Dense(self.left_features + self.right_features, d1, rng, dtype), nn.ReLU(), nn.Dropout(spec.dropout),
            nn.Dense(d1, d2, rng, dtype), nn.ReLU(), nn.Dropout(spec.dropout),
            nn.Dense(d2, spec.num_classes, rng, dtype),
        ])
        self._logits = None

    # -------------------------------------------------------------- parameters

    def param_layers(self):
        layers = [l for l in self.trunk.layers if l.weight is not None]
        for br in self.branches:
            layers += [l for l in br.layers if l.weight is not None]
        layers += [l for l in self.head.layers if l.weight is not None]
        return layers

    def params(self):
        return [p for layer in self.param_layers() for p in layer.params()]

    def grads(self):
        return [g for layer in self.param_layers() for g in layer.grads()]

    def weights(self):
        """Kernel arrays only (the L2-regularised ones)."""
        return [layer.weight for layer in self.param_layers()]

    def param_count(self) -> int:
        return int(sum(p.size for p in self.params()))

    def zero_grad(self):
        for layer in self.param_layers():
            layer.zero_grad()

    def get_state(self):
        return [p.copy() for p in self.params()]

    def set_state(self, state):
        params = self.params()
        if len(state) != len(params):
            raise ValidationError(f"state has {len(state)} arrays, model has {len(params)}", _MODULE)
        for p, s in zip(params, state):
            if p.shape != s.shape:
                raise ValidationError(f"state array shape {s.shape} does not match parameter {p.shape}", _MODULE)
            p[...] = s

    # -------------------------------------------------------------- passes

    def logits(self, x, training=False, rng=None):
        s = self.spec
        if x.ndim != 4 or x.shape[1:] != (s.window, s.window, s.channels):
            raise ValidationError(
                f"batch must be (N, {s.window}, {s.window}, {s.channels}), got {x.shape}", _MODULE)
        x = x.astype(self.dtype, copy=False)
        trunk = self.trunk.forward(x, training, rng)
        outs = [br.forward(trunk, training, rng) for br in self.branches]
        self.pre_pool, _ = nn.concat_channels(outs)
        left = self.flatten_left.forward(self.avg_pool.forward(self.pre_pool))
        if self.crop is not None:
            features = np.concatenate([left, self.crop.forward(trunk)], axis=1)
        else:
            features = left
        self._logits = self.head.forward(features, training, rng)
        return self._logits

    def forward(self, x, training=False, rng=None):
        """Class probabilities, shape (N, K)."""
        return nn.softmax(self.logits(x, training, rng))

    def loss(self, x, targets, training=False, rng=None):
        logits = self.logits(x, training, rng)
        xent, _, _ = nn.softmax_xent(logits, targets)
        penalty, _ = nn.l2_penalty(self.weights(), self.spec.l2)
        return xent + penalty

    def backward(self, targets):
        """Accumulate gradients of (cross-entropy + L2) for the last forward pass.

        Returns (total loss, probs).
        """
        if self._logits is None:
            raise ValidationError("backward called before forward", _MODULE)
        xent, probs, dlogits = nn.softmax_xent(self._logits, targets.astype(self.dtype, copy=False))
        dfeat = self.head.backward(dlogits.astype(self.dtype, copy=False))
        dleft = dfeat[:, :self.left_features]
        dtrunk = None
        if self.crop is not None:
            dtrunk = self.crop.backward(dfeat[:, self.left_features:])
        dcat = self.avg_pool.backward(self.flatten_left.backward(dleft))
        for br, part in zip(self.branches, nn.split_channels(dcat, self.branch_channels)):
            d = br.backward(part)
            dtrunk = d if dtrunk is None else dtrunk + d
        self.trunk.backward(dtrunk)

        penalty, l2_grads = nn.l2_penalty(self.weights(), self.spec.l2)
        if self.spec.l2 > 0:
            for layer, g in zip(self.param_layers(), l2_grads):
                layer.dweight += g
        return xent + penalty, probs


def build(spec: NetworkSpec, seed: int = 0, dtype=np.float32) -> Model:
    return Model(spec, seed, dtype)


def predict_proba(model: Model, tiles: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Inference-mode probabilities for an (N, S, S, c) array, in batches."""
    out = []
    for start in range(0, tiles.shape[0], batch_size):
        out.append(model.forward(tiles[start:start + batch_size], training=False))
    if not out:
        return np.zeros((0, model.spec.num_classes), dtype=model.dtype)
    return np.concatenate(out, axis=0)


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(model: Model, header_path) -> None:
    header_path = Path(header_path)
    data_path = payload_path(header_path)
    params = model.params()
    fields = {"format": "jigsawhsi-checkpoint"}
    fields.update({f"spec.{k}": v for k, v in model.spec.to_fields().items()})
    fields.update({"dtype": "float32", "byteorder": "le", "arrays": len(params), "data_file": data_path.name})
    for i, p in enumerate(params):
        fields[f"shape.{i}"] = "x".join(str(s) for s in p.shape)
    payload = np.concatenate([p.astype("<f4").ravel() for p in params])
    try:
        payload.tofile(data_path)
    except OSError as exc:
        raise FormatError(f"cannot write {data_path}: {exc.strerror or exc}", _MODULE) from exc
    write_header(header_path, fields, comment="jigsawhsi checkpoint")


def read_checkpoint_spec(header_path) -> NetworkSpec:
    fields = read_header(header_path)
    if fields.get("format") != "jigsawhsi-checkpoint":
        raise FormatError(f"{header_path}: not a jigsawhsi checkpoint", _MODULE)
    return NetworkSpec.from_fields({k[5:]: v for k, v in fields.items() if k.startswith("spec.")})


def load_checkpoint(header_path, expected_spec: NetworkSpec | None = None) -> Model:
    header_path = Path(header_path)
    fields = read_header(header_path)
    spec = read_checkpoint_spec(header_path)
    if expected_spec is not None and expected_spec != spec:
        diffs = [f.name for f in dataclasses.fields(spec) if getattr(spec, f.name) != getattr(expected_spec, f.name)]
        raise ValidationError(f"checkpoint network does not match the configuration (differs in: {', '.join(diffs)})", _MODULE)
    model = Model(spec, seed=0, dtype=np.float32)
    params = model.params()
    if int(fields["arrays"]) != len(params):
        raise FormatError(f"{header_path}: {fields['arrays']} arrays stored, spec implies {len(params)}", _MODULE)
    data_path = header_path.parent / fields["data_file"] if "data_file" in fields else payload_path(header_path)
    if not data_path.is_file():
        raise FileNotFoundError(f"data file not found: {data_path}")
    payload = np.fromfile(data_path, dtype="<f4")
    expected = sum(p.size for p in params)
    if payload.size != expected:
        raise FormatError(f"{data_path}: {payload.size} values stored, spec implies {expected}", _MODULE)
    offset = 0
    for i, p in enumerate(params):
        shape = tuple(int(s) for s in fields[f"shape.{i}"].split("x"))
        if shape != p.shape:
            raise FormatError(f"{header_path}: array {i} has shape {shape}, spec implies {p.shape}", _MODULE)
        p[...] = payload[offset:offset + p.size].reshape(shape)
        offset += p.size
    return model
