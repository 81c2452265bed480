"""
Neural car-following models recorded on the autodiff tape.

RacerNet has two branches: an LSTM stack over the state history X_seq and a
dense branch over the current state X_phy. Their scalar outputs are combined
by one linear layer. Input-gradients (the RDC quantities) are taken w.r.t.
X_phy only, in physical units, because normalisation is part of the tape.

The same architecture serves the NN, PINN and RACER kinds; only the training
loss differs.
"""

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from config import DATA_DEFAULTS, NETWORK_DEFAULTS, SMOOTH_ACTIVATIONS, ModelKind
from domain import Sample, SampleBatch
from engine import autodiff as ad
from engine.autodiff import Tape, Var
from errors import ValidationError
from models.base import Controller

LOG = logging.getLogger(__name__)

GATES = ("f", "i", "o", "c")
PathLike = Union[str, Path]


@dataclass(frozen=True)
class NetworkConfig:
    lstm_layers: int = NETWORK_DEFAULTS["lstm_layers"]
    lstm_units: int = NETWORK_DEFAULTS["lstm_units"]
    seq_head_sizes: Tuple[int, ...] = NETWORK_DEFAULTS["seq_head_sizes"]
    phy_hidden_sizes: Tuple[int, ...] = NETWORK_DEFAULTS["phy_hidden_sizes"]
    phy_activation: str = NETWORK_DEFAULTS["phy_activation"]
    seq_activation: str = NETWORK_DEFAULTS["seq_activation"]
    init_seed: int = NETWORK_DEFAULTS["init_seed"]

    def __post_init__(self):
        object.__setattr__(self, "seq_head_sizes", tuple(int(x) for x in self.seq_head_sizes))
        object.__setattr__(self, "phy_hidden_sizes", tuple(int(x) for x in self.phy_hidden_sizes))
        if self.lstm_layers < 1 or self.lstm_units < 1:
            raise ValidationError("lstm_layers and lstm_units must be >= 1")
        if any(x < 1 for x in self.seq_head_sizes + self.phy_hidden_sizes):
            raise ValidationError("hidden layer sizes must be >= 1")
        # piecewise-linear activations make the input-gradient piecewise constant,
        # so the RDC penalty would have zero parameter-gradient almost everywhere
        if self.phy_activation not in SMOOTH_ACTIVATIONS:
            raise ValidationError(
                f"phy_activation must be one of {SMOOTH_ACTIVATIONS}, got {self.phy_activation!r}")
        if self.seq_activation not in ad.ACTIVATIONS:
            raise ValidationError(f"unknown seq_activation {self.seq_activation!r}")

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["seq_head_sizes"] = list(self.seq_head_sizes)
        d["phy_hidden_sizes"] = list(self.phy_hidden_sizes)
        return d

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "NetworkConfig":
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        return cls(**known)


@dataclass(frozen=True, eq=False)
class Normalizer:
    """Z-score statistics of (s, dv, v) features and of the acceleration target."""
    mean: np.ndarray
    std: np.ndarray
    constant: np.ndarray            # bool per feature; constant features pass through unscaled
    target_mean: float = 0.0
    target_std: float = 1.0

    def __post_init__(self):
        for name in ("mean", "std"):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.shape != (3,) or not np.all(np.isfinite(arr)):
                raise ValidationError(f"normalizer {name} must be 3 finite values")
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "constant", np.array(self.constant, dtype=bool))
        if np.any(self.std[~self.constant] <= 0):
            raise ValidationError("normalizer std must be positive for non-constant features")
        if not self.target_std > 0:
            raise ValidationError("normalizer target_std must be positive")

    @classmethod
    def identity(cls) -> "Normalizer":
        return cls(np.zeros(3), np.ones(3), np.zeros(3, dtype=bool), 0.0, 1.0)

    @property
    def scale(self) -> np.ndarray:
        return 1.0 / np.where(self.constant, 1.0, self.std)

    @property
    def shift(self) -> np.ndarray:
        return np.where(self.constant, 0.0, -self.mean * self.scale)

    def apply(self, x):
        """Works on arrays with a trailing feature axis of size 3, or on tape Vars."""
        if isinstance(x, Var):
            return ad.affine(x, self.scale, self.shift)
        return np.asarray(x, dtype=float) * self.scale + self.shift

    def invert(self, z: np.ndarray) -> np.ndarray:
        return (np.asarray(z, dtype=float) - self.shift) / self.scale

    def apply_target(self, a: np.ndarray) -> np.ndarray:
        return (np.asarray(a, dtype=float) - self.target_mean) / self.target_std

    def invert_target(self, z):
        return ad.affine(z, self.target_std, self.target_mean)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "constant": self.constant.tolist(),
            "target_mean": self.target_mean,
            "target_std": self.target_std,
        }

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "Normalizer":
        return cls(d["mean"], d["std"], d["constant"], float(d["target_mean"]), float(d["target_std"]))


# ─── Layers ───

@dataclass(frozen=True, eq=False)
class LstmCell:
    """Weights over the concatenation [h_prev, x_t], each (hidden + input, hidden)."""
    W: Dict[str, Any]
    b: Dict[str, Any]

    @property
    def hidden_size(self) -> int:
        return int(_shape(self.b["f"])[0])

    @property
    def input_size(self) -> int:
        return int(_shape(self.W["f"])[0]) - self.hidden_size


def _shape(x) -> Tuple[int, ...]:
    return x.shape if isinstance(x, Var) else np.shape(x)


def lstm_step(cell: LstmCell, x_t, h_prev, c_prev):
    """One LSTM step on a batch: x_t (N, in), h_prev and c_prev (N, hidden)."""
    if _shape(x_t)[1] != cell.input_size or _shape(h_prev)[1] != cell.hidden_size \
            or _shape(c_prev) != _shape(h_prev):
        raise ValidationError(
            f"lstm_step: x {_shape(x_t)}, h {_shape(h_prev)}, c {_shape(c_prev)} do not fit "
            f"a cell with input {cell.input_size} and hidden {cell.hidden_size}")
    z = ad.concat([h_prev, x_t])
    f = ad.sigmoid(ad.linear(z, cell.W["f"], cell.b["f"]))
    i = ad.sigmoid(ad.linear(z, cell.W["i"], cell.b["i"]))
    o = ad.sigmoid(ad.linear(z, cell.W["o"], cell.b["o"]))
    c_hat = ad.tanh(ad.linear(z, cell.W["c"], cell.b["c"]))
    c_t = ad.add(ad.mul(f, c_prev), ad.mul(i, c_hat))
    h_t = ad.mul(o, ad.tanh(c_t))
    return h_t, c_t


@dataclass(frozen=True, eq=False)
class DenseLayer:
    weight: Any         # (in, out)
    bias: Any           # (out,)
    activation: str = "linear"


@dataclass(frozen=True, eq=False)
class Mlp:
    layers: Tuple[DenseLayer, ...]

    def __call__(self, x):
        for layer in self.layers:
            x = ad.ACTIVATIONS[layer.activation](ad.linear(x, layer.weight, layer.bias))
        return x


# ─── RacerNet ───

class RacerNet(Controller):

    def __init__(
        self,
        config: Optional[NetworkConfig] = None,
        seq_len: int = DATA_DEFAULTS["seq_len"],
        kind: ModelKind = ModelKind.RACER,
        name: Optional[str] = None,
        normalizer: Optional[Normalizer] = None,
        params: Optional[Dict[str, np.ndarray]] = None,
    ):
        if seq_len < 1:
            raise ValidationError(f"seq_len must be >= 1, got {seq_len}")
        self.config = config or NetworkConfig()
        self._seq_len = int(seq_len)
        self.kind = kind
        self.name = name or kind.value
        self.normalizer = normalizer
        self._shapes = self._parameter_shapes()
        if params is None:
            self.params = self._init_parameters(self.config.init_seed)
        else:
            self.params = {}
            self.set_parameters(params)

    @property
    def seq_len(self) -> int:
        return self._seq_len

    # ── parameters ──

    def _parameter_shapes(self) -> Dict[str, Tuple[Tuple[int, ...], int]]:
        """name -> (shape, fan_in) in declared order."""
        cfg = self.config
        shapes: Dict[str, Tuple[Tuple[int, ...], int]] = {}
        in_size, hidden = 3, cfg.lstm_units
        for layer in range(cfg.lstm_layers):
            fan_in = hidden + in_size
            for g in GATES:
                shapes[f"lstm{layer}.W_{g}"] = ((fan_in, hidden), fan_in)
            for g in GATES:
                shapes[f"lstm{layer}.b_{g}"] = ((hidden,), fan_in)
            in_size = hidden
        for prefix, first, sizes in (("seq_head", hidden, cfg.seq_head_sizes), ("phy", 3, cfg.phy_hidden_sizes)):
            dims = (first,) + sizes + (1,)
            for j, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
                shapes[f"{prefix}.{j}.W"] = ((a, b), a)
                shapes[f"{prefix}.{j}.b"] = ((b,), a)
        shapes["combiner.W"] = ((2, 1), 2)
        shapes["combiner.b"] = ((1,), 2)
        return shapes

    @property
    def parameter_names(self) -> List[str]:
        return list(self._shapes)

    def _init_parameters(self, seed: int) -> Dict[str, np.ndarray]:
        rng = np.random.default_rng(seed)
        params = {}
        for name, (shape, fan_in) in self._shapes.items():
            bound = 1.0 / np.sqrt(fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape)
        return params

    def set_parameters(self, values: Dict[str, np.ndarray]):
        for name, (shape, _) in self._shapes.items():
            if name not in values:
                raise ValidationError(f"missing parameter {name}")
            arr = np.array(values[name], dtype=float)
            if arr.shape != shape:
                raise ValidationError(f"parameter {name}: expected shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"parameter {name} has non-finite values")
            self.params[name] = arr

    def copy_parameters(self) -> Dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([self.params[n].ravel() for n in self._shapes])

    def load_flat(self, flat: np.ndarray):
        values, offset = {}, 0
        for name, (shape, _) in self._shapes.items():
            size = int(np.prod(shape))
            if offset + size > len(flat):
                raise ValidationError("flat parameter vector is too short")
            values[name] = flat[offset:offset + size].reshape(shape)
            offset += size
        if offset != len(flat):
            raise ValidationError(f"flat parameter vector has {len(flat) - offset} extra values")
        self.set_parameters(values)

    def bind(self, tape: Tape) -> Dict[str, Var]:
        """Parameter leaves on `tape`, created once per tape."""
        leaves = {}
        for name in self._shapes:
            key = f"param:{name}"
            if key not in tape.marks:
                tape.marks[key] = tape.leaf(self.params[name], name)
            leaves[name] = tape.marks[key]
        return leaves

    # ── structure ──

    def _cells(self, p) -> List[LstmCell]:
        return [LstmCell(W={g: p[f"lstm{l}.W_{g}"] for g in GATES}, b={g: p[f"lstm{l}.b_{g}"] for g in GATES})
                for l in range(self.config.lstm_layers)]

    def _mlp(self, p, prefix: str, n_hidden: int, activation: str) -> Mlp:
        layers = []
        for j in range(n_hidden + 1):
            act = activation if j < n_hidden else "linear"
            layers.append(DenseLayer(p[f"{prefix}.{j}.W"], p[f"{prefix}.{j}.b"], act))
        return Mlp(tuple(layers))

    def seq_head(self, p=None) -> Mlp:
        return self._mlp(p or self.params, "seq_head", len(self.config.seq_head_sizes), self.config.seq_activation)

    def phy_branch(self, p=None) -> Mlp:
        return self._mlp(p or self.params, "phy", len(self.config.phy_hidden_sizes), self.config.phy_activation)

    # ── evaluation ──

    def _as_batch(self, data: Union[Sample, Sequence[Sample], SampleBatch]) -> SampleBatch:
        if isinstance(data, Sample):
            data = SampleBatch.from_samples([data])
        elif not isinstance(data, SampleBatch):
            data = SampleBatch.from_samples(list(data))
        if data.seq.ndim != 3 or data.seq.shape[1] != self.seq_len or data.seq.shape[2] != 3:
            raise ValidationError(f"{self.name}: expected windows of shape (N, {self.seq_len}, 3), got {data.seq.shape}")
        return data

    def forward(self, data, tape: Optional[Tape] = None, include_seq: bool = True):
        """
        Predicted acceleration (N, 1) in m/s^2. With a tape the computation is
        recorded and X_phy becomes the leaf `tape.marks["x_phy"]`; without one
        it is evaluated directly in numpy.

        include_seq=False replaces the sequence branch by zeros. The combiner is
        affine, so input-gradients w.r.t. X_phy are unchanged.
        """
        if self.normalizer is None:
            raise ValidationError(f"{self.name}: normalizer has not been fitted")
        batch = self._as_batch(data)
        n = len(batch)
        p = self.bind(tape) if tape is not None else self.params
        x_phy = tape.leaf(batch.phy, "x_phy") if tape is not None else batch.phy

        z_phy = self.phy_branch(p)(self.normalizer.apply(x_phy))
        if include_seq:
            seq = self.normalizer.apply(batch.seq)
            cells = self._cells(p)
            hidden = self.config.lstm_units
            h = [np.zeros((n, hidden)) for _ in cells]
            c = [np.zeros((n, hidden)) for _ in cells]
            for t in range(self.seq_len):
                x = seq[:, t, :]
                for l, cell in enumerate(cells):
                    h[l], c[l] = lstm_step(cell, x, h[l], c[l])
                    x = h[l]
            z_seq = self.seq_head(p)(h[-1])
        else:
            z_seq = np.zeros((n, 1))
        out = ad.linear(ad.concat([z_seq, z_phy]), p["combiner.W"], p["combiner.b"])
        a_pred = self.normalizer.invert_target(out)
        if tape is not None:
            tape.marks["x_phy"] = x_phy
            tape.marks["a_pred"] = a_pred
        return a_pred

    def input_gradients(self, tape: Tape) -> Tuple[Var, Var, Var]:
        """On-tape (da/dv, da/ds, da/dr), each (N, 1), for the last forward on `tape`."""
        if "x_phy" not in tape.marks or "a_pred" not in tape.marks:
            raise ValidationError("input_gradients needs a forward pass recorded on this tape")
        x_phy, a_pred = tape.marks["x_phy"], tape.marks["a_pred"]
        # rows are independent, so d(sum a)/dX_phy holds each sample's own gradient
        g = ad.grad_as_expression(tape, ad.total(a_pred), x_phy)
        ds, dr = ad.slice_cols(g, 0, 1), ad.slice_cols(g, 1, 2)
        dv = ad.add(ad.slice_cols(g, 2, 3), ad.neg(dr))
        return dv, ds, dr

    def predict(self, windows: np.ndarray) -> np.ndarray:
        windows = np.asarray(windows, dtype=float)
        batch = SampleBatch(windows, windows[:, -1, :], np.zeros(len(windows)))
        return np.asarray(self.forward(batch)).ravel()

    def rdc_gradients(self, batch: SampleBatch) -> np.ndarray:
        tape = Tape()
        a_pred = self.forward(batch, tape, include_seq=False)
        [g] = ad.grad(tape, ad.total(a_pred), [tape.marks["x_phy"]])
        return np.column_stack([g[:, 2] - g[:, 1], g[:, 0], g[:, 1]])

    # ── checkpoint ──

    def manifest(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "kind": self.kind.value,
            "seq_len": self.seq_len,
            "architecture": self.config.to_dict(),
            "normalizer": self.normalizer.to_dict() if self.normalizer else None,
            "parameters": [[n, list(shape)] for n, (shape, _) in self._shapes.items()],
            "dtype": "<f8",
        }

    def save(self, stem: PathLike) -> Tuple[Path, Path]:
        """Write `<stem>.json` (manifest) and `<stem>.bin` (little-endian float64 parameters)."""
        stem = Path(stem)
        stem.parent.mkdir(parents=True, exist_ok=True)
        json_path, bin_path = stem.with_suffix(".json"), stem.with_suffix(".bin")
        json_path.write_text(json.dumps(self.manifest(), indent=2, sort_keys=True) + "\n")
        self.flat_parameters().astype("<f8").tofile(bin_path)
        return json_path, bin_path

    @classmethod
    def load(cls, stem: PathLike) -> "RacerNet":
        stem = Path(stem)
        json_path, bin_path = stem.with_suffix(".json"), stem.with_suffix(".bin")
        if not json_path.exists() or not bin_path.exists():
            raise ValidationError(f"checkpoint not found: {json_path} / {bin_path}")
        meta = json.loads(json_path.read_text())
        net = cls(
            config=NetworkConfig.from_dict(meta["architecture"]),
            seq_len=int(meta["seq_len"]),
            kind=ModelKind(meta["kind"]),
            name=meta["name"],
            normalizer=Normalizer.from_dict(meta["normalizer"]) if meta.get("normalizer") else None,
        )
        declared = [(n, tuple(s)) for n, s in meta["parameters"]]
        if declared != [(n, shape) for n, (shape, _) in net._shapes.items()]:
            raise ValidationError(f"{json_path}: parameter layout does not match the architecture")
        net.load_flat(np.fromfile(bin_path, dtype="<f8"))
        return net


# ─── Hand-built networks ───

def linear_phy_network(
    coefficients: Sequence[float],
    bias: float = 0.0,
    seq_len: int = DATA_DEFAULTS["seq_len"],
    name: str = "linear",
) -> RacerNet:
    """
    Network whose output is exactly coefficients . (s, dv, v) + bias: a single
    linear phy layer, identity normalisation and a combiner that ignores the
    sequence branch.
    """
    config = NetworkConfig(lstm_layers=1, lstm_units=2, seq_head_sizes=(), phy_hidden_sizes=())
    net = RacerNet(config, seq_len=seq_len, kind=ModelKind.RACER, name=name, normalizer=Normalizer.identity())
    values = {k: np.zeros_like(v) for k, v in net.params.items()}
    values["phy.0.W"] = np.array(coefficients, dtype=float).reshape(3, 1)
    values["phy.0.b"] = np.array([bias], dtype=float)
    values["combiner.W"] = np.array([[0.0], [1.0]])
    net.set_parameters(values)
    return net


def ovrv_form_network(params, seq_len: int = DATA_DEFAULTS["seq_len"], name: str = "ovrv_form") -> RacerNet:
    """RacerNet reproducing OVRV: a = k1*s + k2*dv - k1*tau*v - k1*eta."""
    k1, k2, tau, eta = params.as_tuple()
    return linear_phy_network((k1, k2, -k1 * tau), -k1 * eta, seq_len=seq_len, name=name)
