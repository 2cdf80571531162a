"""Generative maps ``x = f_θ(Bz)`` with exact reverse-mode gradients.

Supported kinds:

- ``identity``   f(v) = v
- ``one-layer``  f(v) = act(Wv + b) with a sigmoid or exp activation
- ``rnvp``       a stack of affine coupling layers with SELU inner nets
- ``gauss-cdf``  the elementwise standard-normal CDF, f(v)_i = Φ(v_i)

Every map works on single vectors and on batches (rows are samples). The
backward pass follows the recorded forward pass layer by layer, so ``vjp``
is exact up to rounding.
"""
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit, ndtr, ndtri

from numerics import RngStream, as_matrix, as_vector, gaussian_matrix

MODEL_KINDS = ("one-layer", "rnvp", "gauss-cdf", "identity")
ACTIVATIONS = ("identity", "sigmoid", "exp", "selu")
MODEL_FORMAT_VERSION = 1

# exp inputs and coupling log-scales are clipped to this range before exponentiation
EXP_CLAMP = 10.0
UNIT_NORM_TOL = 1e-12

SELU_ALPHA = 1.6732632423543772848170429916717
SELU_SCALE = 1.0507009873554804934193349852946
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _activate(a: np.ndarray, activation: str) -> np.ndarray:
    if activation == "identity":
        return a
    if activation == "sigmoid":
        return expit(a)
    if activation == "exp":
        return np.exp(np.clip(a, -EXP_CLAMP, EXP_CLAMP))
    if activation == "selu":
        return SELU_SCALE * np.where(a > 0, a, SELU_ALPHA * np.expm1(np.minimum(a, 0.0)))
    raise ValueError(f"Unknown activation: {activation}")


def _activation_grad(a: np.ndarray, out: np.ndarray, activation: str) -> np.ndarray:
    if activation == "identity":
        return np.ones_like(a)
    if activation == "sigmoid":
        return out * (1.0 - out)
    if activation == "exp":
        return out * ((a > -EXP_CLAMP) & (a < EXP_CLAMP))
    if activation == "selu":
        return SELU_SCALE * np.where(a > 0, 1.0, SELU_ALPHA * np.exp(np.minimum(a, 0.0)))
    raise ValueError(f"Unknown activation: {activation}")


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class MixingMatrix:
    """Mixing matrix ``B`` whose columns all have unit ℓ2 norm."""

    matrix: np.ndarray

    def __post_init__(self):
        B = as_matrix(self.matrix, "B")
        norms = np.linalg.norm(B, axis=0)
        bad = np.flatnonzero(np.abs(norms - 1.0) > UNIT_NORM_TOL)
        if bad.size:
            raise ValueError(f"column {int(bad[0])} of B does not have unit norm")
        B.setflags(write=False)
        object.__setattr__(self, "matrix", B)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.matrix.shape

    def mix(self, z: np.ndarray) -> np.ndarray:
        """Return ``Bz`` (row-wise for batches)."""
        return z @ self.matrix.T


def normalize_columns(B: np.ndarray) -> MixingMatrix:
    """Scale every column of ``B`` to unit ℓ2 norm."""
    B = as_matrix(B, "B")
    norms = np.linalg.norm(B, axis=0)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ValueError(f"column {int(zero[0])} of B is zero and cannot be normalized")
    return MixingMatrix(B / norms)


def random_mixing_matrix(rows: int, cols: int, rng: RngStream) -> MixingMatrix:
    """Gaussian ``rows x cols`` matrix with normalized columns."""
    return normalize_columns(gaussian_matrix(rows, cols, 1.0, rng))


@dataclass(frozen=True, eq=False)
class DenseLayer:
    weights: np.ndarray
    bias: np.ndarray
    activation: str = "identity"

    def __post_init__(self):
        W = as_matrix(self.weights, "weights")
        b = as_vector(self.bias, "bias")
        if W.shape[0] != b.shape[0]:
            raise ValueError(f"weights have {W.shape[0]} rows but bias has length {b.shape[0]}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"Unknown activation: {self.activation}")
        object.__setattr__(self, "weights", _frozen(W))
        object.__setattr__(self, "bias", _frozen(b))

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    def forward(self, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Return (output, pre-activation)."""
        pre = v @ self.weights.T + self.bias
        return _activate(pre, self.activation), pre

    def backward(self, pre: np.ndarray, out: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Pull the output cotangent ``u`` back to the layer input."""
        return (u * _activation_grad(pre, out, self.activation)) @ self.weights


def _net_forward(layers: Sequence[DenseLayer], v: np.ndarray):
    tape = []
    for layer in layers:
        out, pre = layer.forward(v)
        tape.append((pre, out))
        v = out
    return v, tape


def _net_backward(layers: Sequence[DenseLayer], tape, u: np.ndarray) -> np.ndarray:
    for layer, (pre, out) in zip(reversed(layers), reversed(tape)):
        u = layer.backward(pre, out, u)
    return u


@dataclass(frozen=True, eq=False)
class CouplingLayer:
    """Affine coupling: pass ``mask`` coordinates, scale-and-shift the rest.

    y[mask]  = v[mask]
    y[~mask] = v[~mask] * exp(s(v[mask])) + t(v[mask])
    """

    mask: np.ndarray
    scale_net: Tuple[DenseLayer, ...]
    shift_net: Tuple[DenseLayer, ...]

    def __post_init__(self):
        mask = np.array(self.mask, dtype=bool)
        if mask.ndim != 1 or mask.size % 2:
            raise ValueError("coupling mask must be a vector of even length")
        n_pass = int(mask.sum())
        if n_pass != mask.size - n_pass:
            raise ValueError("coupling mask must split coordinates in equal halves")
        for name, net in (("scale", self.scale_net), ("shift", self.shift_net)):
            if not net:
                raise ValueError(f"{name} net has no layers")
            if net[0].in_dim != n_pass or net[-1].out_dim != n_pass:
                raise ValueError(f"{name} net dimensions do not match the mask split")
            for a, b in zip(net, net[1:]):
                if a.out_dim != b.in_dim:
                    raise ValueError(f"{name} net layers are not chained consistently")
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "scale_net", tuple(self.scale_net))
        object.__setattr__(self, "shift_net", tuple(self.shift_net))

    @property
    def dim(self) -> int:
        return self.mask.size

    def _scale_shift(self, p: np.ndarray):
        s_raw, s_tape = _net_forward(self.scale_net, p)
        t, t_tape = _net_forward(self.shift_net, p)
        return s_raw, s_tape, t, t_tape

    def forward(self, v: np.ndarray):
        mask = self.mask
        p = v[..., mask]
        q = v[..., ~mask]
        s_raw, s_tape, t, t_tape = self._scale_shift(p)
        e = np.exp(np.clip(s_raw, -EXP_CLAMP, EXP_CLAMP))
        y = np.empty_like(v)
        y[..., mask] = p
        y[..., ~mask] = q * e + t
        return y, (q, s_raw, e, s_tape, t_tape)

    def backward(self, cache, u: np.ndarray) -> np.ndarray:
        q, s_raw, e, s_tape, t_tape = cache
        mask = self.mask
        u_p = u[..., mask]
        u_q = u[..., ~mask]
        inside = (s_raw > -EXP_CLAMP) & (s_raw < EXP_CLAMP)
        ds = u_q * q * e * inside
        dp = u_p + _net_backward(self.scale_net, s_tape, ds) + _net_backward(self.shift_net, t_tape, u_q)
        dv = np.empty_like(u)
        dv[..., mask] = dp
        dv[..., ~mask] = u_q * e
        return dv

    def inverse(self, y: np.ndarray) -> np.ndarray:
        mask = self.mask
        p = y[..., mask]
        s_raw, _, t, _ = self._scale_shift(p)
        v = np.empty_like(y)
        v[..., mask] = p
        v[..., ~mask] = (y[..., ~mask] - t) * np.exp(-np.clip(s_raw, -EXP_CLAMP, EXP_CLAMP))
        return v


@dataclass(frozen=True)
class ModelSpec:
    """What to build: model kind, square dimension and kind-specific knobs."""

    kind: str
    dim: int
    n_c: int = 4
    activation: str = "sigmoid"
    output_scale: float = 1.0
    label: Optional[str] = None

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        if self.kind == "rnvp":
            return f"rnvp-nc{self.n_c}"
        if self.kind == "one-layer":
            return f"one-layer-{self.activation}"
        return self.kind


@dataclass(frozen=True, eq=False)
class GenerativeMap:
    """A differentiable map ``f_θ`` (optionally followed by an output scale)."""

    kind: str
    layers: Tuple[Union[DenseLayer, CouplingLayer], ...]
    input_dim: int
    output_dim: int
    n_c: int = 0
    activation: Optional[str] = None
    output_scale: float = 1.0
    label: Optional[str] = None
    seed: Optional[int] = None
    stream_id: Optional[int] = None

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"Unknown model kind: {self.kind}")
        object.__setattr__(self, "layers", tuple(self.layers))
        if self.kind == "rnvp":
            if self.input_dim != self.output_dim:
                raise ValueError("rnvp maps must be square")
            if len(self.layers) != self.n_c:
                raise ValueError(f"rnvp map has {len(self.layers)} layers, expected n_c={self.n_c}")
        if self.kind in ("identity", "gauss-cdf") and self.input_dim != self.output_dim:
            raise ValueError(f"{self.kind} maps must be square")
        if not np.isfinite(self.output_scale):
            raise ValueError("output_scale must be finite")

    @property
    def name(self) -> str:
        return self.label or self.kind

    def parameters(self) -> np.ndarray:
        """All weights and biases flattened into one vector (layer order)."""
        chunks: List[np.ndarray] = []
        for layer in self.layers:
            dense = [layer] if isinstance(layer, DenseLayer) else list(layer.scale_net) + list(layer.shift_net)
            for d in dense:
                chunks.extend([d.weights.ravel(), d.bias.ravel()])
        return np.concatenate(chunks) if chunks else np.zeros(0)

    def _apply_with_tape(self, v: np.ndarray):
        tape = []
        if self.kind == "gauss-cdf":
            out = ndtr(v)
            tape.append(v)
        else:
            out = v
            for layer in self.layers:
                if isinstance(layer, DenseLayer):
                    new, pre = layer.forward(out)
                    tape.append((pre, new))
                else:
                    new, cache = layer.forward(out)
                    tape.append(cache)
                out = new
        return self.output_scale * out, tape

    def _pullback(self, tape, u: np.ndarray) -> np.ndarray:
        u = self.output_scale * u
        if self.kind == "gauss-cdf":
            v = tape[0]
            return u * _INV_SQRT_2PI * np.exp(-0.5 * v * v)
        for layer, cache in zip(reversed(self.layers), reversed(tape)):
            if isinstance(layer, DenseLayer):
                pre, out = cache
                u = layer.backward(pre, out, u)
            else:
                u = layer.backward(cache, u)
        return u

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Evaluate ``f_θ(v)`` without mixing."""
        v = np.asarray(v, dtype=np.float64)
        if v.shape[-1] != self.input_dim:
            raise ValueError(f"input has dimension {v.shape[-1]}, map expects {self.input_dim}")
        return self._apply_with_tape(v)[0]

    def _check_mixing(self, B: MixingMatrix, z: np.ndarray):
        if B.shape[0] != self.input_dim:
            raise ValueError(f"B has {B.shape[0]} rows, map expects {self.input_dim}")
        if z.shape[-1] != B.shape[1]:
            raise ValueError(f"z has length {z.shape[-1]}, B has {B.shape[1]} columns")

    def forward(self, B: MixingMatrix, z: np.ndarray) -> np.ndarray:
        """Return ``x = f_θ(Bz)``."""
        z = np.asarray(z, dtype=np.float64)
        self._check_mixing(B, z)
        return self._apply_with_tape(B.mix(z))[0]

    def vjp(self, B: MixingMatrix, z: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Gradient of ``<u, f_θ(Bz)>`` with respect to ``z``."""
        z = np.asarray(z, dtype=np.float64)
        u = np.asarray(u, dtype=np.float64)
        self._check_mixing(B, z)
        if u.shape[-1] != self.output_dim:
            raise ValueError(f"cotangent has length {u.shape[-1]}, map output is {self.output_dim}")
        _, tape = self._apply_with_tape(B.mix(z))
        return self._pullback(tape, u) @ B.matrix

    def value_and_vjp(self, B: MixingMatrix, z: np.ndarray, cotangent_fn):
        """Evaluate ``x = f_θ(Bz)`` and pull back ``cotangent_fn(x)`` in one pass."""
        z = np.asarray(z, dtype=np.float64)
        self._check_mixing(B, z)
        x, tape = self._apply_with_tape(B.mix(z))
        u = cotangent_fn(x)
        return x, self._pullback(tape, u) @ B.matrix

    def pre_activations(self, B: MixingMatrix, z: np.ndarray) -> List[Tuple[str, np.ndarray]]:
        """Inputs of every non-linearity evaluated for ``f_θ(Bz)``, tagged with the activation.

        Coupling log-scales are reported as ``exp`` inputs.
        """
        z = np.asarray(z, dtype=np.float64)
        self._check_mixing(B, z)
        _, tape = self._apply_with_tape(B.mix(z))
        if self.kind == "gauss-cdf":
            return [("gauss-cdf", tape[0])]
        found: List[Tuple[str, np.ndarray]] = []
        for layer, cache in zip(self.layers, tape):
            if isinstance(layer, DenseLayer):
                found.append((layer.activation, cache[0]))
                continue
            _, s_raw, _, s_tape, t_tape = cache
            for net, net_tape in ((layer.scale_net, s_tape), (layer.shift_net, t_tape)):
                found.extend((d.activation, pre) for d, (pre, _) in zip(net, net_tape))
            found.append(("exp", s_raw))
        return found

    def inverse(self, x: np.ndarray) -> np.ndarray:
        """Invert ``f_θ`` alone (no mixing). Only rnvp and gauss-cdf maps."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.output_dim:
            raise ValueError(f"input has dimension {x.shape[-1]}, map output is {self.output_dim}")
        if self.kind not in ("rnvp", "gauss-cdf"):
            raise ValueError(f"inverse is not available for {self.kind} maps")
        if self.output_scale == 0:
            raise ValueError("a map with zero output scale is not invertible")
        y = x / self.output_scale
        if self.kind == "gauss-cdf":
            if np.any(y <= 0.0) or np.any(y >= 1.0):
                raise ValueError("gauss-cdf inverse needs every coordinate strictly inside (0, 1)")
            return ndtri(y)
        for layer in reversed(self.layers):
            y = layer.inverse(y)
        return y


def _dense(in_dim: int, out_dim: int, activation: str, rng: RngStream) -> DenseLayer:
    # self-normalizing init: N(0, 1/fan_in), zero bias
    W = gaussian_matrix(out_dim, in_dim, 1.0 / np.sqrt(in_dim), rng)
    return DenseLayer(W, np.zeros(out_dim), activation)


def alternating_mask(dim: int, index: int) -> np.ndarray:
    """Half-split mask: first half passes through on even layers, second half on odd."""
    mask = np.zeros(dim, dtype=bool)
    half = dim // 2
    if index % 2 == 0:
        mask[:half] = True
    else:
        mask[half:] = True
    return mask


def build_model(spec: ModelSpec, rng: RngStream) -> GenerativeMap:
    """Build a square generative map with randomly drawn parameters."""
    if spec.kind not in MODEL_KINDS:
        raise ValueError(f"Unknown model kind: {spec.kind}")
    d = int(spec.dim)
    if d < 1:
        raise ValueError(f"model dimension must be positive, got {d}")
    common = dict(input_dim=d, output_dim=d, output_scale=float(spec.output_scale),
                  label=spec.name, seed=rng.seed, stream_id=rng.stream_id)

    if spec.kind in ("identity", "gauss-cdf"):
        return GenerativeMap(spec.kind, (), **common)

    if spec.kind == "one-layer":
        if spec.activation not in ACTIVATIONS:
            raise ValueError(f"Unknown activation: {spec.activation}")
        layer = _dense(d, d, spec.activation, rng.child("one-layer"))
        return GenerativeMap("one-layer", (layer,), activation=spec.activation, **common)

    # rnvp
    if d % 2:
        raise ValueError(f"rnvp needs an even dimension, got {d}")
    if spec.n_c < 1:
        raise ValueError(f"rnvp needs at least one coupling layer, got n_c={spec.n_c}")
    half = d // 2
    layers = []
    for k in range(spec.n_c):
        nets = {}
        for net_name in ("scale", "shift"):
            nets[net_name] = (
                _dense(half, half, "selu", rng.child("rnvp", k, net_name, 0)),
                _dense(half, half, "selu", rng.child("rnvp", k, net_name, 1)),
                _dense(half, half, "identity", rng.child("rnvp", k, net_name, 2)),
            )
        layers.append(CouplingLayer(alternating_mask(d, k), nets["scale"], nets["shift"]))
    return GenerativeMap("rnvp", tuple(layers), n_c=spec.n_c, activation="selu", **common)


def forward(model: GenerativeMap, B: MixingMatrix, z: np.ndarray) -> np.ndarray:
    return model.forward(B, z)


def vjp(model: GenerativeMap, B: MixingMatrix, z: np.ndarray, u: np.ndarray) -> np.ndarray:
    return model.vjp(B, z, u)


def inverse(model: GenerativeMap, x: np.ndarray) -> np.ndarray:
    return model.inverse(x)


# --- serialization ---------------------------------------------------------

def _dense_arrays(prefix: str, layer: DenseLayer, arrays: Dict[str, np.ndarray]) -> Dict[str, Any]:
    arrays[f"{prefix}.weights"] = np.asarray(layer.weights)
    arrays[f"{prefix}.bias"] = np.asarray(layer.bias)
    return {"activation": layer.activation}


def save_model(model: GenerativeMap, path: Union[str, Path]) -> Path:
    """Write ``model`` to a self-describing ``.npz`` record."""
    path = Path(path)
    arrays: Dict[str, np.ndarray] = {}
    layer_records = []
    for i, layer in enumerate(model.layers):
        if isinstance(layer, DenseLayer):
            record = {"type": "dense"}
            record.update(_dense_arrays(f"layer{i}", layer, arrays))
        else:
            arrays[f"layer{i}.mask"] = np.asarray(layer.mask)
            record = {
                "type": "coupling",
                "scale": [_dense_arrays(f"layer{i}.scale{j}", d, arrays) for j, d in enumerate(layer.scale_net)],
                "shift": [_dense_arrays(f"layer{i}.shift{j}", d, arrays) for j, d in enumerate(layer.shift_net)],
            }
        layer_records.append(record)

    header = {
        "format_version": MODEL_FORMAT_VERSION,
        "kind": model.kind,
        "input_dim": model.input_dim,
        "output_dim": model.output_dim,
        "n_c": model.n_c,
        "activation": model.activation,
        # repr keeps every bit of the float
        "output_scale": repr(float(model.output_scale)),
        "label": model.label,
        "seed": model.seed,
        "stream_id": model.stream_id,
        "layers": layer_records,
    }
    with open(path, "wb") as f:
        np.savez(f, header=np.array(json.dumps(header, sort_keys=True)), **arrays)
    return path


def _load_dense(prefix: str, record: Dict[str, Any], data) -> DenseLayer:
    return DenseLayer(data[f"{prefix}.weights"], data[f"{prefix}.bias"], record["activation"])


def load_model(path: Union[str, Path]) -> GenerativeMap:
    """Read a model written by :func:`save_model`."""
    with np.load(Path(path), allow_pickle=False) as data:
        header = json.loads(str(data["header"]))
        version = header.get("format_version")
        if version != MODEL_FORMAT_VERSION:
            raise ValueError(f"Unsupported model format version: {version}")
        layers = []
        for i, record in enumerate(header["layers"]):
            if record["type"] == "dense":
                layers.append(_load_dense(f"layer{i}", record, data))
            elif record["type"] == "coupling":
                layers.append(CouplingLayer(
                    data[f"layer{i}.mask"],
                    tuple(_load_dense(f"layer{i}.scale{j}", r, data) for j, r in enumerate(record["scale"])),
                    tuple(_load_dense(f"layer{i}.shift{j}", r, data) for j, r in enumerate(record["shift"])),
                ))
            else:
                raise ValueError(f"Unknown layer type in model record: {record['type']}")
    return GenerativeMap(
        header["kind"], tuple(layers), header["input_dim"], header["output_dim"],
        n_c=header["n_c"], activation=header["activation"],
        output_scale=float(header["output_scale"]), label=header["label"],
        seed=header["seed"], stream_id=header["stream_id"],
    )
