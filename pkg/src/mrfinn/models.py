"""Invertible coupling network and the fully-connected baseline.

The invertible model stacks reversible blocks.  Each block permutes its
input, splits it into halves ``u1, u2`` and applies two complementary
affine transformations

    v1 = u1 * exp(s2(u2)) + t2(u2)
    v2 = u2 * exp(s1(v1)) + t1(v1)

whose exact inverse is

    u2 = (v2 - t1(v1)) * exp(-s1(v1))
    u1 = (v1 - t2(u2)) * exp(-s2(u2))

so the block is bijective no matter what the four subnets compute.  Scale
outputs pass through a smooth atan clamp before exponentiation, which keeps
early training stable without breaking invertibility.  Both evaluation
directions have hand-written analytic gradients with respect to every
subnet parameter, so one optimizer step can sum losses from both
directions.

All arithmetic is float64; batches are ``(batch, dim)``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError
from .neural import DenseLayer, dense_backward, dense_forward, init_dense
from .rng import subrng
from .simulator import N_PARAMS

CHECKPOINT_MAGIC = b"MRFN"
CHECKPOINT_VERSION = 1
MODEL_KINDS = ("inn", "inn_bwd", "fcn")

DEFAULT_HIDDEN = 128
DEFAULT_BLOCKS = 2
DEFAULT_CLAMP = 4.0
FCN_HIDDEN = 300


def soft_clamp(s: np.ndarray, limit: float) -> np.ndarray:
    """Smooth odd squashing of scale outputs into (-limit, limit).

    Identity slope at 0 so small scales are untouched; saturates at the
    limit so ``exp`` stays bounded by ``e**limit``.
    """
    c = np.pi / (2.0 * limit)
    return np.arctan(c * s) / c


def soft_clamp_deriv(s: np.ndarray, limit: float) -> np.ndarray:
    c = np.pi / (2.0 * limit)
    return 1.0 / (1.0 + (c * s) ** 2)


class Subnet:
    """Scale/translation subnet: dense relu layer then dense linear layer."""

    def __init__(self, hidden_layer: DenseLayer, out_layer: DenseLayer):
        if hidden_layer.activation != "relu" or out_layer.activation != "linear":
            raise ValidationError("subnet must be a relu layer followed by a linear layer")
        if hidden_layer.n_out != out_layer.n_in:
            raise ValidationError("subnet layer widths do not chain")
        self.hidden_layer = hidden_layer
        self.out_layer = out_layer

    @classmethod
    def create(cls, width: int, hidden: int, rng: np.random.Generator) -> "Subnet":
        return cls(init_dense(width, hidden, "relu", rng),
                   init_dense(hidden, width, "linear", rng))

    def forward(self, x):
        h, c1 = dense_forward(self.hidden_layer, x)
        y, c2 = dense_forward(self.out_layer, h)
        return y, (c1, c2)

    def backward(self, cache, upstream):
        c1, c2 = cache
        dh, (dw2, db2) = dense_backward(c2, upstream)
        dx, (dw1, db1) = dense_backward(c1, dh)
        return dx, [dw1, db1, dw2, db2]

    def params(self) -> list[np.ndarray]:
        return [self.hidden_layer.weights, self.hidden_layer.biases,
                self.out_layer.weights, self.out_layer.biases]


class CouplingBlock:
    """One reversible block: seeded permutation plus two affine couplings."""

    def __init__(self, permutation: np.ndarray, s1: Subnet, t1: Subnet,
                 s2: Subnet, t2: Subnet, clamp: float = DEFAULT_CLAMP):
        permutation = np.asarray(permutation, dtype=np.int64)
        dim = permutation.size
        if dim % 2 != 0:
            raise ValidationError("coupling dimension must be even")
        if sorted(permutation.tolist()) != list(range(dim)):
            raise ValidationError("permutation must be a bijection on 0..d-1")
        self.permutation = permutation
        self.inverse_permutation = np.argsort(permutation)
        self.dim = dim
        self.half = dim // 2
        self.clamp = float(clamp)
        self.s1, self.t1, self.s2, self.t2 = s1, t1, s2, t2
        for net in (s1, t1, s2, t2):
            if net.hidden_layer.n_in != self.half or net.out_layer.n_out != self.half:
                raise ValidationError("subnet width must equal half the block dimension")

    @classmethod
    def create(cls, dim: int, hidden: int, rng: np.random.Generator,
               clamp: float = DEFAULT_CLAMP) -> "CouplingBlock":
        perm = rng.permutation(dim)
        half = dim // 2
        nets = [Subnet.create(half, hidden, rng) for _ in range(4)]
        return cls(perm, *nets, clamp=clamp)

    def params(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for net in (self.s1, self.t1, self.s2, self.t2):
            out.extend(net.params())
        return out

    def _check_dim(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise ValidationError(f"expected (batch, {self.dim}) input, got {x.shape}")
        return x

    def forward(self, u: np.ndarray):
        u = self._check_dim(u)
        up = u[:, self.permutation]
        u1, u2 = up[:, :self.half], up[:, self.half:]
        a2, cs2 = self.s2.forward(u2)
        e2 = np.exp(soft_clamp(a2, self.clamp))
        b2, ct2 = self.t2.forward(u2)
        v1 = u1 * e2 + b2
        a1, cs1 = self.s1.forward(v1)
        e1 = np.exp(soft_clamp(a1, self.clamp))
        b1, ct1 = self.t1.forward(v1)
        v2 = u2 * e1 + b1
        cache = (u1, u2, a1, a2, e1, e2, cs1, ct1, cs2, ct2)
        return np.concatenate([v1, v2], axis=1), cache

    def backward(self, cache, dv: np.ndarray):
        """Gradients of the forward map: ``(du, subnet_param_grads)``."""
        u1, u2, a1, a2, e1, e2, cs1, ct1, cs2, ct2 = cache
        dv = self._check_dim(dv)
        dv1, dv2 = dv[:, :self.half], dv[:, self.half:]

        du2 = dv2 * e1
        da1 = dv2 * u2 * e1 * soft_clamp_deriv(a1, self.clamp)
        dv1_s1, g_s1 = self.s1.backward(cs1, da1)
        dv1_t1, g_t1 = self.t1.backward(ct1, dv2)
        dv1_total = dv1 + dv1_s1 + dv1_t1

        du1 = dv1_total * e2
        da2 = dv1_total * u1 * e2 * soft_clamp_deriv(a2, self.clamp)
        du2_s2, g_s2 = self.s2.backward(cs2, da2)
        du2_t2, g_t2 = self.t2.backward(ct2, dv1_total)
        du2 = du2 + du2_s2 + du2_t2

        dup = np.concatenate([du1, du2], axis=1)
        du = np.empty_like(dup)
        du[:, self.permutation] = dup
        return du, g_s1 + g_t1 + g_s2 + g_t2

    def inverse(self, v: np.ndarray):
        v = self._check_dim(v)
        v1, v2 = v[:, :self.half], v[:, self.half:]
        a1, cs1 = self.s1.forward(v1)
        e1m = np.exp(-soft_clamp(a1, self.clamp))
        b1, ct1 = self.t1.forward(v1)
        d1 = v2 - b1
        u2 = d1 * e1m
        a2, cs2 = self.s2.forward(u2)
        e2m = np.exp(-soft_clamp(a2, self.clamp))
        b2, ct2 = self.t2.forward(u2)
        d2 = v1 - b2
        u1 = d2 * e2m
        up = np.concatenate([u1, u2], axis=1)
        cache = (d1, d2, a1, a2, e1m, e2m, cs1, ct1, cs2, ct2)
        return up[:, self.inverse_permutation], cache

    def inverse_backward(self, cache, du: np.ndarray):
        """Gradients of the inverse map: ``(dv, subnet_param_grads)``."""
        d1, d2, a1, a2, e1m, e2m, cs1, ct1, cs2, ct2 = cache
        du = self._check_dim(du)
        dup = du[:, self.permutation]
        du1, du2 = dup[:, :self.half], dup[:, self.half:]

        dv1 = du1 * e2m
        db2 = -du1 * e2m
        da2 = -du1 * d2 * e2m * soft_clamp_deriv(a2, self.clamp)
        du2_s2, g_s2 = self.s2.backward(cs2, da2)
        du2_t2, g_t2 = self.t2.backward(ct2, db2)
        du2_total = du2 + du2_s2 + du2_t2

        dv2 = du2_total * e1m
        db1 = -du2_total * e1m
        da1 = -du2_total * d1 * e1m * soft_clamp_deriv(a1, self.clamp)
        dv1_s1, g_s1 = self.s1.backward(cs1, da1)
        dv1_t1, g_t1 = self.t1.backward(ct1, db1)
        dv1 = dv1 + dv1_s1 + dv1_t1

        return np.concatenate([dv1, dv2], axis=1), g_s1 + g_t1 + g_s2 + g_t2


class InnModel:
    """Stack of reversible blocks, evaluable and differentiable both ways."""

    def __init__(self, blocks: list[CouplingBlock], kind: str = "inn",
                 seed: int = 0, hidden: int = DEFAULT_HIDDEN, scaler=None):
        if not blocks:
            raise ValidationError("model needs at least one block")
        dims = {b.dim for b in blocks}
        if len(dims) != 1:
            raise ValidationError("all blocks must share one dimension")
        if kind not in ("inn", "inn_bwd"):
            raise ValidationError(f"invalid invertible-model kind {kind!r}")
        self.blocks = blocks
        self.dim = blocks[0].dim
        self.kind = kind
        self.seed = seed
        self.hidden = hidden
        self.scaler = scaler

    @property
    def parameter_count(self) -> int:
        return sum(p.size for p in self.get_params())

    def get_params(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for block in self.blocks:
            out.extend(block.params())
        return out

    def set_params(self, values: list[np.ndarray]) -> None:
        current = self.get_params()
        if len(values) != len(current):
            raise ValidationError("parameter list has the wrong length")
        for dst, src in zip(current, values):
            if dst.shape != src.shape:
                raise ValidationError("parameter shapes do not match")
            dst[...] = src

    def forward(self, u: np.ndarray):
        """Parameters -> fingerprint direction; returns ``(v, caches)``."""
        caches = []
        x = u
        for block in self.blocks:
            x, cache = block.forward(x)
            caches.append(cache)
        return x, caches

    def backward(self, caches, dv: np.ndarray):
        grads_per_block = [None] * len(self.blocks)
        grad = dv
        for i in range(len(self.blocks) - 1, -1, -1):
            grad, grads_per_block[i] = self.blocks[i].backward(caches[i], grad)
        flat: list[np.ndarray] = []
        for g in grads_per_block:
            flat.extend(g)
        return grad, flat

    def inverse(self, v: np.ndarray):
        """Fingerprint -> parameters direction; returns ``(u, caches)``."""
        caches = [None] * len(self.blocks)
        x = v
        for i in range(len(self.blocks) - 1, -1, -1):
            x, caches[i] = self.blocks[i].inverse(x)
        return x, caches

    def inverse_backward(self, caches, du: np.ndarray):
        grads_per_block = [None] * len(self.blocks)
        grad = du
        for i, block in enumerate(self.blocks):
            grad, grads_per_block[i] = block.inverse_backward(caches[i], grad)
        flat: list[np.ndarray] = []
        for g in grads_per_block:
            flat.extend(g)
        return grad, flat

    def forward_only(self, u: np.ndarray, chunk: int = 4096) -> np.ndarray:
        """Forward evaluation without retaining gradient caches."""
        u = np.atleast_2d(np.asarray(u, dtype=np.float64))
        parts = [self.forward(u[lo:lo + chunk])[0]
                 for lo in range(0, u.shape[0], chunk)]
        return np.concatenate(parts, axis=0)

    def inverse_only(self, v: np.ndarray, chunk: int = 4096) -> np.ndarray:
        """Inverse evaluation without retaining gradient caches."""
        v = np.atleast_2d(np.asarray(v, dtype=np.float64))
        parts = [self.inverse(v[lo:lo + chunk])[0]
                 for lo in range(0, v.shape[0], chunk)]
        return np.concatenate(parts, axis=0)

    def estimate_scaled(self, y_features: np.ndarray) -> np.ndarray:
        """Scaled parameter estimates (first M inverse outputs)."""
        return self.inverse_only(y_features)[:, :N_PARAMS]


class FcnModel:
    """Plain feed-forward baseline: 2T -> 300 -> 300 -> M."""

    def __init__(self, layers: list[DenseLayer], seed: int = 0, scaler=None):
        self.layers = layers
        self.kind = "fcn"
        self.seed = seed
        self.scaler = scaler
        self.dim = layers[0].n_in

    @property
    def parameter_count(self) -> int:
        return sum(layer.parameter_count for layer in self.layers)

    def get_params(self) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

    def set_params(self, values: list[np.ndarray]) -> None:
        current = self.get_params()
        if len(values) != len(current):
            raise ValidationError("parameter list has the wrong length")
        for dst, src in zip(current, values):
            if dst.shape != src.shape:
                raise ValidationError("parameter shapes do not match")
            dst[...] = src

    def forward(self, x: np.ndarray):
        caches = []
        out = np.atleast_2d(np.asarray(x, dtype=np.float64))
        for layer in self.layers:
            out, cache = dense_forward(layer, out)
            caches.append(cache)
        return out, caches

    def backward(self, caches, upstream: np.ndarray):
        grads_per_layer = [None] * len(self.layers)
        grad = upstream
        for i in range(len(self.layers) - 1, -1, -1):
            grad, (dw, db) = dense_backward(caches[i], grad)
            grads_per_layer[i] = [dw, db]
        flat: list[np.ndarray] = []
        for g in grads_per_layer:
            flat.extend(g)
        return grad, flat

    def estimate_scaled(self, y_features: np.ndarray) -> np.ndarray:
        y = np.atleast_2d(np.asarray(y_features, dtype=np.float64))
        parts = [self.forward(y[lo:lo + 4096])[0]
                 for lo in range(0, y.shape[0], 4096)]
        return np.concatenate(parts, axis=0)


def pad_params(x_scaled: np.ndarray, dim: int) -> np.ndarray:
    """Zero-pad scaled parameter rows ``(B, M)`` to the model dimension."""
    x_scaled = np.atleast_2d(np.asarray(x_scaled, dtype=np.float64))
    if x_scaled.shape[1] > dim:
        raise ValidationError(f"cannot pad {x_scaled.shape[1]} values into dim {dim}")
    padded = np.zeros((x_scaled.shape[0], dim), dtype=np.float64)
    padded[:, :x_scaled.shape[1]] = x_scaled
    return padded


def build_inn(dim: int, seed: int, kind: str = "inn",
              hidden: int = DEFAULT_HIDDEN, n_blocks: int = DEFAULT_BLOCKS,
              clamp: float = DEFAULT_CLAMP, scaler=None) -> InnModel:
    """Seeded invertible model; permutations and weights derive from ``seed``."""
    if dim % 2 != 0:
        raise ValidationError("model dimension must be even")
    rng = subrng(seed, "inn-init")
    blocks = [CouplingBlock.create(dim, hidden, rng, clamp=clamp)
              for _ in range(n_blocks)]
    return InnModel(blocks, kind=kind, seed=seed, hidden=hidden, scaler=scaler)


def build_fcn(dim: int, seed: int, hidden: int = FCN_HIDDEN,
              n_out: int = N_PARAMS, scaler=None) -> FcnModel:
    """Seeded fully-connected baseline."""
    rng = subrng(seed, "fcn-init")
    layers = [init_dense(dim, hidden, "relu", rng),
              init_dense(hidden, hidden, "relu", rng),
              init_dense(hidden, n_out, "linear", rng)]
    return FcnModel(layers, seed=seed, scaler=scaler)


def build_model(kind: str, dim: int, seed: int, scaler=None,
                hidden: int | None = None):
    """Construct a model of the requested kind with spec-default widths."""
    if kind in ("inn", "inn_bwd"):
        return build_inn(dim, seed, kind=kind,
                         hidden=DEFAULT_HIDDEN if hidden is None else hidden,
                         scaler=scaler)
    if kind == "fcn":
        return build_fcn(dim, seed,
                         hidden=FCN_HIDDEN if hidden is None else hidden,
                         scaler=scaler)
    raise ValidationError(f"unknown model kind {kind!r}; choose from {MODEL_KINDS}")


def _model_header(model) -> dict:
    header = {
        "model_kind": model.kind,
        "dim": model.dim,
        "seed": model.seed,
        "shapes": [list(p.shape) for p in model.get_params()],
        "scaler": None if model.scaler is None else model.scaler.to_dict(),
    }
    if isinstance(model, InnModel):
        header["hidden"] = model.hidden
        header["n_blocks"] = len(model.blocks)
        header["clamp"] = model.blocks[0].clamp
        header["permutations"] = [b.permutation.tolist() for b in model.blocks]
    else:
        header["layer_sizes"] = [layer.n_out for layer in model.layers]
        header["activations"] = [layer.activation for layer in model.layers]
    return header


def save_checkpoint(model, path: str | Path) -> None:
    """Versioned binary checkpoint: header JSON + float64 parameter payload."""
    header_bytes = json.dumps(_model_header(model), sort_keys=True).encode("utf-8")
    payload = np.concatenate([p.reshape(-1) for p in model.get_params()])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload.astype("<f8").tobytes())


def load_checkpoint(path: str | Path):
    """Rebuild a model from a checkpoint file (permutations bit-exact)."""
    from .training import ParamScaler  # deferred: training depends on models

    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path} is not a model checkpoint")
    version, header_len = struct.unpack("<II", raw[4:12])
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    if len(raw) < 12 + header_len:
        raise FormatError(f"{path}: truncated checkpoint header")
    header = json.loads(raw[12:12 + header_len].decode("utf-8"))
    shapes = [tuple(s) for s in header["shapes"]]
    expected = sum(int(np.prod(s)) for s in shapes)
    payload = np.frombuffer(raw[12 + header_len:], dtype="<f8")
    if payload.size != expected:
        raise FormatError(
            f"{path}: payload holds {payload.size} values, header expects {expected}")

    scaler = None
    if header["scaler"] is not None:
        scaler = ParamScaler.from_dict(header["scaler"])
    kind = header["model_kind"]
    if kind in ("inn", "inn_bwd"):
        rng = subrng(header["seed"], "inn-init")  # placeholder weights only
        blocks = []
        for perm in header["permutations"]:
            nets = [Subnet.create(header["dim"] // 2, header["hidden"], rng)
                    for _ in range(4)]
            blocks.append(CouplingBlock(np.asarray(perm, dtype=np.int64), *nets,
                                        clamp=header["clamp"]))
        model = InnModel(blocks, kind=kind, seed=header["seed"],
                         hidden=header["hidden"], scaler=scaler)
    elif kind == "fcn":
        sizes = header["layer_sizes"]
        acts = header["activations"]
        layers = []
        n_in = header["dim"]
        for n_out, act in zip(sizes, acts):
            layers.append(DenseLayer(np.zeros((n_out, n_in)), np.zeros(n_out), act))
            n_in = n_out
        model = FcnModel(layers, seed=header["seed"], scaler=scaler)
    else:
        raise FormatError(f"{path}: unknown model kind {kind!r}")

    params = []
    offset = 0
    for shape in shapes:
        size = int(np.prod(shape))
        params.append(payload[offset:offset + size].reshape(shape).copy())
        offset += size
    model.set_params(params)
    return model
