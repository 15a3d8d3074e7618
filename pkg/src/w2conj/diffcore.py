"""Small differentiable evaluation engine for fixed feed-forward networks.

Networks are stacks of :class:`Layer` blocks.  Each block computes::

    pre = Wz @ z_prev + Wx @ x + b
    a   = exp(log_scale) * pre + shift        (optional activation-norm)
    z   = act(a)

where ``Wz`` may be constrained nonnegative through a softplus map.  The
network output is either a scalar per row (``act(last) + exp(log_alpha)/2 |x|^2``)
or a residual vector ``x + W z + b``.

Gradients are closed-form per-layer backward rules.  The forward pass can
also carry a tangent along an input direction ``v``; backpropagating through
that augmented pass yields second-order quantities (Hessian-vector products
and parameter gradients of ``v . grad_x f``) which the amortization losses and
identity pretraining need.
"""
from __future__ import annotations

import contextlib
import functools
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

ACTNORM_EPS = 1e-6


class DimensionError(ValueError):
    """Raised when array shapes do not match a network's declared sizes."""


class ContractError(ValueError):
    """Raised when an operation is used outside its contract."""


# ---------------------------------------------------------------------------
# parameter vectors


_ROW_STABLE = False


@contextlib.contextmanager
def row_stable(enabled=True):
    """Compute row-wise products without BLAS inside the block.

    BLAS picks kernels by batch size, so a row evaluated inside a large batch
    can differ in the last bits from the same row evaluated alone.  In this
    mode every row is reduced in a fixed order, at roughly 3x the cost.
    """
    global _ROW_STABLE
    previous = _ROW_STABLE
    _ROW_STABLE = bool(enabled)
    try:
        yield
    finally:
        _ROW_STABLE = previous


def rowmm(a, b):
    """``a @ b`` for a batch ``a`` of rows (see :func:`row_stable`)."""
    if _ROW_STABLE:
        return np.einsum("ik,kn->in", np.ascontiguousarray(a), np.ascontiguousarray(b))
    return a @ b


@functools.lru_cache(maxsize=256)
def _layout_index(layout):
    index = {}
    expected = 0
    for name, shape, offset in layout:
        if offset != expected:
            raise ValueError(f"layout gap or overlap at {name!r}")
        size = int(np.prod(shape, dtype=int))
        index[name] = (shape, offset, size)
        expected += size
    return index, expected


@dataclass(frozen=True, eq=False)
class ParamVector:
    """Flat parameter array with a named layout.

    ``layout`` is an ordered tuple of ``(name, shape, offset)`` entries that
    partition ``values`` exactly.
    """

    values: np.ndarray
    layout: tuple

    def __post_init__(self):
        index, expected = _layout_index(self.layout)
        if expected != self.values.size or self.values.ndim != 1:
            raise ValueError("layout does not cover the flat array exactly")
        object.__setattr__(self, "_index", index)

    @classmethod
    def from_shapes(cls, shapes: Sequence[tuple], values=None) -> "ParamVector":
        layout = []
        offset = 0
        for name, shape in shapes:
            shape = tuple(int(s) for s in shape)
            layout.append((name, shape, offset))
            offset += int(np.prod(shape, dtype=int))
        if values is None:
            values = np.zeros(offset)
        return cls(np.asarray(values, dtype=np.float64), tuple(layout))

    @property
    def names(self):
        return [name for name, _, _ in self.layout]

    def __len__(self):
        return self.values.size

    def __getitem__(self, name: str) -> np.ndarray:
        shape, offset, size = self._index[name]
        return self.values[offset:offset + size].reshape(shape)

    def __contains__(self, name):
        return name in self._index

    def replace(self, **tensors) -> "ParamVector":
        """Return a copy with the named tensors overwritten."""
        values = self.values.copy()
        for name, tensor in tensors.items():
            shape, offset, size = self._index[name]
            values[offset:offset + size] = np.broadcast_to(tensor, shape).ravel()
        return ParamVector(values, self.layout)

    def with_values(self, values) -> "ParamVector":
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.values.shape:
            raise DimensionError("flat value array has the wrong size")
        return ParamVector(values, self.layout)

    def zeros_like(self) -> "ParamVector":
        return ParamVector(np.zeros_like(self.values), self.layout)

    def manifest(self) -> list:
        return [[name, list(shape), offset] for name, shape, offset in self.layout]

    def to_json(self) -> str:
        return json.dumps({"layout": self.manifest(), "values": self.values.tolist()})

    @classmethod
    def from_manifest(cls, manifest, values) -> "ParamVector":
        layout = tuple((name, tuple(shape), int(offset)) for name, shape, offset in manifest)
        return cls(np.asarray(values, dtype=np.float64), layout)

    @classmethod
    def from_json(cls, text: str) -> "ParamVector":
        data = json.loads(text)
        return cls.from_manifest(data["layout"], data["values"])


# ---------------------------------------------------------------------------
# activations: value, first and second derivative


class Activation:
    name = "identity"

    def __call__(self, a):
        return a

    def d1(self, a):
        return np.ones_like(a)

    def d2(self, a):
        return np.zeros_like(a)

    def __repr__(self):
        return self.name


class ELU(Activation):
    name = "elu"

    def __call__(self, a):
        # expm1(a) >= a for a <= 0, so the max picks the right branch
        return np.maximum(a, np.expm1(np.minimum(a, 0.0)))

    def d1(self, a):
        return np.exp(np.minimum(a, 0.0))

    def d2(self, a):
        return np.where(a > 0, 0.0, np.exp(np.minimum(a, 0.0)))


class LeakyReLU(Activation):
    def __init__(self, slope=0.2):
        self.slope = float(slope)
        self.name = f"leaky_relu({self.slope:g})"

    def __call__(self, a):
        return np.where(a > 0, a, self.slope * a)

    def d1(self, a):
        return np.where(a > 0, 1.0, self.slope)


def get_activation(spec) -> Activation:
    """Parse ``'elu'``, ``'identity'``, ``'leaky_relu'`` or ``'leaky_relu(0.1)'``."""
    if isinstance(spec, Activation):
        return spec
    spec = str(spec).strip().lower()
    if spec == "elu":
        return ELU()
    if spec in ("identity", "linear", "none"):
        return Activation()
    if spec.startswith("leaky_relu") or spec.startswith("lrelu"):
        if "(" in spec:
            return LeakyReLU(float(spec[spec.index("(") + 1:spec.rindex(")")]))
        return LeakyReLU(0.2)
    raise ContractError(f"unknown activation {spec!r}")


def softplus(k):
    return np.logaddexp(0.0, k)


def softplus_inv(w):
    w = np.asarray(w, dtype=np.float64)
    return w + np.log(-np.expm1(-w))


def sigmoid(k):
    return 0.5 * (1.0 + np.tanh(0.5 * k))


# ---------------------------------------------------------------------------
# layers and networks


@dataclass
class Layer:
    """One block of a network.

    ``z_in``/``x_in`` are the input widths from the previous block and from the
    network input (0 disables that path).  ``positive`` applies softplus to the
    ``z`` kernel.
    """

    name: str
    out_dim: int
    z_in: int = 0
    x_in: int = 0
    positive: bool = False
    bias: bool = True
    actnorm: bool = False
    activation: Activation = field(default_factory=Activation)

    def shapes(self):
        shapes = []
        if self.z_in:
            shapes.append((f"{self.name}.wz", (self.z_in, self.out_dim)))
        if self.x_in:
            shapes.append((f"{self.name}.wx", (self.x_in, self.out_dim)))
        if self.bias:
            shapes.append((f"{self.name}.b", (self.out_dim,)))
        if self.actnorm:
            shapes.append((f"{self.name}.log_scale", (self.out_dim,)))
            shapes.append((f"{self.name}.shift", (self.out_dim,)))
        return shapes


class Network:
    """A fixed stack of :class:`Layer` blocks with a scalar or residual head.

    ``head='scalar'`` requires the last layer to have width 1 and adds the
    learnable quadratic ``exp(log_alpha)/2 |x|^2`` when ``quadratic`` is set.
    ``head='residual'`` returns ``x + last_layer(z)``.
    """

    def __init__(self, dim: int, layers: Sequence[Layer], head="scalar", quadratic=True):
        if head not in ("scalar", "residual"):
            raise ContractError(f"unknown head {head!r}")
        self.dim = int(dim)
        self.layers = list(layers)
        self.head = head
        self.quadratic = bool(quadratic) and head == "scalar"
        self._n_params = None
        if head == "scalar" and self.layers[-1].out_dim != 1:
            raise ContractError("scalar head needs a width-1 final layer")
        if head == "residual" and self.layers[-1].out_dim != self.dim:
            raise ContractError("residual head needs a final layer of input width")

    @property
    def output_dim(self):
        return 1 if self.head == "scalar" else self.dim

    def param_shapes(self):
        shapes = []
        for layer in self.layers:
            shapes.extend(layer.shapes())
        if self.quadratic:
            shapes.append(("log_alpha", ()))
        return shapes

    def zeros(self) -> ParamVector:
        return ParamVector.from_shapes(self.param_shapes())

    def _check(self, params: ParamVector, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.dim:
            raise DimensionError(f"expected a batch of shape (B, {self.dim}), got {x.shape}")
        if self._n_params is None:
            self._n_params = sum(int(np.prod(s, dtype=int)) for _, s in self.param_shapes())
        if params.values.size != self._n_params:
            raise DimensionError("parameter vector does not match the network layout")
        return x

    # -- forward ------------------------------------------------------------

    def _forward(self, params, x, v=None):
        """Run the network, caching what the backward rules need.

        With ``v`` given, tangents along ``v`` are propagated alongside.
        """
        cache = []
        z = zdot = None
        for layer in self.layers:
            n = layer.name
            pre = 0.0
            pdot = 0.0 if v is not None else None
            wz = None
            if layer.z_in:
                k = params[f"{n}.wz"]
                wz = softplus(k) if layer.positive else k
                pre = pre + rowmm(z, wz)
                if v is not None:
                    pdot = pdot + rowmm(zdot, wz)
            if layer.x_in:
                wx = params[f"{n}.wx"]
                pre = pre + rowmm(x, wx)
                if v is not None:
                    pdot = pdot + rowmm(v, wx)
            if layer.bias:
                pre = pre + params[f"{n}.b"]
            if np.isscalar(pre):
                raise ContractError(f"layer {n!r} has no inputs")
            if layer.actnorm:
                scale = np.exp(params[f"{n}.log_scale"])
                a = pre * scale + params[f"{n}.shift"]
                adot = pdot * scale if v is not None else None
            else:
                scale = None
                a, adot = pre, pdot
            out = layer.activation(a)
            outdot = layer.activation.d1(a) * adot if v is not None else None
            cache.append(dict(z_in=z, zdot_in=zdot, wz=wz, pre=pre, pdot=pdot,
                              scale=scale, a=a, adot=adot))
            z, zdot = out, outdot
        if self.head == "scalar":
            f = z[:, 0]
            fdot = zdot[:, 0] if v is not None else None
            if self.quadratic:
                alpha = np.exp(params["log_alpha"])
                f = f + 0.5 * alpha * np.einsum("ij,ij->i", x, x)
                if v is not None:
                    fdot = fdot + alpha * np.einsum("ij,ij->i", x, v)
            return f, fdot, cache
        out = x + z
        outdot = (v + zdot) if v is not None else None
        return out, outdot, cache

    # -- backward -----------------------------------------------------------

    def _backward(self, params, x, cache, g_out, g_outdot=None, v=None):
        """Backpropagate cotangents of the output (and its tangent).

        Returns ``(param_grad_flat, input_grad)``.
        """
        grads = {}
        second = g_outdot is not None
        gx = np.zeros_like(x)
        if self.head == "scalar":
            g_out = np.asarray(g_out, dtype=np.float64).reshape(-1)
            if self.quadratic:
                alpha = np.exp(params["log_alpha"])
                sq = 0.5 * np.einsum("ij,ij->i", x, x)
                g_la = alpha * np.dot(g_out, sq)
                gx = gx + alpha * g_out[:, None] * x
                if second:
                    g_la += alpha * np.dot(g_outdot, np.einsum("ij,ij->i", x, v))
                    gx = gx + alpha * g_outdot[:, None] * v
                grads["log_alpha"] = np.asarray(g_la)
            gz = g_out[:, None]
            gzdot = g_outdot[:, None] if second else None
        else:
            g_out = np.asarray(g_out, dtype=np.float64)
            gx = gx + g_out
            gz = g_out
            gzdot = None
            if second:
                raise ContractError("second-order rules apply to scalar heads only")

        for layer, c in zip(reversed(self.layers), reversed(cache)):
            n = layer.name
            act = layer.activation
            d1 = act.d1(c["a"])
            ga = gz * d1
            if second:
                ga = ga + gzdot * act.d2(c["a"]) * c["adot"]
                gadot = gzdot * d1
            if layer.actnorm:
                scale = c["scale"]
                g_scale = np.sum(ga * c["pre"], axis=0)
                if second:
                    g_scale = g_scale + np.sum(gadot * c["pdot"], axis=0)
                grads[f"{n}.log_scale"] = g_scale * scale
                grads[f"{n}.shift"] = np.sum(ga, axis=0)
                gpre = ga * scale
                gpdot = gadot * scale if second else None
            else:
                gpre = ga
                gpdot = gadot if second else None
            if layer.bias:
                grads[f"{n}.b"] = np.sum(gpre, axis=0)
            if layer.x_in:
                gw = x.T @ gpre
                if second:
                    gw = gw + v.T @ gpdot
                grads[f"{n}.wx"] = gw
                gx = gx + rowmm(gpre, params[f"{n}.wx"].T)
            if layer.z_in:
                gw = c["z_in"].T @ gpre
                if second:
                    gw = gw + c["zdot_in"].T @ gpdot
                if layer.positive:
                    gw = gw * sigmoid(params[f"{n}.wz"])
                grads[f"{n}.wz"] = gw
                wz = c["wz"]
                gz = rowmm(gpre, wz.T)
                gzdot = rowmm(gpdot, wz.T) if second else None

        flat = np.zeros_like(params.values)
        for name, shape, offset in params.layout:
            if name in grads:
                size = int(np.prod(shape, dtype=int))
                flat[offset:offset + size] = np.asarray(grads[name]).ravel()
        return flat, gx

    # -- public evaluation --------------------------------------------------

    def __call__(self, params, x):
        x = self._check(params, x)
        return self._forward(params, x)[0]

    def value_and_grad_input(self, params, x):
        x = self._check(params, x)
        if self.head != "scalar":
            raise ContractError("input gradients need a scalar output per row")
        f, _, cache = self._forward(params, x)
        _, gx = self._backward(params, x, cache, np.ones(x.shape[0]))
        return f, gx

    def grad_input(self, params, x):
        return self.value_and_grad_input(params, x)[1]

    def vjp(self, params, x, cotangent):
        """Gradients of ``sum(cotangent * output)`` w.r.t. parameters and input."""
        x = self._check(params, x)
        _, _, cache = self._forward(params, x)
        g, gx = self._backward(params, x, cache, cotangent)
        return ParamVector(g, params.layout), gx

    def grad_params(self, params, x, cotangent="mean"):
        """Parameter gradient of a row reduction of the scalar output.

        ``cotangent`` is ``'mean'``, ``'sum'`` or an explicit per-row array of
        ``d loss / d f(x_i)``.
        """
        x = np.asarray(x, dtype=np.float64)
        if isinstance(cotangent, str):
            if cotangent == "mean":
                cotangent = np.full(x.shape[0], 1.0 / x.shape[0])
            elif cotangent == "sum":
                cotangent = np.ones(x.shape[0])
            else:
                raise ContractError(f"unknown reduction {cotangent!r}")
        return self.vjp(params, x, cotangent)[0]

    def grad_input_vjp(self, params, x, v, weights=None):
        """Gradients of ``sum_i w_i v_i . grad_x f(x_i)``.

        Returns ``(param_grad, input_grad)``; the input gradient row ``i`` is
        ``w_i H_f(x_i) v_i``.
        """
        x = self._check(params, x)
        v = np.asarray(v, dtype=np.float64)
        if self.head != "scalar":
            raise ContractError("second-order rules apply to scalar heads only")
        if weights is None:
            weights = np.ones(x.shape[0])
        _, _, cache = self._forward(params, x, v)
        g, gx = self._backward(params, x, cache, np.zeros(x.shape[0]),
                               g_outdot=np.asarray(weights, dtype=np.float64), v=v)
        return ParamVector(g, params.layout), gx

    def hvp(self, params, x, v):
        """Row-wise Hessian-vector products ``H_f(x_i) v_i``."""
        return self.grad_input_vjp(params, x, v)[1]

    def actnorm_init(self, params, x) -> ParamVector:
        """Data-dependent init: each activation-norm output is standardized on ``x``."""
        x = self._check(params, x)
        for i, layer in enumerate(self.layers):
            if not layer.actnorm:
                continue
            _, _, cache = self._forward(params, x)
            pre = cache[i]["pre"]
            mean = pre.mean(axis=0)
            var = pre.var(axis=0)
            log_scale = -0.5 * np.log(var + ACTNORM_EPS)
            params = params.replace(**{f"{layer.name}.log_scale": log_scale,
                                       f"{layer.name}.shift": -mean * np.exp(log_scale)})
        return params

    def effective_positive_kernels(self, params):
        return [softplus(params[f"{l.name}.wz"]) for l in self.layers if l.z_in and l.positive]


# ---------------------------------------------------------------------------
# functional surface


def forward(model: Network, params: ParamVector, x) -> np.ndarray:
    return model(params, x)


def grad_input(model: Network, params: ParamVector, x) -> np.ndarray:
    return model.grad_input(params, x)


def grad_params(model: Network, params: ParamVector, x, cotangent="mean") -> ParamVector:
    return model.grad_params(params, x, cotangent)


def actnorm_init(model: Network, params: ParamVector, x) -> ParamVector:
    return model.actnorm_init(params, x)


def central_difference(fun, x0, h=1e-4) -> np.ndarray:
    """Central finite-difference gradient of a scalar function of a flat array."""
    x0 = np.asarray(x0, dtype=np.float64)
    grad = np.zeros_like(x0)
    for i in range(x0.size):
        e = np.zeros_like(x0)
        e.flat[i] = h
        grad.flat[i] = (fun(x0 + e) - fun(x0 - e)) / (2 * h)
    return grad


def relative_error(g, g_hat) -> np.ndarray:
    g = np.asarray(g)
    g_hat = np.asarray(g_hat)
    return np.abs(g - g_hat) / (1e-8 + np.abs(g) + np.abs(g_hat))
