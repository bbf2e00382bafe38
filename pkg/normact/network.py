"""
Trainable layers, initializers and the network builder.

Networks are described declaratively by a :class:`NetworkSpec` (a list of
plain layer dicts, as found in the JSON configs) and turned into a runnable
:class:`Network` by :func:`build_network`, which also enforces the wiring
rules for batch normalization and residual blocks.
"""

import copy
import dataclasses
import functools
import logging
import struct
import warnings

import numpy
from numpy.lib.stride_tricks import sliding_window_view

from . import activations, tensor
from .normact import NormActLayer, batch_statistics
from .validate import (
    ConfigError,
    DataError,
    DegenerateInputError,
    DimensionError,
    WiringRuleError,
    positive_int,
)

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"NACT"
CHECKPOINT_VERSION = 1


def _rng(rng):
    if isinstance(rng, numpy.random.Generator):
        return rng
    return numpy.random.default_rng(rng)


def xavier_init(d_in, d_out, rng=None, shape=None, gaussian=False):
    """
    Xavier (Glorot) weights with variance ``2 / (d_in + d_out)``.

    Parameters
    ----------
    d_in, d_out : int
        fan-in and fan-out
    rng : numpy.random.Generator or seed, optional
    shape : tuple of int, optional
        shape of the result, ``(d_in, d_out)`` by default
    gaussian : bool, optional (default = False)
        draw from a normal distribution instead of the variance-matched
        uniform one on ``[-sqrt(6/(d_in+d_out)), +sqrt(6/(d_in+d_out))]``

    Returns
    -------
    W : Tensor

    """
    d_in = positive_int(d_in, "d_in")
    d_out = positive_int(d_out, "d_out")
    shape = (d_in, d_out) if shape is None else tuple(shape)
    rng = _rng(rng)
    if gaussian:
        data = rng.normal(0.0, numpy.sqrt(2.0 / (d_in + d_out)), size=shape)
    else:
        bound = numpy.sqrt(6.0 / (d_in + d_out))
        data = rng.uniform(-bound, bound, size=shape)
    return tensor.Tensor(data)


def he_init(d_in, d_out, rng=None, shape=None):
    """Gaussian weights with variance ``2 / d_in``."""
    d_in = positive_int(d_in, "d_in")
    d_out = positive_int(d_out, "d_out")
    shape = (d_in, d_out) if shape is None else tuple(shape)
    return tensor.Tensor(_rng(rng).normal(0.0, numpy.sqrt(2.0 / d_in), size=shape))


def orthogonal_init(d_in, d_out, rng=None, shape=None):
    """
    Weights with orthonormal columns (``d_in >= d_out``) or rows.

    A Gaussian draw is orthogonalized by QR and the signs of ``R``'s
    diagonal are folded back into ``Q`` so the result is uniformly
    distributed. For a convolution ``shape`` the matrix is drawn as
    ``[in_ch*kh*kw x out_ch]`` and transposed into the kernel layout.
    """
    d_in = positive_int(d_in, "d_in")
    d_out = positive_int(d_out, "d_out")
    rng = _rng(rng)
    if shape is not None:
        rows, cols = int(numpy.prod(shape[1:])), int(shape[0])
    else:
        rows, cols = d_in, d_out
    flat = rng.normal(size=(max(rows, cols), min(rows, cols)))
    q, r = numpy.linalg.qr(flat)
    q = q * numpy.sign(numpy.diag(r))
    W = q if rows >= cols else q.T
    if shape is not None:
        W = W.T.reshape(shape)
    return tensor.Tensor(W)


INITIALIZERS = {
    "xavier": xavier_init,
    "xavier_normal": functools.partial(xavier_init, gaussian=True),
    "he": he_init,
    "orthogonal": orthogonal_init,
}


class Layer(object):
    """Common train/eval switch and parameter bookkeeping."""

    def __init__(self):
        self._training = True

    @property
    def training(self):
        return self._training

    def train(self, mode=True):
        self._training = bool(mode)
        return self

    def eval(self):
        return self.train(False)

    def parameters(self):
        return []

    @property
    def n_params(self):
        return int(sum(p.size for p in self.parameters()))

    def state_arrays(self):
        return [p.data for p in self.parameters()]

    def load_state_arrays(self, arrays):
        params = self.parameters()
        if len(arrays) != len(params):
            raise DataError(
                "{}: checkpoint holds {} arrays, expected {}".format(
                    type(self).__name__, len(arrays), len(params)
                )
            )
        for p, a in zip(params, arrays):
            if a.shape != p.shape:
                raise DataError(
                    "{}: checkpoint array {} does not fit parameter {}".format(
                        type(self).__name__, list(a.shape), list(p.shape)
                    )
                )
            p.data = a.copy()

    def __call__(self, x):
        return self.forward(x)


class Dense(Layer):
    """``x @ W + b`` with ``W`` of shape [d_in x d_out]."""

    def __init__(self, d_in, d_out, init="xavier", rng=None):
        super().__init__()
        self.d_in = positive_int(d_in, "d_in")
        self.d_out = positive_int(d_out, "d_out")
        self.W = tensor.parameter(INITIALIZERS[init](d_in, d_out, rng).data)
        self.b = tensor.parameter(numpy.zeros(d_out))

    def __repr__(self):
        return "<Dense({} -> {})>".format(self.d_in, self.d_out)

    def parameters(self):
        return [self.W, self.b]

    def forward(self, x):
        x = tensor.as_tensor(x)
        return tensor.bias_add(tensor.matmul(x, self.W), self.b, axis=-1)


def conv_output_size(size, kernel, stride, padding):
    return (size + 2 * padding - kernel) // stride + 1


class Conv2dFn(tensor.Function):
    def forward(self, ctx, x, w, b, stride=1, padding=0):
        if x.ndim != 4 or x.shape[1] != w.shape[1]:
            raise DimensionError(
                "conv2d: input {} does not fit kernel {}".format(list(x.shape), list(w.shape))
            )
        kh, kw = w.shape[2:]
        xp = numpy.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
        if xp.shape[2] < kh or xp.shape[3] < kw:
            raise DimensionError(
                "conv2d: kernel {} larger than padded input {}".format(
                    [kh, kw], list(xp.shape[2:])
                )
            )
        windows = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
        ctx.save_for_backward(windows, w)
        ctx.stride, ctx.padding, ctx.xp_shape = stride, padding, xp.shape
        out = numpy.einsum("bchwij,ocij->bohw", windows, w, optimize=True)
        return out + b[None, :, None, None]

    def backward(self, ctx, grad):
        windows, w = ctx.saved
        s, p = ctx.stride, ctx.padding
        ho, wo = grad.shape[2:]
        dw = numpy.einsum("bchwij,bohw->ocij", windows, grad, optimize=True)
        db = grad.sum(axis=(0, 2, 3))
        dxp = numpy.zeros(ctx.xp_shape)
        for i in range(w.shape[2]):
            for j in range(w.shape[3]):
                dxp[:, :, i : i + s * ho : s, j : j + s * wo : s] += numpy.einsum(
                    "bohw,oc->bchw", grad, w[:, :, i, j]
                )
        dx = dxp[:, :, p : dxp.shape[2] - p, p : dxp.shape[3] - p]
        return dx, dw, db


class Conv2d(Layer):
    """
    2-D convolution (cross-correlation) with zero padding.

    Parameters
    ----------
    in_channels, out_channels : int
    kernel : int or (int, int)
    stride : int, optional (default = 1)
    padding : int, optional (default = 0)
    init : str, optional (default = "xavier")
        key of :data:`INITIALIZERS`
    rng : numpy.random.Generator or seed, optional

    """

    def __init__(self, in_channels, out_channels, kernel, stride=1, padding=0, init="xavier", rng=None):
        super().__init__()
        kh, kw = (kernel, kernel) if numpy.isscalar(kernel) else tuple(kernel)
        self.in_channels = positive_int(in_channels, "in_channels")
        self.out_channels = positive_int(out_channels, "out_channels")
        self.stride = positive_int(stride, "stride")
        self.padding = positive_int(padding, "padding", minimum=0)
        shape = (self.out_channels, self.in_channels, positive_int(kh, "kh"), positive_int(kw, "kw"))
        self.kernel = tensor.parameter(
            INITIALIZERS[init](
                in_channels * kh * kw, out_channels * kh * kw, rng, shape=shape
            ).data
        )
        self.bias = tensor.parameter(numpy.zeros(out_channels))

    def __repr__(self):
        return "<Conv2d({} -> {}, kernel={}, stride={}, padding={})>".format(
            self.in_channels, self.out_channels, list(self.kernel.shape[2:]), self.stride, self.padding
        )

    def parameters(self):
        return [self.kernel, self.bias]

    def output_shape(self, shape):
        c, h, w = shape
        kh, kw = self.kernel.shape[2:]
        return (
            self.out_channels,
            conv_output_size(h, kh, self.stride, self.padding),
            conv_output_size(w, kw, self.stride, self.padding),
        )

    def forward(self, x):
        return Conv2dFn.apply(
            tensor.as_tensor(x), self.kernel, self.bias, stride=self.stride, padding=self.padding
        )


class MaxPoolFn(tensor.Function):
    def forward(self, ctx, x, size=2, stride=2):
        if x.ndim != 4:
            raise DimensionError("maxpool: expected [B x C x H x W], got {}".format(list(x.shape)))
        windows = sliding_window_view(x, (size, size), axis=(2, 3))[:, :, ::stride, ::stride]
        b, c, ho, wo = windows.shape[:4]
        flat = windows.reshape(b, c, ho, wo, size * size)
        idx = flat.argmax(axis=-1)
        ctx.save_for_backward(idx)
        ctx.size, ctx.stride, ctx.x_shape = size, stride, x.shape
        return numpy.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def backward(self, ctx, grad):
        (idx,) = ctx.saved
        b, c, ho, wo = idx.shape
        bi, ci, hi, wi = numpy.indices((b, c, ho, wo), sparse=True)
        rows = hi * ctx.stride + idx // ctx.size
        cols = wi * ctx.stride + idx % ctx.size
        dx = numpy.zeros(ctx.x_shape)
        numpy.add.at(dx, (bi, ci, rows, cols), grad)
        return (dx,)


class MaxPool2d(Layer):
    def __init__(self, size=2, stride=None):
        super().__init__()
        self.size = positive_int(size, "size")
        self.stride = positive_int(stride if stride is not None else size, "stride")

    def __repr__(self):
        return "<MaxPool2d(size={}, stride={})>".format(self.size, self.stride)

    def output_shape(self, shape):
        c, h, w = shape
        return (c, conv_output_size(h, self.size, self.stride, 0), conv_output_size(w, self.size, self.stride, 0))

    def forward(self, x):
        return MaxPoolFn.apply(tensor.as_tensor(x), size=self.size, stride=self.stride)


class Flatten(Layer):
    def __repr__(self):
        return "<Flatten>"

    def forward(self, x):
        x = tensor.as_tensor(x)
        return x.reshape(x.shape[0], -1)


class BatchNormFn(tensor.Function):
    """Standardize over ``axes``; with ``mean``/``var`` given they are constants."""

    def forward(self, ctx, x, mean=None, var=None, eps=1e-5, axes=(0,)):
        ctx.batch = mean is None
        if ctx.batch:
            mean = x.mean(axis=axes, keepdims=True)
            var = x.var(axis=axes, keepdims=True)
        inv = 1.0 / numpy.sqrt(var + eps)
        xhat = (x - mean) * inv
        ctx.save_for_backward(xhat, inv)
        ctx.axes = axes
        return xhat

    def backward(self, ctx, grad):
        xhat, inv = ctx.saved
        if not ctx.batch:
            return (grad * inv,)
        n = numpy.prod([grad.shape[a] for a in ctx.axes])
        gsum = grad.sum(axis=ctx.axes, keepdims=True)
        gxhat = (grad * xhat).sum(axis=ctx.axes, keepdims=True)
        return (inv * (grad - gsum / n - xhat * gxhat / n),)


class BatchNorm(Layer):
    """
    Batch normalization over [B x F] or [B x C x H x W] inputs.

    With ``affine=False`` the layer has no trainable parameters. Training
    mode normalizes with the batch statistics and folds them into running
    estimates with ``momentum``; eval mode uses the running estimates.
    """

    def __init__(self, num_features, affine=False, momentum=0.1, eps=1e-5):
        super().__init__()
        self.num_features = positive_int(num_features, "num_features")
        self.affine = bool(affine)
        self.momentum = momentum
        self.eps = eps
        self.running_mean = numpy.zeros(num_features)
        self.running_var = numpy.ones(num_features)
        if self.affine:
            self.gamma = tensor.parameter(numpy.ones(num_features))
            self.beta = tensor.parameter(numpy.zeros(num_features))
        else:
            self.gamma = self.beta = None

    def __repr__(self):
        return "<BatchNorm({}, affine={})>".format(self.num_features, self.affine)

    def parameters(self):
        return [self.gamma, self.beta] if self.affine else []

    def state_arrays(self):
        return super().state_arrays() + [self.running_mean, self.running_var]

    def load_state_arrays(self, arrays):
        if len(arrays) < 2:
            raise DataError("BatchNorm: checkpoint lacks running statistics")
        super().load_state_arrays(arrays[:-2])
        self.running_mean, self.running_var = arrays[-2].copy(), arrays[-1].copy()

    def forward(self, x):
        x = tensor.as_tensor(x)
        if x.ndim not in (2, 4) or x.shape[1] != self.num_features:
            raise DimensionError(
                "batchnorm: expected [B x {0}] or [B x {0} x H x W], got {1}".format(
                    self.num_features, list(x.shape)
                )
            )
        axes = (0,) if x.ndim == 2 else (0, 2, 3)
        keep = [1] * x.ndim
        keep[1] = self.num_features
        if self._training:
            if x.shape[0] < 2:
                raise DegenerateInputError("batchnorm: training needs a batch of at least 2")
            n = x.size // self.num_features
            mean = x.data.mean(axis=axes)
            var = x.data.var(axis=axes)
            m = self.momentum
            self.running_mean = (1.0 - m) * self.running_mean + m * mean
            self.running_var = (1.0 - m) * self.running_var + m * var * n / (n - 1)
            out = BatchNormFn.apply(x, eps=self.eps, axes=axes)
        else:
            out = BatchNormFn.apply(
                x,
                mean=self.running_mean.reshape(keep),
                var=self.running_var.reshape(keep),
                eps=self.eps,
                axes=axes,
            )
        if self.affine:
            out = tensor.bias_add(tensor.channel_scale(out, self.gamma, axis=1), self.beta, axis=1)
        return out


class Activation(Layer):
    """
    A plain (unnormalized) activation.

    Training-mode calls record ``measured``, the forward and backward
    variance gains of the batch just seen.
    """

    def __init__(self, kind):
        super().__init__()
        self.kind = activations.ActivationKind.parse(kind)
        self._fn, self._dfn = activations.callables(self.kind)
        self.measured = None

    def __repr__(self):
        return "<Activation('{}')>".format(self.kind)

    def forward(self, x):
        x = tensor.as_tensor(x)
        if self._training:
            try:
                rho, rho_prime, _ = batch_statistics(x, base=self.kind)
            except DegenerateInputError:
                rho = rho_prime = 0.0
            if rho > 0 and rho_prime > 0 and numpy.isfinite(rho + rho_prime):
                self.measured = (rho, rho_prime)
            else:
                self.measured = None
                logger.debug("%r: batch too degenerate to measure gains", self)
        return tensor.elementwise(x, self._fn, self._dfn)


class ResidualBlock(Layer):
    """``post_add(inner(x) + skip(x))``; ``skip`` is the identity unless projected."""

    def __init__(self, inner, post_add, projection=None):
        super().__init__()
        self.inner = list(inner)
        self.post_add = post_add
        self.projection = projection

    def __repr__(self):
        return "<ResidualBlock(inner={}, post_add={!r})>".format(self.inner, self.post_add)

    def modules(self):
        for layer in self.inner:
            if isinstance(layer, ResidualBlock):
                yield from layer.modules()
            else:
                yield layer
        if self.projection is not None:
            yield self.projection
        yield self.post_add

    def forward(self, x):
        x = tensor.as_tensor(x)
        h = x
        for layer in self.inner:
            h = layer(h)
        skip = self.projection(x) if self.projection is not None else x
        return self.post_add(tensor.add(h, skip))


class Network(object):
    """A sequential stack of layers."""

    def __init__(self, layers, input_shape=None):
        self.layers = list(layers)
        self.input_shape = tuple(input_shape) if input_shape is not None else None

    def __repr__(self):
        return "<Network({} layers, {} params)>".format(len(self.layers), self.n_params)

    def __call__(self, x):
        return self.forward(x)

    def forward(self, x):
        x = tensor.as_tensor(x)
        if self.input_shape is not None and tuple(x.shape[1:]) != self.input_shape:
            x = x.reshape((x.shape[0],) + self.input_shape)
        for layer in self.layers:
            x = layer(x)
        return x

    def modules(self):
        for layer in self.layers:
            if isinstance(layer, ResidualBlock):
                yield from layer.modules()
            else:
                yield layer

    def parameters(self):
        return [p for m in self.modules() for p in m.parameters()]

    @property
    def n_params(self):
        return int(sum(p.size for p in self.parameters()))

    def activation_layers(self):
        return [m for m in self.modules() if isinstance(m, (Activation, NormActLayer))]

    def normact_layers(self):
        return [m for m in self.modules() if isinstance(m, NormActLayer)]

    def weights(self):
        """Weight matrices and kernels (no biases, BN affines or α)."""
        out = []
        for m in self.modules():
            if isinstance(m, Dense):
                out.append(m.W)
            elif isinstance(m, Conv2d):
                out.append(m.kernel)
        return out

    def train(self, mode=True):
        for m in self.modules():
            m.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def freeze_stats(self, flag=True):
        for m in self.normact_layers():
            m.freeze(flag)
        return self

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    def predict(self, x):
        """Class indices of the largest logits."""
        return self.forward(x).data.argmax(axis=1)


_LAYER_TYPES = ("dense", "conv2d", "maxpool", "flatten", "batchnorm", "activation", "residual")
_MODES = ("plain", "normalized", "gpn")
_LINEAR_TYPES = ("dense", "conv2d", "residual")


@dataclasses.dataclass
class NetworkSpec(object):
    """
    Declarative description of a network.

    Attributes
    ----------
    input_shape : tuple of int
        per-sample input shape, e.g. ``(784,)`` or ``(1, 28, 28)``
    layers : list of dict
        layer descriptors; each has a ``type`` from ``dense, conv2d,
        maxpool, flatten, batchnorm, activation, residual``
    init : str
        ``auto`` or a key of :data:`INITIALIZERS`
    buffer_bn : bool
        insert a batch normalization before the classifier head when the
        highest normalized activation sits below it
    buffer_bn_affine : bool
    allow_affine_before_normact : bool
        accept (with a warning) an affine batch normalization feeding a
        normalized activation
    top_k_plain : int
        keep the k normalized activations nearest the head plain

    """

    input_shape: tuple
    layers: list
    init: str = "auto"
    buffer_bn: bool = False
    buffer_bn_affine: bool = False
    allow_affine_before_normact: bool = False
    top_k_plain: int = 0

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        if self.init != "auto" and self.init not in INITIALIZERS:
            raise ConfigError(
                "unknown init {!r}; choose from {}".format(self.init, ["auto"] + sorted(INITIALIZERS))
            )

    @classmethod
    def from_dict(cls, values):
        fields = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - fields
        if unknown:
            raise ConfigError("unknown network keys: {}".format(sorted(unknown)))
        try:
            return cls(**values)
        except TypeError as e:
            raise ConfigError("invalid network description: {}".format(e)) from e

    def to_dict(self):
        return dataclasses.asdict(self)

    def effective_layers(self):
        """Layer descriptors after ``top_k_plain`` is applied."""
        layers = copy.deepcopy(self.layers)
        if self.top_k_plain > 0:
            normalized = [d for d in _walk_activations(layers) if d.get("mode") == "normalized"]
            for d in normalized[-self.top_k_plain :]:
                d["mode"] = "plain"
        return layers

    def validate(self):
        _check_layers(self.effective_layers(), None, self.allow_affine_before_normact, None)
        return self


def _walk_activations(layers):
    for d in layers:
        if d.get("type") == "activation":
            yield d
        elif d.get("type") == "residual":
            yield from _walk_activations(d.get("layers", []))


def _check_layers(layers, outer_index, allow_affine, tail):
    for i, d in enumerate(layers):
        index = i if outer_index is None else outer_index
        kind = d.get("type")
        if kind not in _LAYER_TYPES:
            raise WiringRuleError(index, "unknown-layer", "unknown layer type {!r}".format(kind))
        if kind == "dense" and "units" not in d:
            raise WiringRuleError(index, "descriptor", "dense layer needs `units`")
        if kind == "conv2d" and not {"channels", "kernel"} <= set(d):
            raise WiringRuleError(index, "descriptor", "conv2d layer needs `channels` and `kernel`")
        if kind == "activation":
            _check_activation(index, d)
        if kind == "residual":
            if not d.get("layers"):
                raise WiringRuleError(index, "descriptor", "residual block needs inner `layers`")
            post = _post_add_descriptor(d)
            _check_activation(index, post)
            if d.get("normalize_post_add"):
                warnings.warn(
                    "layer {}: residual block normalizes its post-addition activation".format(index)
                )
            _check_layers(d["layers"], index, allow_affine, post)

        following = layers[i + 1] if i + 1 < len(layers) else tail
        if (
            kind == "batchnorm"
            and d.get("affine", False)
            and following is not None
            and following.get("type") == "activation"
            and following.get("mode", "plain") == "normalized"
        ):
            if not allow_affine:
                raise WiringRuleError(
                    index,
                    "affine-bn-before-normalized",
                    "batch normalization with affine transform feeds a normalized "
                    "activation; use affine=false",
                )
            warnings.warn("layer {}: affine batch normalization feeds a normalized activation".format(index))


def _check_activation(index, d):
    mode = d.get("mode", "plain")
    if mode not in _MODES:
        raise WiringRuleError(index, "activation-mode", "mode must be one of {}".format(_MODES))
    try:
        kind = activations.ActivationKind.parse(d.get("kind", "relu"))
        if mode == "gpn":
            kind.gpn()
    except ValueError as e:
        raise WiringRuleError(index, "activation-kind", str(e)) from e


def _post_add_descriptor(d):
    return {
        "type": "activation",
        "kind": d.get("post_add", "relu"),
        "mode": "normalized" if d.get("normalize_post_add") else "plain",
    }


def _init_for_activation(d):
    mode = d.get("mode", "plain")
    if mode == "normalized":
        return "xavier"
    if mode == "gpn":
        return "orthogonal"
    kind = activations.ActivationKind.parse(d.get("kind", "relu"))
    return "xavier" if kind.name in ("identity", "tanh") else "he"


def _auto_init(layers, i, tail):
    for d in layers[i + 1 :]:
        if d["type"] in _LINEAR_TYPES:
            return "xavier"
        if d["type"] == "activation":
            return _init_for_activation(d)
    return _init_for_activation(tail) if tail is not None else "xavier"


def _insert_buffer_bn(layers, affine):
    heads = [i for i, d in enumerate(layers) if d["type"] == "dense"]
    if not heads:
        return layers
    head = heads[-1]
    normalized = [
        i
        for i, d in enumerate(layers)
        if any(a.get("mode") == "normalized" for a in _walk_activations([d]))
    ]
    if not normalized or normalized[-1] > head:
        return layers
    if head > 0 and layers[head - 1]["type"] == "batchnorm":
        return layers
    logger.info("inserting buffer batch normalization before layer %d", head)
    return layers[:head] + [{"type": "batchnorm", "affine": affine}] + layers[head:]


def _make_activation(d, normact_options):
    kind = activations.ActivationKind.parse(d.get("kind", "relu"))
    mode = d.get("mode", "plain")
    if mode == "normalized":
        return NormActLayer(kind, **normact_options)
    if mode == "gpn":
        return Activation(kind.gpn())
    return Activation(kind)


def _build_layers(layers, shape, rng, default_init, normact_options, tail=None):
    built = []
    for i, d in enumerate(layers):
        kind = d["type"]
        init = d.get("init", default_init)
        if init == "auto" and kind in ("dense", "conv2d"):
            init = _auto_init(layers, i, tail)

        if kind == "dense":
            if len(shape) != 1:
                raise DimensionError(
                    "dense layer after shape {}; insert a flatten".format(list(shape))
                )
            layer = Dense(shape[0], d["units"], init=init, rng=rng)
            shape = (layer.d_out,)
        elif kind == "conv2d":
            if len(shape) != 3:
                raise DimensionError("conv2d needs [C x H x W] input, got {}".format(list(shape)))
            layer = Conv2d(
                shape[0],
                d["channels"],
                d["kernel"],
                stride=d.get("stride", 1),
                padding=d.get("padding", 0),
                init=init,
                rng=rng,
            )
            shape = layer.output_shape(shape)
        elif kind == "maxpool":
            layer = MaxPool2d(d.get("size", 2), d.get("stride"))
            shape = layer.output_shape(shape)
        elif kind == "flatten":
            layer = Flatten()
            shape = (int(numpy.prod(shape)),)
        elif kind == "batchnorm":
            layer = BatchNorm(
                shape[0],
                affine=d.get("affine", False),
                momentum=d.get("momentum", 0.1),
                eps=d.get("eps", 1e-5),
            )
        elif kind == "activation":
            layer = _make_activation(d, normact_options)
        else:
            post = _post_add_descriptor(d)
            inner, inner_shape = _build_layers(
                d["layers"], shape, rng, default_init, normact_options, tail=post
            )
            projection = None
            if d.get("projection") or inner_shape != shape:
                if len(shape) != 1 or len(inner_shape) != 1:
                    raise DimensionError(
                        "residual block maps {} to {}; only dense projections are "
                        "supported".format(list(shape), list(inner_shape))
                    )
                projection = Dense(shape[0], inner_shape[0], init="xavier", rng=rng)
            layer = ResidualBlock(inner, _make_activation(post, normact_options), projection)
            shape = inner_shape

        if min(shape) < 1:
            raise DimensionError("layer {} produces empty shape {}".format(i, list(shape)))
        built.append(layer)
    return built, shape


def build_network(spec, seed=0, normact_options=None):
    """
    Build a runnable network from ``spec``.

    Parameters
    ----------
    spec : NetworkSpec or dict
    seed : int or numpy.random.Generator, optional (default = 0)
        all parameters are drawn from one generator in layer order, so the
        same (spec, seed) builds identical networks
    normact_options : dict, optional
        keyword arguments for every :class:`NormActLayer`
        (``beta_bound, m, L, U, eps, center``)

    Returns
    -------
    network : Network

    Raises
    ------
    WiringRuleError
        if the NetworkSpec breaks a wiring rule; carries the offending layer
        index and the rule name

    """
    if isinstance(spec, dict):
        spec = NetworkSpec.from_dict(spec)
    spec.validate()
    layers = spec.effective_layers()
    if spec.buffer_bn:
        layers = _insert_buffer_bn(layers, spec.buffer_bn_affine)
    built, _ = _build_layers(
        layers, spec.input_shape, _rng(seed), spec.init, dict(normact_options or {})
    )
    network = Network(built, input_shape=spec.input_shape)
    logger.info("built %r", network)
    return network


def _write_array(fh, array):
    array = numpy.ascontiguousarray(array, dtype="<f8")
    fh.write(struct.pack("<I", array.ndim))
    fh.write(struct.pack("<{}I".format(array.ndim), *array.shape))
    fh.write(array.tobytes())


def _read_exact(fh, n):
    data = fh.read(n)
    if len(data) != n:
        raise DataError("checkpoint truncated: wanted {} bytes, got {}".format(n, len(data)))
    return data


def _read_array(fh):
    (ndim,) = struct.unpack("<I", _read_exact(fh, 4))
    shape = struct.unpack("<{}I".format(ndim), _read_exact(fh, 4 * ndim))
    count = int(numpy.prod(shape, dtype=numpy.int64))
    return numpy.frombuffer(_read_exact(fh, 8 * count), dtype="<f8").reshape(shape).astype(numpy.float64)


def save_checkpoint(network, path):
    """
    Write parameters, batch-norm buffers and normalized-activation
    statistics of ``network`` to ``path``.

    Layout: ``b"NACT"``, uint32 version, uint32 module count; per module a
    uint32 array count, each array as uint32 ndim + uint32 dims + float64
    data, then a uint32-length-prefixed UTF-8 statistics snapshot (empty
    for modules without one). All integers little-endian.
    """
    modules = list(network.modules())
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(modules)))
        for m in modules:
            if isinstance(m, NormActLayer):
                arrays, text = [], m.snapshot()
            else:
                arrays, text = m.state_arrays(), ""
            fh.write(struct.pack("<I", len(arrays)))
            for a in arrays:
                _write_array(fh, a)
            blob = text.encode("utf8")
            fh.write(struct.pack("<I", len(blob)))
            fh.write(blob)
    logger.info("checkpoint with %d modules written to %s", len(modules), path)


def load_checkpoint(network, path):
    """Restore a checkpoint into ``network``, which must have the same layout."""
    modules = list(network.modules())
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4)
        if magic != CHECKPOINT_MAGIC:
            raise DataError("{} is not a checkpoint (magic {!r})".format(path, magic))
        version, count = struct.unpack("<II", _read_exact(fh, 8))
        if version != CHECKPOINT_VERSION:
            raise DataError("unsupported checkpoint version {}".format(version))
        if count != len(modules):
            raise DataError(
                "checkpoint holds {} modules, network has {}".format(count, len(modules))
            )
        for m in modules:
            (n_arrays,) = struct.unpack("<I", _read_exact(fh, 4))
            arrays = [_read_array(fh) for _ in range(n_arrays)]
            (n_text,) = struct.unpack("<I", _read_exact(fh, 4))
            text = _read_exact(fh, n_text).decode("utf8")
            if isinstance(m, NormActLayer):
                m.load_snapshot(text)
            else:
                m.load_state_arrays(arrays)
    return network
