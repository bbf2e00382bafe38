"""
Baseline activation functions and their exact derivatives.

Every function here works elementwise on floats or numpy arrays. The ReLU
family is piecewise with the ``x <= 0`` branch inclusive, and the derivative
at the kink takes the value of that branch.
"""

from dataclasses import dataclass

import numpy

LEAKY_SLOPE = 0.01
ELU_SCALE = 1.0
SELU_ALPHA = 1.6732632423543772
SELU_SCALE = 1.0507009873554805


@dataclass(frozen=True)
class ActivationKind(object):
    """
    One entry of the activation catalog.

    Attributes
    ----------
    name : str
        one of ``identity, tanh, relu, leaky_relu, elu, selu, swish,
        relu_gpn, lrelu_gpn``
    a : float
        the slope of the negative branch (``leaky_relu``, ``lrelu_gpn``) or
        the scale of the exponential branch (``elu``); unused otherwise

    """

    name: str
    a: float = 0.0

    def __post_init__(self):
        if self.name not in _FUNCS:
            raise ValueError(
                "unknown activation {!r}; choose from {}".format(self.name, sorted(_FUNCS))
            )

    def __str__(self):
        if self.name in ("leaky_relu", "lrelu_gpn", "elu") and self.a != _DEFAULT_A[self.name]:
            return "{}:{}".format(self.name, self.a)
        return self.name

    @property
    def beta(self):
        """Fixed output multiplier (1 except for the GPN variants)."""
        if self.name == "relu_gpn":
            return numpy.sqrt(2.0)
        if self.name == "lrelu_gpn":
            return numpy.sqrt(2.0 / (1.0 + self.a**2))
        return 1.0

    @property
    def is_linear(self):
        return self.name == "identity"

    @property
    def is_gpn(self):
        return self.name.endswith("_gpn")

    @classmethod
    def parse(cls, value):
        """
        Build a kind from ``"name"`` or ``"name:a"``.

        >>> ActivationKind.parse("leaky_relu:0.2").a
        0.2

        """
        if isinstance(value, ActivationKind):
            return value
        name, _, a = str(value).strip().lower().replace("-", "_").partition(":")
        name = _ALIASES.get(name, name)
        if name not in _FUNCS:
            raise ValueError(
                "unknown activation {!r}; choose from {}".format(value, sorted(_FUNCS))
            )
        return cls(name, float(a) if a else _DEFAULT_A.get(name, 0.0))

    def gpn(self):
        """The GPN-rescaled counterpart of a ReLU-family kind."""
        if self.name == "relu":
            return ActivationKind("relu_gpn")
        if self.name == "leaky_relu":
            return ActivationKind("lrelu_gpn", self.a)
        if self.is_gpn:
            return self
        raise ValueError("no GPN variant of {}".format(self.name))


def _sigmoid(x):
    return 0.5 * (1.0 + numpy.tanh(0.5 * x))


def _identity(x, a):
    return x * 1.0


def _d_identity(x, a):
    return numpy.ones_like(x)


def _tanh(x, a):
    return numpy.tanh(x)


def _d_tanh(x, a):
    return 1.0 - numpy.tanh(x) ** 2


def _relu(x, a):
    return numpy.where(x > 0, x, 0.0)


def _d_relu(x, a):
    return numpy.where(x > 0, 1.0, 0.0)


def _leaky(x, a):
    return numpy.where(x > 0, x, a * x)


def _d_leaky(x, a):
    return numpy.where(x > 0, 1.0, a)


def _elu(x, a):
    return numpy.where(x > 0, x, a * numpy.expm1(numpy.minimum(x, 0.0)))


def _d_elu(x, a):
    return numpy.where(x > 0, 1.0, a * numpy.exp(numpy.minimum(x, 0.0)))


def _selu(x, a):
    return SELU_SCALE * _elu(x, SELU_ALPHA)


def _d_selu(x, a):
    return SELU_SCALE * _d_elu(x, SELU_ALPHA)


def _swish(x, a):
    return x * _sigmoid(x)


def _d_swish(x, a):
    s = _sigmoid(x)
    y = x * s
    return y + s * (1.0 - y)


_FUNCS = {
    "identity": (_identity, _d_identity),
    "tanh": (_tanh, _d_tanh),
    "relu": (_relu, _d_relu),
    "leaky_relu": (_leaky, _d_leaky),
    "elu": (_elu, _d_elu),
    "selu": (_selu, _d_selu),
    "swish": (_swish, _d_swish),
    "relu_gpn": (_relu, _d_relu),
    "lrelu_gpn": (_leaky, _d_leaky),
}

_DEFAULT_A = {"leaky_relu": LEAKY_SLOPE, "lrelu_gpn": LEAKY_SLOPE, "elu": ELU_SCALE}

_ALIASES = {
    "linear": "identity",
    "lrelu": "leaky_relu",
    "leakyrelu": "leaky_relu",
    "silu": "swish",
    "relugpn": "relu_gpn",
    "leaky_relu_gpn": "lrelu_gpn",
    "lrelugpn": "lrelu_gpn",
}

IDENTITY = ActivationKind("identity")
TANH = ActivationKind("tanh")
RELU = ActivationKind("relu")
LEAKY_RELU = ActivationKind("leaky_relu", LEAKY_SLOPE)
ELU = ActivationKind("elu", ELU_SCALE)
SELU = ActivationKind("selu")
SWISH = ActivationKind("swish")
RELU_GPN = ActivationKind("relu_gpn")
LRELU_GPN = ActivationKind("lrelu_gpn", LEAKY_SLOPE)

CATALOG = (IDENTITY, TANH, RELU, LEAKY_RELU, ELU, SELU, SWISH, RELU_GPN, LRELU_GPN)


def act_eval(kind, x):
    """
    Evaluate activation ``kind`` at ``x``.

    Parameters
    ----------
    kind : ActivationKind or str
    x : float or numpy.array

    Returns
    -------
    y : float or numpy.array
        same shape as ``x``

    """
    kind = ActivationKind.parse(kind)
    fn, _ = _FUNCS[kind.name]
    out = fn(numpy.asarray(x, dtype=numpy.float64), kind.a)
    if kind.is_gpn:
        out = kind.beta * out
    return out if numpy.ndim(out) else float(out)


def act_derivative(kind, x):
    """Exact derivative of ``kind`` at ``x``; see :func:`act_eval`."""
    kind = ActivationKind.parse(kind)
    _, dfn = _FUNCS[kind.name]
    out = dfn(numpy.asarray(x, dtype=numpy.float64), kind.a)
    if kind.is_gpn:
        out = kind.beta * out
    return out if numpy.ndim(out) else float(out)


def callables(kind):
    """The ``(fn, dfn)`` pair for :func:`normact.tensor.elementwise`."""
    kind = ActivationKind.parse(kind)
    return (lambda x: act_eval(kind, x)), (lambda x: act_derivative(kind, x))
