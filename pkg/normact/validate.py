import numpy
from matplotlib.axes import Axes


class NormActError(Exception):
    """Base class for every error raised by the package."""


class DimensionError(NormActError, ValueError):
    pass


class NumericError(NormActError, FloatingPointError):
    pass


class EmptyReductionError(NormActError, ValueError):
    pass


class ContractError(NormActError, RuntimeError):
    pass


class DomainError(NormActError, ValueError):
    pass


class DegenerateInputError(DomainError):
    pass


class UnsupportedDegreeError(NormActError, ValueError):
    pass


class WiringRuleError(NormActError, ValueError):
    """A network description breaks one of the wiring rules.

    Attributes
    ----------
    layer_index : int
        position of the offending descriptor in ``NetworkSpec.layers``
    rule : str
        short name of the violated rule

    """

    def __init__(self, layer_index, rule, msg):
        self.layer_index = layer_index
        self.rule = rule
        super().__init__("layer {}: [{}] {}".format(layer_index, rule, msg))


class ConfigError(NormActError, ValueError):
    pass


class DataError(NormActError, IOError):
    pass


class IdxMagicError(DataError):
    pass


class IdxTruncatedError(DataError):
    pass


class IdxCountMismatchError(DataError):
    pass


class DivergenceError(NormActError, ArithmeticError):
    def __init__(self, iteration, loss):
        self.iteration = iteration
        self.loss = loss
        super().__init__(
            "training diverged at iteration {} (loss={})".format(iteration, loss)
        )


def axes_object(ax):
    """Checks if a value if an Axes. If None, a new one is created.
    Both the figure and axes are returned (in that order).

    """

    if ax is None:
        from matplotlib import pyplot

        fig, ax = pyplot.subplots()

    elif isinstance(ax, Axes):
        fig = ax.figure
    else:
        msg = "`ax` must be a matplotlib Axes instance or None"
        raise ValueError(msg)

    return fig, ax


def is_np(listlike):
    """Coerce to a float64 numpy array, copying only when needed."""
    if not isinstance(listlike, numpy.ndarray) or listlike.dtype != numpy.float64:
        listlike = numpy.array(listlike, dtype=numpy.float64)

    return listlike


def positive_int(value, name, minimum=1):
    if isinstance(value, bool) or not isinstance(value, (int, numpy.integer)):
        raise ValueError("`{}` must be an integer, got {!r}".format(name, value))
    if value < minimum:
        raise ValueError("`{}` must be >= {}, got {}".format(name, minimum, value))
    return int(value)


def positive_float(value, name):
    value = float(value)
    if not numpy.isfinite(value) or value <= 0:
        raise DomainError("`{}` must be a positive finite number, got {}".format(name, value))
    return value


def same_shape(a, b, op):
    if tuple(a) != tuple(b):
        raise DimensionError(
            "{}: shape mismatch {} vs {}".format(op, list(a), list(b))
        )
