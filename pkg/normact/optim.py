"""
Optimizers and the step-decay learning-rate schedule.

Parameters are :class:`normact.tensor.Tensor` objects updated in place
through their ``data`` arrays.
"""

import dataclasses
import logging

import numpy

from .validate import DimensionError

logger = logging.getLogger(__name__)


def _check(params, grads, state=None):
    if len(params) != len(grads):
        raise DimensionError("{} parameters but {} gradients".format(len(params), len(grads)))
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is not None and g.shape != p.shape:
            raise DimensionError(
                "parameter {}: gradient {} does not fit {}".format(i, list(g.shape), list(p.shape))
            )
        if state is not None and state[i].shape != p.shape:
            raise DimensionError(
                "parameter {}: optimizer state {} does not fit {}".format(
                    i, list(state[i].shape), list(p.shape)
                )
            )


def sgd_step(params, grads, lr, momentum=0.0, velocity=None):
    """
    One SGD update, ``p -= lr * v`` with ``v = momentum * v + g``.

    Parameters
    ----------
    params : list of Tensor
    grads : list of numpy.array or None
        ``None`` entries are skipped
    lr, momentum : float
    velocity : list of numpy.array, optional
        momentum buffers, updated in place; zero buffers are created when
        ``momentum > 0`` and none are given

    Returns
    -------
    velocity : list of numpy.array or None
        the buffers to pass to the next call

    """
    if momentum and velocity is None:
        velocity = [numpy.zeros_like(p.data) for p in params]
    _check(params, grads, velocity)
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        if momentum:
            velocity[i] *= momentum
            velocity[i] += g
            g = velocity[i]
        p.data -= lr * g
    return velocity


@dataclasses.dataclass
class AdamWConfig(object):
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 1e-2


def adamw_init(params):
    return {
        "t": 0,
        "m": [numpy.zeros_like(p.data) for p in params],
        "v": [numpy.zeros_like(p.data) for p in params],
    }


def adamw_step(params, grads, config, state):
    """
    One AdamW update with weight decay decoupled from the gradient moments.

    ``state`` comes from :func:`adamw_init` and is updated in place.
    """
    _check(params, grads, state["m"])
    b1, b2 = config.betas
    state["t"] += 1
    t = state["t"]
    for p, g, m, v in zip(params, grads, state["m"], state["v"]):
        if g is None:
            continue
        if config.weight_decay:
            p.data -= config.lr * config.weight_decay * p.data
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g**2
        mhat = m / (1.0 - b1**t)
        vhat = v / (1.0 - b2**t)
        p.data -= config.lr * mhat / (numpy.sqrt(vhat) + config.eps)


class SGD(object):
    def __init__(self, params, lr=0.01, momentum=0.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.velocity = [numpy.zeros_like(p.data) for p in self.params]

    def step(self):
        sgd_step(self.params, [p.grad for p in self.params], self.lr, self.momentum, self.velocity)


class AdamW(object):
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-2):
        self.params = list(params)
        self.config = AdamWConfig(lr, tuple(betas), eps, weight_decay)
        self.state = adamw_init(self.params)

    @property
    def lr(self):
        return self.config.lr

    @lr.setter
    def lr(self, value):
        self.config.lr = value

    def step(self):
        adamw_step(self.params, [p.grad for p in self.params], self.config, self.state)


OPTIMIZERS = {"sgd": SGD, "adamw": AdamW}


class StepDecay(object):
    """``lr(epoch) = base_lr * factor ** (epoch // every)``, epochs counted from 0."""

    def __init__(self, base_lr, factor=0.2, every=60):
        if every < 1:
            raise ValueError("`every` must be >= 1, got {}".format(every))
        self.base_lr = base_lr
        self.factor = factor
        self.every = every

    def __call__(self, epoch):
        lr = self.base_lr * self.factor ** (epoch // self.every)
        logger.debug("epoch %d: lr %g", epoch, lr)
        return lr
