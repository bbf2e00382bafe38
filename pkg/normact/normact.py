"""
Normalized activation functions.

A normalized activation wraps a base activation ``δ`` as

    (λ + f(α)) · (δ(x) − μ),    f(α) = β·tanh(α)

where ``λ = sqrt((ρ + ρ′) / (2ρρ′))`` is computed from running estimates of
the forward variance gain ``ρ = Var[δ(x)] / Var[x]`` and the backward gain
``ρ′ = E[δ′(x)²]``, and ``μ`` is the running mean of ``δ(x)``. The running
statistics carry no gradient; only ``α`` is learned.
"""

import dataclasses
import logging
import warnings

import numpy

from . import activations, tensor, validate
from .validate import ContractError, DegenerateInputError, DomainError

logger = logging.getLogger(__name__)

BETA_BOUND = 0.3


@dataclasses.dataclass
class RunningStats(object):
    """
    Running (ρ, ρ′, μ) with their momentum and bound-filter settings.

    Attributes
    ----------
    rho, rho_prime : float
        forward and backward variance gains
    mu : float
        running mean of the base activation's output
    t : int
        number of training-mode updates so far
    m : float
        momentum in (0, 1]
    L, U : float
        a measurement is blended in only if it lies strictly between
        ``L`` and ``U`` times the current value; ``L < 1 < U``
    eps : float
        added to Var[x] in the ρ measurement

    """

    rho: float = 1.0
    rho_prime: float = 1.0
    mu: float = 0.0
    t: int = 0
    m: float = 0.1
    L: float = 0.5
    U: float = 2.0
    eps: float = 1e-8

    def __post_init__(self):
        if not 0.0 < self.m <= 1.0:
            raise ValueError("momentum `m` must lie in (0, 1], got {}".format(self.m))
        if not 0.0 < self.L < 1.0 < self.U:
            raise ValueError(
                "bounds must satisfy 0 < L < 1 < U, got L={}, U={}".format(self.L, self.U)
            )
        if not self.eps > 0:
            raise ValueError("`eps` must be positive, got {}".format(self.eps))

    def snapshot(self):
        return "rho={!r}\nrho_prime={!r}\nmu={!r}\nt={}\n".format(
            float(self.rho), float(self.rho_prime), float(self.mu), int(self.t)
        )


def parse_snapshot(text):
    """Parse ``key=value`` lines into a dict of floats (``t`` as int)."""
    values = {}
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError("malformed snapshot line {!r}".format(line))
        key = key.strip()
        values[key] = int(value) if key == "t" else float(value)
    return values


def _acceptable(value):
    return numpy.isfinite(value) and value > 0


def update_stats(stats, rho_M, rho_prime_M, mu_M):
    """
    Blend one batch measurement into ``stats``.

    The first update copies the measurement through. Afterwards μ is blended
    unconditionally with momentum ``m``, while ρ and ρ′ are each blended only
    when the measurement lies strictly inside ``(L·current, U·current)``.
    Non-finite measurements are rejected like out-of-bounds ones. ``t``
    always advances by one.

    Returns
    -------
    stats : RunningStats
        a new instance; the argument is left untouched

    """
    m = stats.m
    rho, rho_prime, mu = stats.rho, stats.rho_prime, stats.mu

    if not all(numpy.isfinite(v) for v in (rho_M, rho_prime_M, mu_M)):
        warnings.warn(
            "non-finite batch measurement rejected at t={} "
            "(rho={}, rho_prime={}, mu={})".format(stats.t, rho_M, rho_prime_M, mu_M),
            RuntimeWarning,
        )

    if stats.t == 0:
        if _acceptable(rho_M):
            rho = float(rho_M)
        if _acceptable(rho_prime_M):
            rho_prime = float(rho_prime_M)
        if numpy.isfinite(mu_M):
            mu = float(mu_M)
    else:
        if numpy.isfinite(mu_M):
            mu = m * mu_M + (1.0 - m) * mu
        if numpy.isfinite(rho_M) and stats.L * rho < rho_M < stats.U * rho:
            rho = m * rho_M + (1.0 - m) * rho
        else:
            logger.debug("rho measurement %r rejected (running %r)", rho_M, rho)
        if numpy.isfinite(rho_prime_M) and stats.L * rho_prime < rho_prime_M < stats.U * rho_prime:
            rho_prime = m * rho_prime_M + (1.0 - m) * rho_prime
        else:
            logger.debug("rho' measurement %r rejected (running %r)", rho_prime_M, rho_prime)

    return dataclasses.replace(
        stats, rho=float(rho), rho_prime=float(rho_prime), mu=float(mu), t=stats.t + 1
    )


def harmonic_lambda(rho, rho_prime):
    """``sqrt((ρ + ρ′) / (2ρρ′))``: the reciprocal square root of their harmonic mean."""
    if not (_acceptable(rho) and _acceptable(rho_prime)):
        raise DomainError(
            "normalization factor needs positive finite gains, got rho={}, "
            "rho_prime={}".format(rho, rho_prime)
        )
    return float(numpy.sqrt((rho + rho_prime) / (2.0 * rho * rho_prime)))


def lambda_factor(stats):
    return harmonic_lambda(stats.rho, stats.rho_prime)


def batch_statistics(x, mask=None, base=activations.RELU, eps=1e-8):
    """
    Measure (ρ, ρ′, μ) of ``base`` on one batch.

    Parameters
    ----------
    x : Tensor or array-like
        pre-activations
    mask : array-like of bool, optional
        only ``True`` elements are measured
    base : ActivationKind or str
    eps : float, optional (default = 1e-8)

    Returns
    -------
    rho_M : float
        Var[δ(x)] / (Var[x] + eps)
    rho_prime_M : float
        mean of δ′(x)²
    mu_M : float
        mean of δ(x)

    Raises
    ------
    DegenerateInputError
        if fewer than two elements are measured, or Var[x] < eps and the
        ρ measurement is not finite. A near-constant batch otherwise yields
        ρ_M ≈ 0, which :func:`update_stats` rejects.
    EmptyReductionError
        if every element is masked

    """
    values = x.data if isinstance(x, tensor.Tensor) else validate.is_np(x)
    _, var_x, count = tensor.reduce_moments(values, mask)
    if count < 2:
        raise DegenerateInputError(
            "batch statistics need at least 2 elements, got {}".format(count)
        )
    y = activations.act_eval(base, values)
    dy = activations.act_derivative(base, values)
    mu_M, var_y, _ = tensor.reduce_moments(y, mask)
    rho_prime_M, _, _ = tensor.reduce_moments(dy**2, mask)
    rho_M = var_y / (var_x + eps)
    if var_x < eps and not numpy.isfinite(rho_M):
        raise DegenerateInputError(
            "input variance {} is too small to measure rho (eps={})".format(var_x, eps)
        )
    return float(rho_M), float(rho_prime_M), float(mu_M)


class NormAct(tensor.Function):
    """Tape node of a normalized activation. λ and μ enter as constants."""

    def forward(self, ctx, x, alpha, base=None, lam=1.0, mu=0.0, beta_bound=BETA_BOUND, center=True):
        y = activations.act_eval(base, x)
        shifted = y - mu if center else y
        th = numpy.tanh(alpha)
        ctx.save_for_backward(x, shifted, th)
        ctx.base = base
        ctx.gain = lam + beta_bound * th
        ctx.beta_bound = beta_bound
        return ctx.gain * shifted

    def backward(self, ctx, grad):
        return _normact_grads(ctx, grad)


def _normact_grads(ctx, grad):
    x, shifted, th = ctx.saved
    dx = grad * ctx.gain * activations.act_derivative(ctx.base, x)
    dalpha = numpy.sum(grad * shifted) * ctx.beta_bound * (1.0 - th**2)
    return dx, numpy.asarray(dalpha, dtype=numpy.float64).reshape(numpy.shape(th))


def normact_backward(layer, context, upstream):
    """
    Gradients of a normalized activation given its saved forward context.

    Parameters
    ----------
    layer : NormActLayer
    context : normact.tensor.Context or None
        usually ``layer.context`` right after a forward pass
    upstream : Tensor or array-like
        gradient of the loss with respect to the layer output

    Returns
    -------
    dx : Tensor
    dalpha : float

    """
    if context is None or not context.saved:
        raise ContractError(
            "no saved forward context for {!r}; run forward first".format(layer)
        )
    upstream = upstream.data if isinstance(upstream, tensor.Tensor) else validate.is_np(upstream)
    validate.same_shape(upstream.shape, context.saved[0].shape, "normact_backward")
    dx, dalpha = _normact_grads(context, upstream)
    return tensor.Tensor(dx), float(dalpha)


class NormActLayer(object):
    """
    A base activation turned into a normalized activation.

    Parameters
    ----------
    base : ActivationKind or str, optional (default = "relu")
    beta_bound : float, optional (default = 0.3)
        β of the bounded adjustment ``f(α) = β·tanh(α)``
    m, L, U, eps : float, optional
        running-statistics settings, see :class:`RunningStats`
    center : bool, optional (default = True)
        subtract the running mean μ from the output

    """

    def __init__(
        self,
        base="relu",
        beta_bound=BETA_BOUND,
        m=0.1,
        L=0.5,
        U=2.0,
        eps=1e-8,
        center=True,
    ):
        self._base = activations.ActivationKind.parse(base)
        self._beta_bound = float(beta_bound)
        self._center = bool(center)
        self.alpha = tensor.parameter(0.0)
        self.stats = RunningStats(m=m, L=L, U=U, eps=eps)
        self._training = True
        self._frozen = False
        self.context = None
        self.measured = None

    def __repr__(self):
        return "<NormActLayer(base='{}', beta_bound={}, center={})>".format(
            self.base, self.beta_bound, self.center
        )

    @property
    def base(self):
        return self._base

    @property
    def beta_bound(self):
        return self._beta_bound

    @property
    def center(self):
        return self._center

    @property
    def training(self):
        return self._training

    @property
    def frozen(self):
        return self._frozen

    @property
    def lam(self):
        return lambda_factor(self.stats)

    @property
    def f_alpha(self):
        return self.beta_bound * float(numpy.tanh(self.alpha.data))

    @property
    def gain(self):
        return self.lam + self.f_alpha

    def train(self, mode=True):
        self._training = bool(mode)
        return self

    def eval(self):
        return self.train(False)

    def freeze(self, flag=True):
        """Keep training-mode behaviour but stop updating the statistics."""
        self._frozen = bool(flag)
        return self

    def parameters(self):
        return [self.alpha]

    def forward(self, x, mask=None):
        """
        Normalize ``base(x)`` with the running statistics.

        In training mode (and not frozen) this batch's measurement is folded
        into the statistics first, so the batch is normalized with the
        updated λ and μ. In eval mode the statistics are read only.

        """
        x = tensor.as_tensor(x)
        if self._training and not self._frozen:
            rho_M, rho_prime_M, mu_M = batch_statistics(
                x, mask=mask, base=self.base, eps=self.stats.eps
            )
            self.stats = update_stats(self.stats, rho_M, rho_prime_M, mu_M)
        else:
            rho_M = rho_prime_M = None

        out = NormAct.apply(
            x,
            self.alpha,
            base=self.base,
            lam=self.lam,
            mu=self.stats.mu,
            beta_bound=self.beta_bound,
            center=self.center,
        )
        self.context = out._creator.ctx if out._creator is not None else None
        if rho_M is not None:
            g2 = self.gain**2
            if _acceptable(rho_M) and _acceptable(rho_prime_M):
                self.measured = (g2 * rho_M, g2 * rho_prime_M)
            else:
                self.measured = None
        return out

    __call__ = forward

    def snapshot(self):
        """Plain ``key=value`` text of the statistics and α."""
        return self.stats.snapshot() + "alpha={!r}\n".format(float(self.alpha.data))

    def load_snapshot(self, text):
        values = parse_snapshot(text)
        self.stats = dataclasses.replace(
            self.stats,
            rho=values["rho"],
            rho_prime=values["rho_prime"],
            mu=values["mu"],
            t=values["t"],
        )
        if "alpha" in values:
            self.alpha.data = numpy.array(values["alpha"], dtype=numpy.float64)
        return self
