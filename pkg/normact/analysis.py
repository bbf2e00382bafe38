"""
Variance-propagation analysis.

Gaussian expectations of an activation (and from them the R-score), the
convergence Score of a network's per-layer variance gains, empirical
gradient-variance profiles and weight-mean monitoring, plus numerical checks
of the Hermite polynomial identities behind the claim that only linear
functions preserve variance in both directions.
"""

import dataclasses
import logging
import math

import numpy

from . import activations, algo, tensor
from .normact import harmonic_lambda
from .validate import DimensionError, DomainError, UnsupportedDegreeError, positive_float

logger = logging.getLogger(__name__)

HERMITE_MAX_DEGREE = 12
ORTHOGONALITY_MAX_DEGREE = 5


@dataclasses.dataclass(frozen=True)
class QuadratureSpec(object):
    """
    How Gaussian expectations are integrated.

    Attributes
    ----------
    nodes : int
        total quadrature nodes (>= 64)
    half_width : float
        integrate over ``[-half_width*sigma, +half_width*sigma]`` (>= 8)
    scheme : str
        only ``"gauss-legendre"``

    """

    nodes: int = 2048
    half_width: float = 12.0
    scheme: str = "gauss-legendre"

    def __post_init__(self):
        if self.nodes < 64:
            raise ValueError("quadrature needs at least 64 nodes, got {}".format(self.nodes))
        if self.half_width < 8:
            raise ValueError("half width must be >= 8 sigma, got {}".format(self.half_width))
        if self.scheme != "gauss-legendre":
            raise ValueError("unknown quadrature scheme {!r}".format(self.scheme))

    def rule(self, sigma):
        hw = self.half_width * sigma
        return algo.gauss_legendre(self.nodes, -hw, hw)


DEFAULT_QUADRATURE = QuadratureSpec()


def gaussian_expectation(fn, sigma, quad=DEFAULT_QUADRATURE):
    """``E[fn(x)]`` for ``x ~ N(0, sigma**2)``."""
    sigma = positive_float(sigma, "sigma")
    x, w = quad.rule(sigma)
    density = numpy.exp(-0.5 * (x / sigma) ** 2) / (sigma * math.sqrt(2.0 * math.pi))
    return float(numpy.sum(w * density * fn(x)))


def gaussian_moments(kind, sigma, quad=DEFAULT_QUADRATURE):
    """
    Variance gains of ``kind`` under ``N(0, sigma**2)`` input.

    Returns
    -------
    rho : float
        Var[δ(x)] / sigma**2
    rho_prime : float
        E[δ′(x)²]
    mu : float
        E[δ(x)]

    """
    kind = activations.ActivationKind.parse(kind)
    mean = gaussian_expectation(lambda x: activations.act_eval(kind, x), sigma, quad)
    second = gaussian_expectation(lambda x: activations.act_eval(kind, x) ** 2, sigma, quad)
    rho_prime = gaussian_expectation(lambda x: activations.act_derivative(kind, x) ** 2, sigma, quad)
    return (second - mean**2) / sigma**2, rho_prime, mean


def r_score(kind, sigma, quad=DEFAULT_QUADRATURE):
    """
    R-score of ``kind`` at input scale ``sigma``.

    ``R = ln[(E[δ²] - E[δ]²) / (sigma² E[δ′²])]`` with ``x ~ N(0, sigma²)``.
    It is zero for linear functions and negative for everything else.

    Raises
    ------
    DomainError
        if E[δ′²] or the output variance vanishes

    """
    rho, rho_prime, _ = gaussian_moments(kind, sigma, quad)
    if not rho_prime > 1e-300 or not rho > 1e-300:
        raise DomainError(
            "R-score of {} at sigma={} is undefined (rho={}, rho_prime={})".format(
                kind, sigma, rho, rho_prime
            )
        )
    return math.log(rho / rho_prime)


@dataclasses.dataclass(frozen=True)
class MonteCarloEstimate(object):
    value: float
    stderr: float


def _sample_r(kind, x, sigma):
    y = activations.act_eval(kind, x)
    dy = activations.act_derivative(kind, x)
    return math.log(numpy.var(y) / (sigma**2 * numpy.mean(dy**2)))


def r_score_monte_carlo(kind, sigma, n=10**6, rng=None, batches=100):
    """
    Sampling estimate of :func:`r_score`.

    The value uses all ``n`` samples; the standard error comes from the
    spread of the estimate over ``batches`` equal blocks.
    """
    sigma = positive_float(sigma, "sigma")
    if n < 2 * batches:
        raise ValueError("need at least 2 samples per block, got n={} for {} blocks".format(n, batches))
    kind = activations.ActivationKind.parse(kind)
    rng = numpy.random.default_rng(rng)
    x = rng.normal(0.0, sigma, size=n)
    blocks = [_sample_r(kind, chunk, sigma) for chunk in numpy.array_split(x, batches)]
    stderr = float(numpy.std(blocks, ddof=1) / math.sqrt(batches))
    return MonteCarloEstimate(_sample_r(kind, x, sigma), stderr)


def r_score_sweep(kinds, sigmas, quad=DEFAULT_QUADRATURE):
    """One ``{"activation", "sigma", "r"}`` row per (kind, sigma) pair."""
    rows = []
    for kind in kinds:
        kind = activations.ActivationKind.parse(kind)
        for sigma in sigmas:
            rows.append({"activation": str(kind), "sigma": float(sigma), "r": r_score(kind, sigma, quad)})
    return rows


def convergence_score(layers):
    """
    Sum over layers of ``(|ln rho| + |ln rho_prime|) / 2``.

    Parameters
    ----------
    layers : iterable of (float, float)
        per-layer (rho, rho_prime)

    Returns
    -------
    score : float
        zero exactly when every layer has rho = rho_prime = 1

    """
    total = 0.0
    for i, (rho, rho_prime) in enumerate(layers):
        if not (rho > 0 and rho_prime > 0 and numpy.isfinite(rho) and numpy.isfinite(rho_prime)):
            raise DomainError(
                "layer {}: Score needs positive finite gains, got ({}, {})".format(i, rho, rho_prime)
            )
        total += 0.5 * (abs(math.log(rho)) + abs(math.log(rho_prime)))
    return total


class ScoreTrace(object):
    """Per-layer (rho, rho_prime, lambda) recorded against iteration."""

    def __init__(self, n_layers=None):
        self._n_layers = n_layers
        self.iterations = []
        self._ratios = []

    def __len__(self):
        return len(self.iterations)

    @property
    def n_layers(self):
        return self._n_layers

    def append(self, iteration, ratios):
        ratios = [(float(r), float(rp)) for r, rp in ratios]
        if self._n_layers is None:
            self._n_layers = len(ratios)
        if len(ratios) != self._n_layers:
            raise DimensionError(
                "score trace holds {} layers, got {}".format(self._n_layers, len(ratios))
            )
        if self.iterations and iteration <= self.iterations[-1]:
            raise ValueError(
                "iterations must increase, got {} after {}".format(iteration, self.iterations[-1])
            )
        self.iterations.append(int(iteration))
        self._ratios.append(ratios)

    def layer(self, index):
        """Arrays ``(rho, rho_prime, lam)`` for one layer over all iterations."""
        rho = numpy.array([r[index][0] for r in self._ratios])
        rho_prime = numpy.array([r[index][1] for r in self._ratios])
        lam = numpy.array([harmonic_lambda(a, b) for a, b in zip(rho, rho_prime)])
        return rho, rho_prime, lam

    @property
    def score(self):
        return numpy.array([convergence_score(r) for r in self._ratios])

    def rows(self):
        """One dict per (iteration, layer)."""
        out = []
        for it, ratios, score in zip(self.iterations, self._ratios, self.score):
            for i, (rho, rho_prime) in enumerate(ratios):
                out.append(
                    {
                        "iteration": it,
                        "layer": i,
                        "rho": rho,
                        "rho_prime": rho_prime,
                        "lambda": harmonic_lambda(rho, rho_prime),
                        "score": score,
                    }
                )
        return out


def gradient_variance_profile(network, batch, loss_fn=None):
    """
    Empirical variance of each weight tensor's gradient after one backward
    pass on ``batch``.

    Parameters
    ----------
    network : normact.network.Network
    batch : tuple of (inputs, labels)
    loss_fn : callable, optional
        ``loss_fn(outputs, labels) -> scalar Tensor``; cross-entropy by
        default

    Returns
    -------
    variances : list of float
        one per entry of ``network.weights()``, input side first

    """
    inputs, labels = batch
    loss_fn = loss_fn or tensor.cross_entropy_loss
    network.zero_grad()
    loss = loss_fn(network(inputs), labels)
    tensor.backward(loss)
    profile = [float(numpy.var(W.grad)) for W in network.weights()]
    logger.debug("gradient variance profile: %s", profile)
    return profile


def weight_mean_trace(weights):
    """``sum_i |mean(W_i)|`` over a network's weights or any iterable of arrays."""
    if hasattr(weights, "weights"):
        weights = weights.weights()
    total = 0.0
    for W in weights:
        data = W.data if isinstance(W, tensor.Tensor) else numpy.asarray(W, dtype=float)
        total += abs(float(data.mean()))
    return total


def _check_degree(k, cap=HERMITE_MAX_DEGREE):
    if isinstance(k, bool) or int(k) != k or k < 0:
        raise ValueError("Hermite degree must be a non-negative integer, got {!r}".format(k))
    if k > cap:
        raise UnsupportedDegreeError("Hermite degree {} exceeds the supported {}".format(k, cap))
    return int(k)


def hermite(k, sigma, x):
    """
    Normalized Hermite polynomial of degree ``k`` for weight
    ``exp(-x²/(2 sigma²))``, evaluated by the three-term recurrence

        H_0 = 1,  H_1 = x / sigma²,
        H_{k+1} = (x H_k - sqrt(k) H_{k-1}) / (sigma² sqrt(k + 1))

    """
    k = _check_degree(k)
    sigma = positive_float(sigma, "sigma")
    x = numpy.asarray(x, dtype=numpy.float64)
    s2 = sigma**2
    prev, cur = numpy.zeros_like(x), numpy.ones_like(x)
    for n in range(k):
        prev, cur = cur, (x * cur - math.sqrt(n) * prev) / (s2 * math.sqrt(n + 1))
    return cur if cur.ndim else float(cur)


def hermite_derivative(k, sigma, x):
    """``H_k′ = sqrt(k) / sigma² · H_{k-1}``."""
    k = _check_degree(k)
    if k == 0:
        return numpy.zeros_like(numpy.asarray(x, dtype=float)) if numpy.ndim(x) else 0.0
    return math.sqrt(k) / sigma**2 * hermite(k - 1, sigma, x)


def rodrigues_hermite(k, sigma):
    """
    :func:`hermite` as an exact polynomial, built from the derivative form
    ``(-1)^k / sqrt(k!) · ω^{-1} d^k ω / dx^k``.

    Returns
    -------
    numpy.polynomial.Polynomial

    """
    k = _check_degree(k)
    sigma = positive_float(sigma, "sigma")
    Polynomial = numpy.polynomial.Polynomial
    p = Polynomial([1.0])
    x_over_s2 = Polynomial([0.0, 1.0 / sigma**2])
    for _ in range(k):
        p = p.deriv() - x_over_s2 * p
    return p * ((-1.0) ** k / math.sqrt(math.factorial(k)))


def hermite_norm(k, sigma):
    """``∫ H_k² ω dx = sqrt(2π) sigma^-(2k-1)``."""
    return math.sqrt(2.0 * math.pi) * sigma ** (-(2 * k - 1))


def hermite_derivative_norm(k, sigma):
    """``∫ H_k′² ω dx = k sqrt(2π) sigma^-(2k+1)``."""
    return k * math.sqrt(2.0 * math.pi) * sigma ** (-(2 * k + 1))


@dataclasses.dataclass
class OrthogonalityReport(object):
    kmax: int
    sigma: float
    entries: list = dataclasses.field(default_factory=list)
    failures: list = dataclasses.field(default_factory=list)

    @property
    def passed(self):
        return not self.failures


def hermite_orthogonality_check(kmax, sigma, quad=DEFAULT_QUADRATURE, rtol=1e-6, otol=1e-8):
    """
    Integrate ``H_k H_j ω`` and ``H_k′ H_j′ ω`` for all ``k, j <= kmax``
    and compare with the closed forms (zero off the diagonal).

    Diagonal entries must match to relative error ``rtol``; off-diagonal
    entries must be below ``otol`` times ``sqrt(norm_k norm_j)``.

    Returns
    -------
    report : OrthogonalityReport
        ``entries`` holds ``(integral, k, j, value, expected, error)`` tuples

    """
    kmax = _check_degree(kmax, ORTHOGONALITY_MAX_DEGREE)
    sigma = positive_float(sigma, "sigma")
    x, w = quad.rule(sigma)
    weight = w * numpy.exp(-0.5 * (x / sigma) ** 2)
    H = [hermite(k, sigma, x) for k in range(kmax + 1)]
    dH = [hermite_derivative(k, sigma, x) for k in range(kmax + 1)]
    report = OrthogonalityReport(kmax, sigma)
    for integral, values, norm in (("H", H, hermite_norm), ("dH", dH, hermite_derivative_norm)):
        for k in range(kmax + 1):
            for j in range(kmax + 1):
                value = float(numpy.sum(weight * values[k] * values[j]))
                if k == j:
                    expected = norm(k, sigma)
                    if expected == 0.0:
                        error = abs(value)
                        ok = error < otol
                    else:
                        error = abs(value - expected) / expected
                        ok = error < rtol
                else:
                    expected = 0.0
                    scale = math.sqrt(max(norm(k, sigma), 1e-300) * max(norm(j, sigma), 1e-300))
                    error = abs(value) / scale
                    ok = error < otol
                entry = (integral, k, j, value, expected, error)
                report.entries.append(entry)
                if not ok:
                    report.failures.append(entry)
    logger.info(
        "orthogonality check kmax=%d sigma=%g: %d failures", kmax, sigma, len(report.failures)
    )
    return report


@dataclasses.dataclass
class LinearityReport(object):
    rows: list = dataclasses.field(default_factory=list)

    @property
    def failures(self):
        return [r for r in self.rows if not r["ok"]]

    @property
    def passed(self):
        return not self.failures


def linearity_scan(candidates=activations.CATALOG, sigmas=(0.7, 1.0, 1.5), quad=DEFAULT_QUADRATURE):
    """
    R-score of every candidate at every sigma: a linear candidate must give
    ``|R| < 1e-8``, a nonlinear one ``R < -1e-4``.
    """
    report = LinearityReport()
    for kind in candidates:
        kind = activations.ActivationKind.parse(kind)
        for sigma in sigmas:
            r = r_score(kind, sigma, quad)
            ok = abs(r) < 1e-8 if kind.is_linear else r < -1e-4
            report.rows.append({"activation": str(kind), "sigma": float(sigma), "r": r, "ok": ok})
    return report
