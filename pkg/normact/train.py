"""
Experiment configuration, the instrumented training loop and the gradient
check.
"""

import copy
import csv
import dataclasses
import json
import logging
import math
import os
import typing

import numpy
from tqdm import tqdm

from . import algo, analysis, data, optim, presets, tensor
from .network import NetworkSpec, build_network, save_checkpoint
from .normact import NormActLayer
from .validate import ConfigError, ContractError, DataError, DivergenceError, NumericError

logger = logging.getLogger(__name__)

DATASETS = ("synthetic-gaussian", "mnist")
NORMACT_KEYS = ("beta_bound", "m", "L", "U", "eps", "center")
FLOAT_FORMAT = "%.17g"


@dataclasses.dataclass
class TrainConfig(object):
    """
    Everything one training run needs; mirrors the JSON config files.

    Attributes
    ----------
    network : dict or str
        a :class:`NetworkSpec` as a dict, or a key of
        :data:`normact.presets.NETWORKS`
    dataset : str
        ``"synthetic-gaussian"`` or ``"mnist"``
    data : dict
        dataset options. For ``mnist``: ``dir`` (default: the
        ``NORMACT_MNIST_DIR`` environment variable). For
        ``synthetic-gaussian``: ``n``, ``n_val``, ``classes``, ``separation``
    optimizer : dict
        ``{"name": "sgd", "lr", "momentum"}`` or
        ``{"name": "adamw", "lr", "weight_decay", "betas"}``
    schedule : dict or None
        step decay ``{"factor", "every"}``
    epochs, batch_size, seed : int
    normact : dict
        keyword arguments for every normalized activation
        (``beta_bound, m, L, U, eps, center``)
    metrics : str or None
        CSV path for the metrics rows
    log_interval : int
        iterations between intermediate rows
    checkpoint : str or None
        where to write the trained network
    train_limit : int or None
        use only the first ``train_limit`` training items

    """

    network: typing.Any
    dataset: str = "synthetic-gaussian"
    data: dict = dataclasses.field(default_factory=dict)
    optimizer: dict = dataclasses.field(
        default_factory=lambda: {"name": "sgd", "lr": 0.01, "momentum": 0.9}
    )
    schedule: typing.Optional[dict] = None
    epochs: int = 1
    batch_size: int = 64
    seed: int = 0
    normact: dict = dataclasses.field(default_factory=dict)
    metrics: typing.Optional[str] = None
    log_interval: int = 50
    checkpoint: typing.Optional[str] = None
    train_limit: typing.Optional[int] = None

    def __post_init__(self):
        if not isinstance(self.epochs, int) or self.epochs < 1:
            raise ConfigError("epochs must be an integer >= 1, got {!r}".format(self.epochs))
        if not isinstance(self.batch_size, int) or self.batch_size < 2:
            raise ConfigError("batch_size must be an integer >= 2, got {!r}".format(self.batch_size))
        if not isinstance(self.log_interval, int) or self.log_interval < 1:
            raise ConfigError("log_interval must be >= 1, got {!r}".format(self.log_interval))
        if self.dataset not in DATASETS:
            raise ConfigError("dataset must be one of {}, got {!r}".format(DATASETS, self.dataset))
        name = self.optimizer.get("name", "sgd")
        if name not in optim.OPTIMIZERS:
            raise ConfigError(
                "optimizer must be one of {}, got {!r}".format(sorted(optim.OPTIMIZERS), name)
            )
        unknown = set(self.normact) - set(NORMACT_KEYS)
        if unknown:
            raise ConfigError("unknown normact options: {}".format(sorted(unknown)))
        if isinstance(self.network, str) and self.network not in presets.NETWORKS:
            raise ConfigError("unknown network preset {!r}".format(self.network))

    @classmethod
    def from_dict(cls, values):
        values = copy.deepcopy(values)
        fields = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - fields
        if unknown:
            raise ConfigError("unknown config keys: {}".format(sorted(unknown)))
        if "network" not in values:
            raise ConfigError("config needs a `network`")
        return cls(**values)

    @classmethod
    def from_json(cls, path):
        try:
            with open(path, encoding="utf8") as fh:
                values = json.load(fh)
        except (OSError, ValueError) as e:
            raise ConfigError("cannot read config {}: {}".format(path, e)) from e
        if not isinstance(values, dict):
            raise ConfigError("config {} must hold a JSON object".format(path))
        return cls.from_dict(values)

    @classmethod
    def resolve(cls, name_or_path):
        """A preset name or a JSON file path."""
        if name_or_path in presets.Preset:
            return cls.from_dict(presets.Preset[name_or_path])
        return cls.from_json(name_or_path)

    def to_dict(self):
        return dataclasses.asdict(self)

    def network_spec(self):
        values = self.network
        if isinstance(values, str):
            values = presets.NETWORKS[values]
        return NetworkSpec.from_dict(copy.deepcopy(values))


@dataclasses.dataclass
class MetricsRow(object):
    """
    One line of the metrics CSV.

    ``val_accuracy`` is ``None`` on intermediate rows. ``layers`` holds one
    ``(rho, rho_prime, lam, alpha)`` tuple per activation layer; ``lam``
    and ``alpha`` are ``None`` for plain activations.
    """

    epoch: int
    iteration: int
    train_loss: float
    train_accuracy: float
    val_accuracy: typing.Optional[float]
    score: float
    weight_mean: float
    layers: list

    @staticmethod
    def header(n_layers):
        columns = [
            "epoch",
            "iteration",
            "train_loss",
            "train_accuracy",
            "val_accuracy",
            "score",
            "weight_mean",
        ]
        for i in range(n_layers):
            columns += ["rho_{}".format(i), "rho_prime_{}".format(i), "lambda_{}".format(i), "alpha_{}".format(i)]
        return columns

    def values(self):
        out = [
            str(self.epoch),
            str(self.iteration),
            _fmt(self.train_loss),
            _fmt(self.train_accuracy),
            _fmt(self.val_accuracy),
            _fmt(self.score),
            _fmt(self.weight_mean),
        ]
        for layer in self.layers:
            out += [_fmt(v) for v in layer]
        return out


def _fmt(value):
    return "" if value is None else FLOAT_FORMAT % value


class MetricsWriter(object):
    """CSV sink for :class:`MetricsRow`; a no-op without a path."""

    def __init__(self, path, n_layers):
        self.path = path
        self._fh = None
        if path:
            directory = os.path.dirname(os.path.abspath(path))
            os.makedirs(directory, exist_ok=True)
            self._fh = open(path, "w", newline="", encoding="utf8")
            self._writer = csv.writer(self._fh)
            self._writer.writerow(MetricsRow.header(n_layers))

    def write(self, row):
        if self._fh is not None:
            self._writer.writerow(row.values())
            self._fh.flush()

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_metrics(path):
    """Rows of a metrics CSV as dicts of floats (``None`` for empty cells)."""
    with open(path, newline="", encoding="utf8") as fh:
        return [
            {k: (float(v) if v != "" else None) for k, v in row.items()}
            for row in csv.DictReader(fh)
        ]


@dataclasses.dataclass
class TrainResult(object):
    network: typing.Any
    rows: list

    @property
    def final(self):
        return self.rows[-1] if self.rows else None


def load_datasets(config):
    """The (train, validation) pair described by ``config``."""
    options = dict(config.data)
    if config.dataset == "mnist":
        directory = options.get("dir") or os.environ.get("NORMACT_MNIST_DIR")
        if not directory:
            raise DataError("mnist needs data.dir or the NORMACT_MNIST_DIR environment variable")
        train_set, val_set = data.load_mnist(directory)
    else:
        spec = config.network_spec()
        d_in = int(numpy.prod(spec.input_shape))
        classes = options.get("classes", 2)
        separation = options.get("separation", 6.0)
        n, n_val = options.get("n", 1024), options.get("n_val", 256)
        train_set = data.synthetic_gaussian_dataset(n, d_in, classes, config.seed, separation)
        val_set = data.synthetic_gaussian_dataset(n_val, d_in, classes, config.seed + 1, separation)
        shape = (-1,) + tuple(spec.input_shape)
        train_set = data.Dataset(train_set.inputs.reshape(shape), train_set.labels)
        val_set = data.Dataset(val_set.inputs.reshape(shape), val_set.labels)
    if config.train_limit:
        train_set = train_set.subset(config.train_limit)
    return train_set, val_set


def make_optimizer(config, params):
    options = dict(config.optimizer)
    name = options.pop("name", "sgd")
    try:
        return optim.OPTIMIZERS[name](params, **options)
    except TypeError as e:
        raise ConfigError("invalid {} options {}: {}".format(name, options, e)) from e


def evaluate(network, dataset, batch_size=1000):
    """Eval-mode accuracy of ``network`` on ``dataset``; restores the previous mode."""
    training = [m.training for m in network.modules()]
    network.eval()
    correct = 0
    for x, y in dataset.batches(batch_size, shuffle=False, drop_last=False):
        correct += int(numpy.sum(network.predict(x) == y))
    for m, mode in zip(network.modules(), training):
        m.train(mode)
    return correct / max(len(dataset), 1)


def _layer_columns(layers, ratios):
    out = []
    for layer, (rho, rho_prime) in zip(layers, ratios):
        if isinstance(layer, NormActLayer):
            out.append((rho, rho_prime, layer.lam, float(layer.alpha.data)))
        else:
            out.append((rho, rho_prime, None, None))
    return out


class _RatioMeter(object):
    """Averages each layer's measured gains between two metrics rows."""

    def __init__(self, layers):
        self.layers = layers
        self.reset()

    def reset(self):
        self.sums = [[0.0, 0.0] for _ in self.layers]
        self.counts = [0 for _ in self.layers]

    def update(self):
        for i, layer in enumerate(self.layers):
            if layer.measured is not None:
                self.sums[i][0] += layer.measured[0]
                self.sums[i][1] += layer.measured[1]
                self.counts[i] += 1

    def mean(self):
        return [
            (s[0] / c, s[1] / c) if c else (1.0, 1.0) for s, c in zip(self.sums, self.counts)
        ]


def train(config, progress=True):
    """
    Train the network described by ``config``.

    Rows are emitted every ``log_interval`` iterations and at the end of
    every epoch (the only rows with a validation accuracy). The Score and
    per-layer gains of a row are averages of the effective gains measured
    since the previous row.

    Returns
    -------
    result : TrainResult

    Raises
    ------
    DivergenceError
        as soon as the training loss (or any forward value) is not finite

    """
    train_set, val_set = load_datasets(config)
    spec = config.network_spec()
    network = build_network(spec, seed=config.seed, normact_options=config.normact)
    optimizer = make_optimizer(config, network.parameters())
    base_lr = optimizer.lr
    schedule = optim.StepDecay(base_lr, **config.schedule) if config.schedule else None
    shuffle_rng = numpy.random.default_rng(config.seed + 1)

    layers = network.activation_layers()
    meter = _RatioMeter(layers)
    rows = []
    iteration = 0
    logger.info("training %r on %d items for %d epochs", network, len(train_set), config.epochs)

    with MetricsWriter(config.metrics, len(layers)) as writer:
        for epoch in range(config.epochs):
            if schedule is not None:
                optimizer.lr = schedule(epoch)
            network.train()
            n_batches = train_set.n_batches(config.batch_size)
            loss_sum, correct, seen = 0.0, 0, 0
            batches = data.prefetch(train_set.batches(config.batch_size, rng=shuffle_rng))
            pbar = tqdm(total=n_batches, desc="epoch {}".format(epoch), disable=not progress, leave=False)
            for b, (x, y) in enumerate(batches):
                network.zero_grad()
                try:
                    logits = network(x)
                    loss = tensor.cross_entropy_loss(logits, y)
                except NumericError as e:
                    raise DivergenceError(iteration, float("nan")) from e
                value = loss.item()
                if not math.isfinite(value):
                    raise DivergenceError(iteration, value)
                tensor.backward(loss)
                optimizer.step()

                meter.update()
                loss_sum += value * len(y)
                correct += int(numpy.sum(logits.data.argmax(axis=1) == y))
                seen += len(y)
                iteration += 1
                pbar.update(1)
                pbar.set_description("epoch {} (loss {:.4f})".format(epoch, loss_sum / seen))

                if iteration % config.log_interval == 0 and b < n_batches - 1:
                    row = _row(epoch, iteration, loss_sum / seen, correct / seen, None, network, meter)
                    rows.append(row)
                    writer.write(row)
            pbar.close()

            val_accuracy = evaluate(network, val_set)
            row = _row(epoch, iteration, loss_sum / max(seen, 1), correct / max(seen, 1), val_accuracy, network, meter)
            rows.append(row)
            writer.write(row)
            logger.info(
                "epoch %d: loss %.4f, train acc %.4f, val acc %.4f, score %.4f",
                epoch,
                row.train_loss,
                row.train_accuracy,
                val_accuracy,
                row.score,
            )

    if config.checkpoint:
        save_checkpoint(network, config.checkpoint)
    return TrainResult(network, rows)


def _row(epoch, iteration, loss, accuracy, val_accuracy, network, meter):
    ratios = meter.mean()
    meter.reset()
    return MetricsRow(
        epoch=epoch,
        iteration=iteration,
        train_loss=loss,
        train_accuracy=accuracy,
        val_accuracy=val_accuracy,
        score=analysis.convergence_score(ratios),
        weight_mean=analysis.weight_mean_trace(network),
        layers=_layer_columns(meter.layers, ratios),
    )


def score_from_row(row, n_layers):
    """Recompute the Score of a :func:`read_metrics` row from its gain columns."""
    return analysis.convergence_score(
        (row["rho_{}".format(i)], row["rho_prime_{}".format(i)]) for i in range(n_layers)
    )


@dataclasses.dataclass
class GradCheckReport(object):
    """
    Finite-difference comparison of every parameter tensor.

    ``errors`` holds the norm-relative error of each tensor against the best
    estimate over several steps and decides ``passed``. ``entry_errors``
    holds the largest per-entry relative error at a single fixed step.
    """

    tolerance: float
    errors: list = dataclasses.field(default_factory=list)
    entry_errors: list = dataclasses.field(default_factory=list)

    @property
    def max_error(self):
        return max((e for _, _, e in self.errors), default=0.0)

    @property
    def max_entry_error(self):
        return max((e for _, _, e in self.entry_errors), default=0.0)

    @property
    def passed(self):
        return self.max_error < self.tolerance


def tensor_relative_error(analytic, numeric, atol=1e-8):
    """``||a - n|| / (max(||a||, ||n||) + atol)`` over a whole parameter tensor."""
    diff = numpy.linalg.norm(numpy.ravel(analytic - numeric))
    scale = max(numpy.linalg.norm(numpy.ravel(analytic)), numpy.linalg.norm(numpy.ravel(numeric)))
    return float(diff / (scale + atol))


def grad_check(
    network,
    batch,
    tolerance=1e-4,
    loss_fn=None,
    steps=(1e-3, 1e-4, 1e-5, 1e-6),
    entry_step=1e-5,
    atol=1e-8,
    max_params=10000,
):
    """
    Compare backpropagated gradients with central finite differences.

    One training-mode forward pass settles the normalized-activation
    statistics, which are then frozen for the comparison and released
    afterwards.

    Parameters
    ----------
    network : normact.network.Network
    batch : tuple of (inputs, labels)
    tolerance : float, optional (default = 1e-4)
    loss_fn : callable, optional
        ``loss_fn(outputs, labels) -> scalar Tensor``, cross-entropy by
        default
    steps : sequence of float, optional
        finite-difference steps; the best per entry counts
    entry_step : float, optional (default = 1e-5)
        the single step behind ``entry_errors``
    max_params : int, optional (default = 10000)
        larger networks are refused

    Returns
    -------
    report : GradCheckReport
        ``errors`` holds ``(name, shape, relative error)`` per parameter
        tensor, see :func:`tensor_relative_error`; ``entry_errors`` the
        largest per-entry relative error at ``entry_step``

    Raises
    ------
    ContractError
        if the network has more than ``max_params`` parameters

    """
    if network.n_params > max_params:
        raise ContractError(
            "gradient check needs at most {} parameters, the network has {}".format(
                max_params, network.n_params
            )
        )
    inputs, labels = batch
    loss_fn = loss_fn or tensor.cross_entropy_loss
    network.train()
    network.freeze_stats(False)
    network(inputs)
    network.freeze_stats(True)
    try:
        network.zero_grad()
        tensor.backward(loss_fn(network(inputs), labels))

        def f():
            return loss_fn(network(inputs), labels).item()

        report = GradCheckReport(tolerance)
        for i, m in enumerate(network.modules()):
            for j, p in enumerate(m.parameters()):
                analytic = p.grad if p.grad is not None else numpy.zeros_like(p.data)
                numeric, _ = algo.best_numeric_gradient(f, p.data, analytic, steps=steps, atol=atol)
                name = "{}:{}[{}]".format(i, type(m).__name__, j)
                report.errors.append((name, list(p.shape), tensor_relative_error(analytic, numeric, atol)))
                spot = algo.central_difference(f, p.data, entry_step)
                entry = float(algo.relative_error(analytic, spot, atol=atol).max())
                report.entry_errors.append((name, list(p.shape), entry))
    finally:
        network.freeze_stats(False)
    logger.info(
        "gradient check: max relative error %.3g, per entry %.3g (tolerance %g)",
        report.max_error,
        report.max_entry_error,
        tolerance,
    )
    return report
