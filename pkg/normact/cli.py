import csv
import functools
import logging
import sys

import click
import numpy

from . import activations, analysis, train, validate
from .network import build_network

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DIVERGENCE = 4


def _exit_codes(command):
    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except validate.ConfigError as e:
            click.echo("config error: {}".format(e), err=True)
            sys.exit(EXIT_CONFIG)
        except validate.DataError as e:
            click.echo("data error: {}".format(e), err=True)
            sys.exit(EXIT_DATA)
        except validate.DivergenceError as e:
            click.echo(str(e), err=True)
            sys.exit(EXIT_DIVERGENCE)

    return wrapper


def _save_figure(ax, path):
    ax.figure.savefig(path, dpi=150, bbox_inches="tight")
    click.echo("figure written to {}".format(path), err=True)


def _float_list(ctx, param, value):
    try:
        return [float(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter("expected a comma separated list of numbers")


@click.group()
@click.option("-v", "--verbose", count=True, help="-v for progress messages, -vv for debugging.")
def main(verbose):
    """Normalized activation functions: analysis and training experiments."""
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--activation", "kinds", multiple=True, help="Activation name, repeatable. Default: all.")
@click.option("--sigma-start", default=0.1, show_default=True)
@click.option("--sigma-end", default=4.0, show_default=True)
@click.option("--sigma-step", default=0.1, show_default=True)
@click.option("--nodes", default=2048, show_default=True, help="Quadrature nodes.")
@click.option("--out", type=click.Path(dir_okay=False), help="CSV file; stdout if omitted.")
@click.option("--plot", type=click.Path(dir_okay=False), help="Write an R vs sigma figure.")
@_exit_codes
def rscore(kinds, sigma_start, sigma_end, sigma_step, nodes, out, plot):
    """R-score of activations over a range of input scales."""
    if sigma_start <= 0 or sigma_end < sigma_start or sigma_step <= 0:
        raise click.BadParameter("need 0 < sigma-start <= sigma-end and sigma-step > 0")
    try:
        kinds = [activations.ActivationKind.parse(k) for k in kinds] or list(activations.CATALOG)
    except ValueError as e:
        raise click.BadParameter(str(e), param_hint="--activation")
    count = int(numpy.floor((sigma_end - sigma_start) / sigma_step + 1e-9)) + 1
    sigmas = sigma_start + sigma_step * numpy.arange(count)
    rows = analysis.r_score_sweep(kinds, sigmas, analysis.QuadratureSpec(nodes=nodes))

    fh = open(out, "w", newline="", encoding="utf8") if out else sys.stdout
    try:
        writer = csv.writer(fh)
        writer.writerow(["activation", "sigma", "r"])
        for row in rows:
            writer.writerow([row["activation"], "%.17g" % row["sigma"], "%.17g" % row["r"]])
    finally:
        if out:
            fh.close()
    if plot:
        from . import viz

        _save_figure(viz.plot_rscore(rows), plot)


@main.command(name="train")
@click.option("--config", "config_path", required=True, help="JSON config file or preset name.")
@click.option("--out", type=click.Path(dir_okay=False), help="Metrics CSV (overrides the config).")
@click.option("--epochs", type=int, help="Override the number of epochs.")
@click.option("--seed", type=int, help="Override the seed.")
@click.option("--plot", type=click.Path(dir_okay=False), help="Write a Score trace figure.")
@click.option("--progress/--no-progress", default=True)
@_exit_codes
def train_command(config_path, out, epochs, seed, plot, progress):
    """Train a network and write its metrics."""
    config = train.TrainConfig.resolve(config_path)
    overrides = {k: v for k, v in (("metrics", out), ("epochs", epochs), ("seed", seed)) if v is not None}
    if overrides:
        values = config.to_dict()
        values.update(overrides)
        config = train.TrainConfig.from_dict(values)
    result = train.train(config, progress=progress)
    final = result.final
    click.echo(
        "epoch {} iteration {}: loss {:.4f}, val accuracy {:.4f}, score {:.4f}".format(
            final.epoch, final.iteration, final.train_loss, final.val_accuracy, final.score
        )
    )
    if plot:
        from . import viz

        _save_figure(viz.plot_trace({config_path: result.rows}, "score"), plot)


@main.command(name="grad-check")
@click.option("--config", "config_path", required=True, help="JSON config file or preset name.")
@click.option("--batch-size", default=8, show_default=True)
@click.option("--tolerance", default=1e-4, show_default=True)
@_exit_codes
def grad_check(config_path, batch_size, tolerance):
    """Compare backprop gradients of a config's network with finite differences."""
    config = train.TrainConfig.resolve(config_path)
    network = build_network(config.network_spec(), seed=config.seed, normact_options=config.normact)
    train_set, _ = train.load_datasets(config)
    x, y = train_set.first_batch(batch_size, rng=config.seed)
    try:
        report = train.grad_check(network, (x, y), tolerance=tolerance)
    except validate.ContractError as e:
        raise validate.ConfigError(str(e)) from e
    for (name, shape, error), (_, _, entry) in zip(report.errors, report.entry_errors):
        click.echo("{:<24} {:<16} {:.3e} {:.3e}".format(name, str(shape), error, entry))
    click.echo("max entry error {:.3e}".format(report.max_entry_error))
    click.echo("max relative error {:.3e}: {}".format(report.max_error, "PASS" if report.passed else "FAIL"))
    if not report.passed:
        sys.exit(1)


@main.command(name="check-proposition")
@click.option("--kmax", default=5, show_default=True)
@click.option("--sigma", "sigmas", default="0.7,1.0,1.5", show_default=True, callback=_float_list)
def check_proposition(kmax, sigmas):
    """Hermite orthogonality and the linearity scan of the activation catalog."""
    ok = True
    for sigma in sigmas:
        report = analysis.hermite_orthogonality_check(kmax, sigma)
        click.echo(
            "orthogonality sigma={:g}: {} integrals, {} failures".format(
                sigma, len(report.entries), len(report.failures)
            )
        )
        for integral, k, j, value, expected, error in report.failures:
            click.echo("  {} k={} j={}: {:.12g} vs {:.12g} (error {:.2e})".format(integral, k, j, value, expected, error))
        ok = ok and report.passed
    scan = analysis.linearity_scan(sigmas=sigmas)
    for row in scan.rows:
        click.echo(
            "{:<16} sigma={:<5g} R={: .6e} {}".format(
                row["activation"], row["sigma"], row["r"], "ok" if row["ok"] else "FAIL"
            )
        )
    ok = ok and scan.passed
    click.echo("PASS" if ok else "FAIL")
    if not ok:
        sys.exit(1)


@main.command(name="profile-variance")
@click.option("--config", "config_path", required=True, help="JSON config file or preset name.")
@click.option("--batch-size", default=256, show_default=True)
@_exit_codes
def profile_variance(config_path, batch_size):
    """Per-layer gradient variance of a freshly built network on one batch."""
    config = train.TrainConfig.resolve(config_path)
    network = build_network(config.network_spec(), seed=config.seed, normact_options=config.normact)
    train_set, _ = train.load_datasets(config)
    batch = train_set.first_batch(batch_size, rng=config.seed)
    profile = analysis.gradient_variance_profile(network, batch)
    for i, variance in enumerate(profile):
        click.echo("{}\t{:.6e}".format(i, variance))
    if min(profile) > 0:
        click.echo("max/min ratio {:.4g}".format(max(profile) / min(profile)))


if __name__ == "__main__":
    main()
