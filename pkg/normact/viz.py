import numpy

from . import validate


def plot_rscore(rows, ax=None, **kwargs):
    """Plots R-score against sigma, one line per activation.

    Parameters
    ----------
    rows : list of dict
        ``{"activation", "sigma", "r"}`` rows as produced by
        :func:`normact.analysis.r_score_sweep`
    ax : matplotlib.axes.Axes, optional (default = None)
        the axes artist for plotting. If `None` is given, a new figure
        will be created.
    kwargs : dict, optional
        all remaining keyword arguments are passed into the `plot()` command

    Returns
    -------
    ax : matplotlib.axes.Axes

    """
    _, axes = validate.axes_object(ax)
    names = []
    for row in rows:
        if row["activation"] not in names:
            names.append(row["activation"])
    for name in names:
        points = sorted((r["sigma"], r["r"]) for r in rows if r["activation"] == name)
        sigma, r = numpy.array(points).T
        axes.plot(sigma, r, label=name, **kwargs)
    axes.axhline(0.0, color="0.5", linewidth=0.8, linestyle="--")
    axes.set_xlabel("sigma")
    axes.set_ylabel("R")
    axes.legend(loc="best")
    return axes


def plot_trace(runs, column="score", ax=None, **kwargs):
    """Plots one metrics column against iteration.

    Parameters
    ----------
    runs : dict
        label -> list of metrics rows (:class:`normact.train.MetricsRow`
        or dicts from :func:`normact.train.read_metrics`)
    column : str, optional (default = "score")
        rows where the column is empty are skipped
    ax : matplotlib.axes.Axes, optional (default = None)

    Returns
    -------
    ax : matplotlib.axes.Axes

    """
    _, axes = validate.axes_object(ax)
    for label, rows in runs.items():
        x, y = [], []
        for row in rows:
            value = row.get(column) if isinstance(row, dict) else getattr(row, column)
            if value is None:
                continue
            iteration = row["iteration"] if isinstance(row, dict) else row.iteration
            x.append(iteration)
            y.append(value)
        axes.plot(x, y, label=label, **kwargs)
    axes.set_xlabel("iteration")
    axes.set_ylabel(column)
    axes.legend(loc="best")
    return axes
