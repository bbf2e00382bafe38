import matplotlib

matplotlib.use("agg")
import pytest
from matplotlib import pyplot

from normact import analysis, viz
from normact.train import MetricsRow


@pytest.fixture(autouse=True)
def close_figures():
    yield
    pyplot.close("all")


def test_plot_rscore():
    rows = analysis.r_score_sweep(["relu", "tanh", "identity"], [0.5, 1.0, 2.0])
    ax = viz.plot_rscore(rows)
    labels = [line.get_label() for line in ax.get_lines() if not line.get_label().startswith("_")]
    assert labels == ["relu", "tanh", "identity"]
    relu = ax.get_lines()[0]
    assert list(relu.get_xdata()) == [0.5, 1.0, 2.0]
    assert ax.get_ylabel() == "R"


def test_plot_rscore_on_given_axes():
    fig, ax = pyplot.subplots()
    out = viz.plot_rscore([{"activation": "relu", "sigma": 1.0, "r": -0.38}], ax=ax, linewidth=3)
    assert out is ax
    assert ax.get_lines()[0].get_linewidth() == 3


def test_plot_trace_skips_empty_cells():
    rows = [
        MetricsRow(0, 10, 1.0, 0.5, None, 2.0, 0.1, []),
        MetricsRow(0, 20, 0.8, 0.6, 0.7, 1.5, 0.1, []),
    ]
    dict_rows = [{"iteration": 10.0, "val_accuracy": None}, {"iteration": 20.0, "val_accuracy": 0.7}]
    ax = viz.plot_trace({"objects": rows, "csv": dict_rows}, column="val_accuracy")
    objects, csv_line = ax.get_lines()
    assert list(objects.get_xdata()) == [20]
    assert list(csv_line.get_xdata()) == [20.0]
    assert ax.get_ylabel() == "val_accuracy"


def test_plot_trace_score():
    rows = [MetricsRow(0, i, 1.0, 0.5, None, 1.0 / i, 0.1, []) for i in (1, 2, 4)]
    ax = viz.plot_trace({"run": rows})
    (line,) = ax.get_lines()
    assert list(line.get_ydata()) == [1.0, 0.5, 0.25]


def test_bad_axes():
    with pytest.raises(ValueError):
        viz.plot_rscore([], ax="not an axes")
