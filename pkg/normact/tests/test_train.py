import json
import os

import numpy
import pytest

from normact import optim, presets, tensor
from normact import train as training
from normact.network import NetworkSpec, build_network, load_checkpoint
from normact.validate import ConfigError, ContractError, DataError, DivergenceError

CONFIG_DIR = os.path.join(os.path.dirname(__file__), "..", "..", "configs")


def small_config(**kwargs):
    values = {
        "network": {
            "input_shape": [16],
            "layers": [
                {"type": "dense", "units": 32},
                {"type": "activation", "kind": "relu", "mode": "normalized"},
                {"type": "dense", "units": 4},
            ],
        },
        "dataset": "synthetic-gaussian",
        "data": {"n": 256, "n_val": 64, "classes": 4, "separation": 6.0},
        "optimizer": {"name": "sgd", "lr": 0.05, "momentum": 0.9},
        "epochs": 2,
        "batch_size": 32,
        "log_interval": 3,
        "seed": 0,
    }
    values.update(kwargs)
    return training.TrainConfig.from_dict(values)


def mlp_spec(kind, mode="normalized"):
    return NetworkSpec.from_dict(presets.mlp(kind, mode, input_shape=(6,), hidden=(8, 8), classes=3))


@pytest.mark.parametrize(
    "change",
    [
        {"epochs": 0},
        {"batch_size": 1},
        {"log_interval": 0},
        {"dataset": "cifar"},
        {"optimizer": {"name": "rmsprop"}},
        {"normact": {"gamma": 1.0}},
        {"network": "no_such_preset"},
        {"learning_rate": 0.1},
    ],
)
def test_config_errors(change):
    with pytest.raises(ConfigError):
        small_config(**change)


def test_config_needs_network():
    with pytest.raises(ConfigError):
        training.TrainConfig.from_dict({"epochs": 1})


def test_config_from_json(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(small_config().to_dict()))
    assert training.TrainConfig.from_json(path) == small_config()

    path.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        training.TrainConfig.from_json(path)
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        training.TrainConfig.from_json(path)
    with pytest.raises(ConfigError):
        training.TrainConfig.from_json(tmp_path / "missing.json")


def test_bad_optimizer_options():
    config = small_config(optimizer={"name": "sgd", "nesterov": True})
    with pytest.raises(ConfigError):
        training.make_optimizer(config, [])


@pytest.mark.parametrize("name", sorted(os.listdir(CONFIG_DIR)))
def test_shipped_configs_build(name):
    config = training.TrainConfig.resolve(os.path.join(CONFIG_DIR, name))
    build_network(config.network_spec(), seed=config.seed, normact_options=config.normact)


@pytest.mark.parametrize("name", sorted(presets.Preset))
def test_presets_resolve(name):
    config = training.TrainConfig.resolve(name)
    assert config.network in presets.NETWORKS
    config.network_spec().validate()


def test_mnist_without_directory(monkeypatch):
    monkeypatch.delenv("NORMACT_MNIST_DIR", raising=False)
    with pytest.raises(DataError):
        training.load_datasets(training.TrainConfig.resolve("mnist_mlp_relu"))


def test_synthetic_datasets_follow_input_shape():
    train_set, val_set = training.load_datasets(small_config(train_limit=100))
    assert train_set.inputs.shape == (100, 16)
    assert val_set.inputs.shape == (64, 16)


def test_metrics_row_values():
    row = training.MetricsRow(0, 5, 0.5, 0.25, None, 1.0, 0.125, [(1.5, 0.5, 1.0, 0.0), (0.5, 0.5, None, None)])
    assert training.MetricsRow.header(2)[7:11] == ["rho_0", "rho_prime_0", "lambda_0", "alpha_0"]
    assert row.values() == ["0", "5", "0.5", "0.25", "", "1", "0.125", "1.5", "0.5", "1", "0", "0.5", "0.5", "", ""]


def test_train_rows_and_csv(tmp_path):
    metrics = tmp_path / "out" / "metrics.csv"
    result = training.train(small_config(metrics=str(metrics)), progress=False)

    assert [r.iteration for r in result.rows] == [3, 6, 8, 9, 12, 15, 16]
    assert [r.epoch for r in result.rows] == [0, 0, 0, 1, 1, 1, 1]
    assert [r.val_accuracy is None for r in result.rows] == [True, True, False, True, True, True, False]
    assert result.final.val_accuracy > 0.7

    rows = training.read_metrics(metrics)
    assert len(rows) == 7
    for row, written in zip(result.rows, rows):
        assert written["iteration"] == row.iteration
        assert written["score"] == row.score
        assert training.score_from_row(written, 1) == pytest.approx(row.score, rel=1e-12)
        lam = written["lambda_0"]
        assert lam is not None and lam > 0


def test_plain_layers_leave_lambda_empty(tmp_path):
    metrics = tmp_path / "plain.csv"
    config = small_config(network="small_relu", data={"n": 128, "n_val": 32, "classes": 4}, epochs=1, metrics=str(metrics))
    training.train(config, progress=False)
    rows = training.read_metrics(metrics)
    assert rows[-1]["lambda_0"] is None
    assert rows[-1]["alpha_1"] is None
    assert rows[-1]["rho_0"] > 0


def test_training_is_deterministic(tmp_path):
    first, second = tmp_path / "a.csv", tmp_path / "b.csv"
    training.train(small_config(metrics=str(first)), progress=False)
    training.train(small_config(metrics=str(second)), progress=False)
    assert first.read_bytes() == second.read_bytes()


def test_adamw_with_schedule_and_checkpoint(tmp_path):
    path = tmp_path / "model.ckpt"
    config = small_config(
        optimizer={"name": "adamw", "lr": 0.01, "weight_decay": 0.01},
        schedule={"factor": 0.5, "every": 1},
        checkpoint=str(path),
    )
    result = training.train(config, progress=False)
    restored = load_checkpoint(build_network(config.network_spec(), seed=5), path)
    for p, q in zip(result.network.parameters(), restored.parameters()):
        numpy.testing.assert_array_equal(p.data, q.data)


def test_divergence_is_reported():
    linear = presets.mlp("identity", input_shape=(16,), hidden=(32,), classes=4)
    config = small_config(network=linear, optimizer={"name": "sgd", "lr": 1e6, "momentum": 0.9})
    with numpy.errstate(all="ignore"), pytest.raises(DivergenceError) as info:
        training.train(config, progress=False)
    assert info.value.iteration >= 1


def test_evaluate_restores_mode():
    network = build_network(mlp_spec("relu"), seed=0)
    dataset = training.data.synthetic_gaussian_dataset(20, 6, 3)
    accuracy = training.evaluate(network, dataset)
    assert 0.0 <= accuracy <= 1.0
    assert all(m.training for m in network.modules())


def test_grad_check_linear_network():
    network = build_network(mlp_spec("identity", "plain"), seed=0)
    rng = numpy.random.default_rng(0)
    x = rng.normal(size=(4, 6))
    weights = tensor.Tensor(rng.normal(size=(4, 3)))
    report = training.grad_check(
        network, (x, None), loss_fn=lambda out, _: (out * weights).sum(), steps=(1e-2,), entry_step=1e-2
    )
    assert report.passed
    assert report.max_error < 1e-9
    assert report.max_entry_error < 1e-6
    assert len(report.errors) == len(report.entry_errors) == 6
    assert [e[:2] for e in report.errors] == [e[:2] for e in report.entry_errors]


def test_grad_check_refuses_large_networks():
    network = build_network(mlp_spec("identity", "plain"), seed=0)
    batch = numpy.zeros((2, 6)), numpy.zeros(2, dtype=int)
    with pytest.raises(ContractError, match="at most 50 parameters"):
        training.grad_check(network, batch, max_params=50)


@pytest.mark.parametrize("kind", ["relu", "swish", "tanh", "leaky_relu"])
def test_grad_check_normalized_mlp(kind):
    network = build_network(mlp_spec(kind), seed=1)
    rng = numpy.random.default_rng(1)
    batch = rng.normal(size=(8, 6)), rng.integers(0, 3, size=8)
    report = training.grad_check(network, batch, tolerance=1e-4)
    assert report.passed, report.errors
    assert len(report.errors) == len(report.entry_errors) == 8
    assert all(numpy.isfinite(e) for _, _, e in report.entry_errors)
    assert not any(layer.frozen for layer in network.normact_layers())


@pytest.mark.slow
@pytest.mark.skipif("NORMACT_MNIST_DIR" not in os.environ, reason="needs the MNIST IDX files")
def test_mnist_mlp_learns():
    config = training.TrainConfig.resolve("mnist_mlp_nrelu")
    values = config.to_dict()
    values.update(epochs=1, train_limit=5000)
    result = training.train(training.TrainConfig.from_dict(values), progress=False)
    assert result.final.val_accuracy > 0.85


def test_normalized_relu_scores_below_plain():
    rows = {}
    for mode in ("plain", "normalized"):
        network = presets.mlp("relu", mode, input_shape=(16,), hidden=(32, 32), classes=4)
        rows[mode] = training.train(small_config(network=network), progress=False).rows
    assert len(rows["plain"]) == len(rows["normalized"])
    for plain, normalized in zip(rows["plain"], rows["normalized"]):
        assert normalized.iteration == plain.iteration
        assert normalized.score < plain.score


def test_plain_baseline_matches_reference_loop():
    config = small_config(network=presets.mlp("relu", input_shape=(16,), hidden=(32, 32), classes=4))
    result = training.train(config, progress=False)

    train_set, _ = training.load_datasets(config)
    network = build_network(config.network_spec(), seed=config.seed)
    opt = optim.SGD(network.parameters(), lr=0.05, momentum=0.9)
    rng = numpy.random.default_rng(config.seed + 1)
    for _ in range(config.epochs):
        loss_sum, seen = 0.0, 0
        for x, y in train_set.batches(config.batch_size, rng=rng):
            network.zero_grad()
            loss = tensor.cross_entropy_loss(network(x), y)
            tensor.backward(loss)
            opt.step()
            loss_sum += loss.item() * len(y)
            seen += len(y)

    assert result.final.train_loss == loss_sum / seen
    for p, q in zip(result.network.parameters(), network.parameters()):
        numpy.testing.assert_array_equal(p.data, q.data)


MNIST_SEEDS = (0, 1, 2)


@pytest.fixture(scope="module")
def mnist_runs():
    if "NORMACT_MNIST_DIR" not in os.environ:
        pytest.skip("needs the MNIST IDX files")
    runs = {}
    for name in ("mnist_mlp_relu", "mnist_mlp_nrelu"):
        for seed in MNIST_SEEDS:
            values = training.TrainConfig.resolve(name).to_dict()
            values["seed"] = seed
            config = training.TrainConfig.from_dict(values)
            train_set, _ = training.load_datasets(config)
            runs[name, seed] = training.train(config, progress=False), train_set
    return runs


def epoch_rows(result):
    return [row for row in result.rows if row.val_accuracy is not None]


@pytest.mark.slow
def test_mnist_nrelu_reaches_98_percent(mnist_runs):
    for seed in MNIST_SEEDS:
        result, _ = mnist_runs["mnist_mlp_nrelu", seed]
        assert len(epoch_rows(result)) == 15
        assert result.final.val_accuracy >= 0.98


@pytest.mark.slow
def test_mnist_nrelu_scores_below_relu(mnist_runs):
    def median_scores(name):
        scores = [[row.score for row in epoch_rows(mnist_runs[name, seed][0])] for seed in MNIST_SEEDS]
        return numpy.median(scores, axis=0)

    assert numpy.all(median_scores("mnist_mlp_nrelu") <= median_scores("mnist_mlp_relu"))


@pytest.mark.slow
def test_mnist_nrelu_limits_weight_mean_drift(mnist_runs):
    def median_drift(name):
        return numpy.median([mnist_runs[name, seed][0].final.weight_mean for seed in MNIST_SEEDS])

    assert median_drift("mnist_mlp_nrelu") <= median_drift("mnist_mlp_relu")


@pytest.mark.slow
def test_mnist_eval_mode_matches_running_accuracy(mnist_runs):
    for (name, seed), (result, train_set) in mnist_runs.items():
        accuracy = training.evaluate(result.network, train_set)
        assert abs(accuracy - result.final.train_accuracy) <= 0.02, (name, seed)
