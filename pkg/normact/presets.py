"""
These are pre-built experiment configurations as dictionaries, **kwargs
for :meth:`normact.train.TrainConfig.from_dict`.
"""


def mlp(kind, mode="plain", input_shape=(784,), hidden=(256, 256), classes=10):
    """Dense network ``input - hidden... - classes`` with one activation per hidden layer."""
    layers = []
    for units in hidden:
        layers.append({"type": "dense", "units": units})
        layers.append({"type": "activation", "kind": kind, "mode": mode})
    layers.append({"type": "dense", "units": classes})
    return {"input_shape": list(input_shape), "layers": layers}


def lenet(kind, mode="plain"):
    """Two convolutional super-layers and two dense layers on 28x28 inputs.

    Normalized variants use batch normalization without the affine
    transform and keep a buffer normalization before the head.
    """
    affine = mode != "normalized"

    def super_layer(channels, padding):
        return [
            {"type": "conv2d", "channels": channels, "kernel": 5, "padding": padding},
            {"type": "batchnorm", "affine": affine},
            {"type": "activation", "kind": kind, "mode": mode},
            {"type": "maxpool", "size": 2},
        ]

    return {
        "input_shape": [1, 28, 28],
        "layers": super_layer(6, 2)
        + super_layer(16, 0)
        + [
            {"type": "flatten"},
            {"type": "dense", "units": 120},
            {"type": "activation", "kind": kind, "mode": mode},
            {"type": "dense", "units": 10},
        ],
        "buffer_bn": mode == "normalized",
    }


_MNIST = {
    "dataset": "mnist",
    "optimizer": {"name": "sgd", "lr": 0.01, "momentum": 0.9},
    "epochs": 15,
    "batch_size": 64,
    "seed": 0,
}

_SYNTHETIC = {
    "dataset": "synthetic-gaussian",
    "data": {"n": 2048, "n_val": 512, "classes": 4, "separation": 3.0},
    "optimizer": {"name": "sgd", "lr": 0.01, "momentum": 0.9},
    "epochs": 5,
    "batch_size": 64,
    "seed": 0,
}


def _with(base, **kwargs):
    config = dict(base)
    config.update(kwargs)
    return config


NETWORKS = dict(
    mlp_relu=mlp("relu"),
    mlp_nrelu=mlp("relu", "normalized"),
    mlp_relu_gpn=mlp("relu", "gpn"),
    mlp_swish=mlp("swish"),
    mlp_nswish=mlp("swish", "normalized"),
    mlp_tanh=mlp("tanh"),
    mlp_ntanh=mlp("tanh", "normalized"),
    lenet_relu=lenet("relu"),
    lenet_nrelu=lenet("relu", "normalized"),
    small_relu=mlp("relu", input_shape=(32,), hidden=(64, 64), classes=4),
    small_nrelu=mlp("relu", "normalized", input_shape=(32,), hidden=(64, 64), classes=4),
)


Preset = dict(
    mnist_mlp_relu=_with(_MNIST, network="mlp_relu"),
    mnist_mlp_nrelu=_with(_MNIST, network="mlp_nrelu"),
    mnist_mlp_relu_gpn=_with(_MNIST, network="mlp_relu_gpn"),
    mnist_mlp_swish=_with(_MNIST, network="mlp_swish"),
    mnist_mlp_nswish=_with(_MNIST, network="mlp_nswish"),
    mnist_lenet_relu=_with(_MNIST, network="lenet_relu"),
    mnist_lenet_nrelu=_with(_MNIST, network="lenet_nrelu"),
    synthetic_relu=_with(_SYNTHETIC, network="small_relu"),
    synthetic_nrelu=_with(_SYNTHETIC, network="small_nrelu"),
)
