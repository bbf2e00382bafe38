"""
Datasets: the MNIST IDX reader, synthetic Gaussian blobs and a prefetching
batch iterator.
"""

import dataclasses
import gzip
import logging
import os
import queue
import struct
import threading

import numpy

from .validate import (
    DataError,
    IdxCountMismatchError,
    IdxMagicError,
    IdxTruncatedError,
    positive_int,
)

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclasses.dataclass
class Dataset(object):
    """
    Inputs with integer labels.

    Attributes
    ----------
    inputs : numpy.array
        [N x ...] float64
    labels : numpy.array
        [N] int64

    """

    inputs: numpy.ndarray
    labels: numpy.ndarray

    def __post_init__(self):
        if len(self.inputs) != len(self.labels):
            raise DataError(
                "{} inputs but {} labels".format(len(self.inputs), len(self.labels))
            )

    def __len__(self):
        return len(self.labels)

    @property
    def n_classes(self):
        return int(self.labels.max()) + 1 if len(self) else 0

    def subset(self, n):
        return Dataset(self.inputs[:n], self.labels[:n])

    def batches(self, batch_size, rng=None, shuffle=True, drop_last=True):
        """
        Yield ``(inputs, labels)`` batches.

        The order is drawn from ``rng`` when ``shuffle`` is set, so a seeded
        generator gives the same batches every run. With ``drop_last`` an
        incomplete final batch is skipped.
        """
        batch_size = positive_int(batch_size, "batch_size")
        order = numpy.arange(len(self))
        if shuffle:
            order = numpy.random.default_rng(rng).permutation(len(self))
        stop = len(self) - len(self) % batch_size if drop_last else len(self)
        for start in range(0, stop, batch_size):
            idx = order[start : start + batch_size]
            yield self.inputs[idx], self.labels[idx]

    def n_batches(self, batch_size, drop_last=True):
        if drop_last:
            return len(self) // batch_size
        return -(-len(self) // batch_size)

    def first_batch(self, batch_size, rng=None):
        """The first shuffled batch; raises DataError if no full batch exists."""
        for batch in self.batches(batch_size, rng=rng):
            return batch
        raise DataError(
            "dataset of {} items has no full batch of {}".format(len(self), batch_size)
        )


def _open(path):
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def read_idx(path, magic):
    """
    Read an unsigned-byte IDX file.

    Parameters
    ----------
    path : str
        plain or gzip-compressed file
    magic : int
        expected big-endian magic number

    Returns
    -------
    array : numpy.array of uint8

    Raises
    ------
    IdxMagicError, IdxTruncatedError

    """
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise IdxTruncatedError("{}: file ends inside the header".format(path))
    (found,) = struct.unpack(">I", raw[:4])
    if found != magic:
        raise IdxMagicError(
            "{}: magic number 0x{:08x}, expected 0x{:08x}".format(path, found, magic)
        )
    ndim = found & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxTruncatedError("{}: file ends inside the dimension sizes".format(path))
    dims = struct.unpack(">{}I".format(ndim), raw[4:header])
    count = int(numpy.prod(dims, dtype=numpy.int64))
    if len(raw) - header < count:
        raise IdxTruncatedError(
            "{}: {} data bytes, dimensions {} need {}".format(
                path, len(raw) - header, list(dims), count
            )
        )
    return numpy.frombuffer(raw, dtype=numpy.uint8, count=count, offset=header).reshape(dims)


def load_mnist_idx(images_path, labels_path):
    """
    Load an MNIST image/label pair.

    Returns
    -------
    dataset : Dataset
        inputs [N x 1 x 28 x 28] scaled to [0, 1], labels in 0-9

    Raises
    ------
    IdxMagicError
        if either file carries the wrong magic number
    IdxTruncatedError
        if either file is shorter than its header claims
    IdxCountMismatchError
        if the files disagree on the number of items

    """
    images = read_idx(images_path, IDX_IMAGES_MAGIC)
    labels = read_idx(labels_path, IDX_LABELS_MAGIC)
    if images.shape[0] != labels.shape[0]:
        raise IdxCountMismatchError(
            "{} holds {} images but {} holds {} labels".format(
                images_path, images.shape[0], labels_path, labels.shape[0]
            )
        )
    inputs = images.reshape(images.shape[0], 1, *images.shape[1:]).astype(numpy.float64) / 255.0
    logger.info("loaded %d MNIST items from %s", len(labels), images_path)
    return Dataset(inputs, labels.astype(numpy.int64))


def _find(directory, name):
    for candidate in (name, name + ".gz"):
        path = os.path.join(directory, candidate)
        if os.path.exists(path):
            return path
    raise DataError("no {}[.gz] in {}".format(name, directory))


def load_mnist(directory):
    """The standard (train, test) split from the four IDX files in ``directory``."""
    return tuple(
        load_mnist_idx(_find(directory, images), _find(directory, labels))
        for images, labels in (MNIST_FILES["train"], MNIST_FILES["test"])
    )


def synthetic_gaussian_dataset(n, d_in, classes, seed=0, separation=6.0):
    """
    Class-conditional unit-variance Gaussian blobs.

    Class ``c`` is centred at ``separation`` times a unit vector: the
    ``c``-th coordinate axis when ``classes <= d_in``, otherwise a random
    direction. Labels are balanced and shuffled.

    Parameters
    ----------
    n, d_in, classes : int
        all >= 1
    seed : int, optional (default = 0)
    separation : float, optional (default = 6.0)

    Returns
    -------
    dataset : Dataset
        inputs [n x d_in]

    """
    n = positive_int(n, "n")
    d_in = positive_int(d_in, "d_in")
    classes = positive_int(classes, "classes")
    rng = numpy.random.default_rng(seed)
    if classes <= d_in:
        means = numpy.eye(classes, d_in)
    else:
        means = rng.normal(size=(classes, d_in))
        means /= numpy.linalg.norm(means, axis=1, keepdims=True)
    means *= separation
    labels = rng.permutation(numpy.arange(n) % classes)
    inputs = means[labels] + rng.normal(size=(n, d_in))
    return Dataset(inputs, labels.astype(numpy.int64))


_DONE = object()


def prefetch(iterable, depth=4):
    """
    Iterate ``iterable`` on a helper thread, at most ``depth`` items ahead.

    Items arrive in their original order. An exception raised by the
    producer is re-raised in the consumer.
    """
    depth = positive_int(depth, "depth")
    buffer = queue.Queue(maxsize=depth)
    stop = threading.Event()

    def produce():
        try:
            for item in iterable:
                if stop.is_set():
                    return
                buffer.put(item)
        except BaseException as e:  # noqa: B902
            buffer.put(e)
        else:
            buffer.put(_DONE)

    worker = threading.Thread(target=produce, name="normact-prefetch", daemon=True)
    worker.start()
    try:
        while True:
            item = buffer.get()
            if item is _DONE:
                return
            if isinstance(item, BaseException):
                raise item
            yield item
    finally:
        stop.set()
        while worker.is_alive():
            try:
                buffer.get_nowait()
            except queue.Empty:
                worker.join(timeout=0.01)
