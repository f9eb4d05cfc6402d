# Copyright 2019 Xanadu Quantum Technologies Inc.

# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at

#     http://www.apache.org/licenses/LICENSE-2.0

# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
r"""
Datasets and transforms
=======================

**Module name:** :mod:`cflbench.fl.data`

.. currentmodule:: cflbench.fl.data

This module loads image classification datasets stored in the IDX format used by MNIST,
Fashion-MNIST and KMNIST, and provides the image transforms and label permutations that
define concept shift and feature skew between client classes.

Loading data
------------

.. autosummary::
    Dataset
    load_idx
    load_split

Pixels are scaled to ``[0, 1]`` and stored as 64-bit floats. Both gzip-compressed and raw
files are accepted. A truncated file, a wrong magic number or a label count that differs from
the image count raises :class:`~.IngestionError` naming the offending file.

Transforms
----------

Image transforms are named by a short descriptor string:

+-----------------+----------------------------------------------------------------+
| ``identity``    | image unchanged                                                |
+-----------------+----------------------------------------------------------------+
| ``rot90``,      | counter-clockwise rotation by 90, 180 or 270 degrees           |
| ``rot180``,     |                                                                |
| ``rot270``      |                                                                |
+-----------------+----------------------------------------------------------------+
| ``dilate``,     | grey-level dilation with a 2x2 structuring element, applied    |
| ``dilate2``     | once or twice                                                  |
+-----------------+----------------------------------------------------------------+
| ``erode``       | grey-level erosion with a 2x2 structuring element              |
+-----------------+----------------------------------------------------------------+
| ``invert``      | pixel values mapped to ``1 - x``                               |
+-----------------+----------------------------------------------------------------+
| ``zoom``        | central crop of 75% of each side, upscaled back with nearest   |
|                 | neighbour interpolation                                        |
+-----------------+----------------------------------------------------------------+
| ``invert_zoom`` | ``invert`` followed by ``zoom``                                |
+-----------------+----------------------------------------------------------------+

.. autosummary::
    apply_transform
    apply_transform_batch
    apply_label_swap
    swap_table

Code details
^^^^^^^^^^^^
"""
import dataclasses
import gzip
import logging
import os
import struct
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from cflbench.exceptions import ConfigurationError, DataError, IngestionError

log = logging.getLogger(__name__)

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049

ZOOM_FRACTION = 0.75
"""float: side fraction kept by the ``zoom`` crop"""


@dataclasses.dataclass(frozen=True)
class Dataset:
    """Labelled greyscale images.

    Args:
        images (array): pixel values in ``[0, 1]`` with shape ``(n, height, width)``
        labels (array[int]): class index per image
        num_classes (int): number of label values
        name (str): dataset name used in records and reports
    """

    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    name: str = "dataset"

    def __post_init__(self):
        if self.images.ndim != 3:
            raise DataError("Images must have shape (n, height, width)")
        if self.labels.shape != (self.images.shape[0],):
            raise DataError(
                "{} images but {} labels".format(self.images.shape[0], self.labels.shape[0])
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DataError("Labels must lie in [0, {})".format(self.num_classes))

    def __len__(self):
        return self.labels.shape[0]

    @property
    def image_shape(self) -> Tuple[int, int]:
        """tuple[int, int]: height and width of every image"""
        return self.images.shape[1:]

    def indices_by_label(self) -> list:
        """Indices of each label, in ascending order.

        Returns:
            list[array]: entry ``l`` holds the indices of the samples labelled ``l``
        """
        return [np.flatnonzero(self.labels == l) for l in range(self.num_classes)]


def _read(path: str) -> bytes:
    opener = gzip.open if str(path).endswith(".gz") else open
    try:
        with opener(path, "rb") as f:
            return f.read()
    except FileNotFoundError:
        raise IngestionError("Dataset file {} does not exist".format(path)) from None
    except (OSError, EOFError) as e:
        raise IngestionError("Could not read {}: {}".format(path, e)) from None


def _parse_images(path: str) -> np.ndarray:
    # big endian: magic, count, rows, cols, then uint8 pixels row-wise
    raw = _read(path)
    if len(raw) < 16:
        raise IngestionError("{} is truncated: header incomplete".format(path))

    magic, count, rows, cols = struct.unpack(">IIII", raw[:16])
    if magic != IMAGE_MAGIC:
        raise IngestionError("Magic number mismatch in image file {} ({})".format(path, magic))

    expected = count * rows * cols
    if len(raw) - 16 < expected:
        raise IngestionError(
            "{} is truncated: expected {} pixel bytes, found {}".format(path, expected, len(raw) - 16)
        )

    pixels = np.frombuffer(raw, dtype=np.uint8, count=expected, offset=16)
    return pixels.reshape(count, rows, cols).astype(np.float64) / 255.0


def _parse_labels(path: str) -> np.ndarray:
    # big endian: magic, count, then uint8 labels
    raw = _read(path)
    if len(raw) < 8:
        raise IngestionError("{} is truncated: header incomplete".format(path))

    magic, count = struct.unpack(">II", raw[:8])
    if magic != LABEL_MAGIC:
        raise IngestionError("Magic number mismatch in label file {} ({})".format(path, magic))
    if len(raw) - 8 < count:
        raise IngestionError(
            "{} is truncated: expected {} labels, found {}".format(path, count, len(raw) - 8)
        )

    return np.frombuffer(raw, dtype=np.uint8, count=count, offset=8).astype(np.int64)


def load_idx(
    images_path: str, labels_path: str, name: Optional[str] = None, num_classes: Optional[int] = None
) -> Dataset:
    """Read an IDX image file and its label file.

    **Example usage:**

    >>> train = load_idx("mnist/train-images-idx3-ubyte", "mnist/train-labels-idx1-ubyte")
    >>> len(train), train.image_shape
    (60000, (28, 28))

    Args:
        images_path (str): path of the ``idx3`` image file, optionally gzipped
        labels_path (str): path of the ``idx1`` label file, optionally gzipped
        name (str): dataset name; defaults to the parent directory name
        num_classes (int): number of classes; defaults to the largest label plus one

    Returns:
        Dataset: the loaded data
    """
    images = _parse_images(images_path)
    labels = _parse_labels(labels_path)

    if labels.shape[0] != images.shape[0]:
        raise IngestionError(
            "{} holds {} labels but {} holds {} images".format(
                labels_path, labels.shape[0], images_path, images.shape[0]
            )
        )

    if num_classes is None:
        num_classes = int(labels.max()) + 1 if labels.size else 0
    if name is None:
        name = os.path.basename(os.path.dirname(os.path.abspath(images_path))) or "dataset"

    log.debug("Loaded %d images of shape %s from %s", len(labels), images.shape[1:], images_path)
    return Dataset(images, labels, num_classes, name)


def load_split(directory: str, images_file: str, labels_file: str, name: Optional[str] = None) -> Dataset:
    """Load one split stored as a file pair inside ``directory``.

    A gzipped variant with a ``.gz`` suffix is used when the plain file is absent.

    Args:
        directory (str): dataset directory
        images_file (str): image file name
        labels_file (str): label file name
        name (str): dataset name; defaults to the directory name

    Returns:
        Dataset: the loaded split
    """

    def resolve(filename):
        path = os.path.join(directory, filename)
        if not os.path.exists(path) and os.path.exists(path + ".gz"):
            return path + ".gz"
        return path

    name = name or os.path.basename(os.path.normpath(directory))
    return load_idx(resolve(images_file), resolve(labels_file), name=name)


def _zoom(images: np.ndarray) -> np.ndarray:
    _, h, w = images.shape
    ch, cw = int(round(ZOOM_FRACTION * h)), int(round(ZOOM_FRACTION * w))
    top, left = (h - ch) // 2, (w - cw) // 2
    crop = images[:, top : top + ch, left : left + cw]
    out = ndimage.zoom(crop, (1, h / ch, w / cw), order=0, mode="nearest", grid_mode=True)
    return out[:, :h, :w]


def _dilate(images: np.ndarray) -> np.ndarray:
    return ndimage.grey_dilation(images, size=(1, 2, 2), mode="nearest")


def _erode(images: np.ndarray) -> np.ndarray:
    return ndimage.grey_erosion(images, size=(1, 2, 2), mode="nearest")


TRANSFORMS = {
    "identity": lambda x: x.copy(),
    "rot90": lambda x: np.rot90(x, 1, axes=(1, 2)).copy(),
    "rot180": lambda x: np.rot90(x, 2, axes=(1, 2)).copy(),
    "rot270": lambda x: np.rot90(x, 3, axes=(1, 2)).copy(),
    "dilate": _dilate,
    "dilate2": lambda x: _dilate(_dilate(x)),
    "erode": _erode,
    "invert": lambda x: 1.0 - x,
    "zoom": _zoom,
    "invert_zoom": lambda x: _zoom(1.0 - x),
}
"""dict[str, callable]: batch transform for each descriptor"""


def apply_transform_batch(descriptor: str, images: np.ndarray) -> np.ndarray:
    """Apply a transform to a stack of square images.

    Args:
        descriptor (str): a key of :data:`TRANSFORMS`
        images (array): images with shape ``(n, side, side)``

    Returns:
        array: transformed images with the same shape
    """
    if descriptor not in TRANSFORMS:
        raise ConfigurationError("Unknown image transform '{}'".format(descriptor))

    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 3 or images.shape[1] != images.shape[2]:
        raise ConfigurationError("Transforms need square images, got shape {}".format(images.shape[1:]))

    out = TRANSFORMS[descriptor](images)
    if out.shape != images.shape:
        raise RuntimeError("Transform '{}' changed the image shape".format(descriptor))
    return out


def apply_transform(descriptor: str, image: np.ndarray) -> np.ndarray:
    """Apply a transform to one square image.

    **Example usage:**

    >>> image = np.zeros((4, 4))
    >>> image[0, 3] = 1.0
    >>> np.argwhere(apply_transform("rot90", image))
    array([[0, 0]])

    Args:
        descriptor (str): a key of :data:`TRANSFORMS`
        image (array): image with shape ``(side, side)``

    Returns:
        array: transformed image
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ConfigurationError("Expected a single image, got shape {}".format(image.shape))
    return apply_transform_batch(descriptor, image[np.newaxis])[0]


def swap_table(pairs: Sequence[Tuple[int, int]], num_classes: int) -> Tuple[int, ...]:
    """Permutation built from transpositions applied in order.

    **Example usage:**

    >>> swap_table([(0, 1), (2, 3)], 5)
    (1, 0, 3, 2, 4)

    Args:
        pairs (Sequence[tuple[int, int]]): labels to exchange
        num_classes (int): number of labels

    Returns:
        tuple[int]: entry ``l`` is the new label of ``l``
    """
    table = list(range(num_classes))
    for a, b in pairs:
        if not (0 <= a < num_classes and 0 <= b < num_classes):
            raise ConfigurationError("Swap ({}, {}) outside [0, {})".format(a, b, num_classes))
        ia, ib = table.index(a), table.index(b)
        table[ia], table[ib] = b, a
    return tuple(table)


def apply_label_swap(table: Sequence[int], labels: np.ndarray) -> np.ndarray:
    """Relabel samples through a permutation of the label set.

    Args:
        table (Sequence[int]): permutation; entry ``l`` is the new label of ``l``
        labels (array[int]): labels to map

    Returns:
        array[int]: mapped labels
    """
    table = np.asarray(table, dtype=np.int64)
    if not np.array_equal(np.sort(table), np.arange(table.size)):
        raise ConfigurationError("Label swap table {} is not a permutation".format(tuple(table)))

    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= table.size):
        raise DataError("Labels must lie in [0, {})".format(table.size))
    return table[labels]
