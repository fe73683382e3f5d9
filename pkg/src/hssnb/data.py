"""Hyperspectral cubes: on-disk format, synthetic scenes and preprocessing.

Dataset directory layout::

    header.json   {"width", "height", "bands", "classes",
                   "dtype": "f32le", "label_dtype": "u16le", "name"}
    cube.f32      width*height*bands float32 LE, ordered (row, col, band)
    labels.u16    width*height uint16 LE, row-major, 0 = unlabeled

Converting the public Indian Pines / Pavia / Salinas archives is a matter of
loading the ``.mat`` arrays (e.g. with ``scipy.io.loadmat``), selecting the
bands to keep, and calling :func:`save_dataset`; see the README.
"""

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .tensor import ShapeError

log = logging.getLogger(__name__)

HEADER_FILE = "header.json"
CUBE_FILE = "cube.f32"
LABELS_FILE = "labels.u16"


class DatasetError(Exception):
    """Base class for dataset loading failures."""


class MissingFileError(DatasetError):
    pass


class HeaderError(DatasetError):
    pass


class ByteCountError(DatasetError):
    pass


class LabelRangeError(DatasetError):
    pass


class EmptyDatasetError(DatasetError):
    pass


@dataclass
class HsiCube:
    values: np.ndarray  # (height, width, bands)
    name: str = ""

    def __post_init__(self):
        if self.values.ndim != 3 or min(self.values.shape) < 1:
            raise ShapeError(f"cube must be (height, width, bands), got {self.values.shape}")

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def bands(self):
        return self.values.shape[2]


@dataclass
class LabelMap:
    labels: np.ndarray  # (height, width) ints, 0 = unlabeled
    class_count: int

    @property
    def height(self):
        return self.labels.shape[0]

    @property
    def width(self):
        return self.labels.shape[1]


@dataclass
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (C, S), orthonormal columns
    explained_variance: np.ndarray


@dataclass
class PatchSet:
    patches: np.ndarray  # (M, D, D, S)
    labels: np.ndarray  # (M, N) one-hot
    coords: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))

    def __len__(self):
        return self.patches.shape[0]

    @property
    def class_indices(self):
        """1-based class label of each patch."""
        return self.labels.argmax(axis=1) + 1

    def subset(self, idx):
        return PatchSet(self.patches[idx], self.labels[idx], self.coords[idx])


# ---------------------------------------------------------------- file format


def save_dataset(path, cube, labels, name=None):
    os.makedirs(path, exist_ok=True)
    header = {
        "width": int(cube.width),
        "height": int(cube.height),
        "bands": int(cube.bands),
        "classes": int(labels.class_count),
        "dtype": "f32le",
        "label_dtype": "u16le",
        "name": name if name is not None else cube.name,
    }
    with open(os.path.join(path, HEADER_FILE), "w") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")
    cube.values.astype("<f4").tofile(os.path.join(path, CUBE_FILE))
    labels.labels.astype("<u2").tofile(os.path.join(path, LABELS_FILE))


def _read_header(path):
    fname = os.path.join(path, HEADER_FILE)
    if not os.path.isfile(fname):
        raise MissingFileError(f"missing {fname}")
    try:
        with open(fname) as fh:
            header = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise HeaderError(f"{fname}: {exc}") from exc
    if not isinstance(header, dict):
        raise HeaderError(f"{fname}: header must be a JSON object")
    for key in ("width", "height", "bands", "classes"):
        val = header.get(key)
        if not isinstance(val, int) or isinstance(val, bool) or val < 1:
            raise HeaderError(f"{fname}: '{key}' must be a positive integer, got {val!r}")
    if header.get("dtype", "f32le") != "f32le":
        raise HeaderError(f"{fname}: unsupported dtype {header['dtype']!r}")
    if header.get("label_dtype", "u16le") != "u16le":
        raise HeaderError(f"{fname}: unsupported label_dtype {header['label_dtype']!r}")
    return header


def _read_exact(fname, dtype, count):
    if not os.path.isfile(fname):
        raise MissingFileError(f"missing {fname}")
    expected = count * np.dtype(dtype).itemsize
    actual = os.path.getsize(fname)
    if actual != expected:
        raise ByteCountError(f"{fname}: expected {expected} bytes, found {actual}")
    return np.fromfile(fname, dtype=dtype, count=count)


def load_dataset(path):
    """Read a dataset directory, returning ``(HsiCube, LabelMap)``."""
    header = _read_header(path)
    w, h, c, n = header["width"], header["height"], header["bands"], header["classes"]
    values = _read_exact(os.path.join(path, CUBE_FILE), "<f4", w * h * c).reshape(h, w, c)
    labels = _read_exact(os.path.join(path, LABELS_FILE), "<u2", w * h).reshape(h, w)
    if labels.max(initial=0) > n:
        raise LabelRangeError(f"{path}: label {int(labels.max())} exceeds class count {n}")
    if not np.all(np.isfinite(values)):
        raise DatasetError(f"{path}: cube contains non-finite values")
    cube = HsiCube(values.astype(np.float32), name=str(header.get("name", "")))
    return cube, LabelMap(labels.astype(np.int64), n)


# ---------------------------------------------------------------- synthetic scenes


def synth_generate(width, height, bands, classes, noise_sigma, rng):
    """Blocky label regions, one smooth spectral signature per class.

    Every pixel is labeled.  Class ``k`` gets a sinusoid of frequency ``k``
    over the band axis, so the signatures are mutually distinct.
    """
    if classes < 2:
        raise ValueError("classes must be >= 2")
    if bands < classes:
        raise ValueError("bands must be >= classes")

    block = max(2, min(width, height) // 4)
    by = -(-height // block)
    bx = -(-width // block)
    if by * bx < classes:
        raise ValueError(f"{width}x{height} is too small for {classes} classes")
    grid = rng.integers(1, classes + 1, size=by * bx)
    # guarantee every class owns at least one block
    grid[rng.permutation(by * bx)[:classes]] = np.arange(1, classes + 1)
    grid = grid.reshape(by, bx)
    labels = np.kron(grid, np.ones((block, block), dtype=np.int64))[:height, :width]

    t = np.arange(bands) / bands
    phases = rng.uniform(0, 2 * np.pi, size=classes)
    signatures = np.stack(
        [0.5 + 0.3 * np.sin(2 * np.pi * (k + 1) * t + phases[k]) for k in range(classes)]
    )
    values = signatures[labels - 1]
    if noise_sigma > 0:
        values = values + rng.normal(0.0, noise_sigma, size=values.shape)
    cube = HsiCube(values.astype(np.float32), name="synthetic")
    return cube, LabelMap(labels, classes)


# ---------------------------------------------------------------- PCA


def pca_fit(cube, n_components):
    """Top ``n_components`` eigenvectors of the pixel covariance.

    All pixels take part, labeled or not.  Each component is signed so its
    largest-magnitude entry is positive.
    """
    c = cube.bands
    if not 1 <= n_components <= c:
        raise ValueError(f"n_components must be in 1..{c}, got {n_components}")
    x = cube.values.reshape(-1, c).astype(np.float64)
    if x.shape[0] < n_components + 1:
        raise ValueError("need at least n_components + 1 pixels")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (x.shape[0] - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals, kind="stable")[::-1][:n_components]
    evals = np.clip(evals[order], 0.0, None)
    comps = evecs[:, order]
    pivot = np.abs(comps).argmax(axis=0)
    signs = np.sign(comps[pivot, np.arange(n_components)])
    signs[signs == 0] = 1.0
    return PcaModel(mean, comps * signs, evals)


def pca_apply(model, cube):
    if cube.bands != model.mean.shape[0]:
        raise ShapeError(f"cube has {cube.bands} bands, PCA model expects {model.mean.shape[0]}")
    h, w, c = cube.values.shape
    x = cube.values.reshape(-1, c).astype(np.float64) - model.mean
    reduced = (x @ model.components).reshape(h, w, -1)
    return HsiCube(reduced, name=cube.name)


# ---------------------------------------------------------------- patches and splits


def extract_patches(cube, labels, window):
    """One zero-padded ``window x window`` patch per labeled pixel.

    Patches are ordered by (row, col) and labeled by their center pixel.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be a positive odd number, got {window}")
    if labels.labels.shape != cube.values.shape[:2]:
        raise ShapeError(f"label map {labels.labels.shape} does not match cube {cube.values.shape[:2]}")
    rows, cols = np.nonzero(labels.labels)
    if rows.size == 0:
        raise EmptyDatasetError("no labeled pixels")
    r = window // 2
    padded = np.pad(cube.values, ((r, r), (r, r), (0, 0)))
    views = np.lib.stride_tricks.sliding_window_view(padded, (window, window), axis=(0, 1))
    # views: (H, W, S, D, D) -> gather then move bands last
    patches = np.ascontiguousarray(views[rows, cols].transpose(0, 2, 3, 1))
    onehot = np.zeros((rows.size, labels.class_count), dtype=patches.dtype)
    onehot[np.arange(rows.size), labels.labels[rows, cols] - 1] = 1
    return PatchSet(patches, onehot, np.stack([rows, cols], axis=1))


def stratified_split(patch_set, train_fraction, rng):
    """Per-class random split; each class sends round(fraction * size) to train, at least 1."""
    if not 0 < train_fraction < 1:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    cls = patch_set.class_indices
    train_idx, test_idx = [], []
    for k in range(1, patch_set.labels.shape[1] + 1):
        members = np.flatnonzero(cls == k)
        if members.size == 0:
            continue
        if members.size < 2:
            log.warning("class %d has a single sample; it goes to the training split", k)
        members = rng.permutation(members)
        n_train = min(members.size, max(1, int(np.floor(train_fraction * members.size + 0.5))))
        train_idx.append(members[:n_train])
        test_idx.append(members[n_train:])
    train_idx = np.sort(np.concatenate(train_idx))
    test_idx = np.sort(np.concatenate(test_idx))
    return patch_set.subset(train_idx), patch_set.subset(test_idx)
