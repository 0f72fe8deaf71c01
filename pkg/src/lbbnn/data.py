"""Dataset readers and the synthetic generators used by the experiments."""
from __future__ import annotations

import csv
import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .rng import RngStream

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
MAX_IDX_ELEMENTS = 1 << 31


class DataError(ValueError):
    """Malformed or missing input data."""


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    name: str
    n_classes: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise DataError("features must be (n, d) with one label per row")
        if not np.all(np.isfinite(self.features)):
            raise DataError("features contain non-finite values")
        if np.any(self.labels < 0) or np.any(self.labels >= self.n_classes):
            raise DataError("labels out of range")

    def __len__(self) -> int:
        return self.labels.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.name, self.n_classes,
                       dict(self.metadata))


# -- IDX -----------------------------------------------------------------------

def _read_bytes(path) -> bytes:
    raw = Path(path).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (OSError, EOFError) as exc:
            raise DataError(f"{path}: corrupt gzip stream") from exc
    return raw


def parse_idx(raw: bytes, source: str = "<bytes>") -> np.ndarray:
    """Decode an unsigned-byte IDX image (rank 3) or label (rank 1) payload."""
    if len(raw) < 4:
        raise DataError(f"{source}: truncated header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic not in (IMAGE_MAGIC, LABEL_MAGIC):
        raise DataError(f"{source}: bad magic number 0x{magic:08x}")
    rank = magic & 0xFF
    header = 4 + 4 * rank
    if len(raw) < header:
        raise DataError(f"{source}: truncated header")
    dims = struct.unpack(f">{rank}I", raw[4:header])
    count = 1
    for d in dims:
        count *= d
        if count > MAX_IDX_ELEMENTS:
            raise DataError(f"{source}: dimensions overflow")
    if count == 0:
        raise DataError(f"{source}: empty dimension")
    payload = len(raw) - header
    if payload < count:
        raise DataError(f"{source}: truncated payload ({payload} of {count} bytes)")
    if payload > count:
        raise DataError(f"{source}: {payload - count} trailing bytes after payload")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims).copy()


def read_idx_raw(path) -> np.ndarray:
    return parse_idx(_read_bytes(path), str(path))


def read_idx(path) -> np.ndarray:
    """Images come back as ``(n, rows*cols)`` floats in ``[0, 1]``; labels as int64."""
    arr = read_idx_raw(path)
    if arr.ndim == 1:
        return arr.astype(np.int64)
    return arr.reshape(arr.shape[0], -1).astype(np.float64) / 255.0


def write_idx(path, array, compress: bool | None = None) -> Path:
    """Write an unsigned-byte array of rank 1 or 3 in IDX format."""
    array = np.asarray(array)
    if array.ndim not in (1, 3):
        raise DataError("IDX writer supports rank 1 (labels) or rank 3 (images)")
    if array.min(initial=0) < 0 or array.max(initial=0) > 255:
        raise DataError("IDX values must fit in an unsigned byte")
    magic = LABEL_MAGIC if array.ndim == 1 else IMAGE_MAGIC
    raw = struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape) \
        + array.astype(np.uint8).tobytes()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if compress is None:
        compress = path.suffix == ".gz"
    path.write_bytes(gzip.compress(raw, mtime=0) if compress else raw)
    return path


def load_idx_dataset(images, labels, name: str = "mnist", limit: int | None = None) -> Dataset:
    x = read_idx(images)
    y = read_idx(labels)
    if x.ndim != 2 or y.ndim != 1:
        raise DataError("expected an image file and a label file")
    if x.shape[0] != y.shape[0]:
        raise DataError("image and label counts differ")
    if limit is not None:
        x, y = x[:limit], y[:limit]
    return Dataset(x, y, name, 10, {"scaling": "divide by 255"})


# -- logistic regression design ------------------------------------------------

BETA = np.array([-4, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1.2, 0, 37.1, 0, 0, 50, -0.00005, 10, 3, 0],
                dtype=np.float64)
BLOCKS = ((0, 6, 0.9), (6, 12, 0.8), (12, 16, 0.7), (16, 20, 0.0))
# The three largest coefficients sit on 0/1 covariates so the linear predictor
# is not swamped by them; the rest are nulls from the most correlated block.
BINARY_COLUMNS = (1, 3, 4, 5, 12, 15, 17, 19)
ETA_VARIANCE = 0.5


def block_correlation() -> np.ndarray:
    c = np.eye(20)
    for lo, hi, rho in BLOCKS:
        block = np.full((hi - lo, hi - lo), rho)
        np.fill_diagonal(block, 1.0)
        c[lo:hi, lo:hi] = block
    return c


def sample_covariates(n: int, rng: RngStream) -> np.ndarray:
    """Block-correlated Gaussian covariates, eight of them thresholded to 0/1."""
    chol = np.linalg.cholesky(block_correlation())
    x = rng.normal((n, 20)) @ chol.T
    cols = list(BINARY_COLUMNS)
    x[:, cols] = (x[:, cols] > 0).astype(np.float64)
    return x


def sample_logistic_response(eta, rng: RngStream) -> np.ndarray:
    return rng.bernoulli(expit(np.asarray(eta, dtype=np.float64))).astype(np.int64)


def gen_logreg(n: int = 2000, seed: int = 0) -> tuple[Dataset, np.ndarray]:
    """Correlated-design logistic regression data and the true coefficients.

    ``eta ~ N(x @ beta, 0.5)`` (variance), ``y ~ Bernoulli(sigmoid(eta))``.
    """
    rng = RngStream(seed)
    x = sample_covariates(n, rng)
    eta = x @ BETA + np.sqrt(ETA_VARIANCE) * rng.normal(n)
    y = sample_logistic_response(eta, rng)
    ds = Dataset(x, y, "logreg", 2, {"binary_columns": list(BINARY_COLUMNS), "seed": seed})
    return ds, BETA.copy()


# -- Gaussian clusters ---------------------------------------------------------

CLUSTER_MEANS = np.array([[-8, -8], [6, 6], [-7, 8], [8, -8], [0, 0]], dtype=np.float64)
CLUSTER_MATRICES = np.array([
    [[6, -1], [-1, 3.5]],
    [[0, 3], [3, 0]],
    [[-3, 4], [-5, 1]],
    [[0, 5], [4, 2]],
    [[0, 9], [9, 0]],
], dtype=np.float64)
MIN_EIGENVALUE = 0.1


@dataclass
class ClusterSpec:
    mean: np.ndarray
    raw_matrix: np.ndarray
    covariance: np.ndarray


def repair_covariance(m, floor: float = MIN_EIGENVALUE) -> np.ndarray:
    """Symmetrise and lift eigenvalues below ``floor`` up to ``floor``."""
    m = np.asarray(m, dtype=np.float64)
    sym = 0.5 * (m + m.T)
    vals, vecs = np.linalg.eigh(sym)
    vals = np.maximum(vals, floor)
    cov = (vecs * vals) @ vecs.T
    return 0.5 * (cov + cov.T)


def cluster_specs() -> list[ClusterSpec]:
    return [ClusterSpec(mu, raw, repair_covariance(raw))
            for mu, raw in zip(CLUSTER_MEANS, CLUSTER_MATRICES)]


def sample_clusters_raw(samples_per_class: int, rng: RngStream) -> tuple[np.ndarray, np.ndarray]:
    xs, ys = [], []
    for k, spec in enumerate(cluster_specs()):
        chol = np.linalg.cholesky(spec.covariance)
        xs.append(spec.mean + rng.normal((samples_per_class, 2)) @ chol.T)
        ys.append(np.full(samples_per_class, k))
    return np.concatenate(xs), np.concatenate(ys)


def gen_clusters(samples_per_class: int, seed: int = 0,
                 scaling: tuple[np.ndarray, np.ndarray] | None = None) -> Dataset:
    """Five 2-D Gaussian classes, min-max scaled to the unit square.

    Pass ``scaling=(lo, hi)`` (from a training set's metadata) to map a test
    sample with the training set's transform instead of its own.
    """
    if samples_per_class < 1:
        raise ValueError("samples_per_class must be positive")
    x, y = sample_clusters_raw(samples_per_class, RngStream(seed))
    if scaling is None:
        lo, hi = x.min(axis=0), x.max(axis=0)
    else:
        lo, hi = (np.asarray(s, dtype=np.float64) for s in scaling)
    x = (x - lo) / (hi - lo)
    return Dataset(x, y, "clusters", 5, {"scaling": (lo.tolist(), hi.tolist()), "seed": seed})


def grid(resolution: int, lo: float, hi: float) -> np.ndarray:
    """Row-major lattice of ``resolution**2`` points covering ``[lo, hi]^2``."""
    if not lo < hi:
        raise ValueError("grid requires lo < hi")
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    axis = np.linspace(lo, hi, resolution)
    gx, gy = np.meshgrid(axis, axis, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def write_dataset_csv(ds: Dataset, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow([f"x{j}" for j in range(ds.features.shape[1])] + ["label"])
        for row, label in zip(ds.features, ds.labels):
            w.writerow([repr(float(v)) for v in row] + [int(label)])
    return path
