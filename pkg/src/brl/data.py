"""Synthetic mixture generation and dataset IO.

The synthetic generator is a two-component multivariate Student-t
mixture: Y = +1 with probability p, and X | Y = s is an elliptical
Student-t with location mu_s, scale matrix Sigma_s and nu_s degrees of
freedom, drawn as mu_s + L_s Z sqrt(nu_s / W) with Z standard normal,
W ~ chi-square(nu_s) and L_s the Cholesky factor of Sigma_s.  Small nu
gives heavy polynomial tails, which is the stress regime the rest of
the package is designed for.

IO helpers read delimited text files and a small binary cache format
(magic "BRL1", little-endian u32 counts, float64 rows, one label byte).
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

Seed = Union[int, Sequence[int]]

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import expit, gammaln

from .measures import LabeledDataset

SAMPLE_CHUNK = 65536
CACHE_MAGIC = b"BRL1"


class DataFormatError(ValueError):
    """Raised when an input file does not match the expected layout."""


@dataclass
class StudentMixtureParams:
    """Parameters of the two-component Student-t mixture.

    ``p`` is the positive-class probability.  Scale matrices must be
    symmetric positive definite; their Cholesky factors are computed on
    construction.
    """

    p: float
    mu_neg: np.ndarray
    mu_pos: np.ndarray
    sigma_neg: np.ndarray
    sigma_pos: np.ndarray
    nu_neg: float
    nu_pos: float
    _chol_neg: np.ndarray = field(init=False, repr=False)
    _chol_pos: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if not (0.0 < self.p < 1.0):
            raise ValueError(f"p must lie in (0, 1), got {self.p}")
        if not (self.nu_neg > 0 and self.nu_pos > 0):
            raise ValueError("degrees of freedom must be positive")
        self.mu_neg = np.asarray(self.mu_neg, dtype=np.float64)
        self.mu_pos = np.asarray(self.mu_pos, dtype=np.float64)
        self.sigma_neg = np.asarray(self.sigma_neg, dtype=np.float64)
        self.sigma_pos = np.asarray(self.sigma_pos, dtype=np.float64)
        d = self.mu_neg.shape[0]
        if self.mu_pos.shape != (d,):
            raise ValueError("class means must have the same dimension")
        for name, sigma in (("sigma_neg", self.sigma_neg), ("sigma_pos", self.sigma_pos)):
            if sigma.shape != (d, d):
                raise ValueError(f"{name} must be ({d}, {d}), got {sigma.shape}")
        try:
            self._chol_neg = np.linalg.cholesky(self.sigma_neg)
            self._chol_pos = np.linalg.cholesky(self.sigma_pos)
        except np.linalg.LinAlgError as exc:
            raise ValueError("scale matrices must be positive definite") from exc

    @property
    def dim(self) -> int:
        return self.mu_neg.shape[0]

    @classmethod
    def default(cls, p: float) -> "StudentMixtureParams":
        """Planar benchmark mixture: a heavy-tailed positive class
        (nu = 1.1, scale 3I, mean (1, 1)) against a t(2.5) negative
        class at the origin."""
        return cls(
            p=p,
            mu_neg=np.zeros(2),
            mu_pos=np.ones(2),
            sigma_neg=np.eye(2),
            sigma_pos=3.0 * np.eye(2),
            nu_neg=2.5,
            nu_pos=1.1,
        )

    def _class_pieces(self, label: int) -> tuple[np.ndarray, np.ndarray, float]:
        if label == 1:
            return self.mu_pos, self._chol_pos, self.nu_pos
        if label == -1:
            return self.mu_neg, self._chol_neg, self.nu_neg
        raise ValueError(f"label must be -1 or +1, got {label}")

    def sample_class(self, label: int, size: int, rng: np.random.Generator) -> np.ndarray:
        """Draw `size` feature rows conditional on the class label."""
        mu, chol, nu = self._class_pieces(label)
        z = rng.standard_normal((size, self.dim))
        w = rng.chisquare(nu, size)
        return mu + (z @ chol.T) * np.sqrt(nu / w)[:, None]

    def log_density(self, label: int, X: np.ndarray) -> np.ndarray:
        """Log of the class-conditional density at the rows of X."""
        mu, chol, nu = self._class_pieces(label)
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        d = self.dim
        sol = solve_triangular(chol, (X - mu).T, lower=True)
        maha = np.einsum("ij,ij->j", sol, sol)
        log_det = 2.0 * float(np.log(np.diag(chol)).sum())
        return (
            gammaln((nu + d) / 2.0)
            - gammaln(nu / 2.0)
            - 0.5 * d * np.log(nu * np.pi)
            - 0.5 * log_det
            - 0.5 * (nu + d) * np.log1p(maha / nu)
        )


def true_eta(params: StudentMixtureParams, X: np.ndarray) -> np.ndarray:
    """Posterior positive-class probability eta(x) = P(Y=+1 | X=x).

    Computed as a logistic transform of the log-odds, which stays
    accurate far into the tails where the densities underflow.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    log_odds = (
        np.log(params.p)
        - np.log1p(-params.p)
        + params.log_density(1, X)
        - params.log_density(-1, X)
    )
    return expit(log_odds)


@dataclass(frozen=True)
class EtaFn:
    """Picklable callable wrapping true_eta for a fixed mixture."""

    params: StudentMixtureParams

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return true_eta(self.params, X)


@dataclass(frozen=True)
class MarginalSampler:
    """Picklable sampler of the feature marginal of the mixture."""

    params: StudentMixtureParams

    def __call__(self, size: int, rng: np.random.Generator) -> np.ndarray:
        return _sample_chunk(self.params, size, rng)[0]


@dataclass(frozen=True)
class TruncatedClassSampler:
    """Class-conditional sampler restricted to the ball |x| <= radius.

    Draws by rejection; the acceptance loop is serial, so the output is
    a deterministic function of the rng state.
    """

    params: StudentMixtureParams
    radius: float

    def __call__(self, label: int, size: int, rng: np.random.Generator) -> np.ndarray:
        out = np.empty((size, self.params.dim))
        filled = 0
        while filled < size:
            batch = self.params.sample_class(label, max(size - filled, 1024), rng)
            keep = batch[np.linalg.norm(batch, axis=1) <= self.radius]
            take = min(keep.shape[0], size - filled)
            out[filled : filled + take] = keep[:take]
            filled += take
        return out


def _sample_chunk(
    params: StudentMixtureParams, size: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    # fixed draw schedule (labels, Z, W for both classes) so the stream
    # layout does not depend on the realized label mix
    u = rng.random(size)
    z = rng.standard_normal((size, params.dim))
    w_pos = rng.chisquare(params.nu_pos, size)
    w_neg = rng.chisquare(params.nu_neg, size)
    pos = u < params.p
    x_pos = params.mu_pos + (z @ params._chol_pos.T) * np.sqrt(params.nu_pos / w_pos)[:, None]
    x_neg = params.mu_neg + (z @ params._chol_neg.T) * np.sqrt(params.nu_neg / w_neg)[:, None]
    features = np.where(pos[:, None], x_pos, x_neg)
    labels = np.where(pos, 1, -1).astype(np.int8)
    return features, labels


def sample_student_mixture(
    params: StudentMixtureParams, n: int, seed: Seed
) -> LabeledDataset:
    """Draw n labeled rows from the mixture.

    ``seed`` is an integer or a tuple of integers (an entropy key).
    Rows are generated in fixed-size chunks with one spawned rng
    substream per chunk, so the output depends only on (params, n, seed)
    and a longer run extends a shorter one with the same seed.
    """
    if n < 0:
        raise ValueError(f"n must be nonnegative, got {n}")
    n_chunks = (n + SAMPLE_CHUNK - 1) // SAMPLE_CHUNK
    streams = np.random.SeedSequence(seed).spawn(max(n_chunks, 1))
    features = np.empty((n, params.dim))
    labels = np.empty(n, dtype=np.int8)
    for j in range(n_chunks):
        lo = j * SAMPLE_CHUNK
        hi = min(lo + SAMPLE_CHUNK, n)
        rng = np.random.default_rng(streams[j])
        x, y = _sample_chunk(params, hi - lo, rng)
        features[lo:hi] = x[: hi - lo]
        labels[lo:hi] = y[: hi - lo]
    return LabeledDataset(features, labels)


def student_tail_2d(nu: float, radius: float) -> float:
    """P(|X| > radius) for the standard 2-D Student-t with nu dof.

    In two dimensions the radial tail has the closed form
    (1 + r^2 / nu)^(-nu/2).
    """
    if nu <= 0 or radius < 0:
        raise ValueError("need nu > 0 and radius >= 0")
    return float((1.0 + radius**2 / nu) ** (-nu / 2.0))


def subsample_to_prevalence(
    data: LabeledDataset, target_p: float, seed: int
) -> LabeledDataset:
    """Downsample positives so the positive frequency is close to target_p.

    Keeps every negative, draws round(target_p * n_neg / (1 - target_p))
    positives (clamped to [1, n_pos]) without replacement, and preserves
    the original row order.
    """
    if not (0.0 < target_p < 1.0):
        raise ValueError(f"target_p must lie in (0, 1), got {target_p}")
    n_pos, n_neg = data.class_counts()
    if n_pos == 0 or n_neg == 0:
        raise DataFormatError("subsampling needs both classes present")
    if target_p >= n_pos / (n_pos + n_neg):
        raise ValueError(
            f"target_p={target_p} is not below the current positive "
            f"frequency {n_pos / (n_pos + n_neg):.6g}"
        )
    keep_pos = int(round(target_p * n_neg / (1.0 - target_p)))
    keep_pos = min(max(keep_pos, 1), n_pos)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    pos_idx = np.flatnonzero(data.labels == 1)
    chosen = rng.choice(pos_idx, size=keep_pos, replace=False)
    keep = np.zeros(data.n, dtype=bool)
    keep[data.labels == -1] = True
    keep[chosen] = True
    return LabeledDataset(data.features[keep], data.labels[keep])


def scale_unit_box(features: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Min-max scale each column to [0, 1]; constant columns map to 0.5.

    Returns (scaled, mins, ranges) so the same affine map can be applied
    to held-out rows with apply_unit_box.
    """
    features = np.asarray(features, dtype=np.float64)
    mins = features.min(axis=0)
    ranges = features.max(axis=0) - mins
    return apply_unit_box(features, mins, ranges), mins, ranges


def apply_unit_box(features: np.ndarray, mins: np.ndarray, ranges: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    safe = np.where(ranges > 0, ranges, 1.0)
    scaled = (features - mins) / safe
    return np.where(ranges > 0, scaled, 0.5)


def _parse_label(token: str, row: int) -> int:
    try:
        val = float(token)
    except ValueError:
        raise DataFormatError(f"row {row}: label {token!r} is not numeric") from None
    if val in (-1.0, 1.0):
        return int(val)
    if val == 0.0:
        return -1
    raise DataFormatError(f"row {row}: label {token!r} not in {{-1, 0, 1}}")


def load_csv(
    path: str,
    delimiter: str = ",",
    has_header: bool = True,
    labeled: bool = True,
    label_column: Union[int, str, None] = None,
    positive_value: Optional[str] = None,
) -> LabeledDataset | np.ndarray:
    """Read a delimited text file of feature columns plus a label column.

    ``label_column`` picks the label by 0-based index or, when the file
    has a header, by column name; the default is the last column.  Labels
    are numeric -1/+1 or 0/1 (0 maps to -1) unless ``positive_value`` is
    given, in which case tokens equal to it map to +1 and everything else
    to -1.  With ``labeled=False`` every column is a feature and a bare
    array is returned.  Errors name the 1-based physical row.
    """
    rows: list[list[float]] = []
    labels: list[int] = []
    width: Optional[int] = None
    label_idx: Optional[int] = None
    header_seen = False
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        for lineno, record in enumerate(reader, start=1):
            if not record or (len(record) == 1 and not record[0].strip()):
                continue
            if record[0].lstrip().startswith("#"):
                continue
            if has_header and not header_seen:
                header_seen = True
                if labeled and isinstance(label_column, str):
                    names = [tok.strip() for tok in record]
                    if label_column not in names:
                        raise DataFormatError(
                            f"label column {label_column!r} not in header {names}"
                        )
                    label_idx = names.index(label_column)
                continue
            if width is None:
                width = len(record)
                if labeled and width < 2:
                    raise DataFormatError(
                        f"row {lineno}: need at least one feature column and a label"
                    )
                if labeled and label_idx is None:
                    if isinstance(label_column, str):
                        raise DataFormatError(
                            "label column by name requires a header row"
                        )
                    label_idx = width - 1 if label_column is None else int(label_column)
                    if not -width <= label_idx < width:
                        raise DataFormatError(
                            f"label column index {label_idx} out of range for "
                            f"{width} columns"
                        )
                    label_idx %= width
            elif len(record) != width:
                raise DataFormatError(
                    f"row {lineno}: expected {width} fields, got {len(record)}"
                )
            if labeled:
                feat_tokens = [t for i, t in enumerate(record) if i != label_idx]
            else:
                feat_tokens = record
            try:
                rows.append([float(tok) for tok in feat_tokens])
            except ValueError:
                raise DataFormatError(
                    f"row {lineno}: non-numeric feature value"
                ) from None
            if labeled:
                token = record[label_idx].strip()
                if positive_value is not None:
                    labels.append(1 if token == positive_value else -1)
                else:
                    labels.append(_parse_label(token, lineno))
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    features = np.asarray(rows, dtype=np.float64)
    if not np.all(np.isfinite(features)):
        bad = int(np.flatnonzero(~np.isfinite(features).all(axis=1))[0])
        raise DataFormatError(f"non-finite feature value in data row {bad + 1}")
    if not labeled:
        return features
    return LabeledDataset(features, np.asarray(labels))


def save_cache(path: str, data: LabeledDataset) -> None:
    """Write the binary cache: magic, u32 n, u32 d, then packed rows."""
    rec = np.dtype([("x", "<f8", (data.dim,)), ("y", "u1")])
    packed = np.empty(data.n, dtype=rec)
    packed["x"] = data.features
    packed["y"] = (data.labels == 1).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(CACHE_MAGIC)
        fh.write(struct.pack("<II", data.n, data.dim))
        fh.write(packed.tobytes())


def load_cache(path: str) -> LabeledDataset:
    """Read the binary cache written by save_cache."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CACHE_MAGIC:
        raise DataFormatError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 12:
        raise DataFormatError(f"{path}: truncated header")
    n, d = struct.unpack("<II", blob[4:12])
    rec = np.dtype([("x", "<f8", (d,)), ("y", "u1")])
    expected = 12 + n * rec.itemsize
    if len(blob) != expected:
        raise DataFormatError(
            f"{path}: expected {expected} bytes for n={n}, d={d}, got {len(blob)}"
        )
    packed = np.frombuffer(blob[12:], dtype=rec)
    y = packed["y"]
    if y.size and not np.all(y <= 1):
        raise DataFormatError(f"{path}: label bytes must be 0x00 or 0x01")
    labels = np.where(y == 1, 1, -1).astype(np.int8)
    return LabeledDataset(packed["x"].reshape(n, d).copy(), labels)
