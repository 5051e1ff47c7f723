"""Regularized, normalized canonical correlation analysis.

Two views X (n x dim_x) and Y (n x dim_y) are whitened with the symmetric
inverse square root of their ridge-regularized covariances; the SVD of the
whitened cross-covariance yields the canonical directions and correlations.
Similarity between a visual and a textual vector is the cosine of their
projections, each coordinate scaled by ``correlation ** power``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"CCA1"
EIG_FLOOR = 1e-12
MAX_DEFAULT_COMPONENTS = 300
DEFAULT_POWER = 4.0
DEFAULT_RELATIVE_RIDGE = 1e-4
ORTHONORMAL_TOL = 1e-6


class CcaError(ValueError):
    """Raised for invalid CCA inputs or configuration."""


class SingularCovarianceError(CcaError):
    """A view covariance is rank deficient and no ridge was requested."""


@dataclass(frozen=True)
class CcaConfig:
    """Fit settings.

    ``regularization=None`` selects the scale-relative default ridge,
    ``1e-4 * trace(C) / dim`` computed separately for each view.
    ``components=None`` selects ``min(dim_x, dim_y, 300)``.
    """

    regularization: float | None = None
    components: int | None = None
    correlation_power: float = DEFAULT_POWER

    def __post_init__(self):
        if self.regularization is not None and not self.regularization >= 0:
            raise CcaError(f"regularization must be >= 0, got {self.regularization}")
        if self.components is not None and self.components < 1:
            raise CcaError(f"components must be >= 1, got {self.components}")
        if not self.correlation_power >= 0:
            raise CcaError(f"correlation_power must be >= 0, got {self.correlation_power}")

    def ridge(self, cov: np.ndarray) -> float:
        if self.regularization is not None:
            return float(self.regularization)
        dim = cov.shape[0]
        return DEFAULT_RELATIVE_RIDGE * float(np.trace(cov)) / dim


@dataclass(frozen=True, eq=False)
class CcaModel:
    mean_x: np.ndarray
    mean_y: np.ndarray
    proj_x: np.ndarray
    proj_y: np.ndarray
    correlations: np.ndarray
    config: CcaConfig = field(default_factory=CcaConfig)

    def __post_init__(self):
        for name in ("mean_x", "mean_y", "proj_x", "proj_y", "correlations"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        k = self.correlations.shape[0]
        if self.proj_x.shape != (self.dim_x, k) or self.proj_y.shape != (self.dim_y, k):
            raise CcaError(
                f"projection shapes {self.proj_x.shape}, {self.proj_y.shape} do not match "
                f"means ({self.dim_x}, {self.dim_y}) and k={k}"
            )

    @property
    def dim_x(self) -> int:
        return self.mean_x.shape[0]

    @property
    def dim_y(self) -> int:
        return self.mean_y.shape[0]

    @property
    def components(self) -> int:
        return self.correlations.shape[0]

    @property
    def scale(self) -> np.ndarray:
        return self.correlations ** self.config.correlation_power


def _as_matrix(a, name: str) -> np.ndarray:
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m[:, None]
    if m.ndim != 2:
        raise CcaError(f"{name} must be a 2-d matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise CcaError(f"{name} contains non-finite values")
    return m


def _inv_sqrt(cov: np.ndarray, ridge: float, view: str) -> np.ndarray:
    dim = cov.shape[0]
    evals, evecs = np.linalg.eigh(cov + ridge * np.eye(dim))
    if ridge == 0.0:
        top = max(float(evals[-1]), 0.0)
        if top == 0.0 or evals[0] <= 1e-10 * top:
            raise SingularCovarianceError(
                f"covariance of view {view} is rank deficient (min eigenvalue "
                f"{evals[0]:.3g}, max {top:.3g}); use regularization > 0"
            )
    evals = np.maximum(evals, EIG_FLOOR)
    return (evecs / np.sqrt(evals)) @ evecs.T


def fit_cca(x_samples, y_samples, config: CcaConfig | None = None) -> CcaModel:
    """Fit a CCA model on paired rows of ``x_samples`` and ``y_samples``."""
    config = config or CcaConfig()
    x = _as_matrix(x_samples, "x_samples")
    y = _as_matrix(y_samples, "y_samples")
    n = x.shape[0]
    if y.shape[0] != n:
        raise CcaError(f"row count mismatch: x has {n} rows, y has {y.shape[0]}")
    if n < 2:
        raise CcaError(f"need at least 2 samples, got {n}")
    dim_x, dim_y = x.shape[1], y.shape[1]
    k = config.components or min(dim_x, dim_y, MAX_DEFAULT_COMPONENTS)
    if k > min(dim_x, dim_y):
        raise CcaError(f"components={k} exceeds min(dim_x, dim_y)={min(dim_x, dim_y)}")

    mean_x = x.mean(axis=0)
    mean_y = y.mean(axis=0)
    xc = x - mean_x
    yc = y - mean_y
    cxx = xc.T @ xc / (n - 1)
    cyy = yc.T @ yc / (n - 1)
    cxy = xc.T @ yc / (n - 1)
    ridge_x = config.ridge(cxx)
    ridge_y = config.ridge(cyy)

    wx = _inv_sqrt(cxx, ridge_x, "x")
    wy = _inv_sqrt(cyy, ridge_y, "y")
    u, s, vt = np.linalg.svd(wx @ cxy @ wy, full_matrices=False)
    proj_x = wx @ u[:, :k]
    proj_y = wy @ vt[:k].T
    correlations = np.clip(s[:k], 0.0, 1.0)

    # sign convention: largest-magnitude entry of each x column is positive
    lead = np.argmax(np.abs(proj_x), axis=0)
    signs = np.where(proj_x[lead, np.arange(k)] < 0, -1.0, 1.0)
    proj_x = proj_x * signs
    proj_y = proj_y * signs

    _check_metric(proj_x, cxx, ridge_x, "x")
    _check_metric(proj_y, cyy, ridge_y, "y")
    return CcaModel(mean_x, mean_y, proj_x, proj_y, correlations, config)


def _check_metric(proj: np.ndarray, cov: np.ndarray, ridge: float, view: str) -> None:
    gram = proj.T @ (cov + ridge * np.eye(cov.shape[0])) @ proj
    err = float(np.max(np.abs(gram - np.eye(gram.shape[0])))) if gram.size else 0.0
    if err > ORTHONORMAL_TOL:
        raise CcaError(
            f"view {view} projections are not orthonormal in the covariance metric "
            f"(max deviation {err:.3g}); the covariance is too ill-conditioned"
        )


def _project(vec, mean: np.ndarray, proj: np.ndarray, scale: np.ndarray, view: str) -> np.ndarray:
    v = np.asarray(vec, dtype=np.float64)
    if v.shape != mean.shape:
        raise CcaError(f"expected a {view} vector of length {mean.shape[0]}, got shape {v.shape}")
    return ((v - mean) @ proj) * scale


def project_x(model: CcaModel, v) -> np.ndarray:
    return _project(v, model.mean_x, model.proj_x, model.scale, "x")


def project_y(model: CcaModel, v) -> np.ndarray:
    return _project(v, model.mean_y, model.proj_y, model.scale, "y")


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of two vectors, 0 when either is (numerically) zero."""
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na < 1e-12 or nb < 1e-12:
        return 0.0
    return min(1.0, max(-1.0, float(a @ b) / (na * nb)))


def similarity(model: CcaModel, x_vec, y_vec) -> float:
    return cosine(project_x(model, x_vec), project_y(model, y_vec))


def similarity_matrix(model: CcaModel, x_vecs, y_vecs) -> np.ndarray:
    """Pairwise similarities, rows indexed by ``x_vecs`` and columns by ``y_vecs``."""
    px = np.stack([project_x(model, v) for v in x_vecs])
    py = np.stack([project_y(model, v) for v in y_vecs])
    out = np.zeros((len(px), len(py)))
    for i, a in enumerate(px):
        for j, b in enumerate(py):
            out[i, j] = cosine(a, b)
    return out


_HEADER = struct.Struct("<4sIIIdd")


def save_model(model: CcaModel, path) -> None:
    reg = model.config.regularization
    header = _HEADER.pack(
        MAGIC,
        model.dim_x,
        model.dim_y,
        model.components,
        float(model.config.correlation_power),
        math.nan if reg is None else float(reg),
    )
    body = b"".join(
        np.ascontiguousarray(a, dtype="<f8").tobytes()
        for a in (model.mean_x, model.mean_y, model.proj_x, model.proj_y, model.correlations)
    )
    Path(path).write_bytes(header + body)


def load_model(path) -> CcaModel:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise CcaError(f"{path}: truncated model header")
    magic, dim_x, dim_y, k, power, reg = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CcaError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    sizes = [dim_x, dim_y, dim_x * k, dim_y * k, k]
    expected = _HEADER.size + 8 * sum(sizes)
    if len(data) != expected:
        raise CcaError(f"{path}: expected {expected} bytes, found {len(data)}")
    flat = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).astype(np.float64)
    parts = np.split(flat, np.cumsum(sizes)[:-1])
    config = CcaConfig(
        regularization=None if math.isnan(reg) else reg,
        components=k,
        correlation_power=power,
    )
    return CcaModel(
        mean_x=parts[0],
        mean_y=parts[1],
        proj_x=parts[2].reshape(dim_x, k),
        proj_y=parts[3].reshape(dim_y, k),
        correlations=parts[4],
        config=config,
    )
