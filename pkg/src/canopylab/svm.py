"""Gaussian-kernel soft-margin SVM trained by sequential minimal optimization.

Pixels are classified from their four spectral values (NIR, R, G, B), each
scaled by 1/255 so a model trained on one year's imagery applies unchanged
to another's.  The decision function is

    f(x) = sum_i coef_i * exp(-gamma * |sv_i - x|^2) + bias

with ``coef_i = alpha_i * y_i``; a pixel is tree when ``f(x) >= 0``.

Model file layout (little-endian): ``b"CSVM"``, version u16, feature
dimension u16, gamma f64, bias f64, support-vector count u32, then the
coefficients (f64 each) and the support vectors (f64, row-major).
"""

from __future__ import annotations

import logging
import math
import struct
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._parallel import resolve_threads
from .errors import (
    DimensionError,
    InsufficientClassError,
    InternalError,
    MalformedFileError,
    NumericError,
    ParameterError,
    TruncationError,
)
from .raster import BinaryMask, MultibandRaster, require_same_grid

logger = logging.getLogger(__name__)

IMAGE_BANDS = ("nir", "red", "green", "blue")
FEATURE_SCALE = 255.0
MODEL_MAGIC = b"CSVM"
MODEL_VERSION = 1

_FULL_GRAM_LIMIT = 3000
_ROW_CACHE_SIZE = 1024
_PREDICT_CHUNK = 4096


@dataclass(frozen=True)
class TrainConfig:
    C: float = 10.0
    gamma: float = 1.0
    tol: float = 1e-3
    max_passes: int = 5
    sample_count: int = 5000
    seed: int = 0
    max_sweeps: int = 100_000

    def __post_init__(self):
        for name in ("C", "gamma", "tol"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ParameterError(f"{name} must be a positive finite number, got {v}")
        if self.max_passes < 1 or self.sample_count < 1:
            raise ParameterError("max_passes and sample_count must be >= 1")


@dataclass(frozen=True, eq=False)
class SampleSet:
    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = np.array(self.features, dtype=np.float64, ndmin=2)
        y = np.asarray(self.labels, dtype=np.float64).ravel()
        if x.shape[0] != y.shape[0]:
            raise DimensionError(f"{x.shape[0]} feature rows but {y.shape[0]} labels")
        if not np.all(np.isin(y, (-1.0, 1.0))):
            raise ParameterError("labels must be +1 (tree) or -1 (non-tree)")
        if not np.all(np.isfinite(x)):
            raise NumericError("features must be finite")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return len(self.labels)


@dataclass(frozen=True, eq=False)
class SvmModel:
    support_vectors: np.ndarray
    dual_coefs: np.ndarray
    bias: float
    gamma: float

    def __post_init__(self):
        sv = np.array(self.support_vectors, dtype=np.float64, ndmin=2)
        coefs = np.asarray(self.dual_coefs, dtype=np.float64).ravel()
        if sv.shape[0] != coefs.shape[0]:
            raise DimensionError(f"{sv.shape[0]} support vectors but {coefs.shape[0]} coefficients")
        object.__setattr__(self, "support_vectors", sv)
        object.__setattr__(self, "dual_coefs", coefs)
        object.__setattr__(self, "bias", float(self.bias))
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def dim(self) -> int:
        return self.support_vectors.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, SvmModel):
            return NotImplemented
        return (
            self.support_vectors.shape == other.support_vectors.shape
            and np.array_equal(self.support_vectors, other.support_vectors)
            and np.array_equal(self.dual_coefs, other.dual_coefs)
            and self.bias == other.bias
            and self.gamma == other.gamma
        )

    __hash__ = None


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    """Gram block ``exp(-gamma * |a_i - b_j|^2)``."""
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    d2 = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * (a @ b.T)
    return np.exp(-gamma * np.maximum(d2, 0.0))


# ---------------------------------------------------------------------------
# Sampling
# ---------------------------------------------------------------------------


def image_features(image: MultibandRaster) -> np.ndarray:
    """``(4, H, W)`` band planes in NIR, R, G, B order, scaled to [0, 1]."""
    if all(n in image.names for n in IMAGE_BANDS):
        data = image.select(IMAGE_BANDS).data
    elif len(image) == len(IMAGE_BANDS):
        data = image.data
    else:
        raise DimensionError(
            f"image needs bands {list(IMAGE_BANDS)} (or exactly 4 bands), has {list(image.names)}"
        )
    return data / FEATURE_SCALE


def extract_training_samples(
    image: MultibandRaster, mask: BinaryMask, per_class: int, seed: int = 0
) -> SampleSet:
    """Draw up to ``per_class`` valid pixels of each class without replacement."""
    require_same_grid(image.spec, mask.spec, "image and label mask")
    if per_class < 1:
        raise ParameterError("per_class must be >= 1")
    feats = image_features(image).reshape(len(IMAGE_BANDS), -1).T
    usable = (mask.valid & image.valid).ravel()
    bits = mask.bits.ravel()
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for label, members in ((1.0, usable & bits), (-1.0, usable & ~bits)):
        idx = np.flatnonzero(members)
        if idx.size == 0:
            name = "tree" if label > 0 else "non-tree"
            raise InsufficientClassError(f"label mask has no valid {name} cells")
        if idx.size > per_class:
            idx = np.sort(rng.choice(idx, size=per_class, replace=False))
        xs.append(feats[idx])
        ys.append(np.full(idx.size, label))
    return SampleSet(np.concatenate(xs), np.concatenate(ys))


# ---------------------------------------------------------------------------
# SMO
# ---------------------------------------------------------------------------


class _KernelRows:
    """Kernel rows on demand: a full Gram matrix when small, else an LRU of rows."""

    def __init__(self, x: np.ndarray, gamma: float):
        self.x = x
        self.gamma = gamma
        self.full = rbf_kernel(x, x, gamma) if len(x) <= _FULL_GRAM_LIMIT else None
        if self.full is not None and not np.all(np.isfinite(self.full)):
            raise NumericError("non-finite kernel values")
        self.cache: OrderedDict[int, np.ndarray] = OrderedDict()

    def row(self, i: int) -> np.ndarray:
        if self.full is not None:
            return self.full[i]
        r = self.cache.get(i)
        if r is None:
            r = rbf_kernel(self.x[i], self.x, self.gamma)[0]
            if not np.all(np.isfinite(r)):
                raise NumericError("non-finite kernel values")
            self.cache[i] = r
            if len(self.cache) > _ROW_CACHE_SIZE:
                self.cache.popitem(last=False)
        else:
            self.cache.move_to_end(i)
        return r


class _Smo:
    # Internal sign convention: u(x) = sum alpha_i y_i k(x_i, x) - b,
    # error cache E_i = u(x_i) - y_i.

    eps = 1e-12

    def __init__(self, samples: SampleSet, cfg: TrainConfig):
        self.x = samples.features
        self.y = samples.labels
        self.C = cfg.C
        self.tol = cfg.tol
        self.n = len(self.y)
        self.K = _KernelRows(self.x, cfg.gamma)
        self.alpha = np.zeros(self.n)
        self.b = 0.0
        self.E = -self.y.copy()
        self.steps = 0

    def nonbound(self) -> np.ndarray:
        return np.flatnonzero((self.alpha > 0) & (self.alpha < self.C))

    def take_step(self, i1: int, i2: int) -> bool:
        if i1 == i2:
            return False
        C, y, alpha = self.C, self.y, self.alpha
        a1, a2 = alpha[i1], alpha[i2]
        y1, y2 = y[i1], y[i2]
        E1, E2 = self.E[i1], self.E[i2]
        s = y1 * y2
        if y1 != y2:
            L, H = max(0.0, a2 - a1), min(C, C + a2 - a1)
        else:
            L, H = max(0.0, a1 + a2 - C), min(C, a1 + a2)
        if H - L <= self.eps * C:
            return False
        row1, row2 = self.K.row(i1), self.K.row(i2)
        k11, k22, k12 = row1[i1], row2[i2], row1[i2]
        eta = k11 + k22 - 2.0 * k12
        if eta > self.eps:
            a2_new = min(max(a2 + y2 * (E1 - E2) / eta, L), H)
        else:
            # degenerate direction (duplicate points): compare objective at the ends
            f1 = y1 * (E1 + self.b) - a1 * k11 - s * a2 * k12
            f2 = y2 * (E2 + self.b) - s * a1 * k12 - a2 * k22
            L1 = a1 + s * (a2 - L)
            H1 = a1 + s * (a2 - H)
            obj_L = L1 * f1 + L * f2 + 0.5 * L1 * L1 * k11 + 0.5 * L * L * k22 + s * L * L1 * k12
            obj_H = H1 * f1 + H * f2 + 0.5 * H1 * H1 * k11 + 0.5 * H * H * k22 + s * H * H1 * k12
            if obj_L < obj_H - 1e-9:
                a2_new = L
            elif obj_L > obj_H + 1e-9:
                a2_new = H
            else:
                a2_new = a2
        snap = 1e-9 * C
        if a2_new < snap:
            a2_new = 0.0
        elif a2_new > C - snap:
            a2_new = C
        if abs(a2_new - a2) < 1e-9 * (a2_new + a2 + 1e-9):
            return False
        a1_new = a1 + s * (a2 - a2_new)
        if a1_new < snap:
            a1_new = 0.0
        elif a1_new > C - snap:
            a1_new = C

        d1 = y1 * (a1_new - a1)
        d2 = y2 * (a2_new - a2)
        b1 = E1 + d1 * k11 + d2 * k12 + self.b
        b2 = E2 + d1 * k12 + d2 * k22 + self.b
        if 0.0 < a1_new < C:
            b_new = b1
        elif 0.0 < a2_new < C:
            b_new = b2
        else:
            b_new = 0.5 * (b1 + b2)
        self.E += d1 * row1 + d2 * row2 - (b_new - self.b)
        self.b = b_new
        alpha[i1], alpha[i2] = a1_new, a2_new
        self.steps += 1
        return True

    def examine(self, i2: int) -> int:
        y2, a2, E2 = self.y[i2], self.alpha[i2], self.E[i2]
        r2 = E2 * y2
        if not ((r2 < -self.tol and a2 < self.C) or (r2 > self.tol and a2 > 0)):
            return 0
        nb = self.nonbound()
        if nb.size > 1:
            i1 = int(nb[np.argmax(np.abs(self.E[nb] - E2))])
            if self.take_step(i1, i2):
                return 1
        # sweep order, starting after i2
        for i1 in np.roll(nb, -int(np.searchsorted(nb, i2, side="right"))):
            if self.take_step(int(i1), i2):
                return 1
        for i1 in np.roll(np.arange(self.n), -(i2 + 1)):
            if self.take_step(int(i1), i2):
                return 1
        return 0

    def run(self, max_passes: int, max_sweeps: int) -> None:
        examine_all = True
        quiet_passes = 0
        sweeps = 0
        while True:
            candidates = range(self.n) if examine_all else self.nonbound()
            changed = sum(self.examine(int(i)) for i in candidates)
            sweeps += 1
            if examine_all:
                if changed == 0:
                    quiet_passes += 1
                    if quiet_passes >= max_passes:
                        break
                else:
                    quiet_passes = 0
                    examine_all = False
            elif changed == 0:
                examine_all = True
            if sweeps >= max_sweeps:
                logger.warning("SMO stopped after %d sweeps without full convergence", sweeps)
                break
        logger.debug("SMO: %d samples, %d steps, %d sweeps", self.n, self.steps, sweeps)


def solve_dual(samples: SampleSet, cfg: TrainConfig = TrainConfig()) -> tuple[np.ndarray, float]:
    """Run SMO; return the per-sample ``alpha`` vector and the decision bias."""
    y = samples.labels
    if len(y) < 2 or not ((y > 0).any() and (y < 0).any()):
        raise InsufficientClassError("training needs at least one sample of each class")
    smo = _Smo(samples, cfg)
    smo.run(cfg.max_passes, cfg.max_sweeps)
    if not math.isfinite(smo.b):
        raise NumericError("non-finite bias")
    return smo.alpha.copy(), -smo.b


def train_svm(samples: SampleSet, cfg: TrainConfig = TrainConfig()) -> SvmModel:
    alpha, bias = solve_dual(samples, cfg)
    if np.any(alpha < 0) or np.any(alpha > cfg.C):
        raise InternalError("box constraint violated after training")
    sv = alpha > 0
    coefs = alpha[sv] * samples.labels[sv]
    if abs(coefs.sum()) > cfg.tol:
        raise InternalError(f"dual feasibility violated: sum(alpha*y) = {coefs.sum():.3g}")
    return SvmModel(samples.features[sv], coefs, bias, cfg.gamma)


def dual_objective(alpha: np.ndarray, samples: SampleSet, gamma: float) -> float:
    """``sum(alpha) - 1/2 sum_ij alpha_i alpha_j y_i y_j k(x_i, x_j)``."""
    ay = np.asarray(alpha) * samples.labels
    K = rbf_kernel(samples.features, samples.features, gamma)
    return float(np.sum(alpha) - 0.5 * ay @ K @ ay)


# ---------------------------------------------------------------------------
# Inference
# ---------------------------------------------------------------------------


def decision_values(model: SvmModel, features: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if x.shape[1] != model.dim and model.dual_coefs.size:
        raise DimensionError(f"features have {x.shape[1]} columns, model expects {model.dim}")
    if model.dual_coefs.size == 0:
        return np.full(len(x), model.bias)
    return rbf_kernel(x, model.support_vectors, model.gamma) @ model.dual_coefs + model.bias


def decision_value(model: SvmModel, feature) -> float:
    return float(decision_values(model, np.asarray(feature, dtype=np.float64)[None, :])[0])


def classify(model: SvmModel, feature) -> int:
    """+1 (tree) or -1; a zero decision value counts as tree."""
    return 1 if decision_value(model, feature) >= 0 else -1


def predict_mask(model: SvmModel, image: MultibandRaster, threads: int | None = 1) -> BinaryMask:
    feats = image_features(image).reshape(len(IMAGE_BANDS), -1).T
    n = len(feats)
    scores = np.empty(n)
    # fixed chunk boundaries keep results independent of the worker count
    chunks = [(s, min(s + _PREDICT_CHUNK, n)) for s in range(0, n, _PREDICT_CHUNK)]

    def work(chunk):
        s, e = chunk
        scores[s:e] = decision_values(model, feats[s:e])

    workers = resolve_threads(threads)
    if workers == 1 or len(chunks) == 1:
        for c in chunks:
            work(c)
    else:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(work, chunks))
    valid = image.valid
    bits = (scores >= 0).reshape(image.spec.shape)
    return BinaryMask(image.spec, bits & valid, valid)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

_MODEL_HEAD = struct.Struct("<4sHHddI")


def save_model(model: SvmModel) -> bytes:
    m = len(model.dual_coefs)
    dim = model.dim if m else len(IMAGE_BANDS)
    head = _MODEL_HEAD.pack(MODEL_MAGIC, MODEL_VERSION, dim, model.gamma, model.bias, m)
    sv = model.support_vectors.reshape(m, dim) if m else np.zeros((0, dim))
    return head + model.dual_coefs.astype("<f8").tobytes() + sv.astype("<f8").tobytes()


def load_model(data: bytes) -> SvmModel:
    if len(data) < 4 or data[:4] != MODEL_MAGIC:
        raise MalformedFileError("missing 'CSVM' magic")
    if len(data) < _MODEL_HEAD.size:
        raise TruncationError("model header incomplete", len(data))
    _, version, dim, gamma, bias, m = _MODEL_HEAD.unpack_from(data)
    if version != MODEL_VERSION:
        raise MalformedFileError(f"unsupported model version {version}")
    need = _MODEL_HEAD.size + 8 * m * (1 + dim)
    if len(data) < need:
        raise TruncationError(f"model body holds fewer than {m} support vectors", len(data))
    if len(data) > need:
        raise MalformedFileError(f"{len(data) - need} trailing bytes after model body")
    pos = _MODEL_HEAD.size
    coefs = np.frombuffer(data, "<f8", m, pos)
    sv = np.frombuffer(data, "<f8", m * dim, pos + 8 * m).reshape(m, dim)
    return SvmModel(sv.copy(), coefs.copy(), bias, gamma)


def write_model(path: str | Path, model: SvmModel) -> None:
    Path(path).write_bytes(save_model(model))


def read_model(path: str | Path) -> SvmModel:
    return load_model(Path(path).read_bytes())
