"""Unsupervised analysis: PCA, exact t-SNE, k-means, GMM, cosine spectral clustering, ARI."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh
from scipy.special import comb, logsumexp

from . import kernels
from .core import LABEL_SENTINEL, HyperCube, LabelMap
from .errors import DataError, GraphError, NumericError, ParameterError, ShapeError

GMM_RIDGE = 1e-6


def _as_matrix(data, name: str = "data") -> np.ndarray:
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"{name} must be (n, d), got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DataError(f"{name} contains non-finite values")
    return x


@dataclass(frozen=True)
class PcaModel:
    components: np.ndarray  # (p, d), orthonormal rows
    explained_variance: np.ndarray
    explained_variance_ratio: np.ndarray
    mean: np.ndarray

    def transform(self, data) -> np.ndarray:
        return (np.asarray(data, dtype=np.float64) - self.mean) @ self.components.T

    def inverse_transform(self, scores) -> np.ndarray:
        return np.asarray(scores, dtype=np.float64) @ self.components + self.mean


def pca_fit(data, n_components: int | None = None) -> PcaModel:
    """Eigendecomposition of the sample covariance, components by decreasing variance.

    Each component is signed so its largest-magnitude entry is positive.
    """
    x = _as_matrix(data)
    n, d = x.shape
    if n < 2:
        raise DataError(f"PCA needs at least 2 samples, got {n}")
    p = d if n_components is None else int(n_components)
    if not 1 <= p <= d:
        raise ParameterError(f"n_components must be in [1, {d}], got {p}")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (n - 1)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals, kind="stable")[::-1]
    vals = np.clip(vals[order], 0.0, None)
    vecs = vecs[:, order].T
    peak = np.argmax(np.abs(vecs), axis=1)
    vecs *= np.sign(vecs[np.arange(d), peak])[:, None]
    total = vals.sum()
    ratio = vals / total if total > 0 else np.zeros(d)
    return PcaModel(vecs[:p], vals[:p], ratio[:p], mean)


def _conditional_p(d2: np.ndarray, perplexity: float, tol: float = 1e-5,
                   max_iter: int = 100) -> np.ndarray:
    """Row-wise Gaussian conditionals whose entropy matches log(perplexity)."""
    n = d2.shape[0]
    target = np.log(perplexity)
    P = np.zeros((n, n))
    for i in range(n):
        di = np.delete(d2[i], i)
        di = di - di.min()
        lo, hi, beta = 0.0, np.inf, 1.0
        for _ in range(max_iter):
            w = np.exp(-di * beta)
            s = w.sum()
            H = np.log(s) + beta * np.dot(di, w) / s
            if abs(H - target) < tol:
                break
            if H > target:
                lo = beta
                beta = beta * 2.0 if hi == np.inf else 0.5 * (beta + hi)
            else:
                hi = beta
                beta = 0.5 * (beta + lo)
        P[i, np.arange(n) != i] = w / s
    return P


def tsne_embed(data, perplexity: float = 30.0, iters: int = 1000, seed: int = 0,
               learning_rate: float | None = None, exaggeration: float = 12.0,
               exaggeration_iters: int = 250, init: str = "pca") -> np.ndarray:
    """Exact O(n^2) t-SNE into two dimensions.

    ``learning_rate=None`` scales the step with n as max(n / exaggeration / 4, 50).
    ``init="pca"`` starts from the top two principal scores; ``"random"``
    uses a seeded Gaussian. Identical input rows share one embedded position.
    """
    x = _as_matrix(data)
    n = x.shape[0]
    if n > 5000:
        raise ParameterError(f"exact t-SNE is limited to 5000 points, got {n}")
    if not 0 < perplexity < n / 3.0:
        raise ParameterError(f"perplexity {perplexity} must lie in (0, n/3) for n={n}")
    sq = np.einsum("ij,ij->i", x, x)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * x @ x.T, 0.0)
    P = _conditional_p(d2, perplexity)
    P = (P + P.T) / (2.0 * n)
    P = np.maximum(P, 1e-12)
    lr = max(n / exaggeration / 4.0, 50.0) if learning_rate is None else float(learning_rate)
    rng = np.random.default_rng(seed)
    if init == "pca":
        Y = np.zeros((n, 2))
        p = min(2, x.shape[1])
        Y[:, :p] = pca_fit(x, p).transform(x)
        if p < 2:
            Y[:, 1] = rng.standard_normal(n)
        sd = Y[:, 0].std()
        Y *= 1e-4 / (sd if sd > 0 else 1.0)
    elif init == "random":
        Y = 1e-4 * rng.standard_normal((n, 2))
    else:
        raise ParameterError(f"unknown t-SNE init {init!r}")
    _, group, sizes = np.unique(x, axis=0, return_inverse=True, return_counts=True)
    group = group.ravel()
    tied = bool(np.any(sizes > 1))
    update = np.zeros_like(Y)
    gains = np.ones_like(Y)
    for it in range(iters):
        ex = exaggeration if it < exaggeration_iters else 1.0
        momentum = 0.5 if it < exaggeration_iters else 0.8
        sy = np.einsum("ij,ij->i", Y, Y)
        num = 1.0 / (1.0 + sy[:, None] + sy[None, :] - 2.0 * Y @ Y.T)
        np.fill_diagonal(num, 0.0)
        Q = np.maximum(num / num.sum(), 1e-12)
        W = (ex * P - Q) * num
        grad = 4.0 * (np.diag(W.sum(axis=1)) - W) @ Y
        same = np.sign(grad) == np.sign(update)
        gains = np.where(same, gains * 0.8, gains + 0.2)
        np.maximum(gains, 0.01, out=gains)
        update = momentum * update - lr * gains * grad
        Y = Y + update
        if tied:
            # coincident starts are unstable under rounding, so pin duplicate groups
            centre = np.zeros((sizes.size, 2))
            np.add.at(centre, group, Y)
            Y = centre[group] / sizes[group, None]
        Y -= Y.mean(axis=0)
    return Y


@dataclass(frozen=True)
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    inertia_trace: tuple[float, ...] = field(default=())

    @property
    def inertia(self) -> float:
        return self.inertia_trace[-1]


def _sq_dist(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = (np.einsum("ij,ij->i", x, x)[:, None] + np.einsum("ij,ij->i", c, c)[None, :]
         - 2.0 * x @ c.T)
    return np.maximum(d, 0.0)


def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centres = [x[rng.integers(n)]]
    d2 = _sq_dist(x, centres[0][None])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        i = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centres.append(x[i])
        d2 = np.minimum(d2, _sq_dist(x, x[i][None])[:, 0])
    return np.array(centres)


def _lloyd(x: np.ndarray, c: np.ndarray, max_iter: int, tol: float) -> KMeansResult:
    trace = []
    k = c.shape[0]
    for _ in range(max_iter):
        d2 = _sq_dist(x, c)
        labels = np.argmin(d2, axis=1)
        dist = d2[np.arange(x.shape[0]), labels]
        trace.append(float(dist.sum()))
        new = c.copy()
        for j in range(k):
            members = labels == j
            if members.any():
                new[j] = x[members].mean(axis=0)
            else:
                # empty cluster: reseed at the point worst served by its centroid
                far = int(np.argmax(dist))
                new[j] = x[far]
                dist[far] = 0.0
        shift = float(np.max(np.linalg.norm(new - c, axis=1)))
        c = new
        if shift < tol:
            break
    d2 = _sq_dist(x, c)
    labels = np.argmin(d2, axis=1)
    inertia = float(d2[np.arange(x.shape[0]), labels].sum())
    if inertia < trace[-1]:
        trace.append(inertia)
    return KMeansResult(labels, c, tuple(trace))


def kmeans(data, k: int, seed: int = 0, max_iter: int = 300, tol: float = 1e-8,
           n_init: int = 1) -> KMeansResult:
    """Lloyd's algorithm from k-means++ seeds; the best of ``n_init`` restarts is kept."""
    x = _as_matrix(data)
    if k < 1:
        raise ParameterError(f"k must be >= 1, got {k}")
    if x.shape[0] < k:
        raise DataError(f"k-means needs n >= k, got n={x.shape[0]}, k={k}")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, n_init)):
        res = _lloyd(x, _kmeanspp(x, k, rng), max_iter, tol)
        if best is None or res.inertia < best.inertia:
            best = res
    return best


@dataclass(frozen=True)
class GmmResult:
    responsibilities: np.ndarray
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    log_likelihood: tuple[float, ...]

    @property
    def labels(self) -> np.ndarray:
        return np.argmax(self.responsibilities, axis=1)


def _log_gauss(x: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NumericError("GMM covariance is not positive definite after the ridge") from exc
    z = np.linalg.solve(L, (x - mean).T)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    return -0.5 * (np.sum(z * z, axis=0) + logdet + x.shape[1] * np.log(2.0 * np.pi))


def _m_step(x: np.ndarray, resp: np.ndarray, ridge: float):
    nk = resp.sum(axis=0)
    if np.any(nk <= 0):
        raise NumericError("a GMM component lost all responsibility")
    means = resp.T @ x / nk[:, None]
    d = x.shape[1]
    covs = np.empty((resp.shape[1], d, d))
    for j in range(resp.shape[1]):
        xc = x - means[j]
        covs[j] = (resp[:, j, None] * xc).T @ xc / nk[j] + ridge * np.eye(d)
    return nk / x.shape[0], means, covs


def gmm_em(data, k: int, seed: int = 0, max_iter: int = 200, tol: float = 1e-7,
           ridge: float = GMM_RIDGE) -> GmmResult:
    """Full-covariance Gaussian mixture by EM, started from k-means.

    The log-likelihood trace is the mean per-sample log-likelihood.
    """
    x = _as_matrix(data)
    n, d = x.shape
    if n < k * (d + 1):
        raise DataError(f"GMM needs n >= k*(d+1) = {k * (d + 1)}, got {n}")
    init = kmeans(x, k, seed)
    resp = np.zeros((n, k))
    resp[np.arange(n), init.labels] = 1.0
    weights, means, covs = _m_step(x, resp, ridge)
    trace: list[float] = []
    for _ in range(max_iter):
        logp = np.column_stack([_log_gauss(x, means[j], covs[j]) for j in range(k)]) + np.log(weights)
        norm = logsumexp(logp, axis=1)
        resp = np.exp(logp - norm[:, None])
        trace.append(float(norm.mean()))
        if len(trace) > 1 and trace[-1] - trace[-2] < tol:
            break
        weights, means, covs = _m_step(x, resp, ridge)
    return GmmResult(resp, weights, means, covs, tuple(trace))


def cosine_affinity(spectra) -> np.ndarray:
    """A_ij = (1 + cos(x_i, x_j)) / 2 with a unit diagonal."""
    x = _as_matrix(spectra, "spectra")
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms == 0):
        raise DataError(f"{int(np.sum(norms == 0))} zero spectra; mask them before clustering")
    u = x / norms[:, None]
    A = np.clip(0.5 * (1.0 + u @ u.T), 0.0, 1.0)
    A = 0.5 * (A + A.T)
    np.fill_diagonal(A, 1.0)
    return A


def spectral_cluster(affinity, k: int = 4, seed: int = 0, n_init: int = 10) -> np.ndarray:
    """Normalized-Laplacian embedding followed by k-means on the row-normalised eigenvectors."""
    A = np.asarray(affinity, dtype=np.float64)
    n = A.shape[0]
    if A.ndim != 2 or A.shape[1] != n:
        raise ShapeError(f"affinity must be square, got {A.shape}")
    if n < k:
        raise DataError(f"spectral clustering needs n >= k, got n={n}, k={k}")
    if np.any(A < 0) or not np.allclose(A, A.T, atol=1e-12):
        raise GraphError("affinity must be symmetric and non-negative")
    deg = A.sum(axis=1)
    if np.any(deg <= 0):
        raise GraphError("affinity graph has a zero-degree node")
    s = 1.0 / np.sqrt(deg)
    L = np.eye(n) - s[:, None] * A * s[None, :]
    _, vecs = eigh(L, subset_by_index=[0, k - 1])
    norms = np.linalg.norm(vecs, axis=1)
    emb = vecs / np.where(norms > 0, norms, 1.0)[:, None]
    return kmeans(emb, k, seed, n_init=n_init).labels


def cluster_pixels(px: np.ndarray, k: int = 4, max_n: int = 4096, seed: int = 0) -> np.ndarray:
    """Spectral clustering on a seeded subsample of rows; the rest join the nearest cosine mean."""
    px = _as_matrix(px, "pixels")
    n = px.shape[0]
    if n < k:
        raise DataError(f"only {n} tissue pixels for k={k}")
    if n <= max_n:
        pick = np.arange(n)
    else:
        pick = np.sort(np.random.default_rng(seed).choice(n, max_n, replace=False))
    sub = spectral_cluster(cosine_affinity(px[pick]), k, seed)
    labels = np.empty(n, dtype=np.int64)
    labels[pick] = sub
    if pick.size < n:
        means = np.array([px[pick][sub == j].mean(axis=0) for j in range(k)])
        mn = means / np.linalg.norm(means, axis=1, keepdims=True)
        rest = np.setdiff1d(np.arange(n), pick)
        labels[rest] = np.argmax(px[rest] @ mn.T / np.linalg.norm(px[rest], axis=1)[:, None], axis=1)
    return labels


def labels_to_map(flat: np.ndarray, mask: np.ndarray, k: int, step: str) -> LabelMap:
    out = np.full(mask.shape, LABEL_SENTINEL, dtype=np.int64)
    out[mask] = flat
    return LabelMap(out, k, mask, (step,))


def subsample_and_extend(cube: HyperCube, k: int = 4, max_n: int = 4096,
                         seed: int = 0) -> LabelMap:
    """Cluster a cube's tissue pixels by cosine-affinity spectral clustering."""
    lab = labels_to_map(cluster_pixels(cube.pixels(), k, max_n, seed), cube.mask, k,
                        "spectral_cluster")
    return LabelMap(lab.labels, k, cube.mask, cube.provenance + ("spectral_cluster",))


def smooth_labels(labels: LabelMap, radius: int = 1) -> LabelMap:
    """Majority vote in the (2r+1)^2 window; ties keep the original label."""
    if radius < 1:
        raise ParameterError(f"radius must be >= 1, got {radius}")
    out = kernels.majority_filter(labels.labels.astype(np.int64), labels.mask, int(radius), labels.k)
    out = np.where(labels.mask, out, LABEL_SENTINEL)
    return LabelMap(out, labels.k, labels.mask, labels.provenance + ("smooth_labels",),
                    labels.class_names)


def adjusted_rand_index(a, b) -> float:
    """Adjusted Rand index over pixels unmasked in both labelings."""
    if isinstance(a, LabelMap) and isinstance(b, LabelMap):
        if a.shape != b.shape:
            raise ShapeError(f"label maps differ in shape: {a.shape} vs {b.shape}")
        keep = a.mask & b.mask
        x, y = a.labels[keep].astype(np.int64), b.labels[keep].astype(np.int64)
    else:
        x, y = np.ravel(np.asarray(a)), np.ravel(np.asarray(b))
        if x.shape != y.shape:
            raise ShapeError(f"labelings differ in length: {x.size} vs {y.size}")
    n = x.size
    if n < 2:
        return 1.0
    _, xi = np.unique(x, return_inverse=True)
    _, yi = np.unique(y, return_inverse=True)
    table = np.zeros((xi.max() + 1, yi.max() + 1), dtype=np.int64)
    np.add.at(table, (xi, yi), 1)
    index = comb(table, 2).sum()
    rows = comb(table.sum(axis=1), 2).sum()
    cols = comb(table.sum(axis=0), 2).sum()
    expected = rows * cols / comb(n, 2)
    top = 0.5 * (rows + cols)
    if top == expected:
        return 1.0
    return float((index - expected) / (top - expected))
