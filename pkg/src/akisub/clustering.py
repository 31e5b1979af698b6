"""Two-dimensional embeddings (PCA, autoencoder, t-SNE), K-means clustering,
and cluster-count selection by the McClain-Rao index.

t-SNE is the exact O(n^2) formulation: per-point Gaussian bandwidths solved by
bisection to match the target perplexity, symmetrized affinities, Student-t
low-dimensional kernel, and gradient descent with early exaggeration and
momentum (0.5 before iteration 250, 0.8 after; learning rate n/12 by default).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tape, Tensor, backward
from .errors import ArgumentError, DegenerateInputError

_MACHINE_EPS = 1e-12


# ---------------------------------------------------------------------------
# PCA
# ---------------------------------------------------------------------------

def pca_project(X: np.ndarray, out_dim: int = 2) -> np.ndarray:
    """Project onto the top principal directions found by power iteration with
    deflation; each component's largest-magnitude coordinate is made positive."""
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    if n < 2 or d < 2:
        raise ArgumentError(f"pca_project needs at least a 2x2 matrix, got {X.shape}")
    Xc = X - X.mean(axis=0)
    cov = Xc.T @ Xc / (n - 1)
    if np.trace(cov) <= _MACHINE_EPS:
        raise DegenerateInputError("pca_project: input has zero variance")
    components: list[np.ndarray] = []
    work = cov.copy()
    rng = np.random.default_rng(0)

    def orthogonalize(vec):
        for c in components:
            vec = vec - (c @ vec) * c
        return vec

    for _ in range(out_dim):
        v = orthogonalize(rng.standard_normal(d))
        norm = np.linalg.norm(v)
        v = v / norm if norm > 0 else _basis_completion(components, d)
        for _ in range(5000):
            w = orthogonalize(work @ v)
            norm = np.linalg.norm(w)
            if norm <= _MACHINE_EPS * max(1.0, np.abs(work).max()):
                # remaining spectrum is (numerically) zero: any orthonormal
                # completion carries ~zero variance
                v = _basis_completion(components, d)
                break
            w /= norm
            if np.linalg.norm(w - v) < 1e-13 or np.linalg.norm(w + v) < 1e-13:
                v = w
                break
            v = w
        lam = float(v @ work @ v)
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        components.append(v)
        work = work - lam * np.outer(v, v)
    return Xc @ np.stack(components).T


def _basis_completion(components, d):
    for i in range(d):
        v = np.zeros(d)
        v[i] = 1.0
        for c in components:
            v -= (c @ v) * c
        norm = np.linalg.norm(v)
        if norm > 1e-8:
            return v / norm
    raise DegenerateInputError("could not complete an orthonormal basis")


def pca_reconstruction_error(X: np.ndarray, out_dim: int = 2) -> float:
    """Mean squared reconstruction error of the PCA projection (optimal linear)."""
    X = np.asarray(X, dtype=np.float64)
    Xc = X - X.mean(axis=0)
    Y = pca_project(X, out_dim)
    comps, *_ = np.linalg.lstsq(Y, Xc, rcond=None)
    return float(((Xc - Y @ comps) ** 2).mean())


# ---------------------------------------------------------------------------
# autoencoder
# ---------------------------------------------------------------------------

@dataclass
class AutoencoderResult:
    embedding: np.ndarray
    params: dict[str, Tensor]
    loss_history: list[float]
    reconstruction_error: float


def _autoencoder_forward(params, X: Tensor, activation: str):
    code = ad.add(ad.matmul(X, params["w_enc"]), params["b_enc"])
    if activation == "tanh":
        code = ad.tanh(code)
    recon = ad.add(ad.matmul(code, params["w_dec"]), params["b_dec"])
    return code, recon


def autoencoder_loss(params, X: Tensor, activation: str = "linear") -> Tensor:
    _, recon = _autoencoder_forward(params, X, activation)
    diff = ad.sub(recon, X)
    return ad.mul(ad.reduce_sum(ad.mul(diff, diff)), 1.0 / X.data.size)


def init_autoencoder_params(rng, d: int, bottleneck: int) -> dict[str, Tensor]:
    return {
        "w_enc": nn.uniform_init(rng, d, bottleneck),
        "b_enc": nn.uniform_init(rng, bottleneck),
        "w_dec": nn.uniform_init(rng, bottleneck, d),
        "b_dec": nn.uniform_init(rng, d),
    }


def autoencoder_embed(X: np.ndarray, bottleneck: int = 2, epochs: int = 400,
                      lr: float = 0.01, seed: int = 0,
                      activation: str = "linear") -> AutoencoderResult:
    """Symmetric single-hidden-layer autoencoder trained on the squared
    reconstruction loss; returns the bottleneck activations."""
    X = np.asarray(X, dtype=np.float64)
    n, d = X.shape
    if n < 2 or d < 2:
        raise ArgumentError(f"autoencoder_embed needs at least a 2x2 matrix, got {X.shape}")
    mean = X.mean(axis=0)
    Xc = Tensor(X - mean)
    rng = np.random.default_rng(seed)
    params = init_autoencoder_params(rng, d, bottleneck)
    opt = nn.Adam(lr=lr)
    history = []
    for _ in range(epochs):
        with Tape() as tape:
            loss = autoencoder_loss(params, Xc, activation)
        grads = backward(tape, loss)
        params = opt.step(params, grads)
        history.append(loss.item())
    code, recon = _autoencoder_forward(params, Xc, activation)
    err = float(((recon.data - Xc.data) ** 2).mean())
    return AutoencoderResult(embedding=code.data, params=params,
                             loss_history=history, reconstruction_error=err)


# ---------------------------------------------------------------------------
# t-SNE
# ---------------------------------------------------------------------------

@dataclass
class TsneResult:
    embedding: np.ndarray
    kl_history: list[float]


def _conditional_affinities(D_row: np.ndarray, beta: float) -> np.ndarray:
    p = np.exp(-D_row * beta)
    s = p.sum()
    return p / s if s > 0 else np.full_like(p, 1.0 / len(p))


def _solve_bandwidths(D: np.ndarray, perplexity: float) -> np.ndarray:
    """Bisection on per-point precision beta so row entropy matches log(perplexity)."""
    n = D.shape[0]
    target = np.log(perplexity)
    P = np.zeros((n, n))
    for i in range(n):
        row = np.delete(D[i], i)
        beta, lo, hi = 1.0, 0.0, np.inf
        for _ in range(60):
            p = _conditional_affinities(row, beta)
            entropy = -np.sum(p * np.log(np.maximum(p, _MACHINE_EPS)))
            if abs(entropy - target) < 1e-7:
                break
            if entropy > target:  # too flat -> increase beta
                lo = beta
                beta = beta * 2.0 if hi == np.inf else (beta + hi) / 2.0
            else:
                hi = beta
                beta = (lo + beta) / 2.0
        p = _conditional_affinities(row, beta)
        P[i, np.arange(n) != i] = p
    return P


def tsne_embed(X: np.ndarray, perplexity: float = 30.0, iters: int = 1000,
               seed: int = 0, early_exaggeration: float = 12.0,
               exaggeration_iters: int = 250, learning_rate: float | None = None,
               ) -> TsneResult:
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n <= 3 * perplexity:
        raise ArgumentError(f"perplexity {perplexity} infeasible for n={n} "
                            "(need n > 3*perplexity)")
    sq = (X * X).sum(axis=1)
    D = np.maximum(sq[:, None] + sq[None, :] - 2.0 * X @ X.T, 0.0)
    cond = _solve_bandwidths(D, perplexity)
    P = (cond + cond.T) / (2.0 * n)
    P = np.maximum(P, _MACHINE_EPS)

    if learning_rate is None:
        learning_rate = n / 12.0
    rng = np.random.default_rng(seed)
    Y = 1e-4 * rng.standard_normal((n, 2))
    velocity = np.zeros_like(Y)
    gains = np.ones_like(Y)
    kl_history: list[float] = []
    for it in range(iters):
        exaggerate = early_exaggeration if it < exaggeration_iters else 1.0
        momentum = 0.5 if it < exaggeration_iters else 0.8
        ysq = (Y * Y).sum(axis=1)
        num = 1.0 / (1.0 + np.maximum(ysq[:, None] + ysq[None, :] - 2.0 * Y @ Y.T, 0.0))
        np.fill_diagonal(num, 0.0)
        Q = np.maximum(num / num.sum(), _MACHINE_EPS)
        kl = float(np.sum(P * np.log(P / Q)))
        kl_history.append(kl)
        PQ = (exaggerate * P - Q) * num
        grad = 4.0 * ((np.diag(PQ.sum(axis=1)) - PQ) @ Y)
        # per-coordinate adaptive gains, as in the reference implementation
        same_sign = np.sign(grad) == np.sign(velocity)
        gains = np.where(same_sign, gains * 0.8, gains + 0.2)
        gains = np.maximum(gains, 0.01)
        velocity = momentum * velocity - learning_rate * gains * grad
        Y = Y + velocity
    return TsneResult(embedding=Y, kl_history=kl_history)


# ---------------------------------------------------------------------------
# K-means
# ---------------------------------------------------------------------------

@dataclass
class ClusterAssignment:
    labels: np.ndarray
    centroids: np.ndarray
    inertia: float


def _plus_plus_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centroids = [X[rng.integers(n)]]
    for _ in range(1, k):
        d2 = np.min(((X[:, None, :] - np.stack(centroids)[None]) ** 2).sum(axis=2), axis=1)
        total = d2.sum()
        if total <= 0:
            centroids.append(X[rng.integers(n)].copy())
            continue
        centroids.append(X[rng.choice(n, p=d2 / total)].copy())
    return np.stack(centroids)


def _lloyd(X: np.ndarray, centroids: np.ndarray, max_iters: int = 300):
    prev_inertia = np.inf
    labels = None
    for _ in range(max_iters):
        d2 = ((X[:, None, :] - centroids[None]) ** 2).sum(axis=2)
        new_labels = d2.argmin(axis=1)
        reseeded = False
        for c in range(centroids.shape[0]):  # reseed empty clusters at the worst point
            if not np.any(new_labels == c):
                far = int(d2[np.arange(len(X)), new_labels].argmax())
                new_labels[far] = c
                reseeded = True
        inertia = float(((X - centroids[new_labels]) ** 2).sum())
        if not reseeded and inertia > prev_inertia + 1e-9 * max(1.0, prev_inertia):
            raise AssertionError("k-means inertia increased across a Lloyd iteration")
        prev_inertia = np.inf if reseeded else inertia
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for c in range(centroids.shape[0]):
            centroids[c] = X[labels == c].mean(axis=0)
    inertia = float(((X - centroids[labels]) ** 2).sum())
    return labels, centroids, inertia


def kmeans(X: np.ndarray, k: int, seed: int = 0, restarts: int = 10) -> ClusterAssignment:
    """k-means++ seeding, Lloyd iterations to an assignment fixpoint, best of
    `restarts` runs by inertia."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if k < 1 or k > n:
        raise ArgumentError(f"k={k} out of range for n={n}")
    best = None
    for r in range(restarts):
        rng = np.random.default_rng([seed, r])
        labels, centroids, inertia = _lloyd(X, _plus_plus_init(X, k, rng))
        if best is None or inertia < best.inertia:
            best = ClusterAssignment(labels=labels, centroids=centroids, inertia=inertia)
    return best


def mcclain_rao(X: np.ndarray, labels: np.ndarray) -> float:
    """(mean within-cluster distance) / (mean between-cluster distance); lower is better."""
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels)
    ks = np.unique(labels)
    if len(ks) < 2:
        raise ArgumentError("mcclain_rao needs at least 2 clusters")
    for c in ks:
        if not np.any(labels == c):
            raise ArgumentError(f"cluster {c} is empty")
    diff = X[:, None, :] - X[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=2))
    same = labels[:, None] == labels[None, :]
    iu = np.triu_indices(len(X), k=1)
    within = dist[iu][same[iu]]
    between = dist[iu][~same[iu]]
    if len(within) == 0 or len(between) == 0:
        raise ArgumentError("mcclain_rao needs both within- and between-cluster pairs")
    return float((within.mean()) / (between.mean()))


def select_k(X: np.ndarray, k_range, seed: int = 0, restarts: int = 10,
             rel_tol: float = 0.40) -> tuple[int, list[tuple[int, float]]]:
    """Run kmeans for each k and pick the cluster count by the McClain-Rao index.

    The index keeps decreasing when compact clusters are over-split (about 10%
    per extra k on tight blobs, more on t-SNE layouts), so the smallest k whose
    index lies within `rel_tol` of the minimum is returned (rel_tol=0 gives the
    raw argmin). Merging genuinely distinct clusters roughly doubles the index,
    so the parsimony tolerance does not mask true structure. The full
    (k, index) table comes back for reporting.
    """
    ks = sorted(set(int(k) for k in k_range))
    if not ks:
        raise ArgumentError("empty k range")
    n = len(X)
    if ks[0] < 2 or ks[-1] > n - 1:
        raise ArgumentError(f"k range {ks} outside [2, {n - 1}]")
    table = []
    for k in ks:
        assignment = kmeans(X, k, seed=seed, restarts=restarts)
        table.append((k, mcclain_rao(X, assignment.labels)))
    floor = min(v for _, v in table)
    best_k = next(k for k, v in table if v <= floor * (1.0 + rel_tol))
    return best_k, table


def adjusted_rand_index(labels_a, labels_b) -> float:
    """Chance-corrected agreement between two partitions of the same items."""
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape:
        raise ArgumentError(f"label vectors differ in length: {a.shape} vs {b.shape}")
    n = len(a)
    cats_a, inv_a = np.unique(a, return_inverse=True)
    cats_b, inv_b = np.unique(b, return_inverse=True)
    table = np.zeros((len(cats_a), len(cats_b)))
    np.add.at(table, (inv_a, inv_b), 1)

    def comb2(x):
        return x * (x - 1) / 2.0

    sum_ij = comb2(table).sum()
    sum_a = comb2(table.sum(axis=1)).sum()
    sum_b = comb2(table.sum(axis=0)).sum()
    expected = sum_a * sum_b / comb2(n)
    max_index = (sum_a + sum_b) / 2.0
    if max_index == expected:
        return 1.0
    return float((sum_ij - expected) / (max_index - expected))
