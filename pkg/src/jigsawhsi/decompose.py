"""Band-dimensionality reduction: PCA, factor analysis, truncated SVD and NMF.

All fits run in float64 on an N x B pixel matrix and produce a B x c loading
matrix.  ``reduce_cube`` applies a fit to a whole cube and returns float32.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError
from .hsi_io import HSICube, payload_path, read_header, write_header

_MODULE = "decompose"

METHODS = ("PCA", "FA", "TSVD", "NMF")
ALIASES = {"SVD": "TSVD", "TRUNCATEDSVD": "TSVD", "FACTORANALYSIS": "FA"}

FA_MAX_ITER = 1000
FA_TOL = 1e-3
NMF_MAX_ITER = 200
NMF_TOL = 1e-4
NMF_TRANSFORM_ITER = 200
_TINY = 1e-12


def canonical_method(name: str) -> str:
    key = name.strip().upper().replace("_", "").replace("-", "")
    key = ALIASES.get(key, key)
    if key not in METHODS:
        raise ValidationError(f"unknown decomposition {name!r}; expected one of PCA, FA, SVD/TSVD, NMF", _MODULE)
    return key


@dataclass
class Decomposer:
    method: str
    components: int
    mean: np.ndarray  # (B,)
    loadings: np.ndarray  # (B, c)
    noise_variance: np.ndarray | None = None  # FA only, (B,)
    shift: float = 0.0  # NMF only: constant added to make inputs nonnegative
    explained_variance: np.ndarray | None = None  # PCA only
    n_iter: int = 0
    objective: float = float("nan")
    history: list = field(default_factory=list, compare=False)

    def __post_init__(self):
        # Memory layout changes BLAS summation order; a reloaded fit must transform bit-identically.
        for name in ("mean", "loadings", "noise_variance", "explained_variance"):
            value = getattr(self, name)
            if value is not None:
                setattr(self, name, np.ascontiguousarray(value, dtype=np.float64))

    @property
    def bands(self) -> int:
        return self.loadings.shape[0]

    def transform(self, X):
        return transform(self, X)

    def inverse_transform(self, Z):
        """Map scores back to band space (PCA/TSVD/NMF)."""
        Z = np.asarray(Z, dtype=np.float64)
        if self.method == "PCA":
            return Z @ self.loadings.T + self.mean
        if self.method == "TSVD":
            return Z @ self.loadings.T
        if self.method == "NMF":
            return Z @ self.loadings.T - self.shift
        return Z @ self.loadings.T + self.mean


def _fix_signs(V: np.ndarray) -> np.ndarray:
    # Largest-magnitude entry of each column made positive.
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[idx, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def _check_fit_input(X, c):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValidationError(f"expected an N x B matrix, got shape {X.shape}", _MODULE)
    n, b = X.shape
    if not isinstance(c, (int, np.integer)) or c < 1:
        raise ValidationError(f"components must be a positive integer, got {c!r}", _MODULE)
    if c > b:
        raise ValidationError(f"components c={c} exceeds band count B={b}", _MODULE)
    if n < c:
        raise ValidationError(f"need at least c={c} samples, got N={n}", _MODULE)
    if not np.all(np.isfinite(X)):
        raise ValidationError("input contains non-finite values", _MODULE)
    return X


# ---------------------------------------------------------------- PCA / TSVD

def _fit_pca(X, c):
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / X.shape[0]
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:c]
    evals = np.clip(evals[order], 0.0, None)
    return Decomposer("PCA", c, mean, _fix_signs(evecs[:, order]), explained_variance=evals)


def _fit_tsvd(X, c):
    _, s, vt = np.linalg.svd(X, full_matrices=False)
    loadings = _fix_signs(vt[:c].T)
    return Decomposer("TSVD", c, np.zeros(X.shape[1]), loadings, explained_variance=s[:c] ** 2 / X.shape[0])


# ---------------------------------------------------------------- factor analysis

def fa_log_likelihood(S, L, psi, n) -> float:
    """Gaussian log-likelihood of N samples with covariance S under LL^T + diag(psi)."""
    b = S.shape[0]
    sigma = L @ L.T + np.diag(psi)
    sign, logdet = np.linalg.slogdet(sigma)
    if sign <= 0:
        return -np.inf
    trace = np.trace(np.linalg.solve(sigma, S))
    return -0.5 * n * (b * np.log(2 * np.pi) + logdet + trace)


def _fit_fa(X, c, max_iter=FA_MAX_ITER, tol=FA_TOL):
    n, b = X.shape
    mean = X.mean(axis=0)
    Xc = X - mean
    S = Xc.T @ Xc / n
    var = np.diag(S).copy()
    if var.max() <= 0:
        raise ValidationError("factor analysis on data with zero variance in every band", _MODULE)
    psi_floor = _TINY * var.max()

    # Start from the principal subspace of the sample covariance.
    evals, evecs = np.linalg.eigh(S)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    resid = evals[c:].mean() if c < b else 0.0
    L = evecs[:, :c] * np.sqrt(np.clip(evals[:c] - resid, psi_floor, None))
    psi = np.clip(var - np.sum(L * L, axis=1), psi_floor, None)

    eye = np.eye(c)
    history = [fa_log_likelihood(S, L, psi, n)]
    it = 0
    for it in range(1, max_iter + 1):
        # E-step: posterior of the factors given the current model.
        sigma = L @ L.T + np.diag(psi)
        beta = np.linalg.solve(sigma, L).T  # c x B
        ezz = eye - beta @ L + beta @ S @ beta.T
        # M-step.
        L = np.linalg.solve(ezz.T, (S @ beta.T).T).T
        psi = np.clip(np.diag(S - L @ beta @ S), psi_floor, None)
        history.append(fa_log_likelihood(S, L, psi, n))
        if history[-1] - history[-2] < tol:
            break

    d = Decomposer("FA", c, mean, L, noise_variance=psi, n_iter=it, objective=history[-1])
    d.history = history
    return d


# ---------------------------------------------------------------- NMF

def nmf_objective(X, W, H) -> float:
    """Frobenius reconstruction error ||X - W H^T||_F^2 / 2 ."""
    R = X - W @ H.T
    return 0.5 * float(np.sum(R * R))


def _nmf_update_coefficients(X, W, H):
    return W * (X @ H) / np.maximum(W @ (H.T @ H), _TINY)


def _fit_nmf(X, c, seed, max_iter=NMF_MAX_ITER, tol=NMF_TOL):
    shift = 0.0
    xmin = X.min()
    if xmin < 0:
        shift = -float(xmin)
        X = X + shift
    n, b = X.shape
    rng = np.random.default_rng(seed)
    scale = np.sqrt(max(X.mean(), _TINY) / c)
    W = rng.uniform(0.0, 1.0, size=(n, c)) * scale
    H = rng.uniform(0.0, 1.0, size=(b, c)) * scale

    history = [nmf_objective(X, W, H)]
    it = 0
    for it in range(1, max_iter + 1):
        W = _nmf_update_coefficients(X, W, H)
        H = H * (X.T @ W) / np.maximum(H @ (W.T @ W), _TINY)
        history.append(nmf_objective(X, W, H))
        prev = history[-2]
        if prev <= 0 or (prev - history[-1]) / prev < tol:
            break

    d = Decomposer("NMF", c, np.zeros(b), H, shift=shift, n_iter=it, objective=history[-1])
    d.history = history
    d.fit_coefficients = W
    return d


# ---------------------------------------------------------------- public API

def fit(method: str, X, c: int, seed: int = 0) -> Decomposer:
    method = canonical_method(method)
    X = _check_fit_input(X, c)
    if method == "PCA":
        return _fit_pca(X, c)
    if method == "TSVD":
        return _fit_tsvd(X, c)
    if method == "FA":
        return _fit_fa(X, c)
    return _fit_nmf(X, c, seed)


def transform(d: Decomposer, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != d.bands:
        raise ValidationError(f"decomposer was fit on B={d.bands} bands, got input of shape {X.shape}", _MODULE)
    if d.method == "PCA":
        return (X - d.mean) @ d.loadings
    if d.method == "TSVD":
        return X @ d.loadings
    if d.method == "FA":
        L, psi = d.loadings, d.noise_variance
        lt_psi = L.T / psi
        precision = lt_psi @ L + np.eye(d.components)
        return np.linalg.solve(precision, lt_psi @ (X - d.mean).T).T
    Xs = np.clip(X + d.shift, 0.0, None)
    H = d.loadings
    # Per-row start keeps the output of each row independent of the others.
    scale = np.sqrt(np.maximum(Xs.mean(axis=1, keepdims=True), _TINY) / d.components)
    W = np.repeat(scale, d.components, axis=1)
    for _ in range(NMF_TRANSFORM_ITER):
        W = _nmf_update_coefficients(Xs, W, H)
    return W


def reduce_cube(cube: HSICube, method: str, c: int, seed: int = 0, fit_mask=None) -> tuple[HSICube, Decomposer]:
    """Fit on the cube's pixels (all of them, or those selected by ``fit_mask``) and transform every pixel.

    Returns the reduced float32 cube and the fitted decomposer for reuse at prediction time.
    """
    X = cube.pixels().astype(np.float64)
    fit_rows = X if fit_mask is None else X[np.asarray(fit_mask, dtype=bool).ravel()]
    d = fit(method, fit_rows, c, seed)
    return apply_decomposer(d, cube), d


def apply_decomposer(d: Decomposer, cube: HSICube) -> HSICube:
    Z = transform(d, cube.pixels().astype(np.float64))
    return HSICube(Z.reshape(cube.height, cube.width, d.components).astype(np.float32))


# ---------------------------------------------------------------- persistence

def _array_fields(d: Decomposer):
    arrays = [("mean", d.mean), ("loadings", d.loadings)]
    if d.noise_variance is not None:
        arrays.append(("noise_variance", d.noise_variance))
    if d.explained_variance is not None:
        arrays.append(("explained_variance", d.explained_variance))
    return arrays


def save_decomposer(d: Decomposer, header_path) -> None:
    header_path = Path(header_path)
    data_path = payload_path(header_path)
    arrays = _array_fields(d)
    fields = {
        "format": "jigsawhsi-decomposer",
        "method": d.method,
        "components": d.components,
        "bands": d.bands,
        "shift": repr(float(d.shift)),
        "n_iter": d.n_iter,
        "objective": repr(float(d.objective)),
        "dtype": "float64",
        "byteorder": "le",
        "arrays": ",".join(name for name, _ in arrays),
        "data_file": data_path.name,
    }
    for name, arr in arrays:
        fields[f"shape.{name}"] = "x".join(str(s) for s in arr.shape)
    payload = np.concatenate([np.asarray(a, dtype="<f8").ravel() for _, a in arrays])
    try:
        payload.tofile(data_path)
    except OSError as exc:
        raise FormatError(f"cannot write {data_path}: {exc.strerror or exc}", _MODULE) from exc
    write_header(header_path, fields, comment="jigsawhsi decomposer")


def load_decomposer(header_path) -> Decomposer:
    header_path = Path(header_path)
    fields = read_header(header_path)
    if fields.get("format") != "jigsawhsi-decomposer":
        raise FormatError(f"{header_path}: not a decomposer file", _MODULE)
    data_path = header_path.parent / fields["data_file"] if "data_file" in fields else payload_path(header_path)
    if not data_path.is_file():
        raise FileNotFoundError(f"data file not found: {data_path}")
    payload = np.fromfile(data_path, dtype="<f8")
    arrays, offset = {}, 0
    for name in fields["arrays"].split(","):
        shape = tuple(int(s) for s in fields[f"shape.{name}"].split("x"))
        size = int(np.prod(shape))
        if offset + size > payload.size:
            raise FormatError(f"{data_path}: payload too short for array {name!r}", _MODULE)
        arrays[name] = payload[offset:offset + size].reshape(shape).astype(np.float64)
        offset += size
    if offset != payload.size:
        raise FormatError(f"{data_path}: {payload.size - offset} trailing values in payload", _MODULE)
    return Decomposer(
        method=canonical_method(fields["method"]),
        components=int(fields["components"]),
        mean=arrays["mean"],
        loadings=arrays["loadings"],
        noise_variance=arrays.get("noise_variance"),
        explained_variance=arrays.get("explained_variance"),
        shift=float(fields["shift"]),
        n_iter=int(fields["n_iter"]),
        objective=float(fields["objective"]),
    )
