"""Datasets, the sigmoid finite-sum loss and linear constraint systems."""

from __future__ import annotations

import io
import warnings
from dataclasses import dataclass, field
from typing import Optional, TextIO

import numpy as np
import scipy.optimize
import scipy.sparse as sp
import scipy.sparse.linalg

__all__ = [
    "C_SIG", "Dataset", "ParseError", "parse_libsvm", "serialize_libsvm",
    "sigmoid_loss", "sigmoid_grad", "sigmoid_sample_grads", "estimate_lipschitz",
    "SigmoidLoss", "QuadraticLoss", "RegularizerSpec", "ConstraintSystem",
    "GramSolver", "build_constraint", "smallest_positive_eigenpair",
    "read_dense_matrix", "write_dense_matrix", "read_edge_list", "ProblemSpec",
]

# Dense copies of the sample matrix are kept below this many entries.
_DENSE_LIMIT = 20_000_000


def _sigmoid_curvature(u):
    # second derivative of u -> 1/(1+e^u) is p(1-p)(1-2p) with p = 1/(1+e^-u)
    p = 0.5 * (1.0 + np.tanh(0.5 * u))
    return p * (1.0 - p) * (1.0 - 2.0 * p)


def _max_sigmoid_curvature():
    res = scipy.optimize.minimize_scalar(
        lambda u: -abs(_sigmoid_curvature(u)), bounds=(-10.0, 0.0),
        method="bounded", options={"xatol": 1e-10})
    # |s''| is even, so searching [-10, 0] covers [-10, 10]
    return float(abs(_sigmoid_curvature(res.x)))


#: max |d^2/du^2 1/(1+e^u)| over u in [-10, 10]
C_SIG = _max_sigmoid_curvature()


class ParseError(ValueError):
    """Malformed LIBSVM input; ``lineno`` is 1-based."""

    def __init__(self, lineno, msg):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno


@dataclass(frozen=True, eq=False)
class Dataset:
    """Sparse samples ``a_i`` with labels ``b_i`` in {-1, +1}.

    Rows are stored as a CSR matrix with 0-based column indices.
    """

    matrix: sp.csr_matrix
    labels: np.ndarray
    _dense: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        X = sp.csr_matrix(self.matrix, dtype=float)
        X.sort_indices()
        labels = np.asarray(self.labels, dtype=float).ravel()
        if X.shape[0] < 1:
            raise ValueError("dataset needs at least one sample")
        if labels.shape[0] != X.shape[0]:
            raise ValueError("labels and rows differ in length")
        if not np.all((labels == 1.0) | (labels == -1.0)):
            raise ValueError("labels must be -1 or +1")
        object.__setattr__(self, "matrix", X)
        object.__setattr__(self, "labels", labels)
        if X.shape[0] * X.shape[1] <= _DENSE_LIMIT:
            object.__setattr__(self, "_dense", X.toarray())

    @classmethod
    def from_dense(cls, features, labels):
        return cls(sp.csr_matrix(np.asarray(features, dtype=float)), labels)

    @property
    def n_samples(self):
        return self.matrix.shape[0]

    @property
    def n_features(self):
        return self.matrix.shape[1]

    @property
    def rows(self):
        """List of ``(indices, values)`` pairs, one per sample."""
        X = self.matrix
        return [(X.indices[X.indptr[i]:X.indptr[i + 1]].copy(),
                 X.data[X.indptr[i]:X.indptr[i + 1]].copy())
                for i in range(X.shape[0])]

    def features(self, idx=None):
        """Sample rows for ``idx`` (all rows if None) as a dense array or CSR."""
        src = self._dense if self._dense is not None else self.matrix
        if idx is None:
            return src
        return src[np.asarray(idx)]

    def row_norms_sq(self):
        return np.asarray(self.matrix.multiply(self.matrix).sum(axis=1)).ravel()


def parse_libsvm(stream: TextIO | str, n_features: Optional[int] = None) -> Dataset:
    """Read LIBSVM text (1-based indices) into a :class:`Dataset`.

    Label ``0`` is mapped to ``-1``; ``1``/``+1``/``-1`` keep their sign.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    labels, indptr, indices, data = [], [0], [], []
    for lineno, line in enumerate(stream, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            lab = float(tokens[0])
        except ValueError:
            raise ParseError(lineno, f"bad label {tokens[0]!r}") from None
        if lab == 0.0 or lab == -1.0:
            labels.append(-1.0)
        elif lab == 1.0:
            labels.append(1.0)
        else:
            raise ParseError(lineno, f"label {tokens[0]!r} not in {{-1, 0, 1}}")
        last = 0
        for tok in tokens[1:]:
            key, sep, val = tok.partition(":")
            try:
                if not sep:
                    raise ValueError
                j, v = int(key), float(val)
            except ValueError:
                raise ParseError(lineno, f"malformed token {tok!r}") from None
            if j < 1:
                raise ParseError(lineno, f"index {j} must be >= 1")
            if j <= last:
                raise ParseError(lineno, f"index {j} not increasing")
            last = j
            indices.append(j - 1)
            data.append(v)
        indptr.append(len(indices))
    if not labels:
        raise ParseError(0, "no samples")
    width = max(indices) + 1 if indices else 0
    if n_features is not None:
        if n_features < width:
            raise ValueError(f"n_features={n_features} below max index {width}")
        width = n_features
    X = sp.csr_matrix((np.array(data, dtype=float), np.array(indices, dtype=np.int64),
                       np.array(indptr, dtype=np.int64)), shape=(len(labels), width))
    return Dataset(X, np.array(labels))


def serialize_libsvm(dataset: Dataset) -> str:
    """Canonical LIBSVM text: ``+1``/``-1`` labels, 1-based indices, ``repr`` floats."""
    out = []
    for lab, (idx, val) in zip(dataset.labels, dataset.rows):
        toks = ["+1" if lab > 0 else "-1"]
        toks += [f"{j + 1}:{float(v)!r}" for j, v in zip(idx, val)]
        out.append(" ".join(toks))
    return "\n".join(out) + "\n"


def _index_set(dataset, index_set):
    if index_set is None:
        return None
    idx = np.asarray(index_set, dtype=np.int64).ravel()
    if idx.size == 0:
        raise ValueError("empty index set")
    if idx.min() < 0 or idx.max() >= dataset.n_samples:
        raise IndexError("sample index out of range")
    return idx


def _margins(dataset, x, idx):
    X = dataset.features(idx)
    b = dataset.labels if idx is None else dataset.labels[idx]
    return X, b, b * (X @ x)


def _sigmoid_values(u):
    # 1/(1+e^u) evaluated through e^{-|u|}
    e = np.exp(-np.abs(u))
    return np.where(u >= 0, e / (1.0 + e), 1.0 / (1.0 + e))


def _sigmoid_slopes(u):
    # e^u/(1+e^u)^2 = e^{-|u|}/(1+e^{-|u|})^2
    e = np.exp(-np.abs(u))
    return e / (1.0 + e) ** 2


def sigmoid_loss(dataset: Dataset, x, index_set=None) -> float:
    """Mean of ``1/(1+exp(b_i a_i^T x))`` over ``index_set`` (all samples if None)."""
    idx = _index_set(dataset, index_set)
    _, _, u = _margins(dataset, np.asarray(x, dtype=float), idx)
    return float(np.mean(_sigmoid_values(u)))


def sigmoid_grad(dataset: Dataset, x, index_set=None) -> np.ndarray:
    """Gradient of :func:`sigmoid_loss` with respect to ``x``."""
    idx = _index_set(dataset, index_set)
    X, b, u = _margins(dataset, np.asarray(x, dtype=float), idx)
    w = -b * _sigmoid_slopes(u) / u.shape[0]
    return np.asarray(X.T @ w).ravel()


def sigmoid_sample_grads(dataset: Dataset, x, index_set=None) -> np.ndarray:
    """Per-sample gradients stacked as rows, shape ``(|set|, n_features)``."""
    idx = _index_set(dataset, index_set)
    X, b, u = _margins(dataset, np.asarray(x, dtype=float), idx)
    w = -b * _sigmoid_slopes(u)
    if sp.issparse(X):
        return X.multiply(w[:, None]).toarray()
    return X * w[:, None]


def estimate_lipschitz(dataset: Dataset) -> float:
    """Upper bound ``C_SIG * max_i ||a_i||^2`` on the gradient Lipschitz constant."""
    return float(C_SIG * dataset.row_norms_sq().max())


class SigmoidLoss:
    """The smooth finite sum ``f(x) = (1/N) sum_i 1/(1+exp(b_i a_i^T x))``."""

    kind = "sigmoid"

    def __init__(self, dataset: Dataset, lipschitz: Optional[float] = None):
        self.dataset = dataset
        bound = estimate_lipschitz(dataset)
        if lipschitz is not None and lipschitz < bound:
            raise ValueError("lipschitz below the curvature bound")
        self.lipschitz = bound if lipschitz is None else float(lipschitz)
        self._sample_lipschitz = C_SIG * dataset.row_norms_sq()

    @property
    def n_samples(self):
        return self.dataset.n_samples

    @property
    def dim(self):
        return self.dataset.n_features

    def value(self, x, idx=None):
        return sigmoid_loss(self.dataset, x, idx)

    def grad(self, x, idx=None):
        return sigmoid_grad(self.dataset, x, idx)

    def sample_grads(self, x, idx=None):
        return sigmoid_sample_grads(self.dataset, x, idx)

    def sample_lipschitz(self):
        return self._sample_lipschitz


class QuadraticLoss:
    """Least-squares finite sum ``f(x) = (1/N) sum_i (a_i^T x - c_i)^2 / 2``.

    Used as a test bed where the gradient is linear in ``x``.
    """

    kind = "quadratic"

    def __init__(self, features, targets):
        self.features = np.asarray(features, dtype=float)
        self.targets = np.asarray(targets, dtype=float).ravel()
        self._sample_lipschitz = np.sum(self.features ** 2, axis=1)
        self.lipschitz = float(np.linalg.eigvalsh(
            self.features.T @ self.features / self.n_samples).max())

    @property
    def n_samples(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def _rows(self, idx):
        if idx is None:
            return self.features, self.targets
        idx = np.asarray(idx, dtype=np.int64).ravel()
        if idx.size == 0:
            raise ValueError("empty index set")
        return self.features[idx], self.targets[idx]

    def value(self, x, idx=None):
        X, c = self._rows(idx)
        return float(0.5 * np.mean((X @ x - c) ** 2))

    def grad(self, x, idx=None):
        X, c = self._rows(idx)
        return X.T @ (X @ x - c) / X.shape[0]

    def sample_grads(self, x, idx=None):
        X, c = self._rows(idx)
        return X * (X @ x - c)[:, None]

    def sample_lipschitz(self):
        return self._sample_lipschitz

    def hessian(self):
        return self.features.T @ self.features / self.n_samples


@dataclass(frozen=True)
class RegularizerSpec:
    """Nonsmooth term ``g``: ``lambda1 * sum SCAD(|y_i|)``, ``lambda1 * ||y||_1`` or nothing."""

    kind: str = "none"
    lambda1: float = 0.0
    scad_c: float = 3.7
    scad_kappa: float = 0.1

    def __post_init__(self):
        kind = self.kind.upper() if self.kind.lower() != "none" else "none"
        if kind not in ("L1", "SCAD", "none"):
            raise ValueError(f"unknown regularizer {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if self.lambda1 < 0:
            raise ValueError("lambda1 must be nonnegative")
        if kind == "SCAD" and not (self.scad_c > 2 and self.scad_kappa > 0):
            raise ValueError("SCAD needs scad_c > 2 and scad_kappa > 0")


def smallest_positive_eigenpair(A, dense_limit=2000, rtol=1e-10, maxiter=100_000,
                                seed=0):
    """Smallest positive eigenvalue of ``A^T A`` and a unit eigenvector.

    Dense symmetric eigendecomposition when ``A`` has at most ``dense_limit``
    columns; otherwise shifted power iteration on the smaller Gram matrix.
    """
    n = A.shape[1]
    if n <= dense_limit:
        Ad = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
        vals, vecs = np.linalg.eigh(Ad.T @ Ad)
        tol = max(vals[-1], 1.0) * n * np.finfo(float).eps * 100
        pos = np.flatnonzero(vals > tol)
        if pos.size == 0:
            raise ValueError("A^T A has no positive eigenvalue")
        i = pos[0]
        return float(vals[i]), vecs[:, i]
    return _shifted_power(A, rtol, maxiter, seed)


def _shifted_power(A, rtol, maxiter, seed):
    # Works on A^T A restricted to range(A^T): iterates start in that range and
    # are re-projected through A^T (A A^T)^+ A every few steps so that roundoff
    # cannot seed the null space.
    rng = np.random.default_rng(seed)
    m, n = A.shape
    apply = lambda v: A.T @ (A @ v)
    v = A.T @ rng.standard_normal(m)
    v /= np.linalg.norm(v)
    top = 0.0
    for _ in range(maxiter):
        w = apply(v)
        new = float(np.linalg.norm(w))
        v = w / new
        if abs(new - top) <= rtol * new:
            break
        top = new
    top = new
    shift = top * 1.01
    v = A.T @ rng.standard_normal(m)
    v /= np.linalg.norm(v)
    lam = None
    for it in range(maxiter):
        w = shift * v - apply(v)
        if it % 20 == 19:
            # project back onto range(A^T)
            z = scipy.sparse.linalg.lsqr(A.T, w, atol=1e-14, btol=1e-14)[0]
            w = A.T @ z
        nrm = float(np.linalg.norm(w))
        v = w / nrm
        est = shift - nrm
        if lam is not None and abs(est - lam) <= rtol * max(abs(est), 1e-300):
            lam = est
            break
        lam = est
    rayleigh = float(v @ apply(v))
    return rayleigh, v


class GramSolver:
    """Solves ``(shift * I + scale * A^T A) x = rhs`` for any ``shift, scale``.

    A single eigendecomposition of ``A^T A`` serves every shift, so changing
    step sizes never triggers a refactorization.
    """

    def __init__(self, A):
        Ad = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
        self.gram = Ad.T @ Ad
        self.eigvals, self.eigvecs = np.linalg.eigh(self.gram)
        # roundoff-level eigenvalues are null directions of A
        tol = max(self.eigvals.max(initial=0.0), 1.0) * self.gram.shape[0] * np.finfo(float).eps
        self.eigvals = np.where(self.eigvals <= tol, 0.0, self.eigvals)

    def solve(self, shift, scale, rhs):
        denom = shift + scale * self.eigvals
        if np.any(denom <= 0):
            raise np.linalg.LinAlgError(
                f"singular system: shift={shift}, scale={scale}")
        Q = self.eigvecs
        return Q @ ((Q.T @ rhs) / denom)


class ConstraintSystem:
    """Linear constraint ``A x + B y = b`` with ``B`` diagonal (stored as a vector)."""

    def __init__(self, A, B_diag=None, b=None, sigma_A=None, warnings_=()):
        self.A = A if sp.issparse(A) else np.atleast_2d(np.asarray(A, dtype=float))
        m, _ = self.A.shape
        self.B_diag = (-np.ones(m) if B_diag is None
                       else np.asarray(B_diag, dtype=float).ravel())
        self.b = np.zeros(m) if b is None else np.asarray(b, dtype=float).ravel()
        if self.B_diag.shape != (m,) or self.b.shape != (m,):
            raise ValueError("B and b must match the row count of A")
        if np.any(self.B_diag == 0):
            raise ValueError("B must be an invertible diagonal")
        self.warnings = list(warnings_)
        if sigma_A is None:
            sigma_A, self.sigma_vector = smallest_positive_eigenpair(self.A)
        else:
            self.sigma_vector = None
        self.sigma_A = float(sigma_A)
        self.range_ok = bool(np.all(self.B_diag == -1.0) and not np.any(self.b))
        self._solver = None

    @property
    def shape(self):
        return self.A.shape

    @property
    def solver(self):
        if self._solver is None:
            self._solver = GramSolver(self.A)
        return self._solver

    def residual(self, x, y):
        return self.A @ x + self.B_diag * y - self.b

    def At(self, v):
        return self.A.T @ v


def read_dense_matrix(path):
    with open(path) as fh:
        head = fh.readline().split()
        if len(head) != 2:
            raise ValueError(f"{path}: first line must be 'm n'")
        m, n = int(head[0]), int(head[1])
        rows = [line.split() for line in fh if line.strip()]
    if len(rows) != m or any(len(r) != n for r in rows):
        raise ValueError(f"{path}: expected {m} rows of {n} values")
    return np.array([[float(v) for v in r] for r in rows], dtype=float).reshape(m, n)


def write_dense_matrix(path, A):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    with open(path, "w") as fh:
        fh.write(f"{A.shape[0]} {A.shape[1]}\n")
        for row in A:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_edge_list(path, n_nodes=None):
    """Incidence matrix of an undirected graph: row ``e_i - e_j`` per edge ``i j``."""
    edges = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParseError(lineno, "edge lines must be 'i j'")
            edges.append((int(parts[0]), int(parts[1])))
    if not edges:
        raise ValueError(f"{path}: no edges")
    n = n_nodes if n_nodes is not None else max(max(e) for e in edges) + 1
    rows = np.repeat(np.arange(len(edges)), 2)
    cols = np.array(edges).ravel()
    vals = np.tile([1.0, -1.0], len(edges))
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(edges), n)).toarray()


def chain_difference(n):
    """``(n-1) x n`` first-difference matrix with rows ``e_i - e_{i+1}``."""
    if n < 2:
        raise ValueError("chain needs at least two nodes")
    return np.eye(n - 1, n) - np.eye(n - 1, n, k=1)


def build_constraint(graph_spec: str | tuple, n: Optional[int] = None) -> ConstraintSystem:
    """Constraint ``A x - y = 0`` from a graph description.

    ``graph_spec`` is one of ``("identity", n)``, ``("chain_difference", n)``,
    ``("edge_list", path)`` or ``("matrix", path)``; a string ``kind`` with
    ``n`` passed separately also works for the first two.
    """
    if isinstance(graph_spec, str):
        kind, arg = graph_spec, n
    else:
        kind, arg = graph_spec
    notes = []
    if kind == "identity":
        A = np.eye(int(arg))
    elif kind == "chain_difference":
        A = chain_difference(int(arg))
    elif kind == "edge_list":
        A = read_edge_list(arg, n)
    elif kind == "matrix":
        A = read_dense_matrix(arg)
    else:
        raise ValueError(f"unknown graph spec {kind!r}")
    zero_cols = np.flatnonzero(~np.any(A != 0, axis=0))
    if zero_cols.size:
        msg = f"A has {zero_cols.size} zero column(s); using smallest positive eigenvalue"
        warnings.warn(msg)
        notes.append(msg)
    return ConstraintSystem(A, warnings_=notes)


@dataclass
class ProblemSpec:
    """``min f(x) + g(y)`` subject to ``A x + B y = b``."""

    loss: object
    regularizer: RegularizerSpec
    constraint: ConstraintSystem

    def __post_init__(self):
        if self.constraint.shape[1] != self.loss.dim:
            raise ValueError("A column count must equal the loss dimension")

    @property
    def L(self):
        return self.loss.lipschitz

    @property
    def sigma_A(self):
        return self.constraint.sigma_A

    def g(self, y):
        from .prox import regularizer_value
        return regularizer_value(self.regularizer, y)

    def objective(self, x, y):
        return self.loss.value(x) + self.g(y)
