"""Matérn covariance, Nyström eigenpairs and truncated Karhunen-Loève samples.

The Gaussian part of the coefficient is represented through the leading
eigenpairs of its covariance operator on the domain of interest.  The
eigenproblem is discretised with the Nyström method on a composite midpoint
rule; eigenfunctions are extended off the quadrature nodes with the Nyström
interpolation formula, so a realization can be evaluated at arbitrary points
(cell centres of any mesh).

Example
-------
>>> spec = CovarianceSpec(nu=0.5, variance=1.0, correlation_length=0.1)
>>> field = KarhunenLoeveField(spec, n_quad=256).fit()
>>> w = field.sample(random_state=0)
>>> w(np.array([0.25, 0.75])).shape
(2,)
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg, special
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from jumpflux._validation import check_domain, check_positive, check_rng

#: fraction of the quadrature trace kept by the default cut-off index
DEFAULT_ENERGY = 0.999
#: modes with eigenvalue below this fraction of the largest are not extended off-node
OFFNODE_DROP = 1e-12
#: number of point sets whose kernel rows are kept per basis
KERNEL_CACHE_SIZE = 16


@dataclass(frozen=True)
class CovarianceSpec:
    """Matérn covariance parameters.  ``nu=math.inf`` selects the squared exponential."""

    nu: float = 0.5
    variance: float = 1.0
    correlation_length: float = 0.1
    domain: tuple[float, float] = (0.0, 1.0)
    kind: str = "matern"

    def __post_init__(self):
        if self.kind != "matern":
            raise ValueError(f"unsupported covariance kind {self.kind!r}")
        object.__setattr__(self, "nu", check_positive(self.nu, "nu", allow_inf=True))
        object.__setattr__(self, "variance", check_positive(self.variance, "variance"))
        object.__setattr__(
            self, "correlation_length", check_positive(self.correlation_length, "correlation_length")
        )
        object.__setattr__(self, "domain", check_domain(self.domain))

    @property
    def length(self) -> float:
        return self.domain[1] - self.domain[0]


_HALF_INTEGER = {
    0.5: lambda z: np.exp(-z),
    1.5: lambda z: (1.0 + z) * np.exp(-z),
    2.5: lambda z: (1.0 + z + z * z / 3.0) * np.exp(-z),
}


def _matern_of_distance(spec: CovarianceSpec, r: np.ndarray) -> np.ndarray:
    r = np.abs(np.asarray(r, dtype=float))
    sigma2, rho, nu = spec.variance, spec.correlation_length, spec.nu
    if math.isinf(nu):
        return sigma2 * np.exp(-0.5 * (r / rho) ** 2)
    if nu in _HALF_INTEGER:
        return sigma2 * _HALF_INTEGER[nu](math.sqrt(2.0 * nu) * r / rho)
    out = np.full(r.shape, sigma2)
    pos = r > 0.0
    z = math.sqrt(2.0 * nu) * r[pos] / rho
    # log form: kv(nu, z) under- and z**nu overflows for large z
    log_k = (
        (1.0 - nu) * math.log(2.0)
        - special.gammaln(nu)
        + nu * np.log(z)
        + np.log(special.kve(nu, z))
        - z
    )
    out[pos] = sigma2 * np.exp(log_k)
    return out


def matern_kernel(spec: CovarianceSpec, x, y) -> np.ndarray | float:
    """Matérn covariance ``k(x, y)``; broadcasts over array arguments.

    Returns exactly ``spec.variance`` on the diagonal and the squared
    exponential ``variance * exp(-|x-y|^2 / (2 rho^2))`` when ``nu`` is infinite.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("matern_kernel: non-finite input")
    value = _matern_of_distance(spec, x - y)
    return float(value) if value.ndim == 0 else value


@dataclass(frozen=True, eq=False)
class KLBasis:
    """Leading Nyström eigenpairs of a covariance operator.

    ``eigenvectors[j, i]`` is the value of the i-th eigenfunction at
    ``nodes[j]``; columns are orthonormal in the weighted inner product
    ``sum_j weights[j] * u[j] * v[j]``.
    """

    spec: CovarianceSpec
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    nodes: np.ndarray
    weights: np.ndarray
    trace: float
    _kernel_cache: dict = field(default_factory=dict, repr=False)

    @property
    def cutoff(self) -> int:
        return self.eigenvalues.size

    def truncate(self, n_terms: int) -> "KLBasis":
        if not 1 <= n_terms <= self.cutoff:
            raise ValueError(f"n_terms must be in [1, {self.cutoff}], got {n_terms}")
        return KLBasis(
            self.spec,
            self.eigenvalues[:n_terms],
            self.eigenvectors[:, :n_terms],
            self.nodes,
            self.weights,
            self.trace,
        )

    def kernel_rows(self, x: np.ndarray) -> np.ndarray:
        """``k(x, nodes)``, cached for repeated point sets such as fixed meshes."""
        key = x.tobytes()
        kmat = self._kernel_cache.get(key)
        if kmat is None:
            kmat = matern_kernel(self.spec, x[:, None], self.nodes[None, :])
            if len(self._kernel_cache) >= KERNEL_CACHE_SIZE:
                self._kernel_cache.pop(next(iter(self._kernel_cache)))
            self._kernel_cache[key] = kmat
        return kmat

    def eigenfunctions(self, x) -> np.ndarray:
        """Nyström extension of the retained eigenfunctions to points ``x``.

        Returns an array of shape ``(len(x), n_kept)``; modes below the
        off-node drop threshold are returned as zero columns.
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        keep = self.eigenvalues > OFFNODE_DROP * self.eigenvalues[0]
        out = np.zeros((x.size, self.cutoff))
        kmat = self.kernel_rows(x)
        out[:, keep] = (kmat * self.weights) @ self.eigenvectors[:, keep] / self.eigenvalues[keep]
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["index", "eigenvalue"])
            for i, eta in enumerate(self.eigenvalues, start=1):
                writer.writerow([i, repr(float(eta))])


def default_cutoff(eigenvalues: np.ndarray, energy: float = DEFAULT_ENERGY) -> int:
    """Smallest N whose leading eigenvalues carry ``energy`` of the total."""
    total = eigenvalues.sum()
    if total <= 0.0:
        return 1
    csum = np.cumsum(eigenvalues)
    return int(min(np.searchsorted(csum, energy * total) + 1, eigenvalues.size))


def nystrom_eigenpairs(spec: CovarianceSpec, n_quad: int, cutoff: int | None = None,
                       energy: float = DEFAULT_ENERGY) -> KLBasis:
    """Nyström approximation of the covariance eigenpairs on ``spec.domain``.

    Uses ``n_quad`` midpoint nodes with equal weights.  If ``cutoff`` is None,
    the smallest cut-off reaching ``energy`` of the trace is kept.
    """
    n_quad = int(n_quad)
    if n_quad < 1:
        raise ValueError("n_quad must be a positive integer")
    if cutoff is not None and not 1 <= int(cutoff) <= n_quad:
        raise ValueError(f"cutoff must be in [1, n_quad={n_quad}], got {cutoff}")
    left, right = spec.domain
    h = (right - left) / n_quad
    nodes = left + (np.arange(n_quad) + 0.5) * h
    weights = np.full(n_quad, h)
    sqrt_w = np.sqrt(weights)
    kmat = matern_kernel(spec, nodes[:, None], nodes[None, :])
    sym = sqrt_w[:, None] * kmat * sqrt_w[None, :]
    try:
        eta, vecs = linalg.eigh(sym)
    except linalg.LinAlgError as exc:
        raise RuntimeError(f"Nyström eigendecomposition failed: {exc}") from exc
    order = np.argsort(eta)[::-1]
    eta = np.clip(eta[order], 0.0, None)
    vecs = vecs[:, order] / sqrt_w[:, None]
    # fix the sign so the basis does not depend on LAPACK internals
    signs = np.sign(vecs[np.argmax(np.abs(vecs), axis=0), np.arange(n_quad)])
    vecs = vecs * np.where(signs == 0, 1.0, signs)
    n_keep = default_cutoff(eta, energy) if cutoff is None else int(cutoff)
    trace = float(np.sum(weights * np.diag(kmat)))
    return KLBasis(spec, eta[:n_keep].copy(), np.ascontiguousarray(vecs[:, :n_keep]), nodes,
                   weights, trace)


@dataclass(frozen=True, eq=False)
class KLRealization:
    """One draw ``W^N = sum_i sqrt(eta_i) e_i Z_i`` of the truncated expansion."""

    basis: KLBasis
    z: np.ndarray
    truncation_cap: float = field(init=False)
    _node_coef: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        if z.shape != (self.basis.cutoff,):
            raise ValueError(f"expected {self.basis.cutoff} coefficients, got shape {z.shape}")
        object.__setattr__(self, "z", z)
        eta = self.basis.eigenvalues
        keep = eta > OFFNODE_DROP * eta[0]
        coef = np.zeros_like(z)
        coef[keep] = z[keep] / np.sqrt(eta[keep])
        # W(x) = sum_j w_j k(x, x_j) c_j with c = E diag(z / sqrt(eta))
        object.__setattr__(self, "_node_coef", self.basis.weights * (self.basis.eigenvectors @ coef))
        object.__setattr__(self, "truncation_cap", float(np.max(self.at_nodes())))

    def at_nodes(self) -> np.ndarray:
        return self.basis.eigenvectors @ (np.sqrt(self.basis.eigenvalues) * self.z)

    def untruncated(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        flat = np.atleast_1d(x).ravel()
        return (self.basis.kernel_rows(flat) @ self._node_coef).reshape(x.shape)

    def __call__(self, x) -> np.ndarray:
        """Field values at ``x``; capped by ``truncation_cap`` outside the domain."""
        x = np.asarray(x, dtype=float)
        values = self.untruncated(x)
        left, right = self.basis.spec.domain
        outside = (x < left) | (x > right)
        if np.any(outside):
            values = np.where(outside, np.minimum(values, self.truncation_cap), values)
        return values


def kl_sample(basis: KLBasis, random_state=None) -> KLRealization:
    """Draw the standard normal coefficients and wrap them in a realization."""
    rng = check_rng(random_state)
    return KLRealization(basis, rng.standard_normal(basis.cutoff))


class KarhunenLoeveField(TransformerMixin, BaseEstimator):
    """Truncated Karhunen-Loève sampler for a Matérn Gaussian field.

    Parameters
    ----------
    spec : CovarianceSpec
        Covariance parameters and domain.
    n_quad : int
        Number of midpoint quadrature nodes of the Nyström discretisation.
    n_terms : int or None
        Cut-off index; ``None`` keeps the fraction ``energy`` of the trace.
    energy : float
        Trace fraction used when ``n_terms`` is None.

    Attributes
    ----------
    basis_ : KLBasis
        Fitted eigenpairs.
    n_terms_ : int
        Cut-off index actually used.
    """

    def __init__(self, spec=None, n_quad=512, n_terms=None, energy=DEFAULT_ENERGY):
        self.spec = spec
        self.n_quad = n_quad
        self.n_terms = n_terms
        self.energy = energy

    def fit(self, X=None, y=None):
        spec = self.spec if self.spec is not None else CovarianceSpec()
        self.basis_ = nystrom_eigenpairs(spec, self.n_quad, self.n_terms, self.energy)
        self.n_terms_ = self.basis_.cutoff
        return self

    def transform(self, X):
        """Map rows of standard normal coefficients to field values at the nodes."""
        check_is_fitted(self, "basis_")
        X = check_array(X)
        if X.shape[1] != self.n_terms_:
            raise ValueError(f"expected {self.n_terms_} coefficients per row, got {X.shape[1]}")
        return (X * np.sqrt(self.basis_.eigenvalues)) @ self.basis_.eigenvectors.T

    def sample(self, random_state=None) -> KLRealization:
        check_is_fitted(self, "basis_")
        return kl_sample(self.basis_, random_state)

    def export_eigenvalues(self, path) -> Path:
        check_is_fitted(self, "basis_")
        self.basis_.to_csv(path)
        return Path(path)
