"""Gaussian-process regression for dose-response surfaces.

Constant-mean GP with a separable anisotropic squared-exponential
kernel over continuous dose coordinates and binary covariates.  The
observation model is

    y ~ N(beta0 * 1, nu * (K_kernel + tau2 * I))

so the kernel matrix carries a unit-plus-nugget diagonal and ``nu``
sets the overall scale; the observation noise variance is
``nu * tau2``.  ``beta0`` and ``nu`` have closed-form maximizers of the
marginal likelihood and are profiled out during fitting; the
lengthscales and the nugget are optimized by multi-start L-BFGS-B in
log space with analytic gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.optimize import minimize

LENGTHSCALE_BOUNDS = (1e-2, 10.0)
NU_BOUNDS = (1e-6, 1e6)
TAU2_BOUNDS = (1e-8, 10.0)
JITTER_INITIAL = 1e-8
JITTER_MAX = 1e-4

_LOG_2PI = math.log(2.0 * math.pi)


class NumericalError(RuntimeError):
    """Linear algebra failed even after the jitter escalation policy."""


class InsufficientDataError(ValueError):
    """Too few observations to fit the model."""


@dataclass(frozen=True)
class GpHyperparameters:
    """Kernel and scale hyperparameters.

    ``dose_lengthscales`` has one entry per dose coordinate and
    ``covariate_lengthscales`` one per binary covariate; both act in
    the same separable exponent.  ``beta0`` is the fitted constant mean
    (zero until a fit sets it).
    """

    nu: float
    tau2: float
    dose_lengthscales: tuple[float, ...]
    covariate_lengthscales: tuple[float, ...] = ()
    beta0: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.nu) and self.nu > 0):
            raise ValueError(f"nu must be positive and finite, got {self.nu}")
        if not (np.isfinite(self.tau2) and self.tau2 >= 0):
            raise ValueError(f"tau2 must be nonnegative and finite, got {self.tau2}")
        ls = self.lengthscales
        if ls.size == 0:
            raise ValueError("at least one lengthscale is required")
        if not (np.isfinite(ls).all() and (ls > 0).all()):
            raise ValueError(f"lengthscales must be positive and finite, got {ls}")
        if not np.isfinite(self.beta0):
            raise ValueError(f"beta0 must be finite, got {self.beta0}")

    @property
    def lengthscales(self) -> np.ndarray:
        """Concatenated lengthscale vector, dose dims first."""
        return np.asarray(self.dose_lengthscales + self.covariate_lengthscales, dtype=float)

    @property
    def sigma_y(self) -> float:
        """Observation noise standard deviation, sqrt(nu * tau2)."""
        return math.sqrt(self.nu * self.tau2)


@dataclass(frozen=True)
class FitConfig:
    """Settings for empirical-Bayes hyperparameter estimation.

    All ``n_starts`` starting points are evaluated; gradient descents
    run from the ``n_descents`` most promising ones.  The fitted
    likelihood is still never below the likelihood at any start.
    """

    n_starts: int = 10
    n_descents: int = 4
    max_iter: int = 500
    ftol: float = 1e-8
    lengthscale_bounds: tuple[float, float] = LENGTHSCALE_BOUNDS
    tau2_bounds: tuple[float, float] = TAU2_BOUNDS
    nu_bounds: tuple[float, float] = NU_BOUNDS
    start_lengthscale: float = 0.5
    start_tau2: float = 0.1

    def __post_init__(self):
        if self.n_starts < 1:
            raise ValueError("n_starts must be at least 1")
        if self.n_descents < 1:
            raise ValueError("n_descents must be at least 1")
        for name in ("lengthscale_bounds", "tau2_bounds", "nu_bounds"):
            lo, hi = getattr(self, name)
            if not (0 < lo < hi):
                raise ValueError(f"{name} must satisfy 0 < low < high, got ({lo}, {hi})")


def with_covariates(doses, z=None) -> np.ndarray:
    """Stack dose rows with a constant covariate pattern ``z``."""
    doses = np.atleast_2d(np.asarray(doses, dtype=float))
    if z is None or len(z) == 0:
        return doses
    zt = np.broadcast_to(np.asarray(z, dtype=float), (doses.shape[0], len(z)))
    return np.hstack([doses, zt])


def kernel(a, b, params: GpHyperparameters) -> float:
    """Correlation between two input points.

    ``a`` and ``b`` are concatenated (dose, covariate) vectors whose
    length must match the hyperparameter dimensions.  The value is
    exp(-sum_j (a_j - b_j)^2 / (2 l_j^2)), in (0, 1], equal to 1 only
    for identical inputs.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    ls = params.lengthscales
    if a.shape != ls.shape or b.shape != ls.shape:
        raise ValueError(
            f"input length {a.shape[0]}/{b.shape[0]} does not match "
            f"{ls.shape[0]} lengthscales"
        )
    return float(np.exp(-0.5 * np.sum(((a - b) / ls) ** 2)))


def kernel_matrix(X1, X2, lengthscales) -> np.ndarray:
    """Cross-correlation matrix between two sets of input rows."""
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    ls = np.asarray(lengthscales, dtype=float)
    if X1.shape[1] != ls.size or X2.shape[1] != ls.size:
        raise ValueError("input columns must match the lengthscale count")
    diff = X1[:, None, :] - X2[None, :, :]
    return np.exp(-0.5 * np.einsum("ijk,k->ij", diff * diff, 1.0 / ls**2))


def build_covariance(X, params: GpHyperparameters) -> np.ndarray:
    """Kernel matrix of the observations with the nugget on the diagonal.

    The result has diagonal 1 + tau2 and is returned without jitter;
    factorization helpers apply the jitter policy when needed.
    """
    K = kernel_matrix(X, X, params.lengthscales)
    K[np.diag_indices_from(K)] += params.tau2
    return K


def _chol_jitter(K: np.ndarray):
    """Cholesky with escalating diagonal jitter.

    Tries the matrix as given, then adds jitter starting at
    ``JITTER_INITIAL`` and escalating tenfold up to ``JITTER_MAX``.
    Returns ``(factor, jitter_used)`` where ``factor`` feeds
    ``cho_solve``.  Raises :class:`NumericalError` with diagnostics when
    every level fails.
    """
    try:
        return cho_factor(K, lower=True, check_finite=False), 0.0
    except LinAlgError:
        pass
    jitter = JITTER_INITIAL
    tried = []
    n = K.shape[0]
    eye = np.eye(n)
    while jitter <= JITTER_MAX * (1 + 1e-12):
        tried.append(jitter)
        try:
            return cho_factor(K + jitter * eye, lower=True, check_finite=False), jitter
        except LinAlgError:
            jitter *= 10.0
    try:
        eigs = np.linalg.eigvalsh(0.5 * (K + K.T))
        eig_note = f"eigenvalue range [{eigs.min():.3e}, {eigs.max():.3e}]"
    except LinAlgError:
        eig_note = "eigenvalues unavailable"
    raise NumericalError(
        f"Cholesky failed for {n}x{n} covariance after jitter levels {tried}; {eig_note}"
    )


def _profiled_core(K: np.ndarray, y: np.ndarray):
    """Factorize and profile the mean: returns shared solve products."""
    c, jitter = _chol_jitter(K)
    ones = np.ones_like(y)
    a = cho_solve(c, y, check_finite=False)
    b = cho_solve(c, ones, check_finite=False)
    sb = float(b.sum())
    if sb <= 0:
        raise NumericalError(f"nonpositive 1'K^-1 1 = {sb}; covariance not usable")
    beta0 = float(a.sum()) / sb
    # e'K^-1 e with e = y - beta0*1, expanded to avoid forming e twice
    quad = float(y @ a) - beta0 * float(a.sum())
    quad = max(quad, 0.0)
    logdet = 2.0 * float(np.log(np.diag(c[0])).sum())
    return c, jitter, a, b, sb, beta0, quad, logdet


def marginal_log_likelihood(X, y, params: GpHyperparameters) -> float:
    """Log marginal likelihood of ``y`` at the given hyperparameters.

    ``beta0`` is profiled out in closed form; ``params.nu`` is used as
    given.  Deterministic in its inputs.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    if n < 1:
        raise InsufficientDataError("marginal likelihood needs at least one observation")
    if X.shape[0] != n:
        raise ValueError(f"X has {X.shape[0]} rows but y has {n} entries")
    K = build_covariance(X, params)
    _, _, _, _, _, _, quad, logdet = _profiled_core(K, y)
    nu = params.nu
    return -0.5 * (n * _LOG_2PI + n * math.log(nu) + logdet + quad / nu)


class _FitProblem:
    """Profiled negative log likelihood and its gradient in log space.

    The free parameters are ``x = [log tau2, log l_1, ..., log l_D]``;
    ``beta0`` and ``nu`` are profiled analytically at every evaluation
    (``nu`` clipped to its bounds).  Squared coordinate differences are
    precomputed once so each evaluation costs one kernel build, one
    Cholesky, and one triangular matrix solve.
    """

    def __init__(self, X: np.ndarray, y: np.ndarray, nu_bounds=NU_BOUNDS):
        self.X = X
        self.y = y
        self.n = y.size
        self.nu_bounds = nu_bounds
        diff = X[:, None, :] - X[None, :, :]
        self.sqd = diff * diff  # (n, n, D)
        self.eye = np.eye(self.n)

    def _assemble(self, x: np.ndarray):
        tau2 = math.exp(x[0])
        ls = np.exp(x[1:])
        S = np.einsum("ijk,k->ij", self.sqd, 0.5 / ls**2)
        Kk = np.exp(-S)
        K = Kk + tau2 * self.eye
        return tau2, ls, Kk, K

    def value_and_grad(self, x: np.ndarray):
        tau2, ls, Kk, K = self._assemble(x)
        c, _, a, b, sb, beta0, quad, logdet = _profiled_core(K, self.y)
        n = self.n
        nu = min(max(quad / n, self.nu_bounds[0]), self.nu_bounds[1])
        nll = 0.5 * (n * _LOG_2PI + n * math.log(nu) + logdet + quad / nu)

        w = a - beta0 * b  # K^-1 (y - beta0*1)
        Kinv = cho_solve(c, self.eye, check_finite=False)
        # d mll / d log tau2 and / d log l_j; beta0 and nu enter via the
        # envelope theorem so only the explicit K dependence remains.
        g = np.empty_like(x)
        g[0] = 0.5 * tau2 * (float(w @ w) / nu - float(np.trace(Kinv)))
        A = (np.outer(w, w) / nu - Kinv) * Kk
        g[1:] = 0.5 * np.einsum("ij,ijk->k", A, self.sqd) / ls**2
        return nll, -g

    def value(self, x: np.ndarray) -> float:
        _, _, _, K = self._assemble(x)
        _, _, _, _, _, _, quad, logdet = _profiled_core(K, self.y)
        n = self.n
        nu = min(max(quad / n, self.nu_bounds[0]), self.nu_bounds[1])
        return 0.5 * (n * _LOG_2PI + n * math.log(nu) + logdet + quad / nu)

    def params_at(self, x: np.ndarray, j_dims: int) -> GpHyperparameters:
        tau2, ls, _, K = self._assemble(x)
        _, _, _, _, _, beta0, quad, _ = _profiled_core(K, self.y)
        nu = min(max(quad / self.n, self.nu_bounds[0]), self.nu_bounds[1])
        return GpHyperparameters(
            nu=nu,
            tau2=tau2,
            dose_lengthscales=tuple(float(v) for v in ls[:j_dims]),
            covariate_lengthscales=tuple(float(v) for v in ls[j_dims:]),
            beta0=beta0,
        )


class GpModel:
    """A fitted GP conditioned on its training data.

    Factorizes the covariance once at construction and caches the solve
    products used by prediction.  Instances are treated as immutable.
    """

    def __init__(self, X, y, j_dims: int, p_covs: int, params: GpHyperparameters,
                 fit_info: dict | None = None):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float).ravel()
        if X.shape[0] != y.size:
            raise ValueError(f"X has {X.shape[0]} rows but y has {y.size} entries")
        if X.shape[1] != j_dims + p_covs:
            raise ValueError(
                f"X has {X.shape[1]} columns but j_dims + p_covs = {j_dims + p_covs}"
            )
        if len(params.dose_lengthscales) != j_dims or len(params.covariate_lengthscales) != p_covs:
            raise ValueError("hyperparameter dimensions do not match j_dims/p_covs")
        self.X = X
        self.y = y
        self.j_dims = j_dims
        self.p_covs = p_covs
        self.params = params
        self.fit_info = fit_info or {}

        K = build_covariance(X, params)
        self._chol, self.jitter = _chol_jitter(K)
        ones = np.ones_like(y)
        self._a = cho_solve(self._chol, y, check_finite=False)
        self._b = cho_solve(self._chol, ones, check_finite=False)
        self._denom = float(self._b.sum())
        if self._denom <= 0:
            raise NumericalError(f"nonpositive 1'K^-1 1 = {self._denom}")
        # the profiled value wins; params.beta0 is informational
        self.beta0 = float(self._a.sum()) / self._denom
        self._alpha = self._a - self.beta0 * self._b

    @property
    def n(self) -> int:
        return self.y.size

    def log_marginal_likelihood(self) -> float:
        return marginal_log_likelihood(self.X, self.y, self.params)

    def _cross(self, Xq: np.ndarray) -> np.ndarray:
        return kernel_matrix(self.X, Xq, self.params.lengthscales)

    def predict(self, Xq) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and variance of the latent surface at ``Xq``.

        Returns ``(mu, sigma2)`` arrays of length ``m``.  The variance
        includes the uncertainty from estimating the constant mean and
        is clipped at zero against roundoff.
        """
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        kq = self._cross(Xq)  # (n, m)
        mu = self.beta0 + kq.T @ self._alpha
        v = cho_solve(self._chol, kq, check_finite=False)
        qf = np.einsum("ij,ij->j", kq, v)
        h = 1.0 - kq.T @ self._b
        sigma2 = self.params.nu * (1.0 - qf + h * h / self._denom)
        return mu, np.maximum(sigma2, 0.0)

    def joint_posterior(self, Xq) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean vector and covariance matrix at ``Xq``."""
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        kq = self._cross(Xq)
        mu = self.beta0 + kq.T @ self._alpha
        v = cho_solve(self._chol, kq, check_finite=False)
        h = 1.0 - kq.T @ self._b
        Kqq = kernel_matrix(Xq, Xq, self.params.lengthscales)
        cov = self.params.nu * (Kqq - kq.T @ v + np.outer(h, h) / self._denom)
        return mu, cov

    def sample_joint(self, Xq, size: int, rng: np.random.Generator) -> np.ndarray:
        """Draws from the joint posterior at ``Xq``, shape ``(size, m)``.

        The posterior covariance is repaired to positive semidefinite by
        zeroing eigenvalues at roundoff scale (of either sign); materially
        negative ones raise :class:`NumericalError`.  Perfectly correlated
        query pairs therefore agree across draws to numerical precision.
        """
        if size < 1:
            raise ValueError(f"size must be positive, got {size}")
        mu, cov = self.joint_posterior(Xq)
        sym = 0.5 * (cov + cov.T)
        eigvals, eigvecs = np.linalg.eigh(sym)
        scale = max(1.0, float(eigvals.max(initial=0.0)))
        if eigvals.min() < -1e-6 * scale:
            raise NumericalError(
                f"posterior covariance has eigenvalue {eigvals.min():.3e} "
                f"below {-1e-6 * scale:.3e}"
            )
        eigvals = np.where(eigvals < 1e-12 * scale, 0.0, eigvals)
        root = eigvecs * np.sqrt(eigvals)
        z = rng.standard_normal((size, mu.size))
        return mu + z @ root.T


def _draw_starts(cfg: FitConfig, dim: int, y_var: float, rng: np.random.Generator):
    """Multi-start initial points in full parameter space.

    One start at the fixed default and the rest log-uniform within the
    bounds.  Each start is ``(nu, tau2, lengthscales)``; the profiled
    objective only consumes the last two.
    """
    starts = [(max(y_var, 1e-12), cfg.start_tau2, np.full(dim, cfg.start_lengthscale))]
    lo_l, hi_l = np.log(cfg.lengthscale_bounds[0]), np.log(cfg.lengthscale_bounds[1])
    lo_t, hi_t = np.log(cfg.tau2_bounds[0]), np.log(cfg.tau2_bounds[1])
    lo_n, hi_n = np.log(cfg.nu_bounds[0]), np.log(cfg.nu_bounds[1])
    for _ in range(cfg.n_starts - 1):
        nu = math.exp(rng.uniform(lo_n, hi_n))
        tau2 = math.exp(rng.uniform(lo_t, hi_t))
        ls = np.exp(rng.uniform(lo_l, hi_l, size=dim))
        starts.append((nu, tau2, ls))
    return starts


def fit(X, y, j_dims: int, p_covs: int = 0, config: FitConfig | None = None,
        rng: np.random.Generator | int | None = None) -> GpModel:
    """Empirical-Bayes fit of the GP hyperparameters.

    Runs L-BFGS-B from ``config.n_starts`` starting points in log space
    and keeps the best optimum.  The fitted marginal likelihood is never
    below the likelihood at any starting point.  ``rng`` seeds the
    random starts; the default start is deterministic.

    Raises :class:`InsufficientDataError` for fewer than two
    observations and :class:`NumericalError` when every start fails.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    if n < 2:
        raise InsufficientDataError(f"fit needs at least 2 observations, got {n}")
    if X.shape[0] != n:
        raise ValueError(f"X has {X.shape[0]} rows but y has {n} entries")
    if X.shape[1] != j_dims + p_covs:
        raise ValueError(f"X has {X.shape[1]} columns but j_dims + p_covs = {j_dims + p_covs}")
    cfg = config or FitConfig()
    rng = np.random.default_rng(rng)

    dim = X.shape[1]
    problem = _FitProblem(X, y, nu_bounds=cfg.nu_bounds)
    y_var = float(np.var(y))
    starts = _draw_starts(cfg, dim, y_var, rng)
    bounds = [(math.log(cfg.tau2_bounds[0]), math.log(cfg.tau2_bounds[1]))]
    bounds += [(math.log(cfg.lengthscale_bounds[0]), math.log(cfg.lengthscale_bounds[1]))] * dim

    def objective(x):
        try:
            return problem.value_and_grad(x)
        except NumericalError:
            return np.inf, np.zeros_like(x)

    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    x0s = []
    screen = np.empty(len(starts))
    for i, (nu0, tau20, ls0) in enumerate(starts):
        x0 = np.clip(np.concatenate([[math.log(tau20)], np.log(ls0)]), lo, hi)
        x0s.append(x0)
        try:
            screen[i] = problem.value(x0)
        except NumericalError:
            screen[i] = np.inf

    best_x = None
    best_val = np.inf
    results = []
    order = np.argsort(screen, kind="stable")[: cfg.n_descents]
    for i in order:
        if not np.isfinite(screen[i]):
            continue
        res = minimize(
            objective, x0s[i], jac=True, method="L-BFGS-B", bounds=bounds,
            options={"maxiter": cfg.max_iter, "ftol": cfg.ftol},
        )
        results.append((int(i), float(res.fun), bool(res.success), int(res.nit)))
        if np.isfinite(res.fun) and res.fun < best_val:
            best_val = float(res.fun)
            best_x = np.asarray(res.x, dtype=float)
    if best_x is None:
        raise NumericalError("all optimizer starts failed to produce a finite likelihood")

    params = problem.params_at(best_x, j_dims)
    fit_info = {
        "starts": [
            {"nu": float(nu0), "tau2": float(tau20), "lengthscales": [float(v) for v in ls0]}
            for nu0, tau20, ls0 in starts
        ],
        "start_values": [-float(v) for v in screen],
        "start_results": results,
        "mll": -best_val,
    }
    return GpModel(X, y, j_dims, p_covs, params, fit_info=fit_info)
