"""Acquisition functions for choosing the next dose.

Expected improvement for minimization, and its augmented variant that
discounts near-duplicate sampling under observation noise.  The
effective best incumbent is the grid point minimizing mu + gamma*sigma,
which guards the incumbent against noise-driven optimism.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from dosebo.gp import GpModel

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

NOISE_SCALES = ("sigma_y", "tau")


def _norm_pdf(z: np.ndarray) -> np.ndarray:
    # z*z may overflow to inf for extreme scores; exp(-inf) = 0 is the
    # correct limit, so only the warning needs suppressing
    with np.errstate(over="ignore"):
        return _INV_SQRT_2PI * np.exp(-0.5 * z * z)


def expected_improvement(mu, sigma, f_star: float) -> np.ndarray:
    """Expected improvement below ``f_star`` for a minimization target.

    ``mu`` and ``sigma`` are posterior means and standard deviations.
    Where ``sigma`` is zero the value degenerates to
    ``max(0, f_star - mu)``.  Always nonnegative.
    """
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if not np.isfinite(f_star):
        raise ValueError(f"f_star must be finite, got {f_star}")
    if np.any(sigma < 0):
        raise ValueError("sigma must be nonnegative")
    imp = f_star - mu
    out = np.maximum(imp, 0.0)
    pos = sigma > 0
    if np.any(pos):
        # z saturates to +-inf for denormal sigma; ndtr and the pdf take
        # the right limits there, so the overflow is benign
        with np.errstate(over="ignore"):
            z = imp[pos] / sigma[pos]
        out = np.where(pos, 0.0, out)
        out[pos] = imp[pos] * ndtr(z) + sigma[pos] * _norm_pdf(z)
    return np.maximum(out, 0.0)


def augmented_expected_improvement(mu, sigma2, f_star: float, noise_sd: float) -> np.ndarray:
    """Expected improvement times the noise discount ``1 - s/sqrt(sigma2 + s^2)``.

    ``noise_sd`` is the observation noise scale ``s``.  With zero noise
    this is plain expected improvement; as the posterior variance
    shrinks to zero under positive noise the value vanishes, which is
    what drives the stopping rule.
    """
    if noise_sd < 0 or not np.isfinite(noise_sd):
        raise ValueError(f"noise_sd must be nonnegative and finite, got {noise_sd}")
    sigma2 = np.asarray(sigma2, dtype=float)
    if np.any(sigma2 < 0):
        raise ValueError("sigma2 must be nonnegative")
    ei = expected_improvement(mu, np.sqrt(sigma2), f_star)
    if noise_sd == 0.0:
        return ei
    discount = 1.0 - noise_sd / np.sqrt(sigma2 + noise_sd * noise_sd)
    return ei * discount


def _lex_first(rows: np.ndarray, mask: np.ndarray) -> int:
    """Index of the lexicographically smallest row among ``mask``."""
    idx = np.flatnonzero(mask)
    if idx.size == 1:
        return int(idx[0])
    order = np.lexsort(rows[idx].T[::-1])
    return int(idx[order[0]])


def effective_best(model: GpModel, candidates, gamma: float = 1.0,
                   doses: np.ndarray | None = None) -> tuple[int, float]:
    """Noise-guarded incumbent over a candidate set.

    Returns ``(index, f_star)`` where the index minimizes
    ``mu + gamma * sigma`` over ``candidates`` and ``f_star`` is the
    posterior mean at that point.  Exact ties resolve to the
    lexicographically smallest dose; ``doses`` supplies the dose
    coordinates when ``candidates`` carries covariate columns.
    """
    if gamma < 0 or not np.isfinite(gamma):
        raise ValueError(f"gamma must be nonnegative and finite, got {gamma}")
    candidates = np.atleast_2d(np.asarray(candidates, dtype=float))
    if candidates.shape[0] == 0:
        raise ValueError("candidates must be nonempty")
    mu, sigma2 = model.predict(candidates)
    score = mu + gamma * np.sqrt(sigma2)
    rows = candidates if doses is None else np.atleast_2d(np.asarray(doses, dtype=float))
    idx = _lex_first(rows, score == score.min())
    return idx, float(mu[idx])


@dataclass(frozen=True)
class AcquisitionContext:
    """Everything needed to score candidate doses for one stratum.

    ``noise_scale`` selects how the augmentation reads the fitted
    noise: ``"sigma_y"`` uses the observation noise standard deviation
    sqrt(nu * tau2); ``"tau"`` uses sqrt(tau2), the noise on the unit
    correlation scale.
    """

    model: GpModel
    f_star: float
    gamma: float = 1.0
    noise_scale: str = "sigma_y"

    def __post_init__(self):
        if self.noise_scale not in NOISE_SCALES:
            raise ValueError(f"noise_scale must be one of {NOISE_SCALES}, got {self.noise_scale!r}")
        if not np.isfinite(self.f_star):
            raise ValueError(f"f_star must be finite, got {self.f_star}")
        if self.gamma < 0 or not np.isfinite(self.gamma):
            raise ValueError(f"gamma must be nonnegative and finite, got {self.gamma}")

    @property
    def noise_sd(self) -> float:
        p = self.model.params
        if self.noise_scale == "sigma_y":
            return math.sqrt(p.nu * p.tau2)
        return math.sqrt(p.tau2)

    @classmethod
    def from_model(cls, model: GpModel, candidates, gamma: float = 1.0,
                   noise_scale: str = "sigma_y", doses: np.ndarray | None = None
                   ) -> "AcquisitionContext":
        _, f_star = effective_best(model, candidates, gamma, doses=doses)
        return cls(model=model, f_star=f_star, gamma=gamma, noise_scale=noise_scale)

    def scores(self, candidates) -> np.ndarray:
        """Augmented expected improvement at each candidate row."""
        mu, sigma2 = self.model.predict(candidates)
        return augmented_expected_improvement(mu, sigma2, self.f_star, self.noise_sd)


def suggest_next_dose(ctx: AcquisitionContext, candidates, doses: np.ndarray | None = None
                      ) -> tuple[int, np.ndarray]:
    """Argmax of augmented expected improvement over a candidate set.

    Returns ``(index, scores)``.  Exact ties resolve to the
    lexicographically smallest dose.
    """
    candidates = np.atleast_2d(np.asarray(candidates, dtype=float))
    if candidates.shape[0] == 0:
        raise ValueError("candidates must be nonempty")
    scores = ctx.scores(candidates)
    rows = candidates if doses is None else np.atleast_2d(np.asarray(doses, dtype=float))
    idx = _lex_first(rows, scores == scores.max())
    return idx, scores
