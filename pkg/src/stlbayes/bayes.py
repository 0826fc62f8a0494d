"""Exact joint Gaussian likelihood of correlated noisy measurements and the
Bayesian posterior over the output-map parameter.

Process noise makes successive measurements dependent, so the likelihood of a
dataset is a single multivariate Gaussian over the stacked outputs.  Its mean
stacks the noise-free responses ybar(0 .. N-1) and its covariance is
M Sigma_W M^T + Sigma_E with M the block lower-triangular impulse map from
stacked process noise to stacked outputs (first block row zero).

All likelihood arithmetic stays in log space; the posterior normalizer is a
plain uniform Monte Carlo estimate over the prior support whose standard
error is reported alongside the value.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .lti import DataSet, ParametricLti, mean_trajectory
from .rng import RngStream

_LOG_2PI = float(np.log(2.0 * np.pi))


def build_M(model: ParametricLti, theta, n_exp: int) -> np.ndarray:
    """Noise-to-output map: block (r, c) = C(theta) A^{r-c-1} G for r > c.

    Shape (p n_exp, q n_exp); the first block row is zero because y(0)
    precedes any process noise.
    """
    if n_exp < 1:
        raise ValueError("n_exp must be at least 1")
    c = model.c_matrix(theta)
    p, q, n = model.p, model.q, model.n
    blocks = []
    Ak = np.eye(n)
    for _ in range(n_exp - 1):
        blocks.append(c @ Ak @ model.G)
        Ak = model.A @ Ak
    M = np.zeros((p * n_exp, q * n_exp))
    for r in range(1, n_exp):
        for col in range(r):
            M[r * p:(r + 1) * p, col * q:(col + 1) * q] = blocks[r - col - 1]
    return M


@dataclass(frozen=True)
class GaussianJoint:
    """Mean and covariance of the stacked noisy outputs for one parameter."""

    mean: np.ndarray
    cov: np.ndarray
    singular: bool = False

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float).reshape(-1))
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=float))


def joint_distribution(model: ParametricLti, theta, x0, inputs) -> GaussianJoint:
    """Joint Gaussian of y(0 .. N-1) under process and measurement noise."""
    u = np.asarray(inputs, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    n_exp = u.shape[0]
    c = model.c_matrix(theta)
    xbar = mean_trajectory(model, x0, u)
    mean = (xbar[:n_exp] @ c.T).reshape(-1)

    M = build_M(model, theta, n_exp)
    sigma_w_big = np.kron(np.eye(n_exp), model.Sigma_w)
    sigma_e_big = np.kron(np.eye(n_exp), model.Sigma_e)
    cov = M @ sigma_w_big @ M.T + sigma_e_big
    cov = 0.5 * (cov + cov.T)
    eigs = np.linalg.eigvalsh(cov)
    return GaussianJoint(mean=mean, cov=cov, singular=bool(eigs.min() <= 1e-12))


def gaussian_logpdf(resid, cov) -> float:
    """Centered multivariate Gaussian log density via Cholesky (no inverse)."""
    resid = np.asarray(resid, dtype=float).reshape(-1)
    cov = np.asarray(cov, dtype=float)
    L = np.linalg.cholesky(cov)
    half = np.linalg.solve(L, resid)
    logdet = 2.0 * float(np.log(np.diag(L)).sum())
    k = resid.shape[0]
    return -0.5 * (float(half @ half) + logdet + k * _LOG_2PI)


def log_likelihood(theta, data: DataSet, model: ParametricLti) -> float:
    """Log density of the observed stacked outputs at one parameter value."""
    joint = joint_distribution(model, theta, data.x0, data.inputs)
    resid = data.outputs.reshape(-1) - joint.mean
    try:
        return gaussian_logpdf(resid, joint.cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError(
            f"covariance factorization failed at theta={np.asarray(theta).tolist()}: "
            f"{exc}") from exc


class _BatchLikelihood:
    """Vectorized log likelihood over many parameter values.

    The output map is affine in theta, so the blocks of M split into a
    constant part plus a linear combination of per-coordinate parts; the
    batch assembles covariances in chunks and runs batched Cholesky.
    """

    def __init__(self, model: ParametricLti, data: DataSet):
        self.model = model
        self.data = data
        n_exp = data.n_exp
        self.n_exp = n_exp
        self.y = data.outputs.reshape(-1)
        u = data.inputs
        self.xbar = mean_trajectory(model, data.x0, u)[:n_exp]
        n = model.n
        # A^k G and A^k columns reused by every theta.
        self.akg = []
        Ak = np.eye(n)
        for _ in range(max(n_exp - 1, 0)):
            self.akg.append(Ak @ model.G)
            Ak = model.A @ Ak
        self.sigma_w = model.Sigma_w
        self.sigma_e_big = np.kron(np.eye(n_exp), model.Sigma_e)

    def __call__(self, thetas: np.ndarray, chunk: int = 256) -> np.ndarray:
        model = self.model
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        B = thetas.shape[0]
        p, q, n_exp = model.p, model.q, self.n_exp
        out = np.empty(B)
        for start in range(0, B, chunk):
            ts = thetas[start:start + chunk]
            nb = ts.shape[0]
            # C(theta) for the whole chunk: (nb, p, n)
            cmats = model.C0[None, :, :] + np.einsum(
                "bd,dpn->bpn", ts, np.stack(model.C_basis)) \
                if model.d else np.broadcast_to(model.C0, (nb,) + model.C0.shape)
            means = np.einsum("bpn,tn->btp", cmats, self.xbar).reshape(nb, -1)
            resid = self.y[None, :] - means

            cov = np.broadcast_to(self.sigma_e_big,
                                  (nb,) + self.sigma_e_big.shape).copy()
            if n_exp > 1:
                # blocks[k] = C(theta) A^k G, shape (nb, k_max, p, q)
                blocks = np.einsum("bpn,knq->bkpq", cmats, np.stack(self.akg))
                M = np.zeros((nb, p * n_exp, q * n_exp))
                for r in range(1, n_exp):
                    for col in range(r):
                        M[:, r * p:(r + 1) * p, col * q:(col + 1) * q] = \
                            blocks[:, r - col - 1]
                sw = np.kron(np.eye(n_exp), self.sigma_w)
                cov += M @ sw @ np.swapaxes(M, 1, 2)
            cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
            try:
                L = np.linalg.cholesky(cov)
            except np.linalg.LinAlgError as exc:
                raise ValueError(
                    "covariance factorization failed inside a likelihood "
                    f"batch: {exc}") from exc
            half = np.linalg.solve(L, resid[:, :, None])[:, :, 0]
            logdet = 2.0 * np.log(
                np.diagonal(L, axis1=1, axis2=2)).sum(axis=1)
            k = resid.shape[1]
            out[start:start + chunk] = -0.5 * (
                (half * half).sum(axis=1) + logdet + k * _LOG_2PI)
        return out


@dataclass(frozen=True)
class PriorSpec:
    """Prior over the parameter box; uniform or tabulated density."""

    kind: str
    lower: np.ndarray
    upper: np.ndarray
    density_fn: Optional[Callable] = None

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).reshape(-1)
        hi = np.asarray(self.upper, dtype=float).reshape(-1)
        if lo.shape != hi.shape or np.any(lo >= hi):
            raise ValueError("prior support must be a nondegenerate box")
        if self.kind not in ("uniform_box", "tabulated"):
            raise ValueError(f"unknown prior kind {self.kind!r}")
        if self.kind == "tabulated" and self.density_fn is None:
            raise ValueError("tabulated priors need a density evaluator")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @staticmethod
    def uniform_box(lower, upper) -> "PriorSpec":
        return PriorSpec("uniform_box", lower, upper)

    @property
    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    def log_density(self, thetas) -> np.ndarray:
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        inside = np.all((thetas >= self.lower) & (thetas <= self.upper), axis=1)
        out = np.full(thetas.shape[0], -np.inf)
        if self.kind == "uniform_box":
            out[inside] = -np.log(self.volume)
        else:
            vals = np.asarray(
                [float(self.density_fn(t)) for t in thetas[inside]])
            with np.errstate(divide="ignore"):
                out[inside] = np.log(np.clip(vals, 0.0, None))
        return out


@dataclass
class PosteriorDensity:
    """Unnormalized log posterior plus a Monte Carlo normalizer estimate."""

    prior: PriorSpec
    log_unnormalized: Callable
    log_z: float
    z: float
    z_std_error: float
    mc_samples: int

    def log_density(self, thetas) -> np.ndarray:
        return self.log_unnormalized(thetas) - self.log_z

    def density(self, thetas) -> np.ndarray:
        return np.exp(self.log_density(thetas))

    def density_one(self, theta) -> float:
        return float(self.density(np.asarray(theta, dtype=float).reshape(1, -1))[0])


def posterior(data: Optional[DataSet], model: ParametricLti, prior: PriorSpec,
              mc_samples: int, rng: RngStream) -> PosteriorDensity:
    """Posterior over theta given a dataset (or the prior itself if none).

    The normalizer Z = integral of likelihood * prior is estimated by
    uniform Monte Carlo over the prior support with the importance weight
    prior density * support volume; the estimate and its standard error are
    attached to the returned density.  With concentrated likelihoods the
    plain uniform estimate needs many samples; check `z_std_error`.
    """
    if mc_samples < 1:
        raise ValueError("mc_samples must be positive")

    if data is None or getattr(data, "n_exp", 0) == 0:
        def log_un_prior(thetas):
            return prior.log_density(thetas)
        # Likelihood identically one: Z = integral of the prior = 1 exactly.
        return PosteriorDensity(prior=prior, log_unnormalized=log_un_prior,
                                log_z=0.0, z=1.0, z_std_error=0.0,
                                mc_samples=0)

    batch = _BatchLikelihood(model, data)

    def log_un(thetas):
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        out = prior.log_density(thetas)
        inside = np.isfinite(out)
        if inside.any():
            out[inside] += batch(thetas[inside])
        return out

    gen = rng.generator()
    samples = gen.uniform(prior.lower, prior.upper,
                          (int(mc_samples), prior.lower.shape[0]))
    logs = log_un(samples)
    finite = np.isfinite(logs)
    if not finite.any():
        raise ValueError(
            "normalizer estimate underflowed: every sampled log density is "
            "-inf even in log space; enlarge mc_samples or shrink the prior "
            "support")
    lmax = float(logs[finite].max())
    w = np.exp(np.where(finite, logs - lmax, -np.inf))
    mean_w = float(w.mean())
    std_w = float(w.std(ddof=1)) if mc_samples > 1 else 0.0
    vol = prior.volume
    log_z = lmax + np.log(mean_w) + np.log(vol)
    z = float(np.exp(log_z))
    z_se = vol * np.exp(lmax) * std_w / np.sqrt(mc_samples)
    return PosteriorDensity(prior=prior, log_unnormalized=log_un,
                            log_z=float(log_z), z=z, z_std_error=float(z_se),
                            mc_samples=int(mc_samples))
