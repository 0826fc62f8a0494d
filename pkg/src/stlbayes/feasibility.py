"""Robust feasibility of decomposed constraints and the parameter-space map.

For a fixed parameter theta every leaf chance constraint reduces to an affine
inequality f.u + b >= 0 that must hold for every admissible input trajectory.
Over a box of inputs the worst case has the closed form
b + sum_k min(f_k l_k, f_k u_k); the same question is also answered through
the Farkas dual of the robust linear program, solved with the internal
simplex, and the two routes are required to agree.

The satisfaction map theta -> {0, 1} is the conjunction of all leaf
feasibility checks.  A piecewise-affine relaxation of the noise margin over
axis-aligned parameter cells turns every leaf margin into a concave
piecewise-linear function of theta on the cell, so cells can be certified
feasible (exactly, via vertex evaluation) or infeasible (via an affine upper
envelope), with "unknown" for the remainder.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.special import erfinv

from .chance import (
    AT_MOST,
    AffineInputConstraint,
    ChanceConstraint,
    DecompositionResult,
    WeightScheme,
    decompose,
    gaussian_quantile,
    noise_gram,
)
from .lti import ParametricLti
from .simplex import INFEASIBLE, OPTIMAL, solve_standard_lp
from .stl import Formula, OutputPredicate, horizon

FEAS_TOL = 1e-9

FEASIBLE = "feasible"
INFEASIBLE_LABEL = "infeasible"
UNKNOWN = "unknown"


@dataclass(frozen=True)
class InputBox:
    """Per-step admissible input range, constant over time."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).reshape(-1)
        hi = np.asarray(self.upper, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise ValueError("input bounds must have matching shapes")
        if np.any(lo > hi):
            raise ValueError("input lower bounds must not exceed upper bounds")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def m(self) -> int:
        return self.lower.shape[0]

    def stacked(self, t: int):
        return np.tile(self.lower, t), np.tile(self.upper, t)


def worst_case_margin(c: AffineInputConstraint, box: InputBox) -> float:
    """min over admissible stacked inputs of f.u + b (closed form)."""
    if box.m != c.m:
        raise ValueError(f"box has {box.m} input coordinates, constraint has {c.m}")
    if c.time == 0:
        return c.b
    lo, hi = box.stacked(c.time)
    return c.b + float(np.minimum(c.f * lo, c.f * hi).sum())


@dataclass(frozen=True)
class FarkasCertificate:
    """Nonnegative multipliers P with D^T P = -f and d.P <= b."""

    P: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.P, dtype=float).reshape(-1)
        if P.size and P.min() < -1e-9:
            raise ValueError("certificate multipliers must be nonnegative")
        object.__setattr__(self, "P", P)


def farkas_feasible(c: AffineInputConstraint, box: InputBox):
    """Robust feasibility via the Farkas dual of the box-constrained LP.

    The input polytope is written D u <= d with interleaved rows
    (+e_k, hi_k), (-e_k, -lo_k).  Robust feasibility of f.u + b >= 0 holds
    iff some P >= 0 satisfies D^T P = -f and d.P <= b; the minimum of d.P
    subject to the equalities is found by the two-phase simplex, so the
    certificate is the optimizer itself.
    """
    if box.m != c.m:
        raise ValueError(f"box has {box.m} input coordinates, constraint has {c.m}")
    t = c.time
    if t == 0:
        ok = c.b >= -FEAS_TOL
        return ok, (FarkasCertificate(np.zeros(0)) if ok else None)
    lo, hi = box.stacked(t)
    k = c.f.shape[0]
    d = np.empty(2 * k)
    d[0::2] = hi
    d[1::2] = -lo
    a_eq = np.zeros((k, 2 * k))
    idx = np.arange(k)
    a_eq[idx, 2 * idx] = 1.0
    a_eq[idx, 2 * idx + 1] = -1.0
    res = solve_standard_lp(d, a_eq, -c.f)
    if res.status == INFEASIBLE:
        return False, None
    if res.status != OPTIMAL:
        raise RuntimeError(f"unexpected LP status {res.status} in Farkas dual")
    if res.objective <= c.b + FEAS_TOL:
        return True, FarkasCertificate(res.x)
    return False, None


# --- per-leaf geometry ------------------------------------------------------

@dataclass(frozen=True)
class _LeafGeometry:
    """One leaf, normalized to at-least form, as functions of theta.

    The state-space predicate gradient is affine in theta,
    tilde(theta) = v0 + J theta, and the leaf margin is

        offset + tilde.a_t + sum_k min-over-box(f_k(theta) u_k) + margin(noise)

    with f(theta) = W^T tilde(theta) and the noise margin z * sigma(theta)
    (or factor * sigma^2 in the literal variance form).
    """

    label: str
    time: int
    offset: float
    v0: np.ndarray
    J: np.ndarray
    a_t: np.ndarray
    W: np.ndarray
    V: np.ndarray
    noise_coeff: float
    noise_power: int  # 1 for stddev form, 2 for the literal variance form
    lo_stack: np.ndarray
    hi_stack: np.ndarray

    def tilde(self, thetas: np.ndarray) -> np.ndarray:
        return self.v0 + thetas @ self.J.T

    def margins(self, thetas: np.ndarray) -> np.ndarray:
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        tl = self.tilde(thetas)
        out = self.offset + tl @ self.a_t
        if self.time > 0:
            f = tl @ self.W
            out = out + np.minimum(f * self.lo_stack, f * self.hi_stack).sum(axis=1)
            var = np.clip(np.einsum("bi,ij,bj->b", tl, self.V, tl), 0.0, None)
            if self.noise_power == 1:
                out = out + self.noise_coeff * np.sqrt(var)
            else:
                out = out + self.noise_coeff * var
        return out


def _leaf_geometry(leaf: ChanceConstraint, model: ParametricLti, x0,
                   box: InputBox, gamma_form: str) -> _LeafGeometry:
    pred = leaf.predicate
    threshold = leaf.threshold
    sign = 1.0
    if leaf.direction == AT_MOST:
        threshold = 1.0 - threshold
        sign = -1.0
    delta = 1.0 - threshold

    n, d = model.n, model.d
    if isinstance(pred, OutputPredicate):
        g = np.asarray(pred.gradient, dtype=float)
        v0 = sign * (model.C0.T @ g)
        J = sign * np.column_stack([Ci.T @ g for Ci in model.C_basis]) \
            if d else np.zeros((n, 0))
        offset = sign * pred.offset
    else:
        v0 = sign * pred.gradient_array
        if v0.shape != (n,):
            raise ValueError(
                f"predicate {leaf.label!r} has gradient length {v0.size}, "
                f"expected the state dimension {n}")
        J = np.zeros((n, d))
        offset = sign * pred.offset

    t = leaf.time
    a_t = np.linalg.matrix_power(model.A, t) @ np.asarray(x0, dtype=float).reshape(-1)
    W = np.zeros((n, model.m * t))
    Ak = np.eye(n)
    for k in range(t - 1, -1, -1):
        W[:, k * model.m:(k + 1) * model.m] = Ak @ model.B
        Ak = model.A @ Ak
    V = noise_gram(model, t)
    if gamma_form == "stddev":
        coeff, power = gaussian_quantile(delta), 1
    elif gamma_form == "variance_literal":
        arg = np.sqrt(np.pi) * delta
        if not arg < 1.0:
            raise ValueError(
                "variance_literal margin undefined for delta >= 1/sqrt(pi)")
        coeff, power = float(erfinv(arg)), 2
    else:
        raise ValueError(f"unknown gamma form {gamma_form!r}")
    lo, hi = box.stacked(t)
    return _LeafGeometry(label=leaf.label, time=t, offset=offset, v0=v0, J=J,
                         a_t=a_t, W=W, V=V, noise_coeff=coeff,
                         noise_power=power, lo_stack=lo, hi_stack=hi)


# --- verification spec ------------------------------------------------------

class VerificationSpec:
    """Decomposed constraint system for one model, property and input box.

    Bundles everything the parameter-space feasibility map needs: the
    decomposition of the probabilistic requirement, the initial state, the
    admissible input box and the noise-margin form.
    """

    def __init__(self, model: ParametricLti, formula: Formula, delta: float,
                 x0=None, weights: Optional[WeightScheme] = None, t0: int = 0,
                 input_box: Optional[InputBox] = None,
                 gamma_form: str = "stddev", literal_shares: bool = False):
        self.model = model
        self.formula = formula
        self.delta = float(delta)
        self.weights = weights if weights is not None else WeightScheme()
        self.t0 = int(t0)
        self.x0 = (np.zeros(model.n) if x0 is None
                   else np.asarray(x0, dtype=float).reshape(-1))
        if self.x0.shape != (model.n,):
            raise ValueError(f"x0 must have length {model.n}")
        self.input_box = (input_box if input_box is not None
                          else InputBox(model.input_lower, model.input_upper))
        self.gamma_form = gamma_form
        self.literal_shares = bool(literal_shares)
        self.decomposition: DecompositionResult = decompose(
            formula, self.delta, self.weights, self.t0,
            literal_shares=self.literal_shares)
        self._geometry = [
            _leaf_geometry(leaf, model, self.x0, self.input_box, gamma_form)
            for leaf in self.decomposition.all_leaves()
        ]

    @property
    def horizon(self) -> int:
        return horizon(self.formula)

    def leaves(self) -> tuple:
        return self.decomposition.all_leaves()

    def bound_leaves(self, theta) -> list:
        c = self.model.c_matrix(theta)
        return [leaf.bind(c) for leaf in self.leaves()]

    def affine_constraints(self, theta) -> list:
        """Per-leaf affine input constraints at a fixed parameter."""
        from .chance import to_affine
        return [to_affine(leaf, self.model, self.x0, form=self.gamma_form)
                for leaf in self.bound_leaves(theta)]

    def leaf_margins(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float).reshape(1, -1)
        return np.array([g.margins(theta)[0] for g in self._geometry])

    def satisfaction_batch(self, thetas) -> np.ndarray:
        """Vectorized satisfaction map over rows of `thetas`."""
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        ok = np.ones(thetas.shape[0], dtype=bool)
        for g in self._geometry:
            ok &= g.margins(thetas) >= -FEAS_TOL
            if not ok.any():
                break
        return ok.astype(np.uint8)

    def satisfaction(self, theta) -> int:
        return int(self.satisfaction_batch(np.asarray(theta, dtype=float)
                                           .reshape(1, -1))[0])


def satisfaction_fn(theta, spec: VerificationSpec) -> int:
    """Indicator that every decomposed constraint holds robustly at theta."""
    return spec.satisfaction(theta)


# --- search-region restriction ----------------------------------------------

@dataclass(frozen=True)
class Region:
    lower: np.ndarray
    upper: np.ndarray
    empty: bool = False

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).reshape(-1)
        hi = np.asarray(self.upper, dtype=float).reshape(-1)
        if lo.shape != hi.shape or np.any(lo > hi):
            raise ValueError("invalid region bounds")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))


def _grid(lower, upper, per_axis):
    axes = [np.linspace(lo, hi, per_axis) for lo, hi in zip(lower, upper)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


def restrict_region(spec: VerificationSpec, region: Region, grid: int = 33,
                    rel_tol: float = 1e-2) -> Region:
    """Shrink a parameter box toward the set where satisfaction can hold.

    Probes satisfaction on deterministic grids: per coordinate, bisect the
    outermost slice that still contains a satisfying grid point.  The probe
    resolution bounds what can be detected, so the result is a sound
    restriction only up to the grid; with no satisfying point found at all
    the input box is returned flagged empty.
    """
    if region.empty:
        return region
    d = region.lower.shape[0]
    pts = _grid(region.lower, region.upper, grid)
    sat = spec.satisfaction_batch(pts).astype(bool)
    if not sat.any():
        return Region(region.lower, region.upper, empty=True)
    hits = pts[sat]

    lower = region.lower.copy()
    upper = region.upper.copy()
    for i in range(d):
        span = region.upper[i] - region.lower[i]
        tol = max(rel_tol * span, 1e-12)

        def slice_has_hit(v: float) -> bool:
            if d == 1:
                return bool(spec.satisfaction_batch(np.array([[v]]))[0])
            sub_lower = np.delete(region.lower, i)
            sub_upper = np.delete(region.upper, i)
            sub = _grid(sub_lower, sub_upper, grid)
            full = np.insert(sub, i, v, axis=1)
            return bool(spec.satisfaction_batch(full).any())

        inner, outer = float(hits[:, i].max()), float(region.upper[i])
        while outer - inner > tol:
            mid = 0.5 * (inner + outer)
            if slice_has_hit(mid):
                inner = mid
            else:
                outer = mid
        upper[i] = outer

        inner, outer = float(hits[:, i].min()), float(region.lower[i])
        while inner - outer > tol:
            mid = 0.5 * (inner + outer)
            if slice_has_hit(mid):
                inner = mid
            else:
                outer = mid
        lower[i] = outer
    return Region(lower, upper, empty=False)


# --- piecewise-affine relaxation over parameter cells ------------------------

@dataclass(frozen=True)
class ThetaCell:
    lower: np.ndarray
    upper: np.ndarray
    label: str = UNKNOWN

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float).reshape(-1)
        hi = np.asarray(self.upper, dtype=float).reshape(-1)
        if lo.shape != hi.shape or np.any(lo > hi):
            raise ValueError("invalid cell bounds")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def radii(self) -> np.ndarray:
        return 0.5 * (self.upper - self.lower)

    @property
    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    def vertices(self) -> np.ndarray:
        cols = [(lo, hi) for lo, hi in zip(self.lower, self.upper)]
        return np.array(list(itertools.product(*cols)))


def pwa_partition(region: Region, per_axis: int) -> list:
    """Uniform grid of per_axis^d cells exactly covering the region."""
    if per_axis < 1:
        raise ValueError("per_axis must be at least 1")
    d = region.lower.shape[0]
    edges = [np.linspace(region.lower[i], region.upper[i], per_axis + 1)
             for i in range(d)]
    cells = []
    for index in itertools.product(range(per_axis), repeat=d):
        lo = np.array([edges[i][index[i]] for i in range(d)])
        hi = np.array([edges[i][index[i] + 1] for i in range(d)])
        cells.append(ThetaCell(lo, hi))
    return cells


@dataclass(frozen=True)
class GammaAffine:
    """Affine model gamma_hat(theta) = value0 + slope . (theta - center)."""

    center: np.ndarray
    value0: float
    slope: np.ndarray

    def __call__(self, theta) -> float:
        theta = np.asarray(theta, dtype=float).reshape(-1)
        return self.value0 + float(self.slope @ (theta - self.center))


def _gamma_affine_for_geometry(g: _LeafGeometry, cell: ThetaCell):
    """Affine noise-margin model and remainder bound over one cell.

    Smooth branch: first-order expansion at the cell center with the
    Taylor remainder bounded through the Hessian of sigma (norm at most
    2 lambda_max(Q) / sigma_min on the cell).  Cells whose sigma lower bound
    degenerates (the cone point of the standard deviation) fall back to a
    constant model bracketing gamma by interval bounds on sigma alone.
    """
    center = cell.center
    rho = float(np.linalg.norm(cell.radii))
    if g.time == 0:
        return GammaAffine(center, 0.0, np.zeros_like(center)), 0.0
    Q = g.J.T @ g.V @ g.J
    tilde_c = g.v0 + g.J @ center
    var_c = float(max(tilde_c @ g.V @ tilde_c, 0.0))

    if g.noise_power == 2:
        # Quadratic in theta: exact Hessian 2 J^T V J everywhere.
        lam = float(np.linalg.eigvalsh(Q).max()) if Q.size else 0.0
        slope = 2.0 * g.noise_coeff * (g.J.T @ (g.V @ tilde_c))
        eps = abs(g.noise_coeff) * lam * rho * rho
        return GammaAffine(center, g.noise_coeff * var_c, slope), eps

    sigma_c = np.sqrt(var_c)
    lam = float(np.linalg.eigvalsh(Q).max()) if Q.size else 0.0
    lip = np.sqrt(lam)
    sigma_min = sigma_c - lip * rho
    if lam == 0.0:
        # Noise variance constant over the cell.
        return GammaAffine(center, g.noise_coeff * sigma_c,
                           np.zeros_like(center)), 0.0

    # Interval fallback: bracket sigma over the cell directly.  sigma is
    # convex, so its maximum sits at a vertex; the Lipschitz bound gives the
    # minimum.  Sound everywhere, including cells containing the cone point.
    verts = cell.vertices()
    tl = g.v0 + verts @ g.J.T
    sigma_hi = float(np.sqrt(np.clip(
        np.einsum("bi,ij,bj->b", tl, g.V, tl), 0.0, None)).max())
    sigma_lo = max(sigma_min, 0.0)
    mid = 0.5 * g.noise_coeff * (sigma_hi + sigma_lo)
    eps_flat = 0.5 * abs(g.noise_coeff) * (sigma_hi - sigma_lo)
    fallback = (GammaAffine(center, mid, np.zeros_like(center)), eps_flat)

    if sigma_min <= max(1e-12, 1e-6 * lip * rho):
        return fallback
    # Smooth branch: tangent model with a Hessian-based remainder, valid
    # because sigma stays bounded away from zero on the cell.
    slope = g.noise_coeff * (g.J.T @ (g.V @ tilde_c)) / sigma_c
    eps_smooth = abs(g.noise_coeff) * lam * rho * rho / sigma_min
    if eps_smooth <= eps_flat:
        return GammaAffine(center, g.noise_coeff * sigma_c, slope), eps_smooth
    return fallback


def pwa_linearize(model: ParametricLti, cell: ThetaCell, delta: float, t: int,
                  tilde_map=None, gamma_form: str = "stddev"):
    """Affine approximation of gamma over a parameter cell plus error bound.

    By default the cell coordinates are the predicate gradient itself
    (tilde = theta, requiring d == n); a (J, v0) pair maps cell coordinates
    to the gradient otherwise.  Returns (GammaAffine, eps) whose band
    [gamma_hat - eps, gamma_hat + eps] contains gamma on the cell.
    """
    d = cell.lower.shape[0]
    if tilde_map is None:
        if d != model.n:
            raise ValueError("identity linearization requires cells in "
                             "gradient space (d == n)")
        J, v0 = np.eye(model.n), np.zeros(model.n)
    else:
        J, v0 = tilde_map
        J = np.asarray(J, dtype=float)
        v0 = np.asarray(v0, dtype=float).reshape(-1)
    if gamma_form == "stddev":
        coeff, power = gaussian_quantile(delta), 1
    elif gamma_form == "variance_literal":
        coeff, power = float(erfinv(np.sqrt(np.pi) * delta)), 2
    else:
        raise ValueError(f"unknown gamma form {gamma_form!r}")
    geom = _LeafGeometry(label="", time=t, offset=0.0, v0=v0, J=J,
                         a_t=np.zeros(model.n), W=np.zeros((model.n, 0)),
                         V=noise_gram(model, t), noise_coeff=coeff,
                         noise_power=power, lo_stack=np.zeros(0),
                         hi_stack=np.zeros(0))
    return _gamma_affine_for_geometry(geom, cell)


def pwa_classify(cell: ThetaCell, spec: VerificationSpec) -> str:
    """Label a cell feasible, infeasible or unknown.

    After substituting the affine noise model, every leaf margin is concave
    piecewise-linear in theta on the cell, so the pessimistic margin
    (gamma_hat - eps) is minimized at a vertex: nonnegative at all vertices
    certifies the whole cell.  Infeasibility is certified through an affine
    upper envelope of the optimistic margin (input branch fixed at the cell
    center) falling below zero at every vertex.
    """
    verts = cell.vertices()
    center = cell.center
    feasible = True
    for g in spec._geometry:
        gaff, eps = _gamma_affine_for_geometry(g, cell)
        tl_v = g.v0 + verts @ g.J.T
        base = g.offset + tl_v @ g.a_t
        gam_v = gaff.value0 + (verts - center) @ gaff.slope
        if g.time > 0:
            f_v = tl_v @ g.W
            input_min = np.minimum(f_v * g.lo_stack, f_v * g.hi_stack).sum(axis=1)
        else:
            input_min = np.zeros(verts.shape[0])
        pess = base + input_min + gam_v - eps
        if pess.min() < -FEAS_TOL:
            feasible = False
            # Affine upper envelope of the optimistic margin: pick the
            # worst-case input branch at the center and keep it fixed.
            if g.time > 0:
                tilde_c = g.v0 + g.J @ center
                f_c = tilde_c @ g.W
                u_star = np.where(f_c >= 0.0, g.lo_stack, g.hi_stack)
                input_ub = (tl_v @ g.W) @ u_star
            else:
                input_ub = np.zeros(verts.shape[0])
            opt_ub = base + input_ub + gam_v + eps
            if opt_ub.max() < -FEAS_TOL:
                return INFEASIBLE_LABEL
    return FEASIBLE if feasible else UNKNOWN


def classify_cells(cells, spec: VerificationSpec) -> list:
    return [replace(cell, label=pwa_classify(cell, spec)) for cell in cells]
