"""Quadratically convergent Newton iteration for invariant tori.

The target systems are the reversible plane models

    flow:  dx/dt = omega + y + f(x, y, t),   dy/dt = g(x, y, t)
    map:   x' = x + Omega + y + f(x, y),     y' = y + g(x, y),  Omega = 2 pi omega

with f even and g odd under (x, t) -> (-x, -t) in the flow case, and the
analogous reversibility for maps.  Each step solves the linearized
(homological) equations, changes coordinates by the near-identity transform
they generate, and re-expands the remainder on a shrinking analyticity
schedule.  The output is a chain of transforms whose composition embeds an
invariant torus with rotation vector omega.
"""

import math
from dataclasses import dataclass, field as _dc_field, replace
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp

from .diophantine import Frequency
from .errors import (ParameterError, PersistenceError, ShapeError,
                     SmallDivisorError, StepFailureError)
from .fields import (FourierField, action_powers, default_action_nodes,
                     field_from_function, field_from_grid_samples,
                     jacobian_apply)
from .homological import solve_flow, solve_map_full
from .smoothing import SmoothingKernel, decompose

__all__ = [
    "Schedule", "make_schedule", "NearIdentityTransform", "TransformChain",
    "TorusEmbedding", "ConvergenceReport", "InvarianceReport", "newton_step",
    "run_kam_flow", "run_kam_map", "fit_embedding", "verify_invariance",
    "rotation_number",
]

# Columns of the per-step convergence table, in emission order.
CONVERGENCE_COLUMNS = ("m", "sup_f", "sup_g", "min_divisor",
                       "inversion_iters", "invariance_residual")

# A step may push action values past the nominal radius of the current
# domain by the size of the coordinate change; the polynomial jets stay
# trustworthy well past the nominal radius, so only a gross excursion
# aborts the step.
_NESTING_SLACK = 2.0
_CONTRACTION_FLOOR = 1e-14
_CONTRACTION_RATIO = 0.9


# --------------------------------------------------------------------------- #
# schedule
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class Schedule:
    """Geometric data driving the iteration.

    eps[m] is the error budget entering step m, s[m] the analyticity strip
    width, r[m] the action radius, and N[m] the mode cutoff that the
    smoothing kernel assigns to scale s[m].  All sequences have M + 1
    entries so that step m maps the state at index m to index m + 1.
    """

    d: int
    mu: float
    ell: float
    tau: float
    mu_tilde: float
    eps0: float
    M: int
    eps: np.ndarray
    s: np.ndarray
    r: np.ndarray
    N: tuple

    def to_dict(self) -> dict:
        return {
            "d": self.d, "mu": self.mu, "ell": self.ell, "tau": self.tau,
            "mu_tilde": self.mu_tilde, "eps0": self.eps0, "M": self.M,
            "eps": [float(e) for e in self.eps],
            "s": [float(s) for s in self.s],
            "r": [float(r) for r in self.r],
            "N": [int(n) for n in self.N],
        }


def make_schedule(d: int, mu: float, eps0: float, M: int,
                  kernel: Optional[SmoothingKernel] = None) -> Schedule:
    """Build the loss-of-smoothness schedule for M Newton steps.

    The exponents are tied together by the smoothness budget:
    ell = 2 d + 1 + mu, tau = d + mu / 100, and the superlinear rate
    mu_tilde = mu / (100 (2 tau + 1 + mu)).  From eps0 the sequences
    follow as eps_m = eps0^((1 + mu_tilde)^m), s_m = eps_m^(1/ell),
    r_m = s_m^(d + 1 + mu/10).
    """
    if not isinstance(d, (int, np.integer)) or d < 1:
        raise ParameterError(f"dimension must be a positive integer, got {d!r}")
    if not 0.0 < mu <= 0.5:
        raise ParameterError(f"smoothness margin mu must lie in (0, 0.5], got {mu}")
    if not 0.0 < eps0 < 1.0:
        raise ParameterError(f"initial error eps0 must lie in (0, 1), got {eps0}")
    if not isinstance(M, (int, np.integer)) or M < 1:
        raise ParameterError(f"step count M must be a positive integer, got {M!r}")
    d = int(d)
    M = int(M)
    ell = 2.0 * d + 1.0 + mu
    tau = d + mu / 100.0
    mu_tilde = mu / (100.0 * (2.0 * tau + 1.0 + mu))
    exps = (1.0 + mu_tilde) ** np.arange(M + 1)
    eps = eps0 ** exps
    s = eps ** (1.0 / ell)
    r = s ** (d + 1.0 + mu / 10.0)
    if s[0] > 0.5:
        raise ParameterError(
            f"eps0 = {eps0} gives initial strip s0 = {s[0]:.4f} > 1/2; "
            "choose a smaller initial error")
    kernel = kernel or SmoothingKernel()
    N = tuple(kernel.cutoff(float(sv)) for sv in s)
    return Schedule(d=d, mu=float(mu), ell=ell, tau=tau, mu_tilde=mu_tilde,
                    eps0=float(eps0), M=M, eps=eps, s=s, r=r, N=N)


# --------------------------------------------------------------------------- #
# transforms and their composition
# --------------------------------------------------------------------------- #

@dataclass(frozen=True)
class NearIdentityTransform:
    """One coordinate change  x = xi + U(xi, eta, t),  y = eta + V(xi, eta, t).

    u and v are the generators produced by the homological solve (the
    inverse direction, xi = x + u(x, y, t)); U and V are their fitted
    inverses.  composition_residual records sup |u + U o Psi| over the
    fitting grid, the honest measure of how well the pair inverts.
    """

    u: FourierField
    v: FourierField
    U: FourierField
    V: FourierField
    step: int
    composition_residual: float
    inversion_iters: int
    min_divisor: float
    sup_u: float
    sup_v: float


@dataclass
class TransformChain:
    """Composition of near-identity transforms, outermost first.

    evaluate applies the steps innermost-first (last appended first), so
    the chain realizes step0 o step1 o ... o step_{M-1} acting on new
    coordinates.
    """

    steps: list = _dc_field(default_factory=list)

    def __len__(self) -> int:
        return len(self.steps)

    def evaluate(self, x, y, t=None):
        """Map points through the full composition; arrays (S, d), t (S,)."""
        x = np.array(x, dtype=float, copy=True)
        y = np.array(y, dtype=float, copy=True)
        for tr in reversed(self.steps):
            dx = tr.U.evaluate(x, y, t, check_domain=False)
            dy = tr.V.evaluate(x, y, t, check_domain=False)
            x = x + dx
            y = y + dy
        return x, y


@dataclass(frozen=True)
class TorusEmbedding:
    """Parametrized invariant torus  K(theta, t) = (theta + x_offset, y).

    For flows K(theta + omega t, t) follows the trajectories; for maps
    (time-independent) the image of K is invariant and carries rotation
    vector omega.
    """

    x_offset: FourierField
    y: FourierField
    omega: np.ndarray
    r0: float
    mode: str

    @property
    def d(self) -> int:
        return self.x_offset.d

    def evaluate(self, theta, t=None):
        """Embedding values; theta (S, d) (or (S,) for d = 1), t (S,)."""
        theta = np.asarray(theta, dtype=float)
        squeeze = False
        if theta.ndim == 0:
            theta = theta.reshape(1, 1)
            squeeze = True
        elif theta.ndim == 1:
            theta = theta.reshape(-1, 1) if self.d == 1 else theta.reshape(1, -1)
        dx = self.x_offset.evaluate(theta, None, t, check_domain=False)
        yv = self.y.evaluate(theta, None, t, check_domain=False)
        x = theta + dx
        if squeeze:
            return x[0], yv[0]
        return x, yv

    def y_sup(self, grid: int = 128) -> float:
        return float(self.y.sup_norm(grid=grid).value)

    def to_dict(self) -> dict:
        return {
            "format": "torus-embedding/1",
            "mode": self.mode,
            "omega": [float(w) for w in np.atleast_1d(self.omega)],
            "r0": float(self.r0),
            "x_offset": self.x_offset.to_dict(),
            "y": self.y.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TorusEmbedding":
        if not isinstance(data, dict) or data.get("format") != "torus-embedding/1":
            raise PersistenceError(
                f"not a torus embedding record: format = {data.get('format')!r}"
                if isinstance(data, dict) else "torus embedding record must be a dict")
        mode = data.get("mode")
        if mode not in ("flow", "map"):
            raise PersistenceError(f"unknown embedding mode {mode!r}")
        try:
            x_offset = FourierField.from_dict(data["x_offset"])
            y = FourierField.from_dict(data["y"])
            omega = np.asarray(data["omega"], dtype=float)
            r0 = float(data["r0"])
        except KeyError as exc:
            raise PersistenceError(f"embedding record missing key {exc}") from exc
        if x_offset.d != len(omega) or y.d != len(omega):
            raise PersistenceError("embedding component dimensions disagree with omega")
        return cls(x_offset=x_offset, y=y, omega=omega, r0=r0, mode=mode)


def _y_identity(d: int, q_y: int, r: float) -> FourierField:
    """The vector field Y(x, y, t) = y as a FourierField (needs q_y >= 1)."""
    if q_y < 1:
        raise ParameterError("the action identity needs q_y >= 1")
    fld = FourierField.zeros(d, d, 0, q_y, r, ("even",) * d)
    index_of = {tuple(a): i for i, a in enumerate(action_powers(d, q_y))}
    zero_mode = (0,) * (d + 1)
    for i in range(d):
        e_i = tuple(1 if j == i else 0 for j in range(d))
        fld.coeffs[zero_mode + (index_of[e_i], i)] = 1.0
    return fld


def _invert_transform(u: FourierField, v: FourierField, xi, eta, t,
                      tol: float = 1e-13, max_iter: int = 50):
    """Solve  xi = x + u(x, y, t),  eta = y + v(x, y, t)  for (x, y).

    Plain fixed-point iteration; contraction factor is the size of the
    derivatives of (u, v), far below one for the fields this module
    produces.  The iteration runs on the increments dx = x - xi,
    dy = y - eta rather than on (x, y): forming x and subtracting xi back
    would drown increments near roundoff in the rounding of xi + dx, and
    the fitted transforms at late steps are exactly that small.
    Returns (dx, dy, iterations).
    """
    dx = np.zeros_like(np.asarray(xi, dtype=float))
    dy = np.zeros_like(np.asarray(eta, dtype=float))
    scale = 1.0 + (float(np.max(np.abs(xi))) if np.size(xi) else 0.0)
    for it in range(1, max_iter + 1):
        dx_new = -u.evaluate(xi + dx, eta + dy, t, check_domain=False)
        dy_new = -v.evaluate(xi + dx, eta + dy, t, check_domain=False)
        step = max(float(np.max(np.abs(dx_new - dx))),
                   float(np.max(np.abs(dy_new - dy))))
        dx, dy = dx_new, dy_new
        if step <= tol * scale:
            return dx, dy, it
    raise StepFailureError(
        f"transform inversion stalled after {max_iter} iterations "
        f"(last update {step:.3e})")


def _strip_time_harmonics(fld: FourierField) -> FourierField:
    """Zero every nonzero time harmonic exactly (for time-independent fits)."""
    sl = [slice(None)] * fld.coeffs.ndim
    sl[fld.d] = slice(fld.N, fld.N + 1)
    coeffs = np.zeros_like(fld.coeffs)
    coeffs[tuple(sl)] = fld.coeffs[tuple(sl)]
    return replace(fld, coeffs=coeffs)


# --------------------------------------------------------------------------- #
# one Newton step
# --------------------------------------------------------------------------- #

def newton_step(f: FourierField, g: FourierField, freq: Frequency,
                schedule: Schedule, m: int, mode: str = "flow"):
    """Perform Newton step m: solve, transform, re-expand the remainder.

    Parameters
    ----------
    f, g : FourierField
        Current perturbation pair (m = d components each), defined on the
        domain with strip s[m] and action radius r[m].
    freq : Frequency
        Certified rotation vector.
    schedule : Schedule
        Geometry of the iteration; supplies r[m], r[m+1] and the output
        cutoff N[m+1].
    m : int
        Step index, 0 <= m < schedule.M.
    mode : {"flow", "map"}

    Returns
    -------
    (transform, f_next, g_next, diagnostics)
        transform is the NearIdentityTransform for this step; f_next and
        g_next are the transformed remainders fitted at cutoff N[m+1] on
        the shrunk domain; diagnostics is a dict with the divisor floor,
        inversion iteration count, composition residual and grid sizes.
    """
    if mode not in ("flow", "map"):
        raise ParameterError(f"mode must be 'flow' or 'map', got {mode!r}")
    if not 0 <= m < schedule.M:
        raise ParameterError(f"step index {m} outside schedule of {schedule.M} steps")
    d = f.d
    if g.d != d or f.m != d or g.m != d:
        raise ShapeError("newton_step expects m = d vector fields f, g")
    if d != schedule.d:
        raise ShapeError(f"field dimension {d} does not match schedule d = {schedule.d}")

    r_m = float(schedule.r[m])
    r_next = float(schedule.r[m + 1])
    N_m = max(f.N, g.N)
    N_next = int(schedule.N[m + 1])
    q_y_fit = max(f.q_y, g.q_y, 1)

    # Fitting grid: wide enough that the polynomial part of the transformed
    # remainder (bandwidth <= 2 N_m + N_next plus a margin for composition
    # tails) does not alias into the retained modes.
    n_fit = max(N_next + 2 * N_m + 16, 2 * N_next + 2, 2 * (N_m + 8) + 2)
    N_UV = min(N_m + 8, (n_fit - 1) // 2)

    if mode == "flow":
        sol = solve_flow(f, g, freq)
        u, v = sol.u, sol.v
        g_mean = None
        min_div = sol.min_divisor
    else:
        u, v, g_mean, min_div = solve_map_full(f, g, freq)

    sup_u = u.majorant(0.0, r_m)
    sup_v = v.majorant(0.0, r_m)

    if mode == "flow":
        # Transformed remainders in the old variables:
        #   T_f = (D_x u) (y + f) + (D_y u) g,   T_g likewise with v.
        Y = _y_identity(d, q_y_fit, r_m)
        W = Y + f
        T_f = jacobian_apply(u, W, "x") + jacobian_apply(u, g, "y")
        T_g = jacobian_apply(v, W, "x") + jacobian_apply(v, g, "y")

    # Sample the new perturbation on (angle/time grid) x (action nodes in
    # the shrunk ball) by inverting the generator at each node.
    grid = 2.0 * np.pi * np.arange(n_fit) / n_fit
    n_axes = d + 1 if mode == "flow" else d
    axes = np.meshgrid(*([grid] * n_axes), indexing="ij")
    xi_flat = np.stack([a.ravel() for a in axes[:d]], axis=-1)
    S = xi_flat.shape[0]
    t_flat = axes[d].ravel() if mode == "flow" else np.zeros(S)
    y_nodes = default_action_nodes(d, q_y_fit, r_next)
    n_y = len(y_nodes)

    f_vals = np.empty((S, n_y, d))
    g_vals = np.empty((S, n_y, d))
    U_vals = np.empty((S, n_y, d))
    V_vals = np.empty((S, n_y, d))
    comp_res = 0.0
    iters = 0
    y_excursion = 0.0
    Omega = 2.0 * np.pi * freq.omega if mode == "map" else None

    for iy in range(n_y):
        eta = np.broadcast_to(y_nodes[iy], (S, d))
        dxs, dys, it = _invert_transform(u, v, xi_flat, eta, t_flat)
        xs, ys = xi_flat + dxs, eta + dys
        iters = max(iters, it)
        y_excursion = max(y_excursion, float(np.max(np.sqrt(np.sum(ys * ys, axis=1)))))
        U_vals[:, iy, :] = dxs
        V_vals[:, iy, :] = dys
        if mode == "flow":
            f_vals[:, iy, :] = T_f.evaluate(xs, ys, t_flat, check_domain=False)
            g_vals[:, iy, :] = T_g.evaluate(xs, ys, t_flat, check_domain=False)
        else:
            fx = f.evaluate(xs, ys, None, check_domain=False)
            gx = g.evaluate(xs, ys, None, check_domain=False)
            x1 = xs + Omega + ys + fx
            y1 = ys + gx
            xs_shift = xs + Omega
            f_vals[:, iy, :] = (u.evaluate(x1, y1, None, check_domain=False)
                                - u.evaluate(xs_shift, ys, None, check_domain=False))
            g_vals[:, iy, :] = (v.evaluate(x1, y1, None, check_domain=False)
                                - v.evaluate(xs_shift, ys, None, check_domain=False)
                                + g_mean.evaluate(xs, ys, None, check_domain=False))

    if y_excursion > _NESTING_SLACK * r_m + 1e-12:
        raise StepFailureError(
            f"step {m}: inverted action values reach |y| = {y_excursion:.3e}, "
            f"far outside the domain radius r = {r_m:.3e}")
    nesting_exceeded = y_excursion > r_m

    def _fit(vals, N_out, parity):
        shaped = vals.reshape((n_fit,) * n_axes + (n_y, d))
        if mode == "map":
            shaped = np.ascontiguousarray(np.broadcast_to(
                shaped[..., None, :, :], (n_fit,) * d + (n_fit, n_y, d)))
        fld = field_from_grid_samples(shaped, d, N_out, q_y_fit, r_next,
                                      y_nodes=y_nodes, parity=parity)
        if mode == "map":
            fld = _strip_time_harmonics(fld)
        return fld

    flow = mode == "flow"
    U = _fit(U_vals, N_UV, ("odd",) * d if flow else None)
    V = _fit(V_vals, N_UV, ("even",) * d if flow else None)
    f_next = _fit(f_vals, N_next, ("even",) * d if flow else None)
    g_next = _fit(g_vals, N_next, ("odd",) * d if flow else None)

    # Cross-check the pair (u, v) / (U, V): pushing the grid forward through
    # xi = x + u and evaluating the fitted inverse there must cancel.
    for iy in range(n_y):
        eta = np.broadcast_to(y_nodes[iy], (S, d))
        u_here = u.evaluate(xi_flat, eta, t_flat, check_domain=False)
        v_here = v.evaluate(xi_flat, eta, t_flat, check_domain=False)
        xi_p = xi_flat + u_here
        eta_p = eta + v_here
        res_u = np.max(np.abs(u_here + U.evaluate(xi_p, eta_p, t_flat,
                                                  check_domain=False)))
        res_v = np.max(np.abs(v_here + V.evaluate(xi_p, eta_p, t_flat,
                                                  check_domain=False)))
        comp_res = max(comp_res, float(res_u), float(res_v))
    tol_comp = max(1e-10, 1e-9 * max(sup_u, sup_v))
    if comp_res > tol_comp:
        raise StepFailureError(
            f"step {m}: transform composition residual {comp_res:.3e} exceeds "
            f"tolerance {tol_comp:.3e}")

    transform = NearIdentityTransform(
        u=u, v=v, U=U, V=V, step=m, composition_residual=comp_res,
        inversion_iters=iters, min_divisor=float(min_div),
        sup_u=float(sup_u), sup_v=float(sup_v))
    diagnostics = {
        "min_divisor": float(min_div),
        "inversion_iters": iters,
        "composition_residual": comp_res,
        "n_fit": n_fit,
        "N_UV": N_UV,
        "N_next": N_next,
        "sup_u": float(sup_u),
        "sup_v": float(sup_v),
        "y_excursion": y_excursion,
        "nesting_exceeded": nesting_exceeded,
    }
    return transform, f_next, g_next, diagnostics


# --------------------------------------------------------------------------- #
# full runs
# --------------------------------------------------------------------------- #

@dataclass
class InvarianceReport:
    """Result of checking an embedding against the true dynamics."""

    mode: str
    residual: float
    x_residual: float
    y_residual: float
    samples: int
    dt: float
    tol: float


@dataclass
class ConvergenceReport:
    """Everything a run produces besides the embedding itself.

    rows holds one dict per Newton step (plus a closing row for the final
    state) with the majorants of the carried perturbation on entry, the
    step diagnostics, and the per-step invariance residual when it was
    measured.  failed runs keep the last good chain and embedding.
    """

    mode: str
    omega: np.ndarray
    schedule: Schedule
    rows: list
    chain: TransformChain
    embedding: Optional[TorusEmbedding]
    invariance_residual: Optional[float]
    failed: bool = False
    failure: Optional[str] = None
    warnings: list = _dc_field(default_factory=list)

    @property
    def steps_completed(self) -> int:
        return len(self.chain.steps)

    @property
    def final_sup_f(self) -> float:
        return float(self.rows[-1]["sup_f"]) if self.rows else math.nan

    @property
    def final_sup_g(self) -> float:
        return float(self.rows[-1]["sup_g"]) if self.rows else math.nan

    def majorant_sequence(self) -> np.ndarray:
        return np.array([row["sup_f"] for row in self.rows])

    def fitted_order(self) -> float:
        """Slope of log eps_{m+1} against log eps_m over the useful range.

        A quadratic scheme gives 2; the schedule only promises
        1 + mu_tilde.  Entries at the roundoff floor or above 0.1 are
        dropped; returns nan when fewer than two consecutive pairs remain.
        """
        e = self.majorant_sequence()
        keep = (e > 1e-280) & (e < 0.1)
        pairs = [(math.log(e[i]), math.log(e[i + 1]))
                 for i in range(len(e) - 1) if keep[i] and keep[i + 1]]
        if len(pairs) < 2:
            return math.nan
        xs = np.array([p[0] for p in pairs])
        ys = np.array([p[1] for p in pairs])
        return float(np.polyfit(xs, ys, 1)[0])

    def csv_header(self) -> tuple:
        return CONVERGENCE_COLUMNS

    def csv_rows(self) -> list:
        out = []
        for row in self.rows:
            out.append([row.get(col, math.nan) for col in CONVERGENCE_COLUMNS])
        return out

    def summary(self) -> dict:
        return {
            "mode": self.mode,
            "omega": [float(w) for w in np.atleast_1d(self.omega)],
            "d": self.schedule.d,
            "M": self.schedule.M,
            "steps_completed": self.steps_completed,
            "final_sup_f": self.final_sup_f,
            "final_sup_g": self.final_sup_g,
            "fitted_order": self.fitted_order(),
            "invariance_residual": (None if self.invariance_residual is None
                                    else float(self.invariance_residual)),
            "failed": self.failed,
            "failure": self.failure,
            "warnings": list(self.warnings),
        }


def _as_field_fn(h, mode: str):
    """Uniform (x, y, t) -> (S, d) evaluator from a field or a callable."""
    if isinstance(h, FourierField):
        if mode == "map":
            return lambda x, y, t: h.evaluate(x, y, None, check_domain=False)
        return lambda x, y, t: h.evaluate(x, y, t, check_domain=False)
    return h


def _materialize(h, what: str, d: int, N: int, q_y: int, r: float,
                 mode: str, parity) -> FourierField:
    if isinstance(h, FourierField):
        if h.d != d or h.m != d:
            raise ShapeError(f"{what} must have d = m = {d}")
        return h
    if not callable(h):
        raise ParameterError(f"{what} must be a FourierField or a callable")
    return field_from_function(h, d, d, N, q_y=q_y, r=r, parity=parity,
                               time_independent=(mode == "map"))


def fit_embedding(chain: TransformChain, freq: Frequency, r0: float,
                  mode: str = "flow", N: Optional[int] = None,
                  n_grid: Optional[int] = None) -> TorusEmbedding:
    """Fit the composed chain at y = 0 to a torus embedding.

    The chain is evaluated on a product angle(/time) grid and the offsets
    are fitted by FFT; for maps the result is made exactly
    time-independent.
    """
    d = freq.d
    if N is None:
        N = max([tr.U.N for tr in chain.steps], default=0) + 8
    n = int(n_grid) if n_grid is not None else 2 * N + 2
    if n < 2 * N + 1:
        raise ParameterError(f"grid size {n} too small for cutoff N = {N}")
    grid = 2.0 * np.pi * np.arange(n) / n
    n_axes = d + 1 if mode == "flow" else d
    axes = np.meshgrid(*([grid] * n_axes), indexing="ij")
    theta = np.stack([a.ravel() for a in axes[:d]], axis=-1)
    S = theta.shape[0]
    t = axes[d].ravel() if mode == "flow" else np.zeros(S)
    x, y = chain.evaluate(theta, np.zeros((S, d)), t)
    off_vals = (x - theta).reshape((n,) * n_axes + (1, d))
    y_vals = y.reshape((n,) * n_axes + (1, d))
    if mode == "map":
        off_vals = np.ascontiguousarray(np.broadcast_to(
            off_vals[..., None, :, :], (n,) * d + (n, 1, d)))
        y_vals = np.ascontiguousarray(np.broadcast_to(
            y_vals[..., None, :, :], (n,) * d + (n, 1, d)))
    flow = mode == "flow"
    x_offset = field_from_grid_samples(off_vals, d, N, 0, 0.0,
                                       parity=("odd",) * d if flow else None)
    y_field = field_from_grid_samples(y_vals, d, N, 0, 0.0,
                                      parity=("even",) * d if flow else None)
    if mode == "map":
        x_offset = _strip_time_harmonics(x_offset)
        y_field = _strip_time_harmonics(y_field)
    return TorusEmbedding(x_offset=x_offset, y=y_field,
                          omega=np.array(freq.omega, dtype=float),
                          r0=float(r0), mode=mode)


def _run(mode: str, f, g, freq: Frequency, schedule: Schedule, tol: float,
         kernel: Optional[SmoothingKernel], q_y: int, verify_steps: bool,
         verify_samples: int, verify_dt: float, verify_tol: float):
    d = schedule.d
    if freq.d != d:
        raise ShapeError(f"frequency dimension {freq.d} does not match schedule d = {d}")
    kernel = kernel or SmoothingKernel()
    flow = mode == "flow"
    N_master = int(schedule.N[schedule.M])
    f_field = _materialize(f, "f", d, N_master, q_y, schedule.r[0], mode,
                           ("even",) * d if flow else None)
    g_field = _materialize(g, "g", d, N_master, q_y, schedule.r[0], mode,
                           ("odd",) * d if flow else None)
    system = (f, g)

    dec_f = decompose(f_field, schedule, kernel)
    dec_g = decompose(g_field, schedule, kernel)

    warnings = []
    for nu, (pf, pg) in enumerate(zip(dec_f.pieces, dec_g.pieces)):
        budget_f = schedule.eps[nu]
        budget_g = schedule.eps[nu] * schedule.s[nu] ** d
        mf = pf.majorant(0.0, schedule.r[nu])
        mg = pg.majorant(0.0, schedule.r[nu])
        if mf > 10.0 * budget_f:
            warnings.append(
                f"f piece {nu} has majorant {mf:.3e}, over 10x the budget "
                f"{budget_f:.3e}; the schedule may be too optimistic")
        if mg > 10.0 * budget_g:
            warnings.append(
                f"g piece {nu} has majorant {mg:.3e}, over 10x the budget "
                f"{budget_g:.3e}; the schedule may be too optimistic")

    chain = TransformChain([])
    cur_f, cur_g = dec_f.pieces[0], dec_g.pieces[0]
    rows = []
    failed = False
    failure = None
    embedding = None
    N_emb = int(schedule.N[0]) + 8

    for m in range(schedule.M):
        r_m = float(schedule.r[m])
        sup_f = cur_f.majorant(0.0, r_m)
        sup_g = cur_g.majorant(0.0, r_m)
        osc_f = cur_f.oscillating_part().majorant(0.0, r_m)
        osc_g = cur_g.oscillating_part().majorant(0.0, r_m)
        row = {
            "m": m, "sup_f": sup_f, "sup_g": sup_g,
            "osc_f": osc_f, "osc_g": osc_g,
            "c_f": sup_f / schedule.eps[m],
            "c_g": sup_g / (schedule.eps[m] * schedule.s[m] ** d),
            "min_divisor": math.nan, "inversion_iters": 0,
            "composition_residual": math.nan,
            "invariance_residual": math.nan,
        }
        rows.append(row)
        if tol > 0.0 and max(sup_f, sup_g) < tol:
            break
        try:
            transform, f_next, g_next, diag = newton_step(
                cur_f, cur_g, freq, schedule, m, mode=mode)
            rem_f_osc = f_next.oscillating_part().majorant(0.0, schedule.r[m + 1])
            rem_g_osc = g_next.oscillating_part().majorant(0.0, schedule.r[m + 1])
            if osc_f > _CONTRACTION_FLOOR and rem_f_osc > _CONTRACTION_RATIO * osc_f:
                raise StepFailureError(
                    f"step {m}: no contraction in f "
                    f"({rem_f_osc:.3e} after {osc_f:.3e})")
            if osc_g > _CONTRACTION_FLOOR and rem_g_osc > _CONTRACTION_RATIO * osc_g:
                raise StepFailureError(
                    f"step {m}: no contraction in g "
                    f"({rem_g_osc:.3e} after {osc_g:.3e})")
        except (StepFailureError, SmallDivisorError) as exc:
            failed = True
            failure = str(exc)
            break
        row.update({
            "min_divisor": diag["min_divisor"],
            "inversion_iters": diag["inversion_iters"],
            "composition_residual": diag["composition_residual"],
        })
        if diag["nesting_exceeded"]:
            warnings.append(
                f"step {m}: action excursion {diag['y_excursion']:.3e} past the "
                f"nominal radius {r_m:.3e} (within the jet trust region)")
        chain.steps.append(transform)
        cur_f = f_next + dec_f.pieces[m + 1]
        cur_g = g_next + dec_g.pieces[m + 1]
        if verify_steps:
            embedding = fit_embedding(chain, freq, schedule.r[0], mode, N=N_emb)
            inv = verify_invariance(embedding, system, samples=verify_samples,
                                    dt=verify_dt, tol=verify_tol)
            row["invariance_residual"] = inv.residual

    if not failed and len(chain.steps) == schedule.M:
        r_fin = float(schedule.r[schedule.M])
        rows.append({
            "m": schedule.M,
            "sup_f": cur_f.majorant(0.0, r_fin),
            "sup_g": cur_g.majorant(0.0, r_fin),
            "osc_f": cur_f.oscillating_part().majorant(0.0, r_fin),
            "osc_g": cur_g.oscillating_part().majorant(0.0, r_fin),
            "c_f": cur_f.majorant(0.0, r_fin) / schedule.eps[schedule.M],
            "c_g": cur_g.majorant(0.0, r_fin) / (schedule.eps[schedule.M]
                                                 * schedule.s[schedule.M] ** d),
            "min_divisor": math.nan, "inversion_iters": 0,
            "composition_residual": math.nan,
            "invariance_residual": math.nan,
        })

    embedding = fit_embedding(chain, freq, schedule.r[0], mode, N=N_emb)
    inv_final = verify_invariance(embedding, system, samples=verify_samples,
                                  dt=verify_dt, tol=verify_tol)
    if rows:
        rows[-1]["invariance_residual"] = inv_final.residual

    return ConvergenceReport(
        mode=mode, omega=np.array(freq.omega, dtype=float), schedule=schedule,
        rows=rows, chain=chain, embedding=embedding,
        invariance_residual=inv_final.residual, failed=failed, failure=failure,
        warnings=warnings)


def run_kam_flow(f, g, freq: Frequency, schedule: Schedule, tol: float = 0.0,
                 kernel: Optional[SmoothingKernel] = None, q_y: int = 2,
                 verify_steps: bool = True, verify_samples: int = 64,
                 verify_dt: float = 1.0, verify_tol: float = 1e-12
                 ) -> ConvergenceReport:
    """Run the full Newton iteration for a periodically forced flow.

    f and g may be FourierFields (m = d components) or callables
    (x, y, t) -> (S, d); callables are sampled at the finest cutoff of the
    schedule and the pair is decomposed into band-limited pieces fed to
    the steps one scale at a time.  A step failure ends the run early
    with the last good chain; the report carries the failure text.
    """
    return _run("flow", f, g, freq, schedule, tol, kernel, q_y,
                verify_steps, verify_samples, verify_dt, verify_tol)


def run_kam_map(f, g, freq: Frequency, schedule: Schedule, tol: float = 0.0,
                kernel: Optional[SmoothingKernel] = None, q_y: int = 2,
                verify_steps: bool = True, verify_samples: int = 64,
                verify_tol: float = 1e-12) -> ConvergenceReport:
    """Run the Newton iteration for an exact-symplectic-free reversible map.

    The map is x' = x + 2 pi omega + y + f(x, y), y' = y + g(x, y); f and g
    must be time-independent (callables receive t = 0 samples only).  The
    angular average of g is carried along rather than solved away, so a
    small residual mean survives in g; convergence is measured on the
    oscillating parts.
    """
    return _run("map", f, g, freq, schedule, tol, kernel, q_y,
                verify_steps, verify_samples, 1.0, verify_tol)


# --------------------------------------------------------------------------- #
# verification
# --------------------------------------------------------------------------- #

def _wrap_angle(delta: np.ndarray) -> np.ndarray:
    return (delta + np.pi) % (2.0 * np.pi) - np.pi


def verify_invariance(embedding: TorusEmbedding, system, omega=None,
                      samples: int = 64, dt: float = 1.0,
                      tol: float = 1e-12) -> InvarianceReport:
    """Measure how close an embedding is to an invariant torus.

    For flows the embedded circle of initial conditions K(theta, 0) is
    integrated for time dt with a high-order adaptive integrator at
    tolerance tol and compared against K(theta + omega dt, dt).  For maps
    the image A(K(theta)) is compared against K(theta + 2 pi omega).
    Angle mismatches are wrapped to (-pi, pi].

    system is the pair (f, g) of fields or callables defining the true
    dynamics, or, for maps, optionally a single callable
    A(x, y) -> (x1, y1).
    """
    mode = embedding.mode
    d = embedding.d
    omega = np.atleast_1d(np.asarray(
        embedding.omega if omega is None else omega, dtype=float))
    axes = np.meshgrid(*([2.0 * np.pi * np.arange(samples) / samples] * d),
                       indexing="ij")
    theta = np.stack([a.ravel() for a in axes], axis=-1)
    S = theta.shape[0]

    if mode == "flow":
        if not (isinstance(system, (tuple, list)) and len(system) == 2):
            raise ParameterError("flow verification needs the pair (f, g)")
        f_fn = _as_field_fn(system[0], mode)
        g_fn = _as_field_fn(system[1], mode)
        x0, y0 = embedding.evaluate(theta, np.zeros(S))
        z0 = np.concatenate([x0.ravel(), y0.ravel()])

        def rhs(t, z):
            x = z[: S * d].reshape(S, d)
            y = z[S * d:].reshape(S, d)
            tt = np.full(S, t)
            dx = omega + y + np.asarray(f_fn(x, y, tt)).reshape(S, d)
            dy = np.asarray(g_fn(x, y, tt)).reshape(S, d)
            return np.concatenate([dx.ravel(), dy.ravel()])

        sol = solve_ivp(rhs, (0.0, dt), z0, method="DOP853",
                        rtol=tol, atol=tol * 1e-3, dense_output=False)
        if not sol.success:
            raise StepFailureError(f"verification integration failed: {sol.message}")
        zT = sol.y[:, -1]
        xT = zT[: S * d].reshape(S, d)
        yT = zT[S * d:].reshape(S, d)
        x_target, y_target = embedding.evaluate(theta + omega * dt,
                                                np.full(S, dt))
        x_res = float(np.max(np.abs(_wrap_angle(xT - x_target))))
        y_res = float(np.max(np.abs(yT - y_target)))
    else:
        Omega = 2.0 * np.pi * omega
        if isinstance(system, (tuple, list)) and len(system) == 2:
            f_fn = _as_field_fn(system[0], mode)
            g_fn = _as_field_fn(system[1], mode)

            def apply_map(x, y):
                tt = np.zeros(x.shape[0])
                fx = np.asarray(f_fn(x, y, tt)).reshape(x.shape)
                gx = np.asarray(g_fn(x, y, tt)).reshape(x.shape)
                return x + Omega + y + fx, y + gx
        elif callable(system):
            apply_map = system
        else:
            raise ParameterError(
                "map verification needs the pair (f, g) or a callable map")
        x0, y0 = embedding.evaluate(theta)
        x1, y1 = apply_map(x0, y0)
        x_target, y_target = embedding.evaluate(theta + Omega)
        x_res = float(np.max(np.abs(_wrap_angle(np.asarray(x1) - x_target))))
        y_res = float(np.max(np.abs(np.asarray(y1) - y_target)))

    return InvarianceReport(mode=mode, residual=max(x_res, y_res),
                            x_residual=x_res, y_residual=y_res,
                            samples=samples, dt=float(dt), tol=float(tol))


def rotation_number(map_fn: Callable, z0, n_iter: int = 4096):
    """Weighted Birkhoff estimate of the rotation vector of an orbit.

    The exponential bump w(t) = exp(-1 / (t (1 - t))) weights the angle
    increments (x_{j+1} - x_j) / 2 pi; on a smooth quasiperiodic orbit the
    average converges faster than any power of 1/n_iter.  map_fn maps
    (x, y) arrays of shape (1, d) to the next point; z0 = (x0, y0).
    """
    x = np.atleast_1d(np.asarray(z0[0], dtype=float)).reshape(1, -1)
    y = np.atleast_1d(np.asarray(z0[1], dtype=float)).reshape(1, -1)
    d = x.shape[1]
    acc = np.zeros(d)
    wsum = 0.0
    for j in range(n_iter):
        x1, y1 = map_fn(x, y)
        x1 = np.asarray(x1, dtype=float).reshape(1, d)
        y1 = np.asarray(y1, dtype=float).reshape(1, d)
        tj = (j + 1.0) / (n_iter + 1.0)
        w = math.exp(-1.0 / (tj * (1.0 - tj)))
        acc += w * (x1 - x).ravel() / (2.0 * np.pi)
        wsum += w
        x, y = x1, y1
    rot = acc / wsum
    return float(rot[0]) if d == 1 else rot
