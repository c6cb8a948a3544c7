"""Truncated Fourier fields on a torus cross a polydisc of actions.

A field is a finite sum

    F(x, y, t) = sum_{|k|_1 + |l| <= N}  sum_{|alpha| <= q_y}
                 c[k, l, alpha] * y^alpha * exp(i (<k, x> + l t))

with d angle variables x, d action variables y (|y|_2 <= r), and one time
angle t.  Components are vector valued (m components).  Coefficients are
stored densely as a complex array of shape ``(2N+1,)*d + (2N+1,) + (P, m)``
where axis ``a`` holds wave number ``k_a = index - N``, the ``d``-th axis
holds the time harmonic ``l = index - N``, and ``P`` enumerates the action
multi-powers in graded lexicographic order.

Real fields satisfy c(-k,-l) = conj(c(k,l)).  Parity is tracked per
component: an "even" component satisfies F(-x, y, -t) = F(x, y, t)
(equivalently c(-k,-l) = c(k,l), i.e. real coefficients), an "odd" one
F(-x, y, -t) = -F(x, y, t) (purely imaginary coefficients).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
from scipy.signal import fftconvolve

from .errors import DomainError, ParameterError, PersistenceError, ShapeError, StructureError

_PARITIES = ("even", "odd", None)
_MODE_LETTERS = "abcdefgh"


class TorusIndex(NamedTuple):
    """A single Fourier mode: angle wave vector ``k`` and time harmonic ``l``."""

    k: tuple
    l: int


@dataclass(frozen=True)
class SupNormReport:
    """Sup-norm estimate of a field.

    Attributes
    ----------
    value : float
        Grid supremum of |F| over the real torus, maximised over the action
        samples {0, +/- r e_i} and components.
    majorant : float
        Coefficient majorant max_m sum |c| e^{s(|k|+|l|)} r^{|alpha|}; an
        upper bound for the sup on the complex strip of width ``s``.
    grid_size : int
    s_eff : float
    r_eff : float
    """

    value: float
    majorant: float
    grid_size: int
    s_eff: float
    r_eff: float


def action_powers(d: int, q_y: int) -> np.ndarray:
    """Multi-indices alpha with |alpha| <= q_y in graded lexicographic order.

    Returns an integer array of shape (P, d).
    """
    if d < 1 or q_y < 0:
        raise ParameterError(f"need d >= 1 and q_y >= 0, got d={d}, q_y={q_y}")
    combos = [a for a in itertools.product(range(q_y + 1), repeat=d) if sum(a) <= q_y]
    combos.sort(key=lambda a: (sum(a), a))
    return np.array(combos, dtype=int).reshape(len(combos), d)


def abs_order_grid(n_axes: int, N: int) -> np.ndarray:
    """Array of |k_1| + ... + |k_n| over an n_axes-fold mode grid."""
    k = np.abs(np.arange(-N, N + 1))
    total = np.zeros((), dtype=int)
    for _ in range(n_axes):
        total = total[..., None] + k
    return total


def mode_mask(d: int, N: int) -> np.ndarray:
    """Boolean array over mode axes marking |k|_1 + |l| <= N."""
    return abs_order_grid(d + 1, N) <= N


def _reverse_modes(coeffs: np.ndarray, d: int) -> np.ndarray:
    sl = tuple([slice(None, None, -1)] * (d + 1))
    return coeffs[sl]


def _finalize(coeffs: np.ndarray, d: int, parity, tol: float = 1e-6,
              what: str = "field") -> np.ndarray:
    """Verify reality/parity up to ``tol`` (relative) and project exactly."""
    scale = float(np.max(np.abs(coeffs))) if coeffs.size else 0.0
    if scale == 0.0:
        return coeffs.copy()
    rev = _reverse_modes(coeffs, d)
    dev = float(np.max(np.abs(coeffs - np.conj(rev))))
    if dev > tol * scale:
        raise StructureError(
            f"{what}: reality symmetry violated (relative deviation {dev / scale:.3e})"
        )
    out = 0.5 * (coeffs + np.conj(rev))
    if parity is not None:
        for i, tag in enumerate(parity):
            if tag is None:
                continue
            comp = out[..., i]
            if tag == "even":
                pdev = float(np.max(np.abs(comp.imag)))
                if pdev > tol * scale:
                    raise StructureError(
                        f"{what}: component {i} not even "
                        f"(relative deviation {pdev / scale:.3e})"
                    )
                out[..., i] = comp.real
            elif tag == "odd":
                pdev = float(np.max(np.abs(comp.real)))
                if pdev > tol * scale:
                    raise StructureError(
                        f"{what}: component {i} not odd "
                        f"(relative deviation {pdev / scale:.3e})"
                    )
                out[..., i] = 1j * comp.imag
            else:
                raise ParameterError(f"unknown parity tag {tag!r}")
    return out


def _combine_parity(p1, p2):
    """Parity of a product: even*even = odd*odd = even, mixed = odd."""
    if p1 is None or p2 is None:
        return None
    return "even" if p1 == p2 else "odd"


def _flip_parity(tag):
    if tag == "even":
        return "odd"
    if tag == "odd":
        return "even"
    return None


@dataclass(frozen=True)
class FourierField:
    """Truncated vector-valued Fourier field; see module docstring.

    Parameters
    ----------
    d : int
        Number of angle (and action) dimensions.
    m : int
        Number of components.
    N : int
        Mode cutoff: coefficients vanish unless |k|_1 + |l| <= N.
    q_y : int
        Maximal total action power.
    r : float
        Action radius the field is intended to be used on.
    coeffs : ndarray, complex
        Shape ``(2N+1,)*(d+1) + (P, m)``.
    parity : tuple or None
        Per-component parity tags ("even", "odd" or None).
    """

    d: int
    m: int
    N: int
    q_y: int
    r: float
    coeffs: np.ndarray
    parity: Optional[tuple] = None

    def __post_init__(self):
        if self.d < 1 or self.m < 1 or self.N < 0 or self.q_y < 0:
            raise ParameterError(
                f"invalid field signature d={self.d}, m={self.m}, "
                f"N={self.N}, q_y={self.q_y}"
            )
        if self.r < 0:
            raise ParameterError(f"action radius must be nonnegative, got {self.r}")
        P = len(action_powers(self.d, self.q_y))
        want = (2 * self.N + 1,) * (self.d + 1) + (P, self.m)
        if tuple(self.coeffs.shape) != want:
            raise ShapeError(
                f"coefficient array has shape {self.coeffs.shape}, expected {want}"
            )
        if not np.iscomplexobj(self.coeffs):
            raise ShapeError("coefficient array must be complex")
        if self.parity is not None:
            if len(self.parity) != self.m:
                raise ShapeError("parity tuple length must equal number of components")
            for tag in self.parity:
                if tag not in _PARITIES:
                    raise ParameterError(f"unknown parity tag {tag!r}")

    # ------------------------------------------------------------------ #
    # constructors
    # ------------------------------------------------------------------ #

    @classmethod
    def zeros(cls, d: int, m: int, N: int, q_y: int = 0, r: float = 0.0,
              parity=None) -> "FourierField":
        P = len(action_powers(d, q_y))
        coeffs = np.zeros((2 * N + 1,) * (d + 1) + (P, m), dtype=complex)
        return cls(d, m, N, q_y, r, coeffs, _as_parity(parity, m))

    @property
    def powers(self) -> np.ndarray:
        return action_powers(self.d, self.q_y)

    # ------------------------------------------------------------------ #
    # evaluation
    # ------------------------------------------------------------------ #

    def _normalize_inputs(self, x, y, t):
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0 or (x.ndim == 1 and self.d > 1 and x.shape == (self.d,))
        if x.ndim == 0:
            x = x.reshape(1, 1)
        elif x.ndim == 1:
            x = x.reshape(-1, 1) if self.d == 1 else x.reshape(1, self.d)
        if x.ndim != 2 or x.shape[1] != self.d:
            raise ShapeError(f"angle samples must have shape (S, {self.d})")
        S = x.shape[0]
        if y is None:
            y = np.zeros((S, self.d))
        else:
            y = np.asarray(y, dtype=float)
            if y.ndim == 0:
                y = np.full((S, 1), float(y)) if self.d == 1 else None
                if y is None:
                    raise ShapeError("scalar action sample only valid for d = 1")
            elif y.ndim == 1:
                y = y.reshape(-1, 1) if self.d == 1 else np.broadcast_to(
                    y.reshape(1, self.d), (S, self.d)).copy()
            if y.shape != (S, self.d):
                raise ShapeError(f"action samples must have shape ({S}, {self.d})")
        if t is None:
            t = np.zeros(S)
        else:
            t = np.asarray(t, dtype=float)
            if t.ndim == 0:
                t = np.full(S, float(t))
            if t.shape != (S,):
                raise ShapeError(f"time samples must have shape ({S},)")
        return x, y, t, S, scalar

    def _check_domain(self, y: np.ndarray):
        if self.q_y == 0:
            return
        norms = np.sqrt(np.sum(y * y, axis=1))
        limit = self.r + max(1e-12, 1e-9 * self.r)
        if np.any(norms > limit):
            raise DomainError(
                f"action sample with |y| = {float(np.max(norms)):.6e} outside "
                f"radius r = {self.r:.6e}"
            )

    def evaluate_complex(self, x, y=None, t=None, check_domain: bool = True) -> np.ndarray:
        """Evaluate the (complex) trigonometric sum at samples.

        ``x`` has shape (S, d) (or (S,) when d = 1), ``y`` likewise, ``t``
        has shape (S,).  Returns an (S, m) array.
        """
        x, y, t, S, scalar = self._normalize_inputs(x, y, t)
        if check_domain:
            self._check_domain(y)
        modes = np.arange(-self.N, self.N + 1)
        letters = _MODE_LETTERS[: self.d + 1]
        operands = [self.coeffs]
        subs = [letters + "pm"]
        for a in range(self.d):
            operands.append(np.exp(1j * np.outer(x[:, a], modes)))
            subs.append("s" + letters[a])
        operands.append(np.exp(1j * np.outer(t, modes)))
        subs.append("s" + letters[self.d])
        per_power = np.einsum(",".join(subs) + "->spm", *operands, optimize=True)
        Y = _power_matrix(y, self.powers)
        out = np.einsum("spm,sp->sm", per_power, Y)
        return out[0] if scalar else out

    def evaluate(self, x, y=None, t=None, check_domain: bool = True) -> np.ndarray:
        """Evaluate as a real field (the real part of the trigonometric sum)."""
        return self.evaluate_complex(x, y, t, check_domain=check_domain).real

    def values_on_grid(self, n: int) -> np.ndarray:
        """Synthesize values on the uniform (n,)*(d+1) angle/time grid.

        Grid nodes are 2 pi j / n per axis.  Returns a complex array of
        shape ``(n,)*(d+1) + (P, m)`` (real up to roundoff for real fields);
        n must be at least 2N+1.
        """
        if n < 2 * self.N + 1:
            raise ShapeError(
                f"grid size {n} too small for cutoff N = {self.N} (need >= {2 * self.N + 1})"
            )
        shape = (n,) * (self.d + 1) + self.coeffs.shape[self.d + 1:]
        big = np.zeros(shape, dtype=complex)
        idx = np.arange(-self.N, self.N + 1) % n
        big[np.ix_(*([idx] * (self.d + 1)))] = self.coeffs
        return np.fft.ifftn(big, axes=tuple(range(self.d + 1))) * float(n) ** (self.d + 1)

    def sup_norm(self, s: float = 0.0, r_eff: Optional[float] = None,
                 grid: int = 64) -> SupNormReport:
        """Grid supremum and analytic coefficient majorant.

        The grid supremum samples the real torus on ``max(grid, 2N+1)``
        points per axis and the action ball at 0 and +/- r_eff along each
        axis.  The majorant bounds the sup on the complex strip of width
        ``s`` and action radius ``r_eff``.
        """
        if s < 0:
            raise DomainError(f"strip width must be nonnegative, got {s}")
        r_eff = self.r if r_eff is None else float(r_eff)
        if r_eff < 0:
            raise DomainError(f"action radius must be nonnegative, got {r_eff}")
        n = max(int(grid), 2 * self.N + 1)
        vals = self.values_on_grid(n).real
        y_samples = [np.zeros(self.d)]
        if self.q_y > 0 and r_eff > 0:
            for a in range(self.d):
                e = np.zeros(self.d)
                e[a] = r_eff
                y_samples.extend([e, -e])
        powers = self.powers
        value = 0.0
        for ys in y_samples:
            w = np.prod(ys.reshape(1, self.d) ** powers, axis=1)
            pointwise = np.tensordot(vals, w, axes=([self.d + 1], [0]))
            value = max(value, float(np.max(np.abs(pointwise))))
        per_comp = self._weighted_coeff_sums(s, r_eff)
        return SupNormReport(
            value=value,
            majorant=float(np.max(per_comp)),
            grid_size=n,
            s_eff=float(s),
            r_eff=r_eff,
        )

    def majorant(self, s: float = 0.0, r_eff: Optional[float] = None) -> float:
        """Coefficient majorant only (no grid sup); cheap convergence metric."""
        if s < 0:
            raise DomainError(f"strip width must be nonnegative, got {s}")
        r_eff = self.r if r_eff is None else float(r_eff)
        if r_eff < 0:
            raise DomainError(f"action radius must be nonnegative, got {r_eff}")
        return float(np.max(self._weighted_coeff_sums(s, r_eff)))

    def _weighted_coeff_sums(self, s: float, r_eff: float) -> np.ndarray:
        """Per component: sum over modes/powers of |c| e^{s(|k|+|l|)} r^|alpha|."""
        weight = np.exp(s * abs_order_grid(self.d + 1, self.N)).ravel()
        powers = self.powers
        deg = powers.sum(axis=1)
        rpow = np.where(deg > 0, r_eff ** deg, 1.0)
        A = np.abs(self.coeffs).reshape(-1, len(powers), self.m)
        return np.einsum("xpm,x,p->m", A, weight, rpow)

    # ------------------------------------------------------------------ #
    # algebra
    # ------------------------------------------------------------------ #

    def _padded_to(self, N: int, q_y: int) -> np.ndarray:
        """Coefficients zero-padded to cutoff N and power degree q_y."""
        P_out = len(action_powers(self.d, q_y))
        out = np.zeros((2 * N + 1,) * (self.d + 1) + (P_out, self.m), dtype=complex)
        sl = tuple([slice(N - self.N, N + self.N + 1)] * (self.d + 1))
        # graded-lex order nests: powers of degree <= q_y keep their indices
        out[sl + (slice(0, self.coeffs.shape[self.d + 1]), slice(None))] = self.coeffs
        return out

    def __add__(self, other: "FourierField") -> "FourierField":
        if not isinstance(other, FourierField):
            return NotImplemented
        if other.d != self.d or other.m != self.m:
            raise ShapeError("can only add fields with matching d and m")
        N = max(self.N, other.N)
        q_y = max(self.q_y, other.q_y)
        coeffs = self._padded_to(N, q_y) + other._padded_to(N, q_y)
        parity = _merge_parity(self.parity, other.parity, self.m)
        return FourierField(self.d, self.m, N, q_y, _combine_radius(self, other),
                            coeffs, parity)

    def __sub__(self, other: "FourierField") -> "FourierField":
        return self.__add__(other.scale(-1.0))

    def scale(self, c: float) -> "FourierField":
        return replace(self, coeffs=self.coeffs * float(c))

    def multiply(self, other: "FourierField", N_out: Optional[int] = None) -> "FourierField":
        """Pointwise product, truncated to ``N_out`` (default: exact N1+N2)."""
        if other.d != self.d:
            raise ShapeError("can only multiply fields with matching d")
        if not (self.m == other.m or self.m == 1 or other.m == 1):
            raise ShapeError(
                f"component counts {self.m} and {other.m} are not broadcastable"
            )
        N_full = self.N + other.N
        N = N_full if N_out is None else min(int(N_out), N_full)
        q_y = self.q_y + other.q_y
        m = max(self.m, other.m)
        p1 = self.powers
        p2 = other.powers
        out_powers = action_powers(self.d, q_y)
        index_of = {tuple(a): i for i, a in enumerate(out_powers)}
        coeffs = np.zeros((2 * N + 1,) * (self.d + 1) + (len(out_powers), m),
                          dtype=complex)
        axes = tuple(range(self.d + 1))
        lo = N_full - N
        crop = tuple([slice(lo, lo + 2 * N + 1)] * (self.d + 1))
        for i1, a1 in enumerate(p1):
            for i2, a2 in enumerate(p2):
                tgt = index_of[tuple(a1 + a2)]
                for c in range(m):
                    c1 = self.coeffs[..., i1, min(c, self.m - 1)]
                    c2 = other.coeffs[..., i2, min(c, other.m - 1)]
                    if not np.any(c1) or not np.any(c2):
                        continue
                    conv = fftconvolve(c1, c2, mode="full", axes=axes)
                    coeffs[..., tgt, c] += conv[crop]
        coeffs[~mode_mask(self.d, N)] = 0.0
        parity = _product_parity(self.parity, other.parity, self.m, other.m, m)
        return FourierField(self.d, m, N, q_y, _combine_radius(self, other),
                            coeffs, parity)

    def __mul__(self, other):
        if isinstance(other, FourierField):
            return self.multiply(other)
        if np.isscalar(other):
            return self.scale(float(other))
        return NotImplemented

    __rmul__ = __mul__

    def diff_x(self, j: int = 0) -> "FourierField":
        """Derivative in the j-th angle; flips parity."""
        if not 0 <= j < self.d:
            raise ParameterError(f"angle index {j} out of range for d = {self.d}")
        modes = 1j * np.arange(-self.N, self.N + 1)
        shape = [1] * self.coeffs.ndim
        shape[j] = 2 * self.N + 1
        coeffs = self.coeffs * modes.reshape(shape)
        parity = None if self.parity is None else tuple(
            _flip_parity(p) for p in self.parity)
        return replace(self, coeffs=coeffs, parity=parity)

    def diff_t(self) -> "FourierField":
        """Time derivative; flips parity."""
        modes = 1j * np.arange(-self.N, self.N + 1)
        shape = [1] * self.coeffs.ndim
        shape[self.d] = 2 * self.N + 1
        coeffs = self.coeffs * modes.reshape(shape)
        parity = None if self.parity is None else tuple(
            _flip_parity(p) for p in self.parity)
        return replace(self, coeffs=coeffs, parity=parity)

    def diff_y(self, j: int = 0) -> "FourierField":
        """Derivative in the j-th action; preserves parity."""
        if not 0 <= j < self.d:
            raise ParameterError(f"action index {j} out of range for d = {self.d}")
        q_y = max(self.q_y - 1, 0)
        out_powers = action_powers(self.d, q_y)
        index_of = {tuple(a): i for i, a in enumerate(out_powers)}
        coeffs = np.zeros(self.coeffs.shape[: self.d + 1] + (len(out_powers), self.m),
                          dtype=complex)
        for i, a in enumerate(self.powers):
            if a[j] == 0:
                continue
            b = a.copy()
            b[j] -= 1
            coeffs[..., index_of[tuple(b)], :] += a[j] * self.coeffs[..., i, :]
        return FourierField(self.d, self.m, self.N, q_y, self.r, coeffs, self.parity)

    def mul_y(self, j: int = 0) -> "FourierField":
        """Multiply by the j-th action variable; preserves parity."""
        if not 0 <= j < self.d:
            raise ParameterError(f"action index {j} out of range for d = {self.d}")
        q_y = self.q_y + 1
        out_powers = action_powers(self.d, q_y)
        index_of = {tuple(a): i for i, a in enumerate(out_powers)}
        coeffs = np.zeros(self.coeffs.shape[: self.d + 1] + (len(out_powers), self.m),
                          dtype=complex)
        for i, a in enumerate(self.powers):
            b = a.copy()
            b[j] += 1
            coeffs[..., index_of[tuple(b)], :] = self.coeffs[..., i, :]
        return FourierField(self.d, self.m, self.N, q_y, self.r, coeffs, self.parity)

    def truncate(self, N: Optional[int] = None, q_y: Optional[int] = None) -> "FourierField":
        """Drop modes above cutoff N and powers above degree q_y."""
        N_new = self.N if N is None else min(int(N), self.N)
        q_new = self.q_y if q_y is None else min(int(q_y), self.q_y)
        sl = tuple([slice(self.N - N_new, self.N + N_new + 1)] * (self.d + 1))
        P_new = len(action_powers(self.d, q_new))
        coeffs = self.coeffs[sl + (slice(0, P_new), slice(None))].copy()
        coeffs[~mode_mask(self.d, N_new)] = 0.0
        return FourierField(self.d, self.m, N_new, q_new, self.r, coeffs, self.parity)

    def component(self, i: int) -> "FourierField":
        if not 0 <= i < self.m:
            raise ShapeError(f"component {i} out of range for m = {self.m}")
        parity = None if self.parity is None else (self.parity[i],)
        return FourierField(self.d, 1, self.N, self.q_y, self.r,
                            self.coeffs[..., i:i + 1].copy(), parity)

    def flip(self) -> "FourierField":
        """The field (x, y, t) -> F(-x, y, -t)."""
        return replace(self, coeffs=_reverse_modes(self.coeffs, self.d).copy())

    def shift_x(self, delta) -> "FourierField":
        """The field (x, y, t) -> F(x + delta, y, t); parity tags are dropped."""
        delta = np.atleast_1d(np.asarray(delta, dtype=float))
        if delta.shape != (self.d,):
            raise ShapeError(f"shift must have shape ({self.d},)")
        coeffs = self.coeffs
        modes = np.arange(-self.N, self.N + 1)
        for a in range(self.d):
            shape = [1] * coeffs.ndim
            shape[a] = 2 * self.N + 1
            coeffs = coeffs * np.exp(1j * modes * delta[a]).reshape(shape)
        return replace(self, coeffs=coeffs, parity=None)

    def shift_t(self, delta: float) -> "FourierField":
        """The field (x, y, t) -> F(x, y, t + delta); parity tags are dropped."""
        modes = np.arange(-self.N, self.N + 1)
        shape = [1] * self.coeffs.ndim
        shape[self.d] = 2 * self.N + 1
        coeffs = self.coeffs * np.exp(1j * modes * float(delta)).reshape(shape)
        return replace(self, coeffs=coeffs, parity=None)

    # ------------------------------------------------------------------ #
    # mode access
    # ------------------------------------------------------------------ #

    def mode(self, k, l: int) -> np.ndarray:
        """Coefficient block c(k, l) of shape (P, m)."""
        k = np.atleast_1d(np.asarray(k, dtype=int))
        if k.shape != (self.d,):
            raise ShapeError(f"wave vector must have shape ({self.d},)")
        if np.any(np.abs(k) > self.N) or abs(l) > self.N:
            raise ShapeError(f"mode (k={tuple(k)}, l={l}) outside cutoff N={self.N}")
        idx = tuple(int(a) + self.N for a in k) + (int(l) + self.N,)
        return self.coeffs[idx]

    def zero_mode(self) -> np.ndarray:
        """The (k, l) = 0 coefficient block, shape (P, m)."""
        return self.mode(np.zeros(self.d, dtype=int), 0)

    def angular_average(self) -> "FourierField":
        """Keep only the k = 0 modes (still a function of y and t)."""
        coeffs = np.zeros_like(self.coeffs)
        sl = tuple([slice(self.N, self.N + 1)] * self.d) + (slice(None),)
        coeffs[sl] = self.coeffs[sl]
        return replace(self, coeffs=coeffs)

    def oscillating_part(self) -> "FourierField":
        """Zero out the k = 0 modes (complement of :meth:`angular_average`)."""
        coeffs = self.coeffs.copy()
        sl = tuple([slice(self.N, self.N + 1)] * self.d) + (slice(None),)
        coeffs[sl] = 0.0
        return replace(self, coeffs=coeffs)

    def is_time_independent(self, tol: float = 0.0) -> bool:
        sl = [slice(None)] * (self.d + 1)
        sl[self.d] = self.N
        rest = self.coeffs.copy()
        rest[tuple(sl)] = 0.0
        return float(np.max(np.abs(rest))) <= tol if rest.size else True

    # ------------------------------------------------------------------ #
    # serialization
    # ------------------------------------------------------------------ #

    def to_dict(self) -> dict:
        """Portable dict of the nonzero coefficients, deterministically ordered."""
        entries = []
        powers = self.powers
        nz = np.argwhere(np.abs(self.coeffs).sum(axis=-1) > 0.0)
        for idx in nz:
            mode_idx = tuple(int(a) for a in idx[: self.d + 1])
            p = int(idx[self.d + 1])
            block = self.coeffs[mode_idx + (p,)]
            alpha = powers[p]
            power = int(alpha[0]) if self.d == 1 else [int(a) for a in alpha]
            entries.append({
                "k": [int(a) - self.N for a in mode_idx[: self.d]],
                "l": int(mode_idx[self.d]) - self.N,
                "power": power,
                "re": [float(v) for v in block.real],
                "im": [float(v) for v in block.imag],
            })
        entries.sort(key=lambda e: (
            e["power"] if isinstance(e["power"], list) else [e["power"]],
            e["l"], e["k"]))
        return {
            "d": self.d,
            "m": self.m,
            "N": self.N,
            "q_y": self.q_y,
            "r": float(self.r),
            "parity": None if self.parity is None else list(self.parity),
            "coeffs": entries,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FourierField":
        """Rebuild a field from :meth:`to_dict` output; validates structure."""
        try:
            d = int(data["d"])
            m = int(data["m"])
            N = int(data["N"])
            q_y = int(data["q_y"])
            r = float(data["r"])
            parity = data.get("parity")
            entries = data["coeffs"]
        except (KeyError, TypeError, ValueError) as exc:
            raise PersistenceError(f"malformed field record: {exc}") from exc
        if parity is not None:
            parity = tuple(parity)
            if len(parity) != m or any(p not in _PARITIES for p in parity):
                raise PersistenceError(f"malformed parity tags {parity!r}")
        field = cls.zeros(d, m, N, q_y, r, parity)
        powers = field.powers
        index_of = {tuple(a): i for i, a in enumerate(powers)}
        coeffs = field.coeffs  # zeros; fill in place before returning
        for e in entries:
            try:
                k = [int(a) for a in e["k"]]
                l = int(e["l"])
                power = e["power"]
                alpha = (int(power),) if d == 1 and not isinstance(power, list) \
                    else tuple(int(a) for a in power)
                re = [float(v) for v in e["re"]]
                im = [float(v) for v in e["im"]]
            except (KeyError, TypeError, ValueError) as exc:
                raise PersistenceError(f"malformed coefficient entry {e!r}") from exc
            if len(k) != d or len(re) != m or len(im) != m:
                raise PersistenceError(f"coefficient entry has wrong arity: {e!r}")
            if sum(abs(a) for a in k) + abs(l) > N:
                raise PersistenceError(
                    f"coefficient entry outside cutoff N={N}: k={k}, l={l}")
            if alpha not in index_of:
                raise PersistenceError(f"unknown action power {power!r}")
            idx = tuple(a + N for a in k) + (l + N, index_of[alpha])
            coeffs[idx] = np.array(re) + 1j * np.array(im)
        # verify reality so a hand-edited file cannot smuggle in a complex field
        rev = _reverse_modes(coeffs, d)
        scale = float(np.max(np.abs(coeffs))) if coeffs.size else 0.0
        if scale > 0 and float(np.max(np.abs(coeffs - np.conj(rev)))) > 1e-9 * scale:
            raise PersistenceError("field record violates reality symmetry")
        return cls(d, m, N, q_y, r, coeffs, parity)


# ---------------------------------------------------------------------- #
# free functions
# ---------------------------------------------------------------------- #


def _as_parity(parity, m: int):
    if parity is None:
        return None
    if isinstance(parity, str):
        return (parity,) * m
    return tuple(parity)


def _merge_parity(p1, p2, m):
    if p1 is None or p2 is None:
        return None
    return tuple(a if a == b else None for a, b in zip(p1, p2))


def _product_parity(p1, p2, m1, m2, m):
    if p1 is None or p2 is None:
        return None
    out = []
    for c in range(m):
        out.append(_combine_parity(p1[min(c, m1 - 1)], p2[min(c, m2 - 1)]))
    return tuple(out)


def _combine_radius(f1: FourierField, f2: FourierField) -> float:
    eff1 = np.inf if f1.q_y == 0 else f1.r
    eff2 = np.inf if f2.q_y == 0 else f2.r
    r = min(eff1, eff2)
    return max(f1.r, f2.r) if np.isinf(r) else float(r)


def _power_matrix(y: np.ndarray, powers: np.ndarray) -> np.ndarray:
    """Y[s, p] = prod_a y[s, a]^powers[p, a]."""
    S = y.shape[0]
    out = np.ones((S, len(powers)))
    for p, alpha in enumerate(powers):
        for a, e in enumerate(alpha):
            if e:
                out[:, p] *= y[:, a] ** int(e)
    return out


def coeffs_from_samples(values: np.ndarray, d: int, N: int) -> np.ndarray:
    """Extract Fourier coefficients |k|+|l| <= N from uniform grid samples.

    ``values`` has shape ``(n,)*(d+1) + trailing``; the grid is 2 pi j / n
    per axis and must satisfy n >= 2N+1.  Frequencies above N in the samples
    alias; callers choose n large enough for their spectra.
    """
    n = values.shape[0]
    if values.ndim < d + 1 or any(values.shape[a] != n for a in range(d + 1)):
        raise ShapeError("grid samples must be cubical over the angle/time axes")
    if n < 2 * N + 1:
        raise ShapeError(f"grid size {n} too small for cutoff N = {N}")
    spec = np.fft.fftn(values, axes=tuple(range(d + 1))) / float(n) ** (d + 1)
    idx = np.arange(-N, N + 1) % n
    coeffs = spec[np.ix_(*([idx] * (d + 1)))]
    out = np.ascontiguousarray(coeffs)
    out[~mode_mask(d, N)] = 0.0
    return out


def field_from_grid_samples(values: np.ndarray, d: int, N: int, q_y: int, r: float,
                            y_nodes: Optional[np.ndarray] = None, parity=None,
                            parity_tol: float = 1e-6) -> FourierField:
    """Fit a field to samples on (angle/time grid) x (action nodes).

    ``values`` has shape ``(n,)*(d+1) + (n_y, m)`` with real entries; the
    action nodes (``y_nodes``, shape (n_y, d)) must determine polynomials of
    total degree q_y.  When q_y = 0 the action axis may be omitted from
    ``y_nodes`` (n_y must be 1).
    """
    values = np.asarray(values, dtype=float)
    if values.ndim != d + 3:
        raise ShapeError(
            f"expected samples of shape (n,)*{d + 1} + (n_y, m), got {values.shape}")
    n_y, m = values.shape[d + 1], values.shape[d + 2]
    powers = action_powers(d, q_y)
    if q_y == 0:
        if n_y != 1:
            raise ShapeError("q_y = 0 requires a single action node")
        V = np.ones((1, 1))
    else:
        if y_nodes is None:
            raise ParameterError("action nodes are required when q_y > 0")
        y_nodes = np.asarray(y_nodes, dtype=float).reshape(n_y, d)
        V = _power_matrix(y_nodes, powers)
        if np.linalg.matrix_rank(V) < len(powers):
            raise ParameterError("action nodes do not determine the power basis")
    modes = coeffs_from_samples(values, d, N)          # (...modes..., n_y, m)
    flat = modes.reshape(-1, n_y, m)
    B = np.moveaxis(flat, 1, 0).reshape(n_y, -1)       # (n_y, modes*m)
    C = np.linalg.lstsq(V, B, rcond=None)[0]           # (P, modes*m)
    C = np.moveaxis(C.reshape(len(powers), flat.shape[0], m), 0, 1)
    coeffs = C.reshape(modes.shape[: d + 1] + (len(powers), m))
    parity = _as_parity(parity, m)
    coeffs = _finalize(coeffs, d, parity, tol=parity_tol, what="fitted field")
    coeffs[~mode_mask(d, N)] = 0.0
    return FourierField(d, m, N, q_y, r, coeffs, parity)


def default_action_nodes(d: int, q_y: int, r: float) -> np.ndarray:
    """Tensor grid of action fit nodes: q_y+1 equispaced points in [-r, r]."""
    if q_y == 0:
        return np.zeros((1, d))
    if r <= 0:
        raise ParameterError("action powers q_y > 0 need a positive radius r")
    line = np.linspace(-r, r, q_y + 1)
    grids = np.meshgrid(*([line] * d), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1)


def field_from_function(fn: Callable, d: int, m: int, N: int, q_y: int = 0,
                        r: float = 0.0, parity=None, time_independent: bool = False,
                        n_grid: Optional[int] = None,
                        parity_tol: float = 1e-6) -> FourierField:
    """Sample ``fn(x, y, t) -> (..., m)`` and fit a truncated field.

    The angle/time grid has ``n_grid`` (default 2N+2) points per axis; the
    action ball is sampled on a tensor grid of q_y+1 points per dimension.
    With ``time_independent`` the function is sampled at t = 0 only and all
    nonzero time harmonics are zeroed exactly.
    """
    n = int(n_grid) if n_grid is not None else 2 * N + 2
    if n < 2 * N + 1:
        raise ParameterError(f"sampling grid {n} too small for cutoff N = {N}")
    y_nodes = default_action_nodes(d, q_y, r)
    n_y = len(y_nodes)
    grid = 2.0 * np.pi * np.arange(n) / n
    axes = np.meshgrid(*([grid] * d), indexing="ij")
    x_flat = np.stack([a.ravel() for a in axes], axis=-1) if d else None
    S = n ** d
    values = np.empty((n,) * (d + 1) + (n_y, m), dtype=float)
    t_values = [0.0] if time_independent else grid
    for it, t in enumerate(t_values):
        for iy in range(n_y):
            y = np.broadcast_to(y_nodes[iy], (S, d))
            out = np.asarray(fn(x_flat, y, np.full(S, t)), dtype=float)
            out = out.reshape((n,) * d + (m,))
            sl = (slice(None),) * d + (it, iy, slice(None))
            values[sl] = out
    if time_independent:
        for it in range(1, n):
            sl_dst = (slice(None),) * d + (it,)
            sl_src = (slice(None),) * d + (0,)
            values[sl_dst] = values[sl_src]
    field = field_from_grid_samples(values, d, N, q_y, r, y_nodes, parity,
                                    parity_tol=parity_tol)
    if time_independent:
        coeffs = field.coeffs.copy()
        sl = [slice(None)] * coeffs.ndim
        keep = coeffs[tuple(sl[: d]) + (slice(N, N + 1),)].copy()
        coeffs[:] = 0.0
        coeffs[tuple(sl[: d]) + (slice(N, N + 1),)] = keep
        field = replace(field, coeffs=coeffs)
    return field


def harmonic_field(d: int, N: int, k, l: int, amplitude: float, kind: str = "cos",
                   m: int = 1, q_y: int = 0, r: float = 0.0, power=None,
                   component: int = 0) -> FourierField:
    """A single real harmonic  amplitude * y^power * cos/sin(<k,x> + l t)."""
    if kind not in ("cos", "sin"):
        raise ParameterError(f"kind must be 'cos' or 'sin', got {kind!r}")
    k = np.atleast_1d(np.asarray(k, dtype=int))
    if k.shape != (d,):
        raise ShapeError(f"wave vector must have shape ({d},)")
    if np.sum(np.abs(k)) + abs(l) > N:
        raise ParameterError("harmonic outside the requested cutoff")
    powers = action_powers(d, q_y)
    alpha = tuple([0] * d) if power is None else tuple(
        (power,) if np.isscalar(power) else power)
    index_of = {tuple(a): i for i, a in enumerate(powers)}
    if alpha not in index_of:
        raise ParameterError(f"action power {alpha} exceeds q_y = {q_y}")
    parity = ["even" if kind == "cos" else "odd"] * m
    field = FourierField.zeros(d, m, N, q_y, r, tuple(parity))
    half = amplitude / 2.0 if kind == "cos" else amplitude / 2.0j
    idx_p = tuple(int(a) + N for a in k) + (l + N, index_of[alpha], component)
    idx_m = tuple(-int(a) + N for a in k) + (-l + N, index_of[alpha], component)
    field.coeffs[idx_p] += half
    field.coeffs[idx_m] += np.conj(half)
    return field


def stack_components(fields: Sequence[FourierField]) -> FourierField:
    """Stack scalar fields into one vector-valued field."""
    if not fields:
        raise ShapeError("need at least one field to stack")
    base = fields[0]
    N = max(f.N for f in fields)
    q_y = max(f.q_y for f in fields)
    parts = []
    parity = []
    r = None
    for f in fields:
        if f.d != base.d:
            raise ShapeError("all stacked fields must share d")
        if f.m != 1:
            raise ShapeError("can only stack scalar fields")
        parts.append(f._padded_to(N, q_y))
        parity.append(None if f.parity is None else f.parity[0])
        eff = np.inf if f.q_y == 0 else f.r
        r = eff if r is None else min(r, eff)
    if np.isinf(r):
        r = max(f.r for f in fields)
    coeffs = np.concatenate(parts, axis=-1)
    return FourierField(base.d, len(fields), N, q_y, float(r), coeffs, tuple(parity))


def jacobian_apply(u: FourierField, w: FourierField, kind: str = "x",
                   N_out: Optional[int] = None) -> FourierField:
    """Contract a Jacobian with a vector field:  (D_kind u) . w.

    ``u`` and ``w`` must both have m = d components; the result has m = d
    components with (result)_i = sum_j d u_i / d(kind)_j * w_j.
    """
    if kind not in ("x", "y"):
        raise ParameterError(f"kind must be 'x' or 'y', got {kind!r}")
    d = u.d
    if u.m != d or w.m != d:
        raise ShapeError("jacobian_apply expects m = d vector fields")
    rows = []
    for i in range(d):
        ui = u.component(i)
        total = None
        for j in range(d):
            dij = ui.diff_x(j) if kind == "x" else ui.diff_y(j)
            term = dij.multiply(w.component(j), N_out=N_out)
            total = term if total is None else total + term
        rows.append(total)
    return stack_components(rows)


def project_structure(field: FourierField, tol: float = 1e-6) -> FourierField:
    """Verify reality/parity up to ``tol`` and project exactly onto them."""
    coeffs = _finalize(field.coeffs, field.d, field.parity, tol=tol,
                       what="projected field")
    return replace(field, coeffs=coeffs)
