"""Reference reversible systems for exercising the torus iteration.

Two families live here: a band-limited periodically forced flow whose
perturbation is a single harmonic, and a kicked circle-cylinder map built
by conjugating an explicit involution, so its reversibility is exact by
construction rather than by truncation.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import ParameterError


@dataclass(frozen=True)
class FlowSystem:
    """A reversible plane system  dx/dt = omega + y + f,  dy/dt = g.

    f must be even and g odd under (x, t) -> (-x, -t); both callables take
    (x, y, t) with x, y of shape (S, d) and t of shape (S,).
    """

    f: Callable
    g: Callable
    d: int = 1


def single_mode_flow(eps: float, g_amp: float, k: int = 1, l: int = 1) -> FlowSystem:
    """The standard one-harmonic test flow.

    f = eps cos(k x + l t) (even) and g = eps * g_amp * sin(k x + l t)
    (odd).  g_amp sets the ratio of the two perturbation sizes; the
    iteration schedules expect g roughly a strip-width smaller than f.
    """
    k = int(k)
    l = int(l)

    def f(x, y, t):
        return eps * np.cos(k * x[:, 0] + l * t)

    def g(x, y, t):
        return eps * g_amp * np.sin(k * x[:, 0] + l * t)

    return FlowSystem(f=f, g=g, d=1)


@dataclass(frozen=True)
class MapSystem:
    """A reversible twist map of the cylinder, exactly by construction.

    With T the kick (x, y) -> (x, y + eps cos x) and H0 the involution
    (x, y) -> (-x - Omega - y, y), the map is A = G o (T o H0 o T^{-1}),
    G(x, y) = (-x, y).  Written out,

        A(x, y) = (x1, y + eps (cos x1 - cos x)),
        x1 = x + Omega + y - eps cos x,

    which matches the normal form x' = x + Omega + y + f, y' = y + g with
    f = -eps cos x and g = eps (cos x1 - cos x).  Since H0 and G are exact
    involutions, G o A o G = A^{-1} holds to machine precision, not just to
    leading order in eps.
    """

    omega: float
    eps: float

    @property
    def Omega(self) -> float:
        return 2.0 * np.pi * self.omega

    def f(self, x, y, t=None):
        x = np.asarray(x, dtype=float)
        return -self.eps * np.cos(x)

    def g(self, x, y, t=None):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        x1 = x + self.Omega + y - self.eps * np.cos(x)
        return self.eps * (np.cos(x1) - np.cos(x))

    def A(self, x, y):
        """One application of the map; arrays broadcast elementwise."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        x1 = x + self.Omega + y - self.eps * np.cos(x)
        return x1, y + self.eps * (np.cos(x1) - np.cos(x))

    def A_inverse(self, x1, y1):
        """Invert the map through the reversor:  A^{-1} = G o A o G."""
        gx, gy = -np.asarray(x1, dtype=float), np.asarray(y1, dtype=float)
        ax, ay = self.A(gx, gy)
        return -ax, ay

    def reversibility_residual(self, samples: int = 256,
                               y_scale: Optional[float] = None) -> float:
        """sup |G A G A (z) - z| over a deterministic grid (should be ~1e-16)."""
        y_scale = 0.1 if y_scale is None else float(y_scale)
        x = 2.0 * np.pi * np.arange(samples) / samples
        y = y_scale * np.cos(3.0 * x + 0.7)
        x1, y1 = self.A(x, y)
        x2, y2 = self.A(-x1, y1)
        dx = np.angle(np.exp(1j * (-x2 - x)))
        return float(max(np.max(np.abs(dx)), np.max(np.abs(y2 - y))))


def make_flow_perturbation(kind: str, **params) -> FlowSystem:
    """Perturbation factory used by configuration files."""
    if kind in ("single_mode", "standard"):
        return single_mode_flow(
            eps=float(params.get("eps", 1e-4)),
            g_amp=float(params.get("g_amp", 0.05)),
            k=params.get("k", 1), l=params.get("l", 1))
    if kind in ("none", "zero"):
        return FlowSystem(f=lambda x, y, t: np.zeros(x.shape[0]),
                          g=lambda x, y, t: np.zeros(x.shape[0]), d=1)
    raise ParameterError(f"unknown flow perturbation kind {kind!r}")


def make_map_perturbation(kind: str, omega: float, **params) -> MapSystem:
    """Map-family factory used by configuration files."""
    if kind in ("cosine_kick", "standard"):
        return MapSystem(omega=float(omega), eps=float(params.get("eps", 1e-4)))
    if kind in ("none", "zero"):
        return MapSystem(omega=float(omega), eps=0.0)
    raise ParameterError(f"unknown map perturbation kind {kind!r}")
