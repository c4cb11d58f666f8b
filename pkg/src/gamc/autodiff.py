"""Forward-mode automatic differentiation with dual numbers.

``Dual`` carries a value and a vector of first-order partials; ``Dual2``
additionally carries a dense Hessian block, so one evaluation of a scalar
function yields value, gradient and full Hessian.  Target log-densities are
written against the dispatching math functions in this module (``sin``,
``log1p``, ...), which accept plain floats as well as duals.

Central finite differences of function values (``fd_gradient``/``fd_hessian``)
serve as an independent check on the dual arithmetic, and third-order
information (derivatives of the negated Hessian) comes from central
differences of the dual-evaluated Hessian.
"""
from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np
from numpy.typing import NDArray

__all__ = [
    "Dual",
    "Dual2",
    "DerivativeBundle",
    "NonFiniteValue",
    "gradient",
    "value_and_gradient",
    "hessian",
    "metric_derivatives",
    "fd_gradient",
    "fd_hessian",
    "seed_duals",
    "seed_duals2",
    "lincomb_const",
    "quad_form_const",
    "value_of",
    "exp",
    "log",
    "log1p",
    "sin",
    "cos",
    "sqrt",
    "atan2",
]


class NonFiniteValue(ArithmeticError):
    """A requested derivative (or the value it rides on) is not finite."""


class Dual:
    """First-order dual number: value plus a vector of partials."""

    __slots__ = ("val", "partials")

    def __init__(self, val: float, partials: NDArray):
        self.val = val
        self.partials = partials

    # -- arithmetic -------------------------------------------------------
    def __add__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val + other.val, self.partials + other.partials)
        return Dual(self.val + other, self.partials)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val - other.val, self.partials - other.partials)
        return Dual(self.val - other, self.partials)

    def __rsub__(self, other):
        return Dual(other - self.val, -self.partials)

    def __mul__(self, other):
        if isinstance(other, Dual):
            return Dual(self.val * other.val, self.val * other.partials + other.val * self.partials)
        return Dual(self.val * other, other * self.partials)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Dual):
            inv = 1.0 / other.val
            return Dual(self.val * inv, inv * self.partials - (self.val * inv * inv) * other.partials)
        inv = 1.0 / other
        return Dual(self.val * inv, inv * self.partials)

    def __rtruediv__(self, other):
        inv = 1.0 / self.val
        return Dual(other * inv, (-other * inv * inv) * self.partials)

    def __pow__(self, k):
        v = self.val
        return Dual(v**k, (k * v ** (k - 1)) * self.partials)

    def __neg__(self):
        return Dual(-self.val, -self.partials)

    # -- elementary functions --------------------------------------------
    def _exp(self):
        e = math.exp(self.val)
        return Dual(e, e * self.partials)

    def _log(self):
        return Dual(math.log(self.val), self.partials / self.val)

    def _log1p(self):
        return Dual(math.log1p(self.val), self.partials / (1.0 + self.val))

    def _sin(self):
        return Dual(math.sin(self.val), math.cos(self.val) * self.partials)

    def _cos(self):
        return Dual(math.cos(self.val), -math.sin(self.val) * self.partials)

    def _sqrt(self):
        s = math.sqrt(self.val)
        return Dual(s, (0.5 / s) * self.partials)


class Dual2:
    """Second-order dual number: value, gradient vector and Hessian block."""

    __slots__ = ("val", "grad", "hess")

    def __init__(self, val: float, grad: NDArray, hess: NDArray):
        self.val = val
        self.grad = grad
        self.hess = hess

    def __add__(self, other):
        if isinstance(other, Dual2):
            return Dual2(self.val + other.val, self.grad + other.grad, self.hess + other.hess)
        return Dual2(self.val + other, self.grad, self.hess)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Dual2):
            return Dual2(self.val - other.val, self.grad - other.grad, self.hess - other.hess)
        return Dual2(self.val - other, self.grad, self.hess)

    def __rsub__(self, other):
        return Dual2(other - self.val, -self.grad, -self.hess)

    def __mul__(self, other):
        if isinstance(other, Dual2):
            cross = np.outer(self.grad, other.grad)
            return Dual2(
                self.val * other.val,
                self.val * other.grad + other.val * self.grad,
                self.val * other.hess + other.val * self.hess + cross + cross.T,
            )
        return Dual2(self.val * other, other * self.grad, other * self.hess)

    __rmul__ = __mul__

    def _reciprocal(self):
        inv = 1.0 / self.val
        gg = np.outer(self.grad, self.grad)
        return Dual2(inv, -inv * inv * self.grad, -inv * inv * self.hess + (2.0 * inv**3) * gg)

    def __truediv__(self, other):
        if isinstance(other, Dual2):
            return self * other._reciprocal()
        inv = 1.0 / other
        return Dual2(self.val * inv, inv * self.grad, inv * self.hess)

    def __rtruediv__(self, other):
        rec = self._reciprocal()
        return Dual2(other * rec.val, other * rec.grad, other * rec.hess)

    def __pow__(self, k):
        v = self.val
        d1 = k * v ** (k - 1)
        d2 = k * (k - 1) * v ** (k - 2)
        return Dual2(v**k, d1 * self.grad, d1 * self.hess + d2 * np.outer(self.grad, self.grad))

    def __neg__(self):
        return Dual2(-self.val, -self.grad, -self.hess)

    def _chain(self, f0: float, d1: float, d2: float) -> "Dual2":
        return Dual2(f0, d1 * self.grad, d1 * self.hess + d2 * np.outer(self.grad, self.grad))

    def _exp(self):
        e = math.exp(self.val)
        return self._chain(e, e, e)

    def _log(self):
        inv = 1.0 / self.val
        return self._chain(math.log(self.val), inv, -inv * inv)

    def _log1p(self):
        inv = 1.0 / (1.0 + self.val)
        return self._chain(math.log1p(self.val), inv, -inv * inv)

    def _sin(self):
        s, c = math.sin(self.val), math.cos(self.val)
        return self._chain(s, c, -s)

    def _cos(self):
        s, c = math.sin(self.val), math.cos(self.val)
        return self._chain(c, -s, -c)

    def _sqrt(self):
        s = math.sqrt(self.val)
        return self._chain(s, 0.5 / s, -0.25 / (s * self.val))


_DUALS = (Dual, Dual2)


def value_of(x) -> float:
    return x.val if isinstance(x, _DUALS) else float(x)


def _const_like(template, value: float):
    if isinstance(template, Dual):
        return Dual(value, np.zeros_like(template.partials))
    return Dual2(value, np.zeros_like(template.grad), np.zeros_like(template.hess))


def exp(x):
    return x._exp() if isinstance(x, _DUALS) else math.exp(x)


def log(x):
    return x._log() if isinstance(x, _DUALS) else math.log(x)


def log1p(x):
    return x._log1p() if isinstance(x, _DUALS) else math.log1p(x)


def sin(x):
    return x._sin() if isinstance(x, _DUALS) else math.sin(x)


def cos(x):
    return x._cos() if isinstance(x, _DUALS) else math.cos(x)


def sqrt(x):
    return x._sqrt() if isinstance(x, _DUALS) else math.sqrt(x)


def atan2(y, x):
    """Two-argument arctangent with full first/second-order propagation."""
    if not isinstance(y, _DUALS) and not isinstance(x, _DUALS):
        return math.atan2(y, x)
    if not isinstance(y, _DUALS):
        y = _const_like(x, float(y))
    elif not isinstance(x, _DUALS):
        x = _const_like(y, float(x))
    yv, xv = y.val, x.val
    r2 = xv * xv + yv * yv
    a = xv / r2  # dT/dy
    b = -yv / r2  # dT/dx
    if isinstance(y, Dual):
        return Dual(math.atan2(yv, xv), a * y.partials + b * x.partials)
    r4 = r2 * r2
    ayy = -2.0 * xv * yv / r4
    axx = 2.0 * xv * yv / r4
    axy = (yv * yv - xv * xv) / r4
    g = a * y.grad + b * x.grad
    cross = np.outer(y.grad, x.grad)
    h = (
        a * y.hess
        + b * x.hess
        + ayy * np.outer(y.grad, y.grad)
        + axx * np.outer(x.grad, x.grad)
        + axy * (cross + cross.T)
    )
    return Dual2(math.atan2(yv, xv), g, h)


# -- seeding and vector helpers ------------------------------------------


def seed_duals(x: NDArray) -> list[Dual]:
    """Leaf duals for the coordinates of ``x`` (identity partials)."""
    n = len(x)
    eye = np.eye(n)
    return [Dual(float(x[i]), eye[i]) for i in range(n)]


def seed_duals2(x: NDArray) -> list[Dual2]:
    n = len(x)
    eye = np.eye(n)
    zero = np.zeros((n, n))
    return [Dual2(float(x[i]), eye[i], zero) for i in range(n)]


def lincomb_const(coeffs: NDArray, xs, const: float = 0.0):
    """sum_i coeffs[i] * xs[i] + const for a sequence of scalars or duals."""
    first = xs[0]
    if isinstance(first, Dual):
        vals = np.array([u.val for u in xs])
        G = np.stack([u.partials for u in xs])
        return Dual(float(coeffs @ vals) + const, coeffs @ G)
    if isinstance(first, Dual2):
        vals = np.array([u.val for u in xs])
        G = np.stack([u.grad for u in xs])
        H = np.stack([u.hess for u in xs])
        return Dual2(
            float(coeffs @ vals) + const,
            coeffs @ G,
            np.einsum("i,ijk->jk", coeffs, H),
        )
    return float(coeffs @ np.asarray(xs, dtype=float)) + const


def quad_form_const(b: NDArray, xs):
    """xs^T b xs for a constant matrix ``b`` and scalar/dual coordinates."""
    first = xs[0]
    if not isinstance(first, _DUALS):
        v = np.asarray(xs, dtype=float)
        return float(v @ b @ v)
    vals = np.array([u.val for u in xs])
    w = (b + b.T) @ vals
    if isinstance(first, Dual):
        G = np.stack([u.partials for u in xs])
        return Dual(float(vals @ b @ vals), G.T @ w)
    G = np.stack([u.grad for u in xs])
    H = np.stack([u.hess for u in xs])
    gbg = G.T @ b @ G
    return Dual2(
        float(vals @ b @ vals),
        G.T @ w,
        gbg + gbg.T + np.einsum("i,ijk->jk", w, H),
    )


# -- derivative drivers ---------------------------------------------------


@dataclass
class DerivativeBundle:
    """Derivatives of a scalar function at one point, filled to some order."""

    point: NDArray
    value: float
    gradient: NDArray | None = None
    hessian: NDArray | None = None
    metric_derivs: NDArray | None = None


def _check_finite(value, arrays) -> None:
    if not math.isfinite(value) or any(not np.all(np.isfinite(a)) for a in arrays):
        raise NonFiniteValue("non-finite derivative evaluation")


def value_and_gradient(f, x: NDArray) -> tuple[float, NDArray]:
    y = f(seed_duals(x))
    if not isinstance(y, Dual):  # function ignored its input
        return float(y), np.zeros(len(x))
    _check_finite(y.val, [y.partials])
    return y.val, y.partials.copy()


def gradient(f, x: NDArray) -> NDArray:
    return value_and_gradient(f, x)[1]


def hessian(f, x: NDArray) -> NDArray:
    """Full Hessian (with value and gradient) from one second-order pass."""
    y = f(seed_duals2(x))
    if not isinstance(y, Dual2):
        return np.zeros((len(x), len(x)))
    _check_finite(y.val, [y.grad, y.hess])
    return 0.5 * (y.hess + y.hess.T)


def value_gradient_hessian(f, x: NDArray) -> tuple[float, NDArray, NDArray]:
    y = f(seed_duals2(x))
    if not isinstance(y, Dual2):
        n = len(x)
        return float(y), np.zeros(n), np.zeros((n, n))
    _check_finite(y.val, [y.grad, y.hess])
    return y.val, y.grad.copy(), 0.5 * (y.hess + y.hess.T)


def metric_derivatives(f, x: NDArray, step_scale: float = 1e-4) -> NDArray:
    """d(-Hessian)/dx_j by central differences of the dual Hessian.

    result[j] is the symmetric slice for coordinate j.
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    out = np.empty((n, n, n))
    for j in range(n):
        h = step_scale * (1.0 + abs(x[j]))
        xp = x.copy()
        xp[j] += h
        xm = x.copy()
        xm[j] -= h
        slice_ = -(hessian(f, xp) - hessian(f, xm)) / (2.0 * h)
        out[j] = 0.5 * (slice_ + slice_.T)
    return out


def fd_gradient(f, x: NDArray, step: float = 1e-5) -> NDArray:
    """Central-difference gradient of f; ``step`` scales with each coordinate."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    out = np.empty(n)
    for i in range(n):
        h = step * (1.0 + abs(x[i]))
        xp = x.copy()
        xp[i] += h
        xm = x.copy()
        xm[i] -= h
        out[i] = (f(xp) - f(xm)) / (2.0 * h)
    return out


def fd_hessian(f, x: NDArray, step: float = 1e-4) -> NDArray:
    """Central-difference Hessian of f; ``step`` scales with each coordinate."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    steps = np.array([step * (1.0 + abs(x[i])) for i in range(n)])
    out = np.empty((n, n))
    f0 = f(x)
    for i in range(n):
        hi = steps[i]
        xp = x.copy()
        xp[i] += hi
        xm = x.copy()
        xm[i] -= hi
        out[i, i] = (f(xp) - 2.0 * f0 + f(xm)) / (hi * hi)
        for j in range(i + 1, n):
            hj = steps[j]
            xpp = x.copy()
            xpp[i] += hi
            xpp[j] += hj
            xpm = x.copy()
            xpm[i] += hi
            xpm[j] -= hj
            xmp = x.copy()
            xmp[i] -= hi
            xmp[j] += hj
            xmm = x.copy()
            xmm[i] -= hi
            xmm[j] -= hj
            out[i, j] = out[j, i] = (f(xpp) - f(xpm) - f(xmp) + f(xmm)) / (4.0 * hi * hj)
    return out
