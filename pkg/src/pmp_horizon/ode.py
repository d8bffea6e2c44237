"""Adaptive Dormand-Prince 5(4) integration with cubic Hermite dense output.

Three flows are integrated along the candidate control:

* the state ``x' = f(t, x, u0(t))`` (:func:`integrate_state`);
* the variational equation ``A' = J(t) A``, ``A(0) = I`` with
  ``J = df/dx`` along the state, together with its companion
  ``B' = -J(t)^T B``, ``B(0) = I`` (:func:`integrate_fundamental`).
  Since ``d(B^T A)/dt = 0`` we get ``A^{-1}(t) = B(t)^T`` without inverting.

Control breakpoints are always mesh nodes; each interval keeps its own end
slopes so a kink at a breakpoint does not leak into the neighbours.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .problem import ProblemSpec

__all__ = [
    "IntegrationError", "StepSizeUnderflow", "ConditioningWarning",
    "Trajectory", "FundamentalPair", "solve", "integrate_state", "integrate_fundamental",
    "dense_eval", "KAPPA_WARN",
]

log = logging.getLogger(__name__)

KAPPA_WARN = 1e8


class IntegrationError(RuntimeError):
    def __init__(self, message: str, t: float):
        self.t = t
        super().__init__(f"{message} at t={t!r}")


class StepSizeUnderflow(IntegrationError):
    pass


class ConditioningWarning(RuntimeWarning):
    pass


# ---------------------------------------------------------------------------
# dense trajectories


@dataclass(frozen=True)
class Trajectory:
    """Piecewise cubic Hermite trajectory on a strictly increasing mesh.

    ``values[i]`` is the solution at ``mesh[i]``; interval ``i`` spans
    ``[mesh[i], mesh[i+1]]`` and uses slopes ``d_start[i]``, ``d_end[i]``.
    Values may be vectors or matrices (any trailing shape).
    """

    mesh: np.ndarray
    values: np.ndarray
    d_start: np.ndarray
    d_end: np.ndarray
    tol: float = float("nan")

    @property
    def t_max(self) -> float:
        return float(self.mesh[-1])

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape[1:]

    def _locate(self, t: np.ndarray) -> np.ndarray:
        if np.any(t < self.mesh[0]) or np.any(t > self.mesh[-1]) or np.any(np.isnan(t)):
            bad = t[(t < self.mesh[0]) | (t > self.mesh[-1]) | np.isnan(t)][0]
            raise ValueError(f"t={float(bad)!r} outside [{self.mesh[0]!r}, {self.mesh[-1]!r}]")
        i = np.searchsorted(self.mesh, t, side="right") - 1
        return np.clip(i, 0, len(self.mesh) - 2)

    def _basis(self, t):
        t = np.asarray(t, dtype=float)
        i = self._locate(np.atleast_1d(t))
        t0, t1 = self.mesh[i], self.mesh[i + 1]
        h = t1 - t0
        s = (np.atleast_1d(t) - t0) / h
        return t, i, h, s

    def __call__(self, t):
        """Interpolated value; exact at mesh nodes."""
        t, i, h, s = self._basis(t)
        y0, y1 = self.values[i], self.values[i + 1]
        m0, m1 = self.d_start[i], self.d_end[i]
        ex = s.shape + (1,) * len(self.shape)
        s_, h_ = s.reshape(ex), h.reshape(ex)
        s2, s3 = s_ * s_, s_ * s_ * s_
        out = ((2 * s3 - 3 * s2 + 1) * y0 + (s3 - 2 * s2 + s_) * h_ * m0
               + (-2 * s3 + 3 * s2) * y1 + (s3 - s2) * h_ * m1)
        # snap to stored node values
        at0 = s == 0.0
        at1 = s == 1.0
        out[at0] = y0[at0]
        out[at1] = y1[at1]
        return out[0] if t.ndim == 0 else out

    def derivative(self, t):
        """Derivative of the Hermite interpolant."""
        t, i, h, s = self._basis(t)
        y0, y1 = self.values[i], self.values[i + 1]
        m0, m1 = self.d_start[i], self.d_end[i]
        ex = s.shape + (1,) * len(self.shape)
        s_, h_ = s.reshape(ex), h.reshape(ex)
        s2 = s_ * s_
        out = ((6 * s_ - 6 * s2) * (y1 - y0) / h_ + (3 * s2 - 4 * s_ + 1) * m0 + (3 * s2 - 2 * s_) * m1)
        return out[0] if t.ndim == 0 else out

    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.mesh[:-1] + self.mesh[1:])

    def component(self, index) -> "Trajectory":
        """Sub-trajectory ``values[:, index]`` on the same mesh."""
        sel = (slice(None),) + (index if isinstance(index, tuple) else (index,))
        return Trajectory(self.mesh, self.values[sel], self.d_start[sel], self.d_end[sel], self.tol)

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "Trajectory":
        """Apply a linear map to values and slopes alike."""
        return Trajectory(self.mesh, fn(self.values), fn(self.d_start), fn(self.d_end), self.tol)


def dense_eval(traj: Trajectory, t):
    return traj(t)


@dataclass(frozen=True)
class FundamentalPair:
    """``A`` (variational flow), ``B`` (its inverse transpose) and the state on one mesh.

    ``kappa[i] = ||A(t_i)||_2 * ||B(t_i)^T||_2``.
    ``state_mismatch`` is the sup distance between the re-resolved state and
    the trajectory handed to :func:`integrate_fundamental`, sampled at that
    trajectory's nodes.
    """

    A: Trajectory
    B: Trajectory
    state: Trajectory
    kappa: np.ndarray
    state_mismatch: float

    @property
    def mesh(self) -> np.ndarray:
        return self.A.mesh

    def inverse(self, t):
        """``A(t)^{-1}`` via ``B(t)^T``."""
        return np.swapaxes(self.B(t), -1, -2)

    def consistency(self) -> np.ndarray:
        """``||B^T A - I||_F`` at every node."""
        m = self.A.shape[0]
        prod = np.swapaxes(self.B.values, -1, -2) @ self.A.values
        return np.linalg.norm(prod - np.eye(m), axis=(-2, -1))


# ---------------------------------------------------------------------------
# Dormand-Prince 5(4)

_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_A_MAT = np.zeros((7, 7))
for _i, _row in enumerate(_A):
    _A_MAT[_i, :len(_row)] = _row
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4
# continuous extension at the step midpoint (Shampine), applied as y + h/2 * sum(c_i k_i)
_MID = np.array([6025192743 / 30085553152, 0.0, 51252292925 / 65400821598, -2691868925 / 45128329728,
                 187940372067 / 1594534317056, -1776094331 / 19743644256, 11237099 / 235043384])

SAFETY = 0.9
MIN_FACTOR = 0.2
MAX_FACTOR = 5.0

Rhs = Callable[[float, np.ndarray, float], np.ndarray]
Scale = Callable[[np.ndarray, np.ndarray], np.ndarray]


def mixed_scale(tol: float) -> Scale:
    """Componentwise ``atol + rtol * max(|y_old|, |y_new|)`` with ``atol = rtol = tol``."""
    def scale(y0: np.ndarray, y1: np.ndarray) -> np.ndarray:
        return tol + tol * np.maximum(np.abs(y0), np.abs(y1))
    return scale


def _rms(v: np.ndarray) -> float:
    return math.sqrt(float(v.dot(v)) / v.size)


def _factor(err_norm: float, ierr_norm: float) -> float:
    if not (np.isfinite(err_norm) and np.isfinite(ierr_norm)):
        return MIN_FACTOR
    f = MAX_FACTOR
    if err_norm > 0:
        f = min(f, SAFETY * err_norm ** -0.2)
    if ierr_norm > 0:
        f = min(f, SAFETY * ierr_norm ** -0.25)
    return f


def _initial_step(fun: Rhs, t0: float, y0: np.ndarray, f0: np.ndarray, direction: float,
                  sc: np.ndarray, span: float) -> float:
    d0 = np.sqrt(np.mean((y0 / sc) ** 2))
    d1 = np.sqrt(np.mean((f0 / sc) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, span)
    y1 = y0 + direction * h0 * f0
    f1 = fun(t0 + direction * h0, y1, t0 + direction * h0 / 2)
    d2 = np.sqrt(np.mean(((f1 - f0) / sc) ** 2)) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1, span)


def solve(
    fun: Rhs,
    t0: float,
    t1: float,
    y0: np.ndarray,
    scale: Scale,
    stops: Sequence[float] = (),
    max_step: float = np.inf,
    tol: float = float("nan"),
) -> Trajectory:
    """Integrate ``y' = fun(t, y, t_piece)`` from ``t0`` to ``t1`` (either direction).

    ``fun`` receives a third argument, a time strictly inside the current
    step, for selecting piecewise-defined inputs.  ``scale(y_old, y_new)``
    returns per-component error weights; a step is accepted when the RMS of
    ``err / scale`` is at most one.  Every time in ``stops`` strictly between
    ``t0`` and ``t1`` becomes a mesh node.  The result is returned on an
    increasing mesh regardless of direction.
    """
    direction = 1.0 if t1 >= t0 else -1.0
    span = abs(t1 - t0)
    shape = np.shape(y0)
    y = np.asarray(y0, dtype=float).reshape(-1).copy()
    if span == 0.0:
        raise ValueError("empty integration interval")
    inner = sorted({float(s) for s in stops if min(t0, t1) < s < max(t0, t1)}, reverse=direction < 0)
    targets = inner + [float(t1)]

    def f(t, yy, tp):
        return np.asarray(fun(t, yy.reshape(shape), tp), dtype=float).reshape(-1)

    ts = [float(t0)]
    ys = [y.copy()]
    ds: list[np.ndarray] = []
    de: list[np.ndarray] = []

    t = float(t0)
    h = None
    for target in targets:
        # the input may jump at a stop, so the first slope is recomputed
        k1 = None
        while direction * (target - t) > 0:
            remaining = abs(target - t)
            if k1 is None:
                k1 = f(t, y, t + direction * min(remaining, 1e-9 * max(1.0, abs(t))) / 2)
                if h is None:
                    h = _initial_step(f, t, y, k1, direction, scale(y, y), remaining)
            step = min(h, max_step, remaining)
            # avoid leaving a sliver before the target
            if remaining - step < 1e-10 * max(1.0, abs(target)):
                step = remaining
            t_new = target if step == remaining else t + direction * step
            hs = t_new - t
            tp = t + hs / 2
            k = np.empty((7, y.size))
            k[0] = k1
            for s in range(1, 7):
                yi = y + hs * (_A_MAT[s, :s] @ k[:s])
                k[s] = f(t + _C[s] * hs, yi, tp)
            y_new = y + hs * (_B5 @ k)
            err = hs * (_E @ k)
            if not np.all(np.isfinite(y_new)):
                err_norm = ierr_norm = np.inf
            else:
                sc = scale(y, y_new)
                err_norm = _rms(err / sc)
                # the stored cubic Hermite must also meet tol at the midpoint
                herm = 0.5 * (y + y_new) + hs * (k1 - k[6]) / 8
                ierr_norm = _rms((herm - y - 0.5 * hs * (_MID @ k)) / sc)
            if err_norm <= 1.0 and ierr_norm <= 1.0:
                ts.append(t_new)
                ys.append(y_new)
                ds.append(k1)
                de.append(k[6])
                t, y, k1 = t_new, y_new, k[6]
                h = step * max(1.0, _factor(err_norm, ierr_norm))
            else:
                h = step * max(MIN_FACTOR, _factor(err_norm, ierr_norm))
                if h < 16 * np.finfo(float).eps * max(1.0, abs(t)):
                    if not np.all(np.isfinite(y_new)):
                        raise IntegrationError("non-finite state", t)
                    raise StepSizeUnderflow("step size underflow", t)

    mesh = np.array(ts)
    values = np.array(ys).reshape((len(ts),) + shape)
    d_start = np.array(ds).reshape((len(ds),) + shape)
    d_end = np.array(de).reshape((len(de),) + shape)
    if direction < 0:
        mesh = mesh[::-1].copy()
        values = values[::-1].copy()
        d_start, d_end = d_end[::-1].copy(), d_start[::-1].copy()
    return Trajectory(mesh, values, d_start, d_end, tol)


# ---------------------------------------------------------------------------
# state and variational flows


def _check(T_max: float, tol: float) -> None:
    if not T_max > 0:
        raise ValueError("T_max must be positive")
    if not tol > 0:
        raise ValueError("tol must be positive")


def integrate_state(spec: ProblemSpec, xi, T_max: float = 40.0, tol: float = 1e-8,
                    max_step: float = np.inf) -> Trajectory:
    """Solve ``x' = f(t, x, u0(t))``, ``x(0) = xi`` on ``[0, T_max]``."""
    _check(T_max, tol)
    x0 = np.asarray(xi, dtype=float).reshape(spec.state_dim)

    def rhs(t, x, tp):
        return spec.dynamics(t, x, spec.control(t, tp))

    return solve(rhs, 0.0, T_max, x0, mixed_scale(tol), spec.breakpoints, max_step, tol)


def _block_scale(tol: float, m: int) -> Scale:
    # state: mixed abs/rel per component; A, B, integral blocks: norm-relative
    n_a = m * m
    sl_x = slice(0, m)
    blocks = [slice(m, m + n_a), slice(m + n_a, m + 2 * n_a), slice(m + 2 * n_a, m + 2 * n_a + m)]

    def scale(y0: np.ndarray, y1: np.ndarray) -> np.ndarray:
        mag = np.maximum(np.abs(y0), np.abs(y1))
        out = np.empty_like(y0)
        out[sl_x] = tol + tol * mag[sl_x]
        for b in blocks:
            out[b] = tol * (mag[b].max() + tol)
        return out

    return scale


def integrate_fundamental(spec: ProblemSpec, traj: Trajectory, tol: float | None = None,
                          max_step: float = np.inf) -> FundamentalPair:
    """Fundamental matrix ``A`` and its inverse-transpose companion ``B`` along ``traj``.

    The state is re-integrated jointly with ``A``, ``B`` and the running
    integral of ``dg/dx A`` so that a single adaptive mesh resolves all of
    them; the returned ``state`` lives on that mesh and is what downstream
    quadrature should use.
    """
    tol = traj.tol if tol is None else tol
    if not np.isfinite(tol):
        tol = 1e-8
    T_max = traj.t_max
    _check(T_max, tol)
    m = spec.state_dim
    n_a = m * m
    eye = np.eye(m)
    y0 = np.concatenate([traj.values[0], eye.ravel(), eye.ravel(), np.zeros(m)])

    def rhs(t, y, tp):
        x = y[:m]
        A = y[m:m + n_a].reshape(m, m)
        B = y[m + n_a:m + 2 * n_a].reshape(m, m)
        fx, J, gx = spec.variational_terms(t, x, spec.control(t, tp))
        out = np.empty_like(y)
        out[:m] = fx
        out[m:m + n_a] = (J @ A).ravel()
        out[m + n_a:m + 2 * n_a] = (-J.T @ B).ravel()
        out[m + 2 * n_a:] = gx @ A
        return out

    aug = solve(rhs, 0.0, T_max, y0, _block_scale(tol, m), spec.breakpoints, max_step, tol)
    N = len(aug.mesh)
    state = aug.component(slice(0, m))
    A = aug.map(lambda v: v[..., m:m + n_a].reshape(v.shape[:-1] + (m, m)))
    B = aug.map(lambda v: v[..., m + n_a:m + 2 * n_a].reshape(v.shape[:-1] + (m, m)))
    # A(0), B(0) are the identity by construction
    assert np.array_equal(A.values[0], eye) and np.array_equal(B.values[0], eye)

    kappa = np.linalg.norm(A.values, ord=2, axis=(-2, -1)) * np.linalg.norm(B.values, ord=2, axis=(-2, -1))
    worst = float(np.max(kappa)) if N else 0.0
    if not worst <= KAPPA_WARN:
        i = int(np.argmax(np.where(np.isfinite(kappa), kappa, np.inf)))
        warnings.warn(
            f"fundamental matrix ill-conditioned: kappa={worst:.3g} at t={aug.mesh[i]:.6g}; inverse unreliable",
            ConditioningWarning, stacklevel=2,
        )
    mismatch = float(np.max(np.abs(state(traj.mesh) - traj.values))) if len(traj.mesh) else 0.0
    log.debug("fundamental pair: %d nodes, max kappa %.3g, state mismatch %.3g", N, worst, mismatch)
    return FundamentalPair(A=A, B=B, state=state, kappa=kappa, state_mismatch=mismatch)
