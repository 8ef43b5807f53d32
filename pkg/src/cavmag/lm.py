"""Bounded Levenberg-Marquardt least squares with covariance-based errors.

The damping follows Marquardt's diagonal scaling, solved as an augmented
linear least-squares problem so that parameters of very different
magnitude (GHz angular frequencies next to dimensionless scales) stay well
conditioned.  Bounds are handled by projection; parameters sitting on an
active bound with the gradient pointing outward are frozen for the step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from cavmag.constants import TWO_PI


class FitError(RuntimeError):
    """A fit could not produce a usable result."""


class ClampedBoundError(FitError):
    """A physical parameter ran into a hard bound (e.g. ``kappa_m -> 0``)."""

    def __init__(self, message: str, result: "FitResult"):
        super().__init__(message)
        self.result = result


@dataclass
class FitProblem:
    model: Callable
    x: object
    y: np.ndarray
    init: np.ndarray
    bounds: tuple | None = None
    weights: np.ndarray | None = None
    names: Sequence[str] = ()
    kinds: Sequence[str] = ()
    typical: np.ndarray | None = None
    max_iter: int = 200
    gtol: float = 1e-10
    xtol: float = 1e-10
    lambda0: float = 1e-3

    def __post_init__(self):
        self.y = np.asarray(self.y)
        self.init = np.asarray(self.init, dtype=float).copy()
        n_par = self.init.size
        if self.y.ndim != 1:
            raise ValueError("data ordinate must be one-dimensional")
        n_x = np.shape(self.x)[-1] if np.ndim(self.x) else 0
        if n_x != self.y.size:
            raise ValueError(f"abscissa length {n_x} != ordinate length {self.y.size}")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=float)
            if self.weights.shape != self.y.shape:
                raise ValueError("weights must match the data length")
            if np.any(~(self.weights > 0)):
                raise ValueError("weights must be positive")
        if self.bounds is None:
            lo, hi = np.full(n_par, -np.inf), np.full(n_par, np.inf)
        else:
            lo, hi = (np.broadcast_to(np.asarray(b, dtype=float), (n_par,)).copy() for b in self.bounds)
        if np.any(lo > hi):
            raise ValueError("lower bound above upper bound")
        if np.any(self.init < lo) or np.any(self.init > hi):
            raise ValueError("initial parameters outside bounds")
        self.bounds = (lo, hi)
        if not self.names:
            self.names = tuple(f"p{i}" for i in range(n_par))
        if not self.kinds:
            self.kinds = ("",) * n_par
        if len(self.names) != n_par or len(self.kinds) != n_par:
            raise ValueError("names/kinds must match the parameter count")
        if self.typical is not None:
            self.typical = np.broadcast_to(np.asarray(self.typical, dtype=float), (n_par,)).copy()


@dataclass
class FitResult:
    params: np.ndarray
    sigma: np.ndarray
    names: tuple
    residual_norm: float
    converged: bool
    n_iter: int
    covariance: np.ndarray | None = None
    message: str = ""
    kinds: tuple = ()
    initial_residual_norm: float = math.nan
    cost_history: list = field(default_factory=list)
    at_bounds: tuple = ()
    n_data: int = 0
    fixed: dict = field(default_factory=dict)

    @property
    def covariance_available(self) -> bool:
        return self.covariance is not None

    def value(self, name: str) -> float:
        return float(self.params[self.names.index(name)])

    def error(self, name: str) -> float:
        return float(self.sigma[self.names.index(name)])

    def as_dict(self) -> dict:
        return dict(zip(self.names, map(float, self.params)))

    def to_record(self) -> dict:
        """Report record; angular quantities are printed as ``/2pi`` in Hz."""
        params = {}
        for name, kind, value, err in zip(self.names, self.kinds, self.params, self.sigma):
            if kind == "angular":
                params[name] = {"value": float(value) / TWO_PI, "sigma": float(err) / TWO_PI,
                                "unit": "Hz (/2pi)"}
            else:
                params[name] = {"value": float(value), "sigma": float(err), "unit": kind}
        fixed = {}
        for name, (value, kind) in self.fixed.items():
            if kind == "angular":
                fixed[name] = {"value": float(value) / TWO_PI, "unit": "Hz (/2pi)"}
            else:
                fixed[name] = {"value": float(value), "unit": kind}
        return {
            "params": params,
            "fixed": fixed,
            "residual_norm": float(self.residual_norm),
            "initial_residual_norm": float(self.initial_residual_norm),
            "converged": bool(self.converged),
            "n_iter": int(self.n_iter),
            "n_data": int(self.n_data),
            "covariance_available": self.covariance_available,
            "at_bounds": list(self.at_bounds),
            "message": self.message,
        }


def numeric_jacobian(model, params, abscissa, typical=None, rel_step=1e-6, abs_floor=1e-12):
    """Central-difference Jacobian of ``model(params, abscissa)``.

    ``typical`` is the scale over which the model changes appreciably in
    each parameter; when given, the step is ``rel_step * typical_i``.  That
    matters for centre frequencies, whose magnitude says nothing about the
    width of the feature they move.  Without it the step is
    ``rel_step * |p_i|``.  Steps never drop below ``abs_floor``.  Returns an
    ``(n_out, n_par)`` array, complex when the model is.
    """
    params = np.asarray(params, dtype=float)
    scale = np.abs(params)
    if typical is not None:
        typ = np.abs(np.asarray(typical, dtype=float))
        scale = np.where(typ > 0, typ, scale)
    steps = np.maximum(rel_step * scale, abs_floor)
    columns = []
    for i, h in enumerate(steps):
        up, down = params.copy(), params.copy()
        up[i] += h
        down[i] -= h
        f_up = np.asarray(model(up, abscissa))
        f_down = np.asarray(model(down, abscissa))
        if not (np.all(np.isfinite(f_up)) and np.all(np.isfinite(f_down))):
            raise ValueError(f"model is not finite near parameter {i}")
        # use the realised step, which can differ from h by rounding
        columns.append((f_up - f_down) / (up[i] - down[i]))
    return np.stack(columns, axis=-1)


def _as_real(a):
    a = np.asarray(a)
    if np.iscomplexobj(a):
        return np.concatenate([a.real, a.imag], axis=0)
    return a


def solve_least_squares(p: FitProblem) -> FitResult:
    """Minimise ``sum(w * (model(params, x) - y))**2`` within the bounds."""
    lo, hi = p.bounds
    w = np.ones(p.y.shape) if p.weights is None else p.weights

    def residual(params):
        pred = np.asarray(p.model(params, p.x))
        if pred.shape != p.y.shape:
            raise ValueError(f"model returned shape {pred.shape}, expected {p.y.shape}")
        return _as_real(w * (pred - p.y))

    def jacobian(params):
        jac = numeric_jacobian(p.model, params, p.x, typical=p.typical)
        return _as_real(w[:, None] * jac)

    params = p.init.copy()
    r = residual(params)
    if not np.all(np.isfinite(r)):
        raise FitError("model is not finite at the initial parameters")
    cost = float(r @ r)
    initial_cost = cost
    history = [cost]
    lam = p.lambda0
    scale_floor = np.abs(p.typical) if p.typical is not None else np.zeros_like(params)

    converged, message, n_iter = False, "maximum iterations reached", 0
    for n_iter in range(1, p.max_iter + 1):
        if cost == 0.0:
            converged, message = True, "exact fit"
            break
        J = jacobian(params)
        grad = J.T @ r
        at_lo = (params <= lo) & (grad > 0)
        at_hi = (params >= hi) & (grad < 0)
        free = ~(at_lo | at_hi)
        col_norm = np.linalg.norm(J, axis=0)
        r_norm = math.sqrt(cost)
        with np.errstate(invalid="ignore", divide="ignore"):
            cosine = np.where(col_norm[free] > 0, np.abs(grad[free]) / (col_norm[free] * r_norm), 0.0)
        if cosine.size == 0 or np.max(cosine) <= p.gtol:
            converged, message = True, "gradient tolerance"
            break

        Jf = J[:, free]
        d = np.linalg.norm(Jf, axis=0)
        d[d == 0] = 1.0
        Js = Jf / d
        n_free = Js.shape[1]
        accepted = False
        while True:
            A = np.vstack([Js, math.sqrt(lam) * np.eye(n_free)])
            b = np.concatenate([-r, np.zeros(n_free)])
            step_s, *_ = np.linalg.lstsq(A, b, rcond=None)
            trial = params.copy()
            trial[free] += step_s / d
            trial = np.clip(trial, lo, hi)
            taken = trial - params
            ref = np.maximum(np.abs(params), scale_floor)
            with np.errstate(invalid="ignore", divide="ignore"):
                rel = np.where(ref > 0, np.abs(taken) / ref, np.abs(taken))
            rel_step = float(np.max(rel)) if rel.size else 0.0
            r_trial = residual(trial)
            cost_trial = float(r_trial @ r_trial) if np.all(np.isfinite(r_trial)) else math.inf
            if cost_trial < cost:
                lam = max(lam / 10, 1e-12)
                params, r, cost = trial, r_trial, cost_trial
                history.append(cost)
                accepted = True
                break
            lam *= 10
            if rel_step <= p.xtol or lam > 1e16:
                break
        if rel_step <= p.xtol:
            converged, message = True, "step tolerance"
            break
        if not accepted:
            message = "no further descent possible"
            break

    return _finalise(p, params, cost, initial_cost, history, converged, message, n_iter, residual, jacobian)


def _finalise(p, params, cost, initial_cost, history, converged, message, n_iter, residual, jacobian):
    lo, hi = p.bounds
    n_par = params.size
    J = jacobian(params)
    n_data = J.shape[0]
    on_bound = (params <= lo) | (params >= hi)
    free = ~on_bound
    sigma = np.full(n_par, np.nan)
    covariance = None
    Jf = J[:, free]
    d = np.linalg.norm(Jf, axis=0)
    dof = n_data - int(free.sum())
    if free.any() and np.all(d > 0):
        Js = Jf / d
        sv = np.linalg.svd(Js, compute_uv=False)
        if sv[-1] > 0 and sv[0] / sv[-1] < 1e12:
            inv = np.linalg.inv(Js.T @ Js) / np.outer(d, d)
            s2 = cost / dof if dof > 0 else math.nan
            covariance = np.zeros((n_par, n_par))
            covariance[np.ix_(free, free)] = inv * s2
            sigma = np.sqrt(np.clip(np.diag(covariance), 0, None))
            sigma[on_bound] = 0.0
    if covariance is None:
        message = (message + "; " if message else "") + "singular Jacobian, covariance unavailable"
    at_bounds = tuple(name for name, flag in zip(p.names, on_bound) if flag)
    return FitResult(
        params=params,
        sigma=sigma,
        names=tuple(p.names),
        kinds=tuple(p.kinds),
        residual_norm=cost,
        initial_residual_norm=initial_cost,
        converged=converged,
        n_iter=n_iter,
        covariance=covariance,
        message=message,
        cost_history=history,
        at_bounds=at_bounds,
        n_data=n_data,
    )
