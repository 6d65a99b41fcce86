"""Parametric survival distributions.

Every family is expressed through its cumulative hazard ``H(t)`` and the
inverse ``H^-1``; sampling inverts the survivor function on the cumulative
hazard scale, which keeps left-truncated draws accurate far into the tail.

Parameterizations (natural scale):

=============  =====================  ====================================
family         params                 survivor S(t)
=============  =====================  ====================================
exponential    rate                   exp(-rate t)
weibull        shape, scale           exp(-(t/scale)^shape)
gompertz       shape, rate            exp(-rate/shape (exp(shape t) - 1))
lognormal      meanlog, sdlog         1 - Phi((log t - meanlog)/sdlog)
loglogistic    shape, scale           1 / (1 + (t/scale)^shape)
gamma          shape, rate            Q(shape, rate t)
=============  =====================  ====================================

All functions broadcast over numpy arrays of parameters and times.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy import special

FAMILIES: dict[str, tuple[str, ...]] = {
    "exponential": ("rate",),
    "weibull": ("shape", "scale"),
    "gompertz": ("shape", "rate"),
    "lognormal": ("meanlog", "sdlog"),
    "loglogistic": ("shape", "scale"),
    "gamma": ("shape", "rate"),
}

# link used when a parameter depends on covariates
LINKS: dict[str, dict[str, str]] = {
    "exponential": {"rate": "log"},
    "weibull": {"shape": "log", "scale": "log"},
    "gompertz": {"shape": "identity", "rate": "log"},
    "lognormal": {"meanlog": "identity", "sdlog": "log"},
    "loglogistic": {"shape": "log", "scale": "log"},
    "gamma": {"shape": "log", "rate": "log"},
}

# rates may be exactly zero (a transition that never happens)
_NONNEG = {("exponential", "rate"), ("gompertz", "rate")}


def _validate(family: str, params: Mapping[str, np.ndarray]) -> None:
    if family not in FAMILIES:
        raise ValueError(f"unknown distribution family {family!r}")
    expected = FAMILIES[family]
    if set(params) != set(expected):
        raise ValueError(
            f"{family} requires parameters {expected}, got {tuple(params)}"
        )
    for name, value in params.items():
        value = np.asarray(value, dtype=float)
        if np.any(np.isnan(value)):
            raise ValueError(f"{family} parameter {name} is NaN")
        if LINKS[family][name] == "identity":
            if not np.all(np.isfinite(value)):
                raise ValueError(f"{family} parameter {name} must be finite")
        elif (family, name) in _NONNEG:
            if np.any(value < 0) or not np.all(np.isfinite(value)):
                raise ValueError(f"{family} parameter {name} must be >= 0")
        elif np.any(value <= 0) or not np.all(np.isfinite(value)):
            raise ValueError(f"{family} parameter {name} must be > 0")


def _cumhazard(family: str, p: Mapping[str, np.ndarray], t: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if family == "exponential":
            return p["rate"] * t
        if family == "weibull":
            return (t / p["scale"]) ** p["shape"]
        if family == "gompertz":
            shape, rate = np.broadcast_arrays(p["shape"], p["rate"])
            small = np.abs(shape) < 1e-12
            safe = np.where(small, 1.0, shape)
            return np.where(small, rate * t, rate / safe * np.expm1(safe * t))
        if family == "lognormal":
            z = (np.log(t) - p["meanlog"]) / p["sdlog"]
            return -special.log_ndtr(-z)
        if family == "loglogistic":
            return np.log1p((t / p["scale"]) ** p["shape"])
        if family == "gamma":
            return -np.log(special.gammaincc(p["shape"], p["rate"] * t))
    raise ValueError(f"unknown distribution family {family!r}")


def _inv_cumhazard(family: str, p: Mapping[str, np.ndarray], h: np.ndarray) -> np.ndarray:
    """Time t with H(t) = h; +inf when h exceeds the family's total hazard."""
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if family == "exponential":
            return h / p["rate"]
        if family == "weibull":
            return p["scale"] * h ** (1.0 / p["shape"])
        if family == "gompertz":
            shape, rate = np.broadcast_arrays(p["shape"], p["rate"])
            small = np.abs(shape) < 1e-12
            safe = np.where(small, 1.0, shape)
            arg = safe * h / rate
            # negative shape: cured fraction, unreachable hazard -> inf
            out = np.where(arg > -1.0, np.log1p(np.maximum(arg, -1.0)) / safe, np.inf)
            return np.where(small, h / rate, out)
        if family == "lognormal":
            z = -special.ndtri_exp(-h)
            return np.exp(p["meanlog"] + p["sdlog"] * z)
        if family == "loglogistic":
            return p["scale"] * np.expm1(h) ** (1.0 / p["shape"])
        if family == "gamma":
            s = np.exp(-h)
            x = np.where(
                s > 0.5,
                special.gammaincinv(p["shape"], -np.expm1(-h)),
                special.gammainccinv(p["shape"], s),
            )
            x = np.where(s == 0.0, np.inf, x)
            return x / p["rate"]
    raise ValueError(f"unknown distribution family {family!r}")


def _logpdf(family: str, p: Mapping[str, np.ndarray], t: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if family in ("exponential", "weibull", "gompertz", "loglogistic"):
            return np.log(_hazard(family, p, t)) - _cumhazard(family, p, t)
        if family == "lognormal":
            z = (np.log(t) - p["meanlog"]) / p["sdlog"]
            return -0.5 * z**2 - np.log(t * p["sdlog"] * np.sqrt(2 * np.pi))
        if family == "gamma":
            a, b = p["shape"], p["rate"]
            return a * np.log(b) + (a - 1) * np.log(t) - b * t - special.gammaln(a)
    raise ValueError(f"unknown distribution family {family!r}")


def _hazard(family: str, p: Mapping[str, np.ndarray], t: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if family == "exponential":
            return p["rate"] * np.ones_like(t)
        if family == "weibull":
            k, s = p["shape"], p["scale"]
            return k / s * (t / s) ** (k - 1)
        if family == "gompertz":
            return p["rate"] * np.exp(p["shape"] * t)
        if family == "loglogistic":
            k, s = p["shape"], p["scale"]
            x = (t / s) ** k
            return k / s * (t / s) ** (k - 1) / (1 + x)
        return np.exp(_logpdf(family, p, t) + _cumhazard(family, p, t))


@dataclass(frozen=True)
class Distribution:
    """A parametric survival distribution on the natural parameter scale.

    Parameters may be scalars or arrays; arrays broadcast against the time
    or uniform arguments, so one ``Distribution`` can describe many patients.
    """

    family: str
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        params = {k: np.asarray(v, dtype=float) for k, v in self.params.items()}
        _validate(self.family, params)
        object.__setattr__(self, "params", params)

    @classmethod
    def of(cls, family: str, **params) -> "Distribution":
        return cls(family, params)

    def cumhazard(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.where(t > 0, _cumhazard(self.family, self.params, np.maximum(t, 0)), 0.0)

    def survival(self, t) -> np.ndarray:
        return np.exp(-self.cumhazard(t))

    def hazard(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.family in ("lognormal", "gamma"):
            pos = np.maximum(t, np.finfo(float).tiny)
            h = np.exp(_logpdf(self.family, self.params, pos) + _cumhazard(self.family, self.params, pos))
            return np.where(t > 0, h, self._density_at_zero())
        return _hazard(self.family, self.params, t)

    def pdf(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        pos = np.maximum(t, np.finfo(float).tiny)
        with np.errstate(divide="ignore", invalid="ignore"):
            f = np.exp(_logpdf(self.family, self.params, pos))
        return np.where(t > 0, f, self._density_at_zero())

    def _density_at_zero(self) -> np.ndarray:
        p = self.params
        if self.family in ("exponential", "gompertz"):
            return p["rate"]
        if self.family in ("weibull", "loglogistic", "gamma"):
            k = p["shape"]
            at_one = p["rate"] if self.family == "gamma" else 1.0 / p["scale"]
            return np.where(k < 1, np.inf, np.where(k == 1, at_one, 0.0))
        return np.zeros_like(p["meanlog"])

    def quantile(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        if np.any((p < 0) | (p > 1)):
            raise ValueError("quantile probability must lie in [0, 1]")
        with np.errstate(divide="ignore"):
            h = -np.log1p(-p)
        return np.where(p == 0, 0.0, _inv_cumhazard(self.family, self.params, h))

    def sample(self, u) -> np.ndarray:
        """Inverse-CDF draw: the time t with S(t) = 1 - u."""
        u = _check_uniform(u)
        return _inv_cumhazard(self.family, self.params, -np.log1p(-u))

    def sample_truncated(self, lower, u, strict: bool = True) -> np.ndarray:
        """Draw conditional on survival to ``lower``: S(t)/S(lower) = 1 - u.

        Works on the cumulative hazard scale, so it stays accurate where
        S(lower) underflows.  ``strict`` rejects those cases anyway.
        """
        u = _check_uniform(u)
        lower = np.asarray(lower, dtype=float)
        if np.any(lower < 0):
            raise ValueError("truncation time must be nonnegative")
        h0 = self.cumhazard(lower)
        if np.any(~np.isfinite(h0)) or (strict and np.any(np.exp(-h0) == 0)):
            raise ValueError("truncation beyond support")
        t = _inv_cumhazard(self.family, self.params, h0 + -np.log1p(-u))
        return np.maximum(t, lower)


def _check_uniform(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if np.any(~((u > 0) & (u < 1))):
        raise ValueError("uniform variates must lie strictly inside (0, 1)")
    return u


_EVAL_FNS = ("pdf", "survival", "hazard", "cumhazard", "quantile")


def dist_eval(d: Distribution, fn: str, x) -> np.ndarray:
    """Evaluate ``fn`` (one of pdf, survival, hazard, cumhazard, quantile)."""
    if fn not in _EVAL_FNS:
        raise ValueError(f"fn must be one of {_EVAL_FNS}")
    if fn != "quantile" and np.any(np.asarray(x) < 0):
        raise ValueError("x must be nonnegative")
    return getattr(d, fn)(x)


def dist_sample(d: Distribution, u) -> np.ndarray:
    return d.sample(u)


def dist_sample_truncated(d: Distribution, lower, u) -> np.ndarray:
    return d.sample_truncated(lower, u)
