"""Model parameters and their transformation into predictions.

``SurvivalParams`` holds regression coefficients (one row per PSA sample)
for each parameter of a survival distribution.  Predictions apply the
inverse link to ``X @ coefs.T`` and yield natural-scale parameter arrays
of shape ``(n_samples, n_rows)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .dists import FAMILIES, LINKS, Distribution

_INV_LINK = {"log": np.exp, "identity": lambda x: x}


def _design(input_data: pd.DataFrame, terms: Sequence[str]) -> np.ndarray:
    missing = [t for t in terms if t not in input_data.columns]
    if missing:
        raise ValueError(f"input data lacks model terms: {missing}")
    return input_data[list(terms)].to_numpy(dtype=float)


@dataclass(frozen=True)
class SurvivalParams:
    """Coefficient samples for one parametric survival model.

    ``coefs`` maps each distribution parameter to a DataFrame with one row per
    PSA sample and one named column per model term.
    """

    family: str
    coefs: dict[str, pd.DataFrame]
    links: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown distribution family {self.family!r}")
        expected = FAMILIES[self.family]
        if set(self.coefs) != set(expected):
            raise ValueError(
                f"{self.family} coefficients needed for {expected}, got {tuple(self.coefs)}"
            )
        coefs = {}
        for name in expected:
            c = self.coefs[name]
            if not isinstance(c, pd.DataFrame):
                raise TypeError("coefficients must be DataFrames with named term columns")
            coefs[name] = c.astype(float).reset_index(drop=True)
        sizes = {len(c) for c in coefs.values()}
        if len(sizes) != 1:
            raise ValueError("all coefficient matrices must share n_samples")
        links = {**LINKS[self.family], **self.links}
        object.__setattr__(self, "coefs", coefs)
        object.__setattr__(self, "links", links)

    @property
    def n_samples(self) -> int:
        return len(next(iter(self.coefs.values())))

    def predict(self, input_data: pd.DataFrame, samples: slice | None = None) -> dict[str, np.ndarray]:
        """Natural-scale parameters, each of shape ``(n_samples, n_rows)``."""
        out = {}
        for name, c in self.coefs.items():
            x = _design(input_data, c.columns)
            b = c.to_numpy()
            if samples is not None:
                b = b[samples]
            out[name] = _INV_LINK[self.links[name]](b @ x.T)
        return out

    def distribution(self, input_data: pd.DataFrame, samples: slice | None = None) -> Distribution:
        return Distribution(self.family, self.predict(input_data, samples))

    def resize(self, n_samples: int) -> "SurvivalParams":
        """Broadcast single-row (point estimate) coefficients to ``n_samples`` rows."""
        if self.n_samples == n_samples:
            return self
        if self.n_samples != 1:
            raise ValueError(
                f"coefficients have {self.n_samples} samples; expected 1 or {n_samples}"
            )
        coefs = {k: pd.concat([v] * n_samples, ignore_index=True) for k, v in self.coefs.items()}
        return SurvivalParams(self.family, coefs, self.links)

    @classmethod
    def from_mvn(
        cls,
        family: str,
        mean: pd.Series,
        vcov: pd.DataFrame,
        n: int,
        rng: np.random.Generator,
    ) -> "SurvivalParams":
        """Draw PSA coefficients from the asymptotic normal of the estimates.

        ``mean`` is indexed by ``"param:term"`` names; ``vcov`` uses the same
        names for rows and columns.
        """
        names = list(mean.index)
        if list(vcov.index) != names or list(vcov.columns) != names:
            raise ValueError("vcov rows and columns must match the coefficient names")
        draws = sample_coefs_mvn(mean.to_numpy(float), vcov.to_numpy(float), n, rng)
        return cls(family, split_coef_columns(pd.DataFrame(draws, columns=names)))


def split_coef_columns(wide: pd.DataFrame) -> dict[str, pd.DataFrame]:
    """Split ``param:term`` columns into one DataFrame per parameter."""
    out: dict[str, dict[str, np.ndarray]] = {}
    for col in wide.columns:
        if ":" not in col:
            raise ValueError(f"coefficient column {col!r} is not of the form param:term")
        param, term = col.split(":", 1)
        out.setdefault(param, {})[term] = wide[col].to_numpy(float)
    return {p: pd.DataFrame(cols) for p, cols in out.items()}


def read_coefs(path, family: str, vcov_path=None, n: int | None = None, rng=None) -> SurvivalParams:
    """Load coefficients from CSV columns named ``param:term``.

    With ``vcov_path`` the single row is a point estimate and ``n`` samples
    are drawn from a multivariate normal; otherwise rows are used verbatim.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"coefficient file not found: {path}")
    wide = pd.read_csv(path)
    if vcov_path is None:
        return SurvivalParams(family, split_coef_columns(wide))
    vcov_path = Path(vcov_path)
    if not vcov_path.is_file():
        raise FileNotFoundError(f"covariance file not found: {vcov_path}")
    if len(wide) != 1:
        raise ValueError(f"{path}: a point estimate (one row) is needed with a covariance matrix")
    vcov = pd.read_csv(vcov_path, index_col=0)
    return SurvivalParams.from_mvn(family, wide.iloc[0], vcov, n, rng)


def sample_coefs_mvn(mean, cov, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` draws from MVN(mean, cov) as an ``(n, k)`` matrix.

    Cholesky is used when ``cov`` is positive definite.  Singular matrices
    (e.g. all zeros) fall back to an eigen-decomposition, so zero-variance
    coefficients are returned exactly.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    k = len(mean)
    if cov.shape != (k, k):
        raise ValueError(f"cov must be {k}x{k}")
    if not np.allclose(cov, cov.T, atol=1e-10, rtol=0):
        raise ValueError("cov is not symmetric")
    try:
        factor = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh((cov + cov.T) / 2)
        if vals.min() < -1e-10:
            raise ValueError("cov is not positive semi-definite") from None
        factor = vecs * np.sqrt(np.clip(vals, 0, None))
    z = rng.standard_normal((n, k))
    return mean + z @ factor.T


def mom_beta(mean: float, se: float) -> tuple[float, float]:
    """Beta shape parameters with the given mean and standard error."""
    if not 0 < mean < 1:
        raise ValueError("beta mean must lie in (0, 1)")
    if se <= 0:
        raise ValueError("beta se must be positive")
    if se**2 >= mean * (1 - mean):
        raise ValueError("infeasible beta moments: se^2 >= mean (1 - mean)")
    common = mean * (1 - mean) / se**2 - 1
    return mean * common, (1 - mean) * common


def mom_gamma(mean: float, se: float) -> tuple[float, float]:
    """Gamma (shape, rate) with the given mean and standard error."""
    if mean <= 0 or se <= 0:
        raise ValueError("gamma mean and se must be positive; use dist=fixed for se=0")
    return mean**2 / se**2, mean / se**2


def mom_lognormal(mean: float, se: float) -> tuple[float, float]:
    """(meanlog, sdlog) of a lognormal with the given mean and standard error."""
    if mean <= 0 or se <= 0:
        raise ValueError("lognormal mean and se must be positive")
    sdlog2 = np.log1p((se / mean) ** 2)
    return float(np.log(mean) - sdlog2 / 2), float(np.sqrt(sdlog2))


def xbeta(x, beta) -> np.ndarray:
    """Flattened linear predictor ``x @ beta.T``.

    The ``(N, n_samples)`` product is flattened column by column: all N rows
    for sample 1, then all rows for sample 2, and so on.

    >>> xbeta([[1.0], [2.0]], [[3.0], [4.0]]).tolist()
    [3.0, 6.0, 4.0, 8.0]
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    beta = np.atleast_2d(np.asarray(beta, dtype=float))
    if x.shape[1] != beta.shape[1]:
        raise ValueError(f"x has {x.shape[1]} columns but beta has {beta.shape[1]}")
    return (x @ beta.T).ravel(order="F")


@dataclass(frozen=True)
class MlogitParams:
    """Multinomial logit coefficients for transitions out of one state.

    ``coefs`` has shape ``(n_samples, n_categories - 1, n_terms)``; the
    reference category's linear predictor is pinned at zero.
    """

    coefs: np.ndarray
    terms: tuple[str, ...]
    ref: int = 0

    def __post_init__(self):
        coefs = np.asarray(self.coefs, dtype=float)
        if coefs.ndim != 3 or coefs.shape[2] != len(self.terms):
            raise ValueError("coefs must be (n_samples, n_categories - 1, n_terms)")
        if not 0 <= self.ref <= coefs.shape[1]:
            raise ValueError("reference category out of range")
        object.__setattr__(self, "coefs", coefs)
        object.__setattr__(self, "terms", tuple(self.terms))

    @property
    def n_samples(self) -> int:
        return self.coefs.shape[0]

    @property
    def n_categories(self) -> int:
        return self.coefs.shape[1] + 1

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Probabilities of shape ``(n_samples, n_rows, n_categories)``."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != len(self.terms):
            raise ValueError(f"x has {x.shape[1]} columns; expected {len(self.terms)}")
        lp = np.einsum("sck,nk->snc", self.coefs, x)
        lp = np.insert(lp, self.ref, 0.0, axis=2)
        lp -= lp.max(axis=2, keepdims=True)
        e = np.exp(lp)
        return e / e.sum(axis=2, keepdims=True)


def predict_mlogit(mp: MlogitParams, x: Mapping[str, float] | Sequence[float], sample: int) -> np.ndarray:
    """Category probabilities for one covariate row and one PSA sample (0-based)."""
    if isinstance(x, Mapping):
        missing = [t for t in mp.terms if t not in x]
        if missing:
            raise ValueError(f"covariate row lacks terms: {missing}")
        row = [x[t] for t in mp.terms]
    else:
        row = list(x)
    return mp.predict(np.asarray([row]))[sample, 0]


_RNG_DISTS = {
    "fixed": ("est",),
    "normal": ("mean", "sd"),
    "lognormal": ("meanlog", "sdlog"),
    "beta": ("shape1", "shape2"),
    "gamma": ("shape", "rate"),
    "uniform": ("min", "max"),
}


def draw_rng(spec: Mapping[str, Mapping], n: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Draw named quantities from a declarative distribution list.

    Each entry is ``{"dist": name, <args>}`` where arguments may be scalars or
    equal-length vectors (one column per element).  Beta and gamma also accept
    ``mean``/``se`` moments.  Returns arrays of shape ``(n,)`` or ``(n, m)``.

    >>> out = draw_rng({"rr": {"dist": "fixed", "est": [1.0, 0.8]}}, 2, np.random.default_rng(0))
    >>> out["rr"].tolist()
    [[1.0, 0.8], [1.0, 0.8]]
    """
    out = {}
    for name, entry in spec.items():
        entry = dict(entry)
        dist = entry.pop("dist")
        args = {k: np.atleast_1d(np.asarray(v, dtype=float)) for k, v in entry.items()}
        scalar = all(np.ndim(v) == 0 for v in entry.values())
        args = dict(zip(args, np.broadcast_arrays(*args.values())))
        if dist in ("beta", "gamma", "lognormal") and set(args) == {"mean", "se"}:
            mom = {"beta": mom_beta, "gamma": mom_gamma, "lognormal": mom_lognormal}[dist]
            pairs = [mom(m, s) for m, s in zip(args["mean"], args["se"])]
            keys = _RNG_DISTS[dist]
            args = {keys[0]: np.array([p[0] for p in pairs]), keys[1]: np.array([p[1] for p in pairs])}
        if dist not in _RNG_DISTS or set(args) != set(_RNG_DISTS[dist]):
            raise ValueError(f"{name}: unsupported distribution {dist!r} with args {sorted(args)}")
        out[name] = _draw(dist, args, n, rng)
        if scalar:
            out[name] = out[name][:, 0]
    return out


def _draw(dist: str, a: Mapping[str, np.ndarray], n: int, rng: np.random.Generator) -> np.ndarray:
    size = (n, len(next(iter(a.values()))))
    if dist == "fixed":
        return np.broadcast_to(a["est"], size).copy()
    if dist == "normal":
        return rng.normal(a["mean"], a["sd"], size)
    if dist == "lognormal":
        return rng.lognormal(a["meanlog"], a["sdlog"], size)
    if dist == "beta":
        return rng.beta(a["shape1"], a["shape2"], size)
    if dist == "gamma":
        return rng.gamma(a["shape"], 1.0 / a["rate"], size)
    if dist == "uniform":
        return rng.uniform(a["min"], a["max"], size)
    raise ValueError(f"unsupported distribution {dist!r}")
