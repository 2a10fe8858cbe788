"""Arrow-Debreu exchange economies as pseudo-games.

Buyers 0..n-1 choose bundles, a seller (player n) chooses prices on the
simplex. Profiles are laid out as ``[X.ravel(), p]``.

Two evaluation paths share the same formulas: plain numpy functions for
evaluation (vectorised over leading batch axes) and ``ad_*`` functions that
record onto an autodiff tape for training.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from .pseudogame import PseudoGame, _project_simplex

PRICE_FLOOR = 1e-9
FAMILIES = ("linear", "cobb_douglas", "leontief", "ces")
_ALIASES = {"linear": "linear", "cobb_douglas": "cobb_douglas", "cobbdouglas": "cobb_douglas",
            "cobb-douglas": "cobb_douglas", "cd": "cobb_douglas", "leontief": "leontief",
            "ces": "ces"}
RHO_RANGES = {"gs": [(0.5, 1.0)], "gc": [(-1.25, -0.75)], "mixed": [(-1.25, -0.75), (0.5, 1.0)]}
NON_CES_RHO = (0.25, 0.75)


def canonical_family(name: str) -> str:
    key = name.strip().lower().replace(" ", "_")
    if key not in _ALIASES:
        raise ValueError(f"unknown utility family {name!r}; expected one of {FAMILIES}")
    return _ALIASES[key]


@dataclass
class ExchangeEconomy:
    V: np.ndarray
    E: np.ndarray
    rho: np.ndarray
    family: str = "linear"
    seed: Optional[int] = None

    def __post_init__(self):
        self.family = canonical_family(self.family)
        self.V = np.atleast_2d(np.asarray(self.V, dtype=np.float64))
        self.E = np.atleast_2d(np.asarray(self.E, dtype=np.float64))
        n, m = self.V.shape
        self.rho = np.broadcast_to(np.asarray(self.rho, dtype=np.float64), (n,)).copy()
        if self.E.shape != (n, m):
            raise ValueError(f"E has shape {self.E.shape}, expected {(n, m)}")
        if np.any(self.V < 0) or np.any(self.E < 0):
            raise ValueError("valuations and endowments must be nonnegative")
        if np.any(self.V.sum(1) <= 0) or np.any(self.E.sum(1) <= 0):
            raise ValueError("every buyer needs a positive valuation and a positive endowment")
        if self.family == "ces" and (np.any(self.rho > 1) or np.any(self.rho == 0)):
            raise ValueError("CES substitution parameters must satisfy rho <= 1, rho != 0")

    @property
    def n_buyers(self) -> int:
        return self.V.shape[0]

    @property
    def m_goods(self) -> int:
        return self.V.shape[1]

    @property
    def strictly_positive(self) -> bool:
        """Existence precondition: every buyer owns some of every good."""
        return bool(np.all(self.E > 0) and np.all(self.V > 0))

    def to_dict(self) -> dict:
        return {"family": self.family, "V": self.V.tolist(), "E": self.E.tolist(),
                "rho": self.rho.tolist(), "seed": self.seed}

    @classmethod
    def from_dict(cls, d) -> "ExchangeEconomy":
        return cls(d["V"], d["E"], d["rho"], d["family"], d.get("seed"))


@dataclass
class MarketOutcome:
    prices: np.ndarray
    X: np.ndarray

    def __post_init__(self):
        self.prices = np.asarray(self.prices, dtype=np.float64)
        self.X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))

    def validate(self, economy: ExchangeEconomy, tol: float = 1e-9) -> None:
        p, X = self.prices, self.X
        if X.shape != economy.V.shape or p.shape != (economy.m_goods,):
            raise ValueError("outcome dimensions do not match the economy")
        if np.any(p < -tol) or abs(p.sum() - 1.0) > tol:
            raise ValueError("prices must lie on the unit simplex")
        if np.any(X < -tol):
            raise ValueError("allocations must be nonnegative")
        spend, budget = X @ p, economy.E @ p
        over = np.flatnonzero(spend > budget + tol)
        if over.size:
            raise ValueError(f"buyer {over[0]} exceeds its budget")

    def profile(self) -> np.ndarray:
        return np.concatenate([self.X.ravel(), self.prices])

    @classmethod
    def from_profile(cls, economy: ExchangeEconomy, profile) -> "MarketOutcome":
        n, m = economy.V.shape
        profile = np.asarray(profile, dtype=np.float64)
        return cls(profile[n * m:], profile[:n * m].reshape(n, m))


# --------------------------------------------------------------------------
# utilities and demands (numpy, vectorised over leading axes)

def utilities(family: str, V, rho, X) -> np.ndarray:
    """Utility of each bundle. V, X: (..., n, m); rho: (..., n). Returns (..., n)."""
    family = canonical_family(family)
    V, X = np.asarray(V, dtype=np.float64), np.asarray(X, dtype=np.float64)
    if family == "linear":
        return np.sum(V * X, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if family == "cobb_douglas":
            logs = np.where(V > 0, V * np.log(X), 0.0)
            return np.exp(np.sum(logs, axis=-1))
        if family == "leontief":
            ratio = np.where(V > 0, X / np.where(V > 0, V, 1.0), np.inf)
            return np.min(ratio, axis=-1)
        rho = np.asarray(rho, dtype=np.float64)[..., None]
        # log u = (1/rho) log sum_j v_j x_j^rho, in log space
        terms = np.where(V > 0, np.log(np.where(V > 0, V, 1.0)) + rho * np.log(X), -np.inf)
        top = np.max(terms, axis=-1, keepdims=True)
        finite_top = np.where(np.isfinite(top), top, 0.0)
        lse = finite_top[..., 0] + np.log(np.sum(np.exp(terms - finite_top), axis=-1))
        lse = np.where(np.isposinf(top[..., 0]), np.inf, lse)
        out = np.exp(lse / rho[..., 0])
        return np.where(np.isnan(out), 0.0, out)


def utility(economy: ExchangeEconomy, buyer: int, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0):
        raise ValueError("bundle must be nonnegative")
    return float(utilities(economy.family, economy.V[buyer], economy.rho[buyer], x))


def _floor(p):
    p = np.maximum(np.asarray(p, dtype=np.float64), PRICE_FLOOR)
    if np.any(~(p > 0)):
        raise ValueError("nonpositive price after flooring")
    return p


def demands(family: str, V, rho, p, budgets) -> np.ndarray:
    """Closed-form Marshallian demands.

    V: (..., n, m) or (n, m); rho, budgets: (..., n); p: (..., m), one price vector
    per leading batch entry.
    Prices are floored at PRICE_FLOOR. Linear ties go to the lowest index.
    """
    family = canonical_family(family)
    V = np.asarray(V, dtype=np.float64)
    p = _floor(p)[..., None, :]
    b = np.asarray(budgets, dtype=np.float64)[..., None]
    if family == "linear":
        return _linear_demand(V, p, b)
    if family == "cobb_douglas":
        return V / V.sum(-1, keepdims=True) * b / p
    if family == "leontief":
        return V * b / np.sum(V * p, axis=-1, keepdims=True)
    rho = np.broadcast_to(np.asarray(rho, dtype=np.float64), V.shape[:-1])[..., None]
    out = np.empty(np.broadcast_shapes(V.shape, p.shape))
    lin = np.broadcast_to(rho >= 1.0, out.shape)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        sigma = 1.0 / (1.0 - np.where(rho >= 1.0, 0.0, rho))
        logv = np.where(V > 0, np.log(np.where(V > 0, V, 1.0)), -np.inf)
        logw = sigma * (logv - np.log(p))
        logd = sigma * logv + (1.0 - sigma) * np.log(p)
        top = np.max(logd, axis=-1, keepdims=True)
        x = b * np.exp(logw - top) / np.sum(np.exp(logd - top), axis=-1, keepdims=True)
    out[...] = x
    if np.any(lin):
        out[lin] = np.broadcast_to(_linear_demand(V, p, b), out.shape)[lin]
    return out


def _linear_demand(V, p, b):
    ratio = V / p
    j = np.argmax(ratio, axis=-1)[..., None]
    x = np.zeros(np.broadcast_shapes(V.shape, p.shape))
    pj = np.take_along_axis(np.broadcast_to(p, x.shape), j, -1)
    np.put_along_axis(x, j, np.broadcast_to(b, pj.shape) / pj, -1)
    return x


def demand(economy: ExchangeEconomy, buyer: int, prices, budget: float) -> np.ndarray:
    if budget < 0:
        raise ValueError("budget must be nonnegative")
    return demands(economy.family, economy.V[buyer:buyer + 1], economy.rho[buyer:buyer + 1],
                   prices, np.array([budget]))[0]


def normalize_prices(p) -> np.ndarray:
    p = np.maximum(np.asarray(p, dtype=np.float64), PRICE_FLOOR)
    return p / p.sum(-1, keepdims=True)


def excess_demand(economy: ExchangeEconomy, prices) -> np.ndarray:
    """Aggregate demand minus aggregate endowment at (floored, normalised) prices."""
    p = normalize_prices(prices)
    X = demands(economy.family, economy.V, economy.rho, p, economy.E @ p)
    return X.sum(0) - economy.E.sum(0)


# --------------------------------------------------------------------------
# exploitability (exact oracle, numpy)

def outcome_regrets(economy: ExchangeEconomy, prices, X):
    """Buyer regrets (..., n) and seller regret (...,) with exact best responses.

    prices: (..., m); X: (..., n, m).
    """
    p = np.asarray(prices, dtype=np.float64)
    X = np.asarray(X, dtype=np.float64)
    budgets = np.einsum("...ij,...j->...i", np.broadcast_to(economy.E, X.shape), p)
    best = demands(economy.family, economy.V, economy.rho, p, budgets)
    fam = economy.family
    buyer = utilities(fam, economy.V, economy.rho, best) - utilities(fam, economy.V, economy.rho, X)
    z = X.sum(-2) - economy.E.sum(0)
    seller = z.max(-1) - np.sum(p * z, axis=-1)
    return buyer, seller


def outcome_exploitability(economy: ExchangeEconomy, prices, X) -> np.ndarray:
    buyer, seller = outcome_regrets(economy, prices, X)
    return buyer.sum(-1) + seller


def exchange_exploitability(economy: ExchangeEconomy, outcome: MarketOutcome) -> float:
    return float(outcome_exploitability(economy, outcome.prices, outcome.X))


def seller_best_response(economy: ExchangeEconomy, X) -> np.ndarray:
    return seller_best_response_batch(economy.E, X)


def seller_best_response_batch(E, X) -> np.ndarray:
    """One-hot on the first good with maximal excess supply-demand gap sum(X) - sum(E)."""
    z = np.asarray(X).sum(-2) - np.asarray(E).sum(-2)
    q = np.zeros(z.shape)
    np.put_along_axis(q, np.argmax(z, axis=-1)[..., None], 1.0, -1)
    return q


# --------------------------------------------------------------------------
# pseudo-game view

def exchange_pseudogame(economy: ExchangeEconomy) -> PseudoGame:
    n, m = economy.V.shape
    nm = n * m
    fam, V, E, rho = economy.family, economy.V, economy.E, economy.rho

    def unpack(prof):
        return prof[:nm].reshape(n, m), prof[nm:]

    def payoff(prof, i):
        X, p = unpack(prof)
        if i < n:
            return float(utilities(fam, V[i], rho[i], X[i]))
        return float(p @ (X.sum(0) - E.sum(0)))

    def payoff_batch(profs, i):
        X, p = profs[:, :nm].reshape(-1, n, m), profs[:, nm:]
        if i < n:
            return utilities(fam, V[i], rho[i], X[:, i])
        return np.sum(p * (X.sum(1) - E.sum(0)), axis=-1)

    def constraints(prof, i):
        X, p = unpack(prof)
        if i < n:
            return np.array([E[i] @ p - X[i] @ p])
        return np.array([p.sum() - 1.0, 1.0 - p.sum()])

    def scale_to_budget(x, p, i):
        x = np.maximum(x, 0.0)
        spend, budget = x @ p, E[i] @ p
        return x * (budget / spend) if spend > budget else x

    def project(prof):
        X, p = unpack(np.asarray(prof, dtype=np.float64))
        p = _project_simplex(p)
        X = np.array([scale_to_budget(X[i], p, i) for i in range(n)])
        return np.concatenate([X.ravel(), p])

    def project_deviation(i, b, prof):
        _, p = unpack(prof)
        if i < n:
            return scale_to_budget(np.asarray(b, dtype=np.float64), p, i)
        return _project_simplex(b)

    def best_response(i, prof):
        X, p = unpack(prof)
        if i < n:
            return demand(economy, i, p, E[i] @ p)
        return seller_best_response(economy, X)

    def sampler(rng):
        return uniform_feasible_outcome(economy, rng=rng).profile()

    upper = np.concatenate([np.full(nm, 1.0 / PRICE_FLOOR), np.ones(m)])
    return PseudoGame([m] * (n + 1), payoff, constraints, project, 0.0, upper,
                      best_response=best_response, project_deviation=project_deviation,
                      sampler=sampler, payoff_batch=payoff_batch,
                      name=f"exchange-{fam}")


def is_competitive_equilibrium(economy: ExchangeEconomy, outcome: MarketOutcome,
                               tol: float = 1e-6) -> tuple[bool, dict]:
    outcome.validate(economy)
    p, X = outcome.prices, outcome.X
    demanded = X.sum(0) > tol
    if np.any((p < PRICE_FLOOR) & demanded):
        raise ValueError("a demanded good has (near-)zero price; the price floor precondition fails")
    buyer, _ = outcome_regrets(economy, p, X)
    z = X.sum(0) - economy.E.sum(0)
    diag = {
        "buyer_regret": buyer.tolist(),
        "max_buyer_regret": float(buyer.max()),
        "max_excess": float(z.max()),
        "value_of_excess": float(p @ z),
        "failures": [],
    }
    if buyer.max() > tol:
        diag["failures"].append("buyer regret")
    if z.max() > tol:
        diag["failures"].append("market not cleared")
    if abs(p @ z) > tol:
        diag["failures"].append("value of excess demand nonzero")
    return not diag["failures"], diag


# --------------------------------------------------------------------------
# sampling

def _resolve_rho_range(family: str, rho_range) -> list[tuple[float, float]]:
    if rho_range is None:
        return RHO_RANGES["gs"] if family == "ces" else [NON_CES_RHO]
    if isinstance(rho_range, str):
        return RHO_RANGES[rho_range.lower()]
    arr = np.asarray(rho_range, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    return [tuple(r) for r in arr]


def sample_economy(family: str, n_buyers: int, m_goods: int, rho_range=None,
                   seed: int = 0) -> ExchangeEconomy:
    """V, E ~ Unif[1e-9, 1]; rho uniform over ``rho_range`` (intervals, or gs/gc/mixed)."""
    family = canonical_family(family)
    rng = np.random.default_rng(seed)
    V = rng.uniform(1e-9, 1.0, size=(n_buyers, m_goods))
    E = rng.uniform(1e-9, 1.0, size=(n_buyers, m_goods))
    ranges = _resolve_rho_range(family, rho_range)
    if family == "ces":
        for lo, hi in ranges:
            if hi > 1 or (lo <= 0 <= hi):
                raise ValueError(f"CES rho range {(lo, hi)} leaves the legal domain")
    widths = np.array([hi - lo for lo, hi in ranges])
    pick = rng.choice(len(ranges), size=n_buyers, p=widths / widths.sum())
    u = rng.uniform(size=n_buyers)
    rho = np.array([ranges[k][0] + u[i] * (ranges[k][1] - ranges[k][0]) for i, k in enumerate(pick)])
    return ExchangeEconomy(V, E, rho, family, seed)


def scarf_economy() -> ExchangeEconomy:
    """Three Leontief buyers, identity endowments, cyclic valuations."""
    E = np.eye(3)
    V = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
    return ExchangeEconomy(V, E, np.full(3, 0.5), "leontief")


def allocation_coefficients(E, p) -> np.ndarray:
    """(E_i . p) / p_j, the most of good j buyer i can afford."""
    p = np.asarray(p, dtype=np.float64)
    budgets = np.einsum("...ij,...j->...i", np.broadcast_to(E, E.shape), p)
    return budgets[..., None] / p[..., None, :]


def uniform_feasible_outcome(economy: ExchangeEconomy, seed: int | None = None,
                             rng: np.random.Generator | None = None) -> MarketOutcome:
    rng = np.random.default_rng(seed) if rng is None else rng
    P, X = uniform_feasible_outcomes(economy, 1, rng)
    return MarketOutcome(P[0], X[0])


def uniform_feasible_outcomes(economy: ExchangeEconomy, k: int, rng: np.random.Generator):
    """``k`` random feasible outcomes: simplex prices, random budget shares."""
    n, m = economy.V.shape
    p = rng.exponential(size=(k, m))
    p = normalize_prices(p / p.sum(-1, keepdims=True))
    s = rng.uniform(size=(k, n, m))
    s = s / s.sum(-1, keepdims=True)
    return p, s * allocation_coefficients(economy.E, p)


def mean_uniform_exploitability(economy: ExchangeEconomy, n_samples: int, seed: int) -> float:
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    P, X = uniform_feasible_outcomes(economy, n_samples, np.random.default_rng(seed))
    return float(outcome_exploitability(economy, P, X).mean())


def normalized_exchange_exploitability(economy: ExchangeEconomy, outcome: MarketOutcome,
                                       n_samples: int = 1000, seed: int = 0) -> float:
    denom = mean_uniform_exploitability(economy, n_samples, seed)
    if denom < 1e-12:
        raise ValueError("mean exploitability of uniform outcomes is ~0")
    return exchange_exploitability(economy, outcome) / denom


# --------------------------------------------------------------------------
# batches and tape versions

@dataclass
class EconomyBatch:
    family: str
    V: np.ndarray    # (B, n, m)
    E: np.ndarray    # (B, n, m)
    rho: np.ndarray  # (B, n)

    @classmethod
    def from_economies(cls, economies: Sequence[ExchangeEconomy]) -> "EconomyBatch":
        fams = {e.family for e in economies}
        if len(fams) != 1:
            raise ValueError(f"a batch must share one utility family, got {sorted(fams)}")
        return cls(fams.pop(), np.stack([e.V for e in economies]),
                   np.stack([e.E for e in economies]), np.stack([e.rho for e in economies]))

    def take(self, idx) -> "EconomyBatch":
        return EconomyBatch(self.family, self.V[idx], self.E[idx], self.rho[idx])

    def __len__(self):
        return self.V.shape[0]

    def features(self) -> np.ndarray:
        B = len(self)
        return np.concatenate([self.V.reshape(B, -1), self.E.reshape(B, -1), self.rho], axis=1)


def ad_utilities(family: str, V, rho, X):
    """Tape version of :func:`utilities`; X is a Tensor (B, n, m) with X > 0."""
    if family == "linear":
        return ad.tsum(X * V, axis=-1)
    if family == "cobb_douglas":
        return ad.exp(ad.tsum(ad.log(X) * V, axis=-1))
    if family == "leontief":
        return ad.amin(X / V, axis=-1)
    r = np.asarray(rho)[..., None]
    terms = ad.log(X) * r + np.log(V)
    top = terms.value.max(axis=-1, keepdims=True)
    lse = ad.log(ad.tsum(ad.exp(terms - top), axis=-1)) + top[..., 0]
    return ad.exp(lse / np.asarray(rho))


def ad_demands(family: str, V, rho, p, budgets):
    """Tape version of :func:`demands`. p: Tensor (B, m); budgets: Tensor (B, n)."""
    P = ad.reshape(p, (p.shape[0], 1, p.shape[1]))
    b = ad.reshape(budgets, budgets.shape + (1,))
    if family == "linear":
        j = np.argmax(V / P.value, axis=-1)[..., None]
        onehot = np.zeros(V.shape)
        np.put_along_axis(onehot, j, 1.0, -1)
        return b / P * onehot
    if family == "cobb_douglas":
        return b / P * (V / V.sum(-1, keepdims=True))
    if family == "leontief":
        return b / ad.tsum(P * V, axis=-1, keepdims=True) * V
    r = np.asarray(rho)[..., None]
    if np.any(r >= 1.0):
        raise ValueError("rho == 1 CES economies should be handled as linear")
    sigma = 1.0 / (1.0 - r)
    logp = ad.log(P)
    logd = logp * (1.0 - sigma) + sigma * np.log(V)
    top = logd.value.max(axis=-1, keepdims=True)
    denom = ad.tsum(ad.exp(logd - top), axis=-1, keepdims=True)
    return b * ad.exp(sigma * np.log(V) - logp * sigma - top) / denom


def ad_cumulative_regret(batch: EconomyBatch, p, X, q, Y):
    """Per-economy psi((p, X), (q, Y)) on the tape.

    p, q: (B, m) prices (q is the seller deviation); X, Y: (B, n, m).
    Returns a Tensor of shape (B,).
    """
    fam, V, E, rho = batch.family, batch.V, batch.E, batch.rho
    buyer = ad.tsum(ad_utilities(fam, V, rho, Y) - ad_utilities(fam, V, rho, X), axis=-1)
    z = ad.tsum(X, axis=1) - E.sum(1)
    seller = ad.tsum((q - p) * z, axis=-1)
    return buyer + seller
