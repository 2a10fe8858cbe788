"""Classical equilibrium-finding baselines: tatonnement and exploitability descent."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import exchange as ex
from .pseudogame import PseudoGame, regret_report

log = logging.getLogger(__name__)

ETA_GRID = (1.0, 0.5, 0.1, 0.05, 0.01, 0.005, 0.001, 0.0005, 0.0001)
DIVERGENCE_NORM = 1e6


@dataclass
class Trajectory:
    iters: list = field(default_factory=list)
    exploitability: list = field(default_factory=list)
    cumulative_regret: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    diverged: bool = False
    events: list = field(default_factory=list)
    final: Optional[np.ndarray] = None

    def record(self, it: int, phi: float, psi: float, wall_ms: float, snapshot=None) -> None:
        if self.iters and it <= self.iters[-1]:
            raise ValueError("trajectory iterations must increase")
        if not (math.isfinite(phi) and math.isfinite(psi)):
            raise FloatingPointError(f"non-finite metric at iteration {it}")
        self.iters.append(int(it))
        self.exploitability.append(float(phi))
        self.cumulative_regret.append(float(psi))
        self.wall_ms.append(float(wall_ms))
        self.snapshots.append(snapshot)

    def __len__(self) -> int:
        return len(self.iters)

    @property
    def last(self) -> float:
        return self.exploitability[-1]

    def rows(self) -> list[tuple]:
        return list(zip(self.iters, self.exploitability, self.cumulative_regret, self.wall_ms))


class _Clock:
    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self.t0 = time.perf_counter()

    def ms(self) -> float:
        return (time.perf_counter() - self.t0) * 1e3 if self.enabled else 0.0


def step_size(eta0: float, t: int, schedule_dir: str = "decreasing") -> float:
    if schedule_dir == "decreasing":
        return eta0 / math.sqrt(t + 1)
    if schedule_dir == "increasing":
        return eta0 * math.sqrt(t + 1)
    raise ValueError(f"unknown schedule direction {schedule_dir!r}")


def tatonnement(economy: ex.ExchangeEconomy, eta0: float, T: int,
                schedule_dir: str = "decreasing", p0=None, timing: bool = True,
                divergence_norm: float | None = DIVERGENCE_NORM) -> Trajectory:
    """p <- floor(p + eta_t z(p)), renormalised; allocations are demands at p.

    Snapshots hold the price vector at every recorded step (T + 1 rows unless
    the run diverges). ``divergence_norm=None`` disables truncation.
    """
    if eta0 <= 0 or T < 1:
        raise ValueError("need eta0 > 0 and T >= 1")
    clock = _Clock(timing)
    p = ex.normalize_prices(np.full(economy.m_goods, 1.0 / economy.m_goods) if p0 is None else p0)
    traj = Trajectory()
    for t in range(T + 1):
        X = ex.demands(economy.family, economy.V, economy.rho, p, economy.E @ p)
        phi = float(ex.outcome_exploitability(economy, p, X))
        traj.record(t, phi, phi, clock.ms(), p.copy())
        if t == T:
            break
        z = X.sum(0) - economy.E.sum(0)
        raw = p + step_size(eta0, t, schedule_dir) * z
        too_big = divergence_norm is not None and np.linalg.norm(raw) > divergence_norm
        if not np.all(np.isfinite(raw)) or too_big:
            traj.diverged = True
            traj.events.append((t, "diverged"))
            break
        p = ex.normalize_prices(raw)
    traj.final = traj.snapshots[-1]
    return traj


def exploitability_descent(game: PseudoGame, eta0: float, T: int, a0=None,
                           mode: str = "individual", seed: int = 0,
                           timing: bool = True) -> Trajectory:
    """Projected descent a <- P(a - eta_t grad phi(a)), eta_t = eta0 / sqrt(t + 1).

    The gradient is ``game.exploitability_grad`` when available, otherwise the
    envelope gradient of psi(a, b*) with the attained best response b* fixed.
    """
    from .pseudogame import envelope_gradient, sample_feasible
    if eta0 <= 0 or T < 1:
        raise ValueError("need eta0 > 0 and T >= 1")
    clock = _Clock(timing)
    a = game.feasible_project(sample_feasible(game, np.random.default_rng(seed))
                              if a0 is None else np.asarray(a0, dtype=np.float64))
    traj = Trajectory()
    for t in range(T + 1):
        rep = regret_report(game, a, mode, seed)
        traj.record(t, rep.exploitability, rep.cumulative, clock.ms(), a.copy())
        if t == T:
            break
        with np.errstate(all="ignore"):
            if game.exploitability_grad is not None:
                g = np.asarray(game.exploitability_grad(a), dtype=np.float64)
            else:
                g = envelope_gradient(game, a, rep.deviation, mode=mode)
        if not np.all(np.isfinite(g)):
            traj.events.append((t, "non-finite gradient; step skipped"))
            log.info("exploitability descent: non-finite gradient at iteration %d", t)
            continue
        a = game.feasible_project(a - eta0 / math.sqrt(t + 1) * g)
    traj.final = traj.snapshots[-1]
    return traj


def exchange_envelope_gradient(economy: ex.ExchangeEconomy, profile) -> np.ndarray:
    """Gradient of psi((p, X), b*) in (p, X) with exact best responses b* held fixed."""
    n, m = economy.V.shape
    profile = np.asarray(profile, dtype=np.float64)
    X, p = profile[:n * m].reshape(n, m), profile[n * m:]
    z = X.sum(0) - economy.E.sum(0)
    q = ex.seller_best_response(economy, X)
    gX = -utility_gradients(economy, X) + (q - p)[None, :]
    return np.concatenate([gX.ravel(), -z])


def utility_gradients(economy: ex.ExchangeEconomy, X) -> np.ndarray:
    """(Super)gradient of each buyer's utility at its bundle, shape (n, m)."""
    V, rho, fam = economy.V, economy.rho, economy.family
    X = np.asarray(X, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        if fam == "linear":
            return V.copy()
        u = ex.utilities(fam, V, rho, X)[:, None]
        if fam == "cobb_douglas":
            return u * V / X
        if fam == "leontief":
            ratio = np.where(V > 0, X / np.where(V > 0, V, 1.0), np.inf)
            j = np.argmin(ratio, axis=1)
            g = np.zeros_like(X)
            g[np.arange(X.shape[0]), j] = 1.0 / V[np.arange(X.shape[0]), j]
            return g
        r = rho[:, None]
        return u ** (1.0 - r) * V * X ** (r - 1.0)


def exchange_descent_game(economy: ex.ExchangeEconomy) -> PseudoGame:
    game = ex.exchange_pseudogame(economy)
    game.exploitability_grad = lambda a: exchange_envelope_gradient(economy, a)
    return game


# --------------------------------------------------------------------------
# step-size selection

@dataclass
class EtaSelection:
    eta: float
    scores: dict
    all_diverged: bool


def select_eta(run: Callable[[object, float], Trajectory], instances: Sequence,
               grid: Sequence[float] = ETA_GRID) -> EtaSelection:
    """Pick the step size minimising mean final exploitability over ``instances``.

    Diverged runs score their last finite exploitability; if every grid point
    diverges on some instance the flag is raised and the best truncated score wins.
    """
    if not grid:
        raise ValueError("empty step-size grid")
    scores, diverged = {}, {}
    for eta in grid:
        trajs = [run(inst, eta) for inst in instances]
        scores[eta] = float(np.mean([t.last for t in trajs]))
        diverged[eta] = any(t.diverged for t in trajs)
    best = min(grid, key=lambda e: (scores[e], -e))
    return EtaSelection(best, scores, all(diverged.values()))
