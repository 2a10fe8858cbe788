"""Pseudo-games: regret, cumulative regret and exploitability.

A profile is one flat float64 vector holding every player's action in
player order. Player indices are 0-based.

Exploitability comes in two deviation modes:

* ``"individual"``: each player deviates inside its own feasible set
  ``K_i(a_-i) = {b_i : constraints(b_i, a_-i) >= 0}`` (GNE exploitability).
* ``"joint"``: one deviation profile ``b`` is drawn from the jointly
  feasible set and scored as ``sum_i u_i(b_i, a_-i) - u_i(a)``; zero
  exactly at variational equilibria.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

FEAS_TOL = 1e-9
GNE_TOL = 1e-6


class InfeasibleDeviation(ValueError):
    def __init__(self, player: int, index: int, value: float):
        super().__init__(f"deviation of player {player} violates constraint {index} "
                         f"(value {value:.3e} < -{FEAS_TOL})")
        self.player, self.index, self.value = player, index, value


@dataclass
class PseudoGame:
    action_dims: list[int]
    payoff: Callable[[np.ndarray, int], float]
    constraints: Callable[[np.ndarray, int], np.ndarray]
    feasible_project: Callable[[np.ndarray], np.ndarray]
    lower: np.ndarray
    upper: np.ndarray
    best_response: Optional[Callable[[int, np.ndarray], np.ndarray]] = None
    joint_best_response: Optional[Callable[[np.ndarray], np.ndarray]] = None
    project_deviation: Optional[Callable[[int, np.ndarray, np.ndarray], np.ndarray]] = None
    sampler: Optional[Callable[[np.random.Generator], np.ndarray]] = None
    payoff_grad: Optional[Callable[[np.ndarray, int], np.ndarray]] = None
    payoff_batch: Optional[Callable[[np.ndarray, int], np.ndarray]] = None
    exploitability_grad: Optional[Callable[[np.ndarray], np.ndarray]] = None
    deviation_grid: Optional[Callable[[int, int], np.ndarray]] = None
    name: str = "pseudo-game"

    def __post_init__(self):
        self.action_dims = [int(d) for d in self.action_dims]
        self.lower = np.broadcast_to(np.asarray(self.lower, dtype=np.float64), (self.dim,)).copy()
        self.upper = np.broadcast_to(np.asarray(self.upper, dtype=np.float64), (self.dim,)).copy()
        self._offsets = np.concatenate([[0], np.cumsum(self.action_dims)])

    @property
    def n_players(self) -> int:
        return len(self.action_dims)

    @property
    def dim(self) -> int:
        return int(sum(self.action_dims))

    def slice(self, player: int) -> slice:
        return slice(int(self._offsets[player]), int(self._offsets[player + 1]))

    def action(self, profile: np.ndarray, player: int) -> np.ndarray:
        return np.asarray(profile)[self.slice(player)]

    def split(self, profile: np.ndarray) -> list[np.ndarray]:
        return [self.action(profile, i) for i in range(self.n_players)]

    def substitute(self, profile: np.ndarray, player: int, b_i) -> np.ndarray:
        out = np.array(profile, dtype=np.float64)
        out[self.slice(player)] = b_i
        return out

    def check_profile(self, profile) -> np.ndarray:
        profile = np.asarray(profile, dtype=np.float64)
        if profile.shape != (self.dim,):
            raise ValueError(f"profile has shape {profile.shape}, expected ({self.dim},)")
        if not np.all(np.isfinite(profile)):
            raise ValueError("profile has non-finite entries")
        return profile

    def deviation_violation(self, profile: np.ndarray, player: int) -> tuple[int, float] | None:
        """First violated constraint (or box bound) of ``player`` at ``profile``."""
        g = np.atleast_1d(self.constraints(profile, player))
        bad = np.flatnonzero(g < -FEAS_TOL)
        if bad.size:
            return int(bad[0]), float(g[bad[0]])
        sl = self.slice(player)
        lo = profile[sl] - self.lower[sl]
        hi = self.upper[sl] - profile[sl]
        box = np.concatenate([lo, hi])
        bad = np.flatnonzero(box < -FEAS_TOL)
        if bad.size:
            return int(g.size + bad[0]), float(box[bad[0]])
        return None

    def is_feasible(self, profile: np.ndarray) -> bool:
        return all(self.deviation_violation(profile, i) is None for i in range(self.n_players))


@dataclass
class RegretReport:
    per_player: list[float]
    cumulative: float
    exploitability: float
    converged: bool = True
    mode: str = "individual"
    deviation: Optional[np.ndarray] = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {"per_player": list(self.per_player), "cumulative": self.cumulative,
                "exploitability": self.exploitability, "converged": self.converged,
                "mode": self.mode,
                "deviation": None if self.deviation is None else self.deviation.tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def profile_to_json(game: PseudoGame, profile) -> str:
    return json.dumps({"actions": [a.tolist() for a in game.split(np.asarray(profile))]})


def profile_from_json(s: str) -> np.ndarray:
    return np.concatenate([np.asarray(a, dtype=np.float64).ravel()
                           for a in json.loads(s)["actions"]])


# --------------------------------------------------------------------------
# regret

def regret(game: PseudoGame, player: int, a, b_i) -> float:
    """u_i(b_i, a_-i) - u_i(a); ``b_i`` must be feasible given ``a_-i``."""
    a = game.check_profile(a)
    dev = game.substitute(a, player, b_i)
    bad = game.deviation_violation(dev, player)
    if bad is not None:
        raise InfeasibleDeviation(player, *bad)
    return float(game.payoff(dev, player) - game.payoff(a, player))


def cumulative_regret(game: PseudoGame, a, b) -> float:
    b = game.check_profile(b)
    return float(sum(regret(game, i, a, game.action(b, i)) for i in range(game.n_players)))


def joint_cumulative_regret(game: PseudoGame, a, b) -> float:
    """Cumulative regret of a jointly feasible deviation profile ``b``."""
    a, b = game.check_profile(a), game.check_profile(b)
    if not game.is_feasible(b):
        raise ValueError("joint deviation profile is not jointly feasible")
    total = 0.0
    for i in range(game.n_players):
        dev = game.substitute(a, i, game.action(b, i))
        total += game.payoff(dev, i) - game.payoff(a, i)
    return float(total)


# --------------------------------------------------------------------------
# fallback best responses by projected gradient ascent

ASCENT_ITERS = 200
ASCENT_RESTARTS = 5
ASCENT_STEP = 0.1


def _fd_grad(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    g = np.zeros_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def _ascend(f, grad, project, starts, iters=ASCENT_ITERS, step=ASCENT_STEP):
    best_x, best_v, converged = None, -np.inf, False
    for x in starts:
        x = project(x)
        prev = x
        run_best_x, run_best_v = x, f(x)
        moved = np.inf
        for t in range(1, iters + 1):
            g = grad(x)
            if not np.all(np.isfinite(g)):
                break
            prev, x = x, project(x + step / math.sqrt(t) * g)
            v = f(x)
            moved = float(np.linalg.norm(x - prev))
            if v > run_best_v:
                run_best_x, run_best_v = x, v
        if run_best_v > best_v:
            best_x, best_v, converged = run_best_x, run_best_v, moved < 1e-6
    return best_x, best_v, converged


def ascent_best_response(game: PseudoGame, player: int, a: np.ndarray, seed: int = 0):
    """Projected gradient ascent on u_i(., a_-i) with random restarts.

    Returns (b_i, converged).
    """
    sl = game.slice(player)
    rng = np.random.default_rng([seed, player])

    def project(b):
        if game.project_deviation is not None:
            return game.project_deviation(player, b, a)
        return game.action(game.feasible_project(game.substitute(a, player, b)), player)

    def f(b):
        return game.payoff(game.substitute(a, player, b), player)

    if game.payoff_grad is not None:
        def grad(b):
            return np.asarray(game.payoff_grad(game.substitute(a, player, b), player))[sl]
    else:
        def grad(b):
            return _fd_grad(f, b)

    starts = [a[sl].copy()] + [rng.uniform(game.lower[sl], game.upper[sl])
                               for _ in range(ASCENT_RESTARTS - 1)]
    b, _, converged = _ascend(f, grad, project, starts)
    return b, converged


def ascent_joint_best_response(game: PseudoGame, a: np.ndarray, seed: int = 0):
    rng = np.random.default_rng([seed, 7919])

    def f(b):
        return sum(game.payoff(game.substitute(a, i, game.action(b, i)), i)
                   for i in range(game.n_players))

    starts = [a.copy()] + [rng.uniform(game.lower, game.upper) for _ in range(ASCENT_RESTARTS - 1)]
    b, _, converged = _ascend(f, lambda b: _fd_grad(f, b), game.feasible_project, starts)
    return b, converged


# --------------------------------------------------------------------------
# exploitability

def regret_report(game: PseudoGame, a, mode: str = "individual", seed: int = 0) -> RegretReport:
    a = game.check_profile(a)
    if mode == "individual":
        per, devs, ok = [], [], True
        for i in range(game.n_players):
            if game.best_response is not None:
                b_i = np.asarray(game.best_response(i, a), dtype=np.float64)
            else:
                b_i, conv = ascent_best_response(game, i, a, seed)
                ok = ok and conv
            r = regret(game, i, a, b_i)
            if game.best_response is None and r < 0:
                b_i, r = a[game.slice(i)].copy(), 0.0  # staying put is always feasible
            per.append(r)
            devs.append(b_i)
        total = float(sum(per))
        return RegretReport(per, total, total, ok, mode, np.concatenate(devs))
    if mode == "joint":
        ok = True
        if game.joint_best_response is not None:
            b = np.asarray(game.joint_best_response(a), dtype=np.float64)
        else:
            b, ok = ascent_joint_best_response(game, a, seed)
        per = [float(game.payoff(game.substitute(a, i, game.action(b, i)), i) - game.payoff(a, i))
               for i in range(game.n_players)]
        total = float(sum(per))
        if total < 0 and game.is_feasible(a):
            b, per, total = a.copy(), [0.0] * game.n_players, 0.0
        return RegretReport(per, total, total, ok, mode, b)
    raise ValueError(f"unknown deviation mode {mode!r}")


def exploitability(game: PseudoGame, a, mode: str = "individual", seed: int = 0) -> float:
    return regret_report(game, a, mode, seed).exploitability


def sample_feasible(game: PseudoGame, rng: np.random.Generator, max_rejections: int = 100_000):
    """Uniform jointly feasible profile (game sampler, else box rejection sampling)."""
    if game.sampler is not None:
        return np.asarray(game.sampler(rng), dtype=np.float64)
    for _ in range(max_rejections + 1):
        x = rng.uniform(game.lower, game.upper)
        if game.is_feasible(x):
            return x
    raise RuntimeError(f"rejection sampler exceeded {max_rejections} rejections")


def mean_uniform_exploitability(game: PseudoGame, n_samples: int, seed: int,
                                mode: str = "individual") -> float:
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    vals = [exploitability(game, sample_feasible(game, rng), mode) for _ in range(n_samples)]
    return float(np.mean(vals))


def normalized_exploitability(game: PseudoGame, a, n_samples: int, seed: int,
                              mode: str = "individual") -> float:
    denom = mean_uniform_exploitability(game, n_samples, seed, mode)
    if denom < 1e-12:
        raise ValueError("mean exploitability of uniform profiles is ~0; game is trivially solved")
    return exploitability(game, a, mode) / denom


# --------------------------------------------------------------------------
# brute force

MAX_GRID = 10 ** 7


def simplex_grid(k: int, points: int) -> np.ndarray:
    """All points of the k-simplex whose coordinates are multiples of 1/(points-1)."""
    n = points - 1
    if n == 0:
        return np.full((1, k), 1.0 / k)
    rows = []
    for cuts in itertools.combinations(range(n + k - 1), k - 1):
        parts = np.diff(np.concatenate([[-1], cuts, [n + k - 1]])) - 1
        rows.append(parts / n)
    return np.array(rows, dtype=np.float64)


def _box_grid(lo, hi, points) -> np.ndarray:
    if points == 1:
        return None
    axes = [np.linspace(l, h, points) for l, h in zip(lo, hi)]
    return np.array(list(itertools.product(*axes)), dtype=np.float64).reshape(-1, len(lo))


def brute_force_exploitability(game: PseudoGame, a, grid_points_per_dim: int) -> float:
    """Sum over players of the best regret on a feasible deviation grid.

    A single grid point per dimension means "stay at a". The result is a
    lower bound on (individual-mode) exploitability.
    """
    a = game.check_profile(a)
    if grid_points_per_dim < 1:
        raise ValueError("grid_points_per_dim must be >= 1")
    size = sum(grid_points_per_dim ** d for d in game.action_dims)
    if size > MAX_GRID:
        raise ValueError(f"grid has {size} points, more than {MAX_GRID}")
    total = 0.0
    for i in range(game.n_players):
        sl = game.slice(i)
        if grid_points_per_dim == 1:
            continue
        if game.deviation_grid is not None:
            grid = game.deviation_grid(i, grid_points_per_dim)
        else:
            grid = _box_grid(game.lower[sl], game.upper[sl], grid_points_per_dim)
        base = game.payoff(a, i)
        best = 0.0
        profiles = np.repeat(a[None, :], len(grid), axis=0)
        profiles[:, sl] = grid
        feas = np.array([game.deviation_violation(p, i) is None for p in profiles])
        profiles = profiles[feas]
        if len(profiles):
            if game.payoff_batch is not None:
                vals = np.asarray(game.payoff_batch(profiles, i))
            else:
                vals = np.array([game.payoff(p, i) for p in profiles])
            best = max(best, float(vals.max() - base))
        total += best
    return total


# --------------------------------------------------------------------------
# fixtures

def _project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    v = np.asarray(v, dtype=np.float64)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    return np.maximum(v - css[rho] / (rho + 1), 0.0)


def bimatrix_adapter(A_payoff, B_payoff) -> PseudoGame:
    """Two-player normal-form game on a product of simplices."""
    A = np.asarray(A_payoff, dtype=np.float64)
    B = np.asarray(B_payoff, dtype=np.float64)
    if A.shape != B.shape or A.ndim != 2:
        raise ValueError(f"payoff matrices must share a 2-D shape, got {A.shape} and {B.shape}")
    k1, k2 = A.shape
    mats = (A, B)

    def split(p):
        return p[:k1], p[k1:]

    def payoff(p, i):
        x, y = split(p)
        return float(x @ mats[i] @ y)

    def payoff_batch(ps, i):
        return np.einsum("ki,ij,kj->k", ps[:, :k1], mats[i], ps[:, k1:])

    def payoff_grad(p, i):
        x, y = split(p)
        return np.concatenate([mats[i] @ y, mats[i].T @ x])

    def constraints(p, i):
        s = split(p)[i].sum()
        return np.array([s - 1.0, 1.0 - s])

    def project(p):
        x, y = split(p)
        return np.concatenate([_project_simplex(x), _project_simplex(y)])

    def best_response(i, p):
        x, y = split(p)
        expected = A @ y if i == 0 else B.T @ x
        out = np.zeros(k1 if i == 0 else k2)
        out[int(np.argmax(expected))] = 1.0
        return out

    def sampler(rng):
        return np.concatenate([rng.dirichlet(np.ones(k1)), rng.dirichlet(np.ones(k2))])

    return PseudoGame(
        [k1, k2], payoff, constraints, project, 0.0, 1.0,
        best_response=best_response,
        project_deviation=lambda i, b, p: _project_simplex(b),
        sampler=sampler, payoff_grad=payoff_grad, payoff_batch=payoff_batch,
        deviation_grid=lambda i, pts: simplex_grid(k1 if i == 0 else k2, pts),
        name="bimatrix")


def matching_pennies() -> PseudoGame:
    """Player 0 wins (+1) on a match, player 1 wins on a mismatch."""
    A = np.array([[1.0, -1.0], [-1.0, 1.0]])
    return bimatrix_adapter(A, -A)


def nonlipschitz_example() -> PseudoGame:
    """u_i(a) = a_i on [0, 1]^2 with g_1 = a_2 - a_1^2 and g_2 = a_1 - a_2^2.

    Exploitability is sqrt(a_1) + sqrt(a_2) - a_1 - a_2, whose gradient
    blows up as either coordinate approaches 0.
    """
    def payoff(p, i):
        return float(p[i])

    def payoff_batch(ps, i):
        return ps[:, i]

    def payoff_grad(p, i):
        g = np.zeros(2)
        g[i] = 1.0
        return g

    def constraints(p, i):
        return np.array([p[1 - i] - p[i] ** 2])

    def feasible(p):
        return p[1] - p[0] ** 2 >= -FEAS_TOL and p[0] - p[1] ** 2 >= -FEAS_TOL

    def project(p):
        p = np.clip(np.asarray(p, dtype=np.float64), 0.0, 1.0)
        if feasible(p):
            return p
        t = p.mean()
        return np.array([t, t])

    def best_response(i, p):
        return np.array([math.sqrt(max(p[1 - i], 0.0))])

    def project_deviation(i, b, p):
        return np.clip(b, 0.0, math.sqrt(max(p[1 - i], 0.0)))

    def exploitability_grad(p):
        with np.errstate(divide="ignore"):
            return 0.5 / np.sqrt(np.asarray(p, dtype=np.float64)) - 1.0

    return PseudoGame([1, 1], payoff, constraints, project, 0.0, 1.0,
                      best_response=best_response, project_deviation=project_deviation,
                      payoff_grad=payoff_grad, payoff_batch=payoff_batch,
                      exploitability_grad=exploitability_grad, name="non-lipschitz")


def nonlipschitz_closed_form(a1: float, a2: float) -> float:
    return math.sqrt(a1) + math.sqrt(a2) - a1 - a2


def envelope_gradient(game: PseudoGame, a: np.ndarray, b: np.ndarray, h: float = 1e-6,
                      mode: str = "individual") -> np.ndarray:
    """Gradient in ``a`` of psi(a, b) with the deviation ``b`` held fixed."""
    def psi(x):
        total = 0.0
        for i in range(game.n_players):
            dev = game.substitute(x, i, game.action(b, i))
            total += game.payoff(dev, i) - game.payoff(x, i)
        return total
    return _fd_grad(psi, np.asarray(a, dtype=np.float64), h)
