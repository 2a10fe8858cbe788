"""Kyoto Joint Implementation pseudo-game.

Countries choose emissions ``e`` and an investment matrix ``I``. Polytope
routines use the flat layout ``x = (e, vec(I))`` with ``I`` row-major; the
pseudo-game view uses per-country blocks ``(e_i, I_i1, ..., I_in)``.

Every country payoff is a quadratic ``u_i(x) = x'Q_i x / 2 + c_i'x`` whose own
block Hessian is ``-I``. Best responses are therefore Euclidean projections of
an affine target ``g(x)`` onto the relevant polytope, solved exactly as
least-distance problems with NNLS.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import nnls

from .pseudogame import PseudoGame

SAMPLE_RANGE = (0.5, 50.0)
BIND_TOL = 1e-4
VERTEX_TOL = 1e-8
DEDUP_TOL = 1e-7
MAX_VERTEX_DIM = 8


@dataclass
class KyotoInstance:
    rev: np.ndarray    # beta
    dmg: np.ndarray    # delta
    gamma: np.ndarray
    cap: np.ndarray
    seed: Optional[int] = None
    damage_form: str = "plain"   # "plain" | "gamma"

    def __post_init__(self):
        for name in ("rev", "dmg", "gamma", "cap"):
            setattr(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=np.float64)))
        n = self.rev.shape[0]
        for name in ("dmg", "gamma", "cap"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} must have length {n}")
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"{name} must be finite")
        if np.any(self.gamma <= 0):
            raise ValueError("investment return rates must be strictly positive")
        if np.any(self.cap < 0):
            raise ValueError("emission caps must be nonnegative")
        if self.damage_form not in ("plain", "gamma"):
            raise ValueError(f"unknown damage form {self.damage_form!r}")

    @property
    def n(self) -> int:
        return self.rev.shape[0]

    @property
    def dim(self) -> int:
        return self.n * (self.n + 1)

    def with_rev(self, rev) -> "KyotoInstance":
        return KyotoInstance(np.asarray(rev, dtype=np.float64), self.dmg.copy(), self.gamma.copy(),
                             self.cap.copy(), self.seed, self.damage_form)

    def features(self) -> np.ndarray:
        return np.concatenate([self.rev, self.dmg, self.gamma, self.cap]) / SAMPLE_RANGE[1]

    def to_dict(self) -> dict:
        return {"rev": self.rev.tolist(), "dmg": self.dmg.tolist(), "gamma": self.gamma.tolist(),
                "cap": self.cap.tolist(), "seed": self.seed}

    @classmethod
    def from_dict(cls, d, damage_form: str = "plain") -> "KyotoInstance":
        return cls(d["rev"], d["dmg"], d["gamma"], d["cap"], d.get("seed"), damage_form)


@dataclass
class KyotoAction:
    e: np.ndarray
    I: np.ndarray

    def __post_init__(self):
        self.e = np.asarray(self.e, dtype=np.float64)
        self.I = np.atleast_2d(np.asarray(self.I, dtype=np.float64))

    def vector(self) -> np.ndarray:
        return np.concatenate([self.e, self.I.ravel()])

    @classmethod
    def from_vector(cls, n: int, x) -> "KyotoAction":
        x = np.asarray(x, dtype=np.float64)
        return cls(x[:n], x[n:].reshape(n, n))


# --------------------------------------------------------------------------
# payoffs

def country_payoff(inst: KyotoInstance, country: int, action: KyotoAction) -> float:
    """R_i - C_i - D_i."""
    e, I, i = action.e, action.I, country
    revenue = e[i] * (inst.rev[i] - e[i] / 2.0)
    cost = I[i, i] ** 2
    for j in range(inst.n):
        if j != i:
            cost += (I[i, j] + I[j, j]) ** 2 - I[j, j] ** 2
    cost *= 0.5
    if inst.damage_form == "plain":
        net = np.sum(e - I.sum(1))
    else:
        net = np.sum(e - inst.gamma * I.sum(0))
    return float(revenue - cost - inst.dmg[i] * net)


def e_index(n: int, i: int) -> int:
    return i


def i_index(n: int, i: int, j: int) -> int:
    return n + i * n + j


def own_indices(n: int, i: int) -> np.ndarray:
    return np.array([i] + [n + i * n + j for j in range(n)])


def player_permutation(n: int) -> np.ndarray:
    """perm[k] = flat index of the k-th coordinate of the per-country layout."""
    return np.concatenate([own_indices(n, i) for i in range(n)])


def to_player_layout(n: int, x) -> np.ndarray:
    return np.asarray(x)[..., player_permutation(n)]


def from_player_layout(n: int, y) -> np.ndarray:
    y = np.asarray(y)
    out = np.empty_like(y)
    out[..., player_permutation(n)] = y
    return out


def quadratic_forms(inst: KyotoInstance) -> tuple[np.ndarray, np.ndarray]:
    """Q (n, d, d) and c (n, d) with u_i(x) = x'Q_i x / 2 + c_i'x in the flat layout."""
    n, d = inst.n, inst.dim
    Q = np.zeros((n, d, d))
    c = np.zeros((n, d))
    for i in range(n):
        Q[i, i, i] = -1.0
        c[i, :n] = -inst.dmg[i]
        c[i, i] += inst.rev[i]
        offs = inst.gamma if inst.damage_form == "gamma" else np.ones(n)
        for j in range(n):
            for k in range(n):
                c[i, i_index(n, j, k)] = inst.dmg[i] * offs[k]
        ii = i_index(n, i, i)
        Q[i, ii, ii] = -1.0
        for j in range(n):
            if j == i:
                continue
            ij, jj = i_index(n, i, j), i_index(n, j, j)
            Q[i, ij, ij] = -1.0
            Q[i, ij, jj] = Q[i, jj, ij] = -1.0
    return Q, c


def affine_target(inst: KyotoInstance) -> tuple[np.ndarray, np.ndarray]:
    """(g0, C) with g(x) = g0 + C x the own-gradient of u_i at zero own action.

    Since every own Hessian is -I, u_i(b_i, x_-i) = -|b_i|^2/2 + g_i(x).b_i + const.
    """
    Q, c = quadratic_forms(inst)
    n, d = inst.n, inst.dim
    g0, C = np.zeros(d), np.zeros((d, d))
    for i in range(n):
        own = own_indices(n, i)
        g0[own] = c[i, own]
        other = np.setdiff1d(np.arange(d), own)
        C[np.ix_(own, other)] = Q[i][np.ix_(own, other)]
    return g0, C


def pseudo_gradient(inst: KyotoInstance) -> tuple[np.ndarray, np.ndarray]:
    """(M, q) with F(x) = M x + q = -(own gradients); strongly monotone."""
    g0, C = affine_target(inst)
    return np.eye(inst.dim) - C, -g0


# --------------------------------------------------------------------------
# polytope

def joint_halfspaces(inst: KyotoInstance) -> tuple[np.ndarray, np.ndarray]:
    """A x <= b: n cap rows, n transfer rows, then n(n+1) nonnegativity rows."""
    n, d = inst.n, inst.dim
    A = np.zeros((2 * n + d, d))
    b = np.zeros(2 * n + d)
    for i in range(n):
        A[i, i] = 1.0
        for j in range(n):
            A[i, i_index(n, i, j)] = -inst.gamma[j]
        b[i] = inst.cap[i]
        A[n + i, i] = -1.0
        for j in range(n):
            A[n + i, i_index(n, j, i)] = inst.gamma[i]
    A[2 * n:] = -np.eye(d)
    return A, b


def default_box_cap(inst: KyotoInstance) -> float:
    return float(inst.cap.max() * (1.0 + inst.gamma.max()) * 4.0)


def boxed_halfspaces(inst: KyotoInstance, box_cap: float | None = None):
    A, b = joint_halfspaces(inst)
    box_cap = default_box_cap(inst) if box_cap is None else box_cap
    d = inst.dim
    return np.vstack([A, np.eye(d)]), np.concatenate([b, np.full(d, box_cap)]), box_cap


@dataclass
class PolytopeVertices:
    vertices: np.ndarray    # (K, d)
    A: np.ndarray
    b: np.ndarray
    box_cap: Optional[float] = None
    box_active: bool = False

    @property
    def dim(self) -> int:
        return self.A.shape[1]

    def to_dict(self) -> dict:
        return {"vertices": self.vertices.tolist(), "box_cap": self.box_cap,
                "box_active": self.box_active}


def _normalize_rows(A, b):
    norms = np.linalg.norm(A, axis=1)
    norms[norms == 0] = 1.0
    return A / norms[:, None], b / norms


def enumerate_vertices(A, b, box_cap: float | None = None, chunk: int = 100_000) -> PolytopeVertices:
    """All vertices of {x : A x <= b} intersected with [0, box_cap]^d.

    Exhaustive: every d-subset of rows is solved as a square system and the
    feasible solutions are deduplicated.
    """
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    d = A.shape[1]
    if d > MAX_VERTEX_DIM:
        raise ValueError(f"dimension {d} exceeds the exhaustive-enumeration limit {MAX_VERTEX_DIM}")
    n_core = A.shape[0]
    if box_cap is not None:
        A = np.vstack([A, -np.eye(d), np.eye(d)])
        b = np.concatenate([b, np.zeros(d), np.full(d, float(box_cap))])
    An, bn = _normalize_rows(A, b)
    scale = max(1.0, float(np.abs(b).max()))
    combos = itertools.combinations(range(A.shape[0]), d)
    found = []
    while True:
        idx = np.array(list(itertools.islice(combos, chunk)), dtype=np.intp)
        if idx.size == 0:
            break
        As, bs = An[idx], bn[idx]
        s = np.linalg.svd(As, compute_uv=False)
        ok = s[:, -1] > 1e-10 * s[:, 0]
        if not np.any(ok):
            continue
        x = np.linalg.solve(As[ok], bs[ok][..., None])[..., 0]
        feas = np.all(x @ An.T <= bn + VERTEX_TOL * scale, axis=1)
        found.append(x[feas])
    pts = np.concatenate(found) if found else np.zeros((0, d))
    kept: list[np.ndarray] = []
    for x in pts[np.lexsort(pts.T[::-1])] if len(pts) else pts:
        if not kept or np.min(np.linalg.norm(np.array(kept) - x, axis=1)) > DEDUP_TOL * scale:
            kept.append(x)
    V = np.array(kept) if kept else np.zeros((0, d))
    if not len(V):
        raise ValueError("polytope is empty")
    active = False
    if box_cap is not None:
        active = bool(np.any(np.abs(V - box_cap) <= VERTEX_TOL * scale))
    return PolytopeVertices(V, A, b, box_cap, active)


def kyoto_vertices(inst: KyotoInstance, box_cap: float | None = None) -> PolytopeVertices:
    A, b = joint_halfspaces(inst)
    box_cap = default_box_cap(inst) if box_cap is None else box_cap
    # nonnegativity rows are part of A already; only the upper box is new
    d = inst.dim
    res = enumerate_vertices(np.vstack([A, np.eye(d)]), np.concatenate([b, np.full(d, box_cap)]))
    res.box_cap = box_cap
    scale = max(1.0, box_cap)
    res.box_active = bool(np.any(np.abs(res.vertices - box_cap) <= VERTEX_TOL * scale))
    return res


def project_polytope(A, b, y) -> np.ndarray:
    """Euclidean projection of ``y`` onto {x : A x <= b} (least-distance problem via NNLS)."""
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    keep = np.any(A != 0, axis=1)
    if not np.all(b[~keep] >= -VERTEX_TOL):
        raise ValueError("polytope is empty (0 <= negative)")
    A, b = _normalize_rows(A[keep], b[keep])
    if A.shape[0] == 0 or np.all(A @ y <= b):
        return y.copy()
    d = A.shape[1]
    G, h = -A, A @ y - b
    Emat = np.vstack([G.T, h[None, :]])
    f = np.zeros(d + 1)
    f[-1] = 1.0
    u, _ = nnls(Emat, f, maxiter=50 * Emat.shape[1])
    r = Emat @ u - f
    if abs(r[-1]) < 1e-14:
        raise ValueError("polytope is empty")
    x = y - r[:d] / r[-1]
    return _polish_projection(A, b, y, x)


def _feasible_start(A, b, x, scale) -> np.ndarray:
    """Pull x back into the polytope along the segment to an LP-interior point."""
    if np.all(A @ x <= b + 1e-12 * scale):
        return x
    from scipy.optimize import linprog
    d = A.shape[1]
    c = np.zeros(d + 1)
    c[-1] = -1.0
    res = linprog(c, A_ub=np.hstack([A, np.ones((len(b), 1))]), b_ub=b,
                  bounds=[(None, None)] * d + [(0, scale)], method="highs")
    if res.status != 0:
        return x
    ctr = res.x[:d]
    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if np.all(A @ (ctr + mid * (x - ctr)) <= b + 1e-12 * scale):
            lo = mid
        else:
            hi = mid
    return ctr + lo * (x - ctr)


def _polish_projection(A, b, y, x, max_iter: int = 200) -> np.ndarray:
    """Primal active-set refinement of an approximate projection (NNLS loses digits when y is far)."""
    scale = max(1.0, float(np.abs(b).max(initial=0.0)), float(np.abs(y).max(initial=0.0)))
    z = _feasible_start(A, b, x, scale)
    if not np.all(A @ z <= b + 1e-9 * scale):
        return x
    eps = 1e-11 * scale
    W = list(np.flatnonzero(A @ z >= b - eps))
    for _ in range(max_iter):
        r = y - z
        if W:
            Aw = A[W]
            lam = np.linalg.lstsq(Aw.T, r, rcond=None)[0]
            p = r - Aw.T @ lam
        else:
            lam, p = np.zeros(0), r
        if np.linalg.norm(p) <= 1e-13 * scale:
            if lam.size == 0 or lam.min() >= -1e-12 * scale:
                return z
            W.pop(int(np.argmin(lam)))
            continue
        Ap = A @ p
        alpha, block = 1.0, None
        for k in np.flatnonzero(Ap > 1e-15):
            if k in W:
                continue
            t = max(0.0, (b[k] - A[k] @ z) / Ap[k])
            if t < alpha:
                alpha, block = t, k
        z = z + alpha * p
        if block is not None:
            W.append(int(block))
    return z


def vertex_hull_best_response(V: np.ndarray, target: np.ndarray, iters: int = 2000) -> np.ndarray:
    """argmin over conv(V) of |x - target|^2 by accelerated projected gradient on simplex weights."""
    from .pseudogame import _project_simplex
    K = V.shape[0]
    L = max(float(np.linalg.norm(V @ V.T, 2)), 1e-12)
    w = np.full(K, 1.0 / K)
    z, tk = w.copy(), 1.0
    for _ in range(iters):
        grad = V @ (z @ V - target)
        w_new = _project_simplex(z - grad / L)
        tk_new = (1.0 + math.sqrt(1.0 + 4.0 * tk * tk)) / 2.0
        z = w_new + (tk - 1.0) / tk_new * (w_new - w)
        w, tk = w_new, tk_new
    return w @ V


# --------------------------------------------------------------------------
# best responses, exploitability, equilibrium

@dataclass
class KyotoGeometry:
    """Instance data shared by the solvers: boxed halfspaces, vertices, affine maps."""
    inst: KyotoInstance
    A: np.ndarray
    b: np.ndarray
    box_cap: float
    g0: np.ndarray
    C: np.ndarray
    vertices: Optional[PolytopeVertices] = None

    @classmethod
    def build(cls, inst: KyotoInstance, box_cap: float | None = None,
              vertices: PolytopeVertices | None = None) -> "KyotoGeometry":
        A, b, box_cap = boxed_halfspaces(inst, box_cap)
        g0, C = affine_target(inst)
        return cls(inst, A, b, box_cap, g0, C, vertices)

    def target(self, x) -> np.ndarray:
        return self.g0 + self.C @ x

    def feasible(self, x, tol: float = 1e-9) -> bool:
        An, bn = _normalize_rows(self.A, self.b)
        return bool(np.all(An @ x <= bn + tol * max(1.0, self.box_cap)))

    def project(self, y) -> np.ndarray:
        return project_polytope(self.A, self.b, y)

    def slice_halfspaces(self, i: int, x):
        own = own_indices(self.inst.n, i)
        other = np.setdiff1d(np.arange(self.inst.dim), own)
        return self.A[:, own], self.b - self.A[:, other] @ x[other]

    def joint_best_response(self, x) -> np.ndarray:
        return self.project(self.target(x))

    def best_response(self, i: int, x) -> np.ndarray:
        A_i, b_i = self.slice_halfspaces(i, x)
        own = own_indices(self.inst.n, i)
        return project_polytope(A_i, b_i, self.target(x)[own])


def regrets_from_target(n: int, x, g, b) -> np.ndarray:
    """Per-country regret -|b_i|^2/2 + g_i.b_i + |x_i|^2/2 - g_i.x_i."""
    out = np.empty(n)
    for i in range(n):
        own = own_indices(n, i)
        bi = b[own] if b.shape[0] == x.shape[0] else b[i]
        out[i] = -0.5 * bi @ bi + g[own] @ bi + 0.5 * x[own] @ x[own] - g[own] @ x[own]
    return out


def kyoto_exploitability(geo: KyotoGeometry, x, mode: str = "joint") -> float:
    """Closed-form exploitability in the flat layout (round-off below 0 is clipped)."""
    x = np.asarray(x, dtype=np.float64)
    g = geo.target(x)
    n = geo.inst.n
    if mode == "joint":
        b = geo.project(g)
        return max(0.0, float(regrets_from_target(n, x, g, b).sum()))
    if mode == "individual":
        total = 0.0
        for i in range(n):
            own = own_indices(n, i)
            bi = geo.best_response(i, x)
            total += -0.5 * bi @ bi + g[own] @ bi + 0.5 * x[own] @ x[own] - g[own] @ x[own]
        return max(0.0, float(total))
    raise ValueError(f"unknown deviation mode {mode!r}")


def variational_equilibrium(geo: KyotoGeometry, tol: float = 1e-12, max_iter: int = 20_000,
                            x0=None) -> np.ndarray:
    """Unique VE by the projection method x <- P_X(x - tau F(x)), then an active-set polish."""
    M, q = np.eye(geo.inst.dim) - geo.C, -geo.g0
    sym = 0.5 * (M + M.T)
    mu = float(np.linalg.eigvalsh(sym).min())
    L = float(np.linalg.norm(M, 2))
    tau = mu / (L * L)
    x = geo.project(np.zeros(geo.inst.dim) if x0 is None else np.asarray(x0, dtype=np.float64))
    for _ in range(max_iter):
        x_new = geo.project(x - tau * (M @ x + q))
        if np.linalg.norm(x_new - x) <= tol * max(1.0, np.linalg.norm(x)):
            x = x_new
            break
        x = x_new
    return _polish_ve(geo, M, q, x)


def _polish_ve(geo: KyotoGeometry, M, q, x) -> np.ndarray:
    An, bn = _normalize_rows(geo.A, geo.b)
    slack = bn - An @ x
    act = np.flatnonzero(slack <= 1e-7 * max(1.0, geo.box_cap))
    d = x.size
    if act.size:
        # keep a linearly independent subset of the active rows
        _, r, piv = _qr_pivot(An[act].T)
        rank = int(np.sum(np.abs(np.diag(r)) > 1e-10)) if r.size else 0
        act = act[piv[:rank]]
    k = act.size
    K = np.zeros((d + k, d + k))
    K[:d, :d] = M
    K[:d, d:] = An[act].T
    K[d:, :d] = An[act]
    rhs = np.concatenate([-q, bn[act]])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        return x
    y, lam = sol[:d], sol[d:]
    if np.all(lam >= -1e-9) and np.all(An @ y <= bn + 1e-9 * max(1.0, geo.box_cap)):
        return y
    return x


def _qr_pivot(A):
    from scipy.linalg import qr
    return qr(A, pivoting=True, mode="economic")


def kyoto_pseudogame(inst: KyotoInstance, deviation_mode: str = "joint",
                     box_cap: float | None = None,
                     vertices: PolytopeVertices | None = None) -> PseudoGame:
    """Pseudo-game in the per-country layout (e_i, I_i1..I_in) for each country."""
    if deviation_mode not in ("joint", "individual"):
        raise ValueError(f"unknown deviation mode {deviation_mode!r}")
    geo = KyotoGeometry.build(inst, box_cap, vertices)
    n, d = inst.n, inst.dim
    Q, c = quadratic_forms(inst)
    An, bn = _normalize_rows(geo.A, geo.b)
    flat = lambda y: from_player_layout(n, y)
    player = lambda x: to_player_layout(n, x)

    def payoff(y, i):
        x = flat(y)
        return float(0.5 * x @ Q[i] @ x + c[i] @ x)

    def payoff_grad(y, i):
        x = flat(y)
        return player(Q[i] @ x + c[i])

    def constraints(y, i):
        return bn - An @ flat(y)

    def project(y):
        return player(geo.project(flat(y)))

    def best_response(i, y):
        x = flat(y)
        if deviation_mode == "joint":
            return player(geo.joint_best_response(x))[i * (n + 1):(i + 1) * (n + 1)]
        return geo.best_response(i, x)

    def project_deviation(i, b_i, y):
        x = flat(y)
        A_i, b_sl = geo.slice_halfspaces(i, x)
        return project_polytope(A_i, b_sl, b_i)

    def joint_best_response(y):
        return player(geo.joint_best_response(flat(y)))

    sampler = None
    if vertices is not None:
        V = vertices.vertices

        def sampler(rng):
            return player(rng.dirichlet(np.ones(V.shape[0])) @ V)

    game = PseudoGame([n + 1] * n, payoff, constraints, project, 0.0, geo.box_cap,
                      best_response=best_response if deviation_mode == "individual" else None,
                      joint_best_response=joint_best_response, project_deviation=project_deviation,
                      sampler=sampler, payoff_grad=payoff_grad,
                      name=f"kyoto-{deviation_mode}")
    game.geometry = geo
    return game


# --------------------------------------------------------------------------
# classification and sampling

REGION_LABELS = {0: "both-interior (Region 1)", 1: "one-at-cap (Region 2a-like)",
                 2: "both-at-cap (Region 4b-like)"}


def binding_flags(inst: KyotoInstance, x, tol: float = BIND_TOL) -> dict:
    n = inst.n
    act = KyotoAction.from_vector(n, x)
    cap_slack = inst.cap - (act.e - act.I @ inst.gamma)
    transfer_slack = act.e - inst.gamma * act.I.sum(0)
    off = act.I - np.diag(np.diag(act.I))
    return {
        "at_cap": (cap_slack <= tol).tolist(),
        "transfer_binding": (transfer_slack <= tol).tolist(),
        "cross_investment": bool(np.any(off > tol)),
        "cap_slack": cap_slack.tolist(),
        "transfer_slack": transfer_slack.tolist(),
    }


def classify_gne(inst: KyotoInstance, x, tol: float = BIND_TOL, with_cross: bool = False) -> str:
    flags = binding_flags(inst, x, tol)
    k = int(sum(flags["at_cap"]))
    if inst.n == 2:
        label = REGION_LABELS[k]
    elif k == 0:
        label = "all-interior"
    elif k == inst.n:
        label = "all-at-cap"
    else:
        label = f"{k}-at-cap"
    if with_cross:
        label += ", cross-investment" if flags["cross_investment"] else ", no cross-investment"
    return label


def sample_kyoto(n_countries: int, seed: int, damage_form: str = "plain") -> KyotoInstance:
    if n_countries < 1:
        raise ValueError("n_countries must be >= 1")
    rng = np.random.default_rng(seed)
    lo, hi = SAMPLE_RANGE
    rev, dmg, gamma, cap = rng.uniform(lo, hi, size=(4, n_countries))
    return KyotoInstance(rev, dmg, gamma, cap, seed, damage_form)


def beta_grid(points: int = 10, lo: float = SAMPLE_RANGE[0], hi: float = SAMPLE_RANGE[1]):
    """(points^2, 2) grid of revenue parameters, first coordinate slowest."""
    axis = np.linspace(lo, hi, points)
    return np.array([(b1, b2) for b1 in axis for b2 in axis])


def statics_instances(base: KyotoInstance, betas) -> list[KyotoInstance]:
    """Comparative statics: vary only the revenue parameters."""
    return [base.with_rev(bt) for bt in np.atleast_2d(betas)]


def sample_statics(base: KyotoInstance, count: int, seed: int) -> list[KyotoInstance]:
    rng = np.random.default_rng(seed)
    lo, hi = SAMPLE_RANGE
    return [KyotoInstance(rng.uniform(lo, hi, base.n), base.dmg.copy(), base.gamma.copy(),
                          base.cap.copy(), base.seed, base.damage_form) for _ in range(count)]


def mean_vertex_sample_exploitability(geo: KyotoGeometry, V: np.ndarray, n_samples: int,
                                      seed: int, mode: str = "joint") -> float:
    rng = np.random.default_rng(seed)
    W = rng.dirichlet(np.ones(V.shape[0]), size=n_samples)
    return float(np.mean([kyoto_exploitability(geo, w @ V, mode) for w in W]))
