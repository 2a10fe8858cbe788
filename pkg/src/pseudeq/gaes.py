"""Generative adversarial equilibrium solver trained by stochastic exploitability descent.

A generator maps a game to a candidate equilibrium and a discriminator maps
(game, candidate) to deviations. The discriminator ascends the batch-mean
cumulative regret, the generator descends it. Problem adapters
(:class:`ExchangeProblem`, :class:`KyotoProblem`) supply the feasible-by-
construction network heads, the regret on the tape and exact evaluation.
"""
from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from . import exchange as ex
from . import kyoto as ky
from . import nn
from .autodiff import Tape
from .baselines import Trajectory
from .nn import MlpParams, OptState

log = logging.getLogger(__name__)

SCHEDULES = ("constant", "adam", "theorem1")
GRAD_MODES = ("pathwise", "stop_gradient")
MASK_LOGIT = -1e30


# --------------------------------------------------------------------------
# configuration and schedules

@dataclass
class TrainConfig:
    outer_iters: int = 2000
    inner_iters: int = 0
    warmup_iters: int = 0
    batch_size: int = 32
    lr_gen: float = 1e-3
    lr_disc: float = 1e-3
    schedule: str = "adam"
    pl_constant: Optional[float] = None
    grad_mode: str = "pathwise"
    seed: int = 0
    discriminator: str = "exact"     # "exact" | "learned"
    reset_disc: bool = False
    hidden: tuple = (64, 64)
    val_every: int = 100
    patience: int = 10
    n_norm_samples: int = 1000

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)

    def validate(self) -> None:
        if self.outer_iters < 1 or self.batch_size < 1:
            raise ValueError("outer_iters and batch_size must be >= 1")
        if self.inner_iters < 0 or self.warmup_iters < 0:
            raise ValueError("inner_iters and warmup_iters must be >= 0")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}")
        if self.schedule == "theorem1" and (self.pl_constant is None or self.pl_constant <= 0):
            raise ValueError("the theorem1 schedule needs a positive pl_constant")
        if self.grad_mode not in GRAD_MODES:
            raise ValueError(f"grad_mode must be one of {GRAD_MODES}")
        if self.discriminator not in ("exact", "learned"):
            raise ValueError("discriminator must be 'exact' or 'learned'")
        if self.val_every < 1:
            raise ValueError("val_every must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d) -> "TrainConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise ValueError(f"unknown config fields: {unknown}")
        return cls(**known)

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def theorem1_gen_lr(t):
    """Outer step size 1/sqrt(t), t >= 1."""
    if t < 1:
        raise ValueError("outer iteration index starts at 1")
    f = 1 / math.sqrt(t)
    # 1/sqrt rounds twice; step to the double nearest the exact value
    target = Fraction(1) / Fraction(t)            # compare squares: f^2 vs 1/t
    for _ in range(4):
        lo = (Fraction(math.nextafter(f, 0.0)) + Fraction(f)) / 2
        hi = (Fraction(f) + Fraction(math.nextafter(f, math.inf))) / 2
        if hi * hi < target:
            f = math.nextafter(f, math.inf)
        elif lo * lo > target:
            f = math.nextafter(f, 0.0)
        else:
            break
    return f


def theorem1_disc_lr(s, pl_constant):
    """Inner step size (2s + 1) / (pl (s + 1)^2); exact for Fraction inputs."""
    if s < 0:
        raise ValueError("inner iteration index starts at 0")
    return (2 * s + 1) / (pl_constant * (s + 1) ** 2)


def gen_lr(config: TrainConfig, t: int) -> float:
    return theorem1_gen_lr(t + 1) if config.schedule == "theorem1" else config.lr_gen


def disc_lr(config: TrainConfig, s: int) -> float:
    if config.schedule == "theorem1":
        return float(theorem1_disc_lr(s, config.pl_constant))
    return config.lr_disc


def _opt(config: TrainConfig) -> OptState:
    return OptState("adam" if config.schedule == "adam" else "sgd")


# --------------------------------------------------------------------------
# model

@dataclass
class GaesModel:
    kind: str                                    # "exchange" | "kyoto"
    generator: dict
    discriminator: Optional[dict] = None         # None means the exact oracle
    meta: dict = field(default_factory=dict)

    @property
    def exact(self) -> bool:
        return self.discriminator is None

    def copy(self) -> "GaesModel":
        return GaesModel(self.kind, {k: v.copy() for k, v in self.generator.items()},
                         None if self.discriminator is None else
                         {k: v.copy() for k, v in self.discriminator.items()},
                         copy.deepcopy(self.meta))

    def to_dict(self) -> dict:
        return {"kind": self.kind,
                "generator": {k: v.to_dict() for k, v in self.generator.items()},
                "discriminator": None if self.discriminator is None else
                {k: v.to_dict() for k, v in self.discriminator.items()},
                "meta": self.meta}

    @classmethod
    def from_dict(cls, d) -> "GaesModel":
        disc = d.get("discriminator")
        return cls(d["kind"], {k: MlpParams.from_dict(v) for k, v in d["generator"].items()},
                   None if disc is None else {k: MlpParams.from_dict(v) for k, v in disc.items()},
                   d.get("meta", {}))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "GaesModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# --------------------------------------------------------------------------
# exchange economies

def _buyer_features(batch: ex.EconomyBatch, idx, p) -> tuple:
    """Per-buyer features and budgets at prices ``p`` (Tensor (B, m))."""
    V, E, rho = batch.V[idx], batch.E[idx], batch.rho[idx]
    B, n, m = V.shape
    P = ad.reshape(p, (B, 1, m))
    budgets = ad.tsum(P * E, axis=-1)                       # (B, n)
    ratio = (1.0 / P) * V
    bang = ratio / ad.amax(ratio, axis=-1, keepdims=True)
    vp = P * V
    lshare = vp / ad.tsum(vp, axis=-1, keepdims=True)
    Pb = ad.broadcast_to(P, (B, n, m))
    feats = ad.concat([
        p.tape.const(np.broadcast_to(V / V.sum(-1, keepdims=True), (B, n, m))),
        bang, lshare, Pb * float(m), ad.log(Pb),
        p.tape.const(rho[..., None]), ad.reshape(budgets, (B, n, 1)),
    ], axis=-1)
    return feats, budgets


def buyer_feature_dim(m: int) -> int:
    return 5 * m + 2


def _floor_prices(p):
    m = p.shape[-1]
    return p * (1.0 - m * ex.PRICE_FLOOR) + ex.PRICE_FLOOR


def _allocate(shares, budgets, p):
    B, n, m = shares.shape
    return shares * ad.reshape(budgets, (B, n, 1)) / ad.reshape(p, (B, 1, m))


def init_exchange_model(n: int, m: int, family: str, config: TrainConfig,
                        rng: np.random.Generator) -> GaesModel:
    h = list(config.hidden)
    in_price = 2 * n * m + n
    gen = {"price": nn.init_mlp([in_price] + h + [m], rng, out_act="softmax"),
           "alloc": nn.init_mlp([buyer_feature_dim(m)] + h + [m], rng, out_act="softmax")}
    disc = None
    if config.discriminator == "learned":
        disc = {"alloc": nn.init_mlp([buyer_feature_dim(m) + m] + h + [m], rng, out_act="softmax")}
    return GaesModel("exchange", gen, disc, {"n": n, "m": m, "family": ex.canonical_family(family)})


class ExchangeProblem:
    """Training/evaluation adapter for a dataset of same-family, same-size economies."""

    def __init__(self, economies: Sequence[ex.ExchangeEconomy], n_norm_samples: int = 1000,
                 norm_seed: int = 0):
        if not economies:
            raise ValueError("empty dataset")
        self.economies = list(economies)
        self.batch = ex.EconomyBatch.from_economies(self.economies)
        self.n_norm_samples = n_norm_samples
        self.norm_seed = norm_seed
        self._denoms = None

    def __len__(self):
        return len(self.economies)

    @property
    def dims(self):
        return self.batch.V.shape[1:]

    def init_model(self, config: TrainConfig, rng) -> GaesModel:
        n, m = self.dims
        return init_exchange_model(n, m, self.batch.family, config, rng)

    def check_model(self, model: GaesModel) -> None:
        n, m = self.dims
        if model.kind != "exchange" or model.meta.get("n") != n or model.meta.get("m") != m:
            raise ValueError(f"model dims {model.meta} do not match economies ({n}x{m})")

    def generate(self, model: GaesModel, idx, tape: Tape):
        feats = self.batch.features()[idx]
        p = _floor_prices(nn.forward(model.generator["price"], feats, tape))
        bf, budgets = _buyer_features(self.batch, idx, p)
        shares = nn.forward(model.generator["alloc"], bf, tape)
        return p, _allocate(shares, budgets, p)

    def random_profiles(self, idx, rng, tape: Tape):
        E = self.batch.E[idx]
        B, n, m = E.shape
        p = rng.exponential(size=(B, m))
        p = ex.normalize_prices(p / p.sum(-1, keepdims=True))
        s = rng.uniform(size=(B, n, m))
        s = s / s.sum(-1, keepdims=True)
        return tape.const(p), tape.const(s * ex.allocation_coefficients(E, p))

    def deviate(self, model: GaesModel, idx, gen, tape: Tape, pathwise: bool):
        p, X = gen
        if not pathwise:
            p, X = p.detach(), X.detach()
        b = self.batch
        q = ex.seller_best_response_batch(b.E[idx], X.value)
        if model.exact:
            budgets = ad.tsum(ad.reshape(p, (p.shape[0], 1, p.shape[1])) * b.E[idx], axis=-1)
            Y = ex.ad_demands(b.family, b.V[idx], b.rho[idx], p, budgets)
            return q, Y
        bf, budgets = _buyer_features(b, idx, p)
        spend = X * ad.reshape(p, (p.shape[0], 1, p.shape[1])) / ad.reshape(budgets, budgets.shape + (1,))
        shares = nn.forward(model.discriminator["alloc"], ad.concat([bf, spend], axis=-1), tape)
        return q, _allocate(shares, budgets, p)

    def psi(self, idx, gen, dev):
        p, X = gen
        q, Y = dev
        return ex.ad_cumulative_regret(self.batch.take(idx), p, X, q, Y)

    # evaluation
    def outcomes(self, model: GaesModel, idx=None):
        idx = np.arange(len(self)) if idx is None else idx
        tape = Tape(check_finite=False)
        with np.errstate(all="ignore"):
            p, X = self.generate(model, idx, tape)
        if not (np.all(np.isfinite(p.value)) and np.all(np.isfinite(X.value))):
            raise FloatingPointError("generator produced non-finite outcomes")
        return p.value, X.value

    def exploitability(self, model: GaesModel, idx=None) -> np.ndarray:
        idx = np.arange(len(self)) if idx is None else np.asarray(idx)
        P, X = self.outcomes(model, idx)
        return np.array([ex.outcome_exploitability(self.economies[k], P[j], X[j])
                         for j, k in enumerate(idx)])

    def denominators(self) -> np.ndarray:
        if self._denoms is None:
            self._denoms = np.array([
                ex.mean_uniform_exploitability(e, self.n_norm_samples, self.norm_seed + k)
                for k, e in enumerate(self.economies)])
        return self._denoms

    def learned_regret(self, model: GaesModel, P, X) -> np.ndarray:
        """Cumulative regret of the learned discriminator's deviation at given outcomes."""
        tape = Tape(check_finite=False)
        idx = np.arange(len(self))
        gen = (tape.const(P), tape.const(X))
        dev = self.deviate(model, idx, gen, tape, pathwise=False)
        return self.psi(idx, gen, dev).value


# --------------------------------------------------------------------------
# Kyoto

class KyotoProblem:
    """Adapter for Kyoto instances; heads are softmax weights over padded vertices."""

    def __init__(self, instances: Sequence[ky.KyotoInstance], n_norm_samples: int = 1000,
                 norm_seed: int = 0, vertex_cache: Optional[dict] = None):
        if not instances:
            raise ValueError("empty dataset")
        self.instances = list(instances)
        n = self.instances[0].n
        if any(inst.n != n for inst in self.instances):
            raise ValueError("all instances must have the same number of countries")
        self.n, self.d = n, n * (n + 1)
        cache = {} if vertex_cache is None else vertex_cache
        polys = []
        for inst in self.instances:
            key = (tuple(inst.gamma), tuple(inst.cap))
            if key not in cache:
                cache[key] = ky.kyoto_vertices(inst)
            polys.append(cache[key])
        self.polys = polys
        K = max(len(pv.vertices) for pv in polys)
        N = len(self.instances)
        self.V = np.zeros((N, K, self.d))
        self.mask = np.full((N, K), MASK_LOGIT)
        for k, pv in enumerate(polys):
            self.V[k, :len(pv.vertices)] = pv.vertices
            self.mask[k, :len(pv.vertices)] = 0.0
        self.K = K
        self.geos = [ky.KyotoGeometry.build(inst, pv.box_cap, pv) for inst, pv in zip(self.instances, polys)]
        self.Q = ky.quadratic_forms(self.instances[0])[0]
        self.c = np.stack([ky.quadratic_forms(inst)[1] for inst in self.instances])
        self.own_masks = np.zeros((n, self.d))
        for i in range(n):
            self.own_masks[i, ky.own_indices(n, i)] = 1.0
        self.feats = np.stack([inst.features() for inst in self.instances])
        self.scale = np.array([pv.box_cap for pv in polys])
        self.n_norm_samples = n_norm_samples
        self.norm_seed = norm_seed
        self._denoms = None

    def __len__(self):
        return len(self.instances)

    def init_model(self, config: TrainConfig, rng) -> GaesModel:
        h = list(config.hidden)
        gen = {"weights": nn.init_mlp([self.feats.shape[1]] + h + [self.K], rng, out_act="identity")}
        disc = None
        if config.discriminator == "learned":
            disc = {"weights": nn.init_mlp([self.feats.shape[1] + self.d] + h + [self.K], rng,
                                           out_act="identity")}
        return GaesModel("kyoto", gen, disc, {"n": self.n, "K": self.K})

    def check_model(self, model: GaesModel) -> None:
        if model.kind != "kyoto" or model.meta.get("n") != self.n or model.meta.get("K") != self.K:
            raise ValueError(f"model {model.meta} does not match instances (n={self.n}, K={self.K})")

    def _combine(self, logits, idx):
        w = ad.softmax(logits + self.mask[idx], axis=-1)
        B = w.shape[0]
        return ad.reshape(ad.matmul(ad.reshape(w, (B, 1, self.K)), self.V[idx]), (B, self.d))

    def generate(self, model: GaesModel, idx, tape: Tape):
        return self._combine(nn.forward(model.generator["weights"], self.feats[idx], tape), idx)

    def random_profiles(self, idx, rng, tape: Tape):
        out = np.empty((len(idx), self.d))
        for j, k in enumerate(idx):
            nv = len(self.polys[k].vertices)
            out[j] = rng.dirichlet(np.ones(nv)) @ self.polys[k].vertices
        return tape.const(out)

    def deviate(self, model: GaesModel, idx, x, tape: Tape, pathwise: bool):
        if model.exact:
            # joint deviations range over a set that does not depend on x, so the
            # attained best response can be held fixed (envelope theorem)
            return tape.const(np.stack([self.geos[k].joint_best_response(x.value[j])
                                        for j, k in enumerate(idx)]))
        if not pathwise:
            x = x.detach()
        inp = ad.concat([tape.const(self.feats[idx]), x / self.scale[idx][:, None]], axis=-1)
        return self._combine(nn.forward(model.discriminator["weights"], inp, tape), idx)

    def _utility(self, i, x, idx):
        quad = ad.tsum(ad.matmul(x, self.Q[i]) * x, axis=-1) * 0.5
        return quad + ad.tsum(x * self.c[idx, i, :], axis=-1)

    def psi(self, idx, x, b):
        total = None
        for i in range(self.n):
            m = self.own_masks[i]
            z = x * (1.0 - m) + b * m
            term = self._utility(i, z, idx) - self._utility(i, x, idx)
            total = term if total is None else total + term
        return total

    def outcomes(self, model: GaesModel, idx=None) -> np.ndarray:
        idx = np.arange(len(self)) if idx is None else idx
        with np.errstate(all="ignore"):
            x = self.generate(model, idx, Tape(check_finite=False)).value
        if not np.all(np.isfinite(x)):
            raise FloatingPointError("generator produced non-finite actions")
        return x

    def exploitability(self, model: GaesModel, idx=None) -> np.ndarray:
        idx = np.arange(len(self)) if idx is None else np.asarray(idx)
        X = self.outcomes(model, idx)
        return np.array([ky.kyoto_exploitability(self.geos[k], X[j]) for j, k in enumerate(idx)])

    def denominators(self) -> np.ndarray:
        if self._denoms is None:
            self._denoms = np.array([
                ky.mean_vertex_sample_exploitability(g, g.vertices.vertices, self.n_norm_samples,
                                                     self.norm_seed + k)
                for k, g in enumerate(self.geos)])
        return self._denoms


# --------------------------------------------------------------------------
# training loop

@dataclass
class TrainState:
    model: GaesModel
    gen_opt: OptState
    disc_opt: OptState
    disc_init: Optional[dict]
    t: int = 0
    warm_done: int = 0
    best_model: Optional[GaesModel] = None
    best_val: float = math.inf
    stagnant: int = 0
    stopped: str = ""
    aborted_at: Optional[int] = None
    trajectory: Trajectory = field(default_factory=Trajectory)
    normalized: list = field(default_factory=list)

    def to_dict(self) -> dict:
        tr = self.trajectory
        return {"model": self.model.to_dict(), "gen_opt": self.gen_opt.to_dict(),
                "disc_opt": self.disc_opt.to_dict(),
                "disc_init": None if self.disc_init is None else
                {k: v.to_dict() for k, v in self.disc_init.items()},
                "t": self.t, "warm_done": self.warm_done,
                "best_model": None if self.best_model is None else self.best_model.to_dict(),
                "best_val": self.best_val if math.isfinite(self.best_val) else None,
                "stagnant": self.stagnant, "stopped": self.stopped, "aborted_at": self.aborted_at,
                "trajectory": tr.rows(), "normalized": self.normalized}

    @classmethod
    def from_dict(cls, d) -> "TrainState":
        tr = Trajectory()
        for it, phi, psi, ms in d["trajectory"]:
            tr.record(it, phi, psi, ms)
        return cls(GaesModel.from_dict(d["model"]), OptState.from_dict(d["gen_opt"]),
                   OptState.from_dict(d["disc_opt"]),
                   None if d["disc_init"] is None else
                   {k: MlpParams.from_dict(v) for k, v in d["disc_init"].items()},
                   d["t"], d["warm_done"],
                   None if d["best_model"] is None else GaesModel.from_dict(d["best_model"]),
                   math.inf if d["best_val"] is None else d["best_val"],
                   d["stagnant"], d["stopped"], d["aborted_at"], tr, list(d["normalized"]))


@dataclass
class TrainResult:
    model: GaesModel
    trajectory: Trajectory
    best_model: GaesModel
    state: TrainState

    def __iter__(self):
        return iter((self.model, self.trajectory))


def _batch(n_items: int, size: int, seed, *tags) -> np.ndarray:
    rng = np.random.default_rng([int(seed), *tags])
    return rng.choice(n_items, size=size, replace=size > n_items)


def _const_on(tape: Tape, gen):
    if isinstance(gen, tuple):
        return tuple(tape.const(g.value) for g in gen)
    return tape.const(gen.value)


def _disc_ascent(problem, model, config, idx, gen, lr, state) -> GaesModel:
    tape = Tape()
    gen = _const_on(tape, gen)
    dev = problem.deviate(model, idx, gen, tape, pathwise=False)
    loss = ad.mean(problem.psi(idx, gen, dev))
    grads = ad.backward(tape, loss)
    g = nn.tree_grads(model.discriminator, tape, grads)
    new = nn.step(model.discriminator, g, state.disc_opt, lr, ascent=True)
    return GaesModel(model.kind, model.generator, new, model.meta)


def _gen_descent(problem, model, config, idx, lr, state):
    tape = Tape()
    gen = problem.generate(model, idx, tape)
    dev = problem.deviate(model, idx, gen, tape, pathwise=config.grad_mode == "pathwise")
    loss = ad.mean(problem.psi(idx, gen, dev))
    grads = ad.backward(tape, loss)
    g = nn.tree_grads(model.generator, tape, grads)
    new = nn.step(model.generator, g, state.gen_opt, lr)
    return GaesModel(model.kind, new, model.discriminator, model.meta), float(loss.value)


def generator_gradient(problem, model: GaesModel, idx, grad_mode: str = "pathwise"):
    """Flat generator gradient of the batch-mean cumulative regret (for diagnostics)."""
    tape = Tape()
    gen = problem.generate(model, idx, tape)
    dev = problem.deviate(model, idx, gen, tape, pathwise=grad_mode == "pathwise")
    loss = ad.mean(problem.psi(idx, gen, dev))
    grads = ad.backward(tape, loss)
    return np.concatenate([g.ravel() for g in nn.tree_grads(model.generator, tape, grads)])


def validate_model(problem, model: GaesModel) -> tuple[float, float]:
    phi = problem.exploitability(model)
    return float(phi.mean()), float(np.mean(phi / problem.denominators()))


def gaes_train(problem, model: Optional[GaesModel], config: TrainConfig, valid=None,
               state: Optional[TrainState] = None, stop_at: Optional[int] = None,
               timing: bool = True) -> TrainResult:
    """Stochastic exploitability descent with warm-up, validation, early stopping and resumable state.

    ``stop_at`` interrupts after that many outer iterations (for checkpointing);
    passing the returned state back resumes the identical trajectory.
    """
    config.validate()
    valid = problem if valid is None else valid
    if state is None:
        if model is None:
            model = problem.init_model(config, np.random.default_rng([config.seed, 0]))
        problem.check_model(model)
        if config.discriminator == "learned" and model.exact:
            raise ValueError("config asks for a learned discriminator but the model has none")
        disc_init = None if model.exact else {k: v.copy() for k, v in model.discriminator.items()}
        state = TrainState(model.copy(), _opt(config), _opt(config), disc_init)
    t0 = time.perf_counter()
    clock = (lambda: (time.perf_counter() - t0) * 1e3) if timing else (lambda: 0.0)
    N = len(problem)
    B = config.batch_size
    learned = not state.model.exact
    last_loss = math.nan
    try:
        if learned:
            while state.warm_done < config.warmup_iters:
                w = state.warm_done
                idx = _batch(N, B, config.seed, 1, w)
                tape = Tape()
                gen = problem.random_profiles(idx, np.random.default_rng([config.seed, 4, w]), tape)
                state.model = _disc_ascent(problem, state.model, config, idx, gen,
                                           disc_lr(config, w), state)
                state.warm_done += 1
        end = config.outer_iters if stop_at is None else min(stop_at, config.outer_iters)
        while state.t < end and not state.stopped:
            t = state.t
            if learned:
                if config.reset_disc:
                    state.model = GaesModel(state.model.kind, state.model.generator,
                                            {k: v.copy() for k, v in state.disc_init.items()},
                                            state.model.meta)
                    state.disc_opt = _opt(config)
                for s in range(config.inner_iters):
                    idx = _batch(N, B, config.seed, 2, t, s)
                    tape = Tape()
                    gen = problem.generate(state.model, idx, tape)
                    state.model = _disc_ascent(problem, state.model, config, idx, gen,
                                               disc_lr(config, s), state)
            idx = _batch(N, B, config.seed, 3, t)
            state.model, last_loss = _gen_descent(problem, state.model, config, idx,
                                                  gen_lr(config, t), state)
            state.t += 1
            if state.t % config.val_every == 0 or state.t == config.outer_iters:
                mean_phi, mean_norm = validate_model(valid, state.model)
                state.trajectory.record(state.t, mean_phi, last_loss, clock())
                state.normalized.append(mean_norm)
                if mean_norm < state.best_val:
                    state.best_val, state.best_model, state.stagnant = mean_norm, state.model.copy(), 0
                else:
                    state.stagnant += 1
                    if state.stagnant >= config.patience:
                        state.stopped = "early stop"
    except (ad.NonFiniteError, nn.NonFiniteGradient, FloatingPointError) as err:
        state.aborted_at = state.t
        state.stopped = f"numerical abort at iteration {state.t}: {err}"
        log.warning(state.stopped)
        good = state.best_model if state.best_model is not None else state.model
        state.model = good.copy()
    best = state.best_model if state.best_model is not None else state.model
    return TrainResult(state.model, state.trajectory, best, state)


def gaes_train_kyoto(dataset: Sequence[ky.KyotoInstance], model: Optional[GaesModel],
                     config: TrainConfig, valid: Optional[Sequence[ky.KyotoInstance]] = None,
                     **kw) -> TrainResult:
    cache: dict = {}
    problem = KyotoProblem(dataset, config.n_norm_samples, vertex_cache=cache)
    vproblem = None if valid is None else KyotoProblem(valid, config.n_norm_samples,
                                                       vertex_cache=cache)
    if vproblem is not None and vproblem.K != problem.K:
        raise ValueError("validation instances need the same vertex padding as training")
    return gaes_train(problem, model, config, vproblem, **kw)


# --------------------------------------------------------------------------
# single-economy wrappers

def generator_forward_exchange(model: GaesModel, economy: ex.ExchangeEconomy) -> ex.MarketOutcome:
    prob = ExchangeProblem([economy])
    prob.check_model(model)
    P, X = prob.outcomes(model)
    return ex.MarketOutcome(P[0], X[0])


def discriminator_forward_exchange(model: GaesModel, economy: ex.ExchangeEconomy,
                                   outcome: ex.MarketOutcome) -> ex.MarketOutcome:
    """Deviation profile: seller price one-hot, buyer bundles (exact or learned)."""
    prob = ExchangeProblem([economy])
    prob.check_model(model)
    tape = Tape(check_finite=False)
    gen = (tape.const(outcome.prices[None]), tape.const(outcome.X[None]))
    q, Y = prob.deviate(model, np.array([0]), gen, tape, pathwise=False)
    Y = Y.value if isinstance(Y, ad.Tensor) else Y
    return ex.MarketOutcome(q[0], Y[0])


def eval_generalization_gap(model: GaesModel, train_set: Sequence[ex.ExchangeEconomy],
                            test_set: Sequence[ex.ExchangeEconomy]) -> tuple[float, float, float]:
    """Batch-mean cumulative regret under exact deviations on each set, and the gap."""
    tr = float(ExchangeProblem(train_set).exploitability(model).mean())
    te = float(ExchangeProblem(test_set).exploitability(model).mean())
    return tr, te, abs(tr - te)
