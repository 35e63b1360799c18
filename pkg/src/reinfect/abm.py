"""Exact event-driven simulation of the finite population.

Every individual carries a piecewise-constant kernel path.  Infection
attempts arrive as a Poisson process of rate ``n * lambda_star``; the target
is drawn uniformly and the attempt succeeds with probability
``gamma_k(age) * F / lambda_star`` where ``F`` is the population-average
infectivity.  Path breakpoints sit in a heap so the aggregates stay current
between attempts without any O(n) work.
"""
from __future__ import annotations

import csv
import heapq
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, GridMismatch, InvariantViolation
from .grid import TrajectoryGrid, fmt
from .kernels import InitialLaw, KernelLaw

BLOCK = 4096
PATH_BATCH = 32
REBUILD_EVERY = 1_000_000
LOG_LIMIT = 5_000_000


@dataclass
class EventLog:
    """Infections in the order they happened."""

    t: list = field(default_factory=list)
    individual: list = field(default_factory=list)
    infection_count: list = field(default_factory=list)
    candidates: int = 0
    accepted: int = 0
    truncated: bool = False

    def __len__(self):
        return len(self.t)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "individual", "infection_count"])
            for row in zip(self.t, self.individual, self.infection_count):
                w.writerow([fmt(row[0]), row[1], row[2]])


@dataclass
class PopulationState:
    n: int
    law: KernelLaw
    lambda_star: float
    t: float
    infection_count: list
    last_infection: list        # time of the current path's origin; None for never infected
    bp: list                    # per individual: breakpoint ages of the active path
    lam: list
    gam: list
    idx: list                   # current interval of the active path
    eta_abs: np.ndarray          # absolute end of the current infectious period
    lam_cur: list
    gam_cur: list
    aggregate_F: float
    aggregate_S: float
    queue: list
    rng_events: np.random.Generator
    seed: int
    debug: bool = False
    _pending: dict = field(default_factory=dict, repr=False)

    def ages(self, t: float | None = None) -> np.ndarray:
        t = self.t if t is None else t
        return np.array([t - (0.0 if s is None else s) for s in self.last_infection])

    def recompute(self) -> tuple[float, float]:
        return math.fsum(self.lam_cur), math.fsum(self.gam_cur)

    def infectious_count(self, t: float, left: bool = True) -> int:
        if left and t > 0:
            return int(np.count_nonzero(self.eta_abs >= t))
        return int(np.count_nonzero(self.eta_abs > t))


def _seq(seed: int, key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(key,)))


def _enter(bp, t0, now):
    """Index of the interval holding age ``now - t0``."""
    i = 0
    last = len(bp) - 1
    while i < last and t0 + bp[i + 1] <= now:
        i += 1
    return i


def init_population(n: int, law: KernelLaw, init: InitialLaw, seed: int = 0,
                    debug: bool = False) -> PopulationState:
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ConfigError("population size must be a positive integer")
    n = int(n)
    batch, _ = init.sample_batch(_seq(seed, 1), n)
    bp = batch.bp.tolist()
    lam = batch.lam.tolist()
    gam = batch.gam.tolist()
    idx = [_enter(b, 0.0, 0.0) for b in bp]
    lam_cur = [lam[k][i] for k, i in enumerate(idx)]
    gam_cur = [gam[k][i] for k, i in enumerate(idx)]
    queue = []
    for k, (b, i) in enumerate(zip(bp, idx)):
        if i + 1 < len(b) and b[i + 1] != math.inf:
            queue.append((b[i + 1], k, 0))
    heapq.heapify(queue)
    state = PopulationState(
        n=n, law=law, lambda_star=float(law.lambda_star), t=0.0,
        infection_count=[0] * n, last_infection=[None] * n,
        bp=bp, lam=lam, gam=gam, idx=idx,
        eta_abs=np.asarray(batch.eta, float).copy(),
        lam_cur=lam_cur, gam_cur=gam_cur,
        aggregate_F=0.0, aggregate_S=0.0, queue=queue,
        rng_events=_seq(seed, 2), seed=int(seed), debug=debug)
    state.aggregate_F, state.aggregate_S = state.recompute()
    if state.aggregate_F > n * state.lambda_star * (1 + 1e-12):
        raise InvariantViolation("initial infectivity exceeds lambda_star")
    return state


def _path_stream(seed: int, k: int) -> np.random.Generator:
    """Counter-based stream owned by individual ``k``; its n-th draw is the n-th reinfection."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(3, k))))


def _next_path(state: PopulationState, k: int):
    slot = state._pending.get(k)
    if slot is None:
        slot = state._pending[k] = [_path_stream(state.seed, k), []]
    if not slot[1]:
        law = state.law
        b = law.paths_from_uniforms(slot[0].random((PATH_BATCH, law.n_uniforms)))
        rows = list(zip(b.bp.tolist(), b.lam.tolist(), b.gam.tolist(), b.eta.tolist()))
        rows.reverse()
        slot[1] = rows
    return slot[1].pop()


def _advance(state: PopulationState, k: int, time: float) -> None:
    """Move individual ``k`` to the interval in force at ``time``."""
    bp = state.bp[k]
    t0 = state.last_infection[k] or 0.0
    i = _enter(bp, t0, time)
    state.idx[k] = i
    nl, ng = state.lam[k][i], state.gam[k][i]
    state.aggregate_F += nl - state.lam_cur[k]
    state.aggregate_S += ng - state.gam_cur[k]
    state.lam_cur[k] = nl
    state.gam_cur[k] = ng
    if i + 1 < len(bp) and bp[i + 1] != math.inf:
        heapq.heappush(state.queue, (t0 + bp[i + 1], k, state.infection_count[k]))


def _flush(state: PopulationState, until: float, strict: bool) -> None:
    q = state.queue
    while q and (q[0][0] < until or (not strict and q[0][0] == until)):
        time, k, stamp = heapq.heappop(q)
        if stamp != state.infection_count[k]:
            continue
        _advance(state, k, time)


def _rebuild(state: PopulationState, check: bool) -> float:
    f, s = state.recompute()
    drift = abs(f - state.aggregate_F)
    if check and drift > 1e-9 * state.n * state.lambda_star:
        raise InvariantViolation(f"aggregate infectivity drifted by {drift:.3g}")
    state.aggregate_F, state.aggregate_S = f, s
    return drift


def run(state: PopulationState, T: float, grid_dt: float, log_limit: int = LOG_LIMIT
        ) -> tuple[TrajectoryGrid, EventLog]:
    """Simulate from the current clock up to ``T`` and sample on a ``grid_dt`` grid.

    Grid values are left limits: breakpoints and infections falling exactly on
    a grid time are applied after the sample is taken.
    """
    if not (T > 0 and grid_dt > 0):
        raise ConfigError("T and grid_dt must be positive")
    steps = int(round((T - state.t) / grid_dt))
    if steps < 0 or abs(state.t + steps * grid_dt - T) > 1e-9 * max(T, 1.0):
        raise ConfigError(f"T={T} is not on the grid of width {grid_dt} from t={state.t}")
    n = state.n
    lstar = state.lambda_star
    rate = n * lstar
    ev = state.rng_events
    log = EventLog()
    times = state.t + grid_dt * np.arange(steps + 1)
    out = np.empty((steps + 1, 4))
    i_count = np.empty(steps + 1, dtype=np.int64)
    max_drift = 0.0
    since_rebuild = 0

    t = state.t
    cand_t, cand_k, cand_u = [], [], []
    pos = 0
    for g in range(steps + 1):
        tg = float(times[g])
        while True:
            if pos == len(cand_t):
                gaps = ev.exponential(1.0 / rate, BLOCK) if rate > 0 else np.full(BLOCK, np.inf)
                cand_t = (t + np.cumsum(gaps)).tolist()
                cand_k = ev.integers(0, n, BLOCK).tolist()
                cand_u = ev.random(BLOCK).tolist()
                pos = 0
            tc = cand_t[pos]
            if tc >= tg:
                break
            k = cand_k[pos]
            u = cand_u[pos]
            pos += 1
            t = tc
            log.candidates += 1
            _flush(state, tc, strict=False)
            if state.aggregate_F <= 0.0:
                continue
            p = state.gam_cur[k] * state.aggregate_F / (n * lstar)
            if p > 1.0 + 1e-12:
                raise InvariantViolation(f"acceptance probability {p} exceeds 1 at t={tc}")
            if u >= p:
                continue
            # accepted: the target cannot be infectious (gamma vanishes there)
            assert tc >= state.eta_abs[k], "infection accepted during an infectious period"
            bp, lv, gv, eta = _next_path(state, k)
            c = state.infection_count[k] + 1
            state.infection_count[k] = c
            state.last_infection[k] = tc
            state.bp[k], state.lam[k], state.gam[k] = bp, lv, gv
            state.eta_abs[k] = tc + eta
            _advance(state, k, tc)
            log.accepted += 1
            if log.accepted <= log_limit:
                log.t.append(tc)
                log.individual.append(k)
                log.infection_count.append(c)
            else:
                log.truncated = True
            since_rebuild += 1
            if state.debug:
                max_drift = max(max_drift, _rebuild(state, check=True))
            elif since_rebuild >= REBUILD_EVERY:
                max_drift = max(max_drift, _rebuild(state, check=True))
                since_rebuild = 0
        # the sample is the left limit at tg
        _flush(state, tg, strict=True)
        max_drift = max(max_drift, _rebuild(state, check=True))
        since_rebuild = 0
        ic = state.infectious_count(tg, left=True)
        i_count[g] = ic
        out[g] = (state.aggregate_F / n, state.aggregate_S / n, ic / n, (n - ic) / n)
        t = max(t, tg)
    # rewind unused candidates: the clock restarts cleanly from T on the next call
    state.t = float(times[-1])
    _flush(state, state.t, strict=False)
    state.aggregate_F, state.aggregate_S = state.recompute()
    grid = TrajectoryGrid(grid_dt, times, out[:, 0].copy(), out[:, 1].copy(), out[:, 2].copy(),
                          out[:, 3].copy(),
                          meta={"n": n, "I_count": i_count, "U_count": n - i_count, "max_drift": max_drift,
                                "candidates": log.candidates, "infections": log.accepted})
    return grid, log


def simulate(law: KernelLaw, init: InitialLaw, n: int, T: float, grid_dt: float, seed: int = 0,
             **kw) -> tuple[TrajectoryGrid, EventLog]:
    return run(init_population(n, law, init, seed), T, grid_dt, **kw)


def coupling_distance(run_a: TrajectoryGrid, limit: TrajectoryGrid) -> float:
    """Sup over the grid of ``|F_N - F|`` and ``|I_N - I|``."""
    try:
        run_a.check_same_grid(limit)
    except GridMismatch:
        raise
    dF = np.max(np.abs(np.asarray(run_a.F_bar) - np.asarray(limit.F_bar)))
    dI = np.max(np.abs(np.asarray(run_a.I_bar) - np.asarray(limit.I_bar)))
    return float(max(dF, dI))


def coupling_bound(lambda_star: float, n: int, T: float) -> float:
    """``lambda_star / sqrt(n) * T * exp(2 lambda_star T)``."""
    return lambda_star / math.sqrt(n) * T * math.exp(2 * lambda_star * T)
