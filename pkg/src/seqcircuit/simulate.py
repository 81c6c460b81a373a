"""Cycle-accurate stochastic simulation of sequential netlists.

Each primary input is driven by an independent stationary two-state Markov
chain parameterized by its logic-1 probability ``p1`` and transition
probability ``ptr``.  Patterns restart FF state and draw cycle-0 input bits
from the stationary distribution, so patterns are i.i.d.; statistics are
aggregated over all (pattern, cycle) evaluations.
"""
from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .circuit import CircuitGraph, NodeKind
from .schedule import levelize

TRACE_MAGIC = b"SQTR"
PI_STREAM = 0
FAULT_STREAM = 1


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class Workload:
    """Per-PI stimulus parameters: node id -> (p1, ptr)."""

    pi_probs: dict[int, tuple[float, float]]

    def check(self, g: CircuitGraph):
        missing = [p for p in g.workload_pis() if p not in self.pi_probs]
        if missing:
            raise SimulationError(f"workload missing PIs {missing}")
        for p1, ptr in self.pi_probs.values():
            markov_params(p1, ptr)

    @classmethod
    def random(cls, g: CircuitGraph, seed: int,
               p1_range=(0.15, 0.85), ptr_frac_range=(0.1, 0.9)) -> "Workload":
        """Feasible workload with ptr drawn as a fraction of its upper bound."""
        rng = np.random.default_rng([int(seed), 0x776C])
        probs = {}
        for pi in g.workload_pis():
            p1 = float(rng.uniform(*p1_range))
            frac = float(rng.uniform(*ptr_frac_range))
            probs[pi] = (p1, frac * 2.0 * min(p1, 1.0 - p1))
        return cls(probs)

    def to_json_dict(self):
        return {str(k): [v[0], v[1]] for k, v in sorted(self.pi_probs.items())}

    @classmethod
    def from_json_dict(cls, d):
        return cls({int(k): (float(v[0]), float(v[1])) for k, v in d.items()})


@dataclass(frozen=True)
class SimConfig:
    n_patterns: int = 1000
    n_cycles: int = 100
    seed: int = 0

    def check(self):
        if self.n_patterns < 1 or self.n_cycles < 2:
            raise SimulationError("need n_patterns >= 1 and n_cycles >= 2")


@dataclass
class SimStats:
    """Aggregated per-node statistics (and per-FF traces when simulated)."""

    p1: np.ndarray
    ptr: np.ndarray
    n_patterns: int
    n_cycles: int
    p1_counts: np.ndarray | None = None
    tr_counts: np.ndarray | None = None
    traces: dict[int, np.ndarray] = field(default_factory=dict)
    pattern_p1_counts: np.ndarray | None = None
    pattern_tr_counts: np.ndarray | None = None

    def to_json_dict(self, g: CircuitGraph | None = None):
        names = g.id_to_name if g is not None else {}
        return {
            "n_patterns": self.n_patterns,
            "n_cycles": self.n_cycles,
            "nodes": [
                {"id": i, **({"name": names[i]} if i in names else {}),
                 "p1": float(self.p1[i]), "ptr": float(self.ptr[i])}
                for i in range(len(self.p1))
            ],
        }


def markov_params(p1: float, ptr: float) -> tuple[float, float]:
    """Rates (a, b) = (P(0->1), P(1->0)) of the stationary chain for (p1, ptr).

    Stationarity forces a*(1-p1) = b*p1 and the per-cycle change probability
    2*a*(1-p1) must equal ptr, so feasibility requires
    ptr <= 2*min(p1, 1-p1).
    """
    if not (0.0 <= p1 <= 1.0 and 0.0 <= ptr <= 1.0):
        raise SimulationError(f"probabilities outside [0,1]: p1={p1}, ptr={ptr}")
    if p1 in (0.0, 1.0):
        if ptr > 1e-12:
            raise SimulationError(f"constant input cannot toggle: p1={p1}, ptr={ptr}")
        return (0.0, 0.0)
    if ptr > 2.0 * min(p1, 1.0 - p1) + 1e-12:
        raise SimulationError(f"infeasible workload: ptr={ptr} > 2*min(p1, 1-p1)"
                              f" for p1={p1}")
    return (ptr / (2.0 * (1.0 - p1)), ptr / (2.0 * p1))


def pattern_uniforms(seed: int, pattern: int, stream: int, shape):
    """Counter-style RNG: one independent stream per (pattern, stream) pair."""
    return np.random.default_rng([seed, pattern, stream]).random(shape)


def compiled_order(g: CircuitGraph):
    """Gate evaluation order (levelized) plus the FF list."""
    plan = levelize(g)
    gates = [v for lvl in plan.levels[1:] for v in lvl
             if g.kinds[v] in (NodeKind.AND, NodeKind.NOT)]
    return gates, g.ffs


def eval_gates(g: CircuitGraph, gates, vals):
    """Evaluate combinational nodes in place; ``vals`` is (n_nodes, width) bool."""
    for v in gates:
        fi = g.fanins[v]
        if g.kinds[v] == NodeKind.AND:
            np.logical_and(vals[fi[0]], vals[fi[1]], out=vals[v])
        else:
            np.logical_not(vals[fi[0]], out=vals[v])


def pi_rate_arrays(g: CircuitGraph, w: Workload):
    wl_pis = g.workload_pis()
    a = np.array([markov_params(*w.pi_probs[pi])[0] for pi in wl_pis])
    b = np.array([markov_params(*w.pi_probs[pi])[1] for pi in wl_pis])
    p1 = np.array([w.pi_probs[pi][0] for pi in wl_pis])
    return wl_pis, a, b, p1


def advance_pis(pi_state, u, a, b, p1, first_cycle):
    if first_cycle:
        return u < p1[:, None]
    return np.where(pi_state, u >= b[:, None], u < a[:, None])


def pattern_chunks(n_patterns: int, chunk: int = 250):
    return [(lo, min(lo + chunk, n_patterns)) for lo in range(0, n_patterns, chunk)]


def _simulate_chunk(g, gates, ffs, wl_pis, a, b, p1_arr, cfg, lo, hi,
                    keep_pattern_counts):
    n = g.n
    P = hi - lo
    T = cfg.n_cycles
    k = len(wl_pis)
    U = (np.stack([pattern_uniforms(cfg.seed, p, PI_STREAM, (T, k))
                   for p in range(lo, hi)])
         if k else np.zeros((P, T, 0)))

    vals = np.zeros((n, P), dtype=bool)
    prev = np.zeros((n, P), dtype=bool)
    state = np.zeros((len(ffs), P), dtype=bool)
    for j, ff in enumerate(ffs):
        if g.reset_value(ff):
            state[j, :] = True

    p1c = np.zeros(n, dtype=np.int64)
    trc = np.zeros(n, dtype=np.int64)
    pp1 = np.zeros((n, P), dtype=np.int32) if keep_pattern_counts else None
    ptr_pp = np.zeros((n, P), dtype=np.int32) if keep_pattern_counts else None
    traces = {ff: np.zeros((P, T), dtype=bool) for ff in ffs}

    pi_state = np.zeros((k, P), dtype=bool)
    for t in range(T):
        pi_state = advance_pis(pi_state, U[:, t, :].T, a, b, p1_arr, t == 0)
        for j, pi in enumerate(wl_pis):
            vals[pi] = pi_state[j]
        if g.const_id is not None:
            vals[g.const_id] = False
        for j, ff in enumerate(ffs):
            vals[ff] = state[j]
            traces[ff][:, t] = state[j]
        eval_gates(g, gates, vals)

        p1c += vals.sum(axis=1)
        if keep_pattern_counts:
            pp1 += vals
        if t > 0:
            changed = vals != prev
            trc += changed.sum(axis=1)
            if keep_pattern_counts:
                ptr_pp += changed
        prev, vals = vals, prev
        for j, ff in enumerate(ffs):
            state[j] = prev[g.fanins[ff][0]]

    out = {"p1c": p1c, "trc": trc, "traces": traces, "lo": lo}
    if keep_pattern_counts:
        out["pp1"] = pp1
        out["ptr_pp"] = ptr_pp
    return out


def simulate(g: CircuitGraph, w: Workload, cfg: SimConfig = SimConfig(),
             workers: int = 1, keep_pattern_counts: bool = False) -> SimStats:
    """Monte Carlo statistics under the workload; bit-deterministic in the seed.

    Chunk boundaries are fixed, counters are integers, and every pattern has
    its own RNG stream, so results do not depend on ``workers``.
    """
    cfg.check()
    w.check(g)
    gates, ffs = compiled_order(g)
    wl_pis, a, b, p1_arr = pi_rate_arrays(g, w)

    parts = pattern_chunks(cfg.n_patterns)

    def run(part):
        return _simulate_chunk(g, gates, ffs, wl_pis, a, b, p1_arr, cfg,
                               part[0], part[1], keep_pattern_counts)

    if workers > 1 and len(parts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, parts))
    else:
        results = [run(p) for p in parts]

    n = g.n
    p1c = np.zeros(n, dtype=np.int64)
    trc = np.zeros(n, dtype=np.int64)
    traces = {ff: np.zeros((cfg.n_patterns, cfg.n_cycles), dtype=bool) for ff in ffs}
    pp1 = (np.zeros((n, cfg.n_patterns), dtype=np.int32)
           if keep_pattern_counts else None)
    ptr_pp = (np.zeros((n, cfg.n_patterns), dtype=np.int32)
              if keep_pattern_counts else None)
    for res in results:
        p1c += res["p1c"]
        trc += res["trc"]
        lo = res["lo"]
        for ff, mat in res["traces"].items():
            traces[ff][lo:lo + mat.shape[0]] = mat
        if keep_pattern_counts:
            pp1[:, lo:lo + res["pp1"].shape[1]] = res["pp1"]
            ptr_pp[:, lo:lo + res["ptr_pp"].shape[1]] = res["ptr_pp"]

    total = cfg.n_patterns * cfg.n_cycles
    total_tr = cfg.n_patterns * (cfg.n_cycles - 1)
    return SimStats(p1=p1c / total, ptr=trc / total_tr,
                    n_patterns=cfg.n_patterns, n_cycles=cfg.n_cycles,
                    p1_counts=p1c, tr_counts=trc, traces=traces,
                    pattern_p1_counts=pp1, pattern_tr_counts=ptr_pp)


# --- exhaustive oracle ------------------------------------------------------

MAX_ORACLE_PIS = 12
MAX_ORACLE_FFS = 8


def _enumerate_truth(g: CircuitGraph, wl_pis, ffs):
    """Boolean value of every node over all joint (PI bits, FF bits) assignments.

    Assignment index layout: PI i contributes bit i, FF j contributes bit
    (n_pis + j); so flat index = x + X * s with X = 2**n_pis.
    """
    gates, _ = compiled_order(g)
    kx = len(wl_pis)
    size = 1 << (kx + len(ffs))
    idx = np.arange(size)
    vals = np.zeros((g.n, size), dtype=bool)
    for i, pi in enumerate(wl_pis):
        vals[pi] = (idx >> i) & 1
    for j, ff in enumerate(ffs):
        vals[ff] = (idx >> (kx + j)) & 1
    eval_gates(g, gates, vals)
    return vals


def _apply_pi_kernels(arr_sx: np.ndarray, kernels) -> np.ndarray:
    """Contract per-PI 2x2 matrices (axis 1 = current bit) along the x axis.

    ``arr_sx`` has shape (S, X); bit i of x is the fastest-varying for i=0.
    """
    S, X = arr_sx.shape
    kx = len(kernels)
    arr = arr_sx.reshape((S,) + (2,) * kx)
    for i, K in enumerate(kernels):
        ax = 1 + (kx - 1 - i)  # C-order: PI 0 occupies the last axis
        arr = np.moveaxis(np.tensordot(K, arr, axes=([1], [ax])), 0, ax)
    return arr.reshape(S, X)


def exhaustive_stats(g: CircuitGraph, w: Workload,
                     cfg: SimConfig | None = None,
                     tol: float = 1e-10, max_iters: int = 500_000) -> SimStats:
    """Exact per-node p1/ptr from the joint (PI, FF-state) Markov chain.

    With ``cfg`` given, returns the exact expectation of the statistics that
    ``simulate`` estimates at that horizon (FFs start from reset, inputs from
    the stationary distribution), so the two agree up to sampling noise.
    Without it, returns long-run values via damped distribution iteration,
    which converges even for periodic state dynamics.
    """
    w.check(g)
    wl_pis = g.workload_pis()
    ffs = g.ffs
    kx, ks = len(wl_pis), len(ffs)
    if kx > MAX_ORACLE_PIS or ks > MAX_ORACLE_FFS:
        raise SimulationError(f"oracle limits exceeded: {kx} PIs / {ks} FFs")

    vals = _enumerate_truth(g, wl_pis, ffs)
    X, S = 1 << kx, 1 << ks
    size = X * S

    next_state = np.zeros(size, dtype=np.int64)
    for j, ff in enumerate(ffs):
        next_state |= vals[g.fanins[ff][0]].astype(np.int64) << j
    x_of = np.arange(size) % X
    to_flat = x_of + X * next_state

    kernels = []
    stat_x = np.ones(X)
    for i, pi in enumerate(wl_pis):
        p1, ptr = w.pi_probs[pi]
        a, b = markov_params(p1, ptr)
        kernels.append(np.array([[1 - a, b], [a, 1 - b]]))  # [next, current]
        bit = (np.arange(X) >> i) & 1
        stat_x *= np.where(bit, p1, 1 - p1)

    valsf = vals.astype(float)
    # change[v][x, s] = P(value of v differs next cycle | current joint state)
    change = np.zeros((g.n, size))
    for v in range(g.n):
        v_sx = valsf[v].reshape(S, X)
        b_sx = _apply_pi_kernels(v_sx, [K.T for K in kernels])
        bnext = b_sx.reshape(-1)[to_flat]
        change[v] = valsf[v] * (1.0 - bnext) + (1.0 - valsf[v]) * bnext

    def push(dist):
        rho = np.bincount(to_flat, weights=dist, minlength=size)
        return _apply_pi_kernels(rho.reshape(S, X), kernels).reshape(-1)

    if cfg is not None:
        cfg.check()
        reset_idx = 0
        for j, ff in enumerate(ffs):
            reset_idx |= g.reset_value(ff) << j
        dist = np.zeros(size)
        dist[reset_idx * X:(reset_idx + 1) * X] = stat_x
        p1_sum = np.zeros(g.n)
        tr_sum = np.zeros(g.n)
        for t in range(cfg.n_cycles):
            p1_sum += valsf @ dist
            if t < cfg.n_cycles - 1:
                tr_sum += change @ dist
                dist = push(dist)
        return SimStats(p1=p1_sum / cfg.n_cycles, ptr=tr_sum / (cfg.n_cycles - 1),
                        n_patterns=0, n_cycles=cfg.n_cycles)

    dist = np.full(size, 1.0 / size)
    for _ in range(max_iters):
        nxt = 0.5 * dist + 0.5 * push(dist)
        delta = np.abs(nxt - dist).max()
        dist = nxt
        if delta < tol:
            break
    else:
        raise SimulationError("stationary iteration did not converge")
    return SimStats(p1=valsf @ dist, ptr=change @ dist, n_patterns=0, n_cycles=0)


# --- binary trace file ------------------------------------------------------

def write_trace_file(path, stats: SimStats):
    """Pack FF traces as little-endian 64-bit words, bits filled LSB first."""
    ffs = sorted(stats.traces)
    P, T = stats.n_patterns, stats.n_cycles
    bits = (np.concatenate([stats.traces[ff].reshape(-1) for ff in ffs])
            if ffs else np.zeros(0, dtype=bool))
    nwords = (bits.size + 63) // 64
    padded = np.zeros(nwords * 64, dtype=bool)
    padded[:bits.size] = bits
    words = np.zeros(nwords, dtype="<u8")
    for k in range(64):
        words |= padded[k::64].astype("<u8") << np.uint64(k)
    with open(path, "wb") as f:
        f.write(TRACE_MAGIC)
        f.write(struct.pack("<III", len(ffs), P, T))
        f.write(struct.pack(f"<{len(ffs)}I", *ffs))
        f.write(words.tobytes())


def read_trace_file(path):
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != TRACE_MAGIC:
            raise SimulationError(f"bad trace magic {magic!r}")
        n_ff, P, T = struct.unpack("<III", f.read(12))
        ffs = struct.unpack(f"<{n_ff}I", f.read(4 * n_ff))
        words = np.frombuffer(f.read(), dtype="<u8")
    total = n_ff * P * T
    bits = np.zeros(len(words) * 64, dtype=bool)
    for k in range(64):
        bits[k::64] = (words >> np.uint64(k)) & np.uint64(1)
    bits = bits[:total]
    traces = {}
    for j, ff in enumerate(ffs):
        traces[ff] = bits[j * P * T:(j + 1) * P * T].reshape(P, T).copy()
    return traces, P, T
