"""Soft-error reliability: Monte Carlo fault injection and flip-rate learning.

A faulty simulation shares PI streams with a fault-free one; every node value
independently flips with a small probability at each evaluation, and
corrupted values propagate through gates and into FF state.  Per-node
labels are the observed 0-to-1 and 1-to-0 flip rates.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import model as mdl
from . import tensor as tz
from .circuit import CircuitGraph, NodeKind
from .labels import LabelSet
from .simulate import (FAULT_STREAM, PI_STREAM, SimConfig, Workload,
                       advance_pis, compiled_order, eval_gates,
                       pattern_chunks, pattern_uniforms, pi_rate_arrays)


@dataclass(frozen=True)
class FaultConfig:
    flip_prob: float = 0.0005
    n_patterns: int = 1000
    n_cycles: int = 100
    seed: int = 0

    def check(self):
        if not 0.0 <= self.flip_prob < 1.0:
            raise ValueError("flip probability outside [0, 1)")
        if self.n_patterns < 1 or self.n_cycles < 2:
            raise ValueError("need n_patterns >= 1 and n_cycles >= 2")

    def sim_config(self) -> SimConfig:
        return SimConfig(n_patterns=self.n_patterns, n_cycles=self.n_cycles,
                         seed=self.seed)


@dataclass
class FlipLabels:
    """Per-node flip rates with their denominators.

    ``p01[v]`` is the fraction of evaluations with fault-free value 0 where
    the faulty run observed 1; ``p10`` the converse.  ``defined01/10`` flag
    nodes whose denominator was nonzero.
    """

    p01: np.ndarray
    p10: np.ndarray
    n0: np.ndarray
    n1: np.ndarray

    @property
    def defined01(self) -> np.ndarray:
        return self.n0 > 0

    @property
    def defined10(self) -> np.ndarray:
        return self.n1 > 0

    def to_json_lines(self, g: CircuitGraph | None = None) -> str:
        names = g.id_to_name if g is not None else {}
        rows = []
        for v in range(len(self.p01)):
            rows.append(json.dumps({
                "id": v, **({"name": names[v]} if v in names else {}),
                "p01": float(self.p01[v]), "p10": float(self.p10[v]),
                "n0": int(self.n0[v]), "n1": int(self.n1[v])}))
        return "\n".join(rows) + "\n"


def _paired_chunk(g, gates, ffs, wl_pis, a, b, p1_arr, fc: FaultConfig, lo, hi,
                  want_traces):
    n = g.n
    P = hi - lo
    T = fc.n_cycles
    k = len(wl_pis)
    U = (np.stack([pattern_uniforms(fc.seed, p, PI_STREAM, (T, k))
                   for p in range(lo, hi)])
         if k else np.zeros((P, T, 0)))
    flips = None
    if fc.flip_prob > 0.0:
        flips = np.stack([pattern_uniforms(fc.seed, p, FAULT_STREAM, (T, n))
                          for p in range(lo, hi)]) < fc.flip_prob

    vals = np.zeros((n, P), dtype=bool)
    fvals = np.zeros((n, P), dtype=bool)
    state = np.zeros((len(ffs), P), dtype=bool)
    for j, ff in enumerate(ffs):
        if g.reset_value(ff):
            state[j, :] = True
    fstate = state.copy()

    counts = np.zeros((4, n), dtype=np.int64)  # n0, n1, n01, n10
    traces = {ff: np.zeros((P, T), dtype=bool) for ff in ffs} if want_traces else None
    ftraces = {ff: np.zeros((P, T), dtype=bool) for ff in ffs} if want_traces else None

    pi_state = np.zeros((k, P), dtype=bool)
    for t in range(T):
        pi_state = advance_pis(pi_state, U[:, t, :].T, a, b, p1_arr, t == 0)
        fl = flips[:, t, :].T if flips is not None else None

        for j, pi in enumerate(wl_pis):
            vals[pi] = pi_state[j]
            fvals[pi] = pi_state[j] if fl is None else pi_state[j] ^ fl[pi]
        if g.const_id is not None:
            vals[g.const_id] = False
            fvals[g.const_id] = (False if fl is None
                                 else fl[g.const_id].copy())
        for j, ff in enumerate(ffs):
            vals[ff] = state[j]
            fvals[ff] = fstate[j] if fl is None else fstate[j] ^ fl[ff]
            if want_traces:
                traces[ff][:, t] = state[j]
                ftraces[ff][:, t] = fstate[j]
        eval_gates(g, gates, vals)
        for v in gates:
            fi = g.fanins[v]
            if g.kinds[v] == NodeKind.AND:
                np.logical_and(fvals[fi[0]], fvals[fi[1]], out=fvals[v])
            else:
                np.logical_not(fvals[fi[0]], out=fvals[v])
            if fl is not None:
                fvals[v] ^= fl[v]

        counts[0] += (~vals).sum(axis=1)
        counts[1] += vals.sum(axis=1)
        counts[2] += (fvals & ~vals).sum(axis=1)
        counts[3] += (~fvals & vals).sum(axis=1)

        for j, ff in enumerate(ffs):
            state[j] = vals[g.fanins[ff][0]]
            fstate[j] = fvals[g.fanins[ff][0]]

    return {"counts": counts, "traces": traces, "ftraces": ftraces, "lo": lo}


def reliability_labels(g: CircuitGraph, w: Workload, fc: FaultConfig,
                       return_traces: bool = False):
    """Estimate per-node flip rates from paired fault-free/faulty runs.

    Deterministic in the seed; with ``flip_prob == 0`` the faulty run is
    observationally identical to the fault-free one.
    """
    fc.check()
    w.check(g)
    gates, ffs = compiled_order(g)
    wl_pis, a, b, p1_arr = pi_rate_arrays(g, w)

    counts = np.zeros((4, g.n), dtype=np.int64)
    traces = {ff: np.zeros((fc.n_patterns, fc.n_cycles), dtype=bool) for ff in ffs}
    ftraces = {ff: np.zeros((fc.n_patterns, fc.n_cycles), dtype=bool) for ff in ffs}
    for lo, hi in pattern_chunks(fc.n_patterns):
        res = _paired_chunk(g, gates, ffs, wl_pis, a, b, p1_arr, fc, lo, hi,
                            return_traces)
        counts += res["counts"]
        if return_traces:
            for ff in ffs:
                traces[ff][lo:hi] = res["traces"][ff]
                ftraces[ff][lo:hi] = res["ftraces"][ff]

    n0, n1, n01, n10 = counts
    labels = FlipLabels(
        p01=np.divide(n01, n0, out=np.zeros(g.n), where=n0 > 0),
        p10=np.divide(n10, n1, out=np.zeros(g.n), where=n1 > 0),
        n0=n0, n1=n1)
    if return_traces:
        return labels, traces, ftraces
    return labels


# --- flip-rate regression head --------------------------------------------------

def predict_flip_rates(params: tz.ParamStore, record: mdl.CircuitRecord,
                       cfg: mdl.ModelConfig) -> tz.Tensor:
    """(n_nodes, 2) sigmoid outputs from the concatenated embedding spaces."""
    st, _ = mdl.forward_tensors(record.graph, record.plan, params,
                                record.emb0, cfg, schedule=record.schedule)
    rows = tz.concat_cols([st.hs, st.hf, st.hq])
    return tz.mlp3(rows, params, "head.flip")


def finetune_reliability(params: tz.ParamStore, g: CircuitGraph, w: Workload,
                         flip: FlipLabels, cfg: mdl.TrainConfig,
                         epochs: int = 50) -> tuple[tz.ParamStore, list[dict]]:
    """Swap in a two-output head and fine-tune everything with L1 loss."""
    tuned = params.clone()
    if "head.flip.w1" not in tuned:
        mdl.add_reliability_head(tuned, cfg.dim, seed=cfg.seed)
    mcfg = cfg.model_config()
    record = mdl.CircuitRecord(graph=g, workload=w,
                               labels=_prob_labels(g)).prepare(mcfg, cfg.seed, 0)
    target = tz.constant(np.stack([flip.p01, flip.p10], axis=1))
    history = []
    for epoch in range(1, epochs + 1):
        tuned.zero_grads()
        pred = predict_flip_rates(tuned, record, mcfg)
        loss = tz.mean_all(tz.absolute(tz.sub(pred, target)))
        loss.backward()
        tz.adam_step(tuned, cfg.lr)
        pe = float(np.mean(np.abs(pred.data - target.data)))
        history.append({"epoch": epoch, "loss_flip": loss.item(), "pe_flip": pe})
    return tuned, history


def _prob_labels(g: CircuitGraph) -> LabelSet:
    return LabelSet(p1=np.zeros(g.n), ptr=np.zeros(g.n), rc_pairs=[],
                    f_pairs=[], ffsim_pairs=[])
