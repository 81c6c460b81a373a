import numpy as np
import pytest

from seqcircuit import CircuitBuilder, NodeKind


def toggle_ff():
    """PI (unused load) plus an FF whose D input is the inverse of its output."""
    b = CircuitBuilder()
    pi = b.add_pi()
    ff = b.add_ff()
    inv = b.add_not(ff)
    b.set_ff_input(ff, inv)
    gate = b.add_and(pi, inv)
    b.set_outputs([gate, ff])
    return b.build(), {"pi": pi, "ff": ff, "inv": inv, "gate": gate}


def and2():
    """Two PIs feeding a single AND gate."""
    b = CircuitBuilder()
    a = b.add_pi()
    c = b.add_pi()
    g = b.add_and(a, c)
    b.set_outputs([g])
    return b.build(), {"a": a, "b": c, "and": g}


def eval_graph(g, source_vals, ff_vals=None):
    """Independent recursive evaluator used as a test oracle.

    ``source_vals`` maps PI ids to bools; FF outputs come from ``ff_vals``.
    """
    memo = dict(source_vals)
    if ff_vals:
        memo.update(ff_vals)
    if g.const_id is not None:
        memo[g.const_id] = False

    def ev(v):
        if v in memo:
            return memo[v]
        kind = g.kinds[v]
        if kind == NodeKind.AND:
            out = ev(g.fanins[v][0]) and ev(g.fanins[v][1])
        elif kind == NodeKind.NOT:
            out = not ev(g.fanins[v][0])
        else:
            raise AssertionError(f"unexpected source {v}")
        memo[v] = out
        return out

    return ev


def numeric_gradients(build_loss, store, h=1e-5, names=None):
    """Central finite differences over every scalar parameter (test oracle)."""
    from seqcircuit import tensor as tz

    out = {}
    for name in (names or store.names()):
        p = store[name]
        grad = np.zeros_like(p.data)
        for ix in np.ndindex(p.data.shape):
            orig = p.data[ix]
            with tz.no_grad():
                p.data[ix] = orig + h
                lp = build_loss().item()
                p.data[ix] = orig - h
                lm = build_loss().item()
            p.data[ix] = orig
            grad[ix] = (lp - lm) / (2.0 * h)
        out[name] = grad
    return out


def relative_errors(ad, fd):
    return np.abs(ad - fd) / np.maximum.reduce(
        [np.abs(ad), np.abs(fd), np.ones_like(fd)])
