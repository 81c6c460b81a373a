import numpy as np
import pytest

from seqcircuit import NodeKind, emit_aiger, generate, isomorphic, parse_aiger
from seqcircuit.aiger import AigerError
from seqcircuit.circuit import GenSpec


def test_identity_netlist():
    g = parse_aiger("aag 1 1 0 1 0\n2\n2\n")
    assert g.counts() == {"PI": 1, "AND": 0, "NOT": 0, "FF": 0}
    assert g.pos == (0,)


def test_single_and_gate():
    g = parse_aiger("aag 3 2 0 1 1\n2\n4\n6\n6 2 4\n")
    assert g.counts() == {"PI": 2, "AND": 1, "NOT": 0, "FF": 0}
    and_id = g.nodes_of_kind(NodeKind.AND)[0]
    assert g.fanins[and_id] == (0, 1)
    assert g.pos == (and_id,)


def test_latch_with_negated_next_state():
    # Latch next-state literal 7 is the inverse of variable 3 (the AND gate).
    text = "aag 3 1 1 1 1\n4\n2 7\n2\n6 4 2\n"
    g = parse_aiger(text)
    assert g.counts() == {"PI": 1, "AND": 1, "NOT": 1, "FF": 1}
    ff = g.ffs[0]
    inv = g.fanins[ff][0]
    assert g.kinds[inv] == NodeKind.NOT
    and_id = g.nodes_of_kind(NodeKind.AND)[0]
    assert g.fanins[inv] == (and_id,)


def test_not_nodes_shared_per_literal():
    # Literal 3 consumed twice becomes one NOT node.
    text = "aag 3 1 0 1 2\n2\n6\n4 3 3\n6 4 3\n"
    g = parse_aiger(text)
    assert g.counts()["NOT"] == 1


def test_constant_literals():
    g = parse_aiger("aag 1 1 0 2 0\n2\n0\n1\n")
    assert g.const_id is not None
    assert g.kinds[g.pos[0]] == NodeKind.PI
    assert g.kinds[g.pos[1]] == NodeKind.NOT
    assert g.fanins[g.pos[1]] == (g.const_id,)


def test_latch_reset_values():
    g = parse_aiger("aag 2 1 1 0 0\n2\n4 2 1\n")
    assert g.reset_value(g.ffs[0]) == 1
    text = emit_aiger(g)
    assert isomorphic(g, parse_aiger(text))


def test_symbol_table():
    text = "aag 3 2 0 1 1\n2\n4\n6\n6 2 4\ni0 alpha\ni1 beta\no0 out\nc\nignored\n"
    g = parse_aiger(text)
    assert g.name_map["alpha"] == 0
    assert g.name_map["beta"] == 1
    assert g.name_map["out"] == g.pos[0]


@pytest.mark.parametrize("text,fragment", [
    ("nonsense\n", "header"),
    ("aag 1 1 0\n2\n", "fields"),
    ("aag 1 2 0 0 0\n2\n4\n", "bad input"),
    ("aag 1 1 1 0 0\n2\n", "latch count"),
    ("aag 2 1 0 1 1\n2\n4\n4 9 2\n", "out of range"),
    ("aag 2 1 0 1 0\n2\n9\n", "out of range"),
    ("aag 2 1 0 1 0\n2\n4\n", "undefined"),
    ("aag 2 1 0 0 1\n2\n2 2 2\n", "twice"),
])
def test_parse_errors_carry_line_numbers(text, fragment):
    with pytest.raises(AigerError) as err:
        parse_aiger(text)
    assert "line" in str(err.value)
    assert fragment.split()[0] in str(err.value).lower()


def _reference_reader(text):
    """Minimal independent reader: header plus raw literal rows."""
    rows = [l.strip() for l in text.splitlines() if l.strip()]
    m, i, l, o, a = [int(x) for x in rows[0].split()[1:]]
    body = rows[1:]
    inputs = [int(x) for x in body[:i]]
    latches = [tuple(int(x) for x in r.split()) for r in body[i:i + l]]
    outputs = [int(body[i + l + k]) for k in range(o)]
    ands = [tuple(int(x) for x in r.split()) for r in body[i + l + o:i + l + o + a]]
    return inputs, latches, outputs, ands


HAND_WRITTEN = [
    "aag 0 0 0 0 0\n",
    "aag 1 1 0 0 0\n2\n",
    "aag 1 1 0 1 0\n2\n3\n",
    "aag 2 2 0 1 0\n2\n4\n5\n",
    "aag 3 2 0 1 1\n2\n4\n6\n6 2 4\n",
    "aag 3 2 0 1 1\n2\n4\n7\n6 3 5\n",
    "aag 1 0 1 1 0\n2 2\n2\n",
    "aag 1 0 1 1 0\n2 3\n3\n",
    "aag 2 1 1 1 0\n2\n4 2\n4\n",
    "aag 2 1 1 1 0\n2\n4 5\n5\n",
    "aag 3 1 1 1 1\n2\n4 6\n4\n6 2 4\n",
    "aag 3 1 1 1 1\n2\n4 7\n7\n6 2 5\n",
    "aag 5 2 1 1 2\n2\n4\n6 10\n10\n8 2 4\n10 8 6\n",
    "aag 5 2 1 2 2\n2\n4\n6 11\n11\n6\n8 3 5\n10 8 7\n",
    "aag 4 2 2 2 0\n2\n4\n6 4\n8 2\n6\n8\n",
    "aag 2 2 0 1 0\n2\n4\n0\n",
    "aag 2 2 0 1 0\n2\n4\n1\n",
    "aag 3 3 0 1 0\n2\n4\n6\n5\n",
    "aag 7 3 1 1 3\n2\n4\n6\n8 14\n14\n10 2 4\n12 10 6\n14 12 9\n",
    "aag 4 1 2 2 1\n2\n4 8\n6 9\n4\n6\n8 2 5\n",
]


@pytest.mark.parametrize("text", HAND_WRITTEN)
def test_hand_written_files_against_reference(text):
    inputs, latches, outputs, ands = _reference_reader(text)
    g = parse_aiger(text)

    var_node = {}
    for k, lit in enumerate(inputs):
        var_node[lit // 2] = k
    for k, row in enumerate(latches):
        var_node[row[0] // 2] = len(inputs) + k
    for k, row in enumerate(ands):
        var_node[row[0] // 2] = len(inputs) + len(latches) + k

    def expect(lit):
        if lit == 0:
            return g.const_id
        if lit == 1:
            cand = [v for v in g.nodes_of_kind(NodeKind.NOT)
                    if g.fanins[v][0] == g.const_id]
            return cand[0]
        base = var_node[lit // 2]
        if lit % 2 == 0:
            return base
        cand = [v for v in g.nodes_of_kind(NodeKind.NOT)
                if g.fanins[v] == (base,)]
        assert len(cand) == 1
        return cand[0]

    assert len(g.pis) == len(inputs) + (1 if g.const_id is not None else 0)
    assert len(g.ffs) == len(latches)
    assert len(g.nodes_of_kind(NodeKind.AND)) == len(ands)
    for k, row in enumerate(latches):
        assert g.fanins[len(inputs) + k] == (expect(row[1]),)
    base_and = len(inputs) + len(latches)
    for k, row in enumerate(ands):
        assert g.fanins[base_and + k] == (expect(row[1]), expect(row[2]))
    assert g.pos == tuple(expect(lit) for lit in outputs)
    # negated literals are deduplicated: one NOT node per inverted variable
    inverted = {lit // 2 for row in ands for lit in row[1:] if lit % 2 and lit > 1}
    inverted |= {row[1] // 2 for row in latches if row[1] % 2 and row[1] > 1}
    inverted |= {lit // 2 for lit in outputs if lit % 2 and lit > 1}
    assert len(g.nodes_of_kind(NodeKind.NOT)) == len(inverted) + (
        1 if any(lit == 1 for lit in outputs) else 0)


def test_roundtrip_many_generated():
    for seed in range(25):
        g = generate(GenSpec(n_pi=3, n_and=15, n_not=6, n_ff=3, seed=seed,
                             feedback_prob=0.6))
        g2 = parse_aiger(emit_aiger(g))
        assert isomorphic(g, g2)
