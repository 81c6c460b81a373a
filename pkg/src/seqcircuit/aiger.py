"""ASCII AIGER (``aag``) reader and writer, with latch support.

Literal conventions: variable v has positive literal 2v and negated literal
2v+1; literal 0 is constant false, literal 1 constant true.  Negated
literals become explicit shared NOT nodes, constant literals become a
pinned always-0 input node.
"""
from __future__ import annotations

from .circuit import CircuitBuilder, CircuitGraph, CircuitError, NodeKind


class AigerError(CircuitError):
    def __init__(self, msg: str, line: int):
        super().__init__(f"line {line}: {msg}")
        self.line = line


def _ints(parts, line, want):
    try:
        vals = [int(p) for p in parts]
    except ValueError:
        raise AigerError(f"expected integers, got {parts!r}", line) from None
    if len(vals) not in want:
        raise AigerError(f"expected {want} fields, got {len(vals)}", line)
    return vals


def parse_aiger(text) -> CircuitGraph:
    """Parse an ``aag`` document (string or readable) into a CircuitGraph."""
    if hasattr(text, "read"):
        text = text.read()
    lines = text.splitlines()
    ln = 0

    def next_line():
        nonlocal ln
        while ln < len(lines):
            ln += 1
            s = lines[ln - 1].strip()
            if s:
                return s
        return None

    header = next_line()
    if header is None or not header.startswith("aag"):
        raise AigerError("missing 'aag' header", ln)
    m, n_in, n_latch, n_out, n_and = _ints(header.split()[1:], ln, (5,))
    if min(m, n_in, n_latch, n_out, n_and) < 0:
        raise AigerError("negative header field", ln)

    in_lits, latch_rows, out_lits, and_rows = [], [], [], []
    for _ in range(n_in):
        s = next_line()
        if s is None:
            raise AigerError("input count mismatch", ln)
        (lit,) = _ints(s.split(), ln, (1,))
        if lit < 2 or lit % 2 or lit // 2 > m:
            raise AigerError(f"bad input literal {lit}", ln)
        in_lits.append(lit)
    for _ in range(n_latch):
        s = next_line()
        if s is None:
            raise AigerError("latch count mismatch", ln)
        row = _ints(s.split(), ln, (2, 3))
        if row[0] < 2 or row[0] % 2:
            raise AigerError(f"bad latch literal {row[0]}", ln)
        latch_rows.append((row, ln))
    for _ in range(n_out):
        s = next_line()
        if s is None:
            raise AigerError("output count mismatch", ln)
        (lit,) = _ints(s.split(), ln, (1,))
        out_lits.append((lit, ln))
    for _ in range(n_and):
        s = next_line()
        if s is None:
            raise AigerError("AND count mismatch", ln)
        row = _ints(s.split(), ln, (3,))
        if row[0] < 2 or row[0] % 2:
            raise AigerError(f"bad AND literal {row[0]}", ln)
        and_rows.append((row, ln))

    symbols = []
    while True:
        s = next_line()
        if s is None or s == "c":
            break
        if s[0] in "ilo" and " " in s:
            symbols.append((s, ln))

    b = CircuitBuilder()
    var_node: dict[int, int] = {}
    for lit in in_lits:
        v = lit // 2
        if v in var_node:
            raise AigerError(f"variable {v} defined twice", ln)
        var_node[v] = b.add_pi()
    ff_ids = []
    for (row, at) in latch_rows:
        v = row[0] // 2
        if v in var_node:
            raise AigerError(f"variable {v} defined twice", at)
        reset = row[2] if len(row) == 3 else 0
        if reset == row[0]:
            reset = 0  # uninitialized latch: fall back to the default reset
        if reset not in (0, 1):
            raise AigerError(f"bad latch reset {row[2]}", at)
        nid = b.add_ff(reset=reset)
        var_node[v] = nid
        ff_ids.append(nid)
    and_ids = []
    for (row, at) in and_rows:
        v = row[0] // 2
        if v > m:
            raise AigerError(f"literal {row[0]} exceeds maximum variable {m}", at)
        if v in var_node:
            raise AigerError(f"variable {v} defined twice", at)
        var_node[v] = b.add_and(0, 0)  # fanins wired below
        and_ids.append(var_node[v])

    def node_for(lit: int, at: int) -> int:
        if lit < 0 or lit // 2 > m:
            raise AigerError(f"literal {lit} out of range (max var {m})", at)
        if lit == 0:
            return b.const_false()
        if lit == 1:
            return b.make_not(b.const_false())
        v = lit // 2
        if v not in var_node:
            raise AigerError(f"literal {lit} references undefined variable {v}", at)
        nid = var_node[v]
        return b.make_not(nid) if lit % 2 else nid

    for (row, at), nid in zip(and_rows, and_ids):
        b.fanins[nid] = (node_for(row[1], at), node_for(row[2], at))
    for (row, at), nid in zip(latch_rows, ff_ids):
        b.set_ff_input(nid, node_for(row[1], at))
    b.set_outputs(node_for(lit, at) for lit, at in out_lits)

    for s, at in symbols:
        tag, name = s.split(None, 1)
        kind, idx = tag[0], tag[1:]
        if not idx.isdigit():
            continue
        i = int(idx)
        try:
            if kind == "i":
                target = var_node[in_lits[i] // 2]
            elif kind == "l":
                target = ff_ids[i]
            else:
                target = b.pos[i]
        except (IndexError, KeyError):
            raise AigerError(f"symbol {tag} out of range", at) from None
        if name not in b.name_map:
            b.name_map[name] = target

    return b.build()


def emit_aiger(g: CircuitGraph) -> str:
    """Serialize to ``aag`` text.

    PIs, FFs and ANDs are numbered in ascending node-id order; inverters
    appear as negated literals, so every NOT node must drive at least one
    edge or output to survive a round trip.
    """
    pis = [p for p in g.pis if p != g.const_id]
    ffs = g.ffs
    ands = g.nodes_of_kind(NodeKind.AND)
    var: dict[int, int] = {}
    for seq in (pis, ffs, ands):
        for nid in seq:
            var[nid] = len(var) + 1

    def lit(nid: int) -> int:
        neg = 0
        while g.kinds[nid] == NodeKind.NOT:
            neg ^= 1
            nid = g.fanins[nid][0]
        if nid == g.const_id:
            return neg
        return 2 * var[nid] + neg

    out = [f"aag {len(var)} {len(pis)} {len(ffs)} {len(g.pos)} {len(ands)}"]
    out += [str(2 * var[p]) for p in pis]
    for ff in ffs:
        row = f"{2 * var[ff]} {lit(g.fanins[ff][0])}"
        if g.reset_value(ff):
            row += " 1"
        out.append(row)
    out += [str(lit(p)) for p in g.pos]
    out += [f"{2 * var[a]} {lit(g.fanins[a][0])} {lit(g.fanins[a][1])}" for a in ands]

    names = g.id_to_name
    for i, p in enumerate(pis):
        if p in names:
            out.append(f"i{i} {names[p]}")
    for i, ff in enumerate(ffs):
        if ff in names:
            out.append(f"l{i} {names[ff]}")
    for i, p in enumerate(g.pos):
        if p in names:
            out.append(f"o{i} {names[p]}")
    return "\n".join(out) + "\n"
