"""Graph neural model over sequential netlists.

Every node carries three embeddings: structure, function, and sequential
behavior.  Sources keep parts of their embeddings pinned: structure vectors
of PIs and FFs never change (they act as pseudo primary inputs), and PI
function/sequential vectors stay at their workload initialization.  A single
forward sweep walks the level plan; feedback regions are re-swept a bounded
number of times; an optional mirrored sweep over reversed edges follows.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import tensor as tz
from .circuit import CircuitGraph, NodeKind
from .labels import LabelSet
from .schedule import PropagationPlan, levelize
from .simulate import Workload
from .tensor import ParamStore, Tensor

STRUCT_KINDS = (NodeKind.AND, NodeKind.NOT)
UPDATE_KINDS = (NodeKind.AND, NodeKind.NOT, NodeKind.FF)
TASKS = ("recon", "logic", "trans", "func", "ff_sim")


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 128
    reverse_layer: bool = True
    cycle_tol: float = 1e-3
    cycle_max_iters: int = 3


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    epochs_phase1: int = 40
    epochs_phase2: int = 40
    lr: float = 1e-4
    w_recon: float = 1.0
    w_logic: float = 1.0
    w_trans: float = 1.0
    w_func: float = 1.0
    w_ff_sim: float = 1.0
    seed: int = 0
    dim: int = 128
    reverse_layer: bool = True
    cycle_tol: float = 1e-3
    cycle_max_iters: int = 3

    def model_config(self) -> ModelConfig:
        return ModelConfig(dim=self.dim, reverse_layer=self.reverse_layer,
                           cycle_tol=self.cycle_tol,
                           cycle_max_iters=self.cycle_max_iters)

    def weights(self, phase: int) -> dict[str, float]:
        w = {"recon": self.w_recon, "logic": self.w_logic,
             "trans": self.w_trans, "func": self.w_func,
             "ff_sim": self.w_ff_sim if phase == 2 else 0.0}
        return w


@dataclass
class EmbeddingState:
    """Per-node embedding matrices, one row per node."""

    structure: np.ndarray
    function: np.ndarray
    sequential: np.ndarray

    def copy(self) -> "EmbeddingState":
        return EmbeddingState(self.structure.copy(), self.function.copy(),
                              self.sequential.copy())


@dataclass
class ForwardReport:
    forward_updates: np.ndarray
    reverse_updates: np.ndarray
    region_iters: list[int] = field(default_factory=list)
    region_residuals: list[list[float]] = field(default_factory=list)


def _unit_rows(rng, n, dim):
    m = rng.standard_normal((n, dim))
    norms = np.linalg.norm(m, axis=1, keepdims=True)
    return m / np.maximum(norms, 1e-12)


def _seed_list(seed) -> list[int]:
    if isinstance(seed, (list, tuple)):
        return [int(s) for s in seed]
    return [int(seed)]


def init_embeddings(g: CircuitGraph, w: Workload, dim: int,
                    seed=0) -> EmbeddingState:
    """Workload-aware deterministic initialization.

    Structure rows of the sources (PIs and FFs) are mutually orthonormal
    when their count fits the dimension, otherwise random unit rows.  PI
    function/sequential rows carry (p1, ptr) in component 0.
    """
    rng = np.random.default_rng(_seed_list(seed) + [0x1217])
    n = g.n
    sources = sorted(g.pis + g.ffs)
    hs = _unit_rows(rng, n, dim)
    k = len(sources)
    if k <= dim:
        gauss = rng.standard_normal((dim, k))
        q, _ = np.linalg.qr(gauss)
        hs[sources] = q[:, :k].T
    else:
        hs[sources] = _unit_rows(rng, k, dim)

    hf = _unit_rows(rng, n, dim)
    hq = _unit_rows(rng, n, dim)
    for pi in g.pis:
        p1, ptr = (0.0, 0.0) if pi == g.const_id else w.pi_probs[pi]
        hf[pi] = 0.0
        hf[pi, 0] = p1
        hq[pi] = 0.0
        hq[pi, 0] = ptr
    dt = tz.active_dtype()
    return EmbeddingState(hs.astype(dt), hf.astype(dt), hq.astype(dt))


# --- parameters ---------------------------------------------------------------

def _kind_tag(kind: NodeKind) -> str:
    return kind.name.lower()


def init_params(dim: int, seed: int = 0, reverse_layer: bool = True) -> ParamStore:
    """Create all aggregators, update cells and prediction heads."""
    store = ParamStore()
    rng = np.random.default_rng([int(seed), 0x7061])
    sides = ("fwd", "rev") if reverse_layer else ("fwd",)
    for side in sides:
        for kind in STRUCT_KINDS:
            base = f"{side}.struct.{_kind_tag(kind)}"
            tz.init_attention(store, f"{base}.attn", dim, rng)
            tz.init_gru(store, f"{base}.gru", dim, dim, rng)
        for kind in UPDATE_KINDS:
            base = f"{side}.func.{_kind_tag(kind)}"
            tz.init_attention(store, f"{base}.attn", 2 * dim, rng)
            tz.init_gru(store, f"{base}.gru", 2 * dim, dim, rng)
            base = f"{side}.seq.{_kind_tag(kind)}"
            tz.init_attention(store, f"{base}.attn", 3 * dim, rng)
            tz.init_gru(store, f"{base}.gru", 3 * dim, dim, rng)
    tz.init_mlp3(store, "head.recon", 2 * dim, dim, 1, rng)
    tz.init_mlp3(store, "head.logic", dim, dim, 1, rng)
    tz.init_mlp3(store, "head.trans", dim, dim, 1, rng)
    return store


def add_reliability_head(store: ParamStore, dim: int, seed: int = 0):
    rng = np.random.default_rng([int(seed), 0x7265])
    tz.init_mlp3(store, "head.flip", 3 * dim, dim, 2, rng)


# --- forward pass -------------------------------------------------------------

class _TensorState:
    """Whole-graph embedding matrices during a differentiable sweep."""

    def __init__(self, emb: EmbeddingState):
        self.hs = tz.constant(emb.structure)
        self.hf = tz.constant(emb.function)
        self.hq = tz.constant(emb.sequential)

    def to_embedding(self) -> EmbeddingState:
        return EmbeddingState(self.hs.data.copy(), self.hf.data.copy(),
                              self.hq.data.copy())


def _level_groups(g: CircuitGraph, nodes, neighbors) -> list[tuple]:
    """Group same-level nodes by (kind, neighbor count) for batched updates.

    Within a level no node feeds another, so batching cannot change values.
    """
    buckets: dict[tuple[NodeKind, int], list[int]] = {}
    for v in nodes:
        k = len(neighbors[v])
        if k == 0:
            continue
        buckets.setdefault((g.kinds[v], k), []).append(v)
    groups = []
    for (kind, k), vids in sorted(buckets.items()):
        vid_arr = np.array(vids, dtype=np.int64)
        cols = [np.array([neighbors[v][j] for v in vids], dtype=np.int64)
                for j in range(k)]
        groups.append((kind, vid_arr, cols))
    return groups


def compile_schedule(g: CircuitGraph, plan: PropagationPlan, reverse: bool):
    """Precompute batched update groups for every sweep the forward pass runs."""
    fwd = [_level_groups(g, level, g.fanins) for level in plan.levels[1:]]
    regions = [
        [_level_groups(g, level, g.fanins) for level in region.internal_levels]
        for region in plan.cyclic_regions
    ]
    rev = ([_level_groups(g, level, g.fanouts)
            for level in reversed(plan.levels[1:])] if reverse else [])
    return {"fwd": fwd, "regions": regions, "rev": rev}


def _update_group(st: _TensorState, params, kind: NodeKind, vids, cols, side: str):
    """Batched refresh of one (kind, arity) node group from its neighbor rows."""
    tag = _kind_tag(kind)
    hs_v = tz.take_rows(st.hs, vids)
    hs_n = [tz.take_rows(st.hs, c) for c in cols]
    if kind in STRUCT_KINDS:
        base = f"{side}.struct.{tag}"
        msg = tz.attn_aggregate_groups(hs_v, hs_n, params[f"{base}.attn.w1"],
                                       params[f"{base}.attn.w2"])
        new_hs = tz.gru_cell(msg, hs_v, params, f"{base}.gru")
        st.hs = tz.set_rows(st.hs, vids, new_hs)
        hs_v = new_hs

    hf_v = tz.take_rows(st.hf, vids)
    preds_f = [tz.concat_cols([h, tz.take_rows(st.hf, c)])
               for h, c in zip(hs_n, cols)]
    base = f"{side}.func.{tag}"
    msg_f = tz.attn_aggregate_groups(tz.concat_cols([hs_v, hf_v]), preds_f,
                                     params[f"{base}.attn.w1"],
                                     params[f"{base}.attn.w2"])
    new_hf = tz.gru_cell(msg_f, hf_v, params, f"{base}.gru")
    st.hf = tz.set_rows(st.hf, vids, new_hf)

    hq_v = tz.take_rows(st.hq, vids)
    preds_q = [tz.concat_cols([pf, tz.take_rows(st.hq, c)])
               for pf, c in zip(preds_f, cols)]
    base = f"{side}.seq.{tag}"
    msg_q = tz.attn_aggregate_groups(tz.concat_cols([hs_v, new_hf, hq_v]), preds_q,
                                     params[f"{base}.attn.w1"],
                                     params[f"{base}.attn.w2"])
    new_hq = tz.gru_cell(msg_q, hq_v, params, f"{base}.gru")
    st.hq = tz.set_rows(st.hq, vids, new_hq)


def _region_residual(st, old, rows) -> float:
    res = 0.0
    for new_m, old_m in ((st.hs, old[0]), (st.hf, old[1]), (st.hq, old[2])):
        num = np.linalg.norm(new_m.data[rows] - old_m.data[rows], axis=1)
        den = np.linalg.norm(old_m.data[rows], axis=1) + 1e-12
        res = max(res, float((num / den).max()))
    return res


def forward_tensors(g: CircuitGraph, plan: PropagationPlan, params: ParamStore,
                    emb: EmbeddingState, cfg: ModelConfig,
                    schedule=None) -> tuple[_TensorState, ForwardReport]:
    """Differentiable propagation; returns embedding tensors and diagnostics."""
    if schedule is None:
        schedule = compile_schedule(g, plan, cfg.reverse_layer)
    st = _TensorState(emb)
    report = ForwardReport(forward_updates=np.zeros(g.n, dtype=np.int64),
                           reverse_updates=np.zeros(g.n, dtype=np.int64))

    for groups in schedule["fwd"]:
        for kind, vids, cols in groups:
            _update_group(st, params, kind, vids, cols, "fwd")
            report.forward_updates[vids] += 1

    for region, levels in zip(plan.cyclic_regions, schedule["regions"]):
        rows = np.array(sorted(region.nodes), dtype=np.int64)
        residuals = []
        iters = 0
        for _ in range(cfg.cycle_max_iters):
            old = (st.hs, st.hf, st.hq)
            for groups in levels:
                for kind, vids, cols in groups:
                    _update_group(st, params, kind, vids, cols, "fwd")
                    report.forward_updates[vids] += 1
            iters += 1
            res = _region_residual(st, old, rows)
            residuals.append(res)
            if res < cfg.cycle_tol:
                break
        report.region_iters.append(iters)
        report.region_residuals.append(residuals)

    for groups in schedule["rev"]:
        for kind, vids, cols in groups:
            _update_group(st, params, kind, vids, cols, "rev")
            report.reverse_updates[vids] += 1
    return st, report


def forward(g: CircuitGraph, plan: PropagationPlan, params: ParamStore,
            emb: EmbeddingState, cfg: ModelConfig
            ) -> tuple[EmbeddingState, ForwardReport]:
    """Plain-array wrapper around the differentiable sweep."""
    st, report = forward_tensors(g, plan, params, emb, cfg)
    return st.to_embedding(), report


# --- heads, losses, metrics ---------------------------------------------------

def _cosine_rows(a: Tensor, b: Tensor) -> Tensor:
    dots = tz.sum_rows(tz.mul(a, b))
    na = tz.sqrt(tz.add_const(tz.sum_rows(tz.mul(a, a)), 1e-12))
    nb = tz.sqrt(tz.add_const(tz.sum_rows(tz.mul(b, b)), 1e-12))
    return tz.div(dots, tz.mul(na, nb))


def predict_heads(g: CircuitGraph, st: _TensorState, params: ParamStore,
                  labels: LabelSet) -> dict[str, Tensor]:
    """Task predictions aligned with the label arrays."""
    out: dict[str, Tensor] = {}
    if labels.rc_pairs:
        lo = [min(a, b) for a, b, _, _ in labels.rc_pairs]
        hi = [max(a, b) for a, b, _, _ in labels.rc_pairs]
        rows = tz.concat_cols([tz.take_rows(st.hs, lo), tz.take_rows(st.hs, hi)])
        out["recon"] = tz.mlp3(rows, params, "head.recon")
    sup = supervised_nodes(g)
    if sup:
        out["logic"] = tz.mlp3(tz.take_rows(st.hf, sup), params, "head.logic")
        out["trans"] = tz.mlp3(tz.take_rows(st.hq, sup), params, "head.trans")
    if labels.f_pairs:
        hi = tz.take_rows(st.hf, [i for i, _, _ in labels.f_pairs])
        hj = tz.take_rows(st.hf, [j for _, j, _ in labels.f_pairs])
        cos = _cosine_rows(hi, hj)
        out["func"] = tz.scale(tz.add_const(tz.scale(cos, -1.0), 1.0), 0.5)
    if labels.ffsim_pairs:
        qi = tz.take_rows(st.hq, [i for i, _, _ in labels.ffsim_pairs])
        qj = tz.take_rows(st.hq, [j for _, j, _ in labels.ffsim_pairs])
        cos = tz.add_const(_cosine_rows(qi, qj), 1.0)
        out["ff_sim"] = tz.scale(cos, 0.5)
    return out


def supervised_nodes(g: CircuitGraph) -> list[int]:
    """Probability supervision applies to gates and FFs, not to inputs."""
    return [v for v in range(g.n) if g.kinds[v] != NodeKind.PI]


def _check_unit(vals, what):
    arr = np.asarray(vals, dtype=float)
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError(f"{what} labels outside [0, 1]")
    return arr


def _bce(pred: Tensor, target: np.ndarray) -> Tensor:
    y = tz.constant(target.reshape(-1, 1))
    one_minus_y = tz.constant(1.0 - target.reshape(-1, 1))
    eps = 1e-7
    t1 = tz.mul(y, tz.log(tz.add_const(pred, eps)))
    t2 = tz.mul(one_minus_y, tz.log(tz.add_const(tz.scale(pred, -1.0), 1.0 + eps)))
    return tz.scale(tz.mean_all(tz.add(t1, t2)), -1.0)


def _l1(pred: Tensor, target: np.ndarray) -> Tensor:
    y = tz.constant(target.reshape(-1, 1))
    return tz.mean_all(tz.absolute(tz.sub(pred, y)))


def task_losses(g: CircuitGraph, preds: dict[str, Tensor],
                labels: LabelSet) -> dict[str, Tensor]:
    """Per-task scalar losses (binary cross-entropy for reconvergence, L1 else)."""
    out: dict[str, Tensor] = {}
    if "recon" in preds:
        rc = _check_unit([l for _, _, _, l in labels.rc_pairs], "reconvergence")
        out["recon"] = _bce(preds["recon"], rc)
    sup = supervised_nodes(g)
    if "logic" in preds:
        out["logic"] = _l1(preds["logic"], _check_unit(labels.p1[sup], "logic"))
    if "trans" in preds:
        out["trans"] = _l1(preds["trans"], _check_unit(labels.ptr[sup], "transition"))
    if "func" in preds:
        out["func"] = _l1(preds["func"],
                          _check_unit([d for _, _, d in labels.f_pairs], "distance"))
    if "ff_sim" in preds:
        out["ff_sim"] = _l1(preds["ff_sim"],
                            _check_unit([s for _, _, s in labels.ffsim_pairs],
                                        "similarity"))
    return out


def weighted_loss(losses: dict[str, Tensor], weights: dict[str, float]) -> Tensor:
    total = None
    for task in TASKS:
        if task in losses and weights.get(task, 0.0) != 0.0:
            term = tz.scale(losses[task], weights[task])
            total = term if total is None else tz.add(total, term)
    if total is None:
        raise ValueError("no active loss terms")
    return total


def prediction_errors(g: CircuitGraph, preds: dict[str, Tensor],
                      labels: LabelSet) -> dict[str, float]:
    """Average absolute prediction error per task."""
    out = {}
    if "recon" in preds:
        y = np.array([l for _, _, _, l in labels.rc_pairs], dtype=float)
        out["recon"] = float(np.mean(np.abs(preds["recon"].data.ravel() - y)))
    sup = supervised_nodes(g)
    if "logic" in preds:
        out["logic"] = float(np.mean(np.abs(preds["logic"].data.ravel()
                                            - labels.p1[sup])))
    if "trans" in preds:
        out["trans"] = float(np.mean(np.abs(preds["trans"].data.ravel()
                                            - labels.ptr[sup])))
    if "func" in preds:
        y = np.array([d for _, _, d in labels.f_pairs])
        out["func"] = float(np.mean(np.abs(preds["func"].data.ravel() - y)))
    if "ff_sim" in preds:
        y = np.array([s for _, _, s in labels.ffsim_pairs])
        out["ff_sim"] = float(np.mean(np.abs(preds["ff_sim"].data.ravel() - y)))
    return out


# --- training -----------------------------------------------------------------

@dataclass
class CircuitRecord:
    """One training example: a circuit, its workload, and its labels."""

    graph: CircuitGraph
    workload: Workload
    labels: LabelSet
    path: str = ""
    plan: PropagationPlan | None = None
    emb0: EmbeddingState | None = None
    schedule: dict | None = None

    def prepare(self, cfg: ModelConfig, seed, index: int):
        if self.plan is None:
            self.plan = levelize(self.graph)
        if self.schedule is None or bool(self.schedule["rev"]) != cfg.reverse_layer:
            self.schedule = compile_schedule(self.graph, self.plan,
                                             cfg.reverse_layer)
        if self.emb0 is None or self.emb0.structure.shape[1] != cfg.dim:
            self.emb0 = init_embeddings(self.graph, self.workload, cfg.dim,
                                        seed=_seed_list(seed) + [index])
        return self


def load_dataset(path) -> list[CircuitRecord]:
    """Read a JSON-lines dataset; circuit paths resolve against the file's dir."""
    import os

    from .aiger import parse_aiger
    from .bench import parse_bench

    base = os.path.dirname(os.path.abspath(path))
    records = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            cpath, wl, _cfg, labels = LabelSet.from_json_record(line)
            full = cpath if os.path.isabs(cpath) else os.path.join(base, cpath)
            with open(full) as cf:
                text = cf.read()
            g = parse_bench(text) if full.endswith(".bench") else parse_aiger(text)
            records.append(CircuitRecord(graph=g, workload=wl, labels=labels,
                                         path=full))
    return records


def run_record(record: CircuitRecord, params: ParamStore, cfg: ModelConfig
               ) -> tuple[dict[str, Tensor], dict[str, Tensor], ForwardReport]:
    st, report = forward_tensors(record.graph, record.plan, params,
                                 record.emb0, cfg, schedule=record.schedule)
    preds = predict_heads(record.graph, st, params, record.labels)
    losses = task_losses(record.graph, preds, record.labels)
    return preds, losses, report


def train(records: list[CircuitRecord], cfg: TrainConfig,
          log_fn=None) -> tuple[ParamStore, list[dict]]:
    """Two-phase curriculum training with gradient accumulation per batch.

    Phase 1 keeps the FF-similarity weight at zero; phase 2 enables all
    weights.  History rows carry per-task mean losses and prediction errors.
    """
    if not records:
        raise ValueError("empty dataset")
    mcfg = cfg.model_config()
    for i, rec in enumerate(records):
        rec.prepare(mcfg, cfg.seed, i)
    params = init_params(cfg.dim, seed=cfg.seed, reverse_layer=cfg.reverse_layer)
    order_rng = np.random.default_rng([cfg.seed, 0x0E70])
    history = []
    total_epochs = cfg.epochs_phase1 + cfg.epochs_phase2
    for epoch in range(1, total_epochs + 1):
        phase = 1 if epoch <= cfg.epochs_phase1 else 2
        weights = cfg.weights(phase)
        order = order_rng.permutation(len(records))
        sums = {t: 0.0 for t in TASKS}
        counts = {t: 0 for t in TASKS}
        pe_sums = {t: 0.0 for t in TASKS}
        for lo in range(0, len(order), cfg.batch_size):
            batch = order[lo:lo + cfg.batch_size]
            params.zero_grads()
            for idx in batch:
                rec = records[idx]
                preds, losses, _ = run_record(rec, params, mcfg)
                total = weighted_loss(losses, weights)
                total.backward()
                pes = prediction_errors(rec.graph, preds, rec.labels)
                for t, l in losses.items():
                    if weights.get(t, 0.0) != 0.0:
                        sums[t] += l.item()
                        pe_sums[t] += pes[t]
                        counts[t] += 1
            params.scale_grads(1.0 / len(batch))
            tz.adam_step(params, cfg.lr)
        row = {"epoch": epoch, "phase": phase}
        for t in TASKS:
            if counts[t]:
                row[f"loss_{t}"] = sums[t] / counts[t]
                row[f"pe_{t}"] = pe_sums[t] / counts[t]
        history.append(row)
        if log_fn is not None:
            log_fn(row)
    return params, history


def evaluate(params: ParamStore, records: list[CircuitRecord],
             cfg: ModelConfig, seed: int = 0) -> dict:
    """Per-task average prediction error, per circuit and pooled."""
    per_circuit = []
    pooled_num = {t: 0.0 for t in TASKS}
    pooled_den = {t: 0 for t in TASKS}
    for i, rec in enumerate(records):
        rec.prepare(cfg, seed, i)
        st, _ = forward_tensors(rec.graph, rec.plan, params, rec.emb0, cfg)
        preds = predict_heads(rec.graph, st, params, rec.labels)
        pes = prediction_errors(rec.graph, preds, rec.labels)
        sizes = {
            "recon": len(rec.labels.rc_pairs),
            "logic": len(supervised_nodes(rec.graph)),
            "trans": len(supervised_nodes(rec.graph)),
            "func": len(rec.labels.f_pairs),
            "ff_sim": len(rec.labels.ffsim_pairs),
        }
        per_circuit.append({"path": rec.path, **{f"pe_{t}": v for t, v in pes.items()}})
        for t, v in pes.items():
            pooled_num[t] += v * sizes[t]
            pooled_den[t] += sizes[t]
    pooled = {f"pe_{t}": pooled_num[t] / pooled_den[t]
              for t in TASKS if pooled_den[t]}
    return {"per_circuit": per_circuit, "pooled": pooled}


def write_history(path, history: list[dict]):
    with open(path, "w") as f:
        for row in history:
            f.write(json.dumps(row) + "\n")
