"""Command-line surface.

Subcommands: gen, sim, label, train, eval, power, reliab, inspect.  Every
run writes a manifest (resolved config, seed, versions) beside its outputs,
and re-running a command from its manifest reproduces the outputs.

Config files are INI documents with one section per subcommand; flags
override file values.  The default config path comes from the
SEQCIRCUIT_CONFIG environment variable.

Exit codes: 0 success, 1 usage error, 2 data/processing error.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from . import model as mdl
from . import power as pw
from . import reliability as rel
from .aiger import emit_aiger, parse_aiger
from .bench import parse_bench
from .circuit import CircuitError, GenSpec, generate, random_spec, validate
from .labels import build_labelset
from .schedule import levelize
from .simulate import (SimConfig, SimulationError, Workload, exhaustive_stats,
                       simulate, write_trace_file)
from .tensor import (CHECKPOINT_VERSION, NumericsError, load_checkpoint,
                     save_checkpoint)

USAGE_EXIT = 1
DATA_EXIT = 2

KNOWN_KEYS = {
    "gen": {"n", "seed", "out", "mean-nodes", "std-nodes", "feedback-prob"},
    "sim": {"aig", "bench", "workload", "workload-seed", "patterns", "cycles",
            "seed", "out", "saif", "trace", "workers", "exact"},
    "label": {"corpus", "out", "seed", "patterns", "cycles", "f-pairs",
              "ffsim-pairs", "workload-seed", "workers"},
    "train": {"dataset", "out-dir", "seed", "dim", "batch-size", "lr",
              "epochs-phase1", "epochs-phase2", "reverse-layer", "cycle-tol",
              "cycle-max-iters", "w-recon", "w-logic", "w-trans", "w-func",
              "w-ff-sim"},
    "eval": {"dataset", "checkpoint", "out"},
    "power": {"aig", "bench", "workload", "workload-seed", "checkpoint",
              "patterns", "cycles", "seed", "capacitance", "vdd",
              "freq-scale", "out", "saif"},
    "reliab": {"aig", "bench", "workload", "workload-seed", "flip-prob",
               "patterns", "cycles", "seed", "out", "checkpoint", "finetune",
               "epochs", "lr", "finetune-out"},
    "inspect": {"aig", "bench", "plan", "graph", "out"},
}


class CliParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        sys.exit(USAGE_EXIT)


class Logger:
    def __init__(self, json_logs: bool):
        self.json_logs = json_logs

    def __call__(self, event: str, **fields):
        if self.json_logs:
            sys.stderr.write(json.dumps({"event": event, **fields}) + "\n")
        else:
            parts = " ".join(f"{k}={v}" for k, v in fields.items())
            sys.stderr.write(f"[{event}] {parts}\n")
        sys.stderr.flush()


def _config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def write_manifest(out_dir: str, command: str, cfg: dict):
    manifest = {
        "command": command,
        "config": cfg,
        "config_hash": _config_hash(cfg),
        "versions": {"seqcircuit": __version__,
                     "checkpoint_format": CHECKPOINT_VERSION},
    }
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{command}.manifest.json")
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def load_config_file(path: str | None, section: str) -> dict:
    if path is None:
        path = os.environ.get("SEQCIRCUIT_CONFIG")
    if path is None:
        return {}
    if not os.path.exists(path):
        raise CircuitError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    parser.read(path)
    if section not in parser:
        return {}
    out = {}
    for key, val in parser[section].items():
        if key not in KNOWN_KEYS[section]:
            raise CircuitError(f"unknown config key [{section}] {key}")
        out[key.replace("-", "_")] = val
    return out


def _merge_config(args: argparse.Namespace, file_vals: dict, defaults: dict):
    """Flags beat config file values beat defaults."""
    merged = dict(defaults)
    merged.update(file_vals)
    for key, val in vars(args).items():
        if val is not None and key in merged:
            merged[key] = val
    for key, val in merged.items():
        if isinstance(defaults.get(key), bool) and isinstance(val, str):
            merged[key] = val.lower() in ("1", "true", "yes", "on")
        elif isinstance(defaults.get(key), int) and not isinstance(val, bool) \
                and val is not None:
            merged[key] = int(val)
        elif isinstance(defaults.get(key), float) and val is not None:
            merged[key] = float(val)
    return merged


def _load_graph(cfg):
    if cfg.get("aig"):
        with open(cfg["aig"]) as f:
            return parse_aiger(f), cfg["aig"]
    if cfg.get("bench"):
        with open(cfg["bench"]) as f:
            return parse_bench(f), cfg["bench"]
    raise CircuitError("need --aig or --bench")


def _load_workload(g, cfg):
    if cfg.get("workload"):
        with open(cfg["workload"]) as f:
            w = Workload.from_json_dict(json.load(f))
        w.check(g)
        return w
    return Workload.random(g, int(cfg.get("workload_seed", 0)))


# --- subcommands ----------------------------------------------------------------

def cmd_gen(cfg, log):
    out_dir = cfg["out"]
    os.makedirs(out_dir, exist_ok=True)
    summaries = []
    rng = np.random.default_rng([cfg["seed"], 0x636F72])
    for i in range(cfg["n"]):
        spec = random_spec(int(rng.integers(2 ** 62)),
                           mean_nodes=cfg["mean_nodes"],
                           std_nodes=cfg["std_nodes"],
                           feedback_prob=cfg["feedback_prob"])
        g, summary = generate(spec, return_summary=True)
        name = f"c{i:04d}.aag"
        with open(os.path.join(out_dir, name), "w") as f:
            f.write(emit_aiger(g))
        summaries.append({"file": name, **summary})
        log("gen", circuit=name, nodes=g.n)
    with open(os.path.join(out_dir, "corpus_summary.json"), "w") as f:
        json.dump({"n_circuits": cfg["n"], "seed": cfg["seed"],
                   "circuits": summaries}, f, indent=2)
        f.write("\n")
    write_manifest(out_dir, "gen", cfg)
    return 0


def cmd_sim(cfg, log, workers):
    g, _ = _load_graph(cfg)
    w = _load_workload(g, cfg)
    sim_cfg = SimConfig(n_patterns=cfg["patterns"], n_cycles=cfg["cycles"],
                        seed=cfg["seed"])
    if cfg.get("exact"):
        stats = exhaustive_stats(g, w, sim_cfg)
    else:
        stats = simulate(g, w, sim_cfg, workers=workers)
    doc = stats.to_json_dict(g)
    doc["workload"] = w.to_json_dict()
    out = cfg.get("out")
    if out:
        with open(out, "w") as f:
            json.dump(doc, f, indent=2)
            f.write("\n")
        write_manifest(os.path.dirname(os.path.abspath(out)), "sim", cfg)
    else:
        json.dump(doc, sys.stdout, indent=2)
        sys.stdout.write("\n")
    if cfg.get("saif"):
        duration = sim_cfg.n_patterns * sim_cfg.n_cycles
        with open(cfg["saif"], "w") as f:
            f.write(pw.export_saif(g, stats.p1, stats.ptr, duration))
    if cfg.get("trace"):
        if not stats.traces and cfg.get("exact"):
            raise SimulationError("exact statistics carry no traces")
        write_trace_file(cfg["trace"], stats)
    log("sim", nodes=g.n, patterns=sim_cfg.n_patterns)
    return 0


def cmd_label(cfg, log, workers):
    corpus = cfg["corpus"]
    files = sorted(f for f in os.listdir(corpus)
                   if f.endswith(".aag") or f.endswith(".bench"))
    if not files:
        raise CircuitError(f"no circuits in {corpus}")
    sim_cfg = SimConfig(n_patterns=cfg["patterns"], n_cycles=cfg["cycles"],
                        seed=cfg["seed"])
    out = cfg["out"]
    with open(out, "w") as f:
        for i, name in enumerate(files):
            path = os.path.join(corpus, name)
            with open(path) as cf:
                g = (parse_bench(cf) if name.endswith(".bench")
                     else parse_aiger(cf))
            w = Workload.random(g, int(cfg.get("workload_seed", 0)) + i)
            labels = build_labelset(
                g, w, replace(sim_cfg, seed=sim_cfg.seed + i),
                f_target=cfg["f_pairs"] if cfg["f_pairs"] >= 0 else None,
                ffsim_target=cfg["ffsim_pairs"] if cfg["ffsim_pairs"] >= 0 else None,
                seed=cfg["seed"] + i)
            relpath = os.path.relpath(path, os.path.dirname(os.path.abspath(out)))
            f.write(labels.to_json_record(relpath, w,
                                          replace(sim_cfg, seed=sim_cfg.seed + i)))
            f.write("\n")
            log("label", circuit=name, rc=len(labels.rc_pairs),
                f=len(labels.f_pairs), ffsim=len(labels.ffsim_pairs))
    write_manifest(os.path.dirname(os.path.abspath(out)), "label", cfg)
    return 0


def cmd_train(cfg, log):
    records = mdl.load_dataset(cfg["dataset"])
    tcfg = mdl.TrainConfig(
        batch_size=cfg["batch_size"], epochs_phase1=cfg["epochs_phase1"],
        epochs_phase2=cfg["epochs_phase2"], lr=cfg["lr"],
        w_recon=cfg["w_recon"], w_logic=cfg["w_logic"],
        w_trans=cfg["w_trans"], w_func=cfg["w_func"],
        w_ff_sim=cfg["w_ff_sim"], seed=cfg["seed"], dim=cfg["dim"],
        reverse_layer=cfg["reverse_layer"], cycle_tol=cfg["cycle_tol"],
        cycle_max_iters=cfg["cycle_max_iters"])
    params, history = mdl.train(records, tcfg,
                                log_fn=lambda row: log("epoch", **row))
    out_dir = cfg["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    save_checkpoint(os.path.join(out_dir, "checkpoint.bin"), params,
                    extra={"dim": tcfg.dim, "seed": tcfg.seed,
                           "reverse_layer": tcfg.reverse_layer,
                           "cycle_tol": tcfg.cycle_tol,
                           "cycle_max_iters": tcfg.cycle_max_iters})
    mdl.write_history(os.path.join(out_dir, "history.jsonl"), history)
    write_manifest(out_dir, "train", cfg)
    return 0


def _model_config_from_extra(extra) -> tuple[mdl.ModelConfig, int]:
    cfg = mdl.ModelConfig(dim=int(extra.get("dim", 128)),
                          reverse_layer=bool(extra.get("reverse_layer", True)),
                          cycle_tol=float(extra.get("cycle_tol", 1e-3)),
                          cycle_max_iters=int(extra.get("cycle_max_iters", 3)))
    return cfg, int(extra.get("seed", 0))


def cmd_eval(cfg, log):
    records = mdl.load_dataset(cfg["dataset"])
    params, extra = load_checkpoint(cfg["checkpoint"])
    mcfg, seed = _model_config_from_extra(extra)
    report = mdl.evaluate(params, records, mcfg, seed=seed)
    out = cfg.get("out")
    if out:
        with open(out, "w") as f:
            json.dump(report, f, indent=2)
            f.write("\n")
        write_manifest(os.path.dirname(os.path.abspath(out)), "eval", cfg)
    else:
        json.dump(report, sys.stdout, indent=2)
        sys.stdout.write("\n")
    log("eval", **report["pooled"])
    return 0


def cmd_power(cfg, log, workers):
    g, _ = _load_graph(cfg)
    w = _load_workload(g, cfg)
    sim_cfg = SimConfig(n_patterns=cfg["patterns"], n_cycles=cfg["cycles"],
                        seed=cfg["seed"])
    pc = pw.PowerConfig(capacitance=cfg["capacitance"], vdd=cfg["vdd"],
                        freq_scale=cfg["freq_scale"])
    mask = pw.gate_output_mask(g)
    stats = simulate(g, w, sim_cfg, workers=workers)
    report = {"simulated_power": pw.power_estimate(stats.ptr, pc, mask),
              "masked_nodes": int(mask.sum())}
    if cfg.get("checkpoint"):
        params, extra = load_checkpoint(cfg["checkpoint"])
        mcfg, seed = _model_config_from_extra(extra)
        tr_hat = pw.predicted_transitions(params, g, w, mcfg, seed=seed)
        report["predicted_power"] = pw.power_estimate(tr_hat, pc, mask)
        report["rel_error"] = (abs(report["predicted_power"]
                                   - report["simulated_power"])
                               / max(report["simulated_power"], 1e-12))
    if cfg.get("saif"):
        duration = sim_cfg.n_patterns * sim_cfg.n_cycles
        with open(cfg["saif"], "w") as f:
            f.write(pw.export_saif(g, stats.p1, stats.ptr, duration))
    out = cfg.get("out")
    if out:
        with open(out, "w") as f:
            json.dump(report, f, indent=2)
            f.write("\n")
        write_manifest(os.path.dirname(os.path.abspath(out)), "power", cfg)
    else:
        json.dump(report, sys.stdout, indent=2)
        sys.stdout.write("\n")
    log("power", **{k: v for k, v in report.items() if k != "per_workload"})
    return 0


def cmd_reliab(cfg, log):
    g, _ = _load_graph(cfg)
    w = _load_workload(g, cfg)
    fc = rel.FaultConfig(flip_prob=cfg["flip_prob"], n_patterns=cfg["patterns"],
                         n_cycles=cfg["cycles"], seed=cfg["seed"])
    labels = rel.reliability_labels(g, w, fc)
    out = cfg.get("out")
    if out:
        with open(out, "w") as f:
            f.write(labels.to_json_lines(g))
        write_manifest(os.path.dirname(os.path.abspath(out)), "reliab", cfg)
    else:
        sys.stdout.write(labels.to_json_lines(g))
    log("reliab", mean_p01=float(labels.p01.mean()),
        mean_p10=float(labels.p10.mean()))
    if cfg.get("finetune"):
        if not cfg.get("checkpoint"):
            raise CircuitError("--finetune needs --checkpoint")
        params, extra = load_checkpoint(cfg["checkpoint"])
        mcfg, seed = _model_config_from_extra(extra)
        tcfg = mdl.TrainConfig(dim=mcfg.dim, reverse_layer=mcfg.reverse_layer,
                               cycle_tol=mcfg.cycle_tol,
                               cycle_max_iters=mcfg.cycle_max_iters,
                               lr=cfg["lr"], seed=seed)
        tuned, history = rel.finetune_reliability(params, g, w, labels, tcfg,
                                                  epochs=cfg["epochs"])
        log("reliab_finetune", final_pe=history[-1]["pe_flip"])
        if cfg.get("finetune_out"):
            save_checkpoint(cfg["finetune_out"], tuned,
                            extra={"dim": mcfg.dim, "seed": seed,
                                   "reverse_layer": mcfg.reverse_layer,
                                   "cycle_tol": mcfg.cycle_tol,
                                   "cycle_max_iters": mcfg.cycle_max_iters})
    return 0


def cmd_inspect(cfg, log):
    g, path = _load_graph(cfg)
    doc = {}
    if cfg.get("graph") or not cfg.get("plan"):
        doc["graph"] = {
            "file": path, "counts": g.counts(), "outputs": list(g.pos),
            "violations": [str(v) for v in validate(g)],
        }
    if cfg.get("plan"):
        doc["plan"] = json.loads(levelize(g).to_json())
    out = cfg.get("out")
    text = json.dumps(doc, indent=2) + "\n"
    if out:
        with open(out, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return 0


# --- argument plumbing -----------------------------------------------------------

def build_parser() -> CliParser:
    p = CliParser(prog="seqcircuit",
                  description="Sequential netlist learning toolkit")
    p.add_argument("--version", action="version",
                   version=f"seqcircuit {__version__} "
                           f"(checkpoint format v{CHECKPOINT_VERSION})")
    p.add_argument("--config", help="INI config file (or $SEQCIRCUIT_CONFIG)")
    p.add_argument("--json-logs", action="store_true",
                   help="stream progress as JSON lines on stderr")
    p.add_argument("--workers", type=int, default=None,
                   help="pattern sharding width (default: CPU count)")
    sub = p.add_subparsers(dest="command")

    sp = sub.add_parser("gen", help="generate a random circuit corpus")
    sp.add_argument("--n", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out")
    sp.add_argument("--mean-nodes", type=float, dest="mean_nodes")
    sp.add_argument("--std-nodes", type=float, dest="std_nodes")
    sp.add_argument("--feedback-prob", type=float, dest="feedback_prob")

    sp = sub.add_parser("sim", help="simulate a circuit under a workload")
    _circuit_args(sp)
    sp.add_argument("--patterns", type=int)
    sp.add_argument("--cycles", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out")
    sp.add_argument("--saif")
    sp.add_argument("--trace")
    sp.add_argument("--exact", action="store_const", const=True)

    sp = sub.add_parser("label", help="build a labeled dataset from a corpus")
    sp.add_argument("--corpus")
    sp.add_argument("--out")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--patterns", type=int)
    sp.add_argument("--cycles", type=int)
    sp.add_argument("--f-pairs", type=int, dest="f_pairs")
    sp.add_argument("--ffsim-pairs", type=int, dest="ffsim_pairs")
    sp.add_argument("--workload-seed", type=int, dest="workload_seed")

    sp = sub.add_parser("train", help="train the model on a dataset")
    sp.add_argument("--dataset")
    sp.add_argument("--out-dir", dest="out_dir")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--dim", type=int)
    sp.add_argument("--batch-size", type=int, dest="batch_size")
    sp.add_argument("--lr", type=float)
    sp.add_argument("--epochs-phase1", type=int, dest="epochs_phase1")
    sp.add_argument("--epochs-phase2", type=int, dest="epochs_phase2")
    sp.add_argument("--reverse-layer", dest="reverse_layer")
    sp.add_argument("--cycle-tol", type=float, dest="cycle_tol")
    sp.add_argument("--cycle-max-iters", type=int, dest="cycle_max_iters")
    for w in ("recon", "logic", "trans", "func", "ff-sim"):
        sp.add_argument(f"--w-{w}", type=float, dest=f"w_{w.replace('-', '_')}")

    sp = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    sp.add_argument("--dataset")
    sp.add_argument("--checkpoint")
    sp.add_argument("--out")

    sp = sub.add_parser("power", help="estimate dynamic power")
    _circuit_args(sp)
    sp.add_argument("--checkpoint")
    sp.add_argument("--patterns", type=int)
    sp.add_argument("--cycles", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--capacitance", type=float)
    sp.add_argument("--vdd", type=float)
    sp.add_argument("--freq-scale", type=float, dest="freq_scale")
    sp.add_argument("--out")
    sp.add_argument("--saif")

    sp = sub.add_parser("reliab", help="fault-injection labels and fine-tuning")
    _circuit_args(sp)
    sp.add_argument("--flip-prob", type=float, dest="flip_prob")
    sp.add_argument("--patterns", type=int)
    sp.add_argument("--cycles", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out")
    sp.add_argument("--checkpoint")
    sp.add_argument("--finetune", action="store_const", const=True)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--finetune-out", dest="finetune_out")

    sp = sub.add_parser("inspect", help="dump graph facts or the propagation plan")
    _circuit_args(sp)
    sp.add_argument("--plan", action="store_const", const=True)
    sp.add_argument("--graph", action="store_const", const=True)
    sp.add_argument("--out")
    return p


def _circuit_args(sp):
    sp.add_argument("--aig")
    sp.add_argument("--bench")
    sp.add_argument("--workload")
    sp.add_argument("--workload-seed", type=int, dest="workload_seed")


DEFAULTS = {
    "gen": {"n": 10, "seed": 0, "out": "corpus", "mean_nodes": 214.35,
            "std_nodes": 92.63, "feedback_prob": 0.5},
    "sim": {"aig": "", "bench": "", "workload": "", "workload_seed": 0,
            "patterns": 1000, "cycles": 100, "seed": 0, "out": "",
            "saif": "", "trace": "", "exact": False},
    "label": {"corpus": "corpus", "out": "dataset.jsonl", "seed": 0,
              "patterns": 1000, "cycles": 100, "f_pairs": -1,
              "ffsim_pairs": -1, "workload_seed": 0},
    "train": {"dataset": "dataset.jsonl", "out_dir": "run", "seed": 0,
              "dim": 128, "batch_size": 16, "lr": 1e-4, "epochs_phase1": 40,
              "epochs_phase2": 40, "reverse_layer": True, "cycle_tol": 1e-3,
              "cycle_max_iters": 3, "w_recon": 1.0, "w_logic": 1.0,
              "w_trans": 1.0, "w_func": 1.0, "w_ff_sim": 1.0},
    "eval": {"dataset": "dataset.jsonl", "checkpoint": "run/checkpoint.bin",
             "out": ""},
    "power": {"aig": "", "bench": "", "workload": "", "workload_seed": 0,
              "checkpoint": "", "patterns": 1000, "cycles": 100, "seed": 0,
              "capacitance": 1.0, "vdd": 1.0, "freq_scale": 1.0, "out": "",
              "saif": ""},
    "reliab": {"aig": "", "bench": "", "workload": "", "workload_seed": 0,
               "flip_prob": 0.0005, "patterns": 1000, "cycles": 100,
               "seed": 0, "out": "", "checkpoint": "", "finetune": False,
               "epochs": 50, "lr": 1e-4, "finetune_out": ""},
    "inspect": {"aig": "", "bench": "", "workload": "", "workload_seed": 0,
                "plan": False, "graph": False, "out": ""},
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return USAGE_EXIT
    log = Logger(args.json_logs)
    workers = args.workers if args.workers else (os.cpu_count() or 1)
    try:
        file_vals = load_config_file(args.config, args.command)
        cfg = _merge_config(args, file_vals, DEFAULTS[args.command])
        if args.command == "gen":
            return cmd_gen(cfg, log)
        if args.command == "sim":
            return cmd_sim(cfg, log, workers)
        if args.command == "label":
            return cmd_label(cfg, log, workers)
        if args.command == "train":
            return cmd_train(cfg, log)
        if args.command == "eval":
            return cmd_eval(cfg, log)
        if args.command == "power":
            return cmd_power(cfg, log, workers)
        if args.command == "reliab":
            return cmd_reliab(cfg, log)
        if args.command == "inspect":
            return cmd_inspect(cfg, log)
        parser.error(f"unknown command {args.command}")
    except (CircuitError, SimulationError, NumericsError, pw.PowerError,
            OSError, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return DATA_EXIT
    return 0


if __name__ == "__main__":
    sys.exit(main())
