#!/usr/bin/env python3
"""Workload generalization study for power estimation.

Fine-tunes a model on one larger circuit under many random workloads, then
reports attained power error on held-out workloads against simulated ground
truth.
"""
import argparse
import sys
import time

import numpy as np

import seqcircuit as sq
from seqcircuit import model as mdl
from seqcircuit import power as pw
from seqcircuit.labels import build_labelset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--nodes", type=int, default=800)
    ap.add_argument("--train-workloads", type=int, default=12)
    ap.add_argument("--held-out", type=int, default=5)
    ap.add_argument("--epochs", type=int, default=5)
    ap.add_argument("--dim", type=int, default=16)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    n = args.nodes
    g = sq.generate(sq.GenSpec(n_pi=max(4, n // 50), n_and=int(n * 0.70),
                               n_not=int(n * 0.20), n_ff=int(n * 0.08),
                               seed=args.seed + 77, feedback_prob=0.3))
    print(f"target circuit: {g.n} nodes "
          f"({len(g.ffs)} FFs, {len(g.pis)} PIs)")
    sim_cfg = sq.SimConfig(n_patterns=400, n_cycles=60, seed=args.seed)

    print("pre-training on a small corpus...")
    records = []
    for i in range(4):
        sg = sq.generate(sq.GenSpec(n_pi=5, n_and=25, n_not=10, n_ff=5,
                                    seed=200 + i, feedback_prob=0.3))
        swl = sq.Workload.random(sg, 300 + i)
        records.append(mdl.CircuitRecord(
            graph=sg, workload=swl,
            labels=build_labelset(sg, swl, sq.SimConfig(300, 50, i), seed=i)))
    pre, _ = mdl.train(records, mdl.TrainConfig(
        dim=args.dim, epochs_phase1=10, epochs_phase2=10, lr=2e-3,
        seed=args.seed, batch_size=4))

    train_wl = [sq.Workload.random(g, 1000 + i)
                for i in range(args.train_workloads)]
    held_wl = [sq.Workload.random(g, 9000 + i) for i in range(args.held_out)]

    t0 = time.time()
    tcfg = mdl.TrainConfig(dim=args.dim, epochs_phase1=args.epochs,
                           epochs_phase2=0, lr=3e-3, seed=args.seed + 1,
                           batch_size=5)
    tuned, history = pw.finetune_workloads(pre, g, train_wl, tcfg, sim_cfg)
    print(f"fine-tuned in {time.time() - t0:.0f}s; transition-probability "
          f"error per epoch: {[round(h['pe_trans'], 4) for h in history]}")

    pc = pw.PowerConfig()
    mcfg = tcfg.model_config()
    rep_in = pw.power_error_report(tuned, g, train_wl, mcfg, pc, sim_cfg,
                                   seed=args.seed + 1)
    rep_out = pw.power_error_report(tuned, g, held_wl, mcfg, pc, sim_cfg,
                                    seed=args.seed + 2)
    in_err = np.mean([r["rel_error"] for r in rep_in])
    out_err = np.mean([r["rel_error"] for r in rep_out])
    print(f"\nin-sample power error:  {in_err:.3f}")
    for k, r in enumerate(rep_out):
        print(f"held-out workload {k}: ground truth {r['gt_power']:.4f}, "
              f"estimate {r['est_power']:.4f}, error {r['rel_error']:.3f}")
    print(f"held-out power error:   {out_err:.3f} "
          f"({out_err / max(in_err, 1e-12):.2f}x in-sample)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
