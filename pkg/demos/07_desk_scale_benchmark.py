"""Desk-scale benchmark harness: multi-seed training of the stochastic model
against the deterministic baseline with default hyperparameters.

Point it at a prepared raw interaction file ("user item" lines) for the full
benchmark, or run it with no arguments for a scaled-down synthetic stand-in
that exercises exactly the same pipeline:

    python3 demos/07_desk_scale_benchmark.py [raw_file] [n_seeds]

The full-size run with the default config (dim 64, 2 blocks, max_len 50,
5 seeds, both arms) takes hours on one machine.
"""

import sys
import tempfile

import numpy as np

from skewrec import corpus, evaluation, training
from skewrec.config import TrainConfig


def load_raw(path, max_len):
    log = corpus.load_interactions(path)
    seqs, dropped = corpus.build_sequences(log, max_len)
    split = corpus.split_leave_one_out(seqs, log.n_items, max_len, log.item_ids,
                                       dropped)
    return split, corpus.build_cooc(split)


def synthetic_stand_in(max_len):
    rng = np.random.default_rng(0)
    lines = []
    for u in range(400):
        stride = int(rng.integers(1, 5))
        pos = int(rng.integers(0, 60))
        for _ in range(int(rng.integers(8, 20))):
            lines.append(f"{u} {pos + 1}")
            pos = (pos + stride) % 60
            if rng.random() < 0.08:
                pos = int(rng.integers(0, 60))
    with tempfile.NamedTemporaryFile("w", suffix=".txt", delete=False) as fh:
        fh.write("\n".join(lines))
        return load_raw(fh.name, max_len)


if len(sys.argv) > 1:
    cfg_kw = {}
    split, cooc = load_raw(sys.argv[1], 50)
else:
    print("no raw file given: running the scaled-down synthetic stand-in\n")
    cfg_kw = dict(dim=32, max_len=20, max_epochs=40, eval_every=5, patience=2,
                  batch_size=64, k_neg_eval=50)
    split, cooc = synthetic_stand_in(20)

n_seeds = int(sys.argv[2]) if len(sys.argv) > 2 else 5
print(f"corpus: {split.n_users} users, {split.n_items} items, seeds 1..{n_seeds}")

results = {"stochastic": [], "baseline": []}
for seed in range(1, n_seeds + 1):
    for arm, base in (("stochastic", False), ("baseline", True)):
        cfg = TrainConfig(seed=seed, baseline=base, **cfg_kw)
        res = training.train(cfg, split, cooc)
        m = evaluation.evaluate(res.checkpoint.params, cfg, split, cooc, "test",
                                seed=seed)
        results[arm].append((res.checkpoint.best_metric, m.hit[10], m.ndcg[10]))
        print(f"  seed {seed} {arm:<11} val hit@10 {res.checkpoint.best_metric:.4f}  "
              f"test hit@10 {m.hit[10]:.4f}  ndcg@10 {m.ndcg[10]:.4f}")

print("\nmean over seeds (val hit@10 / test hit@10 / test ndcg@10):")
for arm, rows in results.items():
    arr = np.array(rows)
    print(f"  {arm:<11} {arr[:, 0].mean():.4f} / {arr[:, 1].mean():.4f} / "
          f"{arr[:, 2].mean():.4f}")
delta = (np.array(results["stochastic"])[:, 1] -
         np.array(results["baseline"])[:, 1])
print(f"\nstochastic - baseline test hit@10 per seed: {np.round(delta, 4)}")
