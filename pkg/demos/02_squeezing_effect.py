"""Watch plain ascent-style unlearning squeeze probability mass into the
model's own high-likelihood alternatives.

Beam-search candidates are drawn once from the memorizing model, banded by
their initial sequence log-probability (top 20% / next 40% / rest), and
re-scored after every unlearning epoch. The high band rises first: the mass
pushed off the target lands on the nearest high-confidence neighbors.
"""

import numpy as np

from unlearnlab import corpus as cp
from unlearnlab import dynamics as dy
from unlearnlab import lm, runner
from unlearnlab.objectives import LossConfig, loss_ga
from unlearnlab.optim import AdamW, OptimizerConfig, lr_at, SchedulerConfig


def train_memorizer(corp, seed=1):
    from unlearnlab.objectives import loss_retain

    arch = lm.ArchConfig(vocab_size=400, context_len=32, d_model=32,
                         n_layers=1, n_heads=2)
    store = lm.init_model(arch, seed)
    opt = AdamW(store.entries, OptimizerConfig(lr=2e-3))
    sched = SchedulerConfig(kind="linear", warmup_fraction=0.05)
    epochs, bs = 200, 16
    total = epochs * (-(-len(corp.records) // bs))
    step = 0
    for epoch in range(epochs):
        for batch in runner._shuffled_batches(corp.records, bs, 0, epoch):
            lv = loss_retain(store, runner._pairs(corp.vocab, batch))
            opt.step(runner._named_grads(lv), lr_at(sched, 2e-3, step, total))
            step += 1
    return store


def main():
    corp = cp.generate_corpus(
        cp.GenConfig(n_entities=30, forget_fraction=0.2,
                     holdout_fraction=0.1), seed=5)
    vocab = corp.vocab
    store = train_memorizer(corp)
    forget = corp.split("forget")

    prompts, refs = [], []
    for rec in forget[:5]:
        p, a = cp.qa_pair_tokens(vocab, rec.question, rec.answer)
        prompts.append((rec.id, p))
        refs.append(a)

    # unlearn with plain ascent, snapshotting each epoch
    opt = AdamW(store.entries, OptimizerConfig(lr=1e-4))
    sched = SchedulerConfig(kind="constant", warmup_fraction=0.0)
    snaps = [store.snapshot()]
    epochs, bs = 10, 4
    step = 0
    total = epochs * (-(-len(forget) // bs))
    for epoch in range(epochs):
        for batch in runner._shuffled_batches(forget, bs, 0, epoch):
            lv = loss_ga(store, runner._pairs(vocab, batch))
            opt.step(runner._named_grads(lv), lr_at(sched, 1e-4, step, total))
            step += 1
        snaps.append(store.snapshot())

    _, agg = dy.squeeze_trace(snaps, prompts, ("beam", 15), max_len=12,
                              eos_id=vocab.eos, exclude_responses=refs)
    print("epoch   high      mid       low")
    for e, row in enumerate(agg.per_epoch_mean_logprob):
        print(f"{e:5d}  {row[0]:8.3f}  {row[1]:8.3f}  {row[2]:8.3f}")
    print("\nhigh band first rises (mass squeezed into neighbors), then "
          "collapses as ascent keeps pushing.")


if __name__ == "__main__":
    main()
