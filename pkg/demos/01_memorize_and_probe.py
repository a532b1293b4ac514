"""Train a miniature model until it memorizes a synthetic QA corpus, then
probe it with the evaluation metrics.

Runs in well under a minute on a laptop CPU. For the full desk-scale
pipeline use the CLI (see README).
"""

import numpy as np

from unlearnlab import corpus as cp
from unlearnlab import lm, metrics as mt, runner
from unlearnlab.objectives import LossConfig, loss_retain
from unlearnlab.optim import AdamW, OptimizerConfig, SchedulerConfig, lr_at


def main():
    corp = cp.generate_corpus(
        cp.GenConfig(n_entities=30, forget_fraction=0.2,
                     holdout_fraction=0.1), seed=5)
    print(f"corpus: {len(corp.records)} records, vocab {len(corp.vocab)}")
    rec = corp.split("forget")[0]
    print(f"  sample Q: {rec.question}")
    print(f"  sample A: {rec.answer}")

    arch = lm.ArchConfig(vocab_size=400, context_len=32, d_model=32,
                         n_layers=1, n_heads=2)
    store = lm.init_model(arch, 1)
    opt = AdamW(store.entries, OptimizerConfig(lr=2e-3))
    sched = SchedulerConfig(kind="linear", warmup_fraction=0.05)
    epochs, bs = 150, 16
    total = epochs * (-(-len(corp.records) // bs))
    step = 0
    for epoch in range(epochs):
        for batch in runner._shuffled_batches(corp.records, bs, 0, epoch):
            lv = loss_retain(store, runner._pairs(corp.vocab, batch))
            opt.step(runner._named_grads(lv), lr_at(sched, 2e-3, step, total))
            step += 1
        if (epoch + 1) % 50 == 0:
            print(f"epoch {epoch + 1}: NLL {lv.value:.3f}")

    vocab = corp.vocab
    prompt, answer = cp.qa_pair_tokens(vocab, rec.question, rec.answer)
    out, _ = lm.decode(store, prompt, lm.Greedy(), 16, eos_id=vocab.eos)[0]
    print(f"greedy answer: {cp.decode_text(vocab, out)}")
    print(f"exact memorization: "
          f"{mt.exact_memorization(store, prompt, answer):.3f}")
    print(f"extraction strength: "
          f"{mt.extraction_strength(store, prompt, answer):.3f}")
    report = mt.evaluate_model(store, corp)
    print(f"memorization={report.memorization:.3f} "
          f"utility={report.utility:.3f} aggregate={report.aggregate:.3f}")


if __name__ == "__main__":
    main()
