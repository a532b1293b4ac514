"""Desk-scale evaluation suite.

Per-record scores (ROUGE-L F1, normalized probability, exact memorization,
extraction strength, truth ratio, degeneracy) are averaged per split and
folded into three harmonic-mean composites:

* memorization (forget split): HM(1-ES, 1-EM, 1-ParaProb, max(0, 1-r))
  with r the perturbed/correct normalized-probability ratio. Higher means
  the forget answers are less strongly parameterized; absolute values are
  a local contract, not comparable to published benchmark tables.
* utility: HM(retain composite, holdout composite, fluency proxy), each
  split composite being HM(norm_prob, rouge_l of the greedy answer,
  inverted truth ratio). Fluency is 1 - degeneracy of greedy generations
  on forget prompts: a heuristic stand-in for a gibberish classifier.
* aggregate: HM(memorization, utility).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import corpus as cp
from . import lm
from .errors import ContractError, DataError

SPLITS = ("forget", "retain", "holdout")
PER_SPLIT_FIELDS = ("rouge_l", "norm_prob", "para_prob", "exact_mem",
                    "extraction_strength", "truth_ratio_inv", "degeneracy")


@dataclass
class MetricsReport:
    per_split: dict[str, dict[str, float]]
    memorization: float
    utility: float
    aggregate: float
    relative_to_ref: dict[str, float] | None = None

    def to_dict(self):
        doc = {
            "per_split": self.per_split,
            "memorization": self.memorization,
            "utility": self.utility,
            "aggregate": self.aggregate,
        }
        if self.relative_to_ref is not None:
            doc["relative_to_ref"] = self.relative_to_ref
        return doc

    def flat_row(self) -> dict[str, float]:
        row = {"memorization": self.memorization, "utility": self.utility,
               "aggregate": self.aggregate}
        for split, vals in self.per_split.items():
            for k, v in vals.items():
                row[f"{split}.{k}"] = v
        return row


def lcs_length(a, b) -> int:
    """Quadratic DP longest common subsequence length."""
    a, b = list(a), list(b)
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_f1(ref, hyp) -> float:
    """F1 over the longest common subsequence; 0 when hyp is empty."""
    ref, hyp = list(ref), list(hyp)
    if not ref:
        raise DataError("reference must be non-empty")
    if not hyp:
        return 0.0
    l = lcs_length(ref, hyp)
    if l == 0:
        return 0.0
    p = l / len(hyp)
    r = l / len(ref)
    return 2 * p * r / (p + r)


def normalized_probability(store: lm.ParamStore, prompt, answer) -> float:
    """Per-token geometric-mean probability: exp(logprob / |answer|)."""
    answer = list(answer)
    if not answer:
        raise DataError("answer must be non-empty")
    return float(np.exp(lm.sequence_logprob(store, prompt, answer) / len(answer)))


def exact_memorization(store: lm.ParamStore, prompt, answer) -> float:
    """Fraction of answer positions whose teacher-forced argmax matches."""
    answer = list(answer)
    if not answer:
        raise DataError("answer must be non-empty")
    seq = list(prompt) + answer
    logits = lm.forward_logits(store, seq)
    pos = np.arange(len(prompt) - 1, len(seq) - 1)
    pred = logits[pos].argmax(axis=-1)
    return float((pred == np.asarray(answer)).mean())


def extraction_strength(store: lm.ParamStore, prompt, answer) -> float:
    """1 - k*/|y| where k* is the shortest answer prefix whose greedy
    continuation reproduces the rest of the answer (k* = |y| vacuously)."""
    answer = list(answer)
    if not answer:
        raise DataError("answer must be non-empty")
    n = len(answer)
    for k in range(n):
        rest = answer[k:]
        out, _ = lm.decode(store, list(prompt) + answer[:k], lm.Greedy(),
                           max_len=len(rest))[0]
        if out == rest:
            return 1.0 - k / n
    return 0.0


def truth_ratio(store: lm.ParamStore, question_paraphrase, correct_answer,
                perturbed_answers) -> tuple[float, float]:
    """r = mean perturbed normalized prob / correct normalized prob.

    Returns (r, max(0, 1 - r)). The inverted form sits near 1 while the
    correct answer dominates its perturbations and falls toward 0 as they
    even out.
    """
    if not perturbed_answers:
        raise DataError("need at least one perturbed answer")
    correct = normalized_probability(store, question_paraphrase, correct_answer)
    perturbed = [normalized_probability(store, question_paraphrase, a)
                 for a in perturbed_answers]
    r = float(np.mean(perturbed) / correct)
    return r, max(0.0, 1.0 - r)


def degeneracy_score(tokens) -> float:
    """max(consecutive-run score, repeated-bigram score), both in [0, 1].

    Run score: (longest identical run - 1) / (n - 1).
    Bigram score: 1 - distinct bigrams / total bigrams.
    Single-token sequences score 0 (no repetition evidence).
    """
    tokens = list(tokens)
    if not tokens:
        raise DataError("tokens must be non-empty")
    n = len(tokens)
    if n == 1:
        return 0.0
    longest = run = 1
    for a, b in zip(tokens, tokens[1:]):
        run = run + 1 if a == b else 1
        longest = max(longest, run)
    run_score = (longest - 1) / (n - 1)
    bigrams = list(zip(tokens, tokens[1:]))
    bigram_score = 1.0 - len(set(bigrams)) / len(bigrams)
    return max(run_score, bigram_score)


def harmonic_mean(values) -> float:
    """n / sum(1/v); 0 when any value is 0; negatives are a contract error."""
    values = [float(v) for v in values]
    if not values:
        raise DataError("harmonic_mean needs at least one value")
    if any(v < 0 for v in values):
        raise ContractError("harmonic_mean inputs must be >= 0")
    if any(v == 0 for v in values):
        return 0.0
    return len(values) / sum(1.0 / v for v in values)


# Whole-model evaluation ------------------------------------------------------


def _strip_specials(vocab: cp.Vocabulary, tokens):
    special = set(vocab.specials.values())
    return [t for t in tokens if t not in special]


def _record_scores(store, vocab, rec: cp.QaRecord, max_len: int):
    prompt, answer = cp.qa_pair_tokens(vocab, rec.question, rec.answer)
    out, _ = lm.decode(store, prompt, lm.Greedy(), max_len, eos_id=vocab.eos)[0]
    para_prompt, _ = cp.qa_pair_tokens(vocab, rec.paraphrases[0], rec.answer)
    _, tr_inv = truth_ratio(
        store, para_prompt, answer,
        [cp.encode(vocab, a) for a in rec.perturbed_answers])
    gen = _strip_specials(vocab, out)
    return {
        "rouge_l": rouge_l_f1(_strip_specials(vocab, answer), gen),
        "norm_prob": normalized_probability(store, prompt, answer),
        "para_prob": normalized_probability(store, para_prompt, answer),
        "exact_mem": exact_memorization(store, prompt, answer),
        "extraction_strength": extraction_strength(store, prompt, answer),
        "truth_ratio_inv": tr_inv,
        "degeneracy": degeneracy_score(out),
    }


def evaluate_model(store: lm.ParamStore, corp: cp.Corpus,
                   ref_store: lm.ParamStore | None = None,
                   max_len: int = 16) -> MetricsReport:
    """Full metric sweep over all three splits plus the HM composites.

    When a reference store is given (the pre-unlearning checkpoint), the
    report carries the retain/holdout normalized-probability ratios against
    it, which is what the degradation gates read.
    """
    vocab = corp.vocab
    per_split = {}
    for split in SPLITS:
        records = corp.split(split)
        if not records:
            raise DataError(f"corpus is missing split {split!r}")
        rows = [_record_scores(store, vocab, r, max_len) for r in records]
        per_split[split] = {k: float(np.mean([row[k] for row in rows]))
                            for k in PER_SPLIT_FIELDS}

    f = per_split["forget"]
    memorization = harmonic_mean([
        1.0 - f["extraction_strength"],
        1.0 - f["exact_mem"],
        1.0 - f["para_prob"],
        f["truth_ratio_inv"],
    ])
    fluency = 1.0 - f["degeneracy"]
    composites = {
        split: harmonic_mean([per_split[split]["norm_prob"],
                              per_split[split]["rouge_l"],
                              per_split[split]["truth_ratio_inv"]])
        for split in ("retain", "holdout")
    }
    utility = harmonic_mean([composites["retain"], composites["holdout"],
                             fluency])
    report = MetricsReport(
        per_split=per_split,
        memorization=float(memorization),
        utility=float(utility),
        aggregate=float(harmonic_mean([memorization, utility])),
    )
    if ref_store is not None:
        ref = {split: float(np.mean([
            normalized_probability(ref_store, *cp.qa_pair_tokens(
                vocab, r.question, r.answer))
            for r in corp.split(split)])) for split in ("retain", "holdout")}
        report.relative_to_ref = {
            f"{split}_norm_prob_ratio":
                (per_split[split]["norm_prob"] / ref[split]
                 if ref[split] > 0 else float("inf"))
            for split in ("retain", "holdout")
        }
    return report
