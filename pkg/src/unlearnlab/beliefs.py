"""Model-belief machinery: top-k belief extraction with renormalization,
soft-target construction, and temperature-sampled sequence augmentation.

Beliefs are treated as gradient-blocked targets everywhere: the graph-level
helper wraps the renormalized top-k distribution in a stop-gradient node, so
no loss can push parameters through it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import lm
from .errors import ConfigError


@dataclass
class BeliefDistribution:
    """Renormalized mass of the k most likely tokens; zero elsewhere."""
    probs: np.ndarray
    support: np.ndarray  # the k retained token ids, most likely first


@dataclass
class SoftTarget:
    """Convex mix of a one-hot label and a gradient-blocked belief."""
    probs: np.ndarray
    lambda_bst: float
    target_id: int


@dataclass
class AugmentedSet:
    """Temperature-sampled responses used as extra forgetting targets."""
    prompt_id: str
    responses: list[list[int]]
    tau: float
    seed: int


def topk_support(probs: np.ndarray, k: int) -> np.ndarray:
    """Ids of the k largest probabilities; ties break toward the lowest id."""
    v = probs.shape[-1]
    if k < 1 or k > v:
        raise ConfigError(f"k must be in [1, {v}], got {k}")
    order = np.lexsort((np.arange(v), -probs))
    return order[:k]


def topk_belief(probs: np.ndarray, k: int,
                smoothing_tau: float = 1.0) -> BeliefDistribution:
    """Keep the top-k mass and renormalize it to 1.

    `smoothing_tau` optionally tempers the distribution before truncation
    (p ** (1/tau), renormalized); 1.0 leaves it untouched.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if smoothing_tau <= 0:
        raise ConfigError("smoothing_tau must be > 0")
    if smoothing_tau != 1.0:
        probs = probs ** (1.0 / smoothing_tau)
        probs = probs / probs.sum()
    support = topk_support(probs, k)
    out = np.zeros_like(probs)
    out[support] = probs[support]
    out /= out.sum()
    return BeliefDistribution(probs=out, support=support)


def soft_target(belief: BeliefDistribution, target_id: int,
                lambda_bst: float) -> SoftTarget:
    """t = lambda * q + (1 - lambda) * e_target."""
    if not 0.0 <= lambda_bst <= 1.0:
        raise ConfigError("lambda_bst must be in [0, 1]")
    t = lambda_bst * belief.probs.copy()
    t[target_id] += 1.0 - lambda_bst
    return SoftTarget(probs=t, lambda_bst=lambda_bst, target_id=int(target_id))


def belief_node(pi: ad.Node, k: int, smoothing_tau: float = 1.0) -> ad.Node:
    """Graph-level top-k belief over the last axis, wrapped in stop-gradient.

    `pi` holds probability vectors on its last axis (any leading shape).
    The support is chosen from the current values; the renormalization is
    built from graph ops and then frozen, so the q branch of any loss
    contributes exactly zero gradient.
    """
    probs = pi.value
    v = probs.shape[-1]
    if k < 1 or k > v:
        raise ConfigError(f"k must be in [1, {v}], got {k}")
    if smoothing_tau <= 0:
        raise ConfigError("smoothing_tau must be > 0")
    flat = probs.reshape(-1, v)
    if smoothing_tau != 1.0:
        flat = flat ** (1.0 / smoothing_tau)
        flat = flat / flat.sum(axis=-1, keepdims=True)
    mask = np.zeros_like(flat)
    ids = np.arange(v)
    for row in range(flat.shape[0]):
        mask[row, np.lexsort((ids, -flat[row]))[:k]] = 1.0
    mask = mask.reshape(probs.shape)
    if smoothing_tau != 1.0:
        # Smoothing rescales mass before truncation; handled on raw values.
        smoothed = ad.constant(flat.reshape(probs.shape))
        kept = ad.mul(smoothed, ad.constant(mask))
    else:
        kept = ad.mul(pi, ad.constant(mask))
    q = ad.div(kept, ad.sum_axis(kept, axis=-1, keepdims=True))
    return ad.stop_gradient(q)


def sample_augmentations(store: lm.ParamStore, prompt, prompt_id: str, n: int,
                         tau: float, seed: int, max_len: int,
                         eos_id: int | None = None,
                         counter: int = 0) -> AugmentedSet:
    """Draw n independent temperature-decoded responses from the live model.

    Deterministic in (seed, counter): trainers bump `counter` per batch so
    augmentations track the current model while staying reproducible.
    """
    if n < 1:
        raise ConfigError("n must be >= 1")
    if tau <= 0:
        raise ConfigError("tau must be > 0")
    responses = []
    for j in range(n):
        strat = lm.Temperature(tau=tau, seed=_mix(seed, counter, j))
        toks, _ = lm.decode(store, prompt, strat, max_len, eos_id=eos_id)[0]
        responses.append(toks)
    return AugmentedSet(prompt_id=prompt_id, responses=responses,
                        tau=tau, seed=seed)


def _mix(seed: int, counter: int, j: int) -> int:
    return int(np.random.SeedSequence([seed, counter, j]).generate_state(1)[0])


def save_augmented_sets(sets, path):
    """Audit log: one JSON line per augmented set."""
    import json

    with open(path, "w") as f:
        for s in sets:
            f.write(json.dumps(
                {"prompt_id": s.prompt_id, "tau": s.tau, "seed": s.seed,
                 "responses": [list(map(int, r)) for r in s.responses]},
                sort_keys=True) + "\n")


def load_augmented_sets(path) -> list[AugmentedSet]:
    import json

    out = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                doc = json.loads(line)
                out.append(AugmentedSet(prompt_id=doc["prompt_id"],
                                        responses=doc["responses"],
                                        tau=doc["tau"], seed=doc["seed"]))
    return out
