"""Teacher-forced training: losses, Adam, batching, and ablation wiring.

Targets are [start] ++ caption tokens (truncated to max_caption_len) ++
[end]; the decoder consumes target[:-1] and is scored on target[1:], with
pad positions excluded from the loss.  Ablation flags turn encoder input
blocks into constant zeros with their masks off, so the parameters of a
disabled block receive exactly zero gradient.

All randomness (subsampling, shuffling, dropout) flows from one seeded
generator, making loss logs reproducible within a build.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import bpe
from . import graph as graphmod
from . import model as modelmod
from .autodiff import Tensor
from .context import build_context
from .errors import ContractError, InputError, TrainingError

# Parameter-name prefixes whose gradients must be exactly zero under each
# disabled flag.  Flags absent from a group share all their parameters with
# live paths (e.g. token embeddings stay trained through the decoder).
DISABLED_GROUPS = {
    "use_visual": ("visual_proj.", "visual_segment", "graph."),
    "use_graph": ("graph.",),
    "use_edge_feats": ("graph.edge_mlp.",),
    "use_textual": (),
    "use_object_feats": (),
    "use_entity_types": (),
}


def disabled_param_prefixes(flags):
    """Name prefixes of parameter groups dead under these ablation flags."""
    prefixes = set()
    for flag_name, groups in DISABLED_GROUPS.items():
        if not getattr(flags, flag_name):
            prefixes.update(groups)
    return prefixes


@dataclass
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 100
    batch_size: int = 8
    loss_kind: str = "ce"
    focal_gamma: float = 2.0
    seed: int = 0
    data_fraction: float = 1.0
    target_loss: float = None
    flags: modelmod.AblationFlags = field(default_factory=modelmod.AblationFlags)

    def __post_init__(self):
        if self.lr <= 0:
            raise ContractError(f"lr must be positive, got {self.lr}")
        if self.focal_gamma < 0:
            raise ContractError(f"focal gamma must be >= 0, got {self.focal_gamma}")
        if not 0 < self.data_fraction <= 1:
            raise ContractError(f"data_fraction {self.data_fraction} outside (0, 1]")
        if self.epochs < 1 or self.batch_size < 1:
            raise ContractError("epochs and batch_size must be >= 1")
        if self.loss_kind not in ("ce", "weighted_ce", "focal"):
            raise ContractError(f"unknown loss kind {self.loss_kind!r}")


@dataclass
class TrainSample:
    record: object
    context: object
    target_ids: list


def make_train_sample(record, ner_dict, caption, vocab, model_config, include_types=True):
    """Assemble one training sample; captions truncate to max_caption_len."""
    ctx = build_context(ner_dict, vocab, model_config.l_text, include_types=include_types)
    ids = bpe.encode(caption, vocab)[: model_config.max_caption_len]
    target = [vocab.start_id] + ids + [vocab.end_id]
    return TrainSample(record=record, context=ctx, target_ids=target)


def build_dataset(records, ner_records, vocab, model_config, include_types=True):
    """Join visual records with NER records by sample id.

    Every NER record must name an existing feature record and carry a
    caption; missing ids are listed in the error.
    """
    by_id = {r.sample_id: r for r in records}
    missing = sorted({n.sample_id for n in ner_records if n.sample_id not in by_id})
    if missing:
        raise InputError(
            f"{len(missing)} NER id(s) have no feature record: {', '.join(missing)}"
        )
    samples = []
    for n in ner_records:
        if n.caption is None:
            raise InputError(f"NER record {n.sample_id!r} has no caption")
        samples.append(
            make_train_sample(by_id[n.sample_id], n.entities, n.caption, vocab,
                              model_config, include_types=include_types)
        )
    if not samples:
        raise InputError("no NER records to train on")
    return samples


def token_weights(samples, vocab_size, pad_id):
    """Inverse-frequency class weights, clipped to [0.1, 10], mean 1.

    A token appearing at the uniform rate gets raw weight 1; unseen tokens
    clip to the top of the range.
    """
    counts = np.zeros(vocab_size, dtype=np.float64)
    for s in samples:
        for t in s.target_ids:
            if t != pad_id:
                counts[t] += 1
    total = counts.sum()
    if total == 0:
        raise InputError("no tokens to weight")
    uniform = total / vocab_size
    raw = np.where(counts > 0, uniform / np.maximum(counts, 1.0), np.inf)
    clipped = np.clip(raw, 0.1, 10.0)
    return clipped / clipped.mean()


def loss(logits, targets, kind="ce", weights=None, gamma=2.0, pad_id=None):
    """Scalar loss over non-pad target positions.

    ce: mean -log p(target).  weighted_ce: each term scaled by
    weights[target].  focal: mean -(1-p)^gamma log p; gamma=0 reproduces
    ce exactly (the focusing factor collapses to ones with zero gradient).
    """
    targets = np.asarray(targets, dtype=np.int64)
    if pad_id is None:
        raise ContractError("pad_id is required to mask loss terms")
    mask = targets != pad_id
    n_real = int(mask.sum())
    if n_real == 0:
        raise ContractError("no unpadded target positions")
    logp = ad.log_softmax(logits, axis=-1)
    picked = ad.gather_last(logp, targets)
    if kind == "ce":
        terms = ad.neg(picked)
    elif kind == "weighted_ce":
        if weights is None:
            raise ContractError("weighted_ce requires token weights")
        w = np.asarray(weights, dtype=np.float64)[targets]
        terms = ad.mul(ad.neg(picked), Tensor(w))
    elif kind == "focal":
        p = ad.exp(picked)
        focus = ad.pow_const(ad.sub(Tensor(np.ones_like(p.data)), p), gamma)
        terms = ad.mul(focus, ad.neg(picked))
    else:
        raise ContractError(f"unknown loss kind {kind!r}")
    masked = ad.mul(terms, Tensor(mask.astype(np.float64)))
    return ad.mul(ad.sum_(masked), Tensor(np.asarray(1.0 / n_real)))


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self):
        self.t = 0
        self.m = {}
        self.v = {}


def adam_step(named_params, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; missing gradients count as zero."""
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for name, p in named_params.items():
        g = p.grad
        if g is None:
            g = np.zeros_like(p.data)
        elif not np.isfinite(g).all():
            raise TrainingError(f"non-finite gradient in {name!r} at step {state.t}")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        p.data = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def _pad_targets(samples, pad_id):
    longest = max(len(s.target_ids) for s in samples)
    out = np.full((len(samples), longest), pad_id, dtype=np.int64)
    for i, s in enumerate(samples):
        out[i, : len(s.target_ids)] = s.target_ids
    return out


def batch_loss(samples, params, model_config, train_config, weights=None,
               edge_indices=None, training=True, rng=None):
    """Forward pass and loss for one batch of TrainSamples."""
    records = [s.record for s in samples]
    contexts = [s.context for s in samples]
    enc_in = modelmod.assemble_encoder_input(
        records, contexts, params, model_config, flags=train_config.flags,
        edge_indices=edge_indices, training=training, rng=rng,
    )
    memory, memory_mask = modelmod.encode(enc_in, params, model_config,
                                          training=training, rng=rng)
    padded = _pad_targets(samples, model_config.pad_id)
    logits = modelmod.decode_step_logits(padded[:, :-1], memory, memory_mask,
                                         params, model_config,
                                         training=training, rng=rng)
    return loss(
        logits, padded[:, 1:], kind=train_config.loss_kind, weights=weights,
        gamma=train_config.focal_gamma, pad_id=model_config.pad_id,
    ), int((padded[:, 1:] != model_config.pad_id).sum())


def precompute_edges(samples, model_config):
    """Edge indices depend only on the input features; build them once."""
    k = model_config.graph_k
    return [
        graphmod.build_edges(s.record.object_feats, s.record.object_mask, k)
        for s in samples
    ]


def train(dataset, train_config, model_config, params=None):
    """Optimize model parameters; returns (params, loss_log).

    loss_log rows are (epoch, mean_loss, tokens_per_sec).  data_fraction
    keeps a seed-deterministic subset; an empty result is an input error.
    """
    if not dataset:
        raise InputError("training dataset is empty")
    rng = np.random.default_rng(train_config.seed)
    n_keep = int(np.ceil(train_config.data_fraction * len(dataset)))
    order = rng.permutation(len(dataset))[:n_keep]
    data = [dataset[i] for i in order]
    if not data:
        raise InputError("dataset empty after data_fraction subsampling")

    if params is None:
        params = modelmod.ModelParams(model_config, seed=train_config.seed)
    named = params.named_parameters()
    state = AdamState()
    weights = None
    if train_config.loss_kind == "weighted_ce":
        weights = token_weights(data, model_config.vocab_size, model_config.pad_id)
    edges = precompute_edges(data, model_config)

    log = []
    for epoch in range(1, train_config.epochs + 1):
        perm = rng.permutation(len(data))
        epoch_loss = 0.0
        epoch_tokens = 0
        started = time.perf_counter()
        for lo in range(0, len(data), train_config.batch_size):
            idx = perm[lo : lo + train_config.batch_size]
            batch = [data[i] for i in idx]
            batch_edges = [edges[i] for i in idx]
            params.zero_grad()
            value, n_tokens = batch_loss(
                batch, params, model_config, train_config, weights=weights,
                edge_indices=batch_edges, training=True, rng=rng,
            )
            ad.backward(value)
            adam_step(named, state, train_config.lr)
            epoch_loss += value.data.item() * n_tokens
            epoch_tokens += n_tokens
        elapsed = max(time.perf_counter() - started, 1e-9)
        mean_loss = epoch_loss / max(epoch_tokens, 1)
        log.append((epoch, mean_loss, epoch_tokens / elapsed))
        if train_config.target_loss is not None and mean_loss < train_config.target_loss:
            break
    return params, log


def write_loss_log(log, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write("epoch,loss,tokens_per_sec\n")
        for epoch, value, tps in log:
            f.write(f"{epoch},{value:.10f},{tps:.2f}\n")
