"""Context-conditioned captioning transformer.

The encoder reads one combined sequence: a projected image embedding, the
graph-enhanced object features, the object-relation edge features, and the
embedded entity-context tokens, each block with its own mask.  The decoder
is a standard causal transformer with cross-attention over the encoder
memory and a vocabulary projection; generation is greedy or beam search.

Visual positions carry a learned segment vector instead of positions (they
are a set, not a sequence); text positions share one learned position table
with the decoder.  Layers are pre-norm by default with a post-norm config
flag.  Masked attention uses a -1e9 fill, which in 64-bit mode drives
masked attention weights to exactly zero, so padding is bit-neutral.
"""

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import graph as graphmod
from .autodiff import Tensor
from .bpe import BpeVocab
from .errors import ContractError, SchemaError

_CKPT_MAGIC = b"OOCK"
_CKPT_VERSION = 1
_NEG_FILL = -1e9


@dataclass
class ModelConfig:
    vocab_size: int
    start_id: int
    end_id: int
    pad_id: int
    d_model: int = 128
    n_heads: int = 4
    n_layers: int = 3
    d_ff: int = 512
    l_text: int = 20
    n_obj: int = 10
    d_vis: int = 1024
    max_caption_len: int = 100
    dropout: float = 0.1
    graph_k: int = 5
    graph_t: int = 2
    graph_hidden: int = None
    tie_output: bool = False
    pre_norm: bool = True

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ContractError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}"
            )
        if self.max_caption_len < 2:
            raise ContractError("max_caption_len must be >= 2")
        ids = (self.start_id, self.end_id, self.pad_id)
        if len(set(ids)) != 3 or any(not 0 <= i < self.vocab_size for i in ids):
            raise ContractError("start/end/pad ids must be distinct and < vocab_size")

    @property
    def edge_cap(self):
        return self.n_obj * self.graph_k

    @property
    def max_positions(self):
        return max(self.l_text, self.max_caption_len + 1)

    def graph_config(self):
        return graphmod.GraphConfig(
            d_vis=self.d_vis, K=self.graph_k, T=self.graph_t, hidden_dim=self.graph_hidden
        )

    def to_json(self):
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


@dataclass
class AblationFlags:
    """Which encoder input blocks are live; disabled blocks become constant
    zeros with mask off, so their parameters receive exactly zero gradient."""

    use_visual: bool = True
    use_textual: bool = True
    use_graph: bool = True
    use_edge_feats: bool = True
    use_object_feats: bool = True
    use_entity_types: bool = True


class _Attention:
    def __init__(self, d_model, rng):
        def linear(d_in, d_out):
            scale = np.sqrt(2.0 / (d_in + d_out))
            return (
                Tensor(rng.standard_normal((d_in, d_out)) * scale, requires_grad=True),
                Tensor(np.zeros(d_out), requires_grad=True),
            )

        self.wq, self.bq = linear(d_model, d_model)
        self.wk, self.bk = linear(d_model, d_model)
        self.wv, self.bv = linear(d_model, d_model)
        self.wo, self.bo = linear(d_model, d_model)

    def named_parameters(self):
        return {
            "wq": self.wq, "bq": self.bq, "wk": self.wk, "bk": self.bk,
            "wv": self.wv, "bv": self.bv, "wo": self.wo, "bo": self.bo,
        }


class _Ffn:
    def __init__(self, d_model, d_ff, rng):
        scale1 = np.sqrt(2.0 / (d_model + d_ff))
        self.w1 = Tensor(rng.standard_normal((d_model, d_ff)) * scale1, requires_grad=True)
        self.b1 = Tensor(np.zeros(d_ff), requires_grad=True)
        self.w2 = Tensor(rng.standard_normal((d_ff, d_model)) * scale1, requires_grad=True)
        self.b2 = Tensor(np.zeros(d_model), requires_grad=True)

    def __call__(self, x):
        h = ad.gelu(ad.add(ad.matmul(x, self.w1), self.b1))
        return ad.add(ad.matmul(h, self.w2), self.b2)

    def named_parameters(self):
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


class _LayerNorm:
    def __init__(self, d_model):
        self.g = Tensor(np.ones(d_model), requires_grad=True)
        self.b = Tensor(np.zeros(d_model), requires_grad=True)

    def __call__(self, x):
        return ad.add(ad.mul(ad.layer_norm(x), self.g), self.b)

    def named_parameters(self):
        return {"g": self.g, "b": self.b}


class _EncoderLayer:
    def __init__(self, config, rng):
        self.attn = _Attention(config.d_model, rng)
        self.ffn = _Ffn(config.d_model, config.d_ff, rng)
        self.ln1 = _LayerNorm(config.d_model)
        self.ln2 = _LayerNorm(config.d_model)

    def named_parameters(self):
        params = {}
        for prefix, mod in (("attn", self.attn), ("ffn", self.ffn),
                            ("ln1", self.ln1), ("ln2", self.ln2)):
            for name, p in mod.named_parameters().items():
                params[f"{prefix}.{name}"] = p
        return params


class _DecoderLayer:
    def __init__(self, config, rng):
        self.self_attn = _Attention(config.d_model, rng)
        self.cross_attn = _Attention(config.d_model, rng)
        self.ffn = _Ffn(config.d_model, config.d_ff, rng)
        self.ln1 = _LayerNorm(config.d_model)
        self.ln2 = _LayerNorm(config.d_model)
        self.ln3 = _LayerNorm(config.d_model)

    def named_parameters(self):
        params = {}
        for prefix, mod in (("self_attn", self.self_attn), ("cross_attn", self.cross_attn),
                            ("ffn", self.ffn), ("ln1", self.ln1), ("ln2", self.ln2),
                            ("ln3", self.ln3)):
            for name, p in mod.named_parameters().items():
                params[f"{prefix}.{name}"] = p
        return params


class ModelParams:
    """All trainable tensors, addressable by dotted names."""

    def __init__(self, config, seed=0):
        rng = np.random.default_rng(seed)
        self.config = config
        d = config.d_model
        self.tok_emb = Tensor(
            rng.standard_normal((config.vocab_size, d)) * 0.02, requires_grad=True
        )
        self.pos_emb = Tensor(
            rng.standard_normal((config.max_positions, d)) * 0.01, requires_grad=True
        )
        proj_scale = np.sqrt(2.0 / (config.d_vis + d))
        self.visual_proj_w = Tensor(
            rng.standard_normal((config.d_vis, d)) * proj_scale, requires_grad=True
        )
        self.visual_proj_b = Tensor(np.zeros(d), requires_grad=True)
        self.visual_segment = Tensor(rng.standard_normal(d) * 0.02, requires_grad=True)
        self.graph = graphmod.GraphParams(config.graph_config(), rng)
        self.enc_layers = [_EncoderLayer(config, rng) for _ in range(config.n_layers)]
        self.dec_layers = [_DecoderLayer(config, rng) for _ in range(config.n_layers)]
        self.enc_ln = _LayerNorm(d)
        self.dec_ln = _LayerNorm(d)
        if not config.tie_output:
            out_scale = np.sqrt(2.0 / (d + config.vocab_size))
            self.out_w = Tensor(
                rng.standard_normal((d, config.vocab_size)) * out_scale, requires_grad=True
            )
        else:
            self.out_w = None
        self.out_b = Tensor(np.zeros(config.vocab_size), requires_grad=True)

    def named_parameters(self):
        params = {
            "tok_emb": self.tok_emb,
            "pos_emb": self.pos_emb,
            "visual_proj.w": self.visual_proj_w,
            "visual_proj.b": self.visual_proj_b,
            "visual_segment": self.visual_segment,
        }
        for name, p in self.graph.named_parameters().items():
            params[f"graph.{name}"] = p
        for i, layer in enumerate(self.enc_layers):
            for name, p in layer.named_parameters().items():
                params[f"enc.{i}.{name}"] = p
        for i, layer in enumerate(self.dec_layers):
            for name, p in layer.named_parameters().items():
                params[f"dec.{i}.{name}"] = p
        for name, p in self.enc_ln.named_parameters().items():
            params[f"enc_ln.{name}"] = p
        for name, p in self.dec_ln.named_parameters().items():
            params[f"dec_ln.{name}"] = p
        if self.out_w is not None:
            params["out.w"] = self.out_w
        params["out.b"] = self.out_b
        return params

    def zero_grad(self):
        for p in self.named_parameters().values():
            p.grad = None


@dataclass
class EncoderInput:
    visual: Tensor
    visual_mask: np.ndarray
    text: Tensor
    text_mask: np.ndarray

    @property
    def mask(self):
        return np.concatenate([self.visual_mask, self.text_mask], axis=1)


def _dropout(x, rate, training, rng):
    if training and rate > 0:
        return ad.dropout(x, rate, rng)
    return x


def _embed_rows(table, ids):
    """Look up rows of an embedding table for a (B, S) id array."""
    ids = np.asarray(ids, dtype=np.int64)
    b, s = ids.shape
    flat = ad.index_rows(table, ids.reshape(-1))
    return ad.reshape(flat, (b, s, table.data.shape[1]))


def _positions(table, b, s):
    idx = np.tile(np.arange(s, dtype=np.int64), b)
    flat = ad.index_rows(table, idx)
    return ad.reshape(flat, (b, s, table.data.shape[1]))


def _split_heads(x, n_heads):
    b, s, d = x.data.shape
    return ad.transpose(ad.reshape(x, (b, s, n_heads, d // n_heads)), (0, 2, 1, 3))


def _merge_heads(x):
    b, h, s, dh = x.data.shape
    return ad.reshape(ad.transpose(x, (0, 2, 1, 3)), (b, s, h * dh))


def _attend(x_q, x_kv, attn, n_heads, key_mask, causal, rate, training, rng):
    """Multi-head attention; key_mask is (B, S_k) with True = attendable."""
    d = x_q.data.shape[-1]
    q = ad.add(ad.matmul(x_q, attn.wq), attn.bq)
    k = ad.add(ad.matmul(x_kv, attn.wk), attn.bk)
    v = ad.add(ad.matmul(x_kv, attn.wv), attn.bv)
    qh = _split_heads(q, n_heads)
    kh = _split_heads(k, n_heads)
    vh = _split_heads(v, n_heads)
    scale = Tensor(np.asarray(1.0 / np.sqrt(d // n_heads), dtype=qh.data.dtype))
    scores = ad.mul(ad.matmul(qh, ad.transpose(kh, (0, 1, 3, 2))), scale)
    s_q, s_k = scores.data.shape[-2], scores.data.shape[-1]
    blocked = ~np.asarray(key_mask, dtype=bool)[:, None, None, :]
    if causal:
        future = np.triu(np.ones((s_q, s_k), dtype=bool), k=1)
        blocked = blocked | future[None, None, :, :]
    scores = ad.masked_fill(scores, blocked, _NEG_FILL)
    weights = ad.softmax(scores, axis=-1)
    weights = _dropout(weights, rate, training, rng)
    ctx = ad.matmul(weights, vh)
    out = ad.add(ad.matmul(_merge_heads(ctx), attn.wo), attn.bo)
    return _dropout(out, rate, training, rng)


def _encoder_layer(x, layer, config, key_mask, training, rng):
    rate = config.dropout
    if config.pre_norm:
        h = layer.ln1(x)
        x = ad.add(x, _attend(h, h, layer.attn, config.n_heads,
                              key_mask, False, rate, training, rng))
        x = ad.add(x, _dropout(layer.ffn(layer.ln2(x)), rate, training, rng))
    else:
        x = layer.ln1(ad.add(x, _attend(x, x, layer.attn, config.n_heads,
                                        key_mask, False, rate, training, rng)))
        x = layer.ln2(ad.add(x, _dropout(layer.ffn(x), rate, training, rng)))
    return x


def _decoder_layer(x, memory, layer, config, memory_mask, self_mask, training, rng):
    rate = config.dropout
    if config.pre_norm:
        h = layer.ln1(x)
        x = ad.add(x, _attend(h, h, layer.self_attn, config.n_heads,
                              self_mask, True, rate, training, rng))
        x = ad.add(x, _attend(layer.ln2(x), memory, layer.cross_attn, config.n_heads,
                              memory_mask, False, rate, training, rng))
        x = ad.add(x, _dropout(layer.ffn(layer.ln3(x)), rate, training, rng))
    else:
        x = layer.ln1(ad.add(x, _attend(x, x, layer.self_attn, config.n_heads,
                                        self_mask, True, rate, training, rng)))
        x = layer.ln2(ad.add(x, _attend(x, memory, layer.cross_attn, config.n_heads,
                                        memory_mask, False, rate, training, rng)))
        x = layer.ln3(ad.add(x, _dropout(layer.ffn(x), rate, training, rng)))
    return x


def assemble_encoder_input(records, contexts, params, config, flags=None,
                           edge_indices=None, training=False, rng=None):
    """Build the combined encoder input for a batch.

    records: VisualRecords; contexts: TextContexts (one per record).
    Visual block layout per sample: [image, N_obj object rows, edge_cap edge
    rows]; disabled blocks become constant zeros with their mask off.
    """
    flags = flags or AblationFlags()
    b = len(records)
    if b == 0 or len(contexts) != b:
        raise ContractError("records and contexts must be non-empty and aligned")
    d = config.d_model
    s_vis = 1 + config.n_obj + config.edge_cap

    if flags.use_visual:
        gconfig = config.graph_config()
        rows = []
        vis_mask = np.zeros((b, s_vis), dtype=bool)
        for i, rec in enumerate(records):
            if rec.object_feats.shape != (config.n_obj, config.d_vis):
                raise SchemaError(
                    f"sample {rec.sample_id!r}: object features "
                    f"{rec.object_feats.shape} != ({config.n_obj}, {config.d_vis})"
                )
            image = Tensor(rec.image_feat.reshape(1, -1))
            vis_mask[i, 0] = True
            edge_block = Tensor(np.zeros((config.edge_cap, config.d_vis)))
            if flags.use_graph:
                edge_index = edge_indices[i] if edge_indices is not None else None
                gout = graphmod.run_graph(
                    rec.object_feats, rec.object_mask, gconfig, params.graph,
                    edge_index=edge_index,
                )
                objects = gout.enhanced_nodes
                m = gout.edge_index.shape[0]
                if flags.use_edge_feats and m > 0:
                    pad = Tensor(np.zeros((config.edge_cap - m, config.d_vis)))
                    edge_block = ad.concat([gout.edge_features, pad], axis=0)
                    vis_mask[i, 1 + config.n_obj : 1 + config.n_obj + m] = True
            else:
                objects = Tensor(rec.object_feats)
            if flags.use_object_feats:
                vis_mask[i, 1 : 1 + config.n_obj] = rec.object_mask
            else:
                objects = ad.masked_fill(
                    objects, np.ones((config.n_obj, 1), dtype=bool), 0.0
                )
            rows.append(ad.concat([image, objects, edge_block], axis=0))
        stacked = ad.stack(rows, axis=0)
        projected = ad.add(ad.matmul(stacked, params.visual_proj_w), params.visual_proj_b)
        visual = ad.add(projected, params.visual_segment)
        visual = _dropout(visual, config.dropout, training, rng)
    else:
        visual = Tensor(np.zeros((b, s_vis, d)))
        vis_mask = np.zeros((b, s_vis), dtype=bool)

    if flags.use_textual:
        ids = np.asarray([ctx.ids for ctx in contexts], dtype=np.int64)
        text_mask = np.asarray([ctx.mask for ctx in contexts], dtype=bool)
        text = ad.add(
            _embed_rows(params.tok_emb, ids),
            _positions(params.pos_emb, b, config.l_text),
        )
        text = _dropout(text, config.dropout, training, rng)
    else:
        text = Tensor(np.zeros((b, config.l_text, d)))
        text_mask = np.zeros((b, config.l_text), dtype=bool)

    return EncoderInput(visual=visual, visual_mask=vis_mask, text=text, text_mask=text_mask)


def encode(enc_input, params, config, training=False, rng=None):
    """Run the encoder stack; returns (memory, memory_mask)."""
    mask = enc_input.mask
    if not mask.any(axis=1).all():
        raise ContractError("encoder input fully masked for at least one sample")
    x = ad.concat([enc_input.visual, enc_input.text], axis=1)
    for layer in params.enc_layers:
        x = _encoder_layer(x, layer, config, mask, training, rng)
    if config.pre_norm:
        x = params.enc_ln(x)
    return x, mask


def decode_step_logits(caption_ids, memory, memory_mask, params, config,
                       training=False, rng=None):
    """Teacher-forced decoder pass; logits at t depend only on ids[0..t]."""
    ids = np.asarray(caption_ids, dtype=np.int64)
    if ids.ndim != 2:
        raise ContractError("caption_ids must be (batch, length)")
    b, s = ids.shape
    if s > config.max_caption_len + 1:
        raise ContractError(
            f"prefix length {s} exceeds max_caption_len+1 = {config.max_caption_len + 1}"
        )
    x = ad.add(_embed_rows(params.tok_emb, ids), _positions(params.pos_emb, b, s))
    x = _dropout(x, config.dropout, training, rng)
    self_mask = np.ones((b, s), dtype=bool)
    for layer in params.dec_layers:
        x = _decoder_layer(x, memory, layer, config, memory_mask, self_mask, training, rng)
    if config.pre_norm:
        x = params.dec_ln(x)
    out_w = params.out_w if params.out_w is not None else ad.transpose(params.tok_emb, (1, 0))
    return ad.add(ad.matmul(x, out_w), params.out_b)


def generate(memory, memory_mask, params, config, mode="greedy", beam_width=3,
             max_len=None):
    """Autoregressive caption ids (start/end excluded, never pad/start)."""
    if max_len is None:
        max_len = config.max_caption_len
    if max_len > config.max_caption_len:
        raise ContractError(f"max_len {max_len} exceeds {config.max_caption_len}")
    if mode == "greedy":
        return _generate_greedy(memory, memory_mask, params, config, max_len)
    if mode == "beam":
        if beam_width < 1:
            raise ContractError(f"beam_width must be >= 1, got {beam_width}")
        return _generate_beam(memory, memory_mask, params, config, beam_width, max_len)
    raise ContractError(f"unknown generation mode {mode!r}")


def _generate_greedy(memory, memory_mask, params, config, max_len):
    with ad.no_grad():
        prefix = [config.start_id]
        for _ in range(max_len):
            log_probs = _step_log_probs(prefix, memory, memory_mask, params, config)
            tok = int(np.argmax(log_probs))
            if tok == config.end_id:
                break
            prefix.append(tok)
        return prefix[1:]


def _step_log_probs(prefix, memory, memory_mask, params, config):
    ids = np.asarray([prefix], dtype=np.int64)
    logits = decode_step_logits(ids, memory, memory_mask, params, config)
    row = logits.data[0, -1].copy()
    row[config.pad_id] = -np.inf
    row[config.start_id] = -np.inf
    shifted = row - row.max()
    with np.errstate(divide="ignore"):
        return shifted - np.log(np.exp(shifted).sum())


def _generate_beam(memory, memory_mask, params, config, width, max_len):
    """Beam search with length-normalized scores; width 1 equals greedy.

    Candidates are ranked by (-log_prob, token_id), so ties break toward
    the lower token id exactly like argmax.
    """
    with ad.no_grad():
        beams = [([config.start_id], 0.0, False)]
        for _ in range(max_len):
            if all(done for _, _, done in beams):
                break
            candidates = []
            for prefix, logp, done in beams:
                if done:
                    candidates.append((prefix, logp, True))
                    continue
                log_probs = _step_log_probs(prefix, memory, memory_mask, params, config)
                order = sorted(range(len(log_probs)), key=lambda t: (-log_probs[t], t))
                for tok in order[:width]:
                    candidates.append(
                        (prefix + [tok], logp + log_probs[tok], tok == config.end_id)
                    )
            candidates.sort(key=lambda c: (-(c[1] / max(1, len(c[0]) - 1)), c[0]))
            beams = candidates[:width]
        best = max(beams, key=lambda c: c[1] / max(1, len(c[0]) - 1))
        tokens = best[0][1:]
        if tokens and tokens[-1] == config.end_id:
            tokens = tokens[:-1]
        return tokens


def save_checkpoint(path, params, config, vocab):
    """Single-file checkpoint: config JSON, vocabulary, named f32 blobs."""
    named = params.named_parameters()
    vocab_payload = json.dumps(
        {
            "token_to_id": vocab.token_to_id,
            "merges": [list(m) for m in vocab.merges],
            "specials": vocab.specials,
        },
        ensure_ascii=False,
    ).encode("utf-8")
    config_payload = config.to_json().encode("utf-8")
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<I", _CKPT_VERSION))
        f.write(struct.pack("<I", len(config_payload)))
        f.write(config_payload)
        f.write(struct.pack("<I", len(vocab_payload)))
        f.write(vocab_payload)
        f.write(struct.pack("<I", len(named)))
        for name, p in named.items():
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            shape = p.data.shape
            f.write(struct.pack("<B", len(shape)))
            for dim in shape:
                f.write(struct.pack("<I", dim))
            f.write(p.data.astype("<f4").tobytes())


def _read_exact(f, n, what):
    buf = f.read(n)
    if len(buf) != n:
        raise SchemaError(f"truncated checkpoint while reading {what}")
    return buf


def load_checkpoint(path):
    """Inverse of save_checkpoint; returns (params, config, vocab)."""
    with open(path, "rb") as f:
        if _read_exact(f, 4, "magic") != _CKPT_MAGIC:
            raise SchemaError("not a model checkpoint (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != _CKPT_VERSION:
            raise SchemaError(f"unsupported checkpoint version {version}")
        (n,) = struct.unpack("<I", _read_exact(f, 4, "config length"))
        config = ModelConfig.from_json(_read_exact(f, n, "config").decode("utf-8"))
        (n,) = struct.unpack("<I", _read_exact(f, 4, "vocab length"))
        vocab_payload = json.loads(_read_exact(f, n, "vocabulary").decode("utf-8"))
        vocab = BpeVocab(
            vocab_payload["token_to_id"],
            [tuple(m) for m in vocab_payload["merges"]],
            vocab_payload["specials"],
        )
        params = ModelParams(config, seed=0)
        named = params.named_parameters()
        (count,) = struct.unpack("<I", _read_exact(f, 4, "parameter count"))
        if count != len(named):
            raise SchemaError(
                f"checkpoint has {count} parameters, model expects {len(named)}"
            )
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(f, 2, "name length"))
            name = _read_exact(f, name_len, "name").decode("utf-8")
            if name not in named:
                raise SchemaError(f"unknown parameter {name!r} in checkpoint")
            (ndim,) = struct.unpack("<B", _read_exact(f, 1, "ndim"))
            shape = tuple(
                struct.unpack("<I", _read_exact(f, 4, "dim"))[0] for _ in range(ndim)
            )
            expected = named[name].data.shape
            if shape != expected:
                raise SchemaError(f"parameter {name!r} shape {shape} != {expected}")
            count_f = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(
                _read_exact(f, 4 * count_f, f"data for {name}"), dtype="<f4"
            ).astype(np.float64).reshape(shape)
            named[name].data = data
        if f.read(1):
            raise SchemaError("trailing bytes after last checkpoint parameter")
    return params, config, vocab
