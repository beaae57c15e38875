"""Scikit-learn style wrappers over the plain training and tokenizer modules.

These exist for pipeline/grid-search interoperability; the underlying
functions remain the primary API.
"""

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import bpe
from . import model as modelmod
from .errors import InputError
from .metrics import EvalItem, bleu4
from .model import AblationFlags, ModelConfig
from .training import TrainConfig, make_train_sample, train


class BpeTokenizer(BaseEstimator, TransformerMixin):
    """Byte-level BPE tokenizer with a fit/transform surface.

    fit trains merge ranks on an iterable of strings; transform maps text to
    id lists and inverse_transform back to text.
    """

    def __init__(self, vocab_size=300):
        self.vocab_size = vocab_size

    def fit(self, X, y=None):
        corpus = list(X)
        if not corpus:
            raise InputError("tokenizer corpus is empty")
        self.vocab_ = bpe.train_merges(corpus, self.vocab_size)
        return self

    def transform(self, X):
        check_is_fitted(self, "vocab_")
        return [bpe.encode(text, self.vocab_) for text in X]

    def inverse_transform(self, X):
        check_is_fitted(self, "vocab_")
        return [bpe.decode(list(ids), self.vocab_) for ids in X]


class CaptionGenerator(BaseEstimator):
    """Trains the graph-enhanced encoder-decoder on (visual, entities) pairs.

    X is a sequence of (VisualRecord, NerDictionary) tuples, y the caption
    strings.  Feature dimensionality and object capacity are inferred from
    the records at fit time; pass a prebuilt vocab to skip merge training.
    """

    def __init__(self, d_model=64, n_heads=4, n_layers=2, d_ff=128, l_text=16,
                 max_caption_len=20, dropout=0.0, graph_k=2, graph_t=1,
                 graph_hidden=None, tie_output=False, pre_norm=True,
                 vocab_size=300, vocab=None, include_types=True,
                 lr=3e-3, epochs=100, batch_size=8, loss_kind="ce",
                 focal_gamma=2.0, seed=0, data_fraction=1.0, target_loss=None,
                 ablation_flags=None, decode_mode="greedy", beam_width=3):
        self.d_model = d_model
        self.n_heads = n_heads
        self.n_layers = n_layers
        self.d_ff = d_ff
        self.l_text = l_text
        self.max_caption_len = max_caption_len
        self.dropout = dropout
        self.graph_k = graph_k
        self.graph_t = graph_t
        self.graph_hidden = graph_hidden
        self.tie_output = tie_output
        self.pre_norm = pre_norm
        self.vocab_size = vocab_size
        self.vocab = vocab
        self.include_types = include_types
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.loss_kind = loss_kind
        self.focal_gamma = focal_gamma
        self.seed = seed
        self.data_fraction = data_fraction
        self.target_loss = target_loss
        self.ablation_flags = ablation_flags
        self.decode_mode = decode_mode
        self.beam_width = beam_width

    def _pairs(self, X):
        pairs = list(X)
        if not pairs:
            raise InputError("no samples")
        return pairs

    def fit(self, X, y):
        pairs = self._pairs(X)
        captions = list(y)
        if len(captions) != len(pairs):
            raise InputError(
                f"{len(pairs)} samples but {len(captions)} captions"
            )
        self.vocab_ = self.vocab if self.vocab is not None else bpe.train_merges(
            captions, self.vocab_size
        )
        record = pairs[0][0]
        self.config_ = ModelConfig(
            vocab_size=self.vocab_.vocab_size,
            start_id=self.vocab_.start_id,
            end_id=self.vocab_.end_id,
            pad_id=self.vocab_.pad_id,
            d_model=self.d_model,
            n_heads=self.n_heads,
            n_layers=self.n_layers,
            d_ff=self.d_ff,
            l_text=self.l_text,
            n_obj=record.n_obj,
            d_vis=record.d_vis,
            max_caption_len=self.max_caption_len,
            dropout=self.dropout,
            graph_k=self.graph_k,
            graph_t=self.graph_t,
            graph_hidden=self.graph_hidden,
            tie_output=self.tie_output,
            pre_norm=self.pre_norm,
        )
        samples = [
            make_train_sample(rec, ner, cap, self.vocab_, self.config_,
                              include_types=self.include_types)
            for (rec, ner), cap in zip(pairs, captions)
        ]
        train_config = TrainConfig(
            lr=self.lr, epochs=self.epochs, batch_size=self.batch_size,
            loss_kind=self.loss_kind, focal_gamma=self.focal_gamma,
            seed=self.seed, data_fraction=self.data_fraction,
            target_loss=self.target_loss,
            flags=self.ablation_flags or AblationFlags(),
        )
        self.params_, self.loss_log_ = train(samples, train_config, self.config_)
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        pairs = self._pairs(X)
        mode, width = self.decode_mode, self.beam_width
        out = []
        for rec, ner in pairs:
            from .context import build_context

            ctx = build_context(ner, self.vocab_, self.config_.l_text,
                                include_types=self.include_types)
            enc_in = modelmod.assemble_encoder_input(
                [rec], [ctx], self.params_, self.config_,
                flags=self.ablation_flags or AblationFlags(),
            )
            memory, mask = modelmod.encode(enc_in, self.params_, self.config_)
            ids = modelmod.generate(memory, mask, self.params_, self.config_,
                                    mode=mode, beam_width=width)
            out.append(bpe.decode(ids, self.vocab_))
        return out

    def score(self, X, y):
        """Corpus BLEU-4 of greedy captions against y, scaled to [0, 1]."""
        check_is_fitted(self, "params_")
        hyps = self.predict(X)
        items = [
            EvalItem(sample_id=str(i), hyp=h, refs=[r])
            for i, (h, r) in enumerate(zip(hyps, list(y)))
        ]
        return bleu4(items) / 100.0
