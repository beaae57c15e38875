"""Bundled synthetic corpus so training, generation, and evaluation run offline.

Eight images pair with all four (GPE, DATE) contexts; the scene word is
recoverable only from the image and the location/date words only from the
context, so a model that memorizes this set must use both modalities.
"""

import json
from importlib import resources
from pathlib import Path

from .. import bpe
from ..context import NerDictionary, NerRecord, load_ner_records, write_ner_records
from ..model import ModelConfig
from ..training import TrainConfig, build_dataset
from ..visual import load_features, save_features, synth_features

SCENES = ("market", "stadium", "museum", "harbor", "station", "bridge",
          "palace", "garden")
GPES = ("Delhi", "Paris")
DATES = ("Friday", "Monday")

FEATURE_SEED = 11
D_VIS = 64
N_OBJ = 4
VOCAB_TARGET = 300

_FILES = ("features.jsonl", "ner.jsonl", "vocab.json", "merges.txt",
          "model_config.json")


def data_path(name):
    return Path(str(resources.files("contextcap.fixtures").joinpath("data", name)))


def caption_text(scene, gpe, date):
    return f"{scene} in {gpe} on {date} ."


def _vocab_corpus():
    captions = [
        caption_text(s, g, d) for s in SCENES for g in GPES for d in DATES
    ]
    from ..context import ENTITY_TYPES

    words = list(GPES) + list(DATES) + list(SCENES)
    return captions + list(ENTITY_TYPES) + words + [" ".join(words)]


def _model_config(vocab):
    return ModelConfig(
        vocab_size=vocab.vocab_size,
        start_id=vocab.start_id,
        end_id=vocab.end_id,
        pad_id=vocab.pad_id,
        d_model=64,
        n_heads=4,
        n_layers=2,
        d_ff=128,
        l_text=16,
        n_obj=N_OBJ,
        d_vis=D_VIS,
        max_caption_len=20,
        dropout=0.0,
        graph_k=2,
        graph_t=1,
        tie_output=False,
        pre_norm=True,
    )


def generate_fixture_files(out_dir):
    """Regenerate the committed fixture files; fully seed-deterministic."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    records = synth_features(FEATURE_SEED, len(SCENES), n_obj_range=(2, N_OBJ),
                             d_vis=D_VIS, n_obj=N_OBJ)
    save_features(records, out / "features.jsonl")
    ner = []
    for rec, scene in zip(records, SCENES):
        for g in GPES:
            for d in DATES:
                ner.append(NerRecord(
                    sample_id=rec.sample_id,
                    entities=NerDictionary(entries={"GPE": [g], "DATE": [d]}),
                    caption=caption_text(scene, g, d),
                ))
    write_ner_records(ner, out / "ner.jsonl")
    vocab = bpe.train_merges(_vocab_corpus(), VOCAB_TARGET)
    vocab.save(out / "vocab.json", out / "merges.txt")
    (out / "model_config.json").write_text(_model_config(vocab).to_json() + "\n",
                                           encoding="utf-8")
    return out


def load_vocab():
    return bpe.BpeVocab.from_gpt2_files(data_path("vocab.json"), data_path("merges.txt"))


def load_model_config():
    return ModelConfig.from_json(data_path("model_config.json").read_text(encoding="utf-8"))


def load_dataset():
    """(visual records, NER records) for the bundled corpus."""
    config = load_model_config()
    records = load_features(data_path("features.jsonl"), n_obj=config.n_obj)
    return records, load_ner_records(data_path("ner.jsonl"))


def train_samples(include_types=True):
    """The 32 bundled training samples, joined and tokenized."""
    records, ner = load_dataset()
    return build_dataset(records, ner, load_vocab(), load_model_config(),
                         include_types=include_types)


def overfit_train_config(epochs=500, seed=3, target_loss=0.02):
    """Settings that memorize the bundled corpus on a laptop CPU."""
    return TrainConfig(lr=3e-3, epochs=epochs, batch_size=8, loss_kind="ce",
                       seed=seed, target_loss=target_loss)
