"""Caption-model tests: causality, masking neutrality, gradients, generation."""

import numpy as np
import pytest

from contextcap import autodiff as ad
from contextcap import bpe, model, visual
from contextcap.autodiff import Tensor
from contextcap.context import NerDictionary, build_context
from contextcap.errors import ContractError, SchemaError


@pytest.fixture(scope="module")
def vocab():
    return bpe.train_merges(
        ["a man riding a wave on Friday in Delhi .", "event in India on Monday ."], 300
    )


def small_config(vocab, **overrides):
    base = dict(
        vocab_size=vocab.vocab_size,
        start_id=vocab.start_id,
        end_id=vocab.end_id,
        pad_id=vocab.pad_id,
        d_model=32,
        n_heads=4,
        n_layers=2,
        d_ff=64,
        l_text=12,
        n_obj=4,
        d_vis=16,
        max_caption_len=20,
        dropout=0.0,
        graph_k=2,
        graph_t=2,
        graph_hidden=8,
    )
    base.update(overrides)
    return model.ModelConfig(**base)


def make_batch(vocab, config, n=2, seed=3):
    records = visual.synth_features(seed, n, (2, config.n_obj), d_vis=config.d_vis,
                                    n_obj=config.n_obj)
    dicts = [
        NerDictionary({"GPE": ["Delhi"]}),
        NerDictionary({"DATE": ["Friday"], "PERSON": ["Modi"]}),
    ]
    ctxs = [build_context(dicts[i % 2], vocab, config.l_text) for i in range(n)]
    return records, ctxs


def encoded_memory(vocab, config, params, n=2, seed=3, flags=None):
    records, ctxs = make_batch(vocab, config, n, seed)
    enc_in = model.assemble_encoder_input(records, ctxs, params, config, flags=flags)
    return model.encode(enc_in, params, config)


class TestConfig:
    def test_head_divisibility_enforced(self, vocab):
        with pytest.raises(ContractError):
            small_config(vocab, d_model=30, n_heads=4)

    def test_caption_room_enforced(self, vocab):
        with pytest.raises(ContractError):
            small_config(vocab, max_caption_len=1)

    def test_json_round_trip(self, vocab):
        config = small_config(vocab)
        assert model.ModelConfig.from_json(config.to_json()) == config


class TestEncode:
    def test_output_length_matches_input(self, vocab):
        config = small_config(vocab)
        params = model.ModelParams(config, seed=1)
        memory, mask = encoded_memory(vocab, config, params)
        s = 1 + config.n_obj + config.edge_cap + config.l_text
        assert memory.data.shape == (2, s, config.d_model)
        assert mask.shape == (2, s)

    def test_combined_mask_layout(self, vocab):
        config = small_config(vocab)
        params = model.ModelParams(config, seed=1)
        records, ctxs = make_batch(vocab, config)
        enc_in = model.assemble_encoder_input(records, ctxs, params, config)
        assert enc_in.mask.shape[1] == 1 + config.n_obj + config.edge_cap + config.l_text
        assert enc_in.visual_mask[:, 0].all()

    def test_all_masked_raises(self, vocab):
        config = small_config(vocab)
        params = model.ModelParams(config, seed=1)
        records, _ = make_batch(vocab, config)
        empty = [build_context(NerDictionary(), vocab, config.l_text) for _ in records]
        flags = model.AblationFlags(use_visual=False)
        enc_in = model.assemble_encoder_input(records, empty, params, config, flags=flags)
        with pytest.raises(ContractError):
            model.encode(enc_in, params, config)

    def test_masked_position_perturbation_is_neutral(self, vocab):
        config = small_config(vocab)
        params = model.ModelParams(config, seed=2)
        records, ctxs = make_batch(vocab, config, seed=5)
        base_in = model.assemble_encoder_input(records, ctxs, params, config)
        base_mem, base_mask = model.encode(base_in, params, config)

        poked = visual.synth_features(5, 2, (2, config.n_obj), d_vis=config.d_vis,
                                      n_obj=config.n_obj)
        rng = np.random.default_rng(8)
        for rec in poked:
            rec.object_feats[~rec.object_mask] = rng.standard_normal(
                (int((~rec.object_mask).sum()), config.d_vis)
            )
        poked_ctxs = []
        for ctx in ctxs:
            ids = list(ctx.ids)
            for i, real in enumerate(ctx.mask):
                if not real:
                    ids[i] = 7
            poked_ctxs.append(type(ctx)(ids=ids, mask=list(ctx.mask), source=ctx.source))
        poked_in = model.assemble_encoder_input(poked, poked_ctxs, params, config)
        mem, mask = model.encode(poked_in, params, config)
        assert (mask == base_mask).all()
        assert (mem.data[base_mask] == base_mem.data[base_mask]).all()

    def test_uniform_attention_with_zeroed_projections(self, vocab):
        config = small_config(vocab, d_model=4, n_heads=1, n_layers=1, d_ff=8)
        attn = model._Attention(4, np.random.default_rng(0))
        attn.wq.data[...] = 0.0
        attn.wk.data[...] = 0.0
        attn.wv.data = np.eye(4)
        attn.wo.data = np.eye(4)
        for b in (attn.bq, attn.bk, attn.bv, attn.bo):
            b.data[...] = 0.0
        rng = np.random.default_rng(1)
        x = Tensor(rng.standard_normal((1, 5, 4)))
        mask = np.array([[True, True, True, False, False]])
        out = model._attend(x, x, attn, 1, mask, False, 0.0, False, None)
        expected = np.repeat(x.data[0, :3].mean(axis=0)[None, :], 5, axis=0)
        np.testing.assert_allclose(out.data[0], expected, atol=1e-12)


class TestDecode:
    def test_causality_exact(self, vocab):
        config = small_config(vocab)
        params = model.ModelParams(config, seed=4)
        memory, mask = encoded_memory(vocab, config, params, n=1, seed=6)
        rng = np.random.default_rng(0)
        for _ in range(50):
            length = int(rng.integers(3, 10))
            ids = rng.integers(0, vocab.vocab_size, size=(1, length))
            logits = model.decode_step_logits(ids, memory, mask, params, config)
            t = int(rng.integers(0, length - 1))
            changed = ids.copy()
            changed[0, t + 1] = (changed[0, t + 1] + 1) % vocab.vocab_size
            logits2 = model.decode_step_logits(changed, memory, mask, params, config)
            assert (logits.data[0, : t + 1] == logits2.data[0, : t + 1]).all()

    def test_prefix_too_long_raises(self, vocab):
        config = small_config(vocab)
        params = model.ModelParams(config, seed=1)
        memory, mask = encoded_memory(vocab, config, params, n=1)
        ids = np.zeros((1, config.max_caption_len + 2), dtype=np.int64)
        with pytest.raises(ContractError):
            model.decode_step_logits(ids, memory, mask, params, config)

    def test_distributions_normalize(self, vocab):
        config = small_config(vocab)
        params = model.ModelParams(config, seed=1)
        memory, mask = encoded_memory(vocab, config, params)
        ids = np.array([[vocab.start_id, 5, 9, 2], [vocab.start_id, 4, 4, vocab.pad_id]])
        logits = model.decode_step_logits(ids, memory, mask, params, config)
        probs = ad.softmax(logits, axis=-1)
        sums = probs.data.sum(axis=-1)
        assert np.abs(sums - 1.0).max() <= 1e-9

    def test_tied_output_uses_embedding(self, vocab):
        config = small_config(vocab, tie_output=True)
        params = model.ModelParams(config, seed=1)
        assert params.out_w is None
        assert "out.w" not in params.named_parameters()
        memory, mask = encoded_memory(vocab, config, params)
        ids = np.array([[vocab.start_id, 3], [vocab.start_id, 4]])
        logits = model.decode_step_logits(ids, memory, mask, params, config)
        assert logits.data.shape == (2, 2, vocab.vocab_size)
        # perturbing one embedding row moves exactly that vocabulary column
        # at positions whose inputs do not contain the perturbed token
        params.tok_emb.data[17] += 0.5
        logits2 = model.decode_step_logits(ids, memory, mask, params, config)
        diff = np.abs(logits2.data - logits.data)[0, 0]
        assert diff[17] > 0
        others = np.delete(diff, 17)
        assert others.max() == 0.0


class TestGenerate:
    def test_beam_one_equals_greedy(self, vocab):
        config = small_config(vocab)
        for seed in range(5):
            params = model.ModelParams(config, seed=seed)
            memory, mask = encoded_memory(vocab, config, params, n=1, seed=seed + 10)
            g = model.generate(memory, mask, params, config, mode="greedy", max_len=10)
            b = model.generate(memory, mask, params, config, mode="beam",
                               beam_width=1, max_len=10)
            assert g == b

    def test_output_never_contains_pad_or_start(self, vocab):
        config = small_config(vocab)
        for seed in range(5):
            params = model.ModelParams(config, seed=seed)
            memory, mask = encoded_memory(vocab, config, params, n=1, seed=seed)
            for mode, width in (("greedy", 1), ("beam", 3)):
                out = model.generate(memory, mask, params, config, mode=mode,
                                     beam_width=width, max_len=12)
                assert vocab.pad_id not in out
                assert vocab.start_id not in out
                assert vocab.end_id not in out

    def test_length_cap_respected(self, vocab):
        config = small_config(vocab)
        params = model.ModelParams(config, seed=2)
        memory, mask = encoded_memory(vocab, config, params, n=1)
        out = model.generate(memory, mask, params, config, mode="greedy", max_len=5)
        assert len(out) <= 5

    def test_max_len_over_cap_raises(self, vocab):
        config = small_config(vocab)
        params = model.ModelParams(config, seed=2)
        memory, mask = encoded_memory(vocab, config, params, n=1)
        with pytest.raises(ContractError):
            model.generate(memory, mask, params, config, max_len=config.max_caption_len + 1)

    def test_greedy_deterministic(self, vocab):
        config = small_config(vocab)
        params = model.ModelParams(config, seed=3)
        memory, mask = encoded_memory(vocab, config, params, n=1)
        a = model.generate(memory, mask, params, config, mode="greedy", max_len=10)
        b = model.generate(memory, mask, params, config, mode="greedy", max_len=10)
        assert a == b


class TestGradients:
    def test_sampled_finite_difference_check(self, vocab):
        config = small_config(vocab, d_model=16, n_heads=2, n_layers=1, d_ff=24,
                              n_obj=3, d_vis=8, l_text=8, graph_k=2, graph_t=1,
                              graph_hidden=6)
        params = model.ModelParams(config, seed=7)
        records = visual.synth_features(20, 2, (2, 3), d_vis=8, n_obj=3)
        ctxs = [
            build_context(NerDictionary({"GPE": ["Delhi"]}), vocab, 8),
            build_context(NerDictionary({"DATE": ["Friday"]}), vocab, 8),
        ]
        targets = np.array(
            [[vocab.start_id, 5, 9, vocab.end_id], [vocab.start_id, 7, 2, vocab.end_id]]
        )

        def forward():
            enc_in = model.assemble_encoder_input(records, ctxs, params, config)
            memory, mask = model.encode(enc_in, params, config)
            logits = model.decode_step_logits(targets[:, :-1], memory, mask,
                                              params, config)
            logp = ad.log_softmax(logits, axis=-1)
            picked = ad.gather_last(logp, targets[:, 1:])
            return ad.neg(ad.mean(picked))

        loss = forward()
        ad.backward(loss)
        rng = np.random.default_rng(123)
        h = 1e-5
        for name, p in params.named_parameters().items():
            assert p.grad is not None, name
            flat = p.data.reshape(-1)
            gflat = p.grad.reshape(-1)
            picks = rng.choice(flat.size, size=min(2, flat.size), replace=False)
            for j in picks:
                orig = flat[j]
                flat[j] = orig + h
                up = forward().data.item()
                flat[j] = orig - h
                down = forward().data.item()
                flat[j] = orig
                numeric = (up - down) / (2 * h)
                denom = max(1.0, abs(gflat[j]), abs(numeric))
                assert abs(gflat[j] - numeric) / denom < 1e-4, (
                    f"{name}[{j}]: analytic {gflat[j]} vs numeric {numeric}"
                )

    def test_visual_params_dead_when_visual_disabled(self, vocab):
        config = small_config(vocab)
        params = model.ModelParams(config, seed=1)
        records, ctxs = make_batch(vocab, config)
        flags = model.AblationFlags(use_visual=False)
        enc_in = model.assemble_encoder_input(records, ctxs, params, config, flags=flags)
        memory, mask = model.encode(enc_in, params, config)
        ids = np.array([[vocab.start_id, 5], [vocab.start_id, 7]])
        logits = model.decode_step_logits(ids, memory, mask, params, config)
        ad.backward(ad.mean(logits))
        named = params.named_parameters()
        for name, p in named.items():
            if name.startswith(("visual_proj", "visual_segment", "graph.")):
                assert p.grad is None or not p.grad.any(), name
        assert named["tok_emb"].grad is not None


class TestCheckpoint:
    def test_round_trip(self, vocab, tmp_path):
        config = small_config(vocab)
        params = model.ModelParams(config, seed=9)
        path = tmp_path / "model.ckpt"
        model.save_checkpoint(path, params, config, vocab)
        loaded_params, loaded_config, loaded_vocab = model.load_checkpoint(path)
        assert loaded_config == config
        assert loaded_vocab.token_to_id == vocab.token_to_id
        assert loaded_vocab.merges == vocab.merges
        named = params.named_parameters()
        loaded = loaded_params.named_parameters()
        assert set(named) == set(loaded)
        for name in named:
            expected = named[name].data.astype(np.float32).astype(np.float64)
            np.testing.assert_array_equal(loaded[name].data, expected)

    def test_generation_survives_round_trip(self, vocab, tmp_path):
        config = small_config(vocab)
        params = model.ModelParams(config, seed=11)
        for p in params.named_parameters().values():
            p.data = p.data.astype(np.float32).astype(np.float64)
        memory, mask = encoded_memory(vocab, config, params, n=1, seed=2)
        before = model.generate(memory, mask, params, config, mode="greedy", max_len=10)
        path = tmp_path / "model.ckpt"
        model.save_checkpoint(path, params, config, vocab)
        loaded_params, loaded_config, loaded_vocab = model.load_checkpoint(path)
        records, ctxs = make_batch(vocab, loaded_config, n=1, seed=2)
        enc_in = model.assemble_encoder_input(records[:1], ctxs[:1], loaded_params,
                                              loaded_config)
        mem2, mask2 = model.encode(enc_in, loaded_params, loaded_config)
        after = model.generate(mem2, mask2, loaded_params, loaded_config,
                               mode="greedy", max_len=10)
        assert before == after

    def test_corrupt_checkpoint_rejected(self, vocab, tmp_path):
        config = small_config(vocab)
        params = model.ModelParams(config, seed=1)
        path = tmp_path / "model.ckpt"
        model.save_checkpoint(path, params, config, vocab)
        data = path.read_bytes()
        path.write_bytes(data[:-8])
        with pytest.raises(SchemaError):
            model.load_checkpoint(path)
        path.write_bytes(b"XXXX" + data[4:])
        with pytest.raises(SchemaError):
            model.load_checkpoint(path)
