import math

import numpy as np
import pytest

from seqcascade import autodiff as ad
from seqcascade.config import ModelConfig
from seqcascade.corpus import LevelSchema, build_vocabulary, segment_corpus
from seqcascade.errors import ConfigError, EmptyInputError, SchemaError
from seqcascade.model import MemoryList, build_model
from seqcascade.training import adam_step, TrainState, encode_examples, evaluate_model

from helpers import prepared_toy3, tiny_cascade, toy3_corpus, toy3_schemas


def expected_parameter_count(v, d, h, enc_layers, dec_layers, n_tasks):
    """Closed-form census, independent of the model's own bookkeeping."""
    total = v * d  # shared embedding
    for layer in range(enc_layers):
        input_dim = d if layer == 0 else h
        per_direction = 4 * (input_dim * h + h * h + h)
        total += 2 * per_direction + (2 * h * h + h)  # both directions + merge
    for i in range(1, n_tasks + 1):
        for layer in range(dec_layers):
            input_dim = d + h if layer == 0 else h
            total += 4 * (input_dim * h + h * h + h)
        total += i * (h * h + h * h + h)  # i additive attention mechanisms
    return total


class TestBuildModel:
    def test_parameter_census_closed_form(self):
        schemas = [LevelSchema("a", "token-label", symbols=["x"]),
                   LevelSchema("b", "token-label", symbols=["x"])]
        from seqcascade.corpus import Vocabulary
        base = [f"w{i}" for i in range(92)]  # 92 + 8 reserved = 100 symbols
        vocab = Vocabulary.build([base + ["x"]], ["a", "b"])
        assert len(vocab) == 100
        config = ModelConfig(tasks=["a", "b"], embed_dim=256, hidden_dim=256,
                             encoder_layers=3, decoder_layers=3, dropout=0.0, seed=0)
        model = build_model(config, schemas, vocab)
        actual = sum(t.data.size for t in model.parameters().values())
        assert actual == expected_parameter_count(100, 256, 256, 3, 3, 2)

    def test_same_seed_parameter_identical(self):
        model_a, _, schemas, vocab = tiny_cascade()
        model_b = build_model(model_a.config, schemas, vocab)
        for (na, ta), (nb, tb) in zip(model_a.parameters().items(),
                                      model_b.parameters().items()):
            assert na == nb
            assert (ta.data == tb.data).all()

    def test_forget_gate_bias_initialization(self):
        model, _, _, _ = tiny_cascade()
        params = model.parameters()
        assert (params["encoder.0.fwd.b_f"].data == 1.0).all()
        assert (params["decoder.1.stack.0.b_f"].data == 1.0).all()
        w = params["encoder.0.fwd.w_i"].data
        assert w.min() >= -0.1 and w.max() <= 0.1

    def test_decoder_i_owns_i_attention_mechanisms(self):
        model, _, _, _ = tiny_cascade()
        for i, decoder in enumerate(model.decoders, start=1):
            assert len(decoder.attentions) == i

    def test_mono_task_mode_builds(self):
        schemas, vocab, examples = prepared_toy3(4, seed=1)
        config = ModelConfig(tasks=["cls"], embed_dim=8, hidden_dim=8,
                             encoder_layers=1, decoder_layers=1, dropout=0.0, seed=2)
        model = build_model(config, [schemas[0]], vocab)
        assert len(model.decoders) == 1
        encoded = encode_examples(examples, [schemas[0]], vocab)
        result = model.forward_batch(encoded, training=False)
        assert math.isfinite(result.report.total)

    def test_embed_hidden_mismatch_rejected(self):
        with pytest.raises(ConfigError):
            ModelConfig(tasks=["a"], embed_dim=8, hidden_dim=16).validate()

    def test_task_schema_order_enforced(self):
        model, _, schemas, vocab = tiny_cascade()
        with pytest.raises(SchemaError):
            build_model(model.config, list(reversed(schemas)), vocab)


class TestEncode:
    def test_length_one_shape(self):
        model, encoded, _, _ = tiny_cascade()
        memory, mask = model.encode(encoded[0].source_ids[:1])
        assert memory.shape == (1, model.config.hidden_dim)
        assert mask.tolist() == [True]

    def test_deterministic_in_inference_mode(self):
        model, encoded, _, _ = tiny_cascade()
        a, _ = model.encode(encoded[0].source_ids)
        b, _ = model.encode(encoded[0].source_ids)
        assert (a.data == b.data).all()

    def test_empty_input_rejected(self):
        model, _, _, _ = tiny_cascade()
        with pytest.raises(EmptyInputError):
            model.encode([])

    def test_memory_finite_on_1000_random_inputs(self):
        model, _, _, vocab = tiny_cascade()
        rng = np.random.default_rng(3)
        with ad.no_grad():
            for _ in range(1000):
                length = int(rng.integers(1, 7))
                ids = rng.integers(0, len(vocab), size=length).tolist()
                memory, _ = model.encode(ids)
                assert np.isfinite(memory.data).all()


class TestDecodeTeacherForced:
    def test_level_masking_contract(self):
        model, encoded, schemas, vocab = tiny_cascade()
        memory, mask = model.encode(encoded[0].source_ids)
        memories = MemoryList([(memory, mask)])
        gold = encoded[0].target_ids["cls"][:1]
        logits, h = model.decode_teacher_forced(1, memories, gold)
        assert logits.shape == (1, len(vocab))
        legal = {vocab.id(s) for s in schemas[0].symbols}
        for col in range(len(vocab)):
            if col in legal:
                assert logits.data[0, col] > -1e8
            else:
                assert logits.data[0, col] <= -1e8

    def test_gold_outside_level_rejected(self):
        model, encoded, _, vocab = tiny_cascade()
        memory, mask = model.encode(encoded[0].source_ids)
        memories = MemoryList([(memory, mask)])
        with pytest.raises(SchemaError):
            model.decode_teacher_forced(1, memories, [vocab.id("<SOT>")])

    def test_memory_count_must_match_decoder_index(self):
        model, encoded, _, _ = tiny_cascade()
        memory, mask = model.encode(encoded[0].source_ids)
        memories = MemoryList([(memory, mask)])
        with pytest.raises(SchemaError):
            model.decode_teacher_forced(2, memories, encoded[0].target_ids["xlit"])

    def test_cascade_causality_gradients(self):
        """dL_1/dtheta = 0 for decoder-2/3 parameters; dL_3/dtheta != 0 for
        decoder-1 parameters (the cascade direction)."""
        model, encoded, _, _ = tiny_cascade()
        params = model.parameters()

        ad.tape_reset()
        model.zero_grad()
        result = model.forward_batch(encoded, training=False)
        ad.backward(result.task_tensors["cls"])
        for name, t in params.items():
            if name.startswith(("decoder.2", "decoder.3")):
                assert t.grad is None, f"L_1 leaked into {name}"
        assert params["decoder.1.stack.0.w_i"].grad is not None

        ad.tape_reset()
        model.zero_grad()
        result = model.forward_batch(encoded, training=False)
        ad.backward(result.task_tensors["pos"])
        dec1 = [np.abs(t.grad).max() for name, t in params.items()
                if name.startswith("decoder.1") and t.grad is not None]
        assert dec1 and max(dec1) > 0

    def test_causality_numerically(self):
        """Perturbing a decoder-3 parameter leaves L_1 exactly unchanged."""
        model, encoded, _, _ = tiny_cascade()

        def task1_loss():
            with ad.no_grad():
                return float(model.forward_batch(encoded, training=False)
                             .task_tensors["cls"].data)

        base = task1_loss()
        target = model.parameters()["decoder.3.attn.2.score"]
        target.data[0, 0] += 0.05
        assert task1_loss() == base
        target.data[0, 0] -= 0.05


class TestForwardTrain:
    def test_untrained_losses_near_uniform(self):
        model, encoded, schemas, _ = tiny_cascade()
        report = model.forward_batch(encoded, training=False).report
        for schema in schemas:
            expected = math.log(len(schema.symbols))
            assert abs(report.task_losses[schema.name] - expected) <= 0.15 * expected

    def test_loss_additivity(self):
        model, encoded, _, _ = tiny_cascade()
        report = model.forward_batch(encoded, training=False).report
        assert abs(report.total - sum(report.task_losses.values())) < 1e-6

    def test_missing_level_rejected(self):
        model, encoded, _, _ = tiny_cascade()
        broken = encoded[0]
        broken.target_ids.pop("pos")
        with pytest.raises(SchemaError):
            model.forward_batch([broken], training=False)

    def test_overfits_single_sentence_in_300_steps(self):
        schemas, vocab, examples = prepared_toy3(1, seed=9)
        config = ModelConfig(tasks=["cls", "xlit", "pos"], embed_dim=32, hidden_dim=32,
                             encoder_layers=1, decoder_layers=1, dropout=0.0,
                             learning_rate=2e-2, seed=4)
        model = build_model(config, schemas, vocab)
        encoded = encode_examples(examples, schemas, vocab)
        state = TrainState(params=model.parameters())
        final = None
        for _ in range(300):
            ad.tape_reset()
            model.zero_grad()
            result = model.forward_batch(encoded, training=True)
            ad.backward(result.total)
            grads = {n: t.grad for n, t in model.parameters().items() if t.grad is not None}
            ad.clip_gradients(grads.values(), config.clip_norm)
            adam_step(state, grads, lr=config.learning_rate)
            final = float(result.total.data)
        ad.tape_reset()
        assert final < 0.01


class TestPredict:
    def test_deterministic_across_calls(self):
        model, encoded, _, _ = tiny_cascade()
        a = model.predict(encoded[0].source_ids, n_tokens=encoded[0].n_tokens)
        b = model.predict(encoded[0].source_ids, n_tokens=encoded[0].n_tokens)
        assert a.units == b.units

    def test_classification_emits_one_label_per_token(self):
        model, encoded, _, _ = tiny_cascade()
        pred = model.predict(encoded[0].source_ids, n_tokens=encoded[0].n_tokens)
        assert len(pred.units["cls"]) == encoded[0].n_tokens

    def test_token_count_inferred_from_markers(self):
        model, encoded, _, _ = tiny_cascade()
        pred = model.predict(encoded[0].source_ids)
        assert len(pred.units["cls"]) == encoded[0].n_tokens

    def test_attention_trace_has_i_mechanisms_per_step(self):
        model, encoded, _, _ = tiny_cascade()
        pred = model.predict(encoded[0].source_ids, n_tokens=encoded[0].n_tokens)
        for i, schema in enumerate(model.schemas, start=1):
            for step_weights in pred.attention[schema.name]:
                assert len(step_weights) == i

    def test_emitted_symbols_respect_level_sets(self):
        model, encoded, schemas, _ = tiny_cascade()
        for e in encoded:
            pred = model.predict(e.source_ids, n_tokens=e.n_tokens)
            for schema in schemas:
                assert set(pred.units[schema.name]) <= set(schema.symbols)

    def test_overfit_model_reproduces_gold(self, overfit_toy_run):
        run = overfit_toy_run
        model = run["result"].checkpoint.build_model()
        encoded = encode_examples(run["examples"], run["schemas"], run["vocab"])
        for ex, e in zip(run["examples"], encoded):
            pred = model.predict(e.source_ids, n_tokens=e.n_tokens)
            for schema in run["schemas"]:
                assert pred.units[schema.name] == ex.target_units[schema.name]

    def test_evaluate_memorized_training_set(self, overfit_toy_run):
        run = overfit_toy_run
        model = run["result"].checkpoint.build_model()
        scores = evaluate_model(model, run["examples"])
        for name, ev in scores.items():
            assert ev.accuracy == 1.0
            assert ev.exact_match == 1.0


class TestSharedCodePath:
    def test_mono_and_multi_task_agree_on_task_one(self):
        """Same seed and vocabulary: the I=1 model and the first decoder of
        the I=3 model are parameter-identical, so task-1 teacher-forced
        losses agree bit for bit (dropout off)."""
        schemas = toy3_schemas()
        examples = toy3_corpus(6, seed=5)
        segment_corpus(examples, schemas, "char")
        vocab = build_vocabulary(examples, schemas)
        kwargs = dict(embed_dim=16, hidden_dim=16, encoder_layers=1,
                      decoder_layers=1, dropout=0.0, seed=8)
        multi = build_model(ModelConfig(tasks=["cls", "xlit", "pos"], **kwargs),
                            schemas, vocab)
        mono = build_model(ModelConfig(tasks=["cls"], **kwargs), [schemas[0]], vocab)
        enc_multi = encode_examples(examples, schemas, vocab)
        enc_mono = encode_examples(examples, [schemas[0]], vocab)
        multi_loss = multi.forward_batch(enc_multi, training=False).task_tensors["cls"]
        mono_loss = mono.forward_batch(enc_mono, training=False).task_tensors["cls"]
        assert float(multi_loss.data) == float(mono_loss.data)
