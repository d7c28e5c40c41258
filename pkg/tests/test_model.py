"""Model invariants: normalization, determinism, batching, checkpoints, loss."""

import math

import pytest
import torch

from eduqg.model import (
    Checkpoint,
    CheckpointError,
    EncoderDecoderTransformer,
    ModelConfig,
    StageRecord,
    compute_batch_loss,
    forward_logprobs,
    init_model,
    load_base,
    loss,
    pad_batch,
    sequence_xent,
    shift_right,
    t5_small_compat_config,
    toy_config,
)
from eduqg.textproc import EOS_ID, TokenSequence, Tokenizer


@pytest.fixture(scope="module")
def tokenizer():
    return Tokenizer(words=[f"w{i}" for i in range(120)], num_sentinels=8)


@pytest.fixture(scope="module")
def checkpoint(tokenizer):
    cfg = ModelConfig(vocab_size=tokenizer.vocab_size, d_model=32, num_layers=1,
                      num_heads=2, feedforward_dim=64, dropout=0.0)
    return init_model(cfg, tokenizer, seed=11)


def word_seq(*indices):
    return TokenSequence(tuple(259 + i for i in indices))


class TestConfig:
    def test_divisibility_invariant(self):
        with pytest.raises(ValueError):
            ModelConfig(vocab_size=100, d_model=8, num_heads=3)

    def test_counts_positive(self):
        with pytest.raises(ValueError):
            ModelConfig(vocab_size=100, d_model=16, num_layers=0, num_heads=2)

    def test_presets(self):
        toy = toy_config(1000)
        assert toy.d_model == 64 and toy.num_layers == 2 and toy.num_heads == 4
        big = t5_small_compat_config()
        assert big.vocab_size == 32128 and big.d_model == 512 and big.num_layers == 6


class TestInit:
    def test_same_seed_identical(self, tokenizer):
        cfg = toy_config(tokenizer.vocab_size)
        a = init_model(cfg, tokenizer, seed=3)
        b = init_model(cfg, tokenizer, seed=3)
        for (name, pa), (_, pb) in zip(a.module.named_parameters(), b.module.named_parameters()):
            assert torch.equal(pa, pb), name

    def test_different_seed_differs(self, tokenizer):
        cfg = toy_config(tokenizer.vocab_size)
        a = init_model(cfg, tokenizer, seed=3)
        b = init_model(cfg, tokenizer, seed=4)
        assert any(not torch.equal(pa, pb)
                   for (_, pa), (_, pb) in zip(a.module.named_parameters(), b.module.named_parameters()))

    def test_vocab_size_mismatch_rejected(self, tokenizer):
        with pytest.raises(ValueError):
            init_model(toy_config(tokenizer.vocab_size + 1), tokenizer, seed=0)


class TestForward:
    def test_logprobs_normalized_at_every_position(self, checkpoint):
        inputs = [word_seq(0, 1, 2, 3), word_seq(4, 5)]
        targets = [word_seq(6, 7, 8), word_seq(9,)]
        lp = forward_logprobs(checkpoint, inputs, targets)
        totals = torch.logsumexp(lp, dim=-1)
        assert torch.all(totals.abs() < 1e-4)

    def test_batching_invariance(self, checkpoint):
        inputs = [word_seq(0, 1, 2), word_seq(3, 4, 5, 6, 7), word_seq(8,), word_seq(9, 10)]
        targets = [word_seq(1, 2), word_seq(3, 4, 5), word_seq(6,), word_seq(7, 8, 9, 10)]
        batched = forward_logprobs(checkpoint, inputs, targets)
        single = forward_logprobs(checkpoint, [inputs[0]], [targets[0]])
        assert torch.allclose(batched[0, : len(targets[0])], single[0], atol=1e-5)

    def test_permutation_equivariance(self, checkpoint):
        inputs = [word_seq(0, 1), word_seq(2, 3, 4), word_seq(5,)]
        targets = [word_seq(6, 7), word_seq(8,), word_seq(9, 10)]
        order = [2, 0, 1]
        fwd = forward_logprobs(checkpoint, inputs, targets)
        perm = forward_logprobs(checkpoint, [inputs[i] for i in order], [targets[i] for i in order])
        for out_row, in_row in enumerate(order):
            t = len(targets[in_row])
            assert torch.allclose(perm[out_row, :t], fwd[in_row, :t], atol=1e-5)

    def test_dropout_off_determinism(self, checkpoint):
        inputs = [word_seq(0, 1, 2)]
        targets = [word_seq(3, 4)]
        a = forward_logprobs(checkpoint, inputs, targets)
        b = forward_logprobs(checkpoint, inputs, targets)
        assert torch.equal(a, b)

    def test_out_of_range_id_fatal(self, checkpoint):
        bad = TokenSequence((checkpoint.config.vocab_size,))
        with pytest.raises(ValueError):
            forward_logprobs(checkpoint, [bad], [word_seq(0)])


class TestLoss:
    def test_zeroed_model_is_uniform(self, checkpoint):
        zeroed = Checkpoint(config=checkpoint.config, module=checkpoint.clone_module(),
                            tokenizer=checkpoint.tokenizer, provenance=[])
        with torch.no_grad():
            for p in zeroed.module.parameters():
                p.zero_()
        pairs = [(word_seq(0, 1, 2), TokenSequence((259 + 5, 259 + 6, EOS_ID)))]
        value = loss(zeroed, pairs)
        assert value == pytest.approx(math.log(checkpoint.config.vocab_size), abs=1e-3)

    def test_delta_distribution_near_zero_loss(self):
        # crafted log-probabilities that put ~all mass on the target tokens
        targets = torch.tensor([[3, 1, 0]])  # token, EOS, padding
        logits = torch.full((1, 3, 6), -30.0)
        logits[0, 0, 3] = 0.0
        logits[0, 1, 1] = 0.0
        lp = torch.log_softmax(logits, dim=-1)
        assert float(sequence_xent(lp, targets)) == pytest.approx(0.0, abs=1e-4)

    def test_hand_computed_two_token_vocab(self):
        # two positions, vocabulary {0: pad, 1: tok}; fixed logits [0.3, 1.1]
        # log-softmax -> lp(tok) = 1.1 - log(exp(0.3) + exp(1.1))
        logits = torch.tensor([[[0.3, 1.1], [0.3, 1.1]]])
        targets = torch.tensor([[1, 1]])
        expected = -(1.1 - math.log(math.exp(0.3) + math.exp(1.1)))
        got = float(sequence_xent(torch.log_softmax(logits, dim=-1), targets))
        assert got == pytest.approx(expected, abs=1e-6)

    def test_padding_masked_out(self):
        lp = torch.log_softmax(torch.randn(1, 4, 8, generator=torch.Generator().manual_seed(0)), dim=-1)
        targets_padded = torch.tensor([[5, 2, 0, 0]])
        targets_short = torch.tensor([[5, 2]])
        assert float(sequence_xent(lp, targets_padded)) == pytest.approx(
            float(sequence_xent(lp[:, :2], targets_short)))

    def test_all_pad_target_is_error(self):
        lp = torch.zeros(1, 2, 4)
        with pytest.raises(ValueError):
            sequence_xent(lp, torch.tensor([[0, 0]]))

    def test_missing_eos_rejected(self, checkpoint):
        with pytest.raises(ValueError):
            loss(checkpoint, [(word_seq(0), word_seq(1))])


class TestCheckpointIO:
    def test_save_load_exact_round_trip(self, checkpoint, tmp_path):
        target_dir = tmp_path / "ckpt"
        checkpoint.save(target_dir)
        loaded = load_base(target_dir)
        assert loaded.config == checkpoint.config
        for name, tensor in checkpoint.parameters_map.items():
            assert torch.equal(tensor, loaded.parameters_map[name]), name

    def test_loss_preserved_to_last_bit(self, checkpoint, tmp_path):
        pairs = [(word_seq(0, 1, 2, 3), TokenSequence((260, 261, EOS_ID))),
                 (word_seq(7, 8), TokenSequence((266, EOS_ID)))]
        before = loss(checkpoint, pairs)
        checkpoint.save(tmp_path / "ckpt")
        after = loss(load_base(tmp_path / "ckpt"), pairs)
        assert before == after

    def test_provenance_round_trip(self, checkpoint, tmp_path):
        ck = Checkpoint(config=checkpoint.config, module=checkpoint.clone_module(),
                        tokenizer=checkpoint.tokenizer,
                        provenance=[StageRecord("base", "init", 0, 1),
                                    StageRecord("finetune", "squad", 25, 2)])
        ck.save(tmp_path / "ckpt")
        loaded = load_base(tmp_path / "ckpt")
        assert loaded.provenance == ck.provenance
        assert loaded.provenance_path() == ["base", "finetune:squad"]

    def test_shape_mismatch_names_offending_tensor(self, checkpoint, tmp_path):
        import json
        checkpoint.save(tmp_path / "ckpt")
        manifest_path = tmp_path / "ckpt" / "config.json"
        manifest = json.loads(manifest_path.read_text())
        manifest["config"]["feedforward_dim"] = 128
        manifest_path.write_text(json.dumps(manifest))
        with pytest.raises(CheckpointError) as err:
            load_base(tmp_path / "ckpt")
        assert "ff" in str(err.value)

    def test_missing_directory_fatal(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_base(tmp_path / "missing")


class TestGradients:
    def test_analytic_gradients_match_finite_differences(self, tokenizer):
        cfg = ModelConfig(vocab_size=tokenizer.vocab_size, d_model=16, num_layers=1,
                          num_heads=2, feedforward_dim=32, dropout=0.0)
        module = EncoderDecoderTransformer(cfg).double()
        torch.manual_seed(0)
        for p in module.parameters():
            with torch.no_grad():
                p.copy_(torch.randn_like(p) * 0.1)
        module.train()

        src = [word_seq(0, 1, 2, 3, 4), word_seq(5, 6, 7)]
        tgt = [TokenSequence((260, 261, 262, EOS_ID)), TokenSequence((263, EOS_ID))]
        src_ids, src_mask = pad_batch(src)
        tgt_ids, _ = pad_batch(tgt)

        out = compute_batch_loss(module, src_ids, src_mask, tgt_ids)
        out.backward()

        rng = torch.Generator().manual_seed(1)
        named = [(n, p) for n, p in module.named_parameters()]
        checked = passed = 0
        h = 1e-5
        for _ in range(120):
            pi = int(torch.randint(len(named), (1,), generator=rng))
            name, p = named[pi]
            flat = p.detach().reshape(-1)
            ci = int(torch.randint(flat.numel(), (1,), generator=rng))
            with torch.no_grad():
                orig = float(flat[ci])
                flat[ci] = orig + h
                up = float(compute_batch_loss(module, src_ids, src_mask, tgt_ids))
                flat[ci] = orig - h
                down = float(compute_batch_loss(module, src_ids, src_mask, tgt_ids))
                flat[ci] = orig
            numeric = (up - down) / (2 * h)
            analytic = float(p.grad.reshape(-1)[ci])
            checked += 1
            # relative 1e-3 with an absolute floor at the finite-difference
            # noise level, for near-zero true gradients
            tolerance = max(1e-3 * max(abs(numeric), abs(analytic)), 1e-8)
            if abs(numeric - analytic) < tolerance:
                passed += 1
        assert passed / checked >= 0.95, f"{passed}/{checked} coordinates within tolerance"


def test_shift_right_layout():
    tgt = torch.tensor([[5, 6, 1], [7, 1, 0]])
    shifted = shift_right(tgt)
    assert shifted.tolist() == [[0, 5, 6], [0, 7, 1]]
