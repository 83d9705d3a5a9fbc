import dataclasses

import numpy as np
import pytest

from cif_scd.errors import ConfigError, ShapeMismatch
from cif_scd.metrics import ScoredChangePoints
from cif_scd.model import (
    BslBaseline,
    ModelConfig,
    ScdModel,
    TrainingExample,
    bsl_frame_targets,
    joint_loss,
    reference_change_times,
    scd_forward,
    speaker_path_forward,
    tokens_to_change_times,
)
from cif_scd.nn import Adam, Tensor, WarmupHold, bce_loss
from oracles import cumulative_mass_cif, finite_difference_check

CFG = ModelConfig()

EXAMPLE_WEIGHTS = np.array([0.1, 0.5, 0.6, 0.3, 0.6, 0.5, 0.2, 0.1, 0.4, 0.5, 0.2])


def small_model(seed=0, **overrides):
    return ScdModel(CFG.with_overrides(**overrides), seed=seed)


def random_frames(rng, num_tokens=4, cfg=CFG):
    return rng.standard_normal((num_tokens * 4 * cfg.downsampling, cfg.feature_dim))


def make_example(rng, num_tokens=4, cfg=CFG):
    speakers = rng.integers(0, cfg.num_speakers, size=num_tokens)
    changes = [
        1 if i + 1 < num_tokens and speakers[i + 1] != speakers[i] else 0
        for i in range(num_tokens)
    ]
    return TrainingExample(
        acoustic_frames=random_frames(rng, num_tokens, cfg),
        token_count=num_tokens,
        token_speaker_labels=tuple(int(s) for s in speakers),
        token_change_labels=tuple(changes),
    )


class TestModelConfig:
    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            ModelConfig.from_dict({"nonexistent": 1})

    def test_both_cues_off_rejected(self):
        with pytest.raises(ConfigError):
            ModelConfig(use_difference=False, use_content=False)

    def test_context_validated(self):
        with pytest.raises(ConfigError):
            ModelConfig(conv_context=4)

    def test_json_round_trip(self, tmp_path):
        cfg = ModelConfig(conv_context=2, use_content=False)
        path = tmp_path / "config.json"
        import json

        path.write_text(json.dumps(cfg.to_dict()))
        assert ModelConfig.from_json(path) == cfg


class TestTrainingExample:
    def test_label_lengths_checked(self):
        with pytest.raises(ShapeMismatch):
            TrainingExample(np.zeros((8, 4)), 3, (0, 1), (0, 0, 0))

    def test_final_change_label_must_be_zero(self):
        with pytest.raises(ValueError):
            TrainingExample(np.zeros((8, 4)), 2, (0, 1), (0, 1))


class TestToyAsr:
    def test_train_mode_counts(self):
        model = small_model()
        frames = np.random.default_rng(0).standard_normal((16, CFG.feature_dim))
        bundle = model.asr.forward(frames, token_count=4)
        assert bundle.token_count == 4
        assert bundle.boundaries.shape == (4,)
        assert bundle.cif_tokens.data.shape == (4, CFG.encoder_dim)
        assert bundle.decoder_states.data.shape == (4, CFG.encoder_dim)
        assert bundle.encoded_frames.data.shape == (4, CFG.encoder_dim)

    def test_unit_weights_place_boundaries_on_every_frame(self):
        model = small_model()
        rng = np.random.default_rng(1)
        frames = rng.standard_normal((16, CFG.feature_dim))
        bundle = model.asr.forward(
            frames, token_count=4, weights_override=np.ones(4)
        )
        assert bundle.boundaries.tolist() == [0, 1, 2, 3]
        np.testing.assert_allclose(
            bundle.cif_tokens.data, bundle.encoded_frames.data, atol=1e-12
        )

    def test_cif_tokens_match_cumulative_mass_oracle(self):
        model = small_model(seed=3)
        rng = np.random.default_rng(4)
        frames = rng.standard_normal((32, CFG.feature_dim))
        bundle = model.asr.forward(frames, token_count=5)
        tokens, bounds, _ = cumulative_mass_cif(
            bundle.encoded_frames.data, bundle.weights, target_len=5
        )
        np.testing.assert_array_equal(bundle.boundaries, bounds)
        np.testing.assert_allclose(bundle.cif_tokens.data, tokens, atol=1e-9)

    def test_frame_count_must_match_downsampling(self):
        model = small_model()
        with pytest.raises(ShapeMismatch):
            model.asr.forward(np.zeros((15, CFG.feature_dim)), token_count=3)

    def test_weights_are_sigmoid_outputs(self):
        model = small_model(seed=5)
        frames = np.random.default_rng(6).standard_normal((24, CFG.feature_dim))
        bundle = model.asr.forward(frames, token_count=3)
        assert np.all(bundle.weights > 0.0)
        assert np.all(bundle.weights < 1.0)


class TestSpeakerPath:
    def test_unit_weights_reproduce_speaker_frames(self):
        model = small_model(seed=7)
        frames = np.random.default_rng(8).standard_normal((16, CFG.feature_dim))
        path = speaker_path_forward(
            model.speaker_encoder, model.sid_head, CFG, frames,
            np.ones(4), token_count=4,
        )
        np.testing.assert_allclose(
            path.token_speaker_reps.data, path.speaker_frames.data, atol=1e-12
        )

    def test_worked_example_weights_give_printed_sums(self):
        cfg = CFG.with_overrides(downsampling=1)
        model = ScdModel(cfg, seed=9)
        frames = np.random.default_rng(10).standard_normal((11, cfg.feature_dim))
        path = speaker_path_forward(
            model.speaker_encoder, model.sid_head, cfg, frames,
            EXAMPLE_WEIGHTS, token_count=4,
        )
        z = path.speaker_frames.data
        expected = np.stack([
            0.1 * z[0] + 0.5 * z[1] + 0.4 * z[2],
            0.2 * z[2] + 0.3 * z[3] + 0.5 * z[4],
            0.1 * z[4] + 0.5 * z[5] + 0.2 * z[6] + 0.1 * z[7] + 0.1 * z[8],
            0.3 * z[8] + 0.5 * z[9] + 0.2 * z[10],
        ])
        np.testing.assert_allclose(path.token_speaker_reps.data, expected, atol=1e-9)

    def test_posterior_rows_sum_to_one(self):
        model = small_model(seed=11)
        rng = np.random.default_rng(12)
        bundle, path, _ = model.forward(random_frames(rng), token_count=4)
        np.testing.assert_allclose(
            path.posteriors.sum(axis=1), np.ones(4), atol=1e-6
        )

    def test_weight_length_mismatch(self):
        model = small_model()
        frames = np.zeros((16, CFG.feature_dim))
        with pytest.raises(ShapeMismatch):
            speaker_path_forward(
                model.speaker_encoder, model.sid_head, CFG, frames,
                np.ones(5), token_count=4,
            )

    def test_same_weights_give_identical_alignment_as_asr(self):
        model = small_model(seed=13)
        rng = np.random.default_rng(14)
        bundle, path, _ = model.forward(random_frames(rng, 6), token_count=6)
        np.testing.assert_array_equal(bundle.boundaries, path.fired.boundaries)
        assert bundle.fired.contributions == path.fired.contributions


class TestScdHead:
    def test_single_token_single_score(self):
        model = small_model(seed=15)
        rng = np.random.default_rng(16)
        _, _, scores = model.forward(random_frames(rng, 1), token_count=1)
        assert scores.data.shape == (1,)
        assert 0.0 < scores.data[0] < 1.0

    def test_scores_lie_strictly_inside_unit_interval(self):
        model = small_model(seed=17)
        rng = np.random.default_rng(18)
        _, _, scores = model.forward(random_frames(rng, 8), token_count=8)
        assert np.all(scores.data > 0.0)
        assert np.all(scores.data < 1.0)

    def test_antisymmetric_conv_zeroes_constant_embeddings(self):
        model = small_model(seed=19, use_content=False)
        conv = model.scd_head.sde_conv
        de = CFG.embed_dim
        block = np.random.default_rng(20).standard_normal((de, de))
        conv.weight.data = np.concatenate([-block, np.zeros((de, de)), block])
        conv.bias.data = np.zeros(de)
        constant = Tensor(np.tile(np.linspace(0.5, 1.0, de), (6, 1)))
        out = conv(constant).data
        np.testing.assert_allclose(out[1:-1], np.zeros((4, de)), atol=1e-12)

    def test_content_ablation_ignores_content_inputs(self):
        model = small_model(seed=21, use_content=False)
        rng = np.random.default_rng(22)
        bundle, path, scores = model.forward(random_frames(rng, 5), token_count=5)
        perturbed = dataclasses.replace(
            bundle,
            cif_tokens=Tensor(bundle.cif_tokens.data + 100.0),
            decoder_states=Tensor(bundle.decoder_states.data - 50.0),
        )
        again = model.scd_head(perturbed, path)
        np.testing.assert_array_equal(scores.data, again.data)

    def test_difference_ablation_ignores_speaker_inputs(self):
        model = small_model(seed=23, use_difference=False)
        rng = np.random.default_rng(24)
        bundle, path, scores = model.forward(random_frames(rng, 5), token_count=5)
        perturbed = dataclasses.replace(
            path, embeddings=Tensor(path.embeddings.data + 100.0)
        )
        again = model.scd_head(bundle, perturbed)
        np.testing.assert_array_equal(scores.data, again.data)

    def test_context_locality_with_radius_one(self):
        model = small_model(seed=25, use_content=False, conv_context=1)
        rng = np.random.default_rng(26)
        bundle, path, scores = model.forward(random_frames(rng, 8), token_count=8)
        target = 2  # perturb a token well away from position 5
        bumped = path.embeddings.data.copy()
        bumped[target] += 10.0
        perturbed = dataclasses.replace(path, embeddings=Tensor(bumped))
        again = model.scd_head(bundle, perturbed)
        far = [i for i in range(8) if abs(i - target) > 1]
        np.testing.assert_array_equal(again.data[far], scores.data[far])
        assert not np.allclose(again.data[target], scores.data[target])

    def test_no_conv_variant_runs(self):
        model = small_model(seed=27, use_conv_in_sde=False)
        rng = np.random.default_rng(28)
        _, _, scores = model.forward(random_frames(rng, 4), token_count=4)
        assert scores.data.shape == (4,)
        assert not hasattr(model.scd_head, "sde_conv")

    def test_scd_forward_wrapper(self):
        model = small_model(seed=29)
        rng = np.random.default_rng(30)
        bundle, path, scores = model.forward(random_frames(rng, 3), token_count=3)
        np.testing.assert_array_equal(
            scd_forward(bundle, path, model.scd_head).data, scores.data
        )


class TestJointLoss:
    def test_weight_pair_selects_terms(self):
        rng = np.random.default_rng(31)
        example = make_example(rng, 5)
        speaker_only = small_model(seed=32, loss_weight_change=0.0)
        bundle, path, scores = speaker_only.forward(
            example.acoustic_frames, example.token_count
        )
        total, ams, bce = joint_loss(path, scores, example, speaker_only.cfg)
        assert total.item() == pytest.approx(ams.item())

        change_only = small_model(seed=32, loss_weight_speaker=0.0)
        bundle, path, scores = change_only.forward(
            example.acoustic_frames, example.token_count
        )
        total, ams, bce = joint_loss(path, scores, example, change_only.cfg)
        assert total.item() == pytest.approx(bce.item())

    def test_full_loss_gradients(self):
        rng = np.random.default_rng(33)
        model = small_model(seed=34)
        example = make_example(rng, 4)
        probes = [
            model.speaker_encoder.front.weight,
            model.sid_head.fc_m.weight,
            model.sid_head.class_weights,
            model.scd_head.joint_fc1.weight,
            model.scd_head.sce_fc.weight,
            model.scd_head.sde_ffn.fc1.weight,
        ]

        def build():
            _, path, scores = model.forward(
                example.acoustic_frames, example.token_count
            )
            total, _, _ = joint_loss(path, scores, example, model.cfg)
            return total

        worst = finite_difference_check(build, probes, max_entries=12, rng=rng)
        assert worst < 1e-4

    def test_one_step_leaves_asr_untouched(self):
        rng = np.random.default_rng(35)
        model = small_model(seed=36)
        example = make_example(rng, 5)
        asr_before = {k: v.copy() for k, v in model.asr.state_arrays().items()}
        joint_before = [p.data.copy() for p in model.joint_parameters()]
        opt = Adam(model.joint_parameters(), WarmupHold(1e-3, 1))
        _, path, scores = model.forward(example.acoustic_frames, example.token_count)
        total, _, _ = joint_loss(path, scores, example, model.cfg)
        opt.zero_grad()
        total.backward()
        opt.step()
        asr_after = model.asr.state_arrays()
        assert set(asr_before) == set(asr_after)
        for key in asr_before:
            np.testing.assert_array_equal(asr_before[key], asr_after[key])
        # and the joint side did move
        assert any(
            not np.array_equal(p.data, q)
            for p, q in zip(model.joint_parameters(), joint_before)
        )

    def test_class_permutation_invariance(self):
        rng = np.random.default_rng(37)
        model = small_model(seed=38)
        example = make_example(rng, 6)
        _, path, scores = model.forward(example.acoustic_frames, example.token_count)
        total, ams, bce = joint_loss(path, scores, example, model.cfg)

        sigma = rng.permutation(model.cfg.num_speakers)
        permuted_labels = tuple(int(sigma[l]) for l in example.token_speaker_labels)
        permuted_example = dataclasses.replace(
            example, token_speaker_labels=permuted_labels
        )
        inverse = np.argsort(sigma)
        model.sid_head.class_weights.data = model.sid_head.class_weights.data[inverse]
        _, path2, scores2 = model.forward(
            permuted_example.acoustic_frames, permuted_example.token_count
        )
        total2, ams2, bce2 = joint_loss(path2, scores2, permuted_example, model.cfg)
        assert ams2.item() == pytest.approx(ams.item(), abs=1e-9)
        assert bce2.item() == pytest.approx(bce.item(), abs=1e-12)


class TestBslBaseline:
    def test_zero_head_scores_half(self):
        rng = np.random.default_rng(39)
        baseline = BslBaseline(CFG, rng)
        baseline.mlp_out.weight.data[:] = 0.0
        baseline.mlp_out.bias.data[:] = 0.0
        scores = baseline(rng.standard_normal((32, CFG.feature_dim)))
        np.testing.assert_array_equal(scores.data, np.full(8, 0.5))

    def test_output_length_is_downsampled(self):
        rng = np.random.default_rng(40)
        baseline = BslBaseline(CFG, rng)
        scores = baseline(rng.standard_normal((48, CFG.feature_dim)))
        assert scores.data.shape == (12,)

    def test_frame_targets_collar(self):
        targets = bsl_frame_targets([0.4], num_frames=10, frame_shift_s=0.01,
                                    downsampling=4, collar_s=0.05)
        # frame end times: 0.04, 0.08, ..., 0.40; collar keeps 0.36-0.44
        assert targets.tolist() == [0, 0, 0, 0, 0, 0, 0, 0, 1, 1]

    def test_trainable(self):
        rng = np.random.default_rng(41)
        baseline = BslBaseline(CFG, rng)
        frames = rng.standard_normal((32, CFG.feature_dim))
        targets = np.array([0, 0, 1, 0, 0, 1, 0, 0], dtype=float)
        opt = Adam(baseline.parameters(), WarmupHold(5e-3, 10))
        first = None
        for _ in range(60):
            loss = bce_loss(baseline(frames), targets)
            if first is None:
                first = loss.item()
            opt.zero_grad()
            loss.backward()
            opt.step()
        assert loss.item() < first


class TestTokensToChangeTimes:
    def test_single_boundary(self):
        pts = tokens_to_change_times([3], [0.7], 0.01, 4)
        assert pts.times.tolist() == [pytest.approx(0.16)]
        assert pts.scores.tolist() == [0.7]

    def test_empty(self):
        pts = tokens_to_change_times([], [], 0.01, 4)
        assert len(pts) == 0

    def test_worked_example_boundaries(self):
        pts = tokens_to_change_times([3, 5, 9, 11], [0.1, 0.2, 0.3, 0.4], 0.01, 1)
        np.testing.assert_allclose(pts.times, [0.04, 0.06, 0.10, 0.12], atol=1e-12)

    def test_repeated_boundaries_merge_with_max_score(self):
        pts = tokens_to_change_times([2, 2, 5], [0.3, 0.9, 0.5], 0.01, 2)
        np.testing.assert_allclose(pts.times, [0.06, 0.12], atol=1e-12)
        assert pts.scores.tolist() == [0.9, 0.5]

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            tokens_to_change_times([1, 2], [0.5], 0.01, 1)


class TestReferenceChangeTimes:
    def test_interior_label_flips(self):
        from cif_scd.metrics import Segment, Segmentation

        ref = Segmentation((
            Segment(0.0, 1.0, "a"),
            Segment(1.0, 2.0, "b"),
            Segment(2.0, 3.0, "b"),
            Segment(3.0, 4.0, "c"),
        ))
        assert reference_change_times(ref) == [1.0, 3.0]
