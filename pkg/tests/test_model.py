"""Architecture contracts: shapes, pairing, decoder independence, checkpoints."""

import numpy as np
import pytest

from hoidet.autograd import Tensor, backward, no_grad
from hoidet.errors import ConfigError, UsageError
from hoidet.model import (AttentionRecord, HOIModel, ModelConfig, export_attention,
                          load_attention, load_checkpoint, model_from_checkpoint,
                          save_checkpoint)
from hoidet.rng import derive_rng


@pytest.fixture
def model(toy_config):
    return HOIModel(toy_config, seed=7)


@pytest.fixture
def image(rng):
    return rng.random((3, 32, 32))


class TestConfigValidation:
    def test_zero_layer_rejected(self, toy_config):
        import dataclasses
        bad = dataclasses.replace(toy_config, instance_decoder_layers=0)
        with pytest.raises(ConfigError):
            HOIModel(bad)

    def test_indivisible_memory_dim_rejected(self, toy_config):
        import dataclasses
        bad = dataclasses.replace(toy_config, memory_dim=30)
        with pytest.raises(ConfigError):
            HOIModel(bad)

    def test_indivisible_image_rejected(self, toy_config):
        import dataclasses
        bad = dataclasses.replace(toy_config, image_size=30)
        with pytest.raises(ConfigError):
            HOIModel(bad)


class TestBackbone:
    def test_feature_grid_shape(self, model, image):
        feats = model.extract_features(image)
        assert feats.shape == (16, 4, 4)

    def test_zero_image_finite_features(self, model):
        feats = model.extract_features(np.zeros((3, 32, 32)))
        assert np.all(np.isfinite(feats.data))

    def test_gradient_reaches_backbone(self, model, image):
        model.train()
        feats = model.extract_features(image)
        backward(feats.sum())
        grads = [np.abs(p.grad).sum() for _, p in model.backbone.named_parameters()]
        assert all(g > 0 for g in grads)

    def test_indivisible_input_rejected(self, model):
        with pytest.raises(ConfigError):
            model.extract_features(np.zeros((3, 33, 33)))


class TestTokenize:
    def test_row_major_marker_pixel(self, model):
        # light up exactly one patch; its token must sit at row*W' + col
        img = np.zeros((3, 32, 32))
        row, col = 2, 1
        img[:, row * 8:(row + 1) * 8, col * 8:(col + 1) * 8] = 1.0
        feats = model.extract_features(img)
        tokens = model.tokenize(feats)
        assert tokens.shape == (16, 32)
        baseline = model.tokenize(model.extract_features(np.zeros((3, 32, 32))))
        delta = np.abs(tokens.data - baseline.data).sum(axis=1)
        assert delta.argmax() == row * 4 + col
        assert np.count_nonzero(delta > 1e-9) == 1

    def test_token_width_follows_memory_dim(self):
        cfg = ModelConfig(memory_dim=256, heads=8, encoder_layers=1,
                          instance_decoder_layers=1, relation_decoder_layers=1,
                          num_queries=4, patch_size=8, backbone_channels=8,
                          image_size=32, ffn_dim=32, dropout=0.0)
        model = HOIModel(cfg, seed=0)
        tokens = model.tokenize(model.extract_features(np.zeros((3, 32, 32))))
        assert tokens.shape == (16, 256)

    def test_identity_projection_preserves_values(self, rng, toy_config):
        import dataclasses
        cfg = dataclasses.replace(toy_config, backbone_channels=32)
        model = HOIModel(cfg, seed=0)
        model.token_proj.weight.data[...] = np.eye(32)
        model.token_proj.bias.data[...] = 0.0
        feats = Tensor(rng.random((32, 4, 4)))
        tokens = model.tokenize(feats)
        assert np.allclose(tokens.data, feats.data.transpose(1, 2, 0).reshape(16, 32))


class TestEncoder:
    def test_output_shape(self, model, image):
        model.eval()
        tokens = model.tokenize(model.extract_features(image))
        memory = model.encode(tokens)
        assert memory.tokens.shape == (16, 32)
        assert memory.grid == (4, 4)

    def test_permutation_equivariance(self, rng, toy_config):
        model = HOIModel(toy_config, seed=3)
        model.eval()
        tokens = rng.normal(size=(16, 32))
        perm = rng.permutation(16)
        pos = model.token_pos.data.copy()
        out = model.encoder(Tensor(tokens), Tensor(pos))
        out_perm = model.encoder(Tensor(tokens[perm]), Tensor(pos[perm]))
        assert np.allclose(out_perm.data, out.data[perm], atol=1e-10)

    def test_gradient_through_one_layer(self, rng, toy_config):
        from gradcheck import check_gradients
        model = HOIModel(toy_config, seed=3)
        model.eval()
        layer = model.encoder.layers[0]
        pos = rng.normal(size=(6, 32))
        x = rng.normal(size=(6, 32))
        downstream = rng.normal(size=(6, 32))
        check_gradients(lambda ts: (layer(ts[0], Tensor(pos), None) * downstream).sum(),
                        [x], tol=1e-4)


class TestDecoders:
    def test_states_shape_and_attention_rows(self, model, image):
        model.eval()
        memory = model.encode(model.tokenize(model.extract_features(image)))
        states, record = model.decode_instance(memory)
        assert len(states) == 1
        assert states[-1].shape == (10, 32)
        assert record.branch == "instance"
        for layer_weights in record.layer_weights:
            assert np.abs(layer_weights.sum(axis=-1) - 1.0).max() < 1e-10

    def test_relation_decoder_independent_weights(self, model, image):
        model.eval()
        memory = model.encode(model.tokenize(model.extract_features(image)))
        before, _ = model.decode_relation(memory)
        inst_params = {name for name, _ in model.instance_decoder.named_parameters()}
        rel_params = {name for name, _ in model.relation_decoder.named_parameters()}
        # disjoint objects, and mutating one decoder leaves the other unchanged
        inst_ids = {id(p) for _, p in model.instance_decoder.named_parameters()}
        rel_ids = {id(p) for _, p in model.relation_decoder.named_parameters()}
        assert inst_ids.isdisjoint(rel_ids)
        for _, p in model.instance_decoder.named_parameters():
            p.data += 1.0
        after, _ = model.decode_relation(memory)
        assert np.array_equal(before[-1].data, after[-1].data)
        assert inst_params and rel_params

    def test_pairing_is_index_aligned(self, model, image):
        model.eval()
        out = model.forward(image)
        q = model.cfg.num_queries
        assert out.instance.human_boxes.shape == (1, q, 4)
        assert out.relation.relation_boxes.shape == (1, q, 4)
        # same query axis, no reordering anywhere between the two streams
        assert out.instance.object_logits.shape[1] == out.relation.relation_logits.shape[1]


class TestHeads:
    def test_boxes_strictly_inside_unit_interval(self, model, rng):
        states = Tensor(rng.normal(size=(10, 32)) * 5)
        inst = model.instance_heads(states)
        for boxes in (inst.human_boxes, inst.object_boxes):
            assert boxes.data.min() > 0.0 and boxes.data.max() < 1.0

    def test_logit_widths(self, model, rng):
        states = Tensor(rng.normal(size=(10, 32)))
        inst = model.instance_heads(states)
        rel = model.relation_heads(states)
        assert inst.object_logits.shape == (10, 5)   # 4 classes + no-object
        assert rel.relation_logits.shape == (10, 5)  # 5 relations, no extra slot

    def test_deterministic_for_fixed_weights(self, model, rng):
        states = Tensor(rng.normal(size=(10, 32)))
        a = model.instance_heads(states)
        b = model.instance_heads(states)
        assert np.array_equal(a.object_logits.data, b.object_logits.data)


class TestForward:
    def test_shape_audit(self, model, image):
        model.eval()
        out = model.forward(image)
        assert out.instance.human_boxes.shape == (1, 10, 4)
        assert out.instance.object_boxes.shape == (1, 10, 4)
        assert out.instance.object_logits.shape == (1, 10, 5)
        assert out.relation.relation_boxes.shape == (1, 10, 4)
        assert out.relation.relation_logits.shape == (1, 10, 5)
        assert out.grid == (4, 4)
        assert [r.branch for r in out.attention] == ["instance", "relation"]

    def test_eval_mode_bitwise_deterministic(self, model, image):
        model.eval()
        with no_grad():
            a = model.forward(image)
            b = model.forward(image)
        assert np.array_equal(a.instance.object_logits.data, b.instance.object_logits.data)
        assert np.array_equal(a.relation.relation_boxes.data, b.relation.relation_boxes.data)

    def test_train_mode_requires_rng(self, model, image):
        model.train()
        with pytest.raises(UsageError):
            model.forward(image)

    def test_aux_outputs_only_in_training(self, toy_config, image):
        import dataclasses
        cfg = dataclasses.replace(toy_config, instance_decoder_layers=2,
                                  relation_decoder_layers=2)
        model = HOIModel(cfg, seed=0)
        model.train()
        out = model.forward(image, rng=derive_rng(0, "drop"))
        assert len(out.aux) == 1
        model.eval()
        assert model.forward(image).aux == []

    def test_shared_decoder_mode(self, toy_config, image):
        import dataclasses
        cfg = dataclasses.replace(toy_config, parallel_decoders=False)
        model = HOIModel(cfg, seed=0)
        model.eval()
        out = model.forward(image)
        assert [r.branch for r in out.attention] == ["shared"]
        assert out.relation.relation_logits.shape == (1, 10, 5)
        with pytest.raises(UsageError):
            memory = model.encode(model.tokenize(model.extract_features(Tensor(image))))
            model.decode_relation(memory)

    def test_batched_forward_matches_single(self, model, rng):
        model.eval()
        images = rng.random((2, 3, 32, 32))
        with no_grad():
            batched = model.forward(images)
            single = model.forward(images[1])
        assert np.allclose(batched.instance.object_logits.data[1],
                           single.instance.object_logits.data[0], atol=1e-12)


class TestCheckpoint:
    def test_roundtrip_bitwise(self, model, tmp_path, image):
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, model, meta={"step": 12})
        ckpt = load_checkpoint(path)
        assert ckpt.meta["step"] == 12
        clone = model_from_checkpoint(ckpt)
        model.eval()
        clone.eval()
        with no_grad():
            a = model.forward(image)
            b = clone.forward(image)
        assert np.array_equal(a.instance.object_logits.data, b.instance.object_logits.data)

    def test_shape_diff_reported(self, model, toy_config, tmp_path):
        import dataclasses
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, model)
        ckpt = load_checkpoint(path)
        other_cfg = dataclasses.replace(toy_config, memory_dim=64, ffn_dim=128)
        other = HOIModel(other_cfg, seed=0)
        with pytest.raises(ConfigError) as err:
            other.load_state_dict(ckpt.params)
        assert "shape mismatch" in str(err.value)

    def test_bad_magic_rejected(self, tmp_path):
        from hoidet.errors import DataError
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 32)
        with pytest.raises(DataError):
            load_checkpoint(path)


class TestAttentionExport:
    def test_roundtrip_rows_and_tags(self, model, image, tmp_path):
        model.eval()
        out = model.forward(image)
        path = tmp_path / "attn.json"
        export_attention(out.attention, out.grid, path, image_id="img0")
        payload = load_attention(path)
        assert payload["grid"] == [4, 4]
        branches = {e["branch"] for e in payload["records"]}
        assert branches == {"instance", "relation"}
        for entry in payload["records"][:8]:
            grid = np.array(entry["weights"])
            assert grid.shape == (4, 4)
            assert grid.sum() == pytest.approx(1.0, abs=1e-10)

    def test_grid_reshape_roundtrips(self, model, image, tmp_path):
        model.eval()
        out = model.forward(image)
        raw = out.attention[0].layer_weights[0][0]  # [heads, Q, N]
        path = tmp_path / "attn.json"
        export_attention(out.attention, out.grid, path)
        payload = load_attention(path)
        first = [e for e in payload["records"]
                 if e["branch"] == "instance" and e["layer"] == 0
                 and e["head"] == 0 and e["query"] == 0][0]
        assert np.allclose(np.array(first["weights"]).reshape(-1), raw[0, 0])


class TestTrainingSmoke:
    def test_loss_decreases_on_one_image(self, toy_config, rng):
        import dataclasses
        from hoidet.boxes import BBox
        from hoidet.data import GroundTruthHOI, SceneSample
        from hoidet.losses import LossWeights
        from hoidet.optim import AdamW
        from hoidet.training import make_param_groups, train_step

        cfg = dataclasses.replace(toy_config, dropout=0.0)
        model = HOIModel(cfg, seed=1)
        gt = GroundTruthHOI(human_box=BBox(0.3, 0.5, 0.25, 0.35),
                            object_box=BBox(0.7, 0.45, 0.2, 0.2),
                            object_class=1, relation_classes=(1,))
        sample = SceneSample(image_id=0, image=rng.random((3, 32, 32)), gts=[gt])
        optimizer = AdamW(make_param_groups(model, 1e-3, 1e-4), weight_decay=1e-4)
        weights = LossWeights()
        totals = [train_step(model, [sample], optimizer, weights, step=s, seed=0).total
                  for s in range(50)]
        assert totals[-1] < totals[0]
        assert min(totals) == min(totals[-10:])  # still improving near the end
