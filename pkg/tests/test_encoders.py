import numpy as np
import pytest

from relimp.autodiff import ShapeError
from relimp.encoders import encode_ego, encode_global, encode_object, encode_objects, encode_sequence, global_stream
from relimp.gradcheck import check_gradients
from relimp.layers import bind
from relimp.model import ModelConfig, init_params
from relimp.scene import normalize_boxes
from relimp.synth import GenConfig, generate_dataset

TINY = ModelConfig(lstm_hidden=3, feat_dim=3, mlp_hidden=4, graph_hidden=3, cls_hidden=4,
                   aux_hidden1=3, aux_hidden2=4, d_appearance=4, d_depthsem=3, t_future=2)
TINY_GEN = GenConfig(scene_count=6, seed=3, T_h=3, T_f=2, d_appearance=4, d_depthsem=3, max_objects=4)


@pytest.fixture(scope="module")
def scenes():
    return generate_dataset(TINY_GEN).labeled


def zeroed(params):
    return {k: (v if k.startswith("norm.") else np.zeros_like(v)) for k, v in params.items()}


def test_zero_weights_give_zero_output(scenes):
    P = bind(zeroed(init_params(ModelConfig())))
    stream = np.random.default_rng(0).normal(size=(8, 16))
    np.testing.assert_array_equal(encode_sequence(stream[:, None], P, "app").data, 0.0)
    np.testing.assert_array_equal(encode_ego(scenes[0].ego, bind(zeroed(init_params(TINY)))).data, 0.0)


def test_paper_scale_dims():
    P = bind(init_params(ModelConfig()))
    scene = generate_dataset(GenConfig(scene_count=1, seed=0)).labeled[0]
    assert encode_sequence(np.ones((8, 1, 16)), P, "app").shape == (1, 128)
    assert encode_object(scene.objects[0], scene.W, scene.H, P).shape == (128,)
    assert encode_global(scene, P).shape == (128,)
    assert encode_ego(scene.ego, P).shape == (128,)


def test_wrong_row_count():
    P = bind(init_params(TINY))
    with pytest.raises(ShapeError, match="expected 3 frames"):
        encode_sequence(np.ones((2, 1, 4)), P, "app", T_h=3)


def test_wrong_feature_width():
    P = bind(init_params(TINY))
    with pytest.raises(ShapeError):
        encode_sequence(np.ones((3, 1, 5)), P, "app")


def test_identical_objects_identical_features(scenes):
    P = bind(init_params(TINY, seed=1))
    ob = scenes[0].objects[0]
    a = encode_object(ob, scenes[0].W, scenes[0].H, P).data
    b = encode_object(ob, scenes[0].W, scenes[0].H, P).data
    np.testing.assert_array_equal(a, b)


def test_batched_objects_permute(scenes):
    P = bind(init_params(TINY, seed=2))
    rng = np.random.default_rng(0)
    app, ds, bbox = rng.normal(size=(3, 6, 4)), rng.normal(size=(3, 6, 3)), rng.uniform(0.1, 0.9, (3, 6, 4))
    perm = rng.permutation(6)
    base = encode_objects(app, ds, bbox, P).data
    permuted = encode_objects(app[:, perm], ds[:, perm], bbox[:, perm], P).data
    np.testing.assert_array_equal(permuted, base[perm])


def test_batched_matches_single(scenes):
    P = bind(init_params(TINY, seed=4))
    s = scenes[1]
    rows = [encode_object(o, s.W, s.H, P).data for o in s.objects]
    batched = encode_objects(np.stack([o.appearance_feat for o in s.objects], 1),
                             np.stack([o.depthsem_feat for o in s.objects], 1),
                             np.stack([normalize_boxes(o.boxes, s.W, s.H) for o in s.objects], 1), P).data
    np.testing.assert_allclose(batched, np.stack(rows), rtol=0, atol=1e-14)


def test_global_single_object(scenes):
    s = scenes[0]
    one = type(s)(s.scene_id, s.W, s.H, s.T_h, s.intention, s.objects[:1], s.ego, None)
    ob = s.objects[0]
    np.testing.assert_array_equal(global_stream(one), np.concatenate([ob.appearance_feat, ob.depthsem_feat], 1))


def test_global_permutation_invariant(scenes):
    P = bind(init_params(TINY, seed=5))
    s = scenes[2]
    rev = type(s)(s.scene_id, s.W, s.H, s.T_h, s.intention, s.objects[::-1], s.ego, None)
    np.testing.assert_allclose(encode_global(rev, P).data, encode_global(s, P).data, rtol=0, atol=1e-14)


@pytest.mark.parametrize("which", ["app", "bbox", "ds", "global", "ego"])
def test_encoder_weight_gradients(which):
    params = init_params(TINY, seed=6)
    names = [k for k in params if k.startswith(f"enc.{which}.")]
    dim = {"app": 4, "bbox": 4, "ds": 3, "global": 7, "ego": 6}[which]
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(25):
        inputs = {k: params[k] + rng.normal(scale=0.3, size=params[k].shape) for k in names}
        stream = rng.normal(size=(3, 2, dim))
        w = rng.normal(size=(2, 3))
        worst = max(worst, check_gradients(lambda t: (encode_sequence(stream, t, which) * w).sum(), inputs))
    assert worst < 1e-5
