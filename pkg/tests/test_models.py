import numpy as np
import pytest

from filtrank import models as M
from filtrank.imagecore import Image

RNG = np.random.default_rng(42)


def random_image(side):
    return Image.from_array(RNG.random((side, side, 3)).astype(np.float32))


@pytest.fixture(scope="module")
def desk_rapid():
    return M.build_column(M.arch_for("rapid_reduced", "desk"),
                          np.random.default_rng(0))


def shape_walk(layers, side):
    """Independent shape propagation used as the oracle for parameter sizing."""
    channels = 3
    for layer in layers:
        if layer["kind"] == "conv":
            side = (side + 2 * layer["p"] - layer["k"]) // layer["s"] + 1
            channels = layer["f"]
        elif layer["kind"] == "pool":
            side = (side - layer["window"]) // layer["s"] + 1
    return channels, side


@pytest.mark.parametrize("variant,profile,canonical_side", [
    ("alexnet_reduced", "canonical", 227),
    ("rapid_reduced", "canonical", 224),
    ("alexnet_reduced", "desk", 64),
    ("rapid_reduced", "desk", 64),
])
def test_fc_weight_count_matches_shape_oracle(variant, profile, canonical_side):
    arch = M.arch_for(variant, profile)
    assert arch.input_side == canonical_side
    channels, side = shape_walk(M._conv_layers(arch), arch.input_side)
    flat = channels * side * side
    params = M.init_params(arch, np.random.default_rng(0), "paircomp")
    first_fc = "column/fc1/w"
    assert params[first_fc].shape[0] == flat
    assert params[first_fc].shape == (flat, 4096 if variant == "alexnet_reduced" else 128)


def test_alexnet_stack_matches_layer_inventory():
    arch = M.arch_for("alexnet_reduced", "canonical")
    convs = [(l["name"], l["k"], l["f"]) for l in M._conv_layers(arch) if l["kind"] == "conv"]
    assert convs == [("conv1", 11, 96), ("conv2", 5, 256), ("conv3", 3, 384),
                     ("conv4", 3, 384), ("conv5", 3, 256)]
    params = M.init_params(arch, np.random.default_rng(0), "paircomp")
    assert params["column/fc1/w"].shape[1] == 4096
    assert params["column/fc2/w"].shape[1] == 128


def test_rapid_stack_matches_layer_inventory():
    arch = M.arch_for("rapid_reduced", "canonical")
    convs = [(l["name"], l["k"], l["f"]) for l in M._conv_layers(arch) if l["kind"] == "conv"]
    assert convs == [("conv1", 11, 64), ("conv2", 5, 64), ("conv3", 3, 64),
                     ("conv4", 3, 64)]
    params = M.init_params(arch, np.random.default_rng(0), "paircomp")
    assert params["column/fc1/w"].shape[1] == 128


def test_embedding_is_128d(desk_rapid):
    emb = M.embed(desk_rapid, random_image(64))
    assert emb.shape == (128,)
    assert np.isfinite(emb).all()


def test_same_seed_identical_parameters():
    arch = M.arch_for("rapid_reduced", "desk")
    a = M.build_column(arch, np.random.default_rng(7))
    b = M.build_column(arch, np.random.default_rng(7))
    for k in a.params:
        assert np.array_equal(a.params[k], b.params[k]), k


def test_zero_final_layer_gives_zero_embedding(desk_rapid):
    model = M.build_column(M.arch_for("rapid_reduced", "desk"),
                           np.random.default_rng(3))
    model.params["column/fc1/w"][:] = 0
    model.params["column/fc1/b"][:] = 0
    emb = M.embed(model, Image.from_array(np.zeros((64, 64, 3))))
    assert np.array_equal(emb, np.zeros(128, np.float32))


def test_incompatible_input_size_raises():
    arch = M.Arch(variant="alexnet_reduced", input_side=24, conv1_stride=4)
    with pytest.raises(M.IncompatibleInputSize):
        M.build_column(arch, np.random.default_rng(0))


def test_embed_rejects_wrong_side(desk_rapid):
    with pytest.raises(M.IncompatibleInputSize):
        M.embed(desk_rapid, random_image(48))


def test_spp_variant_accepts_multiple_sizes():
    arch = M.Arch(variant="alexnet_reduced", input_side=227, conv1_stride=4,
                  spp_levels=3)
    model = M.build_column(arch, np.random.default_rng(1))
    for side in (227, 256):
        emb = M.embed(model, random_image(side))
        assert emb.shape == (128,)
    # spp feature length: channels x (1 + 4 + 9)
    assert model.params["column/fc1/w"].shape[0] == 256 * 14


def test_weight_sharing_across_pair_columns():
    arch = M.arch_for("rapid_reduced", "desk")
    model = M.build_column(arch, np.random.default_rng(5))
    g, loss, aux = model.train_path(batch_size=2)
    x = np.stack([M.image_to_input(random_image(64)) for _ in range(2)])
    acts = g.forward({"xp": x, "xn": x.copy()})
    # both columns are literally the same parameters: identical embeddings
    assert np.array_equal(acts.values[aux["fp"]], acts.values[aux["fn"]])
    # and the shared loss is exactly zero for identical pairs
    assert float(acts.values[loss]) == 0.0


def test_classify_softmax_properties():
    arch = M.arch_for("rapid_reduced", "desk")
    model = M.build_column(arch, np.random.default_rng(6), mode="paircomp_cate")
    probs = M.classify_category(model, random_image(64))
    assert probs.shape == (8,)
    assert probs.min() >= 0
    assert abs(probs.sum() - 1.0) < 1e-6


def test_classify_uniform_for_zero_head():
    arch = M.arch_for("rapid_reduced", "desk")
    model = M.build_column(arch, np.random.default_rng(6), mode="paircomp_cate")
    model.params["heads/category/w"][:] = 0
    model.params["heads/category/b"][:] = 0
    probs = M.classify_category(model, random_image(64))
    assert np.allclose(probs, 1 / 8, atol=1e-7)


def test_classify_requires_category_head(desk_rapid):
    with pytest.raises(M.NoCategoryHead):
        M.classify_category(desk_rapid, random_image(64))


def test_fusion_zero_weights_zero_output():
    arch = M.arch_for("rapid_reduced", "desk")
    model = M.build_column(arch, np.random.default_rng(8), mode="paircomp_cate")
    model.params["heads/fusion/w"][:] = 0
    model.params["heads/fusion/b"][:] = 0
    out = M.fuse(model, RNG.standard_normal(128), RNG.standard_normal(128))
    assert np.array_equal(out, np.zeros(128, np.float32))


def test_fusion_linearity_with_zero_bias():
    arch = M.arch_for("rapid_reduced", "desk")
    model = M.build_column(arch, np.random.default_rng(9), mode="paircomp_cate")
    model.params["heads/fusion/b"][:] = 0
    a = RNG.standard_normal(128).astype(np.float32)
    b = RNG.standard_normal(128).astype(np.float32)
    c = RNG.standard_normal(128).astype(np.float32)
    lhs = M.fuse(model, a + b, c + c)
    rhs = M.fuse(model, a, c) + M.fuse(model, b, c)
    assert np.allclose(lhs, rhs, atol=1e-4)


def test_fusion_requires_layer(desk_rapid):
    with pytest.raises(M.MissingFusionLayer):
        M.fuse(desk_rapid, np.zeros(128), np.zeros(128))


def test_fusion_applies_same_weights_to_both_members():
    arch = M.arch_for("rapid_reduced", "desk")
    model = M.build_column(arch, np.random.default_rng(10), mode="paircomp_cate")
    cat_repr = RNG.standard_normal(128).astype(np.float32)
    f_p = RNG.standard_normal(128).astype(np.float32)
    f_n = RNG.standard_normal(128).astype(np.float32)
    fused = model.fuse_batch(np.stack([f_p, f_n]),
                             np.stack([cat_repr, cat_repr]))
    # same weights serve both rows (tolerance: BLAS kernels differ by batch shape)
    assert np.allclose(fused[0], M.fuse(model, f_p, cat_repr), atol=1e-5)
    assert np.allclose(fused[1], M.fuse(model, f_n, cat_repr), atol=1e-5)


def test_save_load_round_trip(tmp_path, desk_rapid):
    img = random_image(64)
    before = M.embed(desk_rapid, img)
    M.save_model(tmp_path / "m.bin", desk_rapid)
    loaded, meta, extra = M.load_model(tmp_path / "m.bin")
    assert meta["mode"] == "paircomp"
    assert loaded.arch == desk_rapid.arch
    assert np.array_equal(M.embed(loaded, img), before)
