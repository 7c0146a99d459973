import numpy as np
import pytest

from sedseg.config import EncoderConfig, ModelConfig
from sedseg.encoder import encode, init_encoder_params, patchify
from sedseg.params import ParamSet
from sedseg.tensor import ShapeError, Tensor
from sedseg.text import (
    DEFAULT_TEMPLATES,
    CategoryVocabulary,
    FileProvider,
    SyntheticProvider,
    embed_texts,
    expand_prompts,
    read_embeddings,
    read_templates,
    write_embeddings,
    write_templates,
)

from conftest import FD_TOL, check_grads


def make_encoder(cfg=None, seed=0, dtype=np.float32):
    cfg = cfg or EncoderConfig()
    params = ParamSet(dtype)
    init_encoder_params(params, cfg, np.random.default_rng(seed))
    return cfg, params


def image(rng, H, W, dtype=np.float32):
    return Tensor(rng.uniform(0, 1, size=(H, W, 3)).astype(dtype))


class TestPyramid:
    def test_crop_128_extents(self, rng):
        cfg, params = make_encoder()
        pyr = encode(image(rng, 128, 128), cfg, params)
        assert pyr.F2.shape == (32, 32, 16)
        assert pyr.F3.shape == (16, 16, 32)
        assert pyr.F4.shape == (8, 8, 64)
        assert pyr.F5.shape == (4, 4, 128)
        assert pyr.Fv.shape == (4, 4, 64)

    def test_crop_768_gives_24(self, rng):
        cfg = EncoderConfig(stage_widths=(4, 4, 4, 4), align_dim=8)
        cfg, params = make_encoder(cfg)
        assert encode(image(rng, 768, 768), cfg, params).Fv.shape[:2] == (24, 24)

    @pytest.mark.parametrize("H,W", [(32, 32), (64, 96), (160, 32)])
    def test_extents_contract(self, rng, H, W):
        cfg, params = make_encoder(EncoderConfig(stage_widths=(4, 8, 8, 8), align_dim=4))
        pyr = encode(image(rng, H, W), cfg, params)
        for lvl, s in zip((pyr.F2, pyr.F3, pyr.F4, pyr.F5, pyr.Fv), (4, 8, 16, 32, 32)):
            assert lvl.shape[:2] == (H // s, W // s)

    @pytest.mark.parametrize("H,W", [(100, 128), (128, 48), (0, 32)])
    def test_indivisible_extents_rejected(self, rng, H, W):
        cfg, params = make_encoder()
        with pytest.raises(ShapeError, match="multiples of 32"):
            encode(Tensor(np.zeros((H, W, 3), dtype=np.float32)), cfg, params)

    def test_zero_final_mlp_gives_zero_fv(self, rng):
        cfg, params = make_encoder()
        for name in ("encoder.align.fc2.w", "encoder.align.fc2.b"):
            params[name].data[...] = 0
        assert not encode(image(rng, 64, 64), cfg, params).Fv.data.any()

    def test_deterministic(self, rng):
        cfg, p1 = make_encoder(seed=3)
        _, p2 = make_encoder(seed=3)
        img = image(rng, 64, 64)
        np.testing.assert_array_equal(encode(img, cfg, p1).Fv.data, encode(img, cfg, p2).Fv.data)

    def test_skips_order(self, rng):
        cfg, params = make_encoder()
        pyr = encode(image(rng, 64, 64), cfg, params)
        assert [s.shape[0] for s in pyr.skips()] == [4, 8, 16]

    def test_all_parameters_in_encoder_group(self):
        _, params = make_encoder()
        assert params.names("encoder") == params.names()

    def test_patchify_matches_strided_conv(self, rng):
        x = rng.standard_normal((8, 12, 3))
        w = rng.standard_normal((48, 5))
        out = patchify(Tensor(x), Tensor(w), Tensor(np.zeros(5))).data
        kern = w.reshape(4, 4, 3, 5)
        ref = np.einsum("iajbc,abco->ijo", x.reshape(2, 4, 3, 4, 3), kern)
        np.testing.assert_allclose(out, ref, atol=1e-12)

    def test_gradients_reach_every_parameter(self, rng):
        cfg, params = make_encoder(EncoderConfig(stage_widths=(4, 4, 8, 8), align_dim=4), dtype=np.float64)
        img = image(rng, 64, 64, np.float64)
        pyr = encode(img, cfg, params)
        (pyr.Fv * pyr.Fv).sum().backward()
        for name, t in params.items():
            assert t.grad is not None and np.abs(t.grad).max() > 0, name

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_finite_differences(self, seed):
        rng = np.random.default_rng(seed)
        cfg, params = make_encoder(EncoderConfig(stage_widths=(4, 8, 8, 16), align_dim=3), seed, np.float64)
        img = image(rng, 32, 32, np.float64)
        r = Tensor(rng.standard_normal((1, 1, 3)))
        tensors = [t for _, t in params.items()]
        err = check_grads(lambda: (encode(img, cfg, params).Fv * r).sum(), tensors, max_entries=3, rng=rng)
        assert err <= FD_TOL


class TestVocabulary:
    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            CategoryVocabulary(())

    def test_duplicates_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            CategoryVocabulary.from_list(["cat", "dog", "cat"])

    def test_from_file_skips_blank_lines(self, tmp_path):
        p = tmp_path / "cats.txt"
        p.write_text("cat\n\ndog\n", encoding="utf-8")
        assert CategoryVocabulary.from_file(p).names == ("cat", "dog")


class TestPrompts:
    def test_template_fill(self):
        ps = expand_prompts(CategoryVocabulary(("cat",)), ["a photo of a {}"])
        assert ps.prompts[0][0] == "a photo of a cat"

    def test_row_major_order(self):
        ps = expand_prompts(CategoryVocabulary(("a", "b", "c")), ["x {}", "{} y"])
        assert ps.num_categories == 3 and ps.num_templates == 2
        assert ps.flat() == ["x a", "a y", "x b", "b y", "x c", "c y"]

    def test_every_prompt_contains_name(self):
        vocab = CategoryVocabulary(("sky", "tree"))
        ps = expand_prompts(vocab, DEFAULT_TEMPLATES)
        for name, row in zip(vocab.names, ps.prompts):
            assert len(row) == len(DEFAULT_TEMPLATES)
            assert all(name in s for s in row)

    def test_empty_template_list(self):
        with pytest.raises(ValueError):
            expand_prompts(CategoryVocabulary(("cat",)), [])

    @pytest.mark.parametrize("bad", ["no placeholder", "{} and {}"])
    def test_bad_template_names_index(self, bad):
        with pytest.raises(ValueError, match="template 1"):
            expand_prompts(CategoryVocabulary(("cat",)), ["ok {}", bad])

    def test_template_file_round_trip(self, tmp_path):
        p = tmp_path / "t.txt"
        write_templates(p, DEFAULT_TEMPLATES)
        assert read_templates(p) == DEFAULT_TEMPLATES


class TestEmbeddings:
    def test_synthetic_deterministic(self):
        a = SyntheticProvider(16, seed=5).vector("a photo of a cat.")
        b = SyntheticProvider(16, seed=5).vector("a photo of a cat.")
        np.testing.assert_array_equal(a, b)

    def test_synthetic_seed_and_prompt_matter(self):
        p = SyntheticProvider(16, seed=5)
        assert not np.array_equal(p.vector("cat"), p.vector("dog"))
        assert not np.array_equal(p.vector("cat"), SyntheticProvider(16, seed=6).vector("cat"))

    def test_synthetic_unit_norm_and_shape(self):
        ps = expand_prompts(CategoryVocabulary(("a", "b", "c")), DEFAULT_TEMPLATES)
        emb = embed_texts(ps, SyntheticProvider(32))
        assert emb.shape == (3, 4, 32)
        np.testing.assert_allclose(np.linalg.norm(emb.E.data, axis=-1), 1.0, atol=1e-6)

    def test_embeddings_never_require_grad(self):
        ps = expand_prompts(CategoryVocabulary(("a",)), ["{}"])
        emb = embed_texts(ps, SyntheticProvider(4))
        assert not emb.E.requires_grad
        assert not emb.subset([0]).E.requires_grad

    def test_file_round_trip_bit_exact(self, tmp_path, rng):
        E = rng.standard_normal((5, 3, 7)).astype(np.float32)
        write_embeddings(tmp_path / "e.sede", E)
        back = read_embeddings(tmp_path / "e.sede")
        assert back.tobytes() == E.tobytes()
        ps = expand_prompts(CategoryVocabulary(tuple("abcde")), ["{}", "x{}", "y{}"])
        got = embed_texts(ps, FileProvider(tmp_path / "e.sede", 7))
        assert got.E.data.tobytes() == E.tobytes()

    def test_file_shape_mismatch_reports_expected_and_found(self, tmp_path, rng):
        write_embeddings(tmp_path / "e.sede", rng.standard_normal((4, 2, 6)))
        ps = expand_prompts(CategoryVocabulary(tuple("abc")), ["{}", "x{}"])
        with pytest.raises(ShapeError, match="expected.*3x2.*found 4x2"):
            embed_texts(ps, FileProvider(tmp_path / "e.sede"))

    def test_file_width_mismatch(self, tmp_path, rng):
        write_embeddings(tmp_path / "e.sede", rng.standard_normal((3, 2, 6)))
        ps = expand_prompts(CategoryVocabulary(tuple("abc")), ["{}", "x{}"])
        with pytest.raises(ShapeError, match="D_t = 8, found 6"):
            embed_texts(ps, FileProvider(tmp_path / "e.sede", 8))

    def test_truncated_file(self, tmp_path, rng):
        p = tmp_path / "e.sede"
        write_embeddings(p, rng.standard_normal((3, 2, 6)))
        p.write_bytes(p.read_bytes()[:-4])
        with pytest.raises(ShapeError):
            read_embeddings(p)

    def test_model_text_dim(self):
        assert ModelConfig().text_dim == EncoderConfig().align_dim
