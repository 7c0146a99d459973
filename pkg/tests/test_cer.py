import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sedseg.cer import CerState, prune, scatter_back, select_topk_union, sentinel
from sedseg.model import forward, image_tensor, init_params
from sedseg.tensor import ShapeError, Tensor
from sedseg.text import TextEmbeddings

from conftest import tiny_model_config


def union_oracle(logits, k):
    """Per-pixel full sort (ties to the lower index), then a set union."""
    chosen = set()
    H, W, N = logits.shape
    for i in range(H):
        for j in range(W):
            ranked = sorted(range(N), key=lambda n: (-logits[i, j, n], n))
            chosen.update(ranked[:k])
    return np.array(sorted(chosen), dtype=np.int64)


def feat_cost(rng, N, H=2, W=2, D=3, P=2):
    return Tensor(rng.standard_normal((H, W, N, D))), Tensor(rng.standard_normal((H, W, N, P)))


class TestSelect:
    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**16), N=st.integers(1, 12), k=st.integers(1, 12))
    def test_matches_sort_oracle(self, seed, N, k):
        k = min(k, N)
        rng = np.random.default_rng(seed)
        logits = rng.integers(-3, 3, size=(3, 2, N)).astype(np.float32)  # plenty of ties
        np.testing.assert_array_equal(select_topk_union(logits, k), union_oracle(logits, k))

    def test_ties_go_to_lower_index(self):
        logits = np.zeros((1, 1, 5))
        assert select_topk_union(logits, 2).tolist() == [0, 1]

    def test_all_and_k_equal_n_select_everything(self, rng):
        logits = rng.standard_normal((2, 2, 4))
        assert select_topk_union(logits, None).tolist() == [0, 1, 2, 3]
        assert select_topk_union(logits, 4).tolist() == [0, 1, 2, 3]

    @pytest.mark.parametrize("k", [0, 5])
    def test_k_out_of_range(self, rng, k):
        with pytest.raises(ValueError):
            select_topk_union(rng.standard_normal((1, 1, 4)), k)

    def test_union_contains_every_pixel_argmax(self, rng):
        logits = rng.standard_normal((4, 4, 30))
        sel = set(select_topk_union(logits, 1).tolist())
        assert set(np.argmax(logits, axis=-1).ravel().tolist()) == sel


class TestPrune:
    def test_index_composition(self, rng):
        feat, cost = feat_cost(rng, 5)
        f1, c1, s1 = prune(feat, cost, np.array([1, 3, 4]), CerState.full(5))
        assert s1.active.tolist() == [1, 3, 4]
        f2, c2, s2 = prune(f1, c1, np.array([0, 2]), s1)
        assert s2.active.tolist() == [1, 4]
        np.testing.assert_array_equal(f2.data, feat.data[:, :, [1, 4]])
        np.testing.assert_array_equal(c2.data, cost.data[:, :, [1, 4]])
        assert s2.counts == [3, 2]

    def test_empty_selection_falls_back_to_best(self, rng):
        feat, cost = feat_cost(rng, 4)
        fb = np.zeros((2, 2, 4))
        fb[1, 0, 2] = 5.0
        f, _, s = prune(feat, cost, np.array([], dtype=np.int64), CerState.full(4), fallback_logits=fb)
        assert s.active.tolist() == [2] and s.fallbacks == 1
        assert f.shape[2] == 1

    def test_full_selection_returns_inputs(self, rng):
        feat, cost = feat_cost(rng, 3)
        f, c, s = prune(feat, cost, np.arange(3), CerState.full(3))
        assert f is feat and c is cost

    def test_out_of_range_rejected(self, rng):
        feat, cost = feat_cost(rng, 3)
        with pytest.raises(ValueError):
            prune(feat, cost, np.array([0, 3]), CerState.full(3))

    def test_mismatched_axes_rejected(self, rng):
        feat, _ = feat_cost(rng, 3)
        _, cost = feat_cost(rng, 4)
        with pytest.raises(ShapeError):
            prune(feat, cost, np.array([0]), CerState.full(3))

    def test_gradient_flows_to_kept_slices_only(self, rng):
        feat = Tensor(rng.standard_normal((2, 2, 4, 3)), requires_grad=True)
        cost = Tensor(rng.standard_normal((2, 2, 4, 2)))
        f, _, _ = prune(feat, cost, np.array([0, 2]), CerState.full(4))
        f.sum().backward()
        assert np.all(feat.grad[:, :, [0, 2]] == 1) and not feat.grad[:, :, [1, 3]].any()


class TestScatter:
    def test_round_trip(self, rng):
        state = CerState(np.array([1, 4, 6]))
        small = rng.standard_normal((3, 2, 3)).astype(np.float32)
        full = scatter_back(small, state, 8)
        np.testing.assert_array_equal(full[..., [1, 4, 6]], small)
        assert np.all(full[..., [0, 2, 3, 5, 7]] == sentinel(np.float32))
        np.testing.assert_array_equal(np.argmax(full, -1), np.array([1, 4, 6])[np.argmax(small, -1)])

    def test_identity_when_nothing_pruned(self, rng):
        arr = rng.standard_normal((2, 2, 3))
        assert scatter_back(arr, CerState.full(3), 3) is arr

    def test_length_mismatch(self, rng):
        with pytest.raises(ShapeError):
            scatter_back(rng.standard_normal((1, 1, 2)), CerState(np.array([0, 1, 2])), 5)


def model_and_inputs(seed, N=12, size=64):
    cfg = tiny_model_config()
    rng = np.random.default_rng(seed)
    params = init_params(cfg, seed=seed)
    img = image_tensor(rng.integers(0, 256, (size, size, 3), dtype=np.uint8))
    emb = TextEmbeddings(Tensor(rng.standard_normal((N, cfg.num_templates, cfg.text_dim)).astype(np.float32)))
    return cfg, params, img, emb


class TestEndToEnd:
    @pytest.mark.parametrize("seed", range(3))
    def test_k_all_is_bit_identical_to_off(self, seed):
        cfg, params, img, emb = model_and_inputs(seed)
        off = forward(img, emb, cfg, params)
        on = forward(img, emb, cfg, params, cer_k=None, use_cer=True)
        assert on.full_logits(12).tobytes() == off.logits.data.tobytes()
        big_k = forward(img, emb, cfg, params, cer_k=12, use_cer=True)
        assert big_k.full_logits(12).tobytes() == off.logits.data.tobytes()

    @pytest.mark.parametrize("seed", range(5))
    @pytest.mark.parametrize("k", [1, 2, 4])
    def test_predictions_lie_in_first_selection(self, seed, k):
        cfg, params, img, emb = model_and_inputs(seed)
        fo = forward(img, emb, cfg, params, cer_k=k, use_cer=True)
        first = set(fo.cer.per_layer_selected[0].tolist())
        assert set(np.unique(fo.predict(12)).tolist()) <= first
        np.testing.assert_array_equal(fo.cer.per_layer_selected[0], union_oracle(fo.aux_logits[0].data, k))

    def test_selection_sets_shrink(self):
        cfg, params, img, emb = model_and_inputs(7, N=20)
        fo = forward(img, emb, cfg, params, cer_k=2, use_cer=True)
        sets = [set(s.tolist()) for s in fo.cer.per_layer_selected]
        assert len(sets) == cfg.decoder.layers
        for a, b in zip(sets, sets[1:]):
            assert b <= a
