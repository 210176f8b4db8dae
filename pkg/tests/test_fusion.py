import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prodelib import tensor as T
from prodelib.corpus import FirstPassOutput
from prodelib.fusion import EncoderConfig, FusionEncoder, fuse
from prodelib.layers import MultiHeadAttention, attention_bias


def first_pass(rng, lens_t, lens_a, d, zero=False):
    b, t, a = len(lens_t), max(lens_t), max(lens_a)
    tmask = np.arange(t)[None] < np.array(lens_t)[:, None]
    amask = np.arange(a)[None] < np.array(lens_a)[:, None]
    make = np.zeros if zero else (lambda s: rng.normal(size=s))
    return FirstPassOutput(np.ones((b, t), dtype=np.int64), tmask, T.Tensor(make((b, t, d))),
                           amask, T.Tensor(make((b, a, d))))


def encoder(d=8, layers=2, seed=0, first_pass_dim=None):
    enc = FusionEncoder(EncoderConfig(hidden_dim=d, num_pool_layers=layers, num_heads=2, ffn_dim=16),
                        first_pass_dim or d, np.random.default_rng(seed))
    enc.eval()
    return enc


@settings(max_examples=25, deadline=None)
@given(t=st.integers(1, 7), a=st.integers(1, 7), seed=st.integers(0, 1000))
def test_output_has_one_row_per_text_position(t, a, seed):
    out = fuse(first_pass(np.random.default_rng(seed), [t], [a], 8), encoder())
    assert out.emb_pool.shape == (1, t, 8)


def test_adapter_maps_first_pass_width_to_hidden(rng):
    out = encoder(d=8, first_pass_dim=6)(first_pass(rng, [3], [4], 6))
    assert out.emb_pool.shape == (1, 3, 8)


def test_width_mismatch_is_dimension_error(rng):
    with pytest.raises(T.DimensionError):
        FirstPassOutput(np.ones((1, 2), dtype=np.int64), np.ones((1, 2), bool), T.Tensor(rng.normal(size=(1, 2, 8))),
                        np.ones((1, 2), bool), T.Tensor(rng.normal(size=(1, 2, 6))))
    with pytest.raises(T.DimensionError):
        MultiHeadAttention(8, 2, rng)(T.Tensor(np.ones((1, 2, 8))), T.Tensor(np.ones((1, 2, 6))))


def test_zero_inputs_with_zero_projections_give_bias_row():
    enc = encoder()
    for p in (enc.fuse.weight, *(b.attn.out.weight for b in enc.blocks), *(b.ff.outer.weight for b in enc.blocks)):
        p.data[...] = 0.0
    out = enc(first_pass(None, [1], [1], 8, zero=True)).emb_pool.data[0, 0]
    resid = enc.fuse.bias.data + sum(b.attn.out.bias.data + b.ff.outer.bias.data for b in enc.blocks)
    expected = T.layer_norm(T.Tensor(resid), enc.ln_out.gain, enc.ln_out.bias).data
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_single_key_attention_is_linear_map_of_value(rng):
    mha = MultiHeadAttention(8, 2, rng)
    text = T.Tensor(np.repeat(rng.normal(size=(1, 1, 8)), 4, axis=1))
    aud = rng.normal(size=(1, 1, 8))
    out = mha(text, T.Tensor(aud)).data[0]
    by_hand = (aud[0, 0] @ mha.v.weight.data + mha.v.bias.data) @ mha.out.weight.data + mha.out.bias.data
    np.testing.assert_allclose(out, np.tile(by_hand, (4, 1)), atol=1e-12)


def test_cross_attention_ignores_audio_frame_order(rng):
    mha = MultiHeadAttention(8, 2, rng)
    text, aud = T.Tensor(rng.normal(size=(1, 3, 8))), rng.normal(size=(1, 5, 8))
    perm = rng.permutation(5)
    a = mha(text, T.Tensor(aud)).data
    b = mha(text, T.Tensor(aud[:, perm])).data
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_fusion_ignores_audio_order_at_equal_content(rng):
    enc = encoder()
    enc.aud_pos.table.data[...] = 0.0
    fp = first_pass(rng, [3], [5], 8)
    perm = rng.permutation(5)
    shuffled = FirstPassOutput(fp.text_tokens, fp.text_mask, fp.emb_text, fp.aud_mask,
                               T.Tensor(fp.emb_aud.data[:, perm]))
    np.testing.assert_allclose(enc(fp).emb_pool.data, enc(shuffled).emb_pool.data, atol=1e-12)


def test_outputs_at_real_positions_ignore_padding(rng):
    enc = encoder()
    fp = first_pass(rng, [3, 6], [4, 7], 8)
    alone = FirstPassOutput(fp.text_tokens[:1, :3], fp.text_mask[:1, :3], T.Tensor(fp.emb_text.data[:1, :3]),
                            fp.aud_mask[:1, :4], T.Tensor(fp.emb_aud.data[:1, :4]))
    batched = enc(fp).emb_pool.data[0, :3]
    np.testing.assert_allclose(batched, enc(alone).emb_pool.data[0], atol=1e-10)


def test_padded_keys_get_zero_attention_weight():
    bias = attention_bias(np.array([[True, True, False]]), 2)
    w = T.softmax(T.Tensor(np.zeros((1, 1, 2, 3)) + bias), axis=-1).data
    assert (w[..., 2] == 0.0).all()


def test_fusion_gradient_check():
    rng = np.random.default_rng(3)
    enc = encoder(d=8, layers=1)
    fp = first_pass(rng, [3], [4], 8)
    emb_text, emb_aud = T.Parameter(fp.emb_text.data), T.Parameter(fp.emb_aud.data)
    fp = FirstPassOutput(fp.text_tokens, fp.text_mask, emb_text, fp.aud_mask, emb_aud)
    w = rng.normal(size=(1, 3, 8))
    params = [emb_text, emb_aud, enc.fuse.weight, enc.cross.q.weight, enc.blocks[0].ff.inner.weight]
    err = T.grad_check(lambda: T.tsum(enc(fp).emb_pool * w), params, max_checks_per_param=20,
                       rng=np.random.default_rng(0))
    assert err < 1e-3
