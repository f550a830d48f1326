import numpy as np
import pytest

from durian_e import numerics as nx
from durian_e.alignment import SymbolSequence
from durian_e.encoders import (FrameEncoder, FrameEncoderConfig, LinguisticEncoder,
                               LinguisticEncoderConfig, frame_encode, linguistic_encode)
from durian_e.numerics import Tensor

TINY_LING = LinguisticEncoderConfig(vocab_size=6, blocks=2, hidden=8, heads=2, dropout=0.0)
TINY_FRAME = FrameEncoderConfig(blocks=2, hidden=8, heads=2, kernel=9, dropout=0.0)


def test_paper_defaults():
    ling, frame = LinguisticEncoderConfig(), FrameEncoderConfig()
    assert (ling.blocks, ling.hidden, ling.heads) == (4, 256, 2)
    assert (frame.blocks, frame.hidden, frame.conv_layers, frame.kernel) == (4, 256, 2, 9)


def test_single_token_paper_size_finite():
    enc = LinguisticEncoder(np.random.default_rng(0), LinguisticEncoderConfig(dropout=0.0))
    out = enc(SymbolSequence([3], [False]))
    assert out.shape == (1, 256) and np.all(np.isfinite(out.data))


def test_linguistic_gradcheck_tiny():
    enc = LinguisticEncoder(np.random.default_rng(1), TINY_LING)
    seq = SymbolSequence([1, 4, 2], [False, True, False])
    params = enc.parameters()
    report = nx.gradcheck(lambda *_: enc(seq), params, tol=1e-4, max_checks=12)
    assert report.passed, report


def test_order_sensitive():
    enc = LinguisticEncoder(np.random.default_rng(2), TINY_LING)
    a = enc(SymbolSequence([1, 2, 3], [False] * 3)).data
    b = enc(SymbolSequence([2, 1, 3], [False] * 3)).data
    assert not np.allclose(a, b)


def test_output_length_keeps_boundaries():
    enc = LinguisticEncoder(np.random.default_rng(3), TINY_LING)
    seq = SymbolSequence([1, 5, 2, 5, 3], [False, True, False, True, False])
    assert enc(seq).shape == (5, 8)


def test_zero_params_zero_output():
    enc = LinguisticEncoder(np.random.default_rng(4), TINY_LING)
    for p in enc.parameters():
        p.data[...] = 0.0
    np.testing.assert_array_equal(enc(SymbolSequence([1, 2], [False, False])).data, 0.0)


def test_unknown_token():
    enc = LinguisticEncoder(np.random.default_rng(5), TINY_LING)
    with pytest.raises(KeyError):
        linguistic_encode(SymbolSequence([1, 9], [False, False]), enc)


def test_frame_styles_differ():
    rng = np.random.default_rng(6)
    enc = FrameEncoder(rng, TINY_FRAME)
    e = rng.normal(size=(7, 8))
    a = enc(e, rng.normal(size=8)).data
    b = enc(e, rng.normal(size=8)).data
    assert not np.allclose(a, b)


def test_frame_unit_sain_is_instance_normalized_block():
    """With G = 1, B = 0 every block output is standardized per channel."""
    rng = np.random.default_rng(7)
    enc = FrameEncoder(rng, FrameEncoderConfig(blocks=1, hidden=8, heads=2, dropout=0.0))
    block = enc.blocks[0]
    for s in (block.sain1, block.sain2):
        s.G_proj.data[...] = 0.0
        s.B_proj.data[...] = 0.0
    e = rng.normal(size=(10, 8))
    out = enc(e, rng.normal(size=8)).data
    np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(out.std(axis=0), 1.0, atol=1e-9)

    # reference: same block with the style path removed entirely
    from durian_e.layers import instance_normalize, sinusoidal_positions
    x = e + sinusoidal_positions(10, 8)
    x = instance_normalize(x + block.attn(x).data, block.sain1.eps).data
    y = nx.relu(block.convs[0](x)).data
    y = block.convs[1](y).data
    ref = instance_normalize(x + y, block.sain2.eps).data
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_frame_gradcheck():
    rng = np.random.default_rng(8)
    enc = FrameEncoder(rng, TINY_FRAME)
    e, s = Tensor(rng.normal(size=(6, 8))), Tensor(rng.normal(size=8))
    # attention value biases shift channels uniformly in time, which SAIN removes: their true
    # gradient is 0 and central differences only see roundoff, hence the wider floor
    report = nx.gradcheck(lambda *_: enc(e, s), [e, s] + enc.parameters(), tol=1e-4, max_checks=10,
                          floor=1e-5)
    assert report.passed, report


@pytest.mark.parametrize("kernel", [3, 5, 9])
@pytest.mark.parametrize("frames", [1, 4, 13])
def test_frame_output_length(kernel, frames):
    rng = np.random.default_rng(9)
    cfg = FrameEncoderConfig(blocks=1, hidden=8, heads=2, kernel=kernel, dropout=0.0)
    out = frame_encode(rng.normal(size=(frames, 8)), rng.normal(size=8), FrameEncoder(rng, cfg))
    assert out.shape == (frames, 8)


def test_no_nan_on_random_inputs():
    rng = np.random.default_rng(10)
    ling = LinguisticEncoder(rng, TINY_LING)
    frame = FrameEncoder(rng, TINY_FRAME)
    for _ in range(100):
        n = int(rng.integers(1, 8))
        flags = list(rng.random(n) < 0.3)
        flags[0] = False
        ids = [int(rng.integers(0, 4)) if not f else 5 for f in flags]
        h = ling(SymbolSequence(ids, flags)).data
        out = frame(rng.normal(size=(int(rng.integers(1, 20)), 8)), rng.normal(size=8)).data
        assert np.all(np.isfinite(h)) and np.all(np.isfinite(out))


def test_dropout_only_in_training():
    rng = np.random.default_rng(11)
    enc = LinguisticEncoder(rng, LinguisticEncoderConfig(vocab_size=6, blocks=1, hidden=8, heads=2, dropout=0.5))
    seq = SymbolSequence([1, 2, 3], [False] * 3)
    a = enc(seq, np.random.default_rng(0)).data
    enc.train()
    b = enc(seq, np.random.default_rng(0)).data
    enc.eval()
    assert not np.allclose(a, b)
    np.testing.assert_array_equal(a, enc(seq, np.random.default_rng(1)).data)
