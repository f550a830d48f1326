import numpy as np
import pytest

from durian_e import numerics as nx
from durian_e.decoder import ARDecoder, DecoderState, decode_sequence, decode_step, reconstruction_loss
from durian_e.numerics import Tensor


def tiny(seed=0, channels=3, cond=4):
    dec = ARDecoder(np.random.default_rng(seed), cond, channels, prenet_dim=5, hidden=4)
    return dec


def randomize_biases(dec, rng):
    for name, p in dec.named_parameters():
        if p.ndim == 1:
            p.data = rng.normal(size=p.shape)


def test_zero_params_zero_frame():
    dec = tiny()
    for p in dec.parameters():
        p.data[...] = 0.0
    frame, _ = decode_step(np.ones(4), dec.initial_state(), dec)
    np.testing.assert_array_equal(frame.data, 0.0)


def test_step_is_pure():
    dec = tiny()
    rng = np.random.default_rng(1)
    state = DecoderState(Tensor(rng.normal(size=4)), Tensor(rng.normal(size=3)))
    e = rng.normal(size=4)
    f1, s1 = decode_step(e, state, dec)
    f2, s2 = decode_step(e, state, dec)
    assert f1.data.tobytes() == f2.data.tobytes()
    assert s1.c.data.tobytes() == s2.c.data.tobytes()


@pytest.mark.parametrize("T", [1, 2, 9, 40])
def test_teacher_forced_equals_step_loop_bit_exact(T):
    rng = np.random.default_rng(T)
    dec = ARDecoder(rng, 16, 8, prenet_dim=12, hidden=16)
    randomize_biases(dec, rng)
    e, targets = rng.normal(size=(T, 16)), rng.normal(size=(T, 8))
    parallel = decode_sequence(e, dec, targets=targets).data
    state = dec.initial_state()
    rows = []
    for t in range(T):
        frame, state = decode_step(e[t], state, dec)
        rows.append(frame.data)
        state = DecoderState(state.c, Tensor(targets[t]))
    assert np.stack(rows).tobytes() == parallel.tobytes()


def test_single_frame_from_go_frame():
    dec = tiny()
    e = np.random.default_rng(2).normal(size=(1, 4))
    out = decode_sequence(e, dec).data
    frame, _ = decode_step(e[0], DecoderState.initial(4, 3), dec)
    assert out.shape == (1, 3)
    assert out[0].tobytes() == frame.data.tobytes()


def test_free_running_diverges_from_teacher_forcing():
    rng = np.random.default_rng(3)
    dec = tiny()
    randomize_biases(dec, rng)
    e, targets = rng.normal(size=(6, 4)), rng.normal(size=(6, 3))
    tf = decode_sequence(e, dec, targets=targets).data
    free = decode_sequence(e, dec).data
    np.testing.assert_array_equal(tf[0], free[0])
    assert not np.allclose(tf[1:], free[1:])


@pytest.mark.parametrize("T", [1, 5, 17])
def test_free_running_length(T):
    assert decode_sequence(np.zeros((T, 4)), tiny()).shape == (T, 3)


def test_target_length_mismatch():
    with pytest.raises(ValueError):
        decode_sequence(np.zeros((4, 4)), tiny(), targets=np.zeros((3, 3)))


@pytest.mark.parametrize("teacher", [True, False])
def test_gradcheck(teacher):
    rng = np.random.default_rng(4)
    dec = tiny()
    randomize_biases(dec, rng)
    e = Tensor(rng.normal(size=(4, 4)))
    targets = rng.normal(size=(4, 3)) if teacher else None
    report = nx.gradcheck(lambda *_: decode_sequence(e, dec, targets), [e] + dec.parameters(), tol=1e-4)
    assert report.passed, report


class TestReconstructionLoss:
    def test_equal(self):
        x = np.random.default_rng(0).normal(size=(3, 2))
        assert reconstruction_loss(x, x).item() == 0.0

    def test_constant(self):
        assert reconstruction_loss(np.zeros((4, 3)), np.full((4, 3), 2.0)).item() == 2.0

    def test_scalar_oracle(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
        expected = sum(abs(a[i, j] - b[i, j]) for i in range(5) for j in range(3)) / 15
        assert reconstruction_loss(a, b).item() == pytest.approx(expected, rel=1e-14)

    def test_shape_mismatch(self):
        with pytest.raises(nx.ShapeError):
            reconstruction_loss(np.zeros((2, 3)), np.zeros((3, 2)))
