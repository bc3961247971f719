"""Wire format: framing, round-trips, validation, and byte accounting."""

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from apfl.errors import FramingError, ProtocolError, ShapeError
from apfl.features import Activation
from apfl.protocol import (
    HEADER_SIZE,
    UPLOAD_FIXED_OVERHEAD,
    Config,
    ErrorMsg,
    GlobalModel,
    Hello,
    TAG_UPLOAD,
    Upload,
    decode,
    encode,
    upload_frame_size,
)


def finite_matrix(rows, cols, seed):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((rows, cols))


def symmetric_matrix(dim, seed):
    m = finite_matrix(dim, dim, seed)
    return 0.5 * (m + m.T)


class TestRoundTrips:
    def test_hello(self):
        msg = decode(encode(Hello(client_id=17)))
        assert isinstance(msg, Hello) and msg.client_id == 17

    def test_config(self):
        cfg = Config(
            gamma=0.01,
            beta=1.5,
            lam=0.3,
            d_p=64,
            d_r=32,
            seed_p=2**63 + 5,
            seed_r=12345,
            act_p=Activation.HARDSWISH,
            act_r=Activation.SOFTPLUS,
            num_classes=10,
            num_clients=8,
        )
        got = decode(encode(cfg))
        assert got == cfg

    def test_upload(self):
        a = symmetric_matrix(3, 1)
        g = finite_matrix(3, 2, 2)
        got = decode(encode(Upload(client_id=4, a=a, g_local=g, n_samples=9)))
        assert isinstance(got, Upload)
        assert got.client_id == 4 and got.n_samples == 9
        assert np.array_equal(got.a, a)
        assert np.array_equal(got.g_local, g)

    def test_global_model(self):
        g = finite_matrix(5, 3, 3)
        got = decode(encode(GlobalModel(g=g)))
        assert np.array_equal(got.g, g)

    def test_error(self):
        got = decode(encode(ErrorMsg(code=3, text="client 5 missing")))
        assert got == ErrorMsg(code=3, text="client 5 missing")

    @settings(max_examples=60, deadline=None)
    @given(
        client_id=st.integers(0, 2**32 - 1),
        n_samples=st.integers(0, 2**32 - 1),
        d_p=st.integers(1, 6),
        c=st.integers(1, 5),
        seed=st.integers(0, 1000),
    )
    def test_fuzzed_upload_round_trip(self, client_id, n_samples, d_p, c, seed):
        a = symmetric_matrix(d_p, seed)
        g = finite_matrix(d_p, c, seed + 1)
        frame = encode(Upload(client_id=client_id, a=a, g_local=g, n_samples=n_samples))
        got = decode(frame)
        assert got.client_id == client_id and got.n_samples == n_samples
        assert np.array_equal(got.a, a)
        assert np.array_equal(got.g_local, g)

    @settings(max_examples=40, deadline=None)
    @given(
        gamma=st.floats(1e-6, 1e6, allow_nan=False),
        beta=st.floats(1e-6, 1e6, allow_nan=False),
        lam=st.floats(0, 100, allow_nan=False),
        dims=st.tuples(st.integers(1, 2**20), st.integers(1, 2**20)),
        seeds=st.tuples(st.integers(0, 2**64 - 1), st.integers(0, 2**64 - 1)),
        acts=st.tuples(st.sampled_from(list(Activation)), st.sampled_from(list(Activation))),
    )
    def test_fuzzed_config_round_trip(self, gamma, beta, lam, dims, seeds, acts):
        cfg = Config(
            gamma=gamma,
            beta=beta,
            lam=lam,
            d_p=dims[0],
            d_r=dims[1],
            seed_p=seeds[0],
            seed_r=seeds[1],
            act_p=acts[0],
            act_r=acts[1],
            num_classes=7,
            num_clients=3,
        )
        assert decode(encode(cfg)) == cfg


class TestFraming:
    def test_upload_payload_size_formula(self):
        # fixed fields: client_id, n_samples, d_p, c (4 x u32), then
        # 8*(d_p*d_p + d_p*c) bytes of float64 matrices
        a = symmetric_matrix(2, 5)
        g = finite_matrix(2, 1, 6)
        frame = encode(Upload(client_id=1, a=a, g_local=g, n_samples=3))
        declared_len = struct.unpack_from("<I", frame, 0)[0]
        assert declared_len == 16 + 8 * (4 + 2)
        assert len(frame) == HEADER_SIZE + declared_len
        assert len(frame) == upload_frame_size(2, 1)

    def test_upload_bytes_scale_quadratically(self):
        # after subtracting fixed overhead, bytes / d_p^2 is stable in d_p
        ratios = []
        for d_p in (32, 64, 128):
            size = upload_frame_size(d_p, 1) - UPLOAD_FIXED_OVERHEAD
            ratios.append(size / d_p**2)
        assert max(ratios) / min(ratios) <= 1.05

    def test_truncated_header(self):
        with pytest.raises(FramingError, match="header"):
            decode(b"\x01\x00")

    def test_truncated_payload(self):
        frame = encode(Hello(client_id=1))
        with pytest.raises(FramingError, match="declares"):
            decode(frame[:-1])

    def test_unknown_tag(self):
        frame = bytearray(encode(Hello(client_id=1)))
        frame[4] = 99
        with pytest.raises(ProtocolError, match="unknown message tag"):
            decode(bytes(frame))

    def test_flipped_tag_is_error_not_crash(self):
        # reinterpreting a hello as an upload must fail cleanly
        frame = bytearray(encode(Hello(client_id=1)))
        frame[4] = TAG_UPLOAD
        with pytest.raises((ProtocolError, FramingError)):
            decode(bytes(frame))

    def test_upload_length_inconsistent_with_dims(self):
        frame = bytearray(encode(Upload(1, symmetric_matrix(2, 0), finite_matrix(2, 1, 1), 5)))
        # corrupt the declared d_p field inside the payload
        struct.pack_into("<I", frame, HEADER_SIZE + 8, 3)
        with pytest.raises(FramingError, match="upload payload"):
            decode(bytes(frame))


class TestValidationOnDecode:
    def test_asymmetric_matrix_rejected(self):
        a = finite_matrix(3, 3, 7)  # not symmetric
        a[0, 1] += 1.0
        frame = encode(Upload(client_id=1, a=a, g_local=finite_matrix(3, 2, 8), n_samples=4))
        with pytest.raises(ProtocolError, match="asymmetric"):
            decode(frame)

    def test_non_finite_rejected(self):
        a = symmetric_matrix(2, 9)
        g = finite_matrix(2, 1, 10)
        frame = bytearray(encode(Upload(client_id=1, a=a, g_local=g, n_samples=4)))
        struct.pack_into("<d", frame, HEADER_SIZE + 16, float("nan"))
        with pytest.raises(ProtocolError, match="non-finite"):
            decode(bytes(frame))

    def test_unknown_activation_code(self):
        cfg = Config(
            gamma=1.0, beta=1.0, lam=0.1, d_p=2, d_r=2, seed_p=0, seed_r=0,
            act_p=Activation.RELU, act_r=Activation.RELU, num_classes=2, num_clients=1,
        )
        frame = bytearray(encode(cfg))
        # act_p byte sits after H + 4*I + 2*Q = 2 + 16 + 16 bytes of payload
        frame[HEADER_SIZE + 34] = 250
        with pytest.raises(ProtocolError, match="activation"):
            decode(bytes(frame))

    def test_empty_matrix_upload_rejected_at_construction(self):
        with pytest.raises(ShapeError):
            Upload(client_id=0, a=np.zeros((0, 0)), g_local=np.zeros((0, 1)), n_samples=0)
