import pytest
from hypothesis import given, settings, strategies as st

from camspoof.pixels import PixelBuffer
from camspoof.protocol import (
    MAX_PAYLOAD,
    BadMagicError,
    GvcpCommand,
    LeaderPacket,
    LengthError,
    ParseError,
    PayloadPacket,
    ProtocolError,
    Register,
    TrailerPacket,
    UnknownTypeError,
    decode_packet,
    encode_packet,
    fragment_frame,
    payload_count,
    reassemble,
)

U64 = st.integers(0, 2**64 - 1)
U32 = st.integers(0, 2**32 - 1)
EVEN = st.integers(1, 2**31 - 1).map(lambda v: 2 * v)

packets = st.one_of(
    st.builds(LeaderPacket, U64, EVEN, EVEN, U32, U64),
    st.builds(PayloadPacket, U64, U32, st.binary(min_size=1, max_size=64)),
    st.builds(TrailerPacket, U64),
    st.builds(GvcpCommand, st.just(Register.ACQUISITION), st.integers(0, 1)),
    st.builds(GvcpCommand, st.just(Register.WIDTH), EVEN),
)


def test_wire_sizes():
    assert len(encode_packet(LeaderPacket(1, 1936, 1216, 1, 0))) == 31
    assert len(encode_packet(PayloadPacket(1, 1, b"x"))) == 19 + 1
    assert len(encode_packet(TrailerPacket(1))) == 11
    assert len(encode_packet(GvcpCommand(Register.WIDTH, 1934))) == 9


def test_leader_layout_is_big_endian():
    raw = encode_packet(LeaderPacket(0x0102, 4, 2, 1, 5))
    assert raw[:3] == b"GV\x01"
    assert raw[3:11] == (0x0102).to_bytes(8, "big")
    assert raw[11:15] == (4).to_bytes(4, "big")


@settings(max_examples=300, deadline=None)
@given(packets)
def test_decode_inverts_encode(p):
    assert decode_packet(encode_packet(p)) == p


@settings(max_examples=200, deadline=None)
@given(packets, st.data())
def test_any_truncation_is_a_length_error(p, data):
    raw = encode_packet(p)
    cut = data.draw(st.integers(0, len(raw) - 1))
    with pytest.raises(LengthError):
        decode_packet(raw[:cut])


def test_truncation_names_missing_field():
    raw = encode_packet(LeaderPacket(1, 4, 2, 1, 9))
    with pytest.raises(LengthError) as info:
        decode_packet(raw[:-3])
    assert info.value.field == "timestamp_ns"
    assert "timestamp_ns" in str(info.value)


def test_decode_errors():
    with pytest.raises(BadMagicError):
        decode_packet(b"XX\x03" + bytes(8))
    with pytest.raises(UnknownTypeError):
        decode_packet(b"GV\x09" + bytes(8))
    with pytest.raises(LengthError):
        decode_packet(encode_packet(TrailerPacket(1)) + b"\x00")
    payload = bytearray(encode_packet(PayloadPacket(1, 1, b"abc")))
    payload[17] = 9  # data_len no longer matches
    with pytest.raises(LengthError):
        decode_packet(bytes(payload))
    # well framed, but a width of 3 is not a valid Bayer width
    with pytest.raises(ParseError):
        decode_packet(b"GV\x04\x00\x02\x00\x00\x00\x03")


def test_constructors_validate():
    with pytest.raises(ValueError):
        LeaderPacket(1, 3, 2)
    with pytest.raises(ValueError):
        PayloadPacket(1, 1, b"")
    with pytest.raises(ValueError):
        PayloadPacket(1, 1, bytes(MAX_PAYLOAD + 1))
    with pytest.raises(ValueError):
        GvcpCommand(Register.ACQUISITION, 2)
    with pytest.raises(ValueError):
        TrailerPacket(-1)


def test_full_resolution_frame_fragments_into_264_payloads():
    buf = PixelBuffer(1936, 1216, bytes(1936 * 1216))
    pkts = fragment_frame(buf, 7, 0)
    payloads = [p for p in pkts if isinstance(p, PayloadPacket)]
    assert payload_count(1936 * 1216) == 264
    assert len(payloads) == 264
    assert [p.packet_id for p in payloads] == list(range(1, 265))
    assert len(payloads[-1].data) == 1936 * 1216 - 263 * MAX_PAYLOAD == 326
    assert isinstance(pkts[0], LeaderPacket) and isinstance(pkts[-1], TrailerPacket)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 40), st.integers(1, 40), st.integers(1, 300), st.randoms(use_true_random=False))
def test_fragmentation_conserves_bytes(hw, hh, max_payload, rnd):
    w, h = 2 * hw, 2 * hh
    data = bytes(rnd.getrandbits(8) for _ in range(w * h))
    pkts = fragment_frame(PixelBuffer(w, h, data), 3, 0, max_payload)
    body = b"".join(p.data for p in pkts if isinstance(p, PayloadPacket))
    assert body == data
    rnd.shuffle(pkts[1:-1])
    res = reassemble(pkts, max_payload=max_payload)
    assert res.buffer.data == data and res.complete


def test_reassembly_first_copy_wins_and_reports_duplicates():
    data = bytes(range(16))
    pkts = fragment_frame(PixelBuffer(4, 4, data), 1, 0, 4)
    forged = PayloadPacket(1, 2, b"\xff" * 4)
    res = reassemble([pkts[0], forged] + pkts[1:], max_payload=4)
    assert res.buffer.data == data[:4] + b"\xff" * 4 + data[8:]
    assert res.overwritten_packet_ids == (2,)
    assert not res.complete


def test_reassembly_zero_fills_missing():
    data = bytes(range(1, 17))
    pkts = fragment_frame(PixelBuffer(4, 4, data), 1, 0, 4)
    del pkts[3]  # payload 3
    res = reassemble(pkts, max_payload=4)
    assert res.missing_packet_ids == (3,)
    assert res.buffer.data[8:12] == bytes(4)
    assert res.buffer.data[:8] == data[:8]


def test_reassembly_ignores_other_blocks_and_flags_overflow():
    data = bytes(16)
    pkts = fragment_frame(PixelBuffer(4, 4, data), 1, 0, 4)
    res = reassemble(pkts[:2] + [PayloadPacket(2, 2, b"\x01" * 4), PayloadPacket(1, 9, b"\x01")] + pkts[2:],
                     max_payload=4)
    assert res.buffer.data == data
    assert res.truncated


def test_reassembly_requires_leader():
    with pytest.raises(ProtocolError):
        reassemble([PayloadPacket(1, 1, b"a"), LeaderPacket(1, 2, 2)])
    with pytest.raises(ProtocolError):
        reassemble([TrailerPacket(1)])


def test_reassembly_expected_dimension_mismatch_sets_truncated():
    pkts = fragment_frame(PixelBuffer(4, 2, bytes(8)), 1, 0)
    assert reassemble(pkts, expected=(6, 2)).truncated
    assert not reassemble(pkts, expected=(4, 2)).truncated
