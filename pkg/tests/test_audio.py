import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lstmplc.audio import (AudioBuffer, ChannelCountError, UnsupportedFormatError, WavFormatError, quantize,
                           read_wav, segment_frames, write_wav)


def raw_wav(path, ints, channels=1, bits=16, tag=1, rate=8000, extra_chunk=False):
    data = np.asarray(ints, dtype="<i2").tobytes()
    block = channels * bits // 8
    fmt = struct.pack("<HHIIHH", tag, channels, rate, rate * block, block, bits)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    if extra_chunk:
        body += b"LIST" + struct.pack("<I", 5) + b"hello" + b"\x00"  # odd size, padded
    body += b"data" + struct.pack("<I", len(data)) + data
    path.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    return path


def test_read_scaling(tmp_path):
    buf = read_wav(raw_wav(tmp_path / "a.wav", [0, 16384, -32768]))
    assert buf.samples.tolist() == [0.0, 0.5, -1.0] and buf.sample_rate == 8000


def test_empty_data_chunk(tmp_path):
    buf = read_wav(raw_wav(tmp_path / "e.wav", []))
    assert len(buf) == 0


def test_unknown_chunks_skipped(tmp_path):
    assert read_wav(raw_wav(tmp_path / "x.wav", [1, 2, 3], extra_chunk=True)).samples.tolist() == \
        [1 / 32768, 2 / 32768, 3 / 32768]


def test_stereo_rejected_with_count(tmp_path):
    with pytest.raises(ChannelCountError, match="2 channels"):
        read_wav(raw_wav(tmp_path / "s.wav", [0, 0, 1, 1], channels=2))


@pytest.mark.parametrize("tag,bits", [(3, 16), (6, 16), (1, 8), (1, 24)])
def test_unsupported_formats(tmp_path, tag, bits):
    with pytest.raises(UnsupportedFormatError):
        read_wav(raw_wav(tmp_path / "u.wav", [0, 0], tag=tag, bits=bits))


def test_not_a_wav(tmp_path):
    p = tmp_path / "n.wav"
    p.write_bytes(b"hello world, not a wave file")
    with pytest.raises(WavFormatError):
        read_wav(p)


def test_write_endpoints():
    assert quantize([1.0, -1.0, 0.0, 2.0, -2.0]).tolist() == [32767, -32767, 0, 32767, -32767]


def test_header_arithmetic(tmp_path):
    p = tmp_path / "h.wav"
    write_wav(AudioBuffer(np.zeros(8000), 8000), p)
    raw = p.read_bytes()
    assert len(raw) == 44 + 16000
    riff, size, wave, fmt, fsize, tag, ch, rate, brate, align, bits, data, dsize = struct.unpack(
        "<4sI4s4sIHHIIHH4sI", raw[:44])
    assert (riff, wave, fmt, data) == (b"RIFF", b"WAVE", b"fmt ", b"data")
    assert size == 36 + 16000 and dsize == 16000 and (tag, ch, rate, brate, align, bits) == (1, 1, 8000, 16000, 2, 16)
    assert dsize / brate == 1.0


def test_round_trip(tmp_path):
    x = np.random.default_rng(0).uniform(-1, 1, 500)
    write_wav(AudioBuffer(x, 8000), tmp_path / "a.wav")
    first = read_wav(tmp_path / "a.wav")
    write_wav(first, tmp_path / "b.wav")
    second = read_wav(tmp_path / "b.wav")
    assert first.samples.tobytes() == second.samples.tobytes()


@given(st.lists(st.integers(-32767, 32767), max_size=200))
def test_lossless_on_int16_grid(ints):
    x = np.asarray(ints, dtype=np.float64) / 32768
    assert quantize(x).tolist() == ints


def test_write_error_names_path(tmp_path):
    with pytest.raises(OSError, match="nope"):
        write_wav(AudioBuffer(np.zeros(4), 8000), tmp_path / "nope" / "x.wav")


@pytest.mark.parametrize("n,frames,dropped", [(805, 10, 5), (80, 1, 0), (79, 0, 79)])
def test_segment_frames(n, frames, dropped):
    x = np.arange(n, dtype=np.float64)
    f, d = segment_frames(x, 80)
    assert f.shape == (frames, 80) and d == dropped
    assert np.array_equal(f.reshape(-1), x[:frames * 80])
