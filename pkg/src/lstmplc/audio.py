"""16-bit mono PCM WAV reading/writing and fixed-length framing."""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

WAVE_FORMAT_PCM = 0x0001
WAVE_FORMAT_EXTENSIBLE = 0xFFFE
_PCM_GUID_TAIL = b"\x00\x00\x00\x00\x10\x00\x80\x00\x00\xaa\x00\x38\x9b\x71"


class WavFormatError(ValueError):
    """File is not a RIFF/WAVE container we can parse."""


class UnsupportedFormatError(WavFormatError):
    """Valid WAV, but not 16-bit linear PCM."""


class ChannelCountError(WavFormatError):
    def __init__(self, channels, path=None):
        where = f" in {path}" if path else ""
        super().__init__(f"expected a mono file, found {channels} channels{where}")
        self.channels = channels


@dataclass
class AudioBuffer:
    samples: np.ndarray  # float64 in [-1, 1]
    sample_rate: int

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


def _chunks(data: bytes, path):
    pos = 12
    while pos + 8 <= len(data):
        cid, size = struct.unpack_from("<4sI", data, pos)
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise WavFormatError(f"{path}: chunk {cid!r} truncated ({len(body)} of {size} bytes)")
        yield cid, body
        pos += 8 + size + (size & 1)


def read_wav(path) -> AudioBuffer:
    """Read a 16-bit mono PCM WAV; sample values are ``int16 / 32768``."""
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise WavFormatError(f"{path}: not a RIFF/WAVE file")
    fmt = None
    pcm = None
    for cid, body in _chunks(data, path):
        if cid == b"fmt ":
            if len(body) < 16:
                raise WavFormatError(f"{path}: fmt chunk too short")
            tag, channels, rate, _, _, bits = struct.unpack_from("<HHIIHH", body)
            if tag == WAVE_FORMAT_EXTENSIBLE and len(body) >= 40 and body[26:40] == _PCM_GUID_TAIL:
                tag = struct.unpack_from("<H", body, 24)[0]
            fmt = (tag, channels, rate, bits)
        elif cid == b"data":
            pcm = body
    if fmt is None or pcm is None:
        raise WavFormatError(f"{path}: missing fmt or data chunk")
    tag, channels, rate, bits = fmt
    if tag != WAVE_FORMAT_PCM:
        raise UnsupportedFormatError(f"{path}: format tag {tag:#06x} is not linear PCM")
    if bits != 16:
        raise UnsupportedFormatError(f"{path}: {bits}-bit samples, only 16-bit PCM is supported")
    if channels != 1:
        raise ChannelCountError(channels, path)
    ints = np.frombuffer(pcm[:len(pcm) // 2 * 2], dtype="<i2")
    return AudioBuffer(ints.astype(np.float64) / 32768.0, int(rate))


def quantize(samples) -> np.ndarray:
    """Float samples to int16 as written to disk: round(x * 32768), clamped to +/-32767."""
    x = np.asarray(samples, dtype=np.float64)
    return np.clip(np.rint(x * 32768.0), -32767, 32767).astype("<i2")


def write_wav(buf: AudioBuffer, path):
    """Write a canonical 44-byte-header 16-bit mono PCM file."""
    pcm = quantize(buf.samples).tobytes()
    rate = int(buf.sample_rate)
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(pcm), b"WAVE",
        b"fmt ", 16, WAVE_FORMAT_PCM, 1, rate, rate * 2, 2, 16,
        b"data", len(pcm),
    )
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(pcm)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def segment_frames(samples, frame_len: int):
    """Split into whole frames of ``frame_len``; returns ``(frames[n, N], dropped)``."""
    if frame_len < 1:
        raise ValueError("frame length must be >= 1")
    samples = np.asarray(samples)
    n = samples.shape[0] // frame_len
    return samples[:n * frame_len].reshape(n, frame_len), samples.shape[0] - n * frame_len
