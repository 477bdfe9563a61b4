import struct
import wave

import numpy as np
import pytest

from imse.audio import WavFile, resample, wav_read, wav_write
from imse.errors import WavError


def tone(n=16000, f=1000.0, sr=16000, amp=0.5):
    return amp * np.sin(2 * np.pi * f * np.arange(n) / sr)


def write_raw(path, pcm, channels=1, sr=16000, width=2):
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(channels)
        fh.setsampwidth(width)
        fh.setframerate(sr)
        fh.writeframes(pcm)


class TestRoundTrip:
    def test_tone_bit_exact(self, tmp_path):
        p1, p2 = tmp_path / "a.wav", tmp_path / "b.wav"
        wav_write(p1, WavFile(16000, tone()))
        first = wav_read(p1)
        wav_write(p2, first)
        assert p1.read_bytes() == p2.read_bytes()
        np.testing.assert_array_equal(wav_read(p2).samples, first.samples)

    def test_normalisation(self, tmp_path):
        pcm = np.array([-32768, -1, 0, 1, 32767], dtype="<i2")
        path = tmp_path / "n.wav"
        write_raw(path, pcm.tobytes())
        np.testing.assert_array_equal(wav_read(path).samples, pcm / 32768.0)

    def test_clipping_on_write(self, tmp_path):
        path = tmp_path / "c.wav"
        wav_write(path, WavFile(8000, np.array([2.0, -2.0, 0.5])))
        np.testing.assert_array_equal(wav_read(path).samples, [32767 / 32768, -1.0, 0.5])

    def test_metadata(self, tmp_path):
        path = tmp_path / "m.wav"
        wav_write(path, WavFile(22050, tone(2205, sr=22050)))
        w = wav_read(path)
        assert (w.sample_rate, w.channels) == (22050, 1)
        assert w.duration == pytest.approx(0.1)


class TestStereo:
    def test_downmix_warns(self, tmp_path):
        path = tmp_path / "s.wav"
        pcm = np.array([[100, 300], [-200, 0]], dtype="<i2")
        write_raw(path, pcm.tobytes(), channels=2)
        with pytest.warns(UserWarning, match="downmix"):
            w = wav_read(path)
        np.testing.assert_array_equal(w.samples, [200 / 32768, -100 / 32768])

    def test_keep_channels(self, tmp_path):
        path = tmp_path / "s.wav"
        pcm = np.array([[100, 300], [-200, 0]], dtype="<i2")
        write_raw(path, pcm.tobytes(), channels=2)
        w = wav_read(path, downmix=False)
        assert w.channels == 2
        wav_write(tmp_path / "t.wav", w)
        assert (tmp_path / "t.wav").read_bytes() == path.read_bytes()


class TestErrors:
    def test_truncated_header(self, tmp_path):
        path = tmp_path / "t.wav"
        wav_write(path, WavFile(16000, tone(100)))
        path.write_bytes(path.read_bytes()[:20])
        with pytest.raises(WavError):
            wav_read(path)

    def test_truncated_data(self, tmp_path):
        path = tmp_path / "t.wav"
        wav_write(path, WavFile(16000, tone(100)))
        path.write_bytes(path.read_bytes()[:-50])
        with pytest.raises(WavError, match="truncated"):
            wav_read(path)

    def test_not_riff(self, tmp_path):
        path = tmp_path / "x.wav"
        path.write_bytes(b"hello world, definitely not a wave file")
        with pytest.raises(WavError):
            wav_read(path)

    def test_unsupported_width(self, tmp_path):
        path = tmp_path / "w.wav"
        write_raw(path, bytes(30), width=3)
        with pytest.raises(WavError, match="16-bit"):
            wav_read(path)

    def test_unsupported_codec(self, tmp_path):
        # IEEE float format tag (3) in the fmt chunk
        fmt = struct.pack("<HHIIHH", 3, 1, 16000, 64000, 4, 32)
        data = bytes(16)
        body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(data)) + data
        path = tmp_path / "f.wav"
        path.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
        with pytest.raises(WavError):
            wav_read(path)

    def test_too_many_channels(self, tmp_path):
        path = tmp_path / "q.wav"
        write_raw(path, bytes(24), channels=3)
        with pytest.raises(WavError, match="channels"):
            wav_read(path)


class TestResample:
    def test_identity(self):
        x = tone(100)
        assert resample(x, 16000, 16000) is x

    def test_length_and_tone(self):
        y = resample(tone(48000, sr=48000), 48000, 16000)
        assert len(y) == 16000
        mid = slice(1000, 15000)
        np.testing.assert_allclose(y[mid], tone(16000)[mid], atol=1e-2)
