import json

import numpy as np
import pytest

from skelefusion.errors import DataFormatError, ShapeError, VersionError
from skelefusion.seqio import load_sequence, read_wav, save_sequence, write_wav
from skelefusion.skeleton import ConfidenceMask, SkeletonSequence
from skelefusion.synth import synth_dance


def test_round_trip_bit_exact(tmp_path):
    seq, _, _ = synth_dance(12, 14, 120.0, seed=4)
    mask = ConfidenceMask((np.random.default_rng(0).random((12, 14)) > 0.3).astype(float))
    path = tmp_path / "seq.json"
    save_sequence(path, seq, mask)
    loaded = load_sequence(path)
    assert np.array_equal(loaded.sequence.data, seq.data)
    assert loaded.sequence.fps == seq.fps
    assert loaded.sequence.edges == seq.edges
    assert np.array_equal(loaded.mask.mask, mask.mask)


def test_round_trip_without_mask(tmp_path):
    seq = SkeletonSequence(np.random.default_rng(1).normal(size=(3, 4, 3)))
    path = tmp_path / "seq.json"
    save_sequence(path, seq)
    loaded = load_sequence(path)
    assert loaded.mask is None
    assert np.array_equal(loaded.sequence.data, seq.data)


def test_truncated_file_is_parse_error(tmp_path):
    seq, _, _ = synth_dance(5, 14, 120.0, seed=1)
    path = tmp_path / "seq.json"
    save_sequence(path, seq)
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    with pytest.raises(DataFormatError, match="line"):
        load_sequence(path)


def test_version_mismatch(tmp_path):
    seq, _, _ = synth_dance(5, 14, 120.0, seed=1)
    path = tmp_path / "seq.json"
    save_sequence(path, seq)
    doc = json.loads(path.read_text())
    doc["version"] = 99
    path.write_text(json.dumps(doc))
    with pytest.raises(VersionError):
        load_sequence(path)


def test_mask_shape_mismatch(tmp_path):
    path = tmp_path / "seq.json"
    doc = {
        "version": 1,
        "fps": 30.0,
        "joints": 2,
        "dims": 2,
        "data": [[[0.0, 0.0], [1.0, 1.0]]],
        "mask": [[1, 0, 1]],
    }
    path.write_text(json.dumps(doc))
    with pytest.raises(ShapeError):
        load_sequence(path)


def test_non_finite_coordinates_rejected(tmp_path):
    path = tmp_path / "seq.json"
    doc = {"version": 1, "fps": 30.0, "joints": 1, "dims": 2, "data": [[[1e999, 0.0]]]}
    path.write_text(json.dumps(doc))
    with pytest.raises(DataFormatError):
        load_sequence(path)


def test_missing_field(tmp_path):
    path = tmp_path / "seq.json"
    path.write_text('{"version": 1, "fps": 30.0}')
    with pytest.raises(DataFormatError, match="missing"):
        load_sequence(path)


def test_wav_round_trip(tmp_path):
    _, audio, rate = synth_dance(30, 14, 120.0, seed=2)
    path = tmp_path / "a.wav"
    write_wav(path, audio, rate)
    samples, loaded_rate = read_wav(path)
    assert loaded_rate == rate
    assert samples.shape == audio.shape
    assert np.abs(samples - audio).max() < 1.0 / 32768.0


def test_wav_rejects_stereo(tmp_path):
    import wave

    path = tmp_path / "stereo.wav"
    with wave.open(str(path), "wb") as w:
        w.setnchannels(2)
        w.setsampwidth(2)
        w.setframerate(16000)
        w.writeframes(b"\x00\x00" * 200)
    with pytest.raises(DataFormatError, match="mono"):
        read_wav(path)


def test_wav_rejects_non_wav(tmp_path):
    path = tmp_path / "not.wav"
    path.write_bytes(b"definitely not audio")
    with pytest.raises(DataFormatError):
        read_wav(path)
