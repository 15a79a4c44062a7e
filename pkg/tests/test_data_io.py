import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from conftest import make_recording
from eegdec.data_io import (
    HEADER,
    Manifest,
    ManifestEntry,
    RecordingPair,
    decode_signal,
    encode_signal,
    load_manifest,
    random_crop,
    read_recording,
    read_signal_header,
    save_manifest,
    write_recording,
)
from eegdec.errors import ConfigError, DimensionError, FormatError, TooShortError
from eegdec.tensor import Tensor


def float32_recording(rng, samples, channels, subject_id=0, sample_rate_hz=64):
    return RecordingPair(
        subject_id=subject_id,
        eeg=Tensor(rng.standard_normal((samples, channels)).astype(np.float32)),
        envelope=Tensor(rng.standard_normal(samples).astype(np.float32)),
        sample_rate_hz=sample_rate_hz,
    )


def test_recording_round_trip_is_bitwise(tmp_path, rng):
    rec = float32_recording(rng, 50, 3, subject_id=7, sample_rate_hz=128)
    write_recording(tmp_path / "a_eeg.eegr", tmp_path / "a_env.eegr", rec)
    restored = read_recording(tmp_path / "a_eeg.eegr", tmp_path / "a_env.eegr")
    assert restored.subject_id == 7
    assert restored.sample_rate_hz == 128
    assert restored.eeg.data.tobytes() == rec.eeg.data.tobytes()
    assert restored.envelope.data.tobytes() == rec.envelope.data.tobytes()


@given(
    samples=st.integers(1, 40),
    channels=st.integers(1, 6),
    subject_id=st.integers(0, 2**32 - 1),
    seed=st.integers(0, 2**16),
)
def test_signal_round_trip_property(samples, channels, subject_id, seed):
    data = np.random.default_rng(seed).standard_normal((channels, samples)).astype(np.float32)
    decoded = decode_signal(encode_signal(data, subject_id, 64))
    assert decoded.subject_id == subject_id
    assert decoded.sample_rate_hz == 64
    np.testing.assert_array_equal(decoded.data, data.astype(np.float64))


def test_header_layout():
    payload = encode_signal(np.zeros((2, 3)), subject_id=5, sample_rate_hz=64)
    assert payload[:4] == b"EEGR"
    assert HEADER.size == 24
    assert len(payload) == 24 + 2 * 3 * 4
    assert int.from_bytes(payload[8:12], "little") == 5


def test_bad_magic():
    payload = b"XXXX" + encode_signal(np.zeros((1, 4)), 0, 64)[4:]
    with pytest.raises(FormatError) as excinfo:
        decode_signal(payload)
    assert excinfo.value.offset == 0


def test_bad_version():
    payload = bytearray(encode_signal(np.zeros((1, 4)), 0, 64))
    payload[4:8] = (2).to_bytes(4, "little")
    with pytest.raises(FormatError) as excinfo:
        decode_signal(bytes(payload))
    assert excinfo.value.offset == 4


def test_declared_payload_size_and_truncation():
    payload = encode_signal(np.zeros((64, 320)), 0, 64)
    assert len(payload) - HEADER.size == 81920
    with pytest.raises(FormatError, match="81920") as excinfo:
        decode_signal(payload[:-1])
    assert excinfo.value.offset == len(payload) - 1


def test_truncated_header_and_trailing_bytes():
    with pytest.raises(FormatError):
        decode_signal(b"EEGR\x01\x00")
    with pytest.raises(FormatError, match="trailing"):
        decode_signal(encode_signal(np.zeros((1, 2)), 0, 64) + b"\x00\x00\x00\x00")


def test_empty_signal_is_rejected():
    payload = encode_signal(np.zeros((1, 1)), 0, 64)
    header = bytearray(payload[: HEADER.size])
    header[20:24] = (0).to_bytes(4, "little")
    with pytest.raises(FormatError, match="empty"):
        decode_signal(bytes(header))


def test_header_reader_checks_file_size(tmp_path):
    path = tmp_path / "x.eegr"
    path.write_bytes(encode_signal(np.zeros((3, 10)), 1, 64)[:-2])
    with pytest.raises(FormatError, match="file size"):
        read_signal_header(path)


def test_recording_pair_shape_contract(rng):
    with pytest.raises(DimensionError):
        RecordingPair(0, Tensor(rng.standard_normal((5, 2))), Tensor(rng.standard_normal(4)))
    with pytest.raises(DimensionError):
        RecordingPair(0, Tensor(rng.standard_normal(5)), Tensor(rng.standard_normal(5)))


def test_mismatched_subject_ids_between_files(tmp_path, rng):
    rec = float32_recording(rng, 10, 2, subject_id=1)
    write_recording(tmp_path / "e.eegr", tmp_path / "v.eegr", rec)
    (tmp_path / "v.eegr").write_bytes(encode_signal(rec.envelope.data[None, :], 2, 64))
    with pytest.raises(FormatError, match="subject"):
        read_recording(tmp_path / "e.eegr", tmp_path / "v.eegr")


def test_crop_of_exact_length_is_whole_recording(rng):
    rec = make_recording(rng, 32, 3)
    crop = random_crop(rec, 32, rng)
    assert crop.offset == 0
    np.testing.assert_array_equal(crop.eeg.data, rec.eeg.data)
    np.testing.assert_array_equal(crop.envelope.data, rec.envelope.data)


def test_crop_offsets_cover_the_valid_range(rng):
    rec = make_recording(rng, 40, 2)
    offsets = set()
    for _ in range(500):
        crop = random_crop(rec, 32, rng)
        assert crop.eeg.shape == (32, 2)
        np.testing.assert_array_equal(crop.envelope.data, rec.envelope.data[crop.offset : crop.offset + 32])
        offsets.add(crop.offset)
    assert offsets == set(range(9))


def test_crop_offsets_are_uniform(rng):
    rec = make_recording(rng, 40, 2)
    counts = np.bincount([random_crop(rec, 32, rng).offset for _ in range(10_000)], minlength=9)
    assert counts.shape == (9,)
    assert stats.chisquare(counts).pvalue > 1e-3

def test_crop_of_short_recording(rng):
    with pytest.raises(TooShortError):
        random_crop(make_recording(rng, 10, 2), 32, rng)


def test_manifest_round_trip_and_paths(dataset_dir):
    manifest = load_manifest(dataset_dir / "manifest.json")
    assert manifest.n_subjects == 2
    assert manifest.root == dataset_dir
    assert [entry.split for entry in manifest.entries_for("val")] == ["val", "val"]
    assert manifest.eeg_channels() == 4
    rec = manifest.load(manifest.entries_for("train")[0])
    assert rec.n_samples == 128


def test_manifest_accepts_object_form(tmp_path, dataset_dir):
    entries = json.loads((dataset_dir / "manifest.json").read_text())
    for entry in entries:
        entry["eeg_path"] = str(dataset_dir / entry["eeg_path"])
        entry["envelope_path"] = str(dataset_dir / entry["envelope_path"])
    path = tmp_path / "elsewhere" / "manifest.json"
    path.parent.mkdir()
    path.write_text(json.dumps({"entries": entries}))
    assert len(load_manifest(path).load_split("test")) == 2


def test_manifest_errors(tmp_path, dataset_dir):
    with pytest.raises(ConfigError, match="not found"):
        load_manifest(tmp_path / "missing.json")

    broken = tmp_path / "broken.json"
    broken.write_text("{")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_manifest(broken)

    sparse = Manifest(entries=[]).model_dump()
    sparse["entries"] = [
        ManifestEntry(eeg_path="a", envelope_path="b", subject_id=1, split="train").model_dump()
    ]
    path = tmp_path / "sparse.json"
    path.write_text(json.dumps(sparse))
    with pytest.raises(ConfigError, match="dense"):
        load_manifest(path, check_files=False)

    entries = json.loads((dataset_dir / "manifest.json").read_text())
    entries[0]["eeg_path"] = "gone.eegr"
    dangling = dataset_dir / "dangling.json"
    dangling.write_text(json.dumps(entries))
    with pytest.raises(ConfigError, match="missing file"):
        load_manifest(dangling)


def test_save_manifest_sets_root(tmp_path):
    manifest = Manifest(entries=[ManifestEntry(eeg_path="e", envelope_path="v", subject_id=0, split="test")])
    save_manifest(tmp_path / "m" / "manifest.json", manifest)
    assert manifest.root == tmp_path / "m"
    assert manifest.resolve("e") == tmp_path / "m" / "e"
