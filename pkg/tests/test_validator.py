import os

import pytest

from src.corpus import ClipEntry, CorpusGenerator, Manifest, encode_clip
from src.errors import SplitViolationError
from src.models import CorpusConfig
from src.validator import SplitValidator, require_clean, verify_hashes, verify_splits


@pytest.fixture
def generated(tmp_path):
    config = CorpusConfig(members=2, dev=2, eval=2, clip_length=64, sample_rate=4000,
                          freq_range=[100.0, 900.0])
    manifest, _ = CorpusGenerator(str(tmp_path)).generate(config, 1)
    return manifest, str(tmp_path)


def test_generated_corpus_is_clean(generated):
    manifest, clip_dir = generated
    assert verify_splits(manifest) == []
    assert verify_hashes(manifest, clip_dir) == []
    require_clean(manifest, clip_dir)


def test_duplicate_content_across_splits(generated):
    manifest, _ = generated
    member = manifest.split("member")[0]
    manifest.entries.append(ClipEntry(id="eval-0099", split="eval-nonmember", params={},
                                      sha256=member.sha256))
    errors = SplitValidator(manifest).validate()
    assert len(errors) == 1
    assert "mem-0000 (member)" in errors[0] and "eval-0099 (eval-nonmember)" in errors[0]
    with pytest.raises(SplitViolationError) as info:
        require_clean(manifest)
    assert info.value.violations == errors


def test_duplicate_id(generated):
    manifest, _ = generated
    manifest.entries.append(ClipEntry(id="mem-0000", split="dev-nonmember", params={}, sha256="x"))
    assert any("duplicate clip id mem-0000" in e for e in verify_splits(manifest))


def test_same_content_within_a_split_is_allowed():
    entries = [ClipEntry(id=f"mem-{i:04d}", split="member", params={}, sha256="same") for i in range(2)]
    assert verify_splits(Manifest(config={}, master_seed=0, entries=entries)) == []


def test_tampered_clip_file(generated):
    manifest, clip_dir = generated
    entry = manifest.entries[0]
    with open(f"{clip_dir}/{entry.filename}", "wb") as f:
        f.write(encode_clip([0.0] * 64, 4000))
    assert verify_hashes(manifest, clip_dir) == [f"content hash mismatch for {entry.id}"]


def test_missing_and_corrupt_files(generated):
    manifest, clip_dir = generated
    first, second = manifest.entries[:2]
    os.remove(os.path.join(clip_dir, first.filename))
    with open(os.path.join(clip_dir, second.filename), "wb") as f:
        f.write(b"junk")
    errors = verify_hashes(manifest, clip_dir)
    assert errors[0] == f"missing clip file for {first.id}"
    assert errors[1].startswith(f"{second.id}:")
