import os
from collections import defaultdict

from src.corpus import Manifest, content_hash, decode_clip
from src.errors import ArtifactError, SplitViolationError


class SplitValidator:
    def __init__(self, manifest: Manifest):
        self.manifest = manifest

    def validate(self) -> list[str]:
        errors = []
        errors.extend(self._check_ids())
        errors.extend(self._check_content())
        return errors

    def _check_ids(self) -> list[str]:
        errors = []
        seen: dict[str, str] = {}
        for entry in self.manifest.entries:
            if entry.id in seen:
                errors.append(f"duplicate clip id {entry.id} ({seen[entry.id]}, {entry.split})")
            else:
                seen[entry.id] = entry.split
        return errors

    def _check_content(self) -> list[str]:
        errors = []
        by_hash = defaultdict(list)
        for entry in self.manifest.entries:
            by_hash[entry.sha256].append(entry)
        for entries in by_hash.values():
            splits = {e.split for e in entries}
            if len(splits) > 1:
                ids = ", ".join(f"{e.id} ({e.split})" for e in entries)
                errors.append(f"identical content across splits: {ids}")
        return errors

    def check_files(self, clip_dir: str) -> list[str]:
        """Re-read every clip file and compare its content hash with the manifest."""
        errors = []
        for entry in self.manifest.entries:
            path = os.path.join(clip_dir, entry.filename)
            if not os.path.exists(path):
                errors.append(f"missing clip file for {entry.id}")
                continue
            with open(path, "rb") as f:
                try:
                    samples, _ = decode_clip(f.read())
                except ArtifactError as e:
                    errors.append(f"{entry.id}: {e}")
                    continue
            if content_hash(samples) != entry.sha256:
                errors.append(f"content hash mismatch for {entry.id}")
        return errors


def verify_splits(manifest: Manifest) -> list[str]:
    return SplitValidator(manifest).validate()


def verify_hashes(manifest: Manifest, clip_dir: str) -> list[str]:
    return SplitValidator(manifest).check_files(clip_dir)


def require_clean(manifest: Manifest, clip_dir: str = "") -> None:
    errors = verify_splits(manifest)
    if clip_dir:
        errors.extend(verify_hashes(manifest, clip_dir))
    if errors:
        raise SplitViolationError(errors)
