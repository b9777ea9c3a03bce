"""JSON-lines score files: one schema-versioned ``ScoreRecord`` per line."""

import json
import math
import os

from src.errors import ScoreFileError
from src.models import SCORE_SCHEMA_VERSION, SCORED_SPLITS, ScoreRecord


def persist_scores(records: list[ScoreRecord], path: str) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w") as f:
        for record in records:
            f.write(json.dumps(record.to_dict(), sort_keys=True, allow_nan=False))
            f.write("\n")
    return path


def load_scores(path: str) -> list[ScoreRecord]:
    if not os.path.exists(path):
        raise ScoreFileError(f"score file not found: {path}")
    records = []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                data = json.loads(line)
            except json.JSONDecodeError as e:
                raise ScoreFileError(f"malformed JSON ({e.msg})", line=lineno) from e
            if not isinstance(data, dict):
                raise ScoreFileError("expected a JSON object", line=lineno)
            if data.get("schema") != SCORE_SCHEMA_VERSION:
                raise ScoreFileError(
                    f"schema version {data.get('schema')!r} != {SCORE_SCHEMA_VERSION}", line=lineno
                )
            try:
                record = ScoreRecord.from_dict(data)
            except (KeyError, TypeError, ValueError) as e:
                raise ScoreFileError(f"invalid record: {e}", line=lineno) from e
            if not math.isfinite(record.score):
                raise ScoreFileError("score is not finite", line=lineno)
            if record.split not in SCORED_SPLITS:
                raise ScoreFileError(f"split {record.split!r} is never scored", line=lineno)
            records.append(record)
    if not records:
        raise ScoreFileError(f"no records in {path}")
    return records
