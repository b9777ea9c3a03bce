import pytest

from src.errors import (
    ArtifactError, CheckpointFormatError, ConfigError, FingerprintError, InsufficientDataError,
    NumericalError, ParityError, ScoreFileError, ShapeError, SplitViolationError,
)


@pytest.mark.parametrize("cls,code", [
    (ConfigError, 2), (ParityError, 2), (ArtifactError, 3), (FingerprintError, 3),
    (CheckpointFormatError, 3), (InsufficientDataError, 3), (NumericalError, 4), (ShapeError, 4),
])
def test_exit_codes(cls, code):
    assert cls.exit_code == code


def test_config_errors_are_value_errors():
    with pytest.raises(ValueError):
        raise ConfigError("bad")


def test_score_file_error_names_line():
    err = ScoreFileError("malformed JSON", line=7)
    assert err.line == 7
    assert "line 7" in str(err)


def test_split_violation_keeps_list():
    err = SplitViolationError(["a", "b"])
    assert err.violations == ["a", "b"]
    assert "a; b" in str(err)


def test_numerical_error_carries_step():
    err = NumericalError("non-finite value", op="log", step=12)
    assert err.op == "log"
    assert "t=12" in str(err)
