from backend.errors import ConfigError, NumericError, WeightFileError
from backend.utils import sanitize_error


def test_sanitize_double_quotes():
    """Double-quoted paths are redacted."""
    sensitive_path = "/home/user/secret/data"
    sanitized = sanitize_error(ConfigError(f'Error: File "{sensitive_path}" not found'))
    assert sensitive_path not in sanitized
    assert "[REDACTED_PATH]" in sanitized


def test_sanitize_mixed_quotes():
    path1 = "/home/secret/1"
    path2 = "/home/secret/2"
    sanitized = sanitize_error(ValueError(f"Failed '{path1}' and \"{path2}\""))
    assert path1 not in sanitized
    assert path2 not in sanitized
    assert sanitized.count("[REDACTED_PATH]") >= 2


def test_sanitize_unquoted_path_unix():
    sensitive_path = "/var/lib/mosattack/results/secret"
    sanitized = sanitize_error(ConfigError(f"cannot read {sensitive_path}: bad header"))
    assert sensitive_path not in sanitized
    assert "[REDACTED_PATH]" in sanitized


def test_sanitize_quoted_path_windows():
    sensitive_path = r"C:\Users\Admin\Secret\Data"
    sanitized = sanitize_error(ConfigError(f"Access denied to '{sensitive_path}'"))
    assert sensitive_path not in sanitized
    assert "[REDACTED_PATH]" in sanitized


def test_sanitize_preserve_urls():
    url = "http://example.com/foo/bar"
    sanitized = sanitize_error(ConfigError(f"Failed to fetch {url}"))
    assert url in sanitized
    assert "[REDACTED_PATH]" not in sanitized


def test_toolkit_details_survive():
    assert "loss id 4" in sanitize_error(NumericError("objective is not finite", loss_id=4))
    assert "at byte offset 12" in sanitize_error(WeightFileError("zero layer width", 12))


def test_io_errors_are_generic():
    sanitized = sanitize_error(FileNotFoundError(2, "No such file", "/root/secret/model.mosw"))
    assert sanitized == "An I/O error occurred. Please check the logs."


def test_unexpected_errors_are_generic():
    assert sanitize_error(RuntimeError("internal state at /opt/x")) == "An internal error occurred."
