"""
Tests for gaussproto.errors module.
"""

from concurrent.futures import ThreadPoolExecutor

import pytest

from gaussproto.errors import (
    CheckpointMismatch,
    ConfigError,
    ContractViolation,
    DiagnosticCounter,
    GaussProtoError,
    NumericFailure,
    ParseError,
    get_diagnostics,
)


class TestExceptions:
    """Tests for the exception hierarchy."""

    def test_hierarchy(self):
        """Test every error derives from GaussProtoError."""
        for cls in (ContractViolation, ConfigError, CheckpointMismatch):
            assert issubclass(cls, GaussProtoError)
            assert issubclass(cls, ValueError)
        assert issubclass(NumericFailure, RuntimeError)

    def test_parse_error_offset(self):
        """Test ParseError carries the byte offset."""
        error = ParseError("truncated file", 42)
        assert error.offset == 42
        assert "42" in str(error)

    def test_config_error_key(self):
        """Test ConfigError names the offending key."""
        with pytest.raises(ConfigError) as exc_info:
            raise ConfigError("bad value", key="tau")
        assert exc_info.value.key == "tau"


class TestDiagnosticCounter:
    """Tests for DiagnosticCounter."""

    def test_increment_and_reset(self):
        """Test counting, ignoring non-positive amounts and resetting."""
        counter = DiagnosticCounter()
        counter.increment("variance_clamped", 3)
        counter.increment("variance_clamped")
        counter.increment("variance_clamped", 0)
        assert counter.get("variance_clamped") == 4
        assert counter.get("missing") == 0
        assert counter.snapshot() == {"variance_clamped": 4}
        counter.reset()
        assert counter.snapshot() == {}

    def test_concurrent_increments(self):
        """Test increments from several threads are not lost."""
        counter = DiagnosticCounter()
        with ThreadPoolExecutor(max_workers=4) as pool:
            for _ in range(400):
                pool.submit(counter.increment, "gdp_update_skipped")
        assert counter.get("gdp_update_skipped") == 400

    def test_global_singleton(self):
        """Test get_diagnostics returns one shared instance."""
        assert get_diagnostics() is get_diagnostics()
