"""Exception types with stable machine-readable codes."""

from __future__ import annotations


class LinearKVError(Exception):
    """Raised for every contract violation the library detects.

    ``code`` is a stable kebab-case identifier such as
    ``"budget-not-line-aligned"``; callers should match on it rather than on
    message text.
    """

    def __init__(self, code: str, message: str = ""):
        self.code = code
        super().__init__(f"{code}: {message}" if message else code)


class ConfigError(LinearKVError):
    """Invalid run configuration. The CLI reports these as usage errors."""
