from typing import Any, Dict, Optional


class DecoderError(Exception):
    """Base class for every error raised by the decoder package."""

    exit_code: int = 1

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message

    def to_dict(self) -> Dict[str, Any]:
        return {
            "error": type(self).__name__,
            "message": self.message,
            "exit_code": self.exit_code,
        }


class UsageError(DecoderError):
    exit_code = 2


class ConfigError(DecoderError):
    exit_code = 3


class ContractError(DecoderError):
    exit_code = 3


class SubjectUnknownError(DecoderError):
    exit_code = 3


class DimensionError(DecoderError):
    exit_code = 4


class TooShortError(DecoderError):
    exit_code = 4


class FormatError(DecoderError):
    """Malformed EEGR/EDCK file. `offset` is the byte position where parsing failed."""

    exit_code = 4

    def __init__(self, message: str, offset: int, path: Optional[str] = None):
        where = f" in {path}" if path else ""
        super().__init__(f"{message} (byte offset {offset}{where})")
        self.offset = offset
        self.path = path

    def to_dict(self) -> Dict[str, Any]:
        payload = super().to_dict()
        payload["offset"] = self.offset
        return payload


class NumericError(DecoderError):
    exit_code = 5

    def __init__(self, message: str, dump_path: Optional[str] = None):
        super().__init__(message)
        self.dump_path = dump_path

    def to_dict(self) -> Dict[str, Any]:
        payload = super().to_dict()
        if self.dump_path:
            payload["dump_path"] = self.dump_path
        return payload
