"""
Helper utilities for ebsim: scenario section reading and value formatting.
"""

from typing import Any, List, Optional, Sequence

from ebsim.core.errors import ConfigError


class ConfigSection:
    """
    Validating reader over one mapping of a scenario document.

    Every accessor removes the key it reads; finish() rejects whatever is left,
    so typos in a scenario never pass silently.
    """

    def __init__(self, data: Any, path: str) -> None:
        """
        Args:
            data: Mapping to read (None is treated as empty)
            path: Dotted location of the mapping, used in error messages
        """
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path or '<root>'}: expected a mapping, got {type(data).__name__}")
        self.path = path
        self._data = dict(data)

    def _key(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else key

    def has(self, key: str) -> bool:
        return key in self._data

    def raw(self, key: str, default: Any = None) -> Any:
        return self._data.pop(key, default)

    def get_int(
        self,
        key: str,
        default: Optional[int] = None,
        minimum: Optional[int] = None,
        maximum: Optional[int] = None,
        required: bool = False,
    ) -> Optional[int]:
        if key not in self._data:
            if required:
                raise ConfigError(f"{self._key(key)}: required")
            return default
        value = self._data.pop(key)
        if value is None and not required:
            return default
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                value = int(value)
            else:
                raise ConfigError(f"{self._key(key)}: expected an integer, got {value!r}")
        if minimum is not None and value < minimum:
            raise ConfigError(f"{self._key(key)}: must be >= {minimum}, got {value}")
        if maximum is not None and value > maximum:
            raise ConfigError(f"{self._key(key)}: must be <= {maximum}, got {value}")
        return value

    def get_float(
        self,
        key: str,
        default: Optional[float] = None,
        minimum: Optional[float] = None,
        maximum: Optional[float] = None,
        required: bool = False,
    ) -> Optional[float]:
        if key not in self._data:
            if required:
                raise ConfigError(f"{self._key(key)}: required")
            return default
        value = self._data.pop(key)
        if value is None and not required:
            return default
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{self._key(key)}: expected a number, got {value!r}")
        value = float(value)
        if minimum is not None and value < minimum:
            raise ConfigError(f"{self._key(key)}: must be >= {minimum}, got {value}")
        if maximum is not None and value > maximum:
            raise ConfigError(f"{self._key(key)}: must be <= {maximum}, got {value}")
        return value

    def get_bool(self, key: str, default: bool = False) -> bool:
        if key not in self._data:
            return default
        value = self._data.pop(key)
        if not isinstance(value, bool):
            raise ConfigError(f"{self._key(key)}: expected true or false, got {value!r}")
        return value

    def get_str(
        self,
        key: str,
        default: Optional[str] = None,
        choices: Optional[Sequence[str]] = None,
        required: bool = False,
    ) -> Optional[str]:
        if key not in self._data:
            if required:
                raise ConfigError(f"{self._key(key)}: required")
            return default
        value = self._data.pop(key)
        if value is None and not required:
            return default
        if not isinstance(value, str):
            raise ConfigError(f"{self._key(key)}: expected a string, got {value!r}")
        if choices is not None and value not in choices:
            raise ConfigError(f"{self._key(key)}: must be one of {', '.join(choices)}, got {value!r}")
        return value

    def get_list(self, key: str, default: Optional[List[Any]] = None) -> List[Any]:
        if key not in self._data:
            return list(default or [])
        value = self._data.pop(key)
        if value is None:
            return list(default or [])
        if not isinstance(value, list):
            raise ConfigError(f"{self._key(key)}: expected a list, got {value!r}")
        return list(value)

    def section(self, key: str) -> "ConfigSection":
        return ConfigSection(self._data.pop(key, None), self._key(key))

    def finish(self) -> None:
        """Reject unknown keys."""
        if self._data:
            unknown = ", ".join(sorted(str(k) for k in self._data))
            raise ConfigError(f"{self.path or '<root>'}: unknown key(s): {unknown}")


def format_bytes(size_bytes: float) -> str:
    """
    Format a byte count with binary units.

    Args:
        size_bytes: Size in bytes

    Returns:
        Formatted size string
    """
    for unit in ["B", "KiB", "MiB", "GiB"]:
        if abs(size_bytes) < 1024.0:
            return f"{size_bytes:.1f} {unit}"
        size_bytes /= 1024.0
    return f"{size_bytes:.1f} TiB"


def format_rate(bits_per_second: float) -> str:
    """Format a rate in Gb/s."""
    return f"{bits_per_second / 1e9:.2f} Gb/s"


def parse_int_list(text: str) -> List[int]:
    """
    Parse a comma-separated list of positive integers ("1,2,4,8").

    Raises:
        ConfigError: On empty items or non-positive values
    """
    values = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            raise ConfigError(f"empty item in list {text!r}")
        try:
            value = int(item)
        except ValueError:
            raise ConfigError(f"not an integer: {item!r}")
        if value < 1:
            raise ConfigError(f"values must be >= 1, got {value}")
        values.append(value)
    return values


def to_plain(data: Any) -> Any:
    """Recursively convert loader containers (ruamel CommentedMap etc.) to dict/list."""
    if isinstance(data, dict):
        return {str(k): to_plain(v) for k, v in data.items()}
    if isinstance(data, (list, tuple)):
        return [to_plain(v) for v in data]
    return data

