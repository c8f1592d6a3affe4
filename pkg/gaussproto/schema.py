"""
Gaussproto - Typed configuration keys

This module provides schema classes describing every configuration key:
its type, default, allowed values and range. A ConfigSchema turns the raw
strings of a key=value file into typed values and rejects anything it
does not know.
"""

from enum import Enum
from typing import Any, Dict, List, Optional, Union

from .errors import ConfigError


class DataType(Enum):
    """Supported configuration value types."""

    STRING = "string"
    INTEGER = "integer"
    FLOAT = "float"
    BOOLEAN = "boolean"
    LIST = "list"  # comma-separated strings


class ConfigKey:
    """
    Define one configuration key with a specific data type.

    Args:
        name: Key name as written in the config file
        dtype: Data type (DataType enum or string shorthand)
        default: Value used when the key is absent
        description: One-line description shown by ``--help``
        enum_values: Optional list of allowed values
        minimum: Optional inclusive lower bound for numbers
        maximum: Optional inclusive upper bound for numbers

    Examples:
        >>> ConfigKey("tau", DataType.FLOAT, 0.5, "contrastive temperature",
        ...           minimum=0.0)
        >>> ConfigKey("prototype", "string", "gdp",
        ...           enum_values=["none", "ema", "gdp"])
    """

    def __init__(
        self,
        name: str,
        dtype: Union[DataType, str],
        default: Any = None,
        description: Optional[str] = None,
        enum_values: Optional[List[Any]] = None,
        minimum: Optional[float] = None,
        maximum: Optional[float] = None,
    ):
        self.name = name
        self.dtype = self._parse_dtype(dtype)
        self.default = default
        self.description = description
        self.enum_values = enum_values
        self.minimum = minimum
        self.maximum = maximum

    def _parse_dtype(self, dtype: Union[DataType, str]) -> DataType:
        """Parse dtype from string or DataType enum."""
        if isinstance(dtype, DataType):
            return dtype

        type_mapping = {
            "str": DataType.STRING,
            "string": DataType.STRING,
            "int": DataType.INTEGER,
            "integer": DataType.INTEGER,
            "float": DataType.FLOAT,
            "number": DataType.FLOAT,
            "bool": DataType.BOOLEAN,
            "boolean": DataType.BOOLEAN,
            "list": DataType.LIST,
        }

        dtype_lower = dtype.lower()
        if dtype_lower in type_mapping:
            return type_mapping[dtype_lower]
        raise ValueError(
            f"Unknown data type: {dtype}. "
            f"Supported types: {list(type_mapping.keys())}"
        )

    def convert_value(self, value: Any) -> Any:
        """
        Convert a raw value to this key's type and check its constraints.

        Raises:
            ConfigError: If the value cannot be converted or is out of range
        """
        if value is None:
            return self.default

        try:
            if self.dtype == DataType.STRING:
                converted: Any = str(value).strip()

            elif self.dtype == DataType.INTEGER:
                if isinstance(value, bool):
                    raise ValueError("booleans are not integers")
                if isinstance(value, str):
                    value = value.replace("_", "").strip()
                converted = int(value)

            elif self.dtype == DataType.FLOAT:
                if isinstance(value, str):
                    value = value.replace("_", "").strip()
                converted = float(value)

            elif self.dtype == DataType.BOOLEAN:
                if isinstance(value, bool):
                    converted = value
                else:
                    text = str(value).strip().lower()
                    if text in ("true", "yes", "1", "on"):
                        converted = True
                    elif text in ("false", "no", "0", "off"):
                        converted = False
                    else:
                        raise ValueError(f"not a boolean: {value!r}")

            else:
                if isinstance(value, (list, tuple)):
                    converted = [str(v).strip() for v in value]
                else:
                    converted = [v.strip() for v in str(value).split(",") if v.strip()]

        except (ValueError, TypeError) as e:
            raise ConfigError(
                f"Invalid value for '{self.name}' ({self.dtype.value}): {value!r}",
                key=self.name,
            ) from e

        self._check(converted)
        return converted

    def _check(self, value: Any) -> None:
        items = value if self.dtype == DataType.LIST else [value]
        if self.enum_values is not None:
            for item in items:
                if item not in self.enum_values:
                    raise ConfigError(
                        f"Invalid value for '{self.name}': {item!r}. "
                        f"Allowed: {self.enum_values}",
                        key=self.name,
                    )
        if self.dtype in (DataType.INTEGER, DataType.FLOAT):
            if self.minimum is not None and value < self.minimum:
                raise ConfigError(
                    f"'{self.name}' must be >= {self.minimum}, got {value}",
                    key=self.name,
                )
            if self.maximum is not None and value > self.maximum:
                raise ConfigError(
                    f"'{self.name}' must be <= {self.maximum}, got {value}",
                    key=self.name,
                )

    def describe(self) -> str:
        """One help line: ``name (type, default=...)  description``."""
        text = f"{self.name} ({self.dtype.value}, default={self.default})"
        if self.enum_values:
            text += f" one of {self.enum_values}"
        if self.description:
            text += f"  {self.description}"
        return text


class ConfigSchema:
    """
    A set of typed configuration keys.

    Args:
        keys: List of ConfigKey objects
        name: Schema name used in messages

    Examples:
        >>> schema = ConfigSchema([
        ...     ConfigKey("tau", DataType.FLOAT, 0.5),
        ...     ConfigKey("total_iters", DataType.INTEGER, 4000),
        ... ])
        >>> schema.convert_data({"tau": "0.2"})["tau"]
        0.2
    """

    def __init__(self, keys: List[ConfigKey], name: str = "config"):
        self.name = name
        self.keys = keys

        # Create lookup dict for fast access
        self._key_map = {key.name: key for key in self.keys}

    def get_key_names(self) -> List[str]:
        """Get list of key names."""
        return [key.name for key in self.keys]

    def get_key(self, name: str) -> Optional[ConfigKey]:
        """Get key by name."""
        return self._key_map.get(name)

    def convert_data(self, data: Dict[str, Any]) -> Dict[str, Any]:
        """
        Convert raw values to typed ones and fill in defaults.

        Raises:
            ConfigError: For unknown keys or invalid values
        """
        for raw_name in data:
            if raw_name not in self._key_map:
                raise ConfigError(
                    f"Unknown {self.name} key: '{raw_name}'", key=raw_name
                )

        converted = {}
        for key in self.keys:
            converted[key.name] = key.convert_value(data.get(key.name))
        return converted

    def help_text(self) -> str:
        """All keys, one per line, for ``--help``."""
        return "\n".join("  " + key.describe() for key in self.keys)

    def __repr__(self) -> str:
        keys_str = ", ".join(f"{key.name}:{key.dtype.value}" for key in self.keys)
        return f"ConfigSchema({keys_str})"
