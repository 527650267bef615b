# app/utility.py

from __future__ import annotations

import hashlib
import json
import re
from datetime import date
from pathlib import Path
from typing import TYPE_CHECKING, Any

from dateutil.parser import isoparse

from app.exception import InvalidInputError

if TYPE_CHECKING:
    import pandas as pd

    from app.models import IpcCode, IpcLevel

DATE_FORMAT = "%Y-%m-%d"
FLOAT_FORMAT = "%.12g"

_IPC_PATTERN = re.compile(
    r"^(?P<section>[A-H])"
    r"(?:(?P<klass>\d{2})"
    r"(?:(?P<subclass>[A-Z])"
    r"(?:(?P<group>\d{1,4})(?:/(?P<subgroup>\d{1,6}))?)?)?)?$"
)
_PUNCTUATION = re.compile(r"[^\w\s]", re.UNICODE)
_WHITESPACE = re.compile(r"\s+")


def format_date(d: date) -> str:
    """
    Convert a date object to an ISO-8601 string.

    Args:
        d (date): The date to format

    Returns:
        str: Date string in YYYY-MM-DD format
    """
    return d.strftime(DATE_FORMAT)


def parse_date(date_str: str, field_name: str = "Date") -> date:
    """
    Parse an ISO-8601 date string into a date object.

    Args:
        date_str (str): Date string such as "2003-05-17"
        field_name (str): Name of the field for error messages

    Returns:
        date: Parsed calendar date

    Raises:
        InvalidInputError: If the string is empty or not a valid ISO date
    """
    if not isinstance(date_str, str) or not date_str.strip():
        raise InvalidInputError(f"{field_name} is missing.")
    try:
        return isoparse(date_str.strip()).date()
    except ValueError:
        raise InvalidInputError(f"{field_name} '{date_str}' is not an ISO-8601 date.")


def canonicalize_name(value: str, field_name: str = "Name") -> str:
    """
    Canonicalize a party name: case-fold, strip punctuation, collapse whitespace.

    Args:
        value (str): The raw name
        field_name (str): Name of the field for error messages (default: "Name")

    Returns:
        str: The canonical name

    Raises:
        InvalidInputError: If the name is empty after canonicalization
    """
    if not isinstance(value, str):
        raise InvalidInputError(f"{field_name} must be a string.")
    cleaned = _PUNCTUATION.sub(" ", value.casefold())
    cleaned = _WHITESPACE.sub(" ", cleaned).strip()
    if not cleaned:
        raise InvalidInputError(f"{field_name} cannot be empty.")
    return cleaned


def canonicalize_country(value: str | None) -> str:
    """Upper-case and strip a country code; missing values become ""."""
    if value is None:
        return ""
    return str(value).strip().upper()


def parse_ipc(code: str) -> "IpcCode":
    """
    Parse an IPC code string such as "H01L21/02" or "H01L 21/02".

    Args:
        code (str): The raw IPC code

    Returns:
        IpcCode: The parsed code, resolvable at least to section level

    Raises:
        InvalidInputError: If the code does not parse to a section
    """
    from app.models import IpcCode

    if not isinstance(code, str):
        raise InvalidInputError(f"IPC code {code!r} is not a string.")
    normalized = _WHITESPACE.sub("", code).upper()
    match = _IPC_PATTERN.match(normalized)
    if not match:
        raise InvalidInputError(f"'{code}' is not a valid IPC code.")
    return IpcCode(
        code=normalized,
        section=match.group("section"),
        klass=match.group("klass"),
        subclass=match.group("subclass"),
        group=match.group("group"),
    )


def validate_ipc_level(level_input: str) -> "IpcLevel":
    """
    Validate and convert an IPC level string to the IpcLevel enum.

    Args:
        level_input (str): "section", "class" or "subclass"

    Returns:
        IpcLevel: The validated level

    Raises:
        InvalidInputError: If the string is not a valid level
    """
    from app.models import IpcLevel

    try:
        return IpcLevel(str(level_input).strip().lower())
    except ValueError:
        raise InvalidInputError(f"'{level_input}' is not a valid IPC level.")


def validate_object(value: Any, field_name: str = "Value") -> dict:
    """
    Validate that a value is a JSON object (a dict).

    Raises:
        InvalidInputError: If it is not
    """
    if not isinstance(value, dict):
        raise InvalidInputError(f"{field_name} must be an object, got {type(value).__name__}.")
    return value


def validate_object_list(value: Any, field_name: str = "Value") -> list[dict]:
    """
    Validate a list of JSON objects; None stands for an empty list.

    Args:
        value (Any): The raw field value
        field_name (str): Name of the field for error messages

    Returns:
        list[dict]: The items

    Raises:
        InvalidInputError: If the value is not a list or an item is not an object
    """
    if value is None:
        return []
    if not isinstance(value, (list, tuple)):
        raise InvalidInputError(f"{field_name} must be a list, got {type(value).__name__}.")
    for position, item in enumerate(value, 1):
        validate_object(item, f"{field_name} item {position}")
    return list(value)


def validate_non_negative_int(value: Any, field_name: str = "Value") -> int:
    """
    Validate that a value is a non-negative integer (bools rejected).

    Args:
        value (Any): The value to validate
        field_name (str): Name of the field for error messages

    Returns:
        int: The validated integer

    Raises:
        InvalidInputError: If the value is not an integer or is negative
    """
    if isinstance(value, bool) or not isinstance(value, int):
        if isinstance(value, float) and value.is_integer():
            value = int(value)
        else:
            raise InvalidInputError(f"{field_name} must be an integer.")
    if value < 0:
        raise InvalidInputError(f"{field_name} cannot be negative.")
    return value


def validate_positive_int(value: Any, field_name: str = "Value") -> int:
    """Validate that a value is an integer >= 1."""
    value = validate_non_negative_int(value, field_name)
    if value < 1:
        raise InvalidInputError(f"{field_name} must be at least 1.")
    return value


def derive_seed(seed: int, *names: Any) -> int:
    """
    Derive an independent 32-bit seed for a named substream.

    Args:
        seed (int): The run seed
        *names: Stage or purpose names (e.g. "train_eval", "RF #1", fold id)

    Returns:
        int: Seed for numpy.random.default_rng
    """
    key = ":".join([str(seed), *(str(n) for n in names)])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big")


def canonical_json(data: Any) -> str:
    """Serialize data to deterministic JSON text (sorted keys, trailing newline)."""
    return json.dumps(data, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def write_json(path: str | Path, data: Any) -> Path:
    """
    Write data as canonical JSON, creating parent directories.

    Args:
        path (str | Path): Target file
        data (Any): JSON-serialisable data

    Returns:
        Path: The written path
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(canonical_json(data))
    return path


def write_frame(path: str | Path, frame: "pd.DataFrame") -> Path:
    """Write a DataFrame as CSV with a fixed float format and "\\n" line endings."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def read_json(path: str | Path) -> Any:
    """
    Read a JSON file.

    Raises:
        NotFoundError: If the file does not exist
    """
    from app.exception import NotFoundError

    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError:
        raise NotFoundError(f"File '{path}' does not exist.")


def sha256_file(path: str | Path) -> str:
    """Return the hex SHA-256 digest of a file's bytes."""
    with open(path, "rb") as f:
        return hashlib.sha256(f.read()).hexdigest()
