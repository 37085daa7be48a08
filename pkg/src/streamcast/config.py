"""Flat ``key=value`` text files used for model specs and run configs."""

from .errors import ContractError


def parse_kv(text):
    """Parse ``key=value`` lines into an ordered list of pairs.

    Blank lines and ``#`` comments are skipped; keys may repeat.
    """
    items = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ContractError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        items.append((key.strip(), value.strip()))
    return items


def format_kv(items):
    return "".join(f"{k}={v}\n" for k, v in items)


def read_kv(path):
    with open(path, encoding="utf-8") as fh:
        return parse_kv(fh.read())
