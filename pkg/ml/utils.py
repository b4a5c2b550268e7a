#!/usr/bin/env python3
"""
Utility functions for the aspect extraction pipeline.
"""

import json
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Union

PathLike = Union[str, Path]


def save_json(data: Any, filepath: PathLike, quiet: bool = True):
    """Save a JSON document (UTF-8, stable key order, trailing newline)."""
    Path(filepath).parent.mkdir(parents=True, exist_ok=True)
    with open(filepath, 'w', encoding='utf-8') as f:
        json.dump(data, f, indent=2, ensure_ascii=False)
        f.write('\n')
    if not quiet:
        print(f"✅ Saved {filepath}")


def load_json(filepath: PathLike) -> Any:
    """Load JSON file."""
    with open(filepath, 'r', encoding='utf-8') as f:
        return json.load(f)


def write_jsonl(records: Iterable[Dict[str, Any]], filepath: PathLike) -> int:
    """
    Write one JSON object per line.

    Returns:
        Number of records written
    """
    Path(filepath).parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(filepath, 'w', encoding='utf-8', newline='\n') as f:
        for record in records:
            f.write(json.dumps(record, ensure_ascii=False))
            f.write('\n')
            count += 1
    return count


def iter_jsonl(filepath: PathLike) -> Iterator[Dict[str, Any]]:
    """Yield objects from a JSON-lines file, skipping blank lines."""
    with open(filepath, 'r', encoding='utf-8') as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"{filepath}:{lineno}: invalid JSON line ({e.msg})") from e


def read_jsonl(filepath: PathLike) -> List[Dict[str, Any]]:
    return list(iter_jsonl(filepath))


def read_bytes(filepath: PathLike) -> bytes:
    path = Path(filepath)
    if not path.exists():
        raise FileNotFoundError(f"Input not found: {path}")
    return path.read_bytes()


def read_text(filepath: PathLike) -> str:
    return read_bytes(filepath).decode('utf-8')


def banner(title: str, quiet: bool = False, width: int = 80):
    """Print a section banner the way the command-line scripts do."""
    if quiet:
        return
    print("\n" + "=" * width)
    print(title)
    print("=" * width)
