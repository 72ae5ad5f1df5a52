import csv
import os
import tempfile
from pathlib import Path
from typing import Generator, Iterable, List, Sequence, Union


def format_float(value: float) -> str:
    """Six significant digits, the format of every CSV this package writes."""
    return f"{value:.6g}"


def atomic_write_text(path: Union[Path, str], text: str) -> None:
    """Write ``text`` via a temp file in the same directory and rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp_name, path)
    except OSError:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def write_csv(path: Union[Path, str], header: Sequence[str], rows: Iterable[Sequence[object]]) -> None:
    """Header row plus ``rows``; floats go through format_float."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_float(v) if isinstance(v, float) else v for v in row])


def recursive_scan(directory: Union[Path, str], suffix: str = ".mc") -> Generator[os.DirEntry, None, None]:
    """
    Recursively scan directory using os.scandir (iterative stack-based).
    Yields os.DirEntry objects for files ending in ``suffix``.
    """
    stack = [str(directory)]
    while stack:
        current_dir = stack.pop()
        try:
            with os.scandir(current_dir) as it:
                for entry in it:
                    if entry.is_dir(follow_symlinks=False):
                        stack.append(entry.path)
                    elif entry.name.endswith(suffix):
                        yield entry
        except (PermissionError, OSError):
            pass


def sorted_files(directory: Union[Path, str], suffix: str = ".mc") -> List[Path]:
    """Files under ``directory`` ending in ``suffix``, sorted by path."""
    return sorted(Path(entry.path) for entry in recursive_scan(directory, suffix))


def parse_int_list(text: str) -> List[int]:
    """'8,16,32' -> [8, 16, 32]."""
    return [int(part) for part in text.split(",") if part.strip()]
