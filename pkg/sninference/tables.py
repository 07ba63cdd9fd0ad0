"""
Critical-value table store.

Tables are JSON documents in a table directory, one file per TableSpec
(``<spec name>.json``). A table is immutable once written: writes go to a
temporary file that is renamed into place, and an existing table is only
accepted again when the new content is byte-identical.
"""

import json
import logging
import os
from pathlib import Path

from sninference.errors import ConfigurationError
from sninference.limits import CriticalValueTable

logger = logging.getLogger(__name__)

TABLE_SUFFIX = ".json"


def dumps(document):
    """Canonical JSON text: sorted keys, two-space indent, trailing newline."""
    return json.dumps(document, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def table_path(directory, spec):
    """Location of the table for ``spec`` inside ``directory``."""
    return Path(directory) / f"{spec.name}{TABLE_SUFFIX}"


def atomic_write(path, text):
    """
    Writes ``text`` to ``path`` through a temporary file and an atomic rename.

    Raises:
        ConfigurationError: A different file already exists at ``path``
    """
    path = Path(path)
    data = text.encode("utf-8")
    if path.exists():
        if path.read_bytes() == data:
            logger.info("table %s already present with identical content", path)
            return path
        raise ConfigurationError(f"{path} exists with different content; tables are never overwritten")
    path.parent.mkdir(parents=True, exist_ok=True)
    temporary = path.with_name(path.name + ".tmp")
    try:
        with open(temporary, "wb") as handle:
            handle.write(data)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(temporary, path)
    except OSError as exc:
        raise ConfigurationError(f"cannot write {path}: {exc}") from exc
    finally:
        if temporary.exists():
            temporary.unlink()
    return path


def save_table(table, directory=None, path=None):
    """
    Persists a table.

    Args:
        table: CriticalValueTable
        directory: Table directory (the canonical file name is used)
        path: Explicit destination, overriding ``directory``

    Returns:
        Path: Where the table was written
    """
    if path is None:
        if directory is None:
            raise ConfigurationError("save_table needs a directory or a path")
        path = table_path(directory, table.spec)
    written = atomic_write(path, dumps(table.to_document()))
    logger.info("saved %s to %s", table.name, written)
    return written


def load_table(path):
    """
    Reads a table file.

    Raises:
        ConfigurationError: Missing, unreadable or incomplete table
    """
    path = Path(path)
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigurationError(f"table file {path} not found") from exc
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read table {path}: {exc}") from exc
    if not isinstance(document, dict):
        raise ConfigurationError(f"{path} is not a table document")
    return CriticalValueTable.from_document(document)


def build_instructions(spec):
    """The command that creates the table for ``spec``."""
    command = f"python sn_cli.py build-table --kind {spec.functional_id} --p {spec.p}"
    params = spec.param_dict
    if "b" in params:
        command += f" --b {params['b']:g}"
    if "H" in params:
        command += f" --H {params['H']}"
    if "sigma_half" in params:
        command += " --sigma-half " + ",".join(f"{value:g}" for row in params["sigma_half"] for value in row)
    return command


def find_table(directory, spec):
    """
    Looks up the stored table for ``spec``.

    Raises:
        ConfigurationError: No table yet; the message says how to build one
    """
    path = table_path(directory, spec)
    if not path.exists():
        raise ConfigurationError(
            f"no critical-value table {path.name} in {directory}; build it first with: {build_instructions(spec)}"
        )
    table = load_table(path)
    table.check_compatible(spec.functional_id, spec.p, spec.param_dict)
    return table


def list_tables(directory):
    """Names of the tables stored in ``directory``, sorted."""
    directory = Path(directory)
    if not directory.is_dir():
        return []
    return sorted(path.stem for path in directory.glob(f"*{TABLE_SUFFIX}"))
