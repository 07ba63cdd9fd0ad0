"""
Analysis reports.

Every CLI command produces one AnalysisReport, serialized as canonical JSON
so identical inputs, flags and seeds give byte-identical output. Timings
are only included on request.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from sninference import __version__
from sninference.errors import DomainError
from sninference.tables import dumps


def jsonable(value):
    """Converts numpy values, tuples and non-finite floats into JSON-ready data."""
    if isinstance(value, dict):
        return {str(key): jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(item) for item in value]
    if isinstance(value, np.ndarray):
        return jsonable(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    return value


@dataclass
class AnalysisReport:
    """
    Structured outcome of one command.

    Attributes:
        command: Subcommand name
        arguments: Echo of the effective options (including the seed)
        input: Data provenance (path, sha256, n, d) or None
        results: Statistics, intervals and per-row values
        pvalues: Named p-values, each in [0, 1]
        provenance: Table or bootstrap provenance
        warnings: Skipped breaks, clipped atoms, discarded draws
        timings: Seconds per phase, only when requested
    """

    command: str
    arguments: dict = field(default_factory=dict)
    input: dict = None
    results: dict = field(default_factory=dict)
    pvalues: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    timings: dict = None

    def add_pvalue(self, name, value):
        value = float(value)
        if not 0.0 <= value <= 1.0:
            raise DomainError(f"p-value {name} = {value} outside [0, 1]")
        self.pvalues[name] = value

    def warn(self, *messages):
        self.warnings.extend(str(message) for message in messages)

    def to_document(self):
        document = {
            "command": self.command,
            "version": __version__,
            "arguments": self.arguments,
            "input": self.input,
            "results": self.results,
            "pvalues": self.pvalues,
            "provenance": self.provenance,
            "warnings": self.warnings,
        }
        if self.timings is not None:
            document["timings"] = self.timings
        return jsonable(document)

    def to_json(self):
        return dumps(self.to_document())
