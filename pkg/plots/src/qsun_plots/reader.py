"""Versioned CSV loading for the harness output bundle.

The plot layer talks to the simulation side only through these files, so
the expected schemas are pinned here independently; any drift in the
producer shows up as a SchemaMismatch instead of a silently wrong figure.
"""

import csv
from pathlib import Path

__all__ = ["CSV_VERSION", "SCHEMAS", "SchemaMismatch", "EmptyData", "load_rows"]

CSV_VERSION = "qsun-csv v1"

SCHEMAS = {
    "patch_fractions": ("scale", "k", "count", "fraction", "se"),
    "genealogy_events": ("step", "A_holds", "G_holds", "new_patches"),
    "antires": ("scale", "hit_fraction", "se"),
    "localization": ("realization", "sigma", "ipr", "ell", "tail_overlap"),
    "perturb_check": ("patch_id", "series", "k", "coeff_norm", "bound", "ok"),
    "laplace": ("phi_id", "n", "alpha", "estimate", "se", "reference"),
    "dos": ("interval", "mean", "se"),
    "rstat": ("n", "alpha", "mean", "se"),
    "probes_factorization": ("m", "k", "joint", "product", "mc_err"),
    "probes_lclt": ("n", "scaled_sup"),
    "probes_gaps": ("realization", "dmin", "dplus"),
    "dissolve_trace": (
        "scale", "patch", "size", "width", "v", "origin", "A_holds", "G_holds",
    ),
}


class SchemaMismatch(ValueError):
    """The file's version line or column set is not the pinned schema."""


class EmptyData(ValueError):
    """No data rows to draw."""


def _read_one(path: Path) -> tuple[str, list[dict]]:
    with open(path, newline="") as fh:
        head = fh.readline().strip()
        prefix = f"# {CSV_VERSION} schema="
        if not head.startswith(prefix):
            raise SchemaMismatch(f"{path}: missing '{CSV_VERSION}' header line")
        schema = head[len(prefix):]
        if schema not in SCHEMAS:
            raise SchemaMismatch(f"{path}: unknown schema '{schema}'")
        reader = csv.DictReader(fh)
        found = tuple(reader.fieldnames or ())
        expected = SCHEMAS[schema]
        for col in expected:
            if col not in found:
                raise SchemaMismatch(f"{path}: schema '{schema}' missing column '{col}'")
        for col in found:
            if col not in expected:
                raise SchemaMismatch(f"{path}: schema '{schema}' has unexpected column '{col}'")
        return schema, list(reader)


def load_rows(paths, kind: str | None = None) -> tuple[str, list[dict]]:
    """Read one or more same-schema CSVs, concatenated in argument order.

    `kind`, when given, must agree with every file's header; otherwise the
    schema is inferred from the first file.
    """
    paths = [Path(p) for p in paths]
    if not paths:
        raise EmptyData("no input files")
    rows = []
    schema = kind
    for p in paths:
        got, part = _read_one(p)
        if schema is None:
            schema = got
        elif got != schema:
            raise SchemaMismatch(f"{p}: schema '{got}' where '{schema}' was expected")
        rows.extend(part)
    if not rows:
        raise EmptyData(f"{paths[0]}: no data rows for schema '{schema}'")
    return schema, rows
