"""Point-cloud file parsing utilities."""

from __future__ import annotations

import polars as pl

from sdcpse._constants import CONVERGENCE_SCHEMA
from sdcpse._errors import PointCloudFormatError

_POLARS_TYPES = {"str": pl.Utf8, "int": pl.Int64, "float": pl.Float64}

COORDINATE_COLUMNS = ("x", "y", "z")
NORMAL_COLUMNS = ("nx", "ny", "nz")


def _expected_headers(dim: int) -> dict[tuple[str, ...], tuple[bool, bool]]:
    """Accepted headers for `dim`, mapped to (has normals, has labels)."""
    coords = COORDINATE_COLUMNS[:dim]
    normals = NORMAL_COLUMNS[:dim]
    return {
        coords + normals: (True, False),
        coords + normals + ("label",): (True, True),
        coords: (False, False),
        coords + ("label",): (False, True),
    }


def point_cloud_columns(header: list[str]) -> tuple[int, bool, bool]:
    """
    Check a point-cloud CSV header.

    Parameters
    ----------
    header
        Column names in file order.

    Returns
    -------
    tuple[int, bool, bool]
        Embedding dimension, whether normal columns are present and whether a label column is.
    """
    columns = tuple(name.strip() for name in header)
    for dim in (3, 2):
        layout = _expected_headers(dim).get(columns)
        if layout is not None:
            return dim, *layout
    raise PointCloudFormatError(
        f"unrecognized header {','.join(columns)!r}; expected x,y[,z],nx,ny[,nz][,label]",
        line=1,
    )


def parse_point_cloud_csv(text: str) -> pl.DataFrame:
    """
    Parse point-cloud CSV text into a DataFrame.

    Parameters
    ----------
    text
        File contents with header `x,y[,z],nx,ny[,nz][,label]` (normal columns optional).

    Returns
    -------
    pl.DataFrame
        One Float64 column per coordinate and normal component, plus a Utf8 `label` column if the
        file has one.

    Raises
    ------
    PointCloudFormatError
        For an unknown header, rows with the wrong number of fields or values that are not
        numbers. The message names the number of bad rows and the first offending line.
    """
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise PointCloudFormatError("point-cloud file is empty", line=1)

    header = [name.strip() for name in lines[0].split(",")]
    point_cloud_columns(header)
    numeric = [name for name in header if name != "label"]

    columns: dict[str, list] = {name: [] for name in header}
    bad_lines = []
    reason = ""
    for number, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = [value.strip() for value in line.split(",")]
        if len(fields) != len(header):
            bad_lines.append(number)
            reason = reason or f"expected {len(header)} fields, found {len(fields)}"
            continue
        record = dict(zip(header, fields))
        try:
            values = {name: float(record[name]) for name in numeric}
        except ValueError:
            bad_lines.append(number)
            reason = reason or "non-numeric value"
            continue
        for name in numeric:
            columns[name].append(values[name])
        if "label" in record:
            columns["label"].append(record["label"])

    if bad_lines:
        raise PointCloudFormatError(
            f"{len(bad_lines)} malformed row(s); first at line {bad_lines[0]} ({reason})",
            line=bad_lines[0],
        )

    schema = {name: (pl.Utf8 if name == "label" else pl.Float64) for name in header}
    return pl.DataFrame(columns, schema=schema)


def parse_ply(text: str) -> pl.DataFrame:
    """
    Parse the vertex element of an ASCII PLY file.

    Returns
    -------
    pl.DataFrame
        Columns `x`, `y`, `z` and, when the file declares them, `nx`, `ny`, `nz`.
    """
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise PointCloudFormatError("not a PLY file (missing 'ply' magic line)", line=1)

    elements: list[tuple[str, int, list[str]]] = []
    body_start = None
    for number, line in enumerate(lines[1:], start=2):
        tokens = line.split()
        if not tokens or tokens[0] in ("comment", "obj_info"):
            continue
        if tokens[0] == "format":
            if len(tokens) < 2 or tokens[1] != "ascii":
                raise PointCloudFormatError(
                    f"only ASCII PLY is supported, got {' '.join(tokens[1:])!r}", line=number
                )
        elif tokens[0] == "element":
            elements.append((tokens[1], int(tokens[2]), []))
        elif tokens[0] == "property":
            if not elements:
                raise PointCloudFormatError("property before any element", line=number)
            elements[-1][2].append(tokens[-1])
        elif tokens[0] == "end_header":
            body_start = number  # 1-based number of the header's last line
            break
    if body_start is None:
        raise PointCloudFormatError("PLY header has no end_header line")

    skip = 0
    for name, count, properties in elements:
        if name == "vertex":
            break
        skip += count
    else:
        raise PointCloudFormatError("PLY file has no vertex element")

    missing = [c for c in COORDINATE_COLUMNS if c not in properties]
    if missing:
        raise PointCloudFormatError(f"PLY vertex element lacks properties {missing}")
    wanted = list(COORDINATE_COLUMNS)
    if all(c in properties for c in NORMAL_COLUMNS):
        wanted += list(NORMAL_COLUMNS)
    positions = [properties.index(c) for c in wanted]

    columns: dict[str, list[float]] = {name: [] for name in wanted}
    first = body_start + skip  # 0-based index of the first vertex line
    for offset in range(count):
        number = first + offset + 1
        if first + offset >= len(lines):
            raise PointCloudFormatError(
                f"PLY file ends after {offset} of {count} vertices", line=number
            )
        tokens = lines[first + offset].split()
        if len(tokens) < len(properties):
            raise PointCloudFormatError(
                f"expected {len(properties)} vertex values, found {len(tokens)}", line=number
            )
        try:
            for name, index in zip(wanted, positions):
                columns[name].append(float(tokens[index]))
        except ValueError as exc:
            raise PointCloudFormatError(f"non-numeric vertex value: {exc}", line=number) from exc

    return pl.DataFrame(columns, schema={name: pl.Float64 for name in wanted})


def results_schema() -> dict[str, pl.DataType]:
    """Polars types of the convergence-record columns, in output order."""
    return {name: _POLARS_TYPES[kind] for name, kind in CONVERGENCE_SCHEMA.items()}


def _empty_results_dataframe() -> pl.DataFrame:
    """Create an empty DataFrame with the convergence-record schema."""
    return pl.DataFrame(schema=results_schema())


def results_dataframe(rows: list[dict]) -> pl.DataFrame:
    """Convergence rows as a DataFrame with the declared column types and order."""
    if not rows:
        return _empty_results_dataframe()
    return pl.DataFrame(rows, schema=results_schema())
