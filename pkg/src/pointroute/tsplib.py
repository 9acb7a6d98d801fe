"""TSPLIB file I/O and the rounded-distance length convention.

Published TSPLIB optima (berlin52 = 7542, ...) hold under EUC_2D's
nearest-integer edge lengths, so gap reporting against those optima must use
:func:`tsplib_tour_length` on the original coordinates, never the continuous
length.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import ParseError, UnsupportedFormatError
from .instance import Instance, validate_tour


@dataclass
class TsplibMeta:
    name: str
    dimension: int
    edge_weight_type: str = "EUC_2D"
    comment: Optional[str] = None


_KEYWORDS = {"NAME", "TYPE", "COMMENT", "DIMENSION", "EDGE_WEIGHT_TYPE",
             "EDGE_WEIGHT_FORMAT", "NODE_COORD_TYPE", "DISPLAY_DATA_TYPE"}


def _split_keyword(line: str) -> Optional[Tuple[str, str]]:
    if ":" in line:
        key, _, value = line.partition(":")
        return key.strip().upper(), value.strip()
    head = line.split(None, 1)
    if head and head[0].upper() in _KEYWORDS:
        rest = head[1] if len(head) > 1 else ""
        return head[0].upper(), rest.strip()
    return None


def parse_tsplib(text: str) -> Tuple[Instance, TsplibMeta]:
    """Parse a TSPLIB .tsp file with a NODE_COORD_SECTION.

    Whitespace- and keyword-order-tolerant. Coordinates stay in the original
    scale; 1-based node ids are mapped to 0-based row order. Only EUC_2D is
    accepted: silently treating a GEO or ATT instance as Euclidean would
    corrupt every reported gap.
    """
    fields: dict[str, str] = {}
    coords: list[Tuple[float, float]] = []
    in_coords = False
    saw_eof = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.upper() == "EOF":
            saw_eof = True
            break
        if in_coords:
            parts = line.split()
            if len(parts) != 3:
                kv = _split_keyword(line)
                if kv is not None or line.upper().endswith("_SECTION"):
                    in_coords = False
                else:
                    raise ParseError(f"expected 'index x y', got {line!r}", line=lineno)
            else:
                try:
                    coords.append((float(parts[1]), float(parts[2])))
                except ValueError:
                    raise ParseError(f"bad coordinate line {line!r}", line=lineno) from None
                continue
        if line.upper().startswith("NODE_COORD_SECTION"):
            in_coords = True
            continue
        if line.upper().endswith("_SECTION"):
            raise UnsupportedFormatError(f"unsupported section {line!r} (only NODE_COORD_SECTION)")
        kv = _split_keyword(line)
        if kv is not None:
            fields[kv[0]] = kv[1]

    if "DIMENSION" not in fields:
        raise ParseError("missing DIMENSION keyword")
    try:
        dimension = int(fields["DIMENSION"])
    except ValueError:
        raise ParseError(f"DIMENSION is not an integer: {fields['DIMENSION']!r}") from None

    ewt = fields.get("EDGE_WEIGHT_TYPE", "").upper()
    if ewt != "EUC_2D":
        raise UnsupportedFormatError(
            f"EDGE_WEIGHT_TYPE {ewt or '<missing>'} not supported; only EUC_2D"
        )
    if not coords:
        raise ParseError("no NODE_COORD_SECTION found")
    if len(coords) != dimension:
        raise ParseError(f"DIMENSION is {dimension} but {len(coords)} coordinate lines parsed")
    if not saw_eof:
        warnings.warn("TSPLIB file has no EOF terminator", stacklevel=2)

    name = fields.get("NAME", "unnamed")
    meta = TsplibMeta(name=name, dimension=dimension,
                      edge_weight_type="EUC_2D", comment=fields.get("COMMENT"))
    return Instance(coords=np.asarray(coords, dtype=np.float64), name=name), meta


def rounded_distance(a: Sequence[float], b: Sequence[float]) -> int:
    """TSPLIB EUC_2D edge weight: nearest integer, halves away from zero."""
    d = float(np.hypot(a[0] - b[0], a[1] - b[1]))
    return int(np.floor(d + 0.5))


def tsplib_tour_length(instance: Instance, order: Sequence[int]) -> int:
    """Closed-tour length under the nearest-integer convention."""
    validate_tour(instance, order)
    pts = instance.coords[np.asarray(order, dtype=np.int64)]
    diff = pts - np.roll(pts, -1, axis=0)
    d = np.hypot(diff[:, 0], diff[:, 1])
    return int(np.floor(d + 0.5).astype(np.int64).sum())


def write_tour(meta: TsplibMeta, order: Sequence[int]) -> str:
    """TSPLIB .tour text: 1-based indices, one per line, terminated by -1."""
    lines = [
        f"NAME: {meta.name}.tour",
        "TYPE: TOUR",
        f"DIMENSION: {meta.dimension}",
        "TOUR_SECTION",
    ]
    lines.extend(str(int(i) + 1) for i in order)
    lines.append("-1")
    lines.append("EOF")
    return "\n".join(lines) + "\n"


def parse_tour(text: str) -> list[int]:
    """Read a .tour file back into a 0-based order list."""
    order: list[int] = []
    in_section = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.upper().startswith("TOUR_SECTION"):
            in_section = True
            continue
        if not in_section:
            continue
        for tok in line.split():
            if tok == "-1" or tok.upper() == "EOF":
                return order
            try:
                order.append(int(tok) - 1)
            except ValueError:
                raise ParseError(f"bad tour entry {tok!r}", line=lineno) from None
    if not order:
        raise ParseError("no TOUR_SECTION found")
    warnings.warn("tour file has no -1 terminator", stacklevel=2)
    return order
