"""Text and JSON formats: point sets, gadget metadata, combs, tours and TSPLIB import."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, TypeVar

import numpy as np
from pydantic import BaseModel, Field, ValidationError, model_validator

from app.combs import Comb
from app.errors import InvalidArgumentError
from app.instance import GadgetMeta, PointSet
from app.tsp_solvers import Tour

T = TypeVar("T", bound=BaseModel)


class CombModel(BaseModel):
    handle: list[int]
    teeth: list[list[int]]

    def to_comb(self) -> Comb:
        comb = Comb.of(self.handle, self.teeth)
        comb.validate()
        return comb


class TourModel(BaseModel):
    order: list[int]
    length: float = Field(ge=0)

    @model_validator(mode="after")
    def _permutation(self) -> "TourModel":
        if sorted(self.order) != list(range(len(self.order))):
            raise ValueError("order no es una permutacion de 0..n-1")
        return self


class GadgetMetaModel(BaseModel):
    k: int = Field(ge=4)
    outer_ids: list[int]
    inner_ids: list[int]
    gap_ids: list[int] = Field(min_length=2, max_length=2)
    scale: float = Field(default=1.0, gt=0)

    def to_meta(self) -> GadgetMeta:
        return GadgetMeta(
            k=self.k,
            outer_ids=tuple(self.outer_ids),
            inner_ids=tuple(self.inner_ids),
            gap_ids=(self.gap_ids[0], self.gap_ids[1]),
            scale=self.scale,
        )

    @classmethod
    def from_meta(cls, meta: GadgetMeta) -> "GadgetMetaModel":
        return cls(
            k=meta.k,
            outer_ids=list(meta.outer_ids),
            inner_ids=list(meta.inner_ids),
            gap_ids=list(meta.gap_ids),
            scale=meta.scale,
        )


def _read(path: Path) -> str:
    try:
        return path.read_text(encoding="utf-8")
    except OSError as e:
        raise OSError(f"No se pudo leer {path}: {e}") from e


def _write(path: Path, text: str) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        raise OSError(f"No se pudo escribir {path}: {e}") from e
    return path


def dump_json(data: Any) -> str:
    """Deterministic JSON text: sorted keys, fixed indentation, trailing newline."""
    return json.dumps(data, sort_keys=True, indent=2) + "\n"


def write_json(path: str | Path, data: Any) -> Path:
    return _write(Path(path), dump_json(data))


def load_model(path: str | Path, schema_model: type[T]) -> T:
    """Parse a JSON file and validate it against a pydantic model."""
    path = Path(path)
    raw = _read(path)
    try:
        return schema_model.model_validate(json.loads(raw))
    except (json.JSONDecodeError, ValidationError) as e:
        raise InvalidArgumentError(f"{path}: JSON invalido para {schema_model.__name__}: {e}") from e


# --- Point sets ---


def format_points(X: PointSet) -> str:
    lines = [f"{X.n} {X.dim}"]
    lines.extend(" ".join(repr(float(v)) for v in row) for row in X.points)
    return "\n".join(lines) + "\n"


def parse_points(text: str) -> PointSet:
    """First line "n d", then n lines of d coordinates."""
    rows = [line.split() for line in text.splitlines() if line.strip() and not line.lstrip().startswith("#")]
    if not rows:
        raise InvalidArgumentError("Archivo de puntos vacio.")
    try:
        n, d = int(rows[0][0]), int(rows[0][1])
        values = np.array([[float(v) for v in row] for row in rows[1:]], dtype=np.float64)
    except (IndexError, ValueError) as e:
        raise InvalidArgumentError(f"Formato de puntos invalido: {e}") from e
    if values.shape != (n, d):
        raise InvalidArgumentError(f"Se esperaban {n} filas de {d} coordenadas, llegaron {values.shape}.")
    return PointSet(values)


def save_points(X: PointSet, path: str | Path) -> Path:
    return _write(Path(path), format_points(X))


def load_points(path: str | Path) -> PointSet:
    return parse_points(_read(Path(path)))


def save_gadget_meta(meta: GadgetMeta, path: str | Path) -> Path:
    return write_json(path, GadgetMetaModel.from_meta(meta).model_dump())


def load_gadget_meta(path: str | Path) -> GadgetMeta:
    return load_model(path, GadgetMetaModel).to_meta()


def tour_model(tour: Tour) -> TourModel:
    return TourModel(order=list(tour.order), length=tour.length)


# --- TSPLIB ---


def parse_tsplib(text: str) -> PointSet:
    """EUC_2D instances: header lines, NODE_COORD_SECTION, EOF."""
    header: dict[str, str] = {}
    coords: list[tuple[float, float]] = []
    in_coords = False
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line == "EOF":
            break
        if line == "NODE_COORD_SECTION":
            in_coords = True
            continue
        if in_coords:
            parts = line.split()
            if len(parts) < 3:
                raise InvalidArgumentError(f"Linea de coordenadas invalida: {line!r}")
            coords.append((float(parts[1]), float(parts[2])))
            continue
        if ":" in line:
            key, value = line.split(":", 1)
            header[key.strip().upper()] = value.strip()
    kind = header.get("EDGE_WEIGHT_TYPE", "EUC_2D").upper()
    if kind != "EUC_2D":
        raise InvalidArgumentError(f"EDGE_WEIGHT_TYPE {kind} no soportado (solo EUC_2D).")
    if "DIMENSION" in header and int(header["DIMENSION"]) != len(coords):
        raise InvalidArgumentError(f"DIMENSION={header['DIMENSION']} pero hay {len(coords)} nodos.")
    if not coords:
        raise InvalidArgumentError("Archivo TSPLIB sin NODE_COORD_SECTION.")
    return PointSet(np.array(coords, dtype=np.float64))


def load_tsplib(path: str | Path) -> PointSet:
    return parse_tsplib(_read(Path(path)))
