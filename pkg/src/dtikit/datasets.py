"""Interaction dataset loading and caching.

CSV columns are named through a CsvSchema so files from different sources
load without rewriting. Rows whose SMILES fail to parse are either
skipped with their row number recorded (default) or abort the load when
strict. Parsed record lists round-trip through JSON-lines for caching.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .smiles import MAX_ATOMS, SmilesError, parse_smiles

log = logging.getLogger(__name__)

BINARY = "binary"
AFFINITY = "affinity"


class MissingColumn(KeyError):
    pass


class LabelParseError(ValueError):
    pass


@dataclass(frozen=True)
class InteractionRecord:
    drug_id: str
    protein_id: str
    smiles: str
    sequence: str
    label: float
    label_kind: str = BINARY


@dataclass
class CsvSchema:
    smiles_col: str = "smiles"
    sequence_col: str = "sequence"
    label_col: str = "label"
    drug_id_col: str | None = "drug_id"
    protein_id_col: str | None = "protein_id"
    label_kind: str = BINARY


@dataclass
class SkippedRow:
    row: int  # 1-based line number in the file, header included
    reason: str


@dataclass
class LoadResult:
    records: list[InteractionRecord] = field(default_factory=list)
    skipped: list[SkippedRow] = field(default_factory=list)


def _parse_label(raw: str, kind: str) -> float:
    try:
        value = float(raw)
    except (TypeError, ValueError):
        raise LabelParseError(f"label {raw!r} is not numeric") from None
    if kind == BINARY and value not in (0.0, 1.0):
        raise LabelParseError(f"binary label must be 0 or 1, got {raw!r}")
    return value


def load_interactions_detailed(
    path: str | Path,
    schema: CsvSchema | None = None,
    strict: bool = False,
    max_atoms: int = MAX_ATOMS,
) -> LoadResult:
    """Load interaction records from a CSV file.

    Every row's SMILES is parsed as a validation gate (oversized molecules
    are rejected here, not truncated downstream). Bad rows are returned in
    ``skipped`` unless ``strict``, in which case the first one raises.
    """
    schema = schema or CsvSchema()
    result = LoadResult()
    drug_ids: dict[str, str] = {}
    protein_ids: dict[str, str] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        needed = [schema.smiles_col, schema.sequence_col, schema.label_col]
        if schema.drug_id_col:
            needed.append(schema.drug_id_col)
        if schema.protein_id_col:
            needed.append(schema.protein_id_col)
        for col in needed:
            if col not in header:
                raise MissingColumn(f"column {col!r} not in {header}")
        for row in reader:
            line = reader.line_num
            smiles = (row[schema.smiles_col] or "").strip()
            sequence = (row[schema.sequence_col] or "").strip().upper()
            try:
                if not sequence:
                    raise LabelParseError("empty protein sequence")
                parse_smiles(smiles, max_atoms=max_atoms)
                label = _parse_label(row[schema.label_col], schema.label_kind)
            except (SmilesError, LabelParseError) as exc:
                if strict:
                    raise
                result.skipped.append(SkippedRow(row=line, reason=str(exc)))
                continue
            if schema.drug_id_col:
                drug_id = row[schema.drug_id_col].strip()
            else:
                drug_id = drug_ids.setdefault(smiles, f"d{len(drug_ids):04d}")
            if schema.protein_id_col:
                protein_id = row[schema.protein_id_col].strip()
            else:
                protein_id = protein_ids.setdefault(sequence, f"p{len(protein_ids):04d}")
            result.records.append(
                InteractionRecord(
                    drug_id=drug_id,
                    protein_id=protein_id,
                    smiles=smiles,
                    sequence=sequence,
                    label=label,
                    label_kind=schema.label_kind,
                )
            )
    for sk in result.skipped:
        log.warning("skipped row %d: %s", sk.row, sk.reason)
    return result


def load_interactions(
    path: str | Path,
    schema: CsvSchema | None = None,
    strict: bool = False,
    max_atoms: int = MAX_ATOMS,
) -> list[InteractionRecord]:
    return load_interactions_detailed(path, schema, strict, max_atoms).records


def records_to_jsonl(records: list[InteractionRecord], path: str | Path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(asdict(rec), sort_keys=True) + "\n")


def records_from_jsonl(path: str | Path) -> list[InteractionRecord]:
    records = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                records.append(InteractionRecord(**json.loads(line)))
    return records
