"""Readers and writers for the line-oriented data files.

Every file starts with ``#format:<name>:<version>`` followed by a CSV
header row and data rows. Floats are written with ``repr`` so that
reading a written file gives back identical objects.
"""

from __future__ import annotations

import csv
import io as _io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import genomic
from .errors import ParseError, ValidationError
from .likelihood import Epg
from .sample import (Contributor, FrequencyTable, Kit, KitAllele, KitLocus, NoiseModel, allele_sort_key,
                     parse_allele)

VERSION = 1
COPY_COLUMNS = tuple(f"p_{k}" for k in genomic.BASE_KINDS)
KIT_COLUMNS = ("locus", "dye", "repeat", "allele", "size", "xi_s", "xi_r", "xi_f") + COPY_COLUMNS + ("dropin_rate",)
FREQ_COLUMNS = ("locus", "allele", "count")
PROFILE_COLUMNS = ("contributor", "locus", "allele1", "allele2")
NOISE_COLUMNS = ("dye", "rfu", "prob")
EPG_COLUMNS = ("locus", "allele", "height")
HYPOTHESIS_COLUMNS = ("contributor", "status", "cells", "fit")


@dataclass(frozen=True)
class HypothesisEntry:
    """One contributor of a hypothesis: typed or untyped, with a cell count that is fixed or fitted."""

    contributor: str
    status: str
    cells: int
    free: bool = True

    def __post_init__(self):
        if self.status not in ("known", "untyped"):
            raise ValidationError("status must be 'known' or 'untyped'")
        if self.cells < 0:
            raise ValidationError("cells must be non-negative")


# ----------------------------------------------------------------------
# low-level helpers


def _num(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _rows(path, name: str, columns: Sequence[str]):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ParseError(f"cannot read file: {e}", path) from None
    lines = text.splitlines()
    if not lines:
        raise ParseError("empty file", path, 1)
    head = lines[0].strip()
    parts = head.split(":")
    if len(parts) != 3 or parts[0] != "#format":
        raise ParseError("first line must be '#format:<name>:<version>'", path, 1, 1)
    if parts[1] != name:
        raise ParseError(f"expected a {name} file, found {parts[1]}", path, 1, 1)
    if parts[2] != str(VERSION):
        raise ParseError(f"unsupported {name} version {parts[2]}", path, 1, 1)
    reader = csv.reader(_io.StringIO("\n".join(lines[1:])))
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != tuple(columns):
        raise ParseError(f"header must be {','.join(columns)}", path, 2, 1)
    for i, row in enumerate(reader, start=3):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(columns):
            raise ParseError(f"expected {len(columns)} fields, found {len(row)}", path, i, 1)
        yield i, [c.strip() for c in row]


def _parse(fn, value, path, line, col, what):
    try:
        return fn(value)
    except ParseError as e:
        raise ParseError(str(e), path, line, col) from None
    except (TypeError, ValueError):
        raise ParseError(f"bad {what} {value!r}", path, line, col) from None


def _int(v: str) -> int:
    f = float(v)
    if not f.is_integer():
        raise ValueError(v)
    return int(f)


def _write(path, name: str, columns: Sequence[str], rows: Iterable[Sequence]):
    buf = _io.StringIO()
    buf.write(f"#format:{name}:{VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow(r)
    if path is None:
        return buf.getvalue()
    Path(path).write_text(buf.getvalue())
    return None


# ----------------------------------------------------------------------
# kit


def load_kit(path) -> Kit:
    loci: dict[str, dict] = {}
    for line, row in _rows(path, "kit", KIT_COLUMNS):
        rec = dict(zip(KIT_COLUMNS, row))
        name = rec["locus"]
        if not name:
            raise ParseError("empty locus name", path, line, 1)
        allele = _parse(parse_allele, rec["allele"], path, line, 4, "allele")
        vals = {}
        for c in ("size", "xi_s", "xi_r", "xi_f", "dropin_rate") + COPY_COLUMNS:
            vals[c] = _parse(float, rec[c], path, line, KIT_COLUMNS.index(c) + 1, c)
        repeat = _parse(_int, rec["repeat"], path, line, 3, "repeat")
        shared = (rec["dye"], repeat, tuple(vals[c] for c in COPY_COLUMNS), vals["dropin_rate"])
        entry = loci.setdefault(name, {"shared": shared, "alleles": []})
        if entry["shared"] != shared:
            raise ParseError(f"locus {name}: dye, repeat, copy probabilities and drop-in rate must agree on every row",
                             path, line, 2)
        try:
            entry["alleles"].append(KitAllele(allele, vals["size"], vals["xi_s"], vals["xi_r"], vals["xi_f"]))
        except ValidationError as e:
            raise ValidationError(f"{path}: line {line}: {e}") from None
    out = []
    for name, entry in loci.items():
        dye, repeat, probs, rate = entry["shared"]
        out.append(KitLocus(name, dye, repeat, tuple(entry["alleles"]), tuple(zip(genomic.BASE_KINDS, probs)), rate))
    return Kit(tuple(out))


def write_kit(kit: Kit, path=None):
    rows = []
    for l in kit.loci:
        probs = dict(l.copy_prob)
        for a in l.alleles:
            rows.append([l.name, l.dye, l.repeat, a.name, _num(a.size), _num(a.xi_s), _num(a.xi_r), _num(a.xi_f)]
                        + [_num(probs[k]) for k in genomic.BASE_KINDS] + [_num(l.dropin_rate)])
    return _write(path, "kit", KIT_COLUMNS, rows)


# ----------------------------------------------------------------------
# frequencies


def load_frequencies(path, min_count: float = 5.0) -> FrequencyTable:
    raw: dict[str, dict[str, float]] = {}
    for line, row in _rows(path, "frequencies", FREQ_COLUMNS):
        locus, allele, count = row
        a = _parse(parse_allele, allele, path, line, 2, "allele")
        v = _parse(float, count, path, line, 3, "count")
        if v < 0:
            raise ParseError("count must be non-negative", path, line, 3)
        if a in raw.setdefault(locus, {}):
            raise ParseError(f"duplicate allele {a} at {locus}", path, line, 2)
        raw[locus][a] = v
    return FrequencyTable(raw, min_count)


def write_frequencies(freqs: FrequencyTable, path=None):
    rows = [[l, a, _num(v)] for l, t in freqs.raw.items() for a, v in t.items()]
    return _write(path, "frequencies", FREQ_COLUMNS, rows)


# ----------------------------------------------------------------------
# profiles


def load_profiles(path) -> dict[str, Contributor]:
    geno: dict[str, dict[str, tuple[str, str]]] = {}
    for line, row in _rows(path, "profiles", PROFILE_COLUMNS):
        cid, locus, a1, a2 = row
        g = (_parse(parse_allele, a1, path, line, 3, "allele"), _parse(parse_allele, a2, path, line, 4, "allele"))
        g = tuple(sorted(g, key=allele_sort_key))
        if locus in geno.setdefault(cid, {}):
            raise ParseError(f"duplicate locus {locus} for {cid}", path, line, 2)
        geno[cid][locus] = g
    return {cid: Contributor(cid, g) for cid, g in geno.items()}


def write_profiles(profiles: Mapping[str, Contributor], path=None):
    rows = [[cid, l, g[0], g[1]] for cid, c in profiles.items() for l, g in c.genotype.items()]
    return _write(path, "profiles", PROFILE_COLUMNS, rows)


# ----------------------------------------------------------------------
# noise


def load_noise(path, cutoff: int | None = 100) -> dict[str, NoiseModel]:
    """Per-dye noise pmfs; heights above ``cutoff`` RFU are dropped and the rest renormalised."""
    vals: dict[str, dict[int, float]] = {}
    for line, row in _rows(path, "noise", NOISE_COLUMNS):
        dye, rfu, prob = row
        r = _parse(_int, rfu, path, line, 2, "rfu")
        p = _parse(float, prob, path, line, 3, "prob")
        if r < 0 or p < 0:
            raise ParseError("rfu and prob must be non-negative", path, line, 2 if r < 0 else 3)
        vals.setdefault(dye, {})[r] = vals.get(dye, {}).get(r, 0.0) + p
    out = {}
    for dye, table in vals.items():
        arr = np.zeros(max(table) + 1)
        for r, p in table.items():
            arr[r] = p
        out[dye] = NoiseModel.from_values(arr, cutoff)
    return out


def write_noise(noise: Mapping[str, NoiseModel], path=None):
    rows = [[dye, r, _num(p)] for dye, m in noise.items() for r, p in enumerate(m.pmf)]
    return _write(path, "noise", NOISE_COLUMNS, rows)


# ----------------------------------------------------------------------
# electropherograms


def load_epg(path) -> Epg:
    """Peaks as listed; heights below the analytic threshold are kept and censored at analysis time."""
    peaks: dict[str, dict[str, int]] = {}
    for line, row in _rows(path, "epg", EPG_COLUMNS):
        locus, allele, height = row
        a = _parse(parse_allele, allele, path, line, 2, "allele")
        h = _parse(_int, height, path, line, 3, "height")
        if h <= 0:
            raise ParseError("height must be a positive integer", path, line, 3)
        if a in peaks.setdefault(locus, {}):
            raise ParseError(f"duplicate peak {locus} {a}", path, line, 2)
        peaks[locus][a] = h
    return Epg(peaks)


def write_epg(epg: Epg, path=None):
    rows = [[l, a, int(h)] for l, t in epg.peaks.items() for a, h in t.items()]
    return _write(path, "epg", EPG_COLUMNS, rows)


# ----------------------------------------------------------------------
# hypotheses


def load_hypothesis(path) -> list[HypothesisEntry]:
    out = []
    seen = set()
    for line, row in _rows(path, "hypothesis", HYPOTHESIS_COLUMNS):
        cid, status, cells, fit = row
        if status not in ("known", "untyped"):
            raise ParseError("status must be 'known' or 'untyped'", path, line, 2)
        n = _parse(_int, cells, path, line, 3, "cells")
        if n < 0:
            raise ParseError("cells must be non-negative", path, line, 3)
        if fit not in ("free", "fixed"):
            raise ParseError("fit must be 'free' or 'fixed'", path, line, 4)
        if cid in seen:
            raise ParseError(f"duplicate contributor {cid}", path, line, 1)
        seen.add(cid)
        out.append(HypothesisEntry(cid, status, n, fit == "free"))
    return out


def write_hypothesis(entries: Sequence[HypothesisEntry], path=None):
    rows = [[e.contributor, e.status, e.cells, "free" if e.free else "fixed"] for e in entries]
    return _write(path, "hypothesis", HYPOTHESIS_COLUMNS, rows)


def contributors_from(entries: Sequence[HypothesisEntry], profiles: Mapping[str, Contributor]) -> list[Contributor]:
    """Contributors of a hypothesis, with genotypes of known entries taken from ``profiles``."""
    out = []
    for e in entries:
        if e.status == "known":
            if e.contributor not in profiles:
                raise ValidationError(f"known contributor {e.contributor} missing from profiles")
            out.append(Contributor(e.contributor, profiles[e.contributor].genotype, e.cells))
        else:
            out.append(Contributor(e.contributor, None, e.cells))
    return out
