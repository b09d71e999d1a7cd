"""CSV readers/writers shared by the command-line tools.

Profile files carry one row per layer under the header
``id,lat,lon,depth_top_m,thickness_m,vs_mps``; rows of a profile are
contiguous and depth-sorted.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .core import LayeredProfile, ProfileError, Provenance

PROFILE_HEADER = ["id", "lat", "lon", "depth_top_m", "thickness_m", "vs_mps"]
SITE_HEADER = ["id", "lat", "lon", "vs30_mps"]


class DataFormatError(ValueError):
    """Malformed input file."""


def fmt6(x) -> str:
    """Six significant digits, the precision used for every CSV float."""
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return f"{float(x):.6g}"


def _opt_float(text: str) -> float | None:
    text = text.strip()
    return None if text == "" else float(text)


def read_profiles(path: str | Path, provenance=Provenance.MEASURED) -> list[LayeredProfile]:
    """Read a layered-profile CSV. Profiles keep file order."""
    groups: dict[str, dict] = {}
    order: list[str] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != PROFILE_HEADER:
            raise DataFormatError(f"{path}: expected header {','.join(PROFILE_HEADER)}")
        last_id = None
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(PROFILE_HEADER):
                raise DataFormatError(f"{path}:{lineno}: expected 6 fields, got {len(row)}")
            pid = row[0].strip()
            try:
                lat, lon = _opt_float(row[1]), _opt_float(row[2])
                top, h, vs = float(row[3]), float(row[4]), float(row[5])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
            if pid not in groups:
                groups[pid] = {"lat": lat, "lon": lon, "top": [], "h": [], "vs": []}
                order.append(pid)
            elif pid != last_id:
                raise DataFormatError(f"{path}:{lineno}: rows of profile {pid!r} are not contiguous")
            g = groups[pid]
            expected_top = sum(g["h"])
            if not math.isclose(top, expected_top, rel_tol=1e-5, abs_tol=1e-3):
                raise DataFormatError(
                    f"{path}:{lineno}: profile {pid!r} layer top {top} m, expected {expected_top:.6g} m"
                )
            g["top"].append(top)
            g["h"].append(h)
            g["vs"].append(vs)
            last_id = pid
    out = []
    for pid in order:
        g = groups[pid]
        try:
            out.append(
                LayeredProfile(
                    thickness=g["h"], vs=g["vs"], id=pid, lat=g["lat"], lon=g["lon"], provenance=provenance
                )
            )
        except ProfileError as exc:
            raise DataFormatError(f"{path}: {exc}") from exc
    return out


def write_profiles(profiles, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PROFILE_HEADER)
        for p in profiles:
            for top, h, vs in zip(p.top_depth, p.thickness, p.vs):
                w.writerow([p.id, fmt6(p.lat), fmt6(p.lon), fmt6(top), fmt6(h), fmt6(vs)])


def read_sites(path: str | Path) -> dict[str, dict]:
    """Site table ``id,lat,lon,vs30_mps`` (extra columns are kept as floats)."""
    out = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not set(SITE_HEADER) <= set(reader.fieldnames):
            raise DataFormatError(f"{path}: site table needs columns {','.join(SITE_HEADER)}")
        for row in reader:
            rec = {}
            for k, v in row.items():
                if k == "id":
                    continue
                try:
                    rec[k] = _opt_float(v)
                except ValueError as exc:
                    raise DataFormatError(f"{path}: {exc}") from exc
            out[row["id"].strip()] = rec
    return out


def attach_sites(profiles, sites: dict[str, dict]) -> list[LayeredProfile]:
    """Copy Vs30 (and missing coordinates) from a site table onto profiles."""
    out = []
    for p in profiles:
        s = sites.get(p.id)
        if s is None:
            out.append(p)
            continue
        out.append(
            p.replace(
                vs30=s.get("vs30_mps", p.vs30),
                lat=p.lat if p.lat is not None else s.get("lat"),
                lon=p.lon if p.lon is not None else s.get("lon"),
            )
        )
    return out


def write_rows(path: str | Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt6(v) if isinstance(v, (float, np.floating)) else v for v in row])
