"""Dataset manifests: line-oriented UTF-8 text mapping domains to case files.

Grammar (one directive per line, ``#`` starts a comment, blank lines ignored)::

    [domain]                      begins a new domain block
    id = <int>                    required, unique within the manifest
    name = <text>                 required
    classes = <int>               required, >= 1
    modality = CT|MR|UNKNOWN      optional, default UNKNOWN
    median_spacing = <sx> <sy> <sz>   optional, written by the normalize stage
    case = <volume path> <label path> paths relative to the manifest file,
                                      whitespace-separated (no spaces in paths)

Cases are sorted lexicographically by volume path after parsing, so case
order never depends on file layout.  See docs/formats.md for the full rules.
"""

from __future__ import annotations

from pathlib import Path

from .errors import DuplicateDomainId, EmptyDomain, ParseError
from .volume import MODALITIES, DomainSpec


def load_manifest(path: str | Path) -> list[DomainSpec]:
    """Parse a manifest file into DomainSpecs (sorted by domain_id)."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    base = path.parent

    domains: list[DomainSpec] = []
    fields: dict | None = None
    cases: list[tuple[str, str]] = []
    open_line = 0

    def close_block(line_no: int):
        if fields is None:
            return
        for key in ("id", "name", "classes"):
            if key not in fields:
                raise ParseError(f"domain block is missing '{key}'", open_line)
        if not cases:
            raise EmptyDomain(
                f"domain '{fields['name']}' (line {open_line}) lists no cases")
        ordered = sorted(cases, key=lambda pair: pair[0])
        domains.append(DomainSpec(
            domain_id=fields["id"],
            name=fields["name"],
            class_count=fields["classes"],
            modality=fields.get("modality", "UNKNOWN"),
            median_spacing=fields.get("median_spacing"),
            cases=[(base / v, base / l) for v, l in ordered],
        ))

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line == "[domain]":
            close_block(line_no)
            fields, cases, open_line = {}, [], line_no
            continue
        if line.startswith("["):
            raise ParseError(f"unknown section {line!r}", line_no)
        if fields is None:
            raise ParseError("directive before any [domain] section", line_no)
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {line!r}", line_no)
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key == "id":
            fields["id"] = _parse_int(value, "id", line_no, minimum=0)
        elif key == "name":
            if not value:
                raise ParseError("empty domain name", line_no)
            fields["name"] = value
        elif key == "classes":
            fields["classes"] = _parse_int(value, "classes", line_no, minimum=1)
        elif key == "modality":
            if value not in MODALITIES:
                raise ParseError(
                    f"modality must be one of {'/'.join(MODALITIES)}", line_no)
            fields["modality"] = value
        elif key == "median_spacing":
            parts = value.split()
            if len(parts) != 3:
                raise ParseError("median_spacing needs three values", line_no)
            try:
                spacing = tuple(float(p) for p in parts)
            except ValueError:
                raise ParseError(f"bad median_spacing {value!r}", line_no) from None
            if any(s <= 0 for s in spacing):
                raise ParseError("median_spacing must be positive", line_no)
            fields["median_spacing"] = spacing
        elif key == "case":
            parts = value.split()
            if len(parts) != 2:
                raise ParseError(
                    "case needs exactly two paths (volume, label)", line_no)
            cases.append((parts[0], parts[1]))
        else:
            raise ParseError(f"unknown key {key!r}", line_no)

    close_block(len(text.splitlines()) + 1)

    seen: dict[int, str] = {}
    for dom in domains:
        if dom.domain_id in seen:
            raise DuplicateDomainId(
                f"domain id {dom.domain_id} used by both "
                f"'{seen[dom.domain_id]}' and '{dom.name}'")
        seen[dom.domain_id] = dom.name
    return sorted(domains, key=lambda d: d.domain_id)


def _parse_int(value: str, key: str, line_no: int, minimum: int) -> int:
    try:
        parsed = int(value)
    except ValueError:
        raise ParseError(f"{key} must be an integer, got {value!r}", line_no) from None
    if parsed < minimum:
        raise ParseError(f"{key} must be >= {minimum}", line_no)
    return parsed


def write_manifest(domains: list[DomainSpec], path: str | Path) -> None:
    """Emit a manifest; case paths are written relative to the manifest dir."""
    path = Path(path)
    base = path.parent.resolve()
    lines: list[str] = []
    for dom in sorted(domains, key=lambda d: d.domain_id):
        lines.append("[domain]")
        lines.append(f"id = {dom.domain_id}")
        lines.append(f"name = {dom.name}")
        lines.append(f"classes = {dom.class_count}")
        lines.append(f"modality = {dom.modality}")
        if dom.median_spacing is not None:
            sx, sy, sz = dom.median_spacing
            lines.append(f"median_spacing = {sx:g} {sy:g} {sz:g}")
        for vol_path, lab_path in dom.cases:
            v = _relative(vol_path, base)
            l = _relative(lab_path, base)
            lines.append(f"case = {v} {l}")
        lines.append("")
    path.write_text("\n".join(lines), encoding="utf-8")


def _relative(p: Path, base: Path) -> str:
    try:
        return p.resolve().relative_to(base).as_posix()
    except ValueError:
        return p.resolve().as_posix()
