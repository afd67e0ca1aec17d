"""Tabulate RTT and identification results as aligned text or CSV."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

CSV_HEADER = ("kind", "setting", "value", "samples")


@dataclass(frozen=True)
class Row:
    kind: str  # "rtt_ms" or "identification"
    setting: str
    value: float
    samples: int


def setting_label(k: int) -> str:
    if k == 0:
        return "Direct (0 relays)"
    return "1 relay" if k == 1 else f"{k} relays"


def report(rtt_by_setting: Mapping[int, Sequence[float]] | None = None,
           identification: Mapping[str, tuple[float, int]] | None = None) -> list[Row]:
    """Rows for mean RTT (ms) per relay count, then identification per scenario.

    ``rtt_by_setting`` maps k to RTT samples in seconds; ``identification``
    maps a scenario label to (probability, trials), trials 0 meaning exact.
    """
    rows = []
    for k in sorted(rtt_by_setting or {}):
        samples = list(rtt_by_setting[k])
        mean = math.fsum(samples) / len(samples) * 1000 if samples else float("nan")
        rows.append(Row("rtt_ms", setting_label(k), mean, len(samples)))
    for label, (p, n) in (identification or {}).items():
        rows.append(Row("identification", label, p, n))
    return rows


def to_text(rows: Sequence[Row]) -> str:
    lines = []
    rtt = [r for r in rows if r.kind == "rtt_ms"]
    ident = [r for r in rows if r.kind == "identification"]
    if rtt:
        width = max(len(r.setting) for r in rtt)
        lines.append(f"{'relay setting':<{width}}  mean RTT (ms)  queries")
        lines += [f"{r.setting:<{width}}  {r.value:13.3f}  {r.samples:7d}" for r in rtt]
    if ident:
        if lines:
            lines.append("")
        width = max(len(r.setting) for r in ident)
        lines.append(f"{'scenario':<{width}}  P(identified)  trials")
        lines += [f"{r.setting:<{width}}  {r.value:13.6f}  {'exact' if r.samples == 0 else r.samples:>6}"
                  for r in ident]
    return "\n".join(lines) + ("\n" if lines else "")


def to_csv(rows: Sequence[Row]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow((r.kind, r.setting, repr(float(r.value)), r.samples))
    return buf.getvalue()


def parse_csv(text: str) -> list[Row]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None:
        return []
    if tuple(header) != CSV_HEADER:
        raise ValueError(f"unexpected CSV header {header}")
    return [Row(kind, setting, float(value), int(samples)) for kind, setting, value, samples in reader]
