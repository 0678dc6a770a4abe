"""Report assembly: raw-unit maximizer boxes, JSON documents, SVG plots.

Reports are deterministic given identical inputs: everything time-dependent
lives in the single "timing" field, so two runs differ at most there.
Before emission every maximizer box is re-normalized and checked to still
meet the certification set.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from .errors import SchemaMismatch
from .geometry import box_meets_certset
from .modelfile import denormalize_box, normalize_box
from .results import CertResult
from .types import (
    Box,
    CertificationSet,
    FeatureSpace,
    Interval,
)

REPORT_FORMAT = "devcert-report/1"


def file_digest(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()[:16]


def _finite(x: float):
    if x == math.inf:
        return "inf"
    if x == -math.inf:
        return "-inf"
    return x


def box_doc(space: FeatureSpace, box: Box) -> dict:
    """Raw-unit, name-keyed rendering of a box."""
    out = {}
    for f, comp in zip(space.features, box.components):
        if isinstance(comp, Interval):
            out[f.name] = {"lo": _finite(comp.lo), "hi": _finite(comp.hi)}
        else:
            out[f.name] = {"categories": sorted(comp.members)}
    return out


def recheck_membership(space: FeatureSpace, raw_box: Box,
                       certset: CertificationSet) -> None:
    """Re-normalize an outgoing box and confirm it still meets the certset.

    Denormalize/normalize round trips can wobble by an ulp; a tiny inflation
    absorbs that without accepting genuinely outside boxes.
    """
    box = normalize_box(space, raw_box)
    comps = []
    for comp in box.components:
        if isinstance(comp, Interval):
            pad = 1e-9 * max(1.0, abs(comp.lo), abs(comp.hi))
            comps.append(Interval(comp.lo - pad, comp.hi + pad))
        else:
            comps.append(comp)
    if not box_meets_certset(Box(tuple(comps)), certset).nonempty:
        raise SchemaMismatch(
            "maximizer box no longer meets the certification set after "
            "unit round trip")


def cert_report(space: FeatureSpace, result: CertResult, *,
                certset: CertificationSet,
                certset_spec: str,
                inputs: dict,
                scale: str = "prob",
                reference_space: FeatureSpace | None = None) -> dict:
    """Assemble the JSON-ready report document for a certification run."""
    maximizers = []
    for m in result.maximizers:
        raw = denormalize_box(space, m.box)
        recheck_membership(space, raw, certset)
        maximizers.append({
            "box": box_doc(space, raw),
            "value": m.value,
            "witness_ball_ids": sorted(m.witness_ball_ids),
            "detail": _json_safe(m.detail),
        })
    per_leaf = []
    for b in result.per_reference_leaf:
        entry = {
            "leaf": b.leaf_index,
            "reference_value": b.reference_value,
            "deviation": b.deviation,
            "model_min": _finite(b.model_min) if b.model_min is not None else None,
            "model_max": _finite(b.model_max) if b.model_max is not None else None,
        }
        if b.maximizer is not None:
            entry["maximizer"] = box_doc(space, denormalize_box(space, b.maximizer))
        per_leaf.append(entry)
    contribs = []
    for c in result.contributions:
        f = space.features[c.feature]
        ext = denormalize_box(
            space, _component_box(space, c.feature, c.extremizer))
        contribs.append({
            "feature": f.name,
            "contribution": c.contribution,
            "extremizer": box_doc(space, ext)[f.name],
        })
    stats = {k: v for k, v in sorted(result.stats.items())
             if k != "wall_time_s"}
    doc = {
        "format": REPORT_FORMAT,
        "inputs": inputs,
        "certification_set": certset_spec,
        "scale": scale,
        "deviation": {
            "lower": result.lower,
            "upper": _finite(result.upper),
            "exact": result.exact,
        },
        "maximizers": maximizers,
        "per_reference_leaf": per_leaf,
        "feature_contributions": contribs,
        "search_stats": stats,
        "trace": [{"step": s.step, "lower": s.lower, "upper": _finite(s.upper)}
                  for s in result.trace],
        "timing": {
            "generated_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
            "wall_time_s": result.stats.get("wall_time_s"),
        },
    }
    return doc


def _component_box(space: FeatureSpace, feature: int, comp) -> Box:
    """Lift a single extremizing component into a full box for rendering."""
    from .types import full_box

    comps = list(full_box(space).components)
    comps[feature] = comp
    return Box(tuple(comps))


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (frozenset, set)):
        return sorted(obj)
    if isinstance(obj, float) and math.isinf(obj):
        return _finite(obj)
    return obj


def dumps_report(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=False) + "\n"


# ---------------------------------------------------------------------------
# SVG sweep plot
# ---------------------------------------------------------------------------

def sweep_svg(rows: list[tuple[float, float, float]], title: str = "") -> str:
    """Standalone SVG line plot of (radius, lower, upper) with the data table
    embedded in a metadata block. Infinite radii are drawn at the right edge.
    """
    width, height, pad = 640, 400, 50
    finite_r = [r for r, _, _ in rows if math.isfinite(r)]
    rmax = max(finite_r) if finite_r else 1.0
    rmax = rmax if rmax > 0 else 1.0
    has_inf = any(not math.isfinite(r) for r, _, _ in rows)
    span = rmax * (1.25 if has_inf else 1.0)
    vals = [v for _, lo, up in rows for v in (lo, up) if math.isfinite(v)]
    vmax = max(vals) if vals else 1.0
    vmax = vmax if vmax > 0 else 1.0

    def sx(r):
        r = span if not math.isfinite(r) else r
        return pad + (width - 2 * pad) * (r / span if span else 0.0)

    def sy(v):
        return height - pad - (height - 2 * pad) * (v / vmax)

    lower_pts = " ".join(f"{sx(r):.2f},{sy(lo):.2f}" for r, lo, _ in rows)
    upper_pts = " ".join(f"{sx(r):.2f},{sy(up):.2f}" for r, _, up in rows
                         if math.isfinite(up))
    table = "\n".join(f"{r},{lo},{up}" for r, lo, up in rows)
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" viewBox="0 0 {width} {height}">',
        f"<metadata>radius,lower,upper\n{table}</metadata>",
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" '
        f'y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" '
        f'stroke="black"/>',
        f'<text x="{width / 2:.0f}" y="20" text-anchor="middle" '
        f'font-size="14">{title or "max deviation vs radius"}</text>',
        f'<text x="{width / 2:.0f}" y="{height - 12}" text-anchor="middle" '
        f'font-size="12">radius (normalized units)</text>',
        f'<polyline fill="none" stroke="#1f77b4" stroke-width="2" '
        f'points="{lower_pts}"/>',
    ]
    if upper_pts:
        parts.append(f'<polyline fill="none" stroke="#d62728" '
                     f'stroke-width="2" stroke-dasharray="6,3" '
                     f'points="{upper_pts}"/>')
    for r, lo, up in rows:
        parts.append(f'<circle cx="{sx(r):.2f}" cy="{sy(lo):.2f}" r="3" '
                     f'fill="#1f77b4"/>')
    parts.append(f'<text x="{width - pad}" y="{pad - 8}" text-anchor="end" '
                 f'font-size="11">lower (solid) / upper (dashed)</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
