"""Command-line surface.

Exit codes: 0 success, 1 usage or unsupported model pairing, 2 parse/schema
problems, 3 violated method assumptions, 4 budget expired (bounds are still
emitted on stdout).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import subprocess
import sys

from . import __version__
from .blackbox import (
    hoo_maximize,
    partition_from_models,
    partitioned_maximize,
)
from .certify_ensemble import Budget
from .dataset import load_points
from .dispatch import certify_pair, parse_deviation, _canonical
from .errors import (
    AbstainUnconfigured,
    AssumptionViolated,
    BudgetTooSmall,
    DevcertError,
    EmptyCertSet,
    EmptyRegion,
    MissingStats,
    OracleFailure,
    ParseError,
    SchemaError,
    SchemaMismatch,
    UnsupportedCondition,
    UnsupportedNorm,
    UnsupportedPair,
    VersionError,
)
from .modelfile import (
    ModelFile,
    denormalize_box,
    full_box_raw,
    load_model,
    normalized_space,
    save_model,
)
from .models import (
    AdditiveModel,
    rulelist_to_tree,
    ruleensemble_to_ensemble,
)
from .report import (
    box_doc,
    cert_report,
    dumps_report,
    file_digest,
    sweep_svg,
)
from .types import (
    BallUnion,
    CertificationSet,
    FiniteSet,
    FullSpace,
    PINF,
    destandardize_point,
    full_box,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_SCHEMA = 2
EXIT_ASSUMPTION = 3
EXIT_BUDGET = 4

_USAGE_ERRORS = (UnsupportedPair, UnsupportedCondition, BudgetTooSmall)
_SCHEMA_ERRORS = (ParseError, SchemaError, VersionError, SchemaMismatch,
                  MissingStats, EmptyCertSet, EmptyRegion, OracleFailure)
_ASSUMPTION_ERRORS = (AssumptionViolated, UnsupportedNorm, AbstainUnconfigured)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="devcert",
                description="Certify worst-case deviation between a model "
                            "and a reference model.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def add_pair(sp):
        sp.add_argument("--model", required=True, help="model JSON file")
        sp.add_argument("--reference", required=True,
                        help="reference model JSON file")
        sp.add_argument("--deviation", default="abs",
                        help="abs or pow:P (default: abs)")
        sp.add_argument("--scale", default="prob", choices=("prob", "link"))

    sp = sub.add_parser("certify", help="max deviation over a certification set")
    add_pair(sp)
    sp.add_argument("--certset", required=True,
                    help="full | points:FILE.csv | balls:FILE.csv:r=R[:p=inf]")
    sp.add_argument("--time-limit", type=float, default=None, metavar="S")
    sp.add_argument("--node-limit", type=int, default=None)
    sp.add_argument("--stream", action="store_true",
                    help="emit one JSON line per bound improvement")
    sp.add_argument("--out", default=None)

    sp = sub.add_parser("sweep", help="max deviation across ball radii")
    add_pair(sp)
    sp.add_argument("--centers", required=True, help="ball centers CSV")
    sp.add_argument("--radii", required=True,
                    help="comma list, e.g. 0,0.1,0.5,inf")
    sp.add_argument("--top-k", type=int, default=6)
    sp.add_argument("--svg", default=None, help="write an SVG line plot here")
    sp.add_argument("--out", default=None)

    sp = sub.add_parser("breakdown", help="per-reference-leaf deviation table")
    add_pair(sp)
    sp.add_argument("--certset", required=True)
    sp.add_argument("--out", default=None)

    sp = sub.add_parser("contrib", help="top-k feature contribution table")
    add_pair(sp)
    sp.add_argument("--certset", required=True)
    sp.add_argument("--top-k", type=int, default=6)
    sp.add_argument("--out", default=None)

    sp = sub.add_parser("robust-acc", help="robust accuracy of an additive model")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True, help="labeled CSV")
    sp.add_argument("--labels", required=True, help="label column name")
    sp.add_argument("--eps", type=float, required=True)
    sp.add_argument("--threshold", type=float, default=0.0,
                    help="link-scale decision threshold (default 0)")
    sp.add_argument("--out", default=None)

    sp = sub.add_parser("blackbox", help="query-based deviation maximization")
    sp.add_argument("--oracle", default=None,
                    help="external command; reads one JSON point per line, "
                         "writes one score per line")
    sp.add_argument("--manifest", default=None,
                    help="feature manifest for --oracle mode")
    sp.add_argument("--model", default=None)
    sp.add_argument("--reference", default=None)
    sp.add_argument("--budget", type=int, required=True)
    sp.add_argument("--partition", default="none",
                    choices=("none", "from-models"))
    sp.add_argument("--noise", default="deterministic",
                    choices=("deterministic", "bounded-variance"))
    sp.add_argument("--exploration", type=float, default=1.0)
    sp.add_argument("--out", default=None)

    sp = sub.add_parser("convert", help="rule forms to tree forms")
    sp.add_argument("--from", dest="from_kind", required=True,
                    choices=("rulelist", "ruleensemble"))
    sp.add_argument("--in", dest="in_path", required=True)
    sp.add_argument("--out", required=True)

    sp = sub.add_parser("validate", help="schema and invariant check")
    sp.add_argument("path")
    return p


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------

def parse_certset_spec(spec: str, mf: ModelFile) -> CertificationSet:
    """Grammar: full | points:FILE.csv | balls:FILE.csv:r=R[:p=inf|1|2]."""
    from .types import check_certset

    if spec == "full":
        return FullSpace()
    if spec.startswith("points:"):
        path = spec.split(":", 1)[1]
        ds = load_points(path, mf.space)
        certset = FiniteSet(tuple(ds.points))
        check_certset(normalized_space(mf.space), certset)
        return certset
    if spec.startswith("balls:"):
        parts = spec.split(":")
        if len(parts) < 3:
            raise SchemaMismatch(
                f"bad certset spec {spec!r}; need balls:FILE.csv:r=R[:p=...]")
        path = parts[1]
        radius = None
        norm = PINF
        for part in parts[2:]:
            if part.startswith("r="):
                radius = float(part[2:])
            elif part.startswith("p="):
                norm = PINF if part[2:] in ("inf", "oo") else float(part[2:])
            else:
                raise SchemaMismatch(f"bad certset option {part!r}")
        if radius is None:
            raise SchemaMismatch(f"certset spec {spec!r} is missing r=R")
        ds = load_points(path, mf.space)
        if radius == 0.0:
            certset = FiniteSet(tuple(ds.points))
        else:
            certset = BallUnion(tuple(ds.points), radius, norm)
        check_certset(normalized_space(mf.space), certset)
        return certset
    raise SchemaMismatch(f"unknown certset spec {spec!r}")


def _write_out(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)


def _load_pair(args) -> tuple[ModelFile, ModelFile]:
    return load_model(args.model), load_model(args.reference)


def _inputs_doc(args) -> dict:
    return {"model": file_digest(args.model),
            "reference": file_digest(args.reference)}


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_certify(args) -> int:
    mf, mf0 = _load_pair(args)
    certset = parse_certset_spec(args.certset, mf)
    D = parse_deviation(args.deviation)
    budget = Budget(time_limit_s=args.time_limit, node_limit=args.node_limit)
    on_step = None
    if args.stream:
        def on_step(step):
            sys.stdout.write(json.dumps(
                {"event": "bounds", "step": step.step,
                 "lower": step.lower,
                 "upper": step.upper if math.isfinite(step.upper) else "inf"})
                + "\n")
            sys.stdout.flush()
    result = certify_pair(mf, mf0, D, certset, scale=args.scale,
                          budget=budget, on_step=on_step)
    doc = cert_report(mf.space, result, certset=certset,
                      certset_spec=args.certset, inputs=_inputs_doc(args),
                      scale=args.scale)
    _write_out(dumps_report(doc), args.out)
    if result.stats.get("budget_expired"):
        return EXIT_BUDGET
    return EXIT_OK


def _parse_radii(spec: str) -> list[float]:
    out = []
    for token in spec.split(","):
        token = token.strip()
        if not token:
            continue
        out.append(math.inf if token in ("inf", "oo") else float(token))
    if not out:
        raise SchemaMismatch("empty radius list")
    return out


def cmd_sweep(args) -> int:
    mf, mf0 = _load_pair(args)
    D = parse_deviation(args.deviation)
    ds = load_points(args.centers, mf.space)
    centers = tuple(ds.points)
    radii = _parse_radii(args.radii)

    rows = []
    results = []
    for r in radii:
        if r == 0.0:
            certset = FiniteSet(centers)
        elif math.isinf(r):
            certset = FullSpace()
        else:
            certset = BallUnion(centers, r, PINF)
        res = certify_pair(mf, mf0, D, certset, scale=args.scale)
        rows.append((r, res.lower, res.upper))
        results.append(res)

    # rank features by |contribution| averaged over the sweep; falls back to
    # schema order when the certifier has no contribution notion (tree pairs)
    space = mf.space
    names = [f.name for f in space.features]
    avg = {j: 0.0 for j in range(space.dim)}
    seen = False
    for res in results:
        for c in res.contributions:
            avg[c.feature] += abs(c.contribution)
            seen = True
    order = sorted(range(space.dim),
                   key=(lambda j: (-avg[j], j)) if seen else (lambda j: j))
    top = order[:max(args.top_k, 0)]

    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["r", "lower", "upper", "exact"]
               + [f"max:{names[j]}" for j in top])
    nspace = normalized_space(space)
    for (r, lo, up), res in zip(rows, results):
        cells = []
        if res.maximizers:
            raw_box = denormalize_box(space, res.maximizers[0].box)
            doc = box_doc(space, raw_box)
            for j in top:
                cells.append(_cell_str(doc[names[j]]))
        else:
            cells = [""] * len(top)
        w.writerow([_num_str(r), _num_str(lo), _num_str(up), res.exact]
                   + cells)
    _write_out(buf.getvalue(), args.out)
    if args.svg:
        with open(args.svg, "w", encoding="utf-8") as fh:
            fh.write(sweep_svg(rows))
    return EXIT_OK


def _num_str(x: float) -> str:
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(float(x))


def _cell_str(entry: dict) -> str:
    if "categories" in entry:
        cats = entry["categories"]
        return cats[0] if len(cats) == 1 else "{" + "|".join(cats) + "}"
    lo, hi = entry["lo"], entry["hi"]
    if lo == hi:
        return _num_str(lo) if isinstance(lo, float) else str(lo)
    return f"[{lo} {hi}]"


def cmd_breakdown(args) -> int:
    mf, mf0 = _load_pair(args)
    certset = parse_certset_spec(args.certset, mf)
    D = parse_deviation(args.deviation)
    result = certify_pair(mf, mf0, D, certset, scale=args.scale)
    if not result.per_reference_leaf:
        raise UnsupportedPair(
            "this pair has no per-reference-leaf breakdown; the reference "
            "must be a tree or rule list")
    space = mf.space
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["leaf", "leaf_box", "model_min", "model_max",
                "reference_value", "deviation"])
    for b in result.per_reference_leaf:
        box = ""
        if b.leaf_box is not None:
            box = json.dumps(box_doc(space, denormalize_box(space, b.leaf_box)),
                             sort_keys=True)
        w.writerow([b.leaf_index, box,
                    "" if b.model_min is None else _num_str(b.model_min),
                    "" if b.model_max is None else _num_str(b.model_max),
                    _num_str(b.reference_value), _num_str(b.deviation)])
    _write_out(buf.getvalue(), args.out)
    return EXIT_OK


def cmd_contrib(args) -> int:
    mf, mf0 = _load_pair(args)
    certset = parse_certset_spec(args.certset, mf)
    D = parse_deviation(args.deviation)
    result = certify_pair(mf, mf0, D, certset, scale=args.scale)
    if not result.contributions:
        raise UnsupportedPair(
            "feature contributions need an additive model under assessment")
    space = mf.space
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["feature", "contribution", "extremizer"])
    for c in result.contributions[:max(args.top_k, 0)]:
        name = space.features[c.feature].name
        from .report import _component_box

        raw = denormalize_box(space, _component_box(
            normalized_space(space), c.feature, c.extremizer))
        w.writerow([name, _num_str(c.contribution),
                    _cell_str(box_doc(space, raw)[name])])
    _write_out(buf.getvalue(), args.out)
    return EXIT_OK


def cmd_robust_acc(args) -> int:
    mf = load_model(args.model)
    model = _canonical(mf.space, mf.model)
    if not isinstance(model, AdditiveModel):
        raise UnsupportedPair("robust accuracy is defined for additive models")
    ds = load_points(args.data, mf.space, label_column=args.labels)
    if ds.labels is None:
        raise ParseError(f"no label column {args.labels!r}")
    labels = [1 if y > 0.5 else -1 for y in ds.labels]
    from .certify_additive import robust_accuracy_additive

    space = normalized_space(mf.space)
    acc = robust_accuracy_additive(space, model, ds.points, labels,
                                   args.eps, threshold=args.threshold)
    doc = {"format": "devcert-robust-acc/1",
           "inputs": {"model": file_digest(args.model),
                      "data": file_digest(args.data)},
           "eps": args.eps, "threshold": args.threshold,
           "n": len(labels), "robust_accuracy": acc}
    _write_out(json.dumps(doc, indent=2) + "\n", args.out)
    return EXIT_OK


class _ProcessOracle:
    """Line protocol: JSON array of raw feature values in, float out."""

    def __init__(self, command: str, space):
        self.space = space
        self.proc = subprocess.Popen(
            command, shell=True, stdin=subprocess.PIPE,
            stdout=subprocess.PIPE, text=True, bufsize=1)

    def __call__(self, point):
        raw = destandardize_point(self.space, point)
        try:
            self.proc.stdin.write(json.dumps(list(raw)) + "\n")
            self.proc.stdin.flush()
            line = self.proc.stdout.readline()
        except (BrokenPipeError, OSError) as exc:
            raise OracleFailure(f"oracle process died: {exc}") from exc
        if not line:
            raise OracleFailure("oracle closed its output")
        return float(line)

    def close(self):
        if self.proc.stdin:
            self.proc.stdin.close()
        self.proc.wait(timeout=10)


def cmd_blackbox(args) -> int:
    from .blackbox import difference_oracle
    from .dataset import load_manifest

    if args.oracle is not None:
        if args.manifest is None:
            raise SchemaMismatch("--oracle mode needs --manifest for the space")
        raw_space = load_manifest(args.manifest)
        space = normalized_space(raw_space)
        oracle = _ProcessOracle(args.oracle, raw_space)
        partition = None
        if args.partition == "from-models":
            raise SchemaMismatch(
                "--partition from-models needs --model/--reference")
        inputs = {"oracle": args.oracle,
                  "manifest": file_digest(args.manifest)}
    else:
        if args.model is None or args.reference is None:
            raise SchemaMismatch(
                "give either --oracle CMD or --model and --reference")
        mf, mf0 = load_model(args.model), load_model(args.reference)
        if mf.space != mf0.space:
            raise SchemaMismatch("model and reference feature spaces differ")
        raw_space = mf.space
        space = normalized_space(raw_space)
        f = _canonical(mf.space, mf.model)
        f0 = _canonical(mf0.space, mf0.model)
        oracle = difference_oracle(f, f0)
        partition = None
        if args.partition == "from-models":
            partition = partition_from_models(space, f, f0)
        inputs = {"model": file_digest(args.model),
                  "reference": file_digest(args.reference)}

    try:
        if partition is None:
            run = hoo_maximize(oracle, full_box(space), args.budget,
                               noise=args.noise, exploration=args.exploration)
            cells = 1
        else:
            run = partitioned_maximize(oracle, partition, args.budget,
                                       noise=args.noise,
                                       exploration=args.exploration)
            cells = partition.size
    finally:
        if isinstance(oracle, _ProcessOracle):
            oracle.close()

    best_raw = None
    if run.best_point is not None:
        best_raw = list(destandardize_point(raw_space, run.best_point))
    doc = {"format": "devcert-blackbox/1", "inputs": inputs,
           "budget": args.budget, "partition_cells": cells,
           "queries_used": run.queries_used,
           "best_point": best_raw, "best_value": run.best_value,
           "best_so_far": run.regret_curve}
    _write_out(json.dumps(doc, indent=2) + "\n", args.out)
    return EXIT_OK


def cmd_convert(args) -> int:
    mf = load_model(args.in_path)
    bounds = full_box_raw(mf.space)
    if args.from_kind == "rulelist":
        if mf.model_type != "rule_list":
            raise SchemaMismatch(
                f"--from rulelist needs a rule_list file, got {mf.model_type}")
        tree = rulelist_to_tree(mf.space, mf.model, bounds=bounds)
        out = ModelFile(space=mf.space, model=tree,
                        model_type="decision_tree", metadata=mf.metadata)
    else:
        if mf.model_type != "rule_ensemble":
            raise SchemaMismatch(
                f"--from ruleensemble needs a rule_ensemble file, "
                f"got {mf.model_type}")
        ens = ruleensemble_to_ensemble(mf.space, mf.model, bounds=bounds)
        out = ModelFile(space=mf.space, model=ens,
                        model_type="tree_ensemble", metadata=mf.metadata)
    save_model(out, args.out)
    return EXIT_OK


def cmd_validate(args) -> int:
    mf = load_model(args.path)
    doc = {"valid": True, "model_type": mf.model_type,
           "format_version": mf.format_version,
           "n_features": mf.space.dim,
           "metadata": mf.metadata}
    sys.stdout.write(json.dumps(doc, indent=2) + "\n")
    return EXIT_OK


_COMMANDS = {
    "certify": cmd_certify,
    "sweep": cmd_sweep,
    "breakdown": cmd_breakdown,
    "contrib": cmd_contrib,
    "robust-acc": cmd_robust_acc,
    "blackbox": cmd_blackbox,
    "convert": cmd_convert,
    "validate": cmd_validate,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except _USAGE_ERRORS as exc:
        print(f"devcert: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _SCHEMA_ERRORS as exc:
        print(f"devcert: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except _ASSUMPTION_ERRORS as exc:
        print(f"devcert: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except DevcertError as exc:
        print(f"devcert: {exc}", file=sys.stderr)
        return EXIT_SCHEMA


if __name__ == "__main__":
    raise SystemExit(main())
