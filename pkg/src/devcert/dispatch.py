"""Pairing logic: choose the right certifier for a (model, reference) pair.

Rule lists are converted to their equivalent one-sided trees and rule
ensembles to sum-aggregated tree ensembles before dispatch, so the
certifier matrix only sees trees, additive models, and tree ensembles.
Comparison happens on the probability scale by default; --scale link moves
additive models to an identity-link view and maps piecewise-constant
reference values through the link.
"""

from __future__ import annotations

from .certify_additive import (
    certify_additive_vs_additive,
    certify_additive_vs_tree,
)
from .certify_ensemble import Budget, certify_ensemble_vs_tree
from .certify_tree import certify_tree_tree
from .errors import AssumptionViolated, SchemaMismatch, UnsupportedPair
from .modelfile import ModelFile, normalize_model, normalized_space
from .models import (
    AdditiveModel,
    DecisionTree,
    Leaf,
    RuleEnsemble,
    RuleList,
    TreeEnsemble,
    link_forward,
    rulelist_to_tree,
    ruleensemble_to_ensemble,
)
from .results import CertResult
from .types import CertificationSet, DeviationFn, FeatureSpace


def _canonical(space: FeatureSpace, model):
    """Normalize the frame and fold rule forms into tree forms."""
    m = normalize_model(space, model)
    nspace = normalized_space(space)
    if isinstance(m, RuleList):
        return rulelist_to_tree(nspace, m)
    if isinstance(m, RuleEnsemble):
        return ruleensemble_to_ensemble(nspace, m)
    return m


def _link_scale_tree(tree: DecisionTree, link: str) -> DecisionTree:
    return DecisionTree(tuple(Leaf(l.region, link_forward(link, l.value))
                              for l in tree.leaves))


def _apply_scale(f, f0, scale: str):
    """Move the pair onto the requested comparison scale."""
    if scale == "prob":
        if isinstance(f, AdditiveModel) and isinstance(f0, AdditiveModel) \
                and (f.link != "identity" or f0.link != "identity"):
            raise AssumptionViolated(
                "additive-vs-additive needs identity links; rerun with "
                "--scale link to compare on the link scale")
        return f, f0
    if scale != "link":
        raise SchemaMismatch(f"unknown scale {scale!r}")

    link = "logit"
    for m in (f, f0):
        if isinstance(m, AdditiveModel) and m.link != "identity":
            link = m.link
            break

    def to_link(m):
        if isinstance(m, AdditiveModel):
            return AdditiveModel(m.intercept, m.terms, "identity")
        if isinstance(m, DecisionTree):
            return _link_scale_tree(m, link)
        if isinstance(m, TreeEnsemble):
            if m.post_link == "logistic":
                return TreeEnsemble(m.trees, m.aggregation, "identity",
                                    m.intercept)
            return m  # identity post: already on the additive score scale
        raise UnsupportedPair(
            f"no link-scale view for {type(m).__name__}")

    return to_link(f), to_link(f0)


def certify_pair(mf: ModelFile, mf0: ModelFile, D: DeviationFn,
                 certset: CertificationSet, scale: str = "prob",
                 budget: Budget | None = None,
                 on_step=None) -> CertResult:
    """Dispatch a certification run for two model files."""
    if mf.space != mf0.space:
        raise SchemaMismatch(
            "model and reference declare different feature spaces; "
            "re-export them against one schema")
    space = normalized_space(mf.space)
    f = _canonical(mf.space, mf.model)
    f0 = _canonical(mf0.space, mf0.model)
    f, f0 = _apply_scale(f, f0, scale)

    if isinstance(f, DecisionTree) and isinstance(f0, DecisionTree):
        return certify_tree_tree(space, f, f0, D, certset)
    if isinstance(f, AdditiveModel) and isinstance(f0, DecisionTree):
        return certify_additive_vs_tree(space, f, f0, D, certset)
    if isinstance(f, AdditiveModel) and isinstance(f0, AdditiveModel):
        return certify_additive_vs_additive(space, f, f0, D, certset)
    if isinstance(f, DecisionTree) and isinstance(f0, AdditiveModel):
        if not D.symmetric:
            raise UnsupportedPair(
                "tree vs additive needs a symmetric deviation (the roles "
                "are swapped internally)")
        return certify_additive_vs_tree(space, f0, f, D, certset)
    if isinstance(f, TreeEnsemble) and isinstance(f0, DecisionTree):
        return certify_ensemble_vs_tree(space, f, f0, D, certset,
                                        budget=budget, on_step=on_step)
    raise UnsupportedPair(
        f"no certifier for {type(f).__name__} vs {type(f0).__name__}; "
        "supported pairs: tree/tree, additive/tree, additive/additive, "
        "tree/additive (symmetric D), ensemble/tree")


def parse_deviation(spec: str) -> DeviationFn:
    """CLI deviation grammar: 'abs' or 'pow:P'."""
    if spec == "abs":
        return DeviationFn.abs_diff()
    if spec.startswith("pow:"):
        try:
            p = float(spec.split(":", 1)[1])
        except ValueError as exc:
            raise SchemaMismatch(f"bad power in deviation spec {spec!r}") from exc
        return DeviationFn.power_diff(p)
    raise SchemaMismatch(f"unknown deviation spec {spec!r}; use abs or pow:P")
