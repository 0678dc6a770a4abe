"""Export trained scikit-learn / EBM models into the devcert format."""

from .export import (
    UnsupportedEstimator,
    export_ebm,
    export_estimator,
    export_forest,
    export_logreg,
    export_tree,
)
from .meta import (
    CategoricalColumn,
    ContinuousColumn,
    FeatureMeta,
    MetadataError,
    MissingColumn,
    encode_frame,
    load_meta,
    make_manifest,
    parse_meta,
)

__version__ = "0.1.0"
