"""Model-space transferability estimation from attribution maps."""

import json
import os

from ._core import (
    AffinityMatrix,
    AttributionSet,
    Matrix,
    Model,
    ModelspaceError,
    Probe,
    affinity,
    attribute,
    attribute_probe,
    correlation_matrix,
    cut_tree,
    distance,
    generate_family,
    group_of,
    insert,
    load_model,
    load_probe,
    newick_tree,
    pearson,
    precision_at_k,
    probe_from_images,
    rank,
    recall_at_k,
    spearman,
    svcca,
    synthetic_probe,
)


def run_affinity(probe, models, method="elrp", output_dir="out", **options):
    """Runs the affinity command on bundles on disk and writes its files.

    Extra keyword options use the run-config field names (epsilon, mode,
    probe_size, seed, threads, ...). Returns a dict with the matrix, the
    number of propagations spent and the cache hits.
    """
    config = {
        "probe": os.fspath(probe),
        "models": [os.fspath(m) for m in models],
        "method": method,
        "output_dir": os.fspath(output_dir),
    }
    config.update(options)
    return _core._run_affinity(json.dumps(config))


from . import _core  # noqa: E402

__all__ = [name for name in dir() if not name.startswith("_")]
