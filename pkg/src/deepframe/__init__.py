"""Dataless architecture scoring by the minimum deep frame potential.

A feed-forward network is read as an approximate solver for a layered
nonnegative sparse-coding problem whose dictionary is fixed by the
architecture.  Architectures whose induced dictionaries can reach lower
frame potential (lower average atom coherence) are ranked higher.
"""

from ._version import __version__
from .archspec import (
    ArchSpec,
    Edge,
    LayerGeom,
    SpecError,
    chain_spec,
    conv_geom,
    conv_input_geom,
    dense_geom,
    expand_family,
    from_widths,
    param_count,
    parse_spec,
    serialize_spec,
    spec_from_dict,
    spec_hash,
    spec_to_dict,
    validate_spec,
)
from .bound import ChainBound, chain_bound_grid_oracle, chain_lower_bound, welch_bound
from .dictionary import (
    BlockDictionary,
    MaterializationError,
    build_dictionary,
    flatten_params,
    load_dictionary,
    load_params,
    materialize,
    save_dictionary,
)
from .estimators import ArchitectureRanker, FramePotentialMinimizer, LayeredSparseCoder
from .gram import GramBlocks, ZeroColumnError, count_offdiag, gram_blocks, gram_oracle
from .minimize import (
    MinimizationError,
    MinimizeConfig,
    MinimizeResult,
    minimize_potential,
    score_architectures,
)
from .potential import (
    PotentialReport,
    frame_potential,
    mutual_coherence,
    potential_and_gradient,
    potential_gradient,
    potential_report,
)
from .sparse import (
    SparseProblem,
    forward_pass,
    nonneg_soft_threshold,
    robustness_denominator,
    solve_dca,
    stability_cap,
    uniqueness_threshold,
)
from .store import RecordStore, RunRecord, cache_lookup

__all__ = [name for name in dir() if not name.startswith("_")] + ["__version__"]
