"""Seriation, neighbor-joining and neighbor-net analysis of binary trait data."""
__version__ = "0.1.0"

from .core import (DEFAULT_CATALOG, DEFAULT_METRIC, METRICS, SHOPHOUSE_TRAITS, DistanceMatrix,
                   TraitCatalog, TraitMatrix, TraitVector, distance_matrix, hamming_distance,
                   jaccard_distance, phi_correlation, trait_frequencies)
from .errors import (ArchgenError, ConvergenceError, DimensionError, EmptyInputError,
                     InsufficientDataError, ParseError, SizeError)
from .ingest import (BuildingRecord, DetectionRecord, TypeCatalog, derive_types,
                     detections_to_vector, read_trait_csv, stratified_split, write_trait_csv)
from .neighbornet import (CircularOrdering, Split, SplitSystem, delta_score, neighbor_net,
                          nnet_ordering, split_metric)
from .njtree import PhyloTree, cherries, ls_fit, nj, parse_newick, to_newick, tree_distance_matrix
from .seriation import SeriationResult, brute_force_seriate, petrie_criterion, seriate
from .simulate import SimConfig, SimResult, diagnose, simulate
from .splitsgraph import SplitsGraph, StyleClusters, build_splits_graph, cluster_styles, verify_graph_metric

__all__ = [
    "DEFAULT_CATALOG", "DEFAULT_METRIC", "METRICS", "SHOPHOUSE_TRAITS", "DistanceMatrix",
    "TraitCatalog", "TraitMatrix", "TraitVector", "distance_matrix", "hamming_distance",
    "jaccard_distance", "phi_correlation", "trait_frequencies",
    "ArchgenError", "ConvergenceError", "DimensionError", "EmptyInputError",
    "InsufficientDataError", "ParseError", "SizeError",
    "BuildingRecord", "DetectionRecord", "TypeCatalog", "derive_types", "detections_to_vector",
    "read_trait_csv", "stratified_split", "write_trait_csv",
    "CircularOrdering", "Split", "SplitSystem", "delta_score", "neighbor_net", "nnet_ordering",
    "split_metric",
    "PhyloTree", "cherries", "ls_fit", "nj", "parse_newick", "to_newick", "tree_distance_matrix",
    "SeriationResult", "brute_force_seriate", "petrie_criterion", "seriate",
    "SimConfig", "SimResult", "diagnose", "simulate",
    "SplitsGraph", "StyleClusters", "build_splits_graph", "cluster_styles", "verify_graph_metric",
    "__version__",
]
