"""Locality-preserving NMF for network-level traffic-state analysis.

Typical flow::

    matrix, manifest, topology = generate_dataset()
    graph = pairwise_similarity(matrix, topology)
    result = factorize(matrix, graph, FactorizationConfig(s=7))
    labels = kmeans(result.V, ClusteringConfig(K=5)).labels
"""

from .clustering import (ClusterAssignment, ClusterExemplar, ClusteringConfig, CompactnessReport,
                         KSelection, compactness, extract_exemplar, kmeans, purity, select_K)
from .config import PipelineConfig, load_config, parse_config
from .domain import (NetworkTopology, Scenario, SequenceInfo, SequenceManifest, TrafficStateMatrix,
                     compute_traffic_index, load_dataset, save_dataset)
from .errors import (ConfigError, DataError, InvalidMeasurementError, LpnmfError, NumericalError,
                     ParseError)
from .factorization import (BasisImportanceReport, DimensionSelection, FactorizationConfig,
                            FactorizationResult, basis_importance, factorize, project,
                            reconstruction_error, select_dimension)
from .generator import GeneratorConfig, generate_dataset, generate_sequence, generate_topology
from .pca import PcaModel, fit_pca, pca_project
from .similarity import (NeighborWeights, SimilarityConfig, SimilarityGraph, default_weights,
                         local_variation, pairwise_similarity)
from .trajectory import (Trajectory, TrajectoryClustering, TrajectoryConfig, build_trajectories,
                         cluster_trajectories, mean_index_curve, trajectory_distance)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
