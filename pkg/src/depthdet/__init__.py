"""Object detection from RGB-D frames using depth clusters as region proposals."""

from .calibration import Correspondence, DLTCalibrator, ProjectionMatrix, solve_projection_dlt
from .classifier import ClassScore, Detection, ExternalClassifier, StubClassifier, filter_by_lambda
from .clustering import Cluster, ClusterParams, SingleLinkageClustering, cluster_bruteforce, cluster_grid
from .config import PipelineConfig, load_config
from .evaluation import GroundTruthBox, average_precision, evaluate, iou, match_greedy
from .exceptions import DepthDetError
from .pipeline import DepthObjectDetector, detect_frame, run_bench, run_detect, run_eval
from .pointcloud_io import BBox2D, Image, PointCloud, read_cloud, read_image
from .proposal import Proposal, ProposalParams, propose
from .synth import SceneSpec, generate_scene, write_scene

__version__ = "0.1.0"

__all__ = [
    "BBox2D",
    "ClassScore",
    "Cluster",
    "ClusterParams",
    "Correspondence",
    "DLTCalibrator",
    "DepthDetError",
    "DepthObjectDetector",
    "Detection",
    "ExternalClassifier",
    "GroundTruthBox",
    "Image",
    "PipelineConfig",
    "PointCloud",
    "ProjectionMatrix",
    "Proposal",
    "ProposalParams",
    "SceneSpec",
    "SingleLinkageClustering",
    "StubClassifier",
    "average_precision",
    "cluster_bruteforce",
    "cluster_grid",
    "detect_frame",
    "evaluate",
    "filter_by_lambda",
    "generate_scene",
    "iou",
    "load_config",
    "match_greedy",
    "propose",
    "read_cloud",
    "read_image",
    "run_bench",
    "run_detect",
    "run_eval",
    "solve_projection_dlt",
    "write_scene",
]
