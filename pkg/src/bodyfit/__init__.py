"""Fit a parametric body model to panel-scanner point clouds and measure it."""

from .body_model import BodyModel, BodyParams, load_model, pose_mesh, save_model
from .errors import BodyFitError, NumericalError, SchemaError
from .geometry import TriangleMesh
from .measurement import MeasurementReport, measure_all
from .pointcloud import PointCloud, ReflectivityVolume, ingest
from .registration import FitConfig, FitResult, fit, rigid_init
from .simulator import ScanConfig, simulate_scan, simulate_volume
from .synthetic import synthetic_model

__version__ = "0.1.0"

__all__ = [
    "BodyFitError", "BodyModel", "BodyParams", "FitConfig", "FitResult", "MeasurementReport",
    "NumericalError", "PointCloud", "ReflectivityVolume", "ScanConfig", "SchemaError",
    "TriangleMesh", "fit", "ingest", "load_model", "measure_all", "pose_mesh", "rigid_init",
    "save_model", "simulate_scan", "simulate_volume", "synthetic_model",
]
