"""Geodesic walks in weight space under the functional (output-space) metric."""
from .nn import ArchSpec, Batch, TrainOptions, forward, init_network, jvp, loss_and_accuracy, sgd_train, vjp
from .metric import MetricOperator, functional_distance, metric_vecprod, path_energy, quad_form
from .trust_region import solve_direction
from .geodesic import GeoConfig, PathTrace, geo

__version__ = "0.1.0"
