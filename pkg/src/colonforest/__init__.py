"""Estimate deformed colon marker positions from colonoscope shapes."""
from .errors import (
    ColonForestError,
    ConfigError,
    DegenerateGeometryError,
    InvalidInputError,
    ParseError,
    StructuralIntegrityError,
    UnsupportedVersionError,
)
from .estimator import (
    ShapeRegressor,
    SmootherParams,
    estimate_colon_shape,
    run_online,
    smooth_estimates,
    train_shape_regressor,
)
from .forest import Forest, ForestParams, predict, train_forest
from .geometry import RigidTransform, apply_transform, least_squares_align, rmsd
from .registration import IcpParams, IcpResult, icp
from .shapes import ColonShape, Frame, InsertionSequence, ScopeShape, featurize
from .simulator import InsertionConfig, PhantomConfig, generate_phantom, simulate_insertion

__version__ = "0.1.0"
