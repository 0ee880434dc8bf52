"""Multiobject tracking with particle-flow measurement proposals."""

from .association import AssociationTables, association_marginals, run_spa_da
from .flow import (FlowResult, FlowSchedule, GaussianSummary,
                   LinearizedMeasurement, edh_coefficients, linearize,
                   make_geometric_schedule, run_flow)
from .metrics import OspaParams, mospa, optimal_assignment, ospa
from .models import (BirthModel, CvMotionModel, LinearMeasurementModel,
                     MeasurementFrame, TdoaModel, build_two_array_geometry)
from .sim import Scenario, ScenarioObject, default_scenario, simulate
from .tracker import (ExtendedParticleSet, LabeledBelief, PredictedMessage,
                      TrackerConfig, detect_and_estimate, measurement_evaluation,
                      measurement_update_legacy, measurement_update_new,
                      new_po_evaluation, predict, prune, resample, run_tracker,
                      step)

__version__ = "0.1.0"
