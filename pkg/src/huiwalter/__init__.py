"""Label-free estimation of classifier error rates and population prevalences."""

__version__ = "0.1.0"

from .closed_form import ClosedFormResult, discriminant, estimate_closed_form
from .errors import (
    ComplexDiscriminantError,
    ConfigError,
    DegenerateMarginError,
    DomainError,
    HuiWalterError,
    ImplausibleSolutionError,
    InputError,
    NoLabelsError,
    NonIdentifiableError,
    NoSolutionError,
    ProtocolError,
    UnknownPopulationError,
    UnsupportedArityError,
    ZeroDiscriminantError,
)
from .gibbs import GibbsConfig, GibbsResult, PosteriorSummary, gibbs_fit
from .latent import MixtureModel, assign, em_fit, match_labels
from .metrics import EvalReport, accuracy, balanced_accuracy, mae_tail, rand_index
from .model import ParamVector, cell_probabilities, log_likelihood, mle_fit, observed_information
from .simulate import ScenarioSpec, expected_table, generate, sample_table, scenario
from .stream import EngineConfig, OnlineEngine, StreamEvent, TraceRow, process, prior_drift_test
from .tables import ContingencyTable, MarginalSums, g_test, tabulate

__all__ = [name for name in dir() if not name.startswith("_")]
