"""Random walks on one-dimensional dynamical random environments.

Simulation of walkers driven by per-site Poisson clocks, the environments
they live on, and Monte Carlo estimators for speeds, deviation
probabilities, trapping and decoupling.
"""

from .core import (Box, ClockField, ClockSource, SpaceTimePoint, sample_clock_field,
                   time_distance)
from .errors import (InvariantViolation, ParameterError, QueryError, RwdreError,
                     StatisticalValidityError, TruncationError)
from .walker import (CoupledEnsemble, JumpRule, WalkerPath, check_allowed_path,
                     envelope_tail, reachability_envelope, run_coupled, run_walker)
from .models import MODELS, make_model
from .renormalization import (EstimateWithCI, ScaleLadder, SpeedBracket, bracket_speeds,
                              build_ladder, concentration_diagnostic, estimate_pH,
                              estimate_pH_tilde, estimate_speed, threatened_probability,
                              trapped_probability)
from .mixing import (BoxObservable, DecayFit, covariance_decay_profile, estimate_box_covariance,
                     fit_decay)
from .counterexample import (ColorField, RectangleSoup, color_at, fluctuation_experiment,
                             generate_soup, run_drift_walker, soup_covariance_check)

__version__ = "0.1.0"
