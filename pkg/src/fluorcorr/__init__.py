"""Simulation and analysis of conditioned homodyne photon correlations
from the resonance fluorescence of a single trapped atom.

The package models the measurement end to end: multilevel optical Bloch
dynamics (:mod:`fluorcorr.atom`, :mod:`fluorcorr.liouville`), the
detection-chain arithmetic of a weak-local-oscillator interferometer
(:mod:`fluorcorr.homodyne`), quantum-jump synthesis of time-tagged detector
clicks (:mod:`fluorcorr.trajectory`), and start-stop correlation analysis
with phase calibration (:mod:`fluorcorr.correlator`).
"""

from .atom import (AtomModel, Ba138Config, DecayChannel, LaserDrive, Level,
                   build_ba138, build_two_level, clebsch_gordan)
from .curves import CorrelationCurve, read_curve, write_curve
from .errors import (CalibrationError, ConfigError, DegenerateSteadyStateError,
                     FluorcorrError, NumericalError, PhaseReferenceError,
                     StatisticsError)
from .homodyne import (DetectionChain, HomodyneDerived, compose_gtotal, derive,
                       extract_inphase, extract_quadrature, phase_jitter_average)
from .liouville import (CorrelationEngine, DensityOperator, Liouvillian,
                        conditional_state, g2_curve, g15_curve, gtotal_direct,
                        liouvillian, propagate, steady_state)
from .correlator import (Histogram, PhaseCalibration, calibrate_phases,
                         cross_correlate, estimate_visibility, merge_histograms,
                         normalize, read_histogram, write_histogram)
from .trajectory import (ClickStream, UnravelingSpec, build_unraveling,
                         ensemble_states, expected_rates, read_tags, synthesize,
                         write_tags)
from .config import RunConfig, load_config, parse_config, preset_config

__version__ = "0.1.0"
