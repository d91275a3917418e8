"""Koopman spectra of measure-preserving flows by periodic approximation.

Pipeline: discretize the flow in time (tau-map) and space (equal-measure box
partition), replace the tau-map by a permutation of cells (exact lattice
shears or bipartite matching), and read spectral projections and mollified
spectral densities off the permutation's cycle structure.
"""

from .partition import (
    CellMask,
    Domain,
    OutOfDomainError,
    Partition,
    build_partition,
    cell_center,
    cell_centers,
    locate,
    locate_many,
    mask_sublevel,
    pad_axis,
    refine,
)
from .flows import (
    ABCFlow,
    Duffing,
    FlowSpec,
    NumericalBlowupError,
    OBSERVABLES,
    Pendulum,
    QuadrupleGyre,
    ShearStep,
    SplittingScheme,
    Translation,
    UnsupportedSplittingError,
    default_domain,
    integrate_tau,
    integrate_reference,
    shear_splitting,
    vector_field,
)
from .approx import (
    CycleSet,
    MatchGraph,
    NoPerfectMatchingError,
    Permutation,
    SeamViolationError,
    SetEvolutionTrace,
    ValidationReport,
    compose,
    cycles,
    inverse,
    lattice_shear_perm,
    match_perm,
    scheme_perm,
    set_evolution_error,
    validate,
)
from .spectral import (
    Band,
    BandRangeError,
    DiscreteObservable,
    Mollifier,
    ObservableValueError,
    Spectrum,
    alias_fold,
    average_observable,
    band_project,
    bandwidth,
    compute_spectrum,
    cumulative,
    density,
    evolve,
    smoothed_indicator,
    xi,
)
from .upwind import (
    EigenSet,
    UlamCirculant,
    UpwindSpec,
    analytic_eigs,
    eig_deviation,
    numeric_eigs,
    optimal_translation_perm,
    upwind_matrix,
)
from .cache import CacheIntegrityError, CorruptCacheError, PermCache, load_perm, save_perm
from .config import ConfigError, RunConfig, load_config

__version__ = "0.1.0"
