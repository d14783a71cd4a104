"""Constant-coverage adaptive confidence intervals for regression coefficients.

The UMAU t-interval has exact ``1 - alpha`` coverage with a width that ignores
any prior knowledge.  The FAB interval keeps the exact coverage but bends its
acceptance regions towards a normal prior for the coefficient, so it is
shorter when the coefficients look like draws from that prior.  Here the
prior for each coefficient is estimated from the part of the data that is
independent of that coefficient's estimate, which preserves exactness.
"""

from ._backend import BACKEND
from .dist import (binomial_acceptance_band, clopper_pearson, make_rng, normal_cdf,
                   normal_quantile, t_cdf, t_quantile)
from .empirical_bayes import (MLE, MOMENT, Box, MarginalModel, PriorEstimate, build_marginal,
                              mle_estimate, mle_estimate_with_mean, moment_estimate)
from .errors import (ConvergenceError, DimensionError, DomainError, EmptyContextError,
                     FabregError, InputError, OptimizerError, RankDeficientError,
                     SingularMomentSystemError)
from .ols import (AdaptationData, CoefficientContext, Design, OlsFit, RegressionData,
                  coefficient_context, fit_ols, null_space_restrict, standardize)
from .pipeline import (ESTIMATED, ZERO, AnalysisConfig, AnalysisReport, analyze,
                       analyze_grouped, build_spec)
from .sim import (CoverageReport, SimDesign, run_study, width_convergence_study)
from .spending import (FAB_T, FAB_Z_ORACLE, UMAU, IntervalResult, SpendingSpec,
                       fab_interval_t, fab_interval_z, g, g_inverse, region_membership,
                       spending, umau_interval)

__version__ = "0.1.0"
