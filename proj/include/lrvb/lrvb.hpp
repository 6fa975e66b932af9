#pragma once

#include "lrvb/core/linalg.hpp"
#include "lrvb/core/parallel.hpp"
#include "lrvb/core/quadrature.hpp"
#include "lrvb/core/rng.hpp"
#include "lrvb/core/special.hpp"
#include "lrvb/core/types.hpp"
#include "lrvb/arrowhead.hpp"
#include "lrvb/diagnostics.hpp"
#include "lrvb/estimators.hpp"
#include "lrvb/expfam/beta.hpp"
#include "lrvb/expfam/categorical.hpp"
#include "lrvb/expfam/exponential.hpp"
#include "lrvb/expfam/family.hpp"
#include "lrvb/expfam/gaussian.hpp"
#include "lrvb/expfam/inverse_gamma.hpp"
#include "lrvb/factorized.hpp"
#include "lrvb/gaussvb.hpp"
#include "lrvb/models/betabin.hpp"
#include "lrvb/models/exp_toy.hpp"
#include "lrvb/models/probit.hpp"
#include "lrvb/models/stochvol.hpp"
#include "lrvb/models/target.hpp"
#include "lrvb/optimizer.hpp"
#include "lrvb/ssm.hpp"
#include "lrvb/structured/hierarchical.hpp"
#include "lrvb/structured/mixture.hpp"
