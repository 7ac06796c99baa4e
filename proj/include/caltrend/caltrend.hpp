#pragma once

// Calendar-time treatment-effect analysis for sequential target-trial
// emulations: doubly robust trial-specific effects, projection onto
// candidate marginal structural models with double cross-fit selection, and
// a covariate-shift decomposition with a parametric-bootstrap boundary test.

#include "caltrend/artifacts.hpp"
#include "caltrend/common.hpp"
#include "caltrend/config.hpp"
#include "caltrend/csv_io.hpp"
#include "caltrend/estimators.hpp"
#include "caltrend/forest.hpp"
#include "caltrend/learners.hpp"
#include "caltrend/msm.hpp"
#include "caltrend/nuisance.hpp"
#include "caltrend/numeric.hpp"
#include "caltrend/panel.hpp"
#include "caltrend/parallel.hpp"
#include "caltrend/pipeline.hpp"
#include "caltrend/rng.hpp"
#include "caltrend/schema.hpp"
#include "caltrend/selection.hpp"
#include "caltrend/simulate.hpp"
#include "caltrend/spline.hpp"
#include "caltrend/theta.hpp"
