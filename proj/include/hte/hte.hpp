#pragma once

#include "hte/bench.hpp"
#include "hte/dgp.hpp"
#include "hte/errors.hpp"
#include "hte/forest.hpp"
#include "hte/forest_io.hpp"
#include "hte/linalg.hpp"
#include "hte/nuisance.hpp"
#include "hte/parallel.hpp"
#include "hte/random.hpp"
#include "hte/regression_forest.hpp"
#include "hte/split.hpp"
#include "hte/variant.hpp"
