#pragma once

#include "ssmc/error.hpp"
#include "ssmc/linalg.hpp"
#include "ssmc/rng.hpp"
#include "ssmc/dataset.hpp"
#include "ssmc/suffstats.hpp"
#include "ssmc/priors.hpp"
#include "ssmc/models.hpp"
#include "ssmc/sampler.hpp"
#include "ssmc/diagnostics.hpp"
#include "ssmc/simulate.hpp"
#include "ssmc/bench.hpp"
#include "ssmc/config.hpp"
