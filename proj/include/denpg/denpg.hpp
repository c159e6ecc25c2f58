#pragma once

#include "denpg/config.hpp"
#include "denpg/env.hpp"
#include "denpg/errors.hpp"
#include "denpg/estimators.hpp"
#include "denpg/experiment.hpp"
#include "denpg/graph.hpp"
#include "denpg/optimizer.hpp"
#include "denpg/policy.hpp"
#include "denpg/rng.hpp"
#include "denpg/svg.hpp"
