#pragma once

#include "ratealloc/errors.hpp"
#include "ratealloc/rng.hpp"
#include "ratealloc/linalg.hpp"
#include "ratealloc/model.hpp"
#include "ratealloc/kalman.hpp"
#include "ratealloc/ecdq.hpp"
#include "ratealloc/info_cost.hpp"
#include "ratealloc/dc_program.hpp"
#include "ratealloc/convex_engine.hpp"
#include "ratealloc/ccp.hpp"
#include "ratealloc/network.hpp"
#include "ratealloc/scenarios.hpp"
#include "ratealloc/config.hpp"
