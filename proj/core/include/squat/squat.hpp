#pragma once

// Umbrella header.

#include "squat/attention.hpp"
#include "squat/cache.hpp"
#include "squat/error.hpp"
#include "squat/pipeline.hpp"
#include "squat/quant.hpp"
#include "squat/random.hpp"
#include "squat/rope.hpp"
#include "squat/solver.hpp"
#include "squat/subspace.hpp"
#include "squat/trace.hpp"
