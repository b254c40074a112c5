#pragma once

#include "slowfast/types.hpp"
#include "slowfast/rng.hpp"
#include "slowfast/expression.hpp"
#include "slowfast/drift.hpp"
#include "slowfast/linalg.hpp"
#include "slowfast/model.hpp"
#include "slowfast/noise.hpp"
#include "slowfast/integrator.hpp"
#include "slowfast/harness.hpp"
#include "slowfast/benchmarks.hpp"
#include "slowfast/averaging.hpp"
#include "slowfast/manifold.hpp"
#include "slowfast/deviation.hpp"
#include "slowfast/io.hpp"
#include "slowfast/verification.hpp"
