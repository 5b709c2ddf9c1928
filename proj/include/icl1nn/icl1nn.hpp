#pragma once

#include "icl1nn/analysis.hpp"
#include "icl1nn/data.hpp"
#include "icl1nn/errors.hpp"
#include "icl1nn/geometry.hpp"
#include "icl1nn/gradients.hpp"
#include "icl1nn/model.hpp"
#include "icl1nn/random.hpp"
#include "icl1nn/stats.hpp"
#include "icl1nn/training.hpp"
