#pragma once

#include "coreselect/augment.hpp"
#include "coreselect/baselines.hpp"
#include "coreselect/binary_io.hpp"
#include "coreselect/classifier.hpp"
#include "coreselect/config.hpp"
#include "coreselect/contrastive.hpp"
#include "coreselect/data.hpp"
#include "coreselect/error.hpp"
#include "coreselect/eval.hpp"
#include "coreselect/numerics.hpp"
#include "coreselect/parallel.hpp"
#include "coreselect/pipeline.hpp"
#include "coreselect/rng.hpp"
#include "coreselect/scoring.hpp"
