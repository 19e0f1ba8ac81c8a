#pragma once

#include "fdag/checkpoint.hpp"
#include "fdag/dataset.hpp"
#include "fdag/design.hpp"
#include "fdag/errors.hpp"
#include "fdag/eval.hpp"
#include "fdag/fpca.hpp"
#include "fdag/graph.hpp"
#include "fdag/model.hpp"
#include "fdag/random.hpp"
#include "fdag/sampler.hpp"
#include "fdag/simulate.hpp"
#include "fdag/splines.hpp"
