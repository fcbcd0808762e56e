#pragma once

#include "morer/active_learning.hpp"
#include "morer/classifier.hpp"
#include "morer/dist_analysis.hpp"
#include "morer/er_core.hpp"
#include "morer/error.hpp"
#include "morer/eval_harness.hpp"
#include "morer/leiden.hpp"
#include "morer/problem_graph.hpp"
#include "morer/random.hpp"
#include "morer/repository.hpp"
#include "morer/version.hpp"
