#pragma once

#include "demslam/dem.hpp"
#include "demslam/dem_io.hpp"
#include "demslam/error.hpp"
#include "demslam/eval.hpp"
#include "demslam/experiment.hpp"
#include "demslam/factors.hpp"
#include "demslam/geometry.hpp"
#include "demslam/graph.hpp"
#include "demslam/graph_io.hpp"
#include "demslam/perturb.hpp"
#include "demslam/rng.hpp"
#include "demslam/sim.hpp"
#include "demslam/trajectory.hpp"
