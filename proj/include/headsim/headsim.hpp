#pragma once

// Umbrella header.

#include "headsim/core.hpp"
#include "headsim/synthworld.hpp"
#include "headsim/io.hpp"
#include "headsim/relations.hpp"
#include "headsim/model.hpp"
#include "headsim/objectives.hpp"
#include "headsim/metrics.hpp"
#include "headsim/pipeline.hpp"
#include "headsim/synthvideo.hpp"
#include "headsim/optim.hpp"
#include "headsim/checkpoint.hpp"
#include "headsim/plot.hpp"
#include "headsim/config.hpp"
#include "headsim/runner.hpp"
