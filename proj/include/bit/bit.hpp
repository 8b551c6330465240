// Umbrella header.
#pragma once

#include "bit/autodiff.hpp"
#include "bit/ops.hpp"
#include "bit/data.hpp"
#include "bit/frame_branch.hpp"
#include "bit/action_branch.hpp"
#include "bit/resampler.hpp"
#include "bit/network.hpp"
#include "bit/supervision.hpp"
#include "bit/metrics.hpp"
#include "bit/harness/config.hpp"
#include "bit/harness/optimizer.hpp"
#include "bit/harness/checkpoint.hpp"
#include "bit/harness/trainer.hpp"
#include "bit/harness/bench.hpp"
