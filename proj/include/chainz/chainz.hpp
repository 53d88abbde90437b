#pragma once

#include "chainz/baselines.hpp"
#include "chainz/checkpoint.hpp"
#include "chainz/commands.hpp"
#include "chainz/data.hpp"
#include "chainz/error.hpp"
#include "chainz/experiment.hpp"
#include "chainz/kvconfig.hpp"
#include "chainz/linalg.hpp"
#include "chainz/loss.hpp"
#include "chainz/metrics.hpp"
#include "chainz/polynet.hpp"
#include "chainz/sweep.hpp"
#include "chainz/tape.hpp"
#include "chainz/train.hpp"
