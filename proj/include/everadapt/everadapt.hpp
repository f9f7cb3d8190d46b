#pragma once

// Umbrella header.

#include "everadapt/data.hpp"
#include "everadapt/errors.hpp"
#include "everadapt/evaluation.hpp"
#include "everadapt/experiment.hpp"
#include "everadapt/graph.hpp"
#include "everadapt/losses.hpp"
#include "everadapt/model.hpp"
#include "everadapt/normalization.hpp"
#include "everadapt/ops.hpp"
#include "everadapt/rng.hpp"
#include "everadapt/tensor.hpp"
#include "everadapt/trainer.hpp"
