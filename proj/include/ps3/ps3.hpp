#pragma once

// Umbrella header.

#include "ps3/baselines.hpp"
#include "ps3/common.hpp"
#include "ps3/config.hpp"
#include "ps3/evaluation.hpp"
#include "ps3/features.hpp"
#include "ps3/imaging.hpp"
#include "ps3/inference.hpp"
#include "ps3/learning.hpp"
#include "ps3/model.hpp"
#include "ps3/model_io.hpp"
#include "ps3/pipeline.hpp"
#include "ps3/superpixels.hpp"
#include "ps3/synth.hpp"
