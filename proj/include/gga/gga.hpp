#pragma once

// Umbrella header.

#include "gga/autodiff.hpp"
#include "gga/config.hpp"
#include "gga/data.hpp"
#include "gga/error.hpp"
#include "gga/gradcheck.hpp"
#include "gga/graph.hpp"
#include "gga/losses.hpp"
#include "gga/metrics.hpp"
#include "gga/model.hpp"
#include "gga/pipeline.hpp"
#include "gga/ple.hpp"
#include "gga/rng.hpp"
#include "gga/tensor.hpp"
#include "gga/trainer.hpp"
