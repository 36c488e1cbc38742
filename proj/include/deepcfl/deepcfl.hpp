#pragma once

#include "deepcfl/archive.hpp"
#include "deepcfl/backbone.hpp"
#include "deepcfl/config.hpp"
#include "deepcfl/error.hpp"
#include "deepcfl/image.hpp"
#include "deepcfl/image_io.hpp"
#include "deepcfl/layers.hpp"
#include "deepcfl/losses.hpp"
#include "deepcfl/masking.hpp"
#include "deepcfl/metrics.hpp"
#include "deepcfl/networks.hpp"
#include "deepcfl/objective.hpp"
#include "deepcfl/optim.hpp"
#include "deepcfl/report.hpp"
#include "deepcfl/rng.hpp"
#include "deepcfl/tensor.hpp"
#include "deepcfl/trainer.hpp"
