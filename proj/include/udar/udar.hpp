#pragma once

// Umbrella header.

#include "udar/array.hpp"
#include "udar/augment.hpp"
#include "udar/config.hpp"
#include "udar/data.hpp"
#include "udar/ensemble.hpp"
#include "udar/errors.hpp"
#include "udar/eval.hpp"
#include "udar/format.hpp"
#include "udar/losses.hpp"
#include "udar/manifest.hpp"
#include "udar/model.hpp"
#include "udar/rng.hpp"
#include "udar/synthgen.hpp"
#include "udar/tape.hpp"
#include "udar/trainer.hpp"
