#pragma once

// Umbrella header for the full simulator.

#include "agsd/attacks.hpp"
#include "agsd/config.hpp"
#include "agsd/data.hpp"
#include "agsd/defenses.hpp"
#include "agsd/harness.hpp"
#include "agsd/nn.hpp"
#include "agsd/rng.hpp"
#include "agsd/spectral.hpp"
#include "agsd/vec.hpp"
