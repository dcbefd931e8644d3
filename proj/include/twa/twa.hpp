#pragma once

#include "twa/coupling.hpp"
#include "twa/errors.hpp"
#include "twa/geometry.hpp"
#include "twa/observables.hpp"
#include "twa/oracles.hpp"
#include "twa/phase_space.hpp"
#include "twa/rng.hpp"
#include "twa/runner.hpp"
#include "twa/scenario.hpp"
#include "twa/sde.hpp"
