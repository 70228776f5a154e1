#pragma once

// Umbrella header: the entire library.

#include "asymptotics.hpp"
#include "common.hpp"
#include "constraints.hpp"
#include "divergence.hpp"
#include "gof.hpp"
#include "io.hpp"
#include "lp.hpp"
#include "model.hpp"
#include "rng.hpp"
#include "scp.hpp"
#include "simulate.hpp"
#include "tuning.hpp"
#include "types.hpp"
