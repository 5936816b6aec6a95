#pragma once
// Umbrella header for the rydopt library.

#include "rydopt/autograd.hpp"
#include "rydopt/core.hpp"
#include "rydopt/dynamics.hpp"
#include "rydopt/experiments.hpp"
#include "rydopt/optimize.hpp"
#include "rydopt/waveforms.hpp"
