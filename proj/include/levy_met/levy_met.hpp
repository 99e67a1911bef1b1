#pragma once

#include "levy_met/analytic_oracle.hpp"
#include "levy_met/cocycle.hpp"
#include "levy_met/error.hpp"
#include "levy_met/experiment.hpp"
#include "levy_met/levy_measure.hpp"
#include "levy_met/levy_path.hpp"
#include "levy_met/linalg.hpp"
#include "levy_met/met_engine.hpp"
#include "levy_met/rng.hpp"
