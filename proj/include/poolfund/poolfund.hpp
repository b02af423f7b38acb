#pragma once

#include "poolfund/error.hpp"
#include "poolfund/grid_io.hpp"
#include "poolfund/market_data.hpp"
#include "poolfund/market_model.hpp"
#include "poolfund/mortality.hpp"
#include "poolfund/schedule.hpp"
#include "poolfund/simulator.hpp"
#include "poolfund/solver.hpp"
