#pragma once

#include "voltctl/calibration.hpp"
#include "voltctl/config.hpp"
#include "voltctl/error.hpp"
#include "voltctl/netcase.hpp"
#include "voltctl/oracle.hpp"
#include "voltctl/pdgd.hpp"
#include "voltctl/powerflow.hpp"
#include "voltctl/qp.hpp"
#include "voltctl/report.hpp"
#include "voltctl/sensitivity.hpp"
#include "voltctl/sim.hpp"
#include "voltctl/trapezoid.hpp"
