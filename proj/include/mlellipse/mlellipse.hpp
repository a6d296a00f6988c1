#pragma once

#include "mlellipse/baseline.hpp"
#include "mlellipse/clip.hpp"
#include "mlellipse/error.hpp"
#include "mlellipse/experiment.hpp"
#include "mlellipse/forward.hpp"
#include "mlellipse/geometry.hpp"
#include "mlellipse/io.hpp"
#include "mlellipse/likelihood.hpp"
#include "mlellipse/optimize.hpp"
#include "mlellipse/pmf.hpp"
#include "mlellipse/random.hpp"
#include "mlellipse/uncertainty.hpp"
