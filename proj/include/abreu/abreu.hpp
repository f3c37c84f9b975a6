#pragma once

#include "abreu/error.hpp"
#include "abreu/polynomial.hpp"
#include "abreu/grid.hpp"
#include "abreu/calculus.hpp"
#include "abreu/lagrangian.hpp"
#include "abreu/functional.hpp"
#include "abreu/linear_system.hpp"
#include "abreu/ma_solver.hpp"
#include "abreu/lma_solver.hpp"
#include "abreu/abreu_solver.hpp"
#include "abreu/oracle.hpp"
#include "abreu/sections.hpp"
#include "abreu/io.hpp"
#include "abreu/svg.hpp"
#include "abreu/config.hpp"
#include "abreu/experiment.hpp"
