#pragma once

#include "fmed/basis.hpp"
#include "fmed/coefficient.hpp"
#include "fmed/error.hpp"
#include "fmed/funcdata.hpp"
#include "fmed/inference.hpp"
#include "fmed/io.hpp"
#include "fmed/mediation.hpp"
#include "fmed/parallel.hpp"
#include "fmed/quadrature.hpp"
#include "fmed/random.hpp"
#include "fmed/regression.hpp"
#include "fmed/serialize.hpp"
#include "fmed/simulate.hpp"
