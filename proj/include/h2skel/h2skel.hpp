#pragma once

#include "h2skel/common.hpp"
#include "h2skel/geometry.hpp"
#include "h2skel/structure.hpp"
#include "h2skel/kernels.hpp"
#include "h2skel/chebyshev.hpp"
#include "h2skel/dense.hpp"
#include "h2skel/h2matrix.hpp"
#include "h2skel/factorization.hpp"
#include "h2skel/solve.hpp"
