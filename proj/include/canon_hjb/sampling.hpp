#pragma once

#include <vector>

namespace canon_hjb {

/// First `count` points of the Sobol sequence in [0,1)^dim, row-major.
std::vector<double> sobol_unit(int dim, int count);

}  // namespace canon_hjb
