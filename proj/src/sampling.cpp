#include "canon_hjb/sampling.hpp"

#include <boost/random/sobol.hpp>

namespace canon_hjb {

std::vector<double> sobol_unit(int dim, int count) {
  std::vector<double> out(static_cast<std::size_t>(dim) * count);
  if (dim <= 0 || count <= 0) return out;
  boost::random::sobol engine(static_cast<std::size_t>(dim));
  for (auto& u : out) u = static_cast<double>(engine()) * 0x1p-64;
  return out;
}

}  // namespace canon_hjb
