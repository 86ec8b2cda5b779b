#include "ppcn/tensor.hpp"

namespace ppcn {

std::string Shape::str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + ")";
}

}  // namespace ppcn
