#include "bdb/error.hpp"

#include <iostream>

namespace bdb {

void warn(const std::string& message) { std::cerr << "[bdb] warning: " << message << '\n'; }

}  // namespace bdb
