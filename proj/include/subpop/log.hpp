#pragma once

#include <iostream>
#include <string>

namespace subpop {

// Diagnostics go to stderr only; stdout stays clean for machine output.
inline void warn(const std::string& message) {
  std::cerr << "warning: " << message << "\n";
}

inline void info(const std::string& message) {
  std::cerr << message << "\n";
}

}  // namespace subpop
