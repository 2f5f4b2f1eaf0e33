#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

#include "s2t/training.hpp"

namespace s2t::io {

/// Config text error. line() is 1-based, or 0 when no line is involved.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& what, int line)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

struct RunConfig {
  training::TrainConfig train;
  std::uint64_t seed = 0;
};

/// `key = value` lines; `#` starts a comment. Omitted keys keep their defaults.
RunConfig parse_config(const std::string& text);
RunConfig read_config(const std::string& path);

/// Every key with its current value, one per line, in a fixed order.
/// parse_config(format_config(c)) reproduces c.
std::string format_config(const RunConfig& cfg);

}  // namespace s2t::io
