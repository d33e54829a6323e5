#pragma once

#include <stdexcept>
#include <string>

namespace cppi {

/// Invalid or inconsistent input parameters.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Date outside the schedule, or a broken date chain.
class ScheduleError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Grid construction failures (infeasible glue, degenerate intervals).
class GridError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Transition matrices that cannot be chained.
class CompositionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UnsupportedOrder : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace cppi
