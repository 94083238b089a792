#pragma once

#include <stdexcept>

namespace bikeod {

/// Input data that cannot be used as given: unparsable files, invalid
/// geometry, unknown ids, insufficient history.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace bikeod
