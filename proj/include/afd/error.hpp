#pragma once

#include <atomic>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace afd {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when operand shapes do not conform; the message names the op and the shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Raised when an op sees a NaN/Inf input or produces a non-finite intermediate.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

std::string shape_str(const std::vector<std::size_t>& shape);

// Warnings go to a replaceable sink (stderr by default). The counter lets tests
// observe warnings without scraping output.
using WarningSink = std::function<void(std::string_view)>;
void set_warning_sink(WarningSink sink);
void warn(std::string_view message);
std::size_t warning_count();

}  // namespace afd
