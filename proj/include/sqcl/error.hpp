#pragma once

#include <stdexcept>
#include <string>

namespace sqcl {

// Error taxonomy shared by the library and the C API status codes.
struct error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct dimension_error : error {
  using error::error;
};

struct format_error : error {
  using error::error;
};

struct config_error : error {
  using error::error;
};

struct protocol_error : error {
  using error::error;
};

struct io_error : error {
  using error::error;
};

struct numeric_error : error {
  using error::error;
};

}  // namespace sqcl
