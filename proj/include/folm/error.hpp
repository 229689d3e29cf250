#pragma once

#include <stdexcept>
#include <string>

namespace folm {

// Error categories; values double as process exit codes for the CLI.
enum class errc { usage = 1, data = 2, internal = 3 };

class Error : public std::runtime_error {
 public:
  Error(errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  errc code() const noexcept { return code_; }

 private:
  errc code_;
};

[[noreturn]] inline void throw_usage(const std::string& msg) { throw Error(errc::usage, msg); }
[[noreturn]] inline void throw_data(const std::string& msg) { throw Error(errc::data, msg); }
[[noreturn]] inline void throw_internal(const std::string& msg) { throw Error(errc::internal, msg); }

}  // namespace folm
