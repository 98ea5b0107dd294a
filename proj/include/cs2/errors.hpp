#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace cs2 {

// Error categories map 1:1 onto CLI exit codes (config=2, data=3, numeric=4).
enum class ErrorKind { config, data, numeric };

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, std::string msg)
      : std::runtime_error(std::move(msg)), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

private:
  ErrorKind kind_;
};

namespace detail {

inline void concat_into(std::ostringstream&) {}

template <typename T, typename... Rest>
void concat_into(std::ostringstream& oss, T&& v, Rest&&... rest) {
  oss << std::forward<T>(v);
  concat_into(oss, std::forward<Rest>(rest)...);
}

template <typename... Args>
std::string concat(Args&&... args) {
  std::ostringstream oss;
  concat_into(oss, std::forward<Args>(args)...);
  return oss.str();
}

}  // namespace detail

template <typename... Args>
[[noreturn]] void raise_config(Args&&... args) {
  throw Error(ErrorKind::config, detail::concat(std::forward<Args>(args)...));
}

template <typename... Args>
[[noreturn]] void raise_data(Args&&... args) {
  throw Error(ErrorKind::data, detail::concat(std::forward<Args>(args)...));
}

template <typename... Args>
[[noreturn]] void raise_numeric(Args&&... args) {
  throw Error(ErrorKind::numeric, detail::concat(std::forward<Args>(args)...));
}

}  // namespace cs2
