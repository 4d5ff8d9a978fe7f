#pragma once

#include <stdexcept>
#include <string>

namespace mvi {

enum class ErrKind {
  invalid_argument,
  io,
  config,
  numeric,
  unsupported,
};

class Error : public std::runtime_error {
 public:
  Error(ErrKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrKind kind() const { return kind_; }

 private:
  ErrKind kind_;
};

[[noreturn]] inline void fail(ErrKind kind, const std::string& msg) { throw Error(kind, msg); }

inline void require(bool cond, ErrKind kind, const std::string& msg) {
  if (!cond) fail(kind, msg);
}

inline void require_arg(bool cond, const std::string& msg) {
  require(cond, ErrKind::invalid_argument, msg);
}

}  // namespace mvi
