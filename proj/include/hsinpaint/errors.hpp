#pragma once

#include <stdexcept>
#include <string>

namespace hsi {

// Error categories map one-to-one onto CLI exit codes.
enum class ErrorKind { Usage, Io, Shape, Certification, Numerical };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

inline Error usage_error(const std::string& m) { return Error(ErrorKind::Usage, m); }
inline Error io_error(const std::string& m) { return Error(ErrorKind::Io, m); }
inline Error shape_error(const std::string& m) { return Error(ErrorKind::Shape, m); }
inline Error numerical_error(const std::string& m) { return Error(ErrorKind::Numerical, m); }
inline Error certification_error(const std::string& m) { return Error(ErrorKind::Certification, m); }

}  // namespace hsi
