#pragma once

#include <stdexcept>
#include <string>

namespace pdscan {

// Root of every error raised by the library. Subclasses name the contract
// that was broken so callers can map them to exit codes or HTTP statuses.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ArgumentError : public Error { using Error::Error; };
class TuneError : public Error { using Error::Error; };
class StateError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class EmptySweepError : public Error { using Error::Error; };
class FormatError : public Error { using Error::Error; };
class CorruptError : public Error { using Error::Error; };
class UnreachableError : public Error { using Error::Error; };

class IoError : public Error {
public:
    IoError(const std::string& what, std::string path)
        : Error(what + ": " + path), path_(std::move(path)) {}
    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

}  // namespace pdscan
