#pragma once

#include <stdexcept>
#include <string>

namespace leagcn {

// Error categories map onto the CLI exit codes: config/usage -> 1,
// data/IO -> 2, numerical failure -> 3.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
    using Error::Error;
};

struct DataError : Error {
    using Error::Error;
};

struct NumericError : Error {
    using Error::Error;
};

}  // namespace leagcn
