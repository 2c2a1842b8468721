#pragma once

#include <stdexcept>
#include <string>

namespace civic {

/// Malformed or insufficient input data.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite values or divergence during numerical work.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace civic
