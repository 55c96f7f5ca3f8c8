#pragma once

#include <stdexcept>
#include <string>

namespace factlab {

// Operand shapes do not line up.
struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// An API precondition was violated (backward twice, non-scalar loss, ...).
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A computation received or produced non-finite values.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// An index (token id, row, ...) is out of range.
struct IndexError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A data file failed validation; carries the offending id and rule.
struct ValidationError : std::runtime_error {
    ValidationError(const std::string& id, const std::string& rule, const std::string& detail)
        : std::runtime_error("validation failed for \"" + id + "\" (" + rule + "): " + detail),
          id(id),
          rule(rule) {}
    std::string id;
    std::string rule;
};

// A file could not be read, parsed, or matched against the expected layout.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace factlab
