#pragma once

#include <stdexcept>
#include <string>

namespace sae {

/// Base class for every error raised by the library. The CLI maps the
/// category onto its exit code.
class Error : public std::runtime_error {
public:
    enum class Category { Config, Data, Numerical };

    Error(Category category, const std::string& what)
        : std::runtime_error(what), category_(category) {}

    Category category() const noexcept { return category_; }

private:
    Category category_;
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(Category::Config, what) {}
};

/// Malformed input files, schema violations, survey/population mismatches.
class DataError : public Error {
public:
    explicit DataError(const std::string& what) : Error(Category::Data, what) {}
};

/// Degenerate weights, non-finite values, overlap violations.
class NumericalError : public Error {
public:
    explicit NumericalError(const std::string& what) : Error(Category::Numerical, what) {}
};

inline const char* category_name(Error::Category c) {
    switch (c) {
    case Error::Category::Config: return "config";
    case Error::Category::Data: return "data";
    case Error::Category::Numerical: return "numerical";
    }
    return "unknown";
}

} // namespace sae
