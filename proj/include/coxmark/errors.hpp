#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace coxmark {

// Bad geometry or model input (degenerate polygon, nonpositive parameter, ...).
class invalid_domain_error : public std::invalid_argument {
public:
    explicit invalid_domain_error(const std::string& what) : std::invalid_argument(what) {}
};

// Assembly of a discrete operator failed (degenerate triangle, mismatched rows, ...).
class assembly_error : public std::runtime_error {
public:
    explicit assembly_error(const std::string& what) : std::runtime_error(what) {}
};

// A factorization or evaluation hit a numerically degenerate state.
class numerical_error : public std::runtime_error {
public:
    explicit numerical_error(const std::string& what) : std::runtime_error(what) {}
};

// Newton iteration did not converge; carries the last iterate for diagnostics.
class nonconvergence_error : public std::runtime_error {
public:
    nonconvergence_error(const std::string& what, std::vector<double> last)
        : std::runtime_error(what), last_iterate(std::move(last)) {}
    std::vector<double> last_iterate;
};

// File or configuration problem (missing file, bad column, unparsable JSON).
class io_error : public std::runtime_error {
public:
    explicit io_error(const std::string& what) : std::runtime_error(what) {}
};

} // namespace coxmark
