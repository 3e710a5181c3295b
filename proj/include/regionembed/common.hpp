#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace regionembed {

// Input data failed validation (bad file, unknown identifier, bad value).
// Maps to process exit code 1 at the CLI boundary.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// An API precondition was violated by the caller.
class ContractError : public std::logic_error {
public:
    explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

// A computation produced a non-finite value. Maps to exit code 2.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Dense row-major matrix of doubles. Plain storage for data that does not
// participate in gradient computation (counts, correlations, embeddings
// after training).
struct Dense {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    Dense() = default;
    Dense(int r, int c, double fill = 0.0) : rows(r), cols(c), v(static_cast<size_t>(r) * c, fill) {}

    double& at(int i, int j) { return v[static_cast<size_t>(i) * cols + j]; }
    double at(int i, int j) const { return v[static_cast<size_t>(i) * cols + j]; }
    const double* row(int i) const { return v.data() + static_cast<size_t>(i) * cols; }
    double* row(int i) { return v.data() + static_cast<size_t>(i) * cols; }
};

// 64-bit FNV-1a. Used for content hashes in run manifests and for deriving
// named substreams from the root seed.
inline uint64_t fnv1a64(const void* data, size_t len, uint64_t h = 1469598103934665603ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

inline uint64_t fnv1a64(const std::string& s, uint64_t h = 1469598103934665603ull) {
    return fnv1a64(s.data(), s.size(), h);
}

}  // namespace regionembed
