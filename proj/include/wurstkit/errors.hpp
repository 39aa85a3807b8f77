#pragma once

#include <stdexcept>
#include <string>

namespace wurstkit {

// Tensor shapes or configs that do not fit together.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Scalar argument outside its mathematical domain (t outside [0,1], rates, ...).
struct DomainError : std::domain_error {
    using std::domain_error::domain_error;
};

// Something the operation depends on is missing: upstream checkpoint,
// extractor weights, an empty corpus.
struct PreconditionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed files: checkpoints, manifests, config documents.
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Training produced NaN/Inf.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline void require_rate(double rate, const char* what) {
    if (!(rate >= 0.0 && rate <= 1.0))
        throw DomainError(std::string(what) + " must lie in [0,1], got " + std::to_string(rate));
}

}  // namespace wurstkit
