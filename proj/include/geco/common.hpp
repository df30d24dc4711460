#pragma once

#include <stdexcept>
#include <string>

namespace geco {

/// Thrown when tensor/image dimensions do not satisfy an operation's contract.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Thrown by dataset loaders on malformed annotation files. `where` is the
/// JSON field path of the offending entry.
struct SchemaError : std::runtime_error {
    std::string where;
    SchemaError(const std::string& where_, const std::string& msg)
        : std::runtime_error(where_ + ": " + msg), where(where_) {}
};

/// Thrown when an annotation references an image file that cannot be read.
struct MissingImage : std::runtime_error {
    explicit MissingImage(const std::string& path)
        : std::runtime_error("missing image: " + path) {}
};

/// Thrown by metric aggregation on empty inputs.
struct EmptyDataset : std::runtime_error {
    EmptyDataset() : std::runtime_error("empty dataset") {}
};

/// Thrown by a training step when the loss becomes NaN/Inf. Carries the
/// offending in-batch sample index.
struct NonFiniteLoss : std::runtime_error {
    int sample_index;
    explicit NonFiniteLoss(int idx)
        : std::runtime_error("non-finite loss at batch sample " + std::to_string(idx)),
          sample_index(idx) {}
};

#define GECO_CHECK(cond, msg)                          \
    do {                                               \
        if (!(cond)) throw ::geco::ShapeError(msg);    \
    } while (0)

}  // namespace geco
