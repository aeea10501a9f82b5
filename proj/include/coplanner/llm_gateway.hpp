#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include <Eigen/Core>

namespace coplanner {

using Embedding = Eigen::VectorXd;

struct GenerationRequest {
    std::string prompt;
    double temperature = 0.0;
    int max_tokens = 512;
    std::optional<std::uint64_t> seed;
};

/// Text generation and embedding. Implementations must be safe to call from
/// several threads at once; calls are independent of each other.
class Gateway {
public:
    virtual ~Gateway() = default;

    /// Throws BackendError on a non-2xx answer and TransportError when no
    /// answer arrives.
    virtual std::string generate(const GenerationRequest& request) const = 0;
    virtual Embedding embed(std::string_view text) const = 0;
    virtual std::size_t embedding_dim() const = 0;
    /// Recorded in run manifests.
    virtual std::string identity() const = 0;
};

}  // namespace coplanner
