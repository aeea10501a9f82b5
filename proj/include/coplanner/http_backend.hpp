#pragma once

#include <atomic>
#include <chrono>
#include <string>

#include "coplanner/llm_gateway.hpp"

namespace coplanner {

struct HttpBackendConfig {
    std::string base_url;  // e.g. http://localhost:8000
    std::string api_key;
    std::string model = "default";
    std::string embedding_model = "default";
    std::size_t embedding_dim = 0;  // 0: learn it from the first response
    int max_attempts = 3;
    std::chrono::milliseconds backoff{500};
    std::chrono::seconds timeout{120};

    /// Fills base_url and api_key from COPLANNER_BASE_URL / COPLANNER_API_KEY
    /// when they are not already set.
    void apply_environment();
};

/// Client for OpenAI-compatible /v1/chat/completions and /v1/embeddings.
class HttpGateway final : public Gateway {
public:
    explicit HttpGateway(HttpBackendConfig config);

    std::string generate(const GenerationRequest& request) const override;
    Embedding embed(std::string_view text) const override;
    std::size_t embedding_dim() const override;
    std::string identity() const override;

private:
    std::string post(const std::string& route, const std::string& body) const;

    HttpBackendConfig config_;
    std::string scheme_host_port_;
    std::string path_prefix_;
    mutable std::atomic<std::size_t> dim_;
};

}  // namespace coplanner
