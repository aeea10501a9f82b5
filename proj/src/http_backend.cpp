#include "coplanner/http_backend.hpp"

#include <cmath>
#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "coplanner/errors.hpp"

namespace coplanner {

void HttpBackendConfig::apply_environment() {
    if (base_url.empty())
        if (const char* v = std::getenv("COPLANNER_BASE_URL")) base_url = v;
    if (api_key.empty())
        if (const char* v = std::getenv("COPLANNER_API_KEY")) api_key = v;
}

HttpGateway::HttpGateway(HttpBackendConfig config) : config_(std::move(config)), dim_(config_.embedding_dim) {
    if (config_.base_url.empty()) throw ConfigError("HTTP backend needs a base URL (set COPLANNER_BASE_URL or --base-url)");
    if (config_.max_attempts < 1) throw ConfigError("max_attempts must be at least 1");
    const auto scheme_end = config_.base_url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("base URL '" + config_.base_url + "' has no scheme");
    const auto path_start = config_.base_url.find('/', scheme_end + 3);
    scheme_host_port_ = config_.base_url.substr(0, path_start);
    if (path_start != std::string::npos) path_prefix_ = config_.base_url.substr(path_start);
    while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
}

std::string HttpGateway::post(const std::string& route, const std::string& body) const {
    const std::string path = path_prefix_ + route;
    httplib::Headers headers;
    if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

    std::string last_error;
    for (int attempt = 1; attempt <= config_.max_attempts; ++attempt) {
        httplib::Client client(scheme_host_port_);
        client.set_connection_timeout(config_.timeout);
        client.set_read_timeout(config_.timeout);
        client.set_write_timeout(config_.timeout);
        auto res = client.Post(path, headers, body, "application/json");
        if (res) {
            if (res->status < 200 || res->status >= 300)
                throw BackendError(res->status, res->body.substr(0, 300));
            return res->body;
        }
        last_error = "POST " + scheme_host_port_ + path + " failed: " + httplib::to_string(res.error());
        if (attempt < config_.max_attempts)
            std::this_thread::sleep_for(config_.backoff * (1 << (attempt - 1)));
    }
    throw TransportError(last_error, config_.max_attempts);
}

std::string HttpGateway::generate(const GenerationRequest& request) const {
    if (request.prompt.empty()) throw UsageError("generate: empty prompt");
    nlohmann::json body = {{"model", config_.model},
                           {"messages", nlohmann::json::array({{{"role", "user"}, {"content", request.prompt}}})},
                           {"temperature", request.temperature},
                           {"max_tokens", request.max_tokens},
                           {"stream", false}};
    if (request.seed) body["seed"] = *request.seed;
    const auto raw = post("/v1/chat/completions", body.dump());
    const auto j = nlohmann::json::parse(raw, nullptr, false);
    if (j.is_discarded() || !j.contains("choices") || !j["choices"].is_array() || j["choices"].empty())
        throw ParseError("chat completion response has no choices: " + raw.substr(0, 200));
    const auto& message = j["choices"][0].value("message", nlohmann::json::object());
    if (!message.contains("content") || !message["content"].is_string())
        throw ParseError("chat completion choice has no message content");
    return message["content"].get<std::string>();
}

Embedding HttpGateway::embed(std::string_view text) const {
    if (text.empty()) throw UsageError("embed: empty text");
    const nlohmann::json body = {{"model", config_.embedding_model}, {"input", std::string(text)}};
    const auto raw = post("/v1/embeddings", body.dump());
    const auto j = nlohmann::json::parse(raw, nullptr, false);
    if (j.is_discarded() || !j.contains("data") || !j["data"].is_array() || j["data"].empty() ||
        !j["data"][0].contains("embedding"))
        throw ParseError("embedding response has no data[0].embedding: " + raw.substr(0, 200));
    std::vector<double> values;
    try {
        values = j["data"][0]["embedding"].get<std::vector<double>>();
    } catch (const nlohmann::json::exception&) {
        throw ParseError("embedding response: data[0].embedding is not a list of numbers");
    }
    for (double v : values)
        if (!std::isfinite(v)) throw ParseError("embedding response contains a non-finite value");
    if (dim_ == 0) dim_ = values.size();
    if (values.size() != dim_)
        throw ShapeError("embedding dimension changed: expected " + std::to_string(dim_) + ", got " +
                         std::to_string(values.size()));
    return Eigen::Map<const Eigen::VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
}

std::size_t HttpGateway::embedding_dim() const {
    if (dim_ == 0) embed("dimension probe");
    return dim_;
}

std::string HttpGateway::identity() const {
    return "openai-compatible/" + config_.base_url + "/" + config_.model + "/" + config_.embedding_model;
}

}  // namespace coplanner
