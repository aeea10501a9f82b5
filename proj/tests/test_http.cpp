#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <thread>

#include <json.hpp>

#include "coplanner/errors.hpp"
#include "coplanner/http_backend.hpp"

// After the Eigen headers: resolv.h, pulled in by httplib, defines _res.
#include <httplib.h>

using namespace coplanner;

namespace {

// A local OpenAI-style server whose handlers each test case fills in.
class StubServer {
public:
    StubServer() {
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~StubServer() {
        server_.stop();
        thread_.join();
    }
    httplib::Server& server() { return server_; }
    std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

private:
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
};

HttpBackendConfig config_for(const std::string& url) {
    HttpBackendConfig c;
    c.base_url = url;
    c.model = "m";
    c.embedding_model = "e";
    c.backoff = std::chrono::milliseconds(1);
    c.timeout = std::chrono::seconds(5);
    return c;
}

}  // namespace

TEST_CASE("http: chat request body and completion parsing") {
    StubServer stub;
    nlohmann::json seen;
    std::string auth;
    stub.server().Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        seen = nlohmann::json::parse(req.body);
        auth = req.get_header_value("Authorization");
        res.set_content(R"({"choices":[{"message":{"role":"assistant","content":"Hint: go"}}]})", "application/json");
    });
    auto cfg = config_for(stub.url());
    cfg.api_key = "secret";
    HttpGateway gw(cfg);
    GenerationRequest r;
    r.prompt = "hello";
    r.temperature = 0.7;
    r.max_tokens = 64;
    r.seed = 9;
    CHECK(gw.generate(r) == "Hint: go");
    CHECK(seen["model"] == "m");
    CHECK(seen["messages"][0]["content"] == "hello");
    CHECK(seen["temperature"] == 0.7);
    CHECK(seen["max_tokens"] == 64);
    CHECK(seen["seed"] == 9);
    CHECK(auth == "Bearer secret");
}

TEST_CASE("http: embeddings, dimension learning and malformed answers") {
    StubServer stub;
    std::atomic<int> size{3};
    stub.server().Post("/v1/embeddings", [&](const httplib::Request& req, httplib::Response& res) {
        const auto input = nlohmann::json::parse(req.body)["input"].get<std::string>();
        if (input == "garbage") {
            res.set_content(R"({"data":[{"embedding":["x"]}]})", "application/json");
            return;
        }
        nlohmann::json v = nlohmann::json::array();
        for (int i = 0; i < size; ++i) v.push_back(0.5 * i);
        res.set_content(nlohmann::json{{"data", {{{"embedding", v}}}}}.dump(), "application/json");
    });
    stub.server().Post("/v1/chat/completions", [](const httplib::Request&, httplib::Response& res) {
        res.set_content(R"({"choices":[]})", "application/json");
    });
    HttpGateway gw(config_for(stub.url()));
    CHECK(gw.embedding_dim() == 3);
    const auto e = gw.embed("text");
    CHECK(e.size() == 3);
    CHECK(e[2] == 1.0);
    size = 4;
    CHECK_THROWS_AS(gw.embed("text"), ShapeError);
    CHECK_THROWS_AS(gw.embed("garbage"), ParseError);
    CHECK_THROWS_AS(gw.generate({"hi"}), ParseError);
    CHECK_THROWS_AS(gw.embed(""), UsageError);
}

TEST_CASE("http: non-2xx answers raise BackendError without retrying") {
    StubServer stub;
    std::atomic<int> calls{0};
    stub.server().Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
        ++calls;
        res.status = 400;
        res.set_content(R"({"error":"This model's maximum context length is 4096 tokens"})", "application/json");
    });
    HttpGateway gw(config_for(stub.url()));
    try {
        gw.generate({"long prompt"});
        FAIL("expected BackendError");
    } catch (const BackendError& e) {
        CHECK(e.status() == 400);
        CHECK(e.is_context_overflow());
    }
    CHECK(calls == 1);
}

TEST_CASE("http: unreachable server raises TransportError after the retries") {
    int port = 0;
    {
        httplib::Server probe;
        port = probe.bind_to_any_port("127.0.0.1");
    }
    auto cfg = config_for("http://127.0.0.1:" + std::to_string(port));
    cfg.max_attempts = 3;
    HttpGateway gw(cfg);
    try {
        gw.generate({"x"});
        FAIL("expected TransportError");
    } catch (const TransportError& e) {
        CHECK(e.attempts() == 3);
    }
}

TEST_CASE("http: base URL handling and environment") {
    CHECK_THROWS_AS(HttpGateway(HttpBackendConfig{}), ConfigError);
    CHECK_THROWS_AS(HttpGateway(config_for("localhost:8000")), ConfigError);

    StubServer stub;
    std::string path;
    stub.server().Post(R"(/api/v1/chat/completions)", [&](const httplib::Request& req, httplib::Response& res) {
        path = req.path;
        res.set_content(R"({"choices":[{"message":{"content":"ok"}}]})", "application/json");
    });
    HttpGateway gw(config_for(stub.url() + "/api/"));
    CHECK(gw.generate({"x"}) == "ok");
    CHECK(path == "/api/v1/chat/completions");
    CHECK(gw.identity().find("/m/e") != std::string::npos);

    ::setenv("COPLANNER_BASE_URL", "http://example.invalid:1", 1);
    ::setenv("COPLANNER_API_KEY", "k", 1);
    HttpBackendConfig cfg;
    cfg.apply_environment();
    CHECK(cfg.base_url == "http://example.invalid:1");
    CHECK(cfg.api_key == "k");
    HttpBackendConfig explicit_cfg;
    explicit_cfg.base_url = "http://other:2";
    explicit_cfg.apply_environment();
    CHECK(explicit_cfg.base_url == "http://other:2");
    ::unsetenv("COPLANNER_BASE_URL");
    ::unsetenv("COPLANNER_API_KEY");
}
