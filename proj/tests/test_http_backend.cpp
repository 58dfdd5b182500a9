#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dermgen/backend.hpp"
#include "dermgen/error.hpp"
#include "dermgen/http_client.hpp"
#include "dermgen/image.hpp"

#include "test_support.hpp"

#include <json.hpp>

#include <atomic>
#include <thread>

using namespace dermgen;
using dermgen::test::make_condition;
using nlohmann::json;

namespace {

// In-process stub of the generation service.
class StubServer {
public:
    StubServer() {
        server_.Post("/generate", [this](const httplib::Request& req, httplib::Response& res) {
            ++hits_;
            last_body_ = req.body;
            last_auth_ = req.get_header_value("Authorization");
            if (fail_with_ > 0 && hits_ <= fail_until_) {
                res.status = fail_with_;
                res.set_content("{\"error\":\"injected\"}", "application/json");
                return;
            }
            json body = json::parse(req.body);
            int w = body.at("width").get<int>();
            int h = body.at("height").get<int>();
            if (truncate_) {
                res.set_content("not an image", "image/png");
                return;
            }
            cv::Mat img(h, w, CV_8UC3, cv::Scalar(10, 20, 30));
            auto bytes = encode_png(img);
            res.set_content(reinterpret_cast<const char*>(bytes.data()), bytes.size(),
                            "image/png");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~StubServer() {
        server_.stop();
        thread_.join();
    }

    std::string endpoint() const {
        return "http://127.0.0.1:" + std::to_string(port_) + "/generate";
    }
    void fail_first(int n, int status) {
        fail_until_ = n;
        fail_with_ = status;
    }
    void truncate_responses(bool on) { truncate_ = on; }
    int hits() const { return hits_; }
    std::string last_body() const { return last_body_; }
    std::string last_auth() const { return last_auth_; }

private:
    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
    std::atomic<int> hits_{0};
    int fail_until_ = 0;
    int fail_with_ = 0;
    bool truncate_ = false;
    std::string last_body_;
    std::string last_auth_;
};

GenerationRequest sample_request(int size = 20) {
    GenerationRequest req;
    req.instantiation = enumerate_instantiations(make_condition("warts"), 1, 9)[0];
    req.seed = 77;
    req.width = size;
    req.height = size;
    req.backend_params = {{"guidance", "7.5"}};
    return req;
}

HttpBackendConfig config_for(const StubServer& server) {
    HttpBackendConfig cfg;
    cfg.endpoint = server.endpoint();
    cfg.timeout_ms = 5000;
    cfg.retries = 3;
    cfg.retry_backoff_ms = 10;
    return cfg;
}

} // namespace

TEST_CASE("http backend posts the wire fields and decodes the reply") {
    StubServer server;
    HttpBackend backend(config_for(server));
    auto bytes = backend.generate(sample_request());
    cv::Mat img = decode_image(bytes);
    CHECK(img.rows == 20);
    CHECK(img.cols == 20);
    json body = json::parse(server.last_body());
    CHECK(body.at("prompt").get<std::string>() ==
          sample_request().instantiation.rendered);
    CHECK(body.at("seed").get<uint64_t>() == 77);
    CHECK(body.at("width").get<int>() == 20);
    CHECK(body.at("guidance").get<std::string>() == "7.5");
    CHECK(server.last_auth().empty()); // no token configured
}

TEST_CASE("bearer token is sent when configured") {
    StubServer server;
    HttpBackendConfig cfg = config_for(server);
    cfg.auth_token = "sekrit";
    HttpBackend backend(cfg);
    backend.generate(sample_request());
    CHECK(server.last_auth() == "Bearer sekrit");
}

TEST_CASE("retryable statuses are retried and then succeed") {
    StubServer server;
    server.fail_first(2, 429);
    HttpBackend backend(config_for(server));
    auto bytes = backend.generate(sample_request());
    CHECK(decode_image(bytes).rows == 20);
    CHECK(server.hits() == 3);
    CHECK(backend.stats().retries.load() == 2);
}

TEST_CASE("server errors exhaust retries into BackendUnavailable") {
    StubServer server;
    server.fail_first(1 << 20, 503);
    HttpBackendConfig cfg = config_for(server);
    cfg.retries = 2;
    HttpBackend backend(cfg);
    try {
        backend.generate(sample_request());
        FAIL("expected unavailability");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::backend_unavailable);
    }
    CHECK(server.hits() == 3); // first try + 2 retries
}

TEST_CASE("auth and client errors are not retried") {
    StubServer server;
    server.fail_first(1 << 20, 401);
    HttpBackend backend(config_for(server));
    try {
        backend.generate(sample_request());
        FAIL("expected auth error");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::auth_error);
    }
    CHECK(server.hits() == 1);

    StubServer reject;
    reject.fail_first(1 << 20, 400);
    HttpBackend backend2(config_for(reject));
    try {
        backend2.generate(sample_request());
        FAIL("expected rejection");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::backend_rejected);
    }
    CHECK(reject.hits() == 1);
}

TEST_CASE("a garbage image body is a decode error") {
    StubServer server;
    server.truncate_responses(true);
    HttpBackend backend(config_for(server));
    // the transport hands bytes through; the validating wrapper decodes
    try {
        backend_generate(backend, sample_request(32));
        FAIL("expected decode error");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::decode_error);
    }
}

TEST_CASE("an unreachable host is BackendUnavailable") {
    HttpBackendConfig cfg;
    cfg.endpoint = "http://127.0.0.1:1/generate"; // nothing listens on port 1
    cfg.retries = 1;
    cfg.retry_backoff_ms = 10;
    cfg.timeout_ms = 500;
    HttpBackend backend(cfg);
    try {
        backend.generate(sample_request());
        FAIL("expected unavailability");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::backend_unavailable);
    }
}
