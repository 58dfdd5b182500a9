#pragma once

#include "dermgen/prompt.hpp"

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace dermgen {

struct GenerationRequest {
    PromptInstantiation instantiation;
    uint64_t seed = 0;
    int width = 256;
    int height = 256;
    std::map<std::string, std::string> backend_params;
};

/// A text-to-image service. Implementations return encoded image bytes for
/// a prompt instantiation. Implementations must either be safe for
/// concurrent generate() calls or declare max_concurrency() == 1.
class GenerationBackend {
public:
    virtual ~GenerationBackend() = default;

    virtual std::string id() const = 0;
    virtual std::vector<unsigned char> generate(const GenerationRequest& request) = 0;
    virtual int max_concurrency() const { return 1; }
};

/// Validate the request, call the backend, and verify the response decodes
/// to the requested dimensions. Throws BackendUnavailable / BackendRejected
/// / DecodeError from the backend, DecodeError on a bad response.
std::vector<unsigned char> backend_generate(GenerationBackend& backend,
                                            const GenerationRequest& request);

/// Offline procedural stand-in for a hosted text-to-image model.
///
/// Every image is a pure function of (condition label, skin tone, seed,
/// width, height): a seed-keyed noise texture over a tone-keyed background
/// brightness, plus a class-keyed structured pattern (an oriented low
/// frequency wave and a soft blob) scaled by `class_signal_strength`.
/// At strength 0 the class leaves no statistical trace in the pixels; near
/// 1 classes are separable by simple pixel statistics, which is what the
/// end-to-end tests rely on.
class MockBackend : public GenerationBackend {
public:
    explicit MockBackend(double class_signal_strength);

    std::string id() const override { return "mock"; }
    std::vector<unsigned char> generate(const GenerationRequest& request) override;
    int max_concurrency() const override { return 0; } // stateless, unlimited

    double strength() const { return strength_; }

private:
    double strength_;
};

struct HttpBackendConfig {
    std::string endpoint;     // e.g. http://host:8080/generate
    std::string auth_token;   // optional bearer token; never logged
    int timeout_ms = 30000;
    int retries = 3;          // additional attempts after the first
    int retry_backoff_ms = 250;
};

/// Client for a hosted text-to-image service. Wire contract: POST a JSON
/// body {"prompt", "seed", "width", "height", ...backend_params} to the
/// endpoint; the service replies with encoded image bytes under an image/*
/// content type, or a JSON error body. Retries transport failures and
/// 408/429/5xx responses with backoff; 401/403 -> AuthError, other 4xx ->
/// BackendRejected (not retried).
class HttpBackend : public GenerationBackend {
public:
    struct Stats {
        std::atomic<uint64_t> attempts{0};
        std::atomic<uint64_t> retries{0};
    };

    explicit HttpBackend(HttpBackendConfig config);

    std::string id() const override;
    std::vector<unsigned char> generate(const GenerationRequest& request) override;
    int max_concurrency() const override { return 0; } // one connection per call

    const Stats& stats() const { return stats_; }

private:
    HttpBackendConfig config_;
    std::string host_base_;  // scheme://host[:port]
    std::string path_;
    Stats stats_;
};

std::unique_ptr<GenerationBackend> make_mock_backend(double class_signal_strength);
std::unique_ptr<GenerationBackend> make_http_backend(HttpBackendConfig config);

} // namespace dermgen
