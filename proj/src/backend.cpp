#include "dermgen/backend.hpp"

#include "dermgen/error.hpp"
#include "dermgen/http_client.hpp"
#include "dermgen/image.hpp"
#include "dermgen/log.hpp"
#include "dermgen/rng.hpp"

#include <json.hpp>
#include <opencv2/core.hpp>

#include <chrono>
#include <cmath>
#include <thread>

namespace dermgen {

using nlohmann::json;

std::vector<unsigned char> backend_generate(GenerationBackend& backend,
                                            const GenerationRequest& request) {
    require(request.width >= 32 && request.height >= 32, Errc::invalid_argument,
            "requested image dimensions must be at least 32x32");
    std::vector<unsigned char> bytes = backend.generate(request);
    cv::Mat img = decode_image(bytes);
    if (img.cols != request.width || img.rows != request.height) {
        raise(Errc::decode_error, "backend '" + backend.id() + "' returned a " +
                                      std::to_string(img.cols) + "x" + std::to_string(img.rows) +
                                      " image for a " + std::to_string(request.width) + "x" +
                                      std::to_string(request.height) + " request");
    }
    return bytes;
}

// ---------------------------------------------------------------------------
// MockBackend

MockBackend::MockBackend(double class_signal_strength) : strength_(class_signal_strength) {
    require(class_signal_strength >= 0.0 && class_signal_strength <= 1.0, Errc::invalid_argument,
            "class_signal_strength must lie in [0, 1]");
}

namespace {

// Background brightness per Fitzpatrick grade, light to dark.
constexpr double kToneLuma[kFitzpatrickGradeCount] = {208, 186, 162, 138, 114, 92};

struct ClassPattern {
    double angle;      // wave orientation
    double cycles;     // wave frequency, cycles per image width
    double phase;
    double cx, cy;     // blob center in normalized coords
    double radius;     // blob radius in normalized coords
    double amp[3];     // per-channel amplitude multipliers
};

ClassPattern class_pattern(const std::string& label) {
    Rng rng(derive_seed(fnv1a64(label), "mock-pattern"));
    ClassPattern p;
    p.angle = rng.uniform(0.0, 3.141592653589793);
    p.cycles = rng.uniform(1.5, 4.5);
    p.phase = rng.uniform(0.0, 6.283185307179586);
    p.cx = rng.uniform(0.3, 0.7);
    p.cy = rng.uniform(0.3, 0.7);
    p.radius = rng.uniform(0.12, 0.28);
    for (double& a : p.amp) a = rng.uniform(0.55, 1.0);
    return p;
}

} // namespace

std::vector<unsigned char> MockBackend::generate(const GenerationRequest& request) {
    const int w = request.width;
    const int h = request.height;
    const ClassPattern pattern = class_pattern(request.instantiation.condition_label);
    const double base = kToneLuma[static_cast<int>(request.instantiation.slots.skin_tone.grade)];

    Rng noise(derive_seed(request.seed, "mock-noise"));
    const double ca = std::cos(pattern.angle);
    const double sa = std::sin(pattern.angle);

    cv::Mat img(h, w, CV_8UC3);
    for (int y = 0; y < h; ++y) {
        unsigned char* row = img.ptr<unsigned char>(y);
        const double v = static_cast<double>(y) / h;
        for (int x = 0; x < w; ++x) {
            const double u = static_cast<double>(x) / w;
            const double wave =
                std::sin(6.283185307179586 * pattern.cycles * (u * ca + v * sa) + pattern.phase);
            const double du = u - pattern.cx;
            const double dv = v - pattern.cy;
            const double blob =
                2.0 * std::exp(-(du * du + dv * dv) / (2.0 * pattern.radius * pattern.radius)) - 1.0;
            const double shape = 0.7 * wave + 0.3 * blob;
            for (int c = 0; c < 3; ++c) {
                const double n = noise.uniform(-24.0, 24.0);
                const double value = base + strength_ * 55.0 * pattern.amp[c] * shape + n;
                row[3 * x + c] =
                    static_cast<unsigned char>(std::lround(std::clamp(value, 0.0, 255.0)));
            }
        }
    }
    return encode_png(img);
}

std::unique_ptr<GenerationBackend> make_mock_backend(double class_signal_strength) {
    return std::make_unique<MockBackend>(class_signal_strength);
}

// ---------------------------------------------------------------------------
// HttpBackend

HttpBackend::HttpBackend(HttpBackendConfig config) : config_(std::move(config)) {
    const std::string& url = config_.endpoint;
    size_t scheme_end = url.find("://");
    require(scheme_end != std::string::npos, Errc::invalid_config,
            "endpoint must be an http(s) URL: " + url);
    std::string scheme = url.substr(0, scheme_end);
    require(scheme == "http" || scheme == "https", Errc::invalid_config,
            "unsupported endpoint scheme: " + scheme);
    size_t path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) {
        host_base_ = url;
        path_ = "/";
    } else {
        host_base_ = url.substr(0, path_start);
        path_ = url.substr(path_start);
    }
    require(host_base_.size() > scheme_end + 3, Errc::invalid_config, "endpoint has no host: " + url);
}

std::string HttpBackend::id() const { return "http:" + host_base_ + path_; }

std::vector<unsigned char> HttpBackend::generate(const GenerationRequest& request) {
    json body;
    body["prompt"] = request.instantiation.rendered;
    body["seed"] = request.seed;
    body["width"] = request.width;
    body["height"] = request.height;
    for (const auto& [key, value] : request.backend_params) body[key] = value;
    const std::string payload = body.dump();

    std::string last_failure = "no attempts made";
    for (int attempt = 0; attempt <= config_.retries; ++attempt) {
        if (attempt > 0) {
            stats_.retries.fetch_add(1);
            std::this_thread::sleep_for(std::chrono::milliseconds(
                static_cast<long>(config_.retry_backoff_ms) * attempt));
            log_info("retrying generation request (attempt " + std::to_string(attempt + 1) + ")");
        }
        stats_.attempts.fetch_add(1);

        httplib::Client client(host_base_);
        client.set_connection_timeout(0, config_.timeout_ms * 1000LL);
        client.set_read_timeout(config_.timeout_ms / 1000, (config_.timeout_ms % 1000) * 1000);
        if (!config_.auth_token.empty()) client.set_bearer_token_auth(config_.auth_token);

        httplib::Result res = client.Post(path_, payload, "application/json");
        if (!res) {
            last_failure = "transport error: " + httplib::to_string(res.error());
            continue;
        }

        const int status = res->status;
        if (status == 200) {
            std::string content_type = res->get_header_value("Content-Type");
            if (content_type.rfind("image/", 0) != 0)
                raise(Errc::decode_error,
                      "backend returned non-image content type '" + content_type + "'");
            return std::vector<unsigned char>(res->body.begin(), res->body.end());
        }
        if (status == 401 || status == 403)
            raise(Errc::auth_error, "backend rejected credentials (HTTP " + std::to_string(status) + ")");
        if (status == 408 || status == 429 || status >= 500) {
            last_failure = "HTTP " + std::to_string(status);
            continue;
        }
        // Remaining 4xx: the service refused this prompt; retrying cannot help.
        log_warn("backend rejected prompt \"" + request.instantiation.rendered + "\" (HTTP " +
                 std::to_string(status) + ")");
        raise(Errc::backend_rejected, "HTTP " + std::to_string(status) + " for prompt \"" +
                                          request.instantiation.rendered + "\"");
    }
    raise(Errc::backend_unavailable,
          "endpoint " + host_base_ + path_ + " unavailable after " +
              std::to_string(config_.retries + 1) + " attempts (" + last_failure + ")");
}

std::unique_ptr<GenerationBackend> make_http_backend(HttpBackendConfig config) {
    return std::make_unique<HttpBackend>(std::move(config));
}

} // namespace dermgen
