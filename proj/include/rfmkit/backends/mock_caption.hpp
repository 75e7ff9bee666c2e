#pragma once
// Deterministic image-to-text backends: a fixture-lookup mock for tests and
// pipelines without a hosted model, and a thin OpenAI-compatible HTTP client.

#include <cstdlib>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rfmkit/caption.hpp"
#include "rfmkit/core.hpp"
#include "rfmkit/gradcam.hpp"
#include "rfmkit/png_io.hpp"

namespace rfm {

// Looks captions up by image id, falling back to a default text. Records
// every request payload so tests can inspect exactly what a backend sees.
class MockCaptionBackend : public Image2TextBackend {
public:
    struct CapturedRequest {
        std::string image_id;
        std::string system_prompt;
        std::string user_prompt;
        int image_width = 0;
        int image_height = 0;
    };

    explicit MockCaptionBackend(std::map<std::string, std::string> fixtures = {},
                                std::string default_text =
                                    "The model's attention is spread across the scene.")
        : fixtures_(std::move(fixtures)), default_text_(std::move(default_text)) {}

    void fail_next(int n) { failures_remaining_ = n; }

    std::string caption(const ThermalImage& thermal, std::string_view system_prompt,
                        std::string_view user_prompt) override {
        requests_.push_back({thermal.base_image_id, std::string(system_prompt),
                             std::string(user_prompt), thermal.pixels.width,
                             thermal.pixels.height});
        if (failures_remaining_ > 0) {
            --failures_remaining_;
            throw BackendFailure("mock caption backend scripted failure");
        }
        const auto it = fixtures_.find(thermal.base_image_id);
        return it != fixtures_.end() ? it->second : default_text_;
    }

    std::string model_id() const override { return "mock-i2t"; }

    const std::vector<CapturedRequest>& requests() const { return requests_; }

private:
    std::map<std::string, std::string> fixtures_;
    std::string default_text_;
    int failures_remaining_ = 0;
    std::vector<CapturedRequest> requests_;
};

// ---------------------------------------------------------------------------
// OpenAI-compatible chat-completions client
// ---------------------------------------------------------------------------

struct OpenAiCaptionConfig {
    std::string endpoint_host;          // e.g. "api.example.com"
    int endpoint_port = 443;
    std::string endpoint_path = "/v1/chat/completions";
    std::string model = "gpt-4o";
    std::string api_key_env = "RFM_CAPTION_API_KEY"; // name only; never persisted
    int timeout_seconds = 60;
};

namespace detail {

inline std::string base64_encode(const std::vector<std::uint8_t>& bytes) {
    static constexpr char table[] =
        "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((bytes.size() + 2) / 3 * 4);
    for (size_t i = 0; i < bytes.size(); i += 3) {
        const unsigned b0 = bytes[i];
        const unsigned b1 = i + 1 < bytes.size() ? bytes[i + 1] : 0;
        const unsigned b2 = i + 2 < bytes.size() ? bytes[i + 2] : 0;
        out += table[b0 >> 2];
        out += table[((b0 & 0x3) << 4) | (b1 >> 4)];
        out += i + 1 < bytes.size() ? table[((b1 & 0xF) << 2) | (b2 >> 6)] : '=';
        out += i + 2 < bytes.size() ? table[b2 & 0x3F] : '=';
    }
    return out;
}

} // namespace detail

// Request body for an OpenAI-style vision chat call. Pure so the payload can
// be unit-tested offline; the image travels as a base64 PNG data URL.
inline nlohmann::json build_openai_caption_payload(const ThermalImage& thermal,
                                                   std::string_view system_prompt,
                                                   std::string_view user_prompt,
                                                   const std::string& model) {
    const std::string data_url =
        "data:image/png;base64," + detail::base64_encode(encode_png(thermal.pixels));
    return {{"model", model},
            {"messages",
             {{{"role", "system"}, {"content", std::string(system_prompt)}},
              {{"role", "user"},
               {"content",
                {{{"type", "text"}, {"text", std::string(user_prompt)}},
                 {{"type", "image_url"}, {"image_url", {{"url", data_url}}}}}}}}}};
}

class OpenAiCaptionBackend : public Image2TextBackend {
public:
    explicit OpenAiCaptionBackend(OpenAiCaptionConfig cfg) : cfg_(std::move(cfg)) {}

    std::string caption(const ThermalImage& thermal, std::string_view system_prompt,
                        std::string_view user_prompt) override;

    std::string model_id() const override { return cfg_.model; }

private:
    OpenAiCaptionConfig cfg_;
};

} // namespace rfm

// httplib pulls in system networking headers; keep it out of the common path.
#ifndef RFM_NO_HTTP
#include <httplib.h>

namespace rfm {

inline std::string OpenAiCaptionBackend::caption(const ThermalImage& thermal,
                                                 std::string_view system_prompt,
                                                 std::string_view user_prompt) {
    const char* key = std::getenv(cfg_.api_key_env.c_str());
    if (!key || !*key)
        throw BackendFailure("caption credentials not found in environment variable '" +
                             cfg_.api_key_env + "'");
    const nlohmann::json payload =
        build_openai_caption_payload(thermal, system_prompt, user_prompt, cfg_.model);
    httplib::Client client(cfg_.endpoint_host, cfg_.endpoint_port);
    client.set_read_timeout(cfg_.timeout_seconds, 0);
    client.set_default_headers({{"Authorization", std::string("Bearer ") + key}});
    auto res = client.Post(cfg_.endpoint_path, payload.dump(), "application/json");
    if (!res)
        throw BackendFailure("caption request failed: " + httplib::to_string(res.error()));
    if (res->status != 200)
        throw BackendFailure("caption request returned HTTP " + std::to_string(res->status));
    try {
        const auto body = nlohmann::json::parse(res->body);
        return body.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const std::exception& e) {
        throw BackendFailure(std::string("caption response malformed: ") + e.what());
    }
}

} // namespace rfm
#endif // RFM_NO_HTTP
