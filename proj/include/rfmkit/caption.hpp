#pragma once
// Image-to-text captioning over thermal overlays. The system and user
// prompts are pinned, versioned resources; detection outcomes are never part
// of a caption request, by construction of the call surface.

#include <chrono>
#include <functional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "rfmkit/core.hpp"
#include "rfmkit/gradcam.hpp"

namespace rfm {
namespace prompts {

inline constexpr std::string_view kVersion = "paper-v1";

inline constexpr std::string_view kSystem = "You are a helpful assistant.";

inline constexpr std::string_view kCaptionUser =
    R"(Analyze this Grad-CAM overlay for an object detection model.
Based on the highlighted activation zones on the vehicle and background:
- What might have misled the model to misclassify the object in the scene? If there is no evidence to answer, omit the answer from your response.
- What might have misled the model to missing the object in the scene? If there is no evidence to answer, omit the answer from your response.
- What might have misled the model to hallucinate objects in the scene? If there is no evidence to answer, omit the answer from your response.
For the questions above, provide your reasoning.
Do not directly refer to the thermal overlay, instead refer to the model's attention.
Your answer should be in paragraph form and one to three sentences in length.
Your answer will be used as a caption to accompany the original image and explain the object detection model's performance.
Viewers will not be able to see the thermal overlay, and will only see the original image and your caption.
Your response should use clear and concise wording.)";

inline constexpr std::string_view kNegative =
    "low res, low resolution, poor quality, bad quality, worst quality, low quality, "
    "illustration, 3d, 2d, painting, cartoons, sketch";

inline constexpr std::string_view kVideoPositive =
    "high quality, high resolution, highly detailed, photo realistic scene";

inline constexpr std::string_view kVideoNegative = kNegative;

} // namespace prompts

struct CaptionRecord {
    std::string image_id;
    std::string text;
    std::string prompt_version;
    std::string model_id;
    std::string created_at;
};

class Image2TextBackend {
public:
    virtual ~Image2TextBackend() = default;
    virtual std::string caption(const ThermalImage& thermal, std::string_view system_prompt,
                                std::string_view user_prompt) = 0;
    virtual std::string model_id() const = 0;
};

struct CaptionClientConfig {
    int max_attempts = 3;
    std::chrono::milliseconds initial_backoff{250};
    double backoff_multiplier = 2.0;
    // Hooks so tests can observe retries and skip real sleeping.
    std::function<void(int attempt, const std::string& error)> on_retry;
    std::function<void(std::chrono::milliseconds)> sleeper;
};

// Calls the backend with the pinned prompt pair, retrying with exponential
// backoff. Only the thermal image and the two prompts ever reach the backend.
inline CaptionRecord generate_caption(const ThermalImage& thermal, Image2TextBackend& backend,
                                      const CaptionClientConfig& cfg = {}) {
    std::string last_error;
    std::chrono::milliseconds backoff = cfg.initial_backoff;
    for (int attempt = 1; attempt <= cfg.max_attempts; ++attempt) {
        try {
            CaptionRecord record;
            record.text = backend.caption(thermal, prompts::kSystem, prompts::kCaptionUser);
            if (record.text.empty()) throw BackendFailure("caption backend returned empty text");
            record.image_id = thermal.base_image_id;
            record.prompt_version = std::string(prompts::kVersion);
            record.model_id = backend.model_id();
            record.created_at = iso8601_utc_now();
            return record;
        } catch (const std::exception& e) {
            last_error = e.what();
            if (attempt == cfg.max_attempts) break;
            if (cfg.on_retry) cfg.on_retry(attempt, last_error);
            if (cfg.sleeper) cfg.sleeper(backoff);
            else std::this_thread::sleep_for(backoff);
            backoff = std::chrono::milliseconds(static_cast<long long>(
                static_cast<double>(backoff.count()) * cfg.backoff_multiplier));
        }
    }
    throw CaptionUnavailable("caption failed after " + std::to_string(cfg.max_attempts) +
                             " attempts: " + last_error);
}

inline nlohmann::json caption_record_to_json(const CaptionRecord& r) {
    return {{"image_id", r.image_id},
            {"text", r.text},
            {"prompt_version", r.prompt_version},
            {"model_id", r.model_id},
            {"created_at", r.created_at}};
}

inline CaptionRecord caption_record_from_json(const nlohmann::json& j) {
    CaptionRecord r;
    r.image_id = j.at("image_id").get<std::string>();
    r.text = j.at("text").get<std::string>();
    r.prompt_version = j.at("prompt_version").get<std::string>();
    r.model_id = j.at("model_id").get<std::string>();
    r.created_at = j.value("created_at", "");
    return r;
}

inline std::string captions_to_jsonl(const std::vector<CaptionRecord>& records) {
    std::string out;
    for (const auto& r : records) {
        out += caption_record_to_json(r).dump();
        out += '\n';
    }
    return out;
}

inline std::vector<CaptionRecord> captions_from_jsonl(const std::string& text) {
    std::vector<CaptionRecord> out;
    size_t start = 0;
    while (start < text.size()) {
        size_t end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        if (end > start)
            out.push_back(caption_record_from_json(
                nlohmann::json::parse(text.substr(start, end - start))));
        start = end + 1;
    }
    return out;
}

} // namespace rfm
