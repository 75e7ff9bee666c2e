#pragma once
// Detector backend contract, IoU matching, detection-loss assembly, and the
// failure taxonomy (missed / hallucination / misclassification).

#include <algorithm>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "rfmkit/core.hpp"
#include "rfmkit/image.hpp"

namespace rfm {

struct Box {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

    bool valid() const { return x1 < x2 && y1 < y2; }
    double area() const { return (x2 - x1) * (y2 - y1); }

    auto tie() const { return std::tie(x1, y1, x2, y2); }
    bool operator==(const Box& o) const { return tie() == o.tie(); }
    bool operator<(const Box& o) const { return tie() < o.tie(); }

    // Pixel-center containment, used when rasterizing a box onto the grid.
    bool contains_pixel(int x, int y) const {
        return x + 0.5 >= x1 && x + 0.5 < x2 && y + 0.5 >= y1 && y + 0.5 < y2;
    }
};

inline double iou(const Box& a, const Box& b) {
    const double ix1 = std::max(a.x1, b.x1), iy1 = std::max(a.y1, b.y1);
    const double ix2 = std::min(a.x2, b.x2), iy2 = std::min(a.y2, b.y2);
    const double iw = ix2 - ix1, ih = iy2 - iy1;
    if (iw <= 0.0 || ih <= 0.0) return 0.0;
    const double inter = iw * ih;
    return inter / (a.area() + b.area() - inter);
}

struct Detection {
    Box box;
    std::string label;
    double confidence = 0.0;
};

// Descending confidence, ties broken by box lexicographic order then label,
// so matching is stable under permutation of equal-confidence detections.
inline void sort_detections(std::vector<Detection>& dets) {
    std::sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
        if (a.confidence != b.confidence) return a.confidence > b.confidence;
        if (!(a.box == b.box)) return a.box < b.box;
        return a.label < b.label;
    });
}

struct DetectionResult {
    std::vector<Detection> detections; // sorted by descending confidence
    std::string image_id;

    static DetectionResult make(std::vector<Detection> dets, std::string image_id) {
        DetectionResult r;
        r.detections = std::move(dets);
        r.image_id = std::move(image_id);
        sort_detections(r.detections);
        return r;
    }
};

struct GroundTruthObject {
    std::string label;
    Box box;
};

struct GroundTruth {
    std::vector<GroundTruthObject> objects;

    bool empty() const { return objects.empty(); }
};

struct DetectionLoss {
    double total = 0.0;
    double classification = 0.0;
    double bbox_regression = 0.0;
};

// Image-shaped gradient of a scalar loss, H x W x 3 like RasterImage pixels.
struct PixelGradient {
    int width = 0;
    int height = 0;
    std::vector<double> values;

    size_t index(int y, int x, int c) const {
        return (static_cast<size_t>(y) * width + x) * 3 + c;
    }
    double& at(int y, int x, int c) { return values[index(y, x, c)]; }
    double at(int y, int x, int c) const { return values[index(y, x, c)]; }
};

struct LossTerms {
    double classification = 0.0;
    double bbox_regression = 0.0;
    PixelGradient grad_classification;
    PixelGradient grad_bbox;
};

// Feature stack for class-activation mapping: channels x height x width.
struct CamFeatures {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> values;
    std::string layer_name;

    size_t index(int c, int y, int x) const {
        return (static_cast<size_t>(c) * height + y) * width + x;
    }
    double at(int c, int y, int x) const { return values[index(c, y, x)]; }
    double& at(int c, int y, int x) { return values[index(c, y, x)]; }
};

class DetectorBackend {
public:
    virtual ~DetectorBackend() = default;

    // Unfiltered detections; thresholding and sorting happen in detect().
    virtual DetectionResult detect_raw(const RasterImage& img) = 0;

    // Differentiable loss terms with pixel-space gradients for each term.
    virtual LossTerms loss_terms(const RasterImage& img, const GroundTruth& gt) = 0;

    // Weight of the bbox-regression term in the total loss.
    virtual double bbox_weight() const { return 1.0; }

    // Class-activation-mapping surface; optional.
    virtual bool supports_cam() const { return false; }
    virtual std::string cam_layer() const {
        throw BackendFeatureUnavailable("backend exposes no activation layer");
    }
    virtual CamFeatures cam_features(const RasterImage&) {
        throw BackendFeatureUnavailable("backend exposes no activation layer");
    }
    // d(score of target) / d(features), same shape as the feature stack.
    virtual std::vector<double> cam_score_gradient(const RasterImage&, const CamFeatures&,
                                                   const Box&) {
        throw BackendFeatureUnavailable("backend exposes no score gradient");
    }
};

inline DetectionResult detect(const RasterImage& img, DetectorBackend& backend,
                              double confidence_threshold = 0.5) {
    DetectionResult raw;
    try {
        raw = backend.detect_raw(img);
    } catch (const BackendFailure&) {
        throw;
    } catch (const std::exception& e) {
        throw BackendFailure("detector failed on image '" + img.source_id + "': " + e.what());
    }
    std::vector<Detection> kept;
    for (auto& d : raw.detections)
        if (d.confidence >= confidence_threshold) kept.push_back(d);
    auto result = DetectionResult::make(std::move(kept), img.source_id);
    return result;
}

inline std::pair<DetectionLoss, PixelGradient> compute_od_loss(const RasterImage& img,
                                                               const GroundTruth& gt,
                                                               DetectorBackend& backend) {
    if (gt.empty()) throw EmptyInput("ground truth must be non-empty");
    LossTerms terms = backend.loss_terms(img, gt);
    const double lambda = backend.bbox_weight();
    DetectionLoss loss;
    loss.classification = terms.classification;
    loss.bbox_regression = terms.bbox_regression;
    loss.total = terms.classification + lambda * terms.bbox_regression;
    if (!std::isfinite(loss.classification) || !std::isfinite(loss.bbox_regression) ||
        !std::isfinite(loss.total))
        throw NonFiniteLoss("detection loss is not finite");
    if (terms.grad_classification.values.size() != img.pixels.size() ||
        terms.grad_bbox.values.size() != img.pixels.size())
        throw DimensionMismatch("loss gradient shape does not match image");
    PixelGradient grad;
    grad.width = img.width;
    grad.height = img.height;
    grad.values.resize(img.pixels.size());
    for (size_t i = 0; i < grad.values.size(); ++i)
        grad.values[i] = terms.grad_classification.values[i] + lambda * terms.grad_bbox.values[i];
    if (!all_finite(grad.values))
        throw NonFiniteLoss("detection loss gradient is not finite");
    return {loss, std::move(grad)};
}

// ---------------------------------------------------------------------------
// Failure taxonomy
// ---------------------------------------------------------------------------

enum class FailureKind { none, missed, hallucination, misclassification };

inline std::string to_string(FailureKind kind) {
    switch (kind) {
        case FailureKind::none: return "none";
        case FailureKind::missed: return "missed";
        case FailureKind::hallucination: return "hallucination";
        case FailureKind::misclassification: return "misclassification";
    }
    return "none";
}

inline FailureKind failure_kind_from_string(const std::string& s) {
    if (s == "none") return FailureKind::none;
    if (s == "missed") return FailureKind::missed;
    if (s == "hallucination") return FailureKind::hallucination;
    if (s == "misclassification") return FailureKind::misclassification;
    throw IoError("unknown failure kind: '" + s + "'");
}

struct MatchedPair {
    int truth_index = -1;
    int detection_index = -1;
    double iou = 0.0;
    bool label_match = false;
};

struct FailureReport {
    FailureKind kind = FailureKind::none;
    std::vector<MatchedPair> matched_pairs;
    std::vector<int> unmatched_truths;
    std::vector<int> unmatched_detections;
    std::optional<double> confidence_of_object;

    bool has_missed() const { return !unmatched_truths.empty(); }
    bool has_hallucination() const { return !unmatched_detections.empty(); }
    bool has_misclassification() const {
        for (const auto& p : matched_pairs)
            if (!p.label_match) return true;
        return false;
    }
};

// Greedy IoU matching in descending-confidence order. A truth left unmatched
// is a miss, a matched pair with the wrong label is a misclassification, a
// detection matching no truth is a hallucination. The single `kind` tag takes
// the highest-priority failure present: missed > misclassification >
// hallucination.
inline FailureReport classify_failure(const DetectionResult& result, const GroundTruth& gt,
                                      double iou_threshold = 0.5) {
    std::vector<Detection> dets = result.detections;
    sort_detections(dets);

    FailureReport report;
    std::vector<bool> truth_taken(gt.objects.size(), false);
    for (int di = 0; di < static_cast<int>(dets.size()); ++di) {
        int best_truth = -1;
        double best_iou = 0.0;
        for (int ti = 0; ti < static_cast<int>(gt.objects.size()); ++ti) {
            if (truth_taken[ti]) continue;
            const double v = iou(dets[di].box, gt.objects[ti].box);
            if (v > best_iou) {
                best_iou = v;
                best_truth = ti;
            }
        }
        if (best_truth >= 0 && best_iou >= iou_threshold) {
            truth_taken[best_truth] = true;
            MatchedPair pair;
            pair.truth_index = best_truth;
            pair.detection_index = di;
            pair.iou = best_iou;
            pair.label_match = dets[di].label == gt.objects[best_truth].label;
            if (pair.label_match) {
                if (!report.confidence_of_object ||
                    dets[di].confidence > *report.confidence_of_object)
                    report.confidence_of_object = dets[di].confidence;
            }
            report.matched_pairs.push_back(pair);
        } else {
            report.unmatched_detections.push_back(di);
        }
    }
    for (int ti = 0; ti < static_cast<int>(gt.objects.size()); ++ti)
        if (!truth_taken[ti]) report.unmatched_truths.push_back(ti);

    if (report.has_missed()) report.kind = FailureKind::missed;
    else if (report.has_misclassification()) report.kind = FailureKind::misclassification;
    else if (report.has_hallucination()) report.kind = FailureKind::hallucination;
    else report.kind = FailureKind::none;
    return report;
}

// ---------------------------------------------------------------------------
// Serialization: one JSON object per image, one image per line
// ---------------------------------------------------------------------------

inline nlohmann::json detection_result_to_json(const DetectionResult& result) {
    nlohmann::json dets = nlohmann::json::array();
    for (const auto& d : result.detections) {
        dets.push_back({{"box", {d.box.x1, d.box.y1, d.box.x2, d.box.y2}},
                        {"label", d.label},
                        {"confidence", d.confidence}});
    }
    return {{"image_id", result.image_id}, {"detections", dets}};
}

inline DetectionResult detection_result_from_json(const nlohmann::json& j) {
    DetectionResult r;
    r.image_id = j.at("image_id").get<std::string>();
    for (const auto& dj : j.at("detections")) {
        Detection d;
        const auto& b = dj.at("box");
        d.box = Box{b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(),
                    b.at(3).get<double>()};
        d.label = dj.at("label").get<std::string>();
        d.confidence = dj.at("confidence").get<double>();
        r.detections.push_back(std::move(d));
    }
    sort_detections(r.detections);
    return r;
}

inline std::string detections_to_jsonl(const std::vector<DetectionResult>& results) {
    std::string out;
    for (const auto& r : results) {
        out += detection_result_to_json(r).dump();
        out += '\n';
    }
    return out;
}

inline std::vector<DetectionResult> detections_from_jsonl(const std::string& text) {
    std::vector<DetectionResult> out;
    size_t start = 0;
    while (start < text.size()) {
        size_t end = text.find('\n', start);
        if (end == std::string::npos) end = text.size();
        if (end > start)
            out.push_back(detection_result_from_json(
                nlohmann::json::parse(text.substr(start, end - start))));
        start = end + 1;
    }
    return out;
}

} // namespace rfm
