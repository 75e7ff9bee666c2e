#pragma once
// Gradient-weighted class activation maps over a detector backend, plus the
// thermal overlay rendering used as input to image-to-text captioning.

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "rfmkit/core.hpp"
#include "rfmkit/detection.hpp"
#include "rfmkit/image.hpp"

namespace rfm {

struct ActivationHeatmap {
    int width = 0;
    int height = 0;
    std::vector<double> values; // [y][x], in [0,1], max-normalized
    std::string source_layer;

    double at(int y, int x) const { return values[static_cast<size_t>(y) * width + x]; }
};

namespace detail {

// Bilinear upsample of an h x w grid to H x W, sampling at cell centers.
inline std::vector<double> bilinear_upsample(const std::vector<double>& grid, int h, int w,
                                             int out_h, int out_w) {
    std::vector<double> out(static_cast<size_t>(out_h) * out_w);
    const double sy = static_cast<double>(h) / out_h;
    const double sx = static_cast<double>(w) / out_w;
    for (int y = 0; y < out_h; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(h - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, h - 1);
        const double wy = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<double>(w - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, w - 1);
            const double wx = fx - x0;
            const double top = grid[static_cast<size_t>(y0) * w + x0] * (1 - wx) +
                               grid[static_cast<size_t>(y0) * w + x1] * wx;
            const double bottom = grid[static_cast<size_t>(y1) * w + x0] * (1 - wx) +
                                  grid[static_cast<size_t>(y1) * w + x1] * wx;
            out[static_cast<size_t>(y) * out_w + x] = top * (1 - wy) + bottom * wy;
        }
    }
    return out;
}

} // namespace detail

// Channel weights are the spatial global average of the score gradient; the
// map is the ReLU of the weighted channel sum, upsampled to image size and
// max-normalized. An all-zero map is the permitted degenerate case.
inline ActivationHeatmap grad_cam(const RasterImage& img, const Box& target,
                                  DetectorBackend& backend) {
    if (!backend.supports_cam())
        throw BackendFeatureUnavailable("detector backend exposes no activation layer");
    const CamFeatures features = backend.cam_features(img);
    const std::vector<double> score_grad = backend.cam_score_gradient(img, features, target);
    if (score_grad.size() != features.values.size())
        throw BackendFailure("score gradient shape does not match feature stack");

    const size_t plane = static_cast<size_t>(features.height) * features.width;
    std::vector<double> weights(features.channels, 0.0);
    for (int c = 0; c < features.channels; ++c) {
        double sum = 0.0;
        for (size_t i = 0; i < plane; ++i) sum += score_grad[c * plane + i];
        weights[c] = sum / static_cast<double>(plane);
    }

    std::vector<double> grid(plane, 0.0);
    for (size_t i = 0; i < plane; ++i) {
        double v = 0.0;
        for (int c = 0; c < features.channels; ++c)
            v += weights[c] * features.values[c * plane + i];
        grid[i] = v > 0.0 ? v : 0.0;
    }

    ActivationHeatmap map;
    map.width = img.width;
    map.height = img.height;
    map.source_layer = features.layer_name;
    map.values = detail::bilinear_upsample(grid, features.height, features.width, img.height,
                                           img.width);
    const double max_v = *std::max_element(map.values.begin(), map.values.end());
    if (max_v > 0.0)
        for (auto& v : map.values) v /= max_v;
    return map;
}

// Picks the score target for a CAM on this image: the ground-truth object's
// best-matching detection if any, else the highest-confidence detection,
// else the ground-truth box itself.
inline Box select_cam_target(const GroundTruth& gt, const DetectionResult& detections,
                             const FailureReport& report) {
    if (!report.matched_pairs.empty()) {
        const MatchedPair* best = &report.matched_pairs.front();
        for (const auto& p : report.matched_pairs)
            if (p.label_match && !best->label_match) best = &p;
        return detections.detections[best->detection_index].box;
    }
    if (!detections.detections.empty()) return detections.detections.front().box;
    if (!gt.objects.empty()) return gt.objects.front().box;
    throw EmptyInput("no target available for activation map");
}

// ---------------------------------------------------------------------------
// Thermal overlay
// ---------------------------------------------------------------------------

// Fixed 256-entry jet-style lookup table, built once from the classic
// piecewise-linear ramps so overlays are bit-reproducible.
inline const std::array<std::array<double, 3>, 256>& jet_colormap() {
    static const std::array<std::array<double, 3>, 256> lut = [] {
        std::array<std::array<double, 3>, 256> t{};
        auto ramp = [](double v) { return std::clamp(v, 0.0, 1.0); };
        for (int i = 0; i < 256; ++i) {
            const double x = i / 255.0;
            t[i][0] = ramp(1.5 - std::abs(4.0 * x - 3.0));
            t[i][1] = ramp(1.5 - std::abs(4.0 * x - 2.0));
            t[i][2] = ramp(1.5 - std::abs(4.0 * x - 1.0));
        }
        return t;
    }();
    return lut;
}

struct ThermalImage {
    RasterImage pixels;
    std::string base_image_id;
    std::string heatmap_ref;
};

inline ThermalImage render_thermal(const RasterImage& img, const ActivationHeatmap& heatmap,
                                   double opacity = 0.5) {
    if (heatmap.width != img.width || heatmap.height != img.height)
        throw DimensionMismatch("heatmap dimensions do not match image");
    if (opacity < 0.0 || opacity > 1.0) throw Error("opacity must be in [0,1]");
    const auto& lut = jet_colormap();
    ThermalImage out;
    out.pixels = img;
    out.base_image_id = img.source_id;
    out.heatmap_ref = heatmap.source_layer;
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            const int bin = std::clamp(static_cast<int>(heatmap.at(y, x) * 255.0 + 0.5), 0, 255);
            for (int c = 0; c < 3; ++c)
                out.pixels.at(y, x, c) =
                    (1.0 - opacity) * img.at(y, x, c) + opacity * lut[bin][c];
        }
    }
    return out;
}

} // namespace rfm
