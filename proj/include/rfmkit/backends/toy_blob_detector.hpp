#pragma once
// Desk-scale reference detector: finds bright blobs by luma threshold and
// connected components, and exposes a fully differentiable loss so guidance
// gradients can be checked against finite differences.
//
// Loss per ground-truth object:
//   classification = 0.5 * (1 - s)^2 with s = mean box luma - mean ring luma,
//   so the loss grows as the object's contrast against its surround drops;
//   bbox_regression = squared distance between the luma centroid around the
//   box and the box center, normalized by the box diagonal.

#include <algorithm>
#include <cmath>
#include <deque>
#include <string>
#include <utility>
#include <vector>

#include "rfmkit/core.hpp"
#include "rfmkit/detection.hpp"
#include "rfmkit/image.hpp"

namespace rfm {

struct ToyBlobDetectorConfig {
    double luma_threshold = 0.5;  // pixel belongs to a blob if luma > threshold
    int min_area = 9;             // smaller components are noise
    int ring_width = 3;           // contrast ring around a box, in pixels
    double bbox_weight = 1.0;     // lambda in total = cls + lambda * reg
    std::string object_label = "car";
    double truck_aspect = 2.0;    // wider than this ratio is labeled "truck"
    int cam_pool = 4;             // pooling factor of the activation grid
};

class ToyBlobDetector : public DetectorBackend {
public:
    explicit ToyBlobDetector(ToyBlobDetectorConfig cfg = {}) : cfg_(std::move(cfg)) {}

    const ToyBlobDetectorConfig& config() const { return cfg_; }

    DetectionResult detect_raw(const RasterImage& img) override {
        const std::vector<double> luma = luma_plane(img);
        std::vector<int> label(luma.size(), -1);
        auto lidx = [&](int y, int x) { return static_cast<size_t>(y) * img.width + x; };

        std::vector<Detection> dets;
        int next = 0;
        for (int y = 0; y < img.height; ++y) {
            for (int x = 0; x < img.width; ++x) {
                if (luma[lidx(y, x)] <= cfg_.luma_threshold || label[lidx(y, x)] >= 0) continue;
                const int cur = next++;
                std::deque<std::pair<int, int>> queue{{y, x}};
                label[lidx(y, x)] = cur;
                int min_x = x, max_x = x, min_y = y, max_y = y;
                double luma_sum = 0.0;
                int area = 0;
                while (!queue.empty()) {
                    auto [cy, cx] = queue.front();
                    queue.pop_front();
                    ++area;
                    luma_sum += luma[lidx(cy, cx)];
                    min_x = std::min(min_x, cx); max_x = std::max(max_x, cx);
                    min_y = std::min(min_y, cy); max_y = std::max(max_y, cy);
                    const int dy[] = {-1, 1, 0, 0}, dx[] = {0, 0, -1, 1};
                    for (int k = 0; k < 4; ++k) {
                        const int ny = cy + dy[k], nx = cx + dx[k];
                        if (ny < 0 || ny >= img.height || nx < 0 || nx >= img.width) continue;
                        if (luma[lidx(ny, nx)] <= cfg_.luma_threshold || label[lidx(ny, nx)] >= 0)
                            continue;
                        label[lidx(ny, nx)] = cur;
                        queue.emplace_back(ny, nx);
                    }
                }
                if (area < cfg_.min_area) continue;

                Box box{static_cast<double>(min_x), static_cast<double>(min_y),
                        static_cast<double>(max_x + 1), static_cast<double>(max_y + 1)};
                const double ring_mean = ring_luma_mean(img, luma, box);
                const double blob_mean = luma_sum / area;
                Detection d;
                d.box = box;
                const double aspect = (box.x2 - box.x1) / (box.y2 - box.y1);
                d.label = aspect > cfg_.truck_aspect ? "truck" : cfg_.object_label;
                d.confidence = std::clamp(blob_mean - ring_mean, 0.0, 1.0);
                dets.push_back(std::move(d));
            }
        }
        return DetectionResult::make(std::move(dets), img.source_id);
    }

    LossTerms loss_terms(const RasterImage& img, const GroundTruth& gt) override {
        LossTerms terms;
        terms.grad_classification = zero_gradient(img);
        terms.grad_bbox = zero_gradient(img);
        for (const auto& obj : gt.objects) {
            accumulate_classification(img, obj.box, terms);
            accumulate_bbox(img, obj.box, terms);
        }
        return terms;
    }

    double bbox_weight() const override { return cfg_.bbox_weight; }

    bool supports_cam() const override { return true; }
    std::string cam_layer() const override { return "pooled_luma"; }

    CamFeatures cam_features(const RasterImage& img) override {
        const int p = cfg_.cam_pool;
        CamFeatures f;
        f.channels = 2;
        f.height = (img.height + p - 1) / p;
        f.width = (img.width + p - 1) / p;
        f.layer_name = cam_layer();
        f.values.assign(static_cast<size_t>(f.channels) * f.height * f.width, 0.0);
        for (int gy = 0; gy < f.height; ++gy) {
            for (int gx = 0; gx < f.width; ++gx) {
                const int y0 = gy * p, y1 = std::min((gy + 1) * p, img.height);
                const int x0 = gx * p, x1 = std::min((gx + 1) * p, img.width);
                double sum = 0.0;
                for (int y = y0; y < y1; ++y)
                    for (int x = x0; x < x1; ++x)
                        sum += luma_at(img, y, x);
                const double mean = sum / ((y1 - y0) * (x1 - x0));
                f.at(0, gy, gx) = mean;
                f.at(1, gy, gx) = 1.0 - mean;
            }
        }
        return f;
    }

    // Score of a target box = area-weighted mean of the bright-evidence
    // channel over the cells it overlaps.
    std::vector<double> cam_score_gradient(const RasterImage&, const CamFeatures& f,
                                           const Box& target) override {
        const int p = cfg_.cam_pool;
        std::vector<double> grad(f.values.size(), 0.0);
        double total_overlap = 0.0;
        std::vector<std::pair<size_t, double>> touched;
        for (int gy = 0; gy < f.height; ++gy) {
            for (int gx = 0; gx < f.width; ++gx) {
                const double cx1 = gx * p, cy1 = gy * p;
                const double cx2 = cx1 + p, cy2 = cy1 + p;
                const double iw = std::min(cx2, target.x2) - std::max(cx1, target.x1);
                const double ih = std::min(cy2, target.y2) - std::max(cy1, target.y1);
                if (iw <= 0.0 || ih <= 0.0) continue;
                touched.emplace_back(f.index(0, gy, gx), iw * ih);
                total_overlap += iw * ih;
            }
        }
        if (total_overlap > 0.0)
            for (auto& [idx, area] : touched)
                grad[idx] = area / total_overlap;
        return grad;
    }

private:
    static PixelGradient zero_gradient(const RasterImage& img) {
        PixelGradient g;
        g.width = img.width;
        g.height = img.height;
        g.values.assign(img.pixels.size(), 0.0);
        return g;
    }

    static constexpr double kLumaCoef[3] = {0.299, 0.587, 0.114};

    struct Region {
        std::vector<size_t> box_pixels;  // flat y*W+x indices
        std::vector<size_t> ring_pixels;
    };

    Region box_and_ring(const RasterImage& img, const Box& box) const {
        Region r;
        const int rx0 = std::max(0, static_cast<int>(std::floor(box.x1)) - cfg_.ring_width);
        const int ry0 = std::max(0, static_cast<int>(std::floor(box.y1)) - cfg_.ring_width);
        const int rx1 = std::min(img.width - 1, static_cast<int>(std::ceil(box.x2)) + cfg_.ring_width - 1);
        const int ry1 = std::min(img.height - 1, static_cast<int>(std::ceil(box.y2)) + cfg_.ring_width - 1);
        for (int y = ry0; y <= ry1; ++y) {
            for (int x = rx0; x <= rx1; ++x) {
                const size_t idx = static_cast<size_t>(y) * img.width + x;
                if (box.contains_pixel(x, y)) r.box_pixels.push_back(idx);
                else r.ring_pixels.push_back(idx);
            }
        }
        return r;
    }

    double ring_luma_mean(const RasterImage& img, const std::vector<double>& luma,
                          const Box& box) const {
        const Region r = box_and_ring(img, box);
        if (r.ring_pixels.empty()) return 0.0;
        double sum = 0.0;
        for (size_t idx : r.ring_pixels) sum += luma[idx];
        return sum / static_cast<double>(r.ring_pixels.size());
    }

    void accumulate_classification(const RasterImage& img, const Box& box, LossTerms& terms) {
        const Region r = box_and_ring(img, box);
        if (r.box_pixels.empty()) return;
        double box_sum = 0.0, ring_sum = 0.0;
        for (size_t idx : r.box_pixels)
            box_sum += luma_at(img, static_cast<int>(idx / img.width),
                               static_cast<int>(idx % img.width));
        for (size_t idx : r.ring_pixels)
            ring_sum += luma_at(img, static_cast<int>(idx / img.width),
                                static_cast<int>(idx % img.width));
        const double n_box = static_cast<double>(r.box_pixels.size());
        const double n_ring = static_cast<double>(r.ring_pixels.size());
        const double contrast = box_sum / n_box - (n_ring > 0 ? ring_sum / n_ring : 0.0);
        terms.classification += 0.5 * (1.0 - contrast) * (1.0 - contrast);
        const double dloss_dcontrast = -(1.0 - contrast);
        for (size_t idx : r.box_pixels)
            for (int c = 0; c < 3; ++c)
                terms.grad_classification.values[idx * 3 + c] +=
                    dloss_dcontrast * kLumaCoef[c] / n_box;
        if (n_ring > 0)
            for (size_t idx : r.ring_pixels)
                for (int c = 0; c < 3; ++c)
                    terms.grad_classification.values[idx * 3 + c] -=
                        dloss_dcontrast * kLumaCoef[c] / n_ring;
    }

    void accumulate_bbox(const RasterImage& img, const Box& box, LossTerms& terms) {
        // Luma centroid over the box grown by half its size each way.
        const double w = box.x2 - box.x1, h = box.y2 - box.y1;
        const int x0 = std::max(0, static_cast<int>(std::floor(box.x1 - 0.5 * w)));
        const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(box.x2 + 0.5 * w)) - 1);
        const int y0 = std::max(0, static_cast<int>(std::floor(box.y1 - 0.5 * h)));
        const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(box.y2 + 0.5 * h)) - 1);
        double mass = 0.0, mx = 0.0, my = 0.0;
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const double l = luma_at(img, y, x);
                mass += l;
                mx += (x + 0.5) * l;
                my += (y + 0.5) * l;
            }
        }
        if (mass < 1e-9) return; // no signal to localize; contributes nothing
        const double cx = mx / mass, cy = my / mass;
        const double bx = 0.5 * (box.x1 + box.x2), by = 0.5 * (box.y1 + box.y2);
        const double diag_sq = w * w + h * h;
        terms.bbox_regression += ((cx - bx) * (cx - bx) + (cy - by) * (cy - by)) / diag_sq;
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const size_t idx = static_cast<size_t>(y) * img.width + x;
                const double dreg_dl = 2.0 *
                    ((cx - bx) * ((x + 0.5) - cx) + (cy - by) * ((y + 0.5) - cy)) /
                    (mass * diag_sq);
                for (int c = 0; c < 3; ++c)
                    terms.grad_bbox.values[idx * 3 + c] += dreg_dl * kLumaCoef[c];
            }
        }
    }

    ToyBlobDetectorConfig cfg_;
};

} // namespace rfm
