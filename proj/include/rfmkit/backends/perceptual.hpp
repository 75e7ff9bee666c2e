#pragma once
// Deterministic perceptual feature extractors for LPIPS at desk scale.

#include <vector>

#include "rfmkit/image.hpp"
#include "rfmkit/metrics.hpp"

namespace rfm {

// One layer, features = raw RGB. LPIPS over this backend reduces to the mean
// squared difference of channel-unit-normalized pixels.
class IdentityPerceptualBackend : public PerceptualBackend {
public:
    std::vector<FeatureMap> features(const RasterImage& img) override {
        FeatureMap f;
        f.channels = 3;
        f.height = img.height;
        f.width = img.width;
        f.values.resize(img.pixels.size());
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < img.height; ++y)
                for (int x = 0; x < img.width; ++x)
                    f.at(c, y, x) = img.at(y, x, c);
        return {f};
    }
};

// Multi-scale box-pooled RGB pyramid; level l pools 2^l x 2^l blocks.
class PyramidPerceptualBackend : public PerceptualBackend {
public:
    explicit PyramidPerceptualBackend(int levels = 3) : levels_(levels) {}

    std::vector<FeatureMap> features(const RasterImage& img) override {
        std::vector<FeatureMap> out;
        for (int level = 0; level < levels_; ++level) {
            const int p = 1 << level;
            FeatureMap f;
            f.channels = 3;
            f.height = (img.height + p - 1) / p;
            f.width = (img.width + p - 1) / p;
            f.values.assign(static_cast<size_t>(f.channels) * f.height * f.width, 0.0);
            for (int gy = 0; gy < f.height; ++gy) {
                for (int gx = 0; gx < f.width; ++gx) {
                    const int y0 = gy * p, y1 = std::min((gy + 1) * p, img.height);
                    const int x0 = gx * p, x1 = std::min((gx + 1) * p, img.width);
                    const double n = static_cast<double>((y1 - y0) * (x1 - x0));
                    for (int c = 0; c < 3; ++c) {
                        double sum = 0.0;
                        for (int y = y0; y < y1; ++y)
                            for (int x = x0; x < x1; ++x)
                                sum += img.at(y, x, c);
                        f.at(c, gy, gx) = sum / n;
                    }
                }
            }
            out.push_back(std::move(f));
        }
        return out;
    }

private:
    int levels_;
};

} // namespace rfm
