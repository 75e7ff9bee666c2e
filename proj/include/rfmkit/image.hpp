#pragma once
// Image and mask value types, mask algebra, and the segmentation backend
// contract. Pixels are doubles in [0,1], row-major H x W x 3.

#include <algorithm>
#include <cstdint>
#include <deque>
#include <string>
#include <utility>
#include <vector>

#include "rfmkit/core.hpp"

namespace rfm {

inline constexpr int kMinImageDim = 8;

struct RasterImage {
    int width = 0;
    int height = 0;
    std::vector<double> pixels; // height * width * 3, [y][x][c]
    std::string source_id;

    static RasterImage create(int width, int height, double fill = 0.0,
                              std::string source_id = {}) {
        RasterImage img;
        img.width = width;
        img.height = height;
        img.source_id = std::move(source_id);
        img.pixels.assign(static_cast<size_t>(width) * height * 3, fill);
        img.validate();
        return img;
    }

    size_t index(int y, int x, int c) const {
        return (static_cast<size_t>(y) * width + x) * 3 + c;
    }
    double& at(int y, int x, int c) { return pixels[index(y, x, c)]; }
    double at(int y, int x, int c) const { return pixels[index(y, x, c)]; }

    bool same_shape(const RasterImage& other) const {
        return width == other.width && height == other.height;
    }

    void validate() const {
        if (width < kMinImageDim || height < kMinImageDim)
            throw ImageTooSmall("image must be at least " + std::to_string(kMinImageDim) +
                                "x" + std::to_string(kMinImageDim) + ", got " +
                                std::to_string(width) + "x" + std::to_string(height));
        if (pixels.size() != static_cast<size_t>(width) * height * 3)
            throw DimensionMismatch("pixel buffer does not match declared dimensions");
        for (double v : pixels)
            if (!(v >= 0.0 && v <= 1.0))
                throw Error("pixel value outside [0,1]");
    }
};

// Rec.601 luma; the single grayscale definition used by metrics, the toy
// detector, and the threshold segmenter.
inline double luma_at(const RasterImage& img, int y, int x) {
    return 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) + 0.114 * img.at(y, x, 2);
}

inline std::vector<double> luma_plane(const RasterImage& img) {
    std::vector<double> out(static_cast<size_t>(img.width) * img.height);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            out[static_cast<size_t>(y) * img.width + x] = luma_at(img, y, x);
    return out;
}

struct BinaryMask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> bits; // height * width, row-major

    static BinaryMask create(int width, int height, bool fill = false) {
        BinaryMask m;
        m.width = width;
        m.height = height;
        m.bits.assign(static_cast<size_t>(width) * height, fill ? 1 : 0);
        return m;
    }

    size_t index(int y, int x) const { return static_cast<size_t>(y) * width + x; }
    bool at(int y, int x) const { return bits[index(y, x)] != 0; }
    void set(int y, int x, bool v) { bits[index(y, x)] = v ? 1 : 0; }

    size_t count_true() const {
        size_t n = 0;
        for (auto b : bits) n += (b != 0);
        return n;
    }

    bool same_shape(const BinaryMask& other) const {
        return width == other.width && height == other.height;
    }

    bool matches_image(const RasterImage& img) const {
        return width == img.width && height == img.height;
    }

    bool operator==(const BinaryMask& other) const {
        return width == other.width && height == other.height && bits == other.bits;
    }
};

inline BinaryMask invert_mask(const BinaryMask& m) {
    BinaryMask out = m;
    for (auto& b : out.bits) b = b ? 0 : 1;
    return out;
}

// Chebyshev (square) dilation by integer radius.
inline BinaryMask dilate_mask(const BinaryMask& m, int radius) {
    if (radius <= 0) return m;
    BinaryMask out = BinaryMask::create(m.width, m.height, false);
    for (int y = 0; y < m.height; ++y) {
        for (int x = 0; x < m.width; ++x) {
            if (!m.at(y, x)) continue;
            const int y0 = std::max(0, y - radius), y1 = std::min(m.height - 1, y + radius);
            const int x0 = std::max(0, x - radius), x1 = std::min(m.width - 1, x + radius);
            for (int yy = y0; yy <= y1; ++yy)
                for (int xx = x0; xx <= x1; ++xx)
                    out.set(yy, xx, true);
        }
    }
    return out;
}

// Fills false regions not reachable from the border (4-connectivity).
inline BinaryMask fill_mask_holes(const BinaryMask& m) {
    BinaryMask reachable = BinaryMask::create(m.width, m.height, false);
    std::deque<std::pair<int, int>> queue;
    auto push = [&](int y, int x) {
        if (y < 0 || y >= m.height || x < 0 || x >= m.width) return;
        if (m.at(y, x) || reachable.at(y, x)) return;
        reachable.set(y, x, true);
        queue.emplace_back(y, x);
    };
    for (int x = 0; x < m.width; ++x) { push(0, x); push(m.height - 1, x); }
    for (int y = 0; y < m.height; ++y) { push(y, 0); push(y, m.width - 1); }
    while (!queue.empty()) {
        auto [y, x] = queue.front();
        queue.pop_front();
        push(y - 1, x); push(y + 1, x); push(y, x - 1); push(y, x + 1);
    }
    BinaryMask out = m;
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x)
            if (!m.at(y, x) && !reachable.at(y, x)) out.set(y, x, true);
    return out;
}

// Keeps only the largest 4-connected true component (ties: first in scan order).
inline BinaryMask largest_mask_component(const BinaryMask& m) {
    std::vector<int> label(m.bits.size(), -1);
    int next_label = 0;
    std::vector<size_t> sizes;
    for (int y = 0; y < m.height; ++y) {
        for (int x = 0; x < m.width; ++x) {
            if (!m.at(y, x) || label[m.index(y, x)] >= 0) continue;
            const int cur = next_label++;
            sizes.push_back(0);
            std::deque<std::pair<int, int>> queue{{y, x}};
            label[m.index(y, x)] = cur;
            while (!queue.empty()) {
                auto [cy, cx] = queue.front();
                queue.pop_front();
                ++sizes[cur];
                const int dy[] = {-1, 1, 0, 0}, dx[] = {0, 0, -1, 1};
                for (int k = 0; k < 4; ++k) {
                    const int ny = cy + dy[k], nx = cx + dx[k];
                    if (ny < 0 || ny >= m.height || nx < 0 || nx >= m.width) continue;
                    if (!m.at(ny, nx) || label[m.index(ny, nx)] >= 0) continue;
                    label[m.index(ny, nx)] = cur;
                    queue.emplace_back(ny, nx);
                }
            }
        }
    }
    if (next_label == 0) return m;
    const int best = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
    BinaryMask out = BinaryMask::create(m.width, m.height, false);
    for (size_t i = 0; i < m.bits.size(); ++i)
        out.bits[i] = (label[i] == best) ? 1 : 0;
    return out;
}

class SegmenterBackend {
public:
    virtual ~SegmenterBackend() = default;
    // Returns the object mask for the given label; dimensions must match img.
    virtual BinaryMask segment(const RasterImage& img, const std::string& label) = 0;
};

struct MaskPostprocess {
    int dilation = 0;
    bool fill_holes = false;
    bool largest_component = false;
};

// Object mask from the segmenter, environment mask as its complement.
// The pair partitions the image; degenerate masks are rejected.
inline std::pair<BinaryMask, BinaryMask> extract_environment_mask(
    const RasterImage& img, const std::string& label, SegmenterBackend& segmenter,
    const MaskPostprocess& post = {}) {
    BinaryMask object = segmenter.segment(img, label);
    if (!object.matches_image(img))
        throw DimensionMismatch("segmenter returned mask of wrong dimensions");
    if (post.largest_component) object = largest_mask_component(object);
    if (post.fill_holes) object = fill_mask_holes(object);
    if (post.dilation > 0) object = dilate_mask(object, post.dilation);
    const size_t n_true = object.count_true();
    if (n_true == 0)
        throw SegmentationEmpty("segmenter found no '" + label + "' pixels");
    if (n_true == object.bits.size())
        throw SegmentationEmpty("segmenter returned a full-frame mask for '" + label + "'");
    return {object, invert_mask(object)};
}

// Seed pixels where the object mask is true, generated pixels elsewhere.
// This is what makes object preservation exact regardless of backend behavior.
inline RasterImage composite_object_over(const RasterImage& generated,
                                         const RasterImage& seed,
                                         const BinaryMask& object_mask) {
    if (!generated.same_shape(seed) || !object_mask.matches_image(generated))
        throw DimensionMismatch("composite operands must share dimensions");
    RasterImage out = generated;
    for (int y = 0; y < out.height; ++y) {
        for (int x = 0; x < out.width; ++x) {
            if (!object_mask.at(y, x)) continue;
            for (int c = 0; c < 3; ++c)
                out.at(y, x, c) = seed.at(y, x, c);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Desk-scale segmenters
// ---------------------------------------------------------------------------

// Marks pixels whose luma clears a threshold. Stands in for a real
// segmentation model on synthetic bright-object-on-dark-field scenes.
class ThresholdSegmenter : public SegmenterBackend {
public:
    explicit ThresholdSegmenter(double threshold = 0.5) : threshold_(threshold) {}

    BinaryMask segment(const RasterImage& img, const std::string&) override {
        BinaryMask m = BinaryMask::create(img.width, img.height, false);
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x)
                m.set(y, x, luma_at(img, y, x) > threshold_);
        return m;
    }

private:
    double threshold_;
};

// Returns a pre-supplied mask (e.g. loaded from a fixture file).
class FixtureSegmenter : public SegmenterBackend {
public:
    explicit FixtureSegmenter(BinaryMask mask) : mask_(std::move(mask)) {}

    BinaryMask segment(const RasterImage& img, const std::string&) override {
        if (!mask_.matches_image(img))
            throw BackendFailure("fixture mask dimensions do not match image");
        return mask_;
    }

private:
    BinaryMask mask_;
};

} // namespace rfm
