#pragma once
// Consistency-verification metrics: pixel-level (MSE, PSNR), perceptual
// (SSIM, LPIPS), fooling rate, batch summaries, and the unrealistic-example
// filter. All metrics compare a generated image against the seed.

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rfmkit/core.hpp"
#include "rfmkit/detection.hpp"
#include "rfmkit/image.hpp"

namespace rfm {

inline double mse(const RasterImage& a, const RasterImage& b) {
    if (!a.same_shape(b)) throw DimensionMismatch("mse operands must share dimensions");
    double sum = 0.0;
    for (size_t i = 0; i < a.pixels.size(); ++i) {
        const double d = a.pixels[i] - b.pixels[i];
        sum += d * d;
    }
    return sum / static_cast<double>(a.pixels.size());
}

// 10*log10(R^2 / mse) with R = 1.0; +inf when images are identical.
inline double psnr(const RasterImage& a, const RasterImage& b) {
    const double m = mse(a, b);
    if (m == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / m);
}

struct SsimParams {
    int window = 11;
    double sigma = 1.5;
    double k1 = 0.01;
    double k2 = 0.03;
    double data_range = 1.0;
};

namespace detail {

inline std::vector<double> gaussian_kernel_1d(int size, double sigma) {
    std::vector<double> k(size);
    const double center = (size - 1) / 2.0;
    double sum = 0.0;
    for (int i = 0; i < size; ++i) {
        const double d = i - center;
        k[i] = std::exp(-d * d / (2.0 * sigma * sigma));
        sum += k[i];
    }
    for (auto& v : k) v /= sum;
    return k;
}

// Valid-region separable convolution of an H x W plane with a 1D kernel
// applied horizontally then vertically. Output is (H-n+1) x (W-n+1).
inline std::vector<double> gaussian_filter_valid(const std::vector<double>& plane, int height,
                                                 int width, const std::vector<double>& kernel) {
    const int n = static_cast<int>(kernel.size());
    const int out_w = width - n + 1;
    const int out_h = height - n + 1;
    std::vector<double> horiz(static_cast<size_t>(height) * out_w);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < out_w; ++x) {
            double s = 0.0;
            for (int k = 0; k < n; ++k)
                s += kernel[k] * plane[static_cast<size_t>(y) * width + x + k];
            horiz[static_cast<size_t>(y) * out_w + x] = s;
        }
    }
    std::vector<double> out(static_cast<size_t>(out_h) * out_w);
    for (int y = 0; y < out_h; ++y) {
        for (int x = 0; x < out_w; ++x) {
            double s = 0.0;
            for (int k = 0; k < n; ++k)
                s += kernel[k] * horiz[static_cast<size_t>(y + k) * out_w + x];
            out[static_cast<size_t>(y) * out_w + x] = s;
        }
    }
    return out;
}

} // namespace detail

// Single-scale SSIM on luma: Gaussian-weighted window statistics over the
// valid region, averaged. 11x11 window, sigma 1.5, C1=(k1*R)^2, C2=(k2*R)^2.
inline double ssim(const RasterImage& a, const RasterImage& b, const SsimParams& params = {}) {
    if (!a.same_shape(b)) throw DimensionMismatch("ssim operands must share dimensions");
    if (a.width < params.window || a.height < params.window)
        throw ImageTooSmall("ssim needs images at least " + std::to_string(params.window) +
                            " pixels on each side");
    const std::vector<double> x = luma_plane(a);
    const std::vector<double> y = luma_plane(b);
    const size_t n = x.size();
    std::vector<double> xx(n), yy(n), xy(n);
    for (size_t i = 0; i < n; ++i) {
        xx[i] = x[i] * x[i];
        yy[i] = y[i] * y[i];
        xy[i] = x[i] * y[i];
    }
    const auto kernel = detail::gaussian_kernel_1d(params.window, params.sigma);
    const auto mu_x = detail::gaussian_filter_valid(x, a.height, a.width, kernel);
    const auto mu_y = detail::gaussian_filter_valid(y, a.height, a.width, kernel);
    const auto m_xx = detail::gaussian_filter_valid(xx, a.height, a.width, kernel);
    const auto m_yy = detail::gaussian_filter_valid(yy, a.height, a.width, kernel);
    const auto m_xy = detail::gaussian_filter_valid(xy, a.height, a.width, kernel);
    const double c1 = params.k1 * params.data_range * params.k1 * params.data_range;
    const double c2 = params.k2 * params.data_range * params.k2 * params.data_range;
    double total = 0.0;
    for (size_t i = 0; i < mu_x.size(); ++i) {
        const double var_x = m_xx[i] - mu_x[i] * mu_x[i];
        const double var_y = m_yy[i] - mu_y[i] * mu_y[i];
        const double cov = m_xy[i] - mu_x[i] * mu_y[i];
        total += ((2.0 * mu_x[i] * mu_y[i] + c1) * (2.0 * cov + c2)) /
                 ((mu_x[i] * mu_x[i] + mu_y[i] * mu_y[i] + c1) * (var_x + var_y + c2));
    }
    return total / static_cast<double>(mu_x.size());
}

// ---------------------------------------------------------------------------
// LPIPS over a pluggable feature extractor
// ---------------------------------------------------------------------------

struct FeatureMap {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> values; // [c][y][x]

    size_t index(int c, int y, int x) const {
        return (static_cast<size_t>(c) * height + y) * width + x;
    }
    double at(int c, int y, int x) const { return values[index(c, y, x)]; }
    double& at(int c, int y, int x) { return values[index(c, y, x)]; }
};

class PerceptualBackend {
public:
    virtual ~PerceptualBackend() = default;
    virtual std::vector<FeatureMap> features(const RasterImage& img) = 0;
};

// Sum over layers of the spatial mean of squared differences between
// channel-unit-normalized feature vectors. Norm guard: v / sqrt(|v|^2 + 1e-10).
inline double lpips(const RasterImage& a, const RasterImage& b, PerceptualBackend& backend) {
    if (!a.same_shape(b)) throw DimensionMismatch("lpips operands must share dimensions");
    std::vector<FeatureMap> fa, fb;
    try {
        fa = backend.features(a);
        fb = backend.features(b);
    } catch (const std::exception& e) {
        throw BackendFailure(std::string("perceptual backend failed: ") + e.what());
    }
    if (fa.size() != fb.size()) throw BackendFailure("perceptual backend layer count mismatch");
    double total = 0.0;
    for (size_t layer = 0; layer < fa.size(); ++layer) {
        const FeatureMap& ma = fa[layer];
        const FeatureMap& mb = fb[layer];
        if (ma.channels != mb.channels || ma.height != mb.height || ma.width != mb.width)
            throw BackendFailure("perceptual backend layer shape mismatch");
        double layer_sum = 0.0;
        for (int y = 0; y < ma.height; ++y) {
            for (int x = 0; x < ma.width; ++x) {
                double norm_a = 0.0, norm_b = 0.0;
                for (int c = 0; c < ma.channels; ++c) {
                    norm_a += ma.at(c, y, x) * ma.at(c, y, x);
                    norm_b += mb.at(c, y, x) * mb.at(c, y, x);
                }
                norm_a = std::sqrt(norm_a + 1e-10);
                norm_b = std::sqrt(norm_b + 1e-10);
                for (int c = 0; c < ma.channels; ++c) {
                    const double d = ma.at(c, y, x) / norm_a - mb.at(c, y, x) / norm_b;
                    layer_sum += d * d;
                }
            }
        }
        total += layer_sum / (static_cast<double>(ma.height) * ma.width);
    }
    return total;
}

// ---------------------------------------------------------------------------
// Per-image records and batch statistics
// ---------------------------------------------------------------------------

struct MetricRecord {
    std::string image_id;
    std::optional<double> confidence; // absent when the object was not detected
    double ssim = 0.0;
    double lpips = 0.0;
    double mse = 0.0;
    double psnr = 0.0;
    FailureKind failure_kind = FailureKind::none;
};

inline double fooling_rate(const std::vector<MetricRecord>& records) {
    if (records.empty()) throw EmptyInput("fooling_rate needs at least one record");
    size_t failures = 0;
    for (const auto& r : records)
        failures += (r.failure_kind != FailureKind::none);
    return static_cast<double>(failures) / static_cast<double>(records.size());
}

struct Stats {
    double mean = 0.0;
    double sd = 0.0;
    double min = 0.0;
    double p25 = 0.0;
    double p75 = 0.0;
    double max = 0.0;
    size_t count = 0;
};

// Sample SD (n-1 denominator, 0 when n < 2); percentiles by linear
// interpolation over the sorted sample.
inline Stats compute_stats(std::vector<double> values) {
    if (values.empty()) throw EmptyInput("compute_stats needs at least one value");
    Stats s;
    s.count = values.size();
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0.0;
        for (double v : values) ss += (v - s.mean) * (v - s.mean);
        s.sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    std::sort(values.begin(), values.end());
    auto percentile = [&](double q) {
        const double pos = q * static_cast<double>(values.size() - 1);
        const size_t lo = static_cast<size_t>(pos);
        const double frac = pos - static_cast<double>(lo);
        if (lo + 1 >= values.size()) return values.back();
        return values[lo] + frac * (values[lo + 1] - values[lo]);
    };
    s.min = values.front();
    s.p25 = percentile(0.25);
    s.p75 = percentile(0.75);
    s.max = values.back();
    return s;
}

struct SummaryStats {
    Stats confidence; // over present confidences only
    size_t confidence_absent = 0;
    Stats ssim;
    Stats lpips;
    Stats mse;
    Stats psnr;
};

inline SummaryStats summarize(const std::vector<MetricRecord>& records) {
    if (records.empty()) throw EmptyInput("summarize needs at least one record");
    SummaryStats out;
    std::vector<double> conf, ssim_v, lpips_v, mse_v, psnr_v;
    for (const auto& r : records) {
        if (r.confidence) conf.push_back(*r.confidence);
        else ++out.confidence_absent;
        ssim_v.push_back(r.ssim);
        lpips_v.push_back(r.lpips);
        mse_v.push_back(r.mse);
        psnr_v.push_back(r.psnr);
    }
    if (!conf.empty()) out.confidence = compute_stats(std::move(conf));
    out.ssim = compute_stats(std::move(ssim_v));
    out.lpips = compute_stats(std::move(lpips_v));
    out.mse = compute_stats(std::move(mse_v));
    out.psnr = compute_stats(std::move(psnr_v));
    return out;
}

// ---------------------------------------------------------------------------
// Unrealistic-example filter: batch-relative z-score rule
// ---------------------------------------------------------------------------

struct FilterConfig {
    double sigma = 3.0;
    size_t min_batch = 5;
};

struct FlaggedRecord {
    std::string image_id;
    std::vector<std::string> reasons;
};

inline std::vector<FlaggedRecord> flag_unrealistic(const std::vector<MetricRecord>& records,
                                                   const FilterConfig& cfg = {}) {
    std::vector<FlaggedRecord> out;
    if (records.size() < cfg.min_batch) return out;
    std::vector<double> ssim_v, lpips_v;
    for (const auto& r : records) {
        ssim_v.push_back(r.ssim);
        lpips_v.push_back(r.lpips);
    }
    const Stats s_ssim = compute_stats(std::move(ssim_v));
    const Stats s_lpips = compute_stats(std::move(lpips_v));
    const double ssim_floor = s_ssim.mean - cfg.sigma * s_ssim.sd;
    const double lpips_ceiling = s_lpips.mean + cfg.sigma * s_lpips.sd;
    for (const auto& r : records) {
        FlaggedRecord f;
        f.image_id = r.image_id;
        if (r.ssim < ssim_floor)
            f.reasons.push_back("ssim " + format_double(r.ssim) + " below batch floor " +
                                format_double(ssim_floor));
        if (r.lpips > lpips_ceiling)
            f.reasons.push_back("lpips " + format_double(r.lpips) + " above batch ceiling " +
                                format_double(lpips_ceiling));
        if (!f.reasons.empty()) out.push_back(std::move(f));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Presentation
// ---------------------------------------------------------------------------

inline std::string metrics_csv(const std::vector<MetricRecord>& records,
                               const std::map<std::string, std::string>& prompt_ids,
                               const std::vector<FlaggedRecord>& flags) {
    std::string out = "image_id,prompt_id,confidence,ssim,lpips,mse,psnr,failure_kind,flagged\n";
    for (const auto& r : records) {
        const auto pit = prompt_ids.find(r.image_id);
        bool flagged = false;
        for (const auto& f : flags)
            if (f.image_id == r.image_id) flagged = true;
        out += csv_escape(r.image_id) + ",";
        out += (pit != prompt_ids.end() ? csv_escape(pit->second) : "") + ",";
        out += (r.confidence ? format_double(*r.confidence) : "") + ",";
        out += format_double(r.ssim) + "," + format_double(r.lpips) + "," +
               format_double(r.mse) + "," + format_double(r.psnr) + ",";
        out += to_string(r.failure_kind);
        out += flagged ? ",true\n" : ",false\n";
    }
    return out;
}

namespace detail {

inline std::string stat_cell(const Stats& s, double Stats::*field, size_t n) {
    if (n == 0) return "-";
    return format_fixed(s.*field, 4);
}

} // namespace detail

// Aligned text table: one column per metric, rows Mean/SD/Min/25%/75%/Max.
inline std::string summary_table_text(const SummaryStats& s) {
    struct Row { const char* name; double Stats::*field; };
    const Row rows[] = {{"Mean", &Stats::mean}, {"SD", &Stats::sd},   {"Min", &Stats::min},
                        {"25%", &Stats::p25},   {"75%", &Stats::p75}, {"Max", &Stats::max}};
    std::string out;
    char line[256];
    std::snprintf(line, sizeof(line), "%-6s %12s %12s %12s %12s %12s\n", "", "Confidence",
                  "SSIM", "LPIPS", "MSE", "PSNR");
    out += line;
    for (const auto& row : rows) {
        std::snprintf(line, sizeof(line), "%-6s %12s %12s %12s %12s %12s\n", row.name,
                      detail::stat_cell(s.confidence, row.field, s.confidence.count).c_str(),
                      detail::stat_cell(s.ssim, row.field, s.ssim.count).c_str(),
                      detail::stat_cell(s.lpips, row.field, s.lpips.count).c_str(),
                      detail::stat_cell(s.mse, row.field, s.mse.count).c_str(),
                      detail::stat_cell(s.psnr, row.field, s.psnr.count).c_str());
        out += line;
    }
    if (s.confidence_absent > 0)
        out += "confidence absent for " + std::to_string(s.confidence_absent) + " image(s)\n";
    out += "MSE in 8-bit scale (x255^2): mean " + format_fixed(s.mse.mean * 255.0 * 255.0, 4) +
           "\n";
    return out;
}

inline std::string summary_csv(const SummaryStats& s) {
    std::string out = "stat,confidence,ssim,lpips,mse,psnr\n";
    struct Row { const char* name; double Stats::*field; };
    const Row rows[] = {{"mean", &Stats::mean}, {"sd", &Stats::sd},   {"min", &Stats::min},
                        {"p25", &Stats::p25},   {"p75", &Stats::p75}, {"max", &Stats::max}};
    for (const auto& row : rows) {
        out += row.name;
        out += ",";
        out += s.confidence.count ? format_double(s.confidence.*(row.field)) : "";
        out += "," + format_double(s.ssim.*(row.field)) + "," +
               format_double(s.lpips.*(row.field)) + "," + format_double(s.mse.*(row.field)) +
               "," + format_double(s.psnr.*(row.field)) + "\n";
    }
    return out;
}

} // namespace rfm
