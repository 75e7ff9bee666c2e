#pragma once
// Adversarially guided inpainting: gradient ascent on the detection loss with
// respect to the initial noise of a diffusion backend, while the object
// region is structurally preserved by mask blending plus a final composite.
//
// Per guided timestep: predict the clean latent in one step, decode it,
// composite the object region from the seed, evaluate the detection loss,
// pull the pixel gradient back through decode -> predicted-clean -> latent ->
// noise, take a normalized ascent step on the noise, and re-noise the current
// latent from the updated noise before the next denoise step.

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "rfmkit/core.hpp"
#include "rfmkit/detection.hpp"
#include "rfmkit/image.hpp"

namespace rfm {

struct Latent {
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<double> values;

    static Latent zeros(int height, int width, int channels) {
        Latent l;
        l.height = height;
        l.width = width;
        l.channels = channels;
        l.values.assign(static_cast<size_t>(height) * width * channels, 0.0);
        return l;
    }

    bool same_shape(const Latent& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }
};

struct NoiseTensor {
    Latent values;
    std::uint64_t rng_seed = 0;
};

struct LatentState {
    Latent z;
    int t = 0;
};

struct GradientTensor {
    Latent values;
};

struct PromptPair {
    std::string positive;
    std::string negative;
};

struct GuidanceConfig {
    double alpha = 0.05;        // gradient-ascent step size
    int denoise_steps = 8;
    int guidance_steps = 2;     // applied on the final guidance_steps timesteps
    double grad_norm_clip = 1.0;
    std::string positive_prompt;
    std::string negative_prompt;
    std::uint64_t rng_seed = 0;

    void validate() const {
        if (alpha < 0.0) throw ConfigInvalid("alpha must be >= 0");
        if (denoise_steps <= 0) throw ConfigInvalid("denoise_steps must be positive");
        if (guidance_steps < 0 || guidance_steps > denoise_steps)
            throw ConfigInvalid("guidance_steps must be in [0, denoise_steps]");
        if (grad_norm_clip <= 0.0) throw ConfigInvalid("grad_norm_clip must be positive");
    }
};

// Per-run state a diffusion backend needs on every call: the encoded seed,
// the object mask on the latent grid, the prompts, the schedule length, and
// the frozen initial noise used for the object-region inpainting blend.
struct DiffusionContext {
    Latent seed_latent;
    BinaryMask object_mask; // latent-grid resolution
    PromptPair prompts;
    int total_steps = 0;
    Latent initial_noise;
    // Backend-owned per-run state (e.g. prompt embeddings); contexts stay
    // valid independently of later make_context calls.
    std::shared_ptr<const void> backend_state;
};

class DiffusionBackend {
public:
    virtual ~DiffusionBackend() = default;

    virtual std::array<int, 3> latent_shape(const RasterImage& seed) const = 0;

    virtual Latent encode(const RasterImage& img) = 0;
    virtual RasterImage decode(const Latent& latent) = 0;

    virtual DiffusionContext make_context(const RasterImage& seed, const BinaryMask& object_mask,
                                          const PromptPair& prompts, int total_steps,
                                          const Latent& initial_noise) = 0;

    // z_t as a function of the (current) noise; also used to re-noise after a
    // noise update. Object-region latents are held to the seed's noised
    // latents per the inpainting blend.
    virtual Latent noised_latent(const DiffusionContext& ctx, const Latent& noise, int t) = 0;

    virtual Latent denoise_step(const DiffusionContext& ctx, const Latent& z, int t) = 0;

    // One-step prediction of the clean latent from z_t.
    virtual Latent predict_clean(const DiffusionContext& ctx, const Latent& z, int t) = 0;

    // Vector-Jacobian products for the chain rule:
    //   image cotangent -> latent cotangent through decode,
    //   clean-latent cotangent -> z_t cotangent through predict_clean,
    //   z_t cotangent -> noise cotangent through noised_latent.
    virtual Latent decode_vjp(const DiffusionContext& ctx, const Latent& decoded_point,
                              const PixelGradient& image_cotangent) = 0;
    virtual Latent predict_clean_vjp(const DiffusionContext& ctx, int t,
                                     const Latent& cotangent) = 0;
    virtual Latent noise_vjp(const DiffusionContext& ctx, int t, const Latent& cotangent) = 0;
};

inline NoiseTensor sample_initial_noise(const std::array<int, 3>& shape, std::uint64_t rng_seed) {
    NoiseTensor n;
    n.rng_seed = rng_seed;
    n.values = Latent::zeros(shape[0], shape[1], shape[2]);
    GaussianSampler sampler(rng_seed);
    for (auto& v : n.values.values) v = sampler.next();
    return n;
}

struct TraceRow {
    int step = 0; // 1-based guidance step counter
    int t = 0;
    double total_loss = 0.0;
    double cls_loss = 0.0;
    double reg_loss = 0.0;
    double grad_norm_preclip = 0.0;
};

struct GuidanceTrace {
    std::vector<TraceRow> rows;

    std::string to_csv() const {
        std::string out = "step,t,total_loss,cls_loss,reg_loss,grad_norm_preclip\n";
        for (const auto& r : rows) {
            out += std::to_string(r.step) + "," + std::to_string(r.t) + "," +
                   format_double(r.total_loss) + "," + format_double(r.cls_loss) + "," +
                   format_double(r.reg_loss) + "," + format_double(r.grad_norm_preclip) + "\n";
        }
        return out;
    }
};

// Thrown when a guidance loop aborts mid-run; carries the partial trace.
class GenerationAborted : public Error {
public:
    GenerationAborted(const std::string& message, GuidanceTrace trace)
        : Error(message), trace_(std::move(trace)) {}
    const GuidanceTrace& trace() const { return trace_; }
private:
    GuidanceTrace trace_;
};

// One ascent step on the noise: pull the latent cotangent back to noise
// space, L2-normalize, clip to grad_norm_clip, and move alpha along it.
// Returns the input unchanged when alpha is zero or the gradient vanishes.
inline NoiseTensor optimize_noise_step(const NoiseTensor& eps, const LatentState& state,
                                       const GradientTensor& grad_loss_wrt_latent,
                                       const GuidanceConfig& cfg, DiffusionBackend& backend,
                                       const DiffusionContext& ctx,
                                       double* grad_norm_preclip = nullptr) {
    if (!state.z.same_shape(grad_loss_wrt_latent.values))
        throw DimensionMismatch("latent gradient shape does not match latent state");
    Latent g = backend.noise_vjp(ctx, state.t, grad_loss_wrt_latent.values);
    if (!g.same_shape(eps.values))
        throw DimensionMismatch("noise gradient shape does not match noise tensor");
    if (!all_finite(g.values)) throw NonFiniteGradient("noise gradient is not finite");
    const double norm = l2_norm(g.values);
    if (grad_norm_preclip) *grad_norm_preclip = norm;
    if (cfg.alpha == 0.0 || norm == 0.0) return eps;

    const double unit_scale = 1.0 / norm;
    // After unit normalization the direction has norm 1; clip caps it there.
    const double clip_scale = cfg.grad_norm_clip < 1.0 ? cfg.grad_norm_clip : 1.0;
    NoiseTensor out = eps;
    for (size_t i = 0; i < out.values.values.size(); ++i)
        out.values.values[i] += cfg.alpha * clip_scale * unit_scale * g.values.values[i];
    if (!all_finite(out.values.values)) throw NonFiniteGradient("optimized noise is not finite");
    return out;
}

struct GenerationResult {
    RasterImage image;
    FailureReport report;
    GuidanceTrace trace;
};

struct GuidanceThresholds {
    double confidence = 0.5;
    double iou = 0.5;
};

inline GenerationResult generate_rfm_candidate(const RasterImage& seed,
                                               const BinaryMask& object_mask,
                                               const GroundTruth& gt, const GuidanceConfig& cfg,
                                               DiffusionBackend& diffusion,
                                               DetectorBackend& detector,
                                               const GuidanceThresholds& thresholds = {},
                                               std::string image_id = {}) {
    cfg.validate();
    if (!object_mask.matches_image(seed))
        throw DimensionMismatch("object mask does not match seed image");
    if (gt.empty()) throw EmptyInput("ground truth must be non-empty");

    NoiseTensor eps = sample_initial_noise(diffusion.latent_shape(seed), cfg.rng_seed);
    DiffusionContext ctx = diffusion.make_context(
        seed, object_mask, {cfg.positive_prompt, cfg.negative_prompt}, cfg.denoise_steps,
        eps.values);

    const int total = cfg.denoise_steps;
    GuidanceTrace trace;
    Latent z = diffusion.noised_latent(ctx, eps.values, total);
    int step_counter = 0;
    for (int t = total; t >= 1; --t) {
        if (t <= cfg.guidance_steps) {
            ++step_counter;
            try {
                const Latent clean = diffusion.predict_clean(ctx, z, t);
                RasterImage preview = diffusion.decode(clean);
                preview.source_id = image_id;
                const RasterImage composited = composite_object_over(preview, seed, object_mask);
                auto [loss, pixel_grad] = compute_od_loss(composited, gt, detector);
                // Object pixels come from the seed, so no gradient flows there.
                for (int y = 0; y < seed.height; ++y)
                    for (int x = 0; x < seed.width; ++x)
                        if (object_mask.at(y, x))
                            for (int c = 0; c < 3; ++c)
                                pixel_grad.at(y, x, c) = 0.0;
                const Latent g_clean = diffusion.decode_vjp(ctx, clean, pixel_grad);
                const Latent g_z = diffusion.predict_clean_vjp(ctx, t, g_clean);
                double grad_norm = 0.0;
                NoiseTensor updated = optimize_noise_step(eps, {z, t}, {g_z}, cfg, diffusion,
                                                          ctx, &grad_norm);
                trace.rows.push_back({step_counter, t, loss.total, loss.classification,
                                      loss.bbox_regression, grad_norm});
                if (updated.values.values != eps.values.values) {
                    eps = std::move(updated);
                    z = diffusion.noised_latent(ctx, eps.values, t);
                }
            } catch (const NonFiniteLoss& e) {
                throw GenerationAborted(std::string("guidance aborted: ") + e.what(),
                                        std::move(trace));
            } catch (const NonFiniteGradient& e) {
                throw GenerationAborted(std::string("guidance aborted: ") + e.what(),
                                        std::move(trace));
            }
        }
        z = diffusion.denoise_step(ctx, z, t);
    }

    RasterImage generated = diffusion.decode(z);
    generated.source_id = image_id.empty() ? seed.source_id + "-generated" : image_id;
    RasterImage final_image = composite_object_over(generated, seed, object_mask);
    final_image.source_id = generated.source_id;
    const DetectionResult detections = detect(final_image, detector, thresholds.confidence);
    FailureReport report = classify_failure(detections, gt, thresholds.iou);
    return {std::move(final_image), std::move(report), std::move(trace)};
}

// ---------------------------------------------------------------------------
// Batched generation with candidate-level failure isolation
// ---------------------------------------------------------------------------

struct BatchConfig {
    GuidanceConfig guidance;                  // per-candidate rng_seed/prompts overwritten
    std::vector<std::string> positive_prompts;
    std::string negative_prompt;
    int seeds_per_prompt = 1;
    int workers = 1;
    GuidanceThresholds thresholds;
};

enum class CandidateStatus { ok, backend_error };

struct CandidateOutcome {
    std::string image_id;
    std::string prompt_id;
    std::string prompt;
    std::uint64_t rng_seed = 0;
    CandidateStatus status = CandidateStatus::ok;
    std::optional<GenerationResult> result;
    std::string error;
};

using DiffusionFactory = std::function<std::unique_ptr<DiffusionBackend>()>;
using DetectorFactory = std::function<std::unique_ptr<DetectorBackend>()>;

inline std::string candidate_prompt_id(size_t prompt_index) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "p%02zu", prompt_index);
    return std::string(buf);
}

inline std::string candidate_image_id(size_t prompt_index, std::uint64_t rng_seed) {
    return "cand-" + candidate_prompt_id(prompt_index) + "-s" + std::to_string(rng_seed);
}

// One candidate per (prompt, rng seed) pair. Failed candidates are recorded
// with error status; the batch itself still succeeds. Candidates may run in
// parallel; each worker owns its backend instances, so results do not depend
// on the worker count.
inline std::vector<CandidateOutcome> run_generation_batch(
    const RasterImage& seed, const BinaryMask& object_mask, const GroundTruth& gt,
    const BatchConfig& batch, const DiffusionFactory& make_diffusion,
    const DetectorFactory& make_detector) {
    if (batch.positive_prompts.empty())
        throw ConfigInvalid("prompt suite must contain at least one positive prompt");
    if (batch.seeds_per_prompt < 1)
        throw ConfigInvalid("seeds_per_prompt must be at least 1");
    batch.guidance.validate();

    struct Job {
        size_t prompt_index;
        std::uint64_t rng_seed;
    };
    std::vector<Job> jobs;
    for (size_t pi = 0; pi < batch.positive_prompts.size(); ++pi)
        for (int si = 0; si < batch.seeds_per_prompt; ++si)
            jobs.push_back({pi, batch.guidance.rng_seed + static_cast<std::uint64_t>(si)});

    std::vector<CandidateOutcome> outcomes(jobs.size());
    std::atomic<size_t> next_job{0};
    auto worker = [&]() {
        auto diffusion = make_diffusion();
        auto detector = make_detector();
        for (;;) {
            const size_t i = next_job.fetch_add(1);
            if (i >= jobs.size()) break;
            const Job& job = jobs[i];
            CandidateOutcome& out = outcomes[i];
            out.prompt_id = candidate_prompt_id(job.prompt_index);
            out.prompt = batch.positive_prompts[job.prompt_index];
            out.rng_seed = job.rng_seed;
            out.image_id = candidate_image_id(job.prompt_index, job.rng_seed);
            GuidanceConfig cfg = batch.guidance;
            cfg.positive_prompt = out.prompt;
            cfg.negative_prompt = batch.negative_prompt;
            cfg.rng_seed = job.rng_seed;
            try {
                out.result = generate_rfm_candidate(seed, object_mask, gt, cfg, *diffusion,
                                                    *detector, batch.thresholds, out.image_id);
                out.status = CandidateStatus::ok;
            } catch (const std::exception& e) {
                out.status = CandidateStatus::backend_error;
                out.error = e.what();
            }
        }
    };

    const int n_workers = std::max(1, std::min<int>(batch.workers, static_cast<int>(jobs.size())));
    if (n_workers == 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        threads.reserve(n_workers);
        for (int i = 0; i < n_workers; ++i) threads.emplace_back(worker);
        for (auto& th : threads) th.join();
    }
    return outcomes;
}

} // namespace rfm
