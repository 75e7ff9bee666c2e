#pragma once
// Desk-scale diffusion backends with exact, closed-form gradients.
//
// ToyLinearDiffusion works directly in pixel space. The environment region
// contracts toward a prompt-derived target field g each step,
//   z_{t-1} = c * z_t + (1 - c) * g,
// so z_t = c^(T-t) * (s_eps * eps) + (1 - c^(T-t)) * g has an exact linear
// dependence on the initial noise. The object region follows the inpainting
// blend (1 - t/T) * seed + (t/T) * s_eps * eps0 with eps0 frozen at run
// start, reaching the seed exactly at t = 0.

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "rfmkit/core.hpp"
#include "rfmkit/guidance.hpp"
#include "rfmkit/image.hpp"

namespace rfm {

struct ToyDiffusionConfig {
    double contraction = 0.9;  // per-step pull toward the prompt target
    double noise_scale = 0.25; // stddev of the initial latent in pixel units
};

class ToyLinearDiffusion : public DiffusionBackend {
public:
    explicit ToyLinearDiffusion(ToyDiffusionConfig cfg = {}) : cfg_(cfg) {}

    std::array<int, 3> latent_shape(const RasterImage& seed) const override {
        return {seed.height, seed.width, 3};
    }

    Latent encode(const RasterImage& img) override {
        Latent l = Latent::zeros(img.height, img.width, 3);
        l.values = img.pixels;
        return l;
    }

    RasterImage decode(const Latent& latent) override {
        RasterImage img;
        img.height = latent.height;
        img.width = latent.width;
        img.pixels.resize(latent.values.size());
        for (size_t i = 0; i < latent.values.size(); ++i) {
            const double v = latent.values[i];
            img.pixels[i] = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        }
        return img;
    }

    DiffusionContext make_context(const RasterImage& seed, const BinaryMask& object_mask,
                                  const PromptPair& prompts, int total_steps,
                                  const Latent& initial_noise) override {
        DiffusionContext ctx;
        ctx.seed_latent = encode(seed);
        ctx.object_mask = object_mask;
        ctx.prompts = prompts;
        ctx.total_steps = total_steps;
        ctx.initial_noise = initial_noise;
        auto state = std::make_shared<RunState>();
        state->target = prompt_target_field(prompts.positive, seed.height, seed.width);
        ctx.backend_state = std::move(state);
        return ctx;
    }

    Latent noised_latent(const DiffusionContext& ctx, const Latent& noise, int t) override {
        const Latent& target = target_of(ctx);
        const double env_keep = std::pow(cfg_.contraction, ctx.total_steps - t);
        const double obj_noise = static_cast<double>(t) / ctx.total_steps;
        Latent z = Latent::zeros(noise.height, noise.width, noise.channels);
        for_each_coord(ctx, [&](size_t i, bool object) {
            if (object)
                z.values[i] = (1.0 - obj_noise) * ctx.seed_latent.values[i] +
                              obj_noise * cfg_.noise_scale * ctx.initial_noise.values[i];
            else
                z.values[i] = env_keep * cfg_.noise_scale * noise.values[i] +
                              (1.0 - env_keep) * target.values[i];
        });
        return z;
    }

    Latent denoise_step(const DiffusionContext& ctx, const Latent& z, int t) override {
        const Latent& target = target_of(ctx);
        const double c = cfg_.contraction;
        const double obj_noise = static_cast<double>(t - 1) / ctx.total_steps;
        Latent out = Latent::zeros(z.height, z.width, z.channels);
        for_each_coord(ctx, [&](size_t i, bool object) {
            if (object)
                out.values[i] = (1.0 - obj_noise) * ctx.seed_latent.values[i] +
                                obj_noise * cfg_.noise_scale * ctx.initial_noise.values[i];
            else
                out.values[i] = c * z.values[i] + (1.0 - c) * target.values[i];
        });
        return out;
    }

    Latent predict_clean(const DiffusionContext& ctx, const Latent& z, int t) override {
        const Latent& target = target_of(ctx);
        const double keep = std::pow(cfg_.contraction, t);
        Latent out = Latent::zeros(z.height, z.width, z.channels);
        for_each_coord(ctx, [&](size_t i, bool object) {
            if (object)
                out.values[i] = ctx.seed_latent.values[i];
            else
                out.values[i] = keep * z.values[i] + (1.0 - keep) * target.values[i];
        });
        return out;
    }

    Latent decode_vjp(const DiffusionContext&, const Latent& decoded_point,
                      const PixelGradient& image_cotangent) override {
        // decode is a clamp; the cotangent is zero wherever the input was
        // outside [0,1].
        Latent out = Latent::zeros(decoded_point.height, decoded_point.width,
                                   decoded_point.channels);
        for (size_t i = 0; i < out.values.size(); ++i) {
            const double v = decoded_point.values[i];
            out.values[i] = (v >= 0.0 && v <= 1.0) ? image_cotangent.values[i] : 0.0;
        }
        return out;
    }

    Latent predict_clean_vjp(const DiffusionContext& ctx, int t, const Latent& cotangent) override {
        const double keep = std::pow(cfg_.contraction, t);
        Latent out = Latent::zeros(cotangent.height, cotangent.width, cotangent.channels);
        for_each_coord(ctx, [&](size_t i, bool object) {
            out.values[i] = object ? 0.0 : keep * cotangent.values[i];
        });
        return out;
    }

    Latent noise_vjp(const DiffusionContext& ctx, int t, const Latent& cotangent) override {
        const double env_keep = std::pow(cfg_.contraction, ctx.total_steps - t);
        Latent out = Latent::zeros(cotangent.height, cotangent.width, cotangent.channels);
        for_each_coord(ctx, [&](size_t i, bool object) {
            out.values[i] = object ? 0.0 : env_keep * cfg_.noise_scale * cotangent.values[i];
        });
        return out;
    }

    // Smooth low-frequency field derived from the prompt text; different
    // prompts give different environments, deterministically.
    static Latent prompt_target_field(const std::string& prompt, int height, int width) {
        std::mt19937_64 engine(fnv1a64(prompt));
        auto uniform = [&]() { return (engine() >> 11) * 0x1.0p-53; };
        Latent g = Latent::zeros(height, width, 3);
        constexpr double two_pi = 2.0 * 3.14159265358979323846;
        for (int c = 0; c < 3; ++c) {
            const double fx = 1.0 + std::floor(uniform() * 2.0);
            const double fy = 1.0 + std::floor(uniform() * 2.0);
            const double phase = two_pi * uniform();
            const double base = 0.4 + 0.2 * uniform();
            for (int y = 0; y < height; ++y)
                for (int x = 0; x < width; ++x)
                    g.values[(static_cast<size_t>(y) * width + x) * 3 + c] =
                        base + 0.2 * std::sin(two_pi * (fx * x / width + fy * y / height) + phase);
        }
        return g;
    }

private:
    struct RunState {
        Latent target;
    };

    static const Latent& target_of(const DiffusionContext& ctx) {
        const auto* state = static_cast<const RunState*>(ctx.backend_state.get());
        if (!state) throw BackendFailure("diffusion context missing backend state");
        return state->target;
    }

    template <typename Fn>
    static void for_each_coord(const DiffusionContext& ctx, Fn&& fn) {
        const int height = ctx.seed_latent.height;
        const int width = ctx.seed_latent.width;
        const int channels = ctx.seed_latent.channels;
        for (int y = 0; y < height; ++y) {
            for (int x = 0; x < width; ++x) {
                const bool object = ctx.object_mask.at(y, x);
                const size_t base = (static_cast<size_t>(y) * width + x) * channels;
                for (int c = 0; c < channels; ++c) fn(base + c, object);
            }
        }
    }

    ToyDiffusionConfig cfg_;
};

// Minimal backend where z_t == eps for every t and all maps are the
// identity. Useful for closed-form checks of the noise-update rule.
class IdentityDiffusion : public DiffusionBackend {
public:
    std::array<int, 3> latent_shape(const RasterImage& seed) const override {
        return {seed.height, seed.width, 3};
    }

    Latent encode(const RasterImage& img) override {
        Latent l = Latent::zeros(img.height, img.width, 3);
        l.values = img.pixels;
        return l;
    }

    RasterImage decode(const Latent& latent) override {
        RasterImage img;
        img.height = latent.height;
        img.width = latent.width;
        img.pixels.resize(latent.values.size());
        for (size_t i = 0; i < latent.values.size(); ++i) {
            const double v = latent.values[i];
            img.pixels[i] = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        }
        return img;
    }

    DiffusionContext make_context(const RasterImage& seed, const BinaryMask& object_mask,
                                  const PromptPair& prompts, int total_steps,
                                  const Latent& initial_noise) override {
        DiffusionContext ctx;
        ctx.seed_latent = encode(seed);
        ctx.object_mask = object_mask;
        ctx.prompts = prompts;
        ctx.total_steps = total_steps;
        ctx.initial_noise = initial_noise;
        return ctx;
    }

    Latent noised_latent(const DiffusionContext&, const Latent& noise, int) override {
        return noise;
    }
    Latent denoise_step(const DiffusionContext&, const Latent& z, int) override { return z; }
    Latent predict_clean(const DiffusionContext&, const Latent& z, int) override { return z; }

    Latent decode_vjp(const DiffusionContext&, const Latent& decoded_point,
                      const PixelGradient& image_cotangent) override {
        Latent out = Latent::zeros(decoded_point.height, decoded_point.width,
                                   decoded_point.channels);
        for (size_t i = 0; i < out.values.size(); ++i) {
            const double v = decoded_point.values[i];
            out.values[i] = (v >= 0.0 && v <= 1.0) ? image_cotangent.values[i] : 0.0;
        }
        return out;
    }
    Latent predict_clean_vjp(const DiffusionContext&, int, const Latent& cotangent) override {
        return cotangent;
    }
    Latent noise_vjp(const DiffusionContext&, int, const Latent& cotangent) override {
        return cotangent;
    }
};

} // namespace rfm
