#include "core/fusion.hpp"

#include <chrono>
#include <cmath>
#include <cstring>

#include "core/image_io.hpp"

namespace occ {

void FusionConfig::validate() const {
    if (sweep_stride < 1 || sweep_stride > patch_size) {
        throw ConfigError("fusion: sweep_stride must be in [1, patch_size]");
    }
    if (!(fwhm > 0.0)) {
        throw ConfigError("fusion: fwhm must be positive");
    }
    if (patch_size != kPatchSize) {
        throw ConfigError("fusion: patch_size must be " + std::to_string(kPatchSize));
    }
}

double kernel_sigma(double fwhm) {
    return fwhm / (2.0 * std::sqrt(2.0 * std::log(2.0)));
}

double kernel_value(double r2, double fwhm) {
    const double radius = 2.0 * fwhm;
    if (r2 > radius * radius) {
        return 0.0;
    }
    const double sigma = kernel_sigma(fwhm);
    return std::exp(-r2 / (2.0 * sigma * sigma));
}

int sweep_positions(int extent, int patch_size, int stride) {
    if (extent < patch_size) {
        return 0;
    }
    return (extent - patch_size) / stride + 1;
}

std::vector<PatchScore> sweep(const CnnModelF& model, const RgbdFrame& frame,
                              const NormStats& stats, const FusionConfig& cfg, int threads,
                              double* wall_time) {
    cfg.validate();
    if (frame.h < cfg.patch_size || frame.w < cfg.patch_size) {
        throw DataError("sweep: frame " + std::to_string(frame.h) + "x" + std::to_string(frame.w) +
                        " smaller than patch size");
    }
    if (stats.channels != model.channels() ||
        stats.mean.size() != static_cast<std::size_t>(stats.channels)) {
        throw DataError("sweep: normalization stats missing or mismatched (stats " +
                        std::to_string(stats.channels) + " channels, model " +
                        std::to_string(model.channels()) + ")");
    }
    const int rows = sweep_positions(frame.h, cfg.patch_size, cfg.sweep_stride);
    const int cols = sweep_positions(frame.w, cfg.patch_size, cfg.sweep_stride);
    const int channels = model.channels();
    const int half = cfg.patch_size / 2;

    const auto t0 = std::chrono::steady_clock::now();
    std::vector<PatchScore> scores(static_cast<std::size_t>(rows) * cols);
    const std::size_t example = static_cast<std::size_t>(channels) * kPatchSize * kPatchSize;
    const std::size_t chunk = 128;
    const std::size_t total = scores.size();
    for (std::size_t at = 0; at < total; at += chunk) {
        const std::size_t end = std::min(at + chunk, total);
        const int n = static_cast<int>(end - at);
        TensorF batch({n, channels, kPatchSize, kPatchSize});
        for (int i = 0; i < n; ++i) {
            const std::size_t flat = at + static_cast<std::size_t>(i);
            const int r = static_cast<int>(flat) / cols * cfg.sweep_stride;
            const int c = static_cast<int>(flat) % cols * cfg.sweep_stride;
            TensorF patch = patch_tensor(frame, r, c, channels);
            float* d = patch.data();
            const std::size_t plane = static_cast<std::size_t>(kPatchSize) * kPatchSize;
            for (int ch = 0; ch < channels; ++ch) {
                const float m = stats.mean[static_cast<std::size_t>(ch)];
                for (std::size_t px = 0; px < plane; ++px) {
                    d[static_cast<std::size_t>(ch) * plane + px] -= m;
                }
            }
            std::memcpy(batch.data() + static_cast<std::size_t>(i) * example, patch.data(),
                        example * sizeof(float));
        }
        const auto preds = model.infer(batch, threads);
        for (int i = 0; i < n; ++i) {
            const std::size_t flat = at + static_cast<std::size_t>(i);
            PatchScore& s = scores[flat];
            const int r = static_cast<int>(flat) / cols * cfg.sweep_stride;
            const int c = static_cast<int>(flat) % cols * cfg.sweep_stride;
            s.center_r = r + half;
            s.center_c = c + half;
            s.confidence = preds[static_cast<std::size_t>(i)].second;
        }
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (wall_time) {
        *wall_time = secs;
    }
    return scores;
}

Heatmap fuse(std::span<const PatchScore> scores, const FusionConfig& cfg, int h, int w) {
    cfg.validate();
    if (scores.empty()) {
        throw DataError("fuse: no classifications");
    }
    Heatmap hm;
    hm.h = h;
    hm.w = w;
    hm.patch_count = static_cast<int>(scores.size());
    const std::size_t n = static_cast<std::size_t>(h) * w;
    std::vector<double> num(n, 0.0);
    std::vector<double> den(n, 0.0);

    const int radius = static_cast<int>(std::ceil(2.0 * cfg.fwhm));
    const double sigma = kernel_sigma(cfg.fwhm);
    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    const double r2max = (2.0 * cfg.fwhm) * (2.0 * cfg.fwhm);

    // fixed accumulation order: scores in index order, window row-major
    for (const PatchScore& s : scores) {
        for (int dy = -radius; dy <= radius; ++dy) {
            const int y = s.center_r + dy;
            if (y < 0 || y >= h) {
                continue;
            }
            for (int dx = -radius; dx <= radius; ++dx) {
                const int x = s.center_c + dx;
                if (x < 0 || x >= w) {
                    continue;
                }
                const double r2 = static_cast<double>(dy) * dy + static_cast<double>(dx) * dx;
                if (r2 > r2max) {
                    continue;
                }
                const double g = std::exp(-r2 * inv2s2);
                const std::size_t p = static_cast<std::size_t>(y) * w + x;
                num[p] += static_cast<double>(s.confidence) * g;
                den[p] += g;
            }
        }
    }

    hm.values.assign(n, 0.0f);
    hm.coverage.assign(n, 0.0f);
    for (std::size_t p = 0; p < n; ++p) {
        hm.coverage[p] = static_cast<float>(den[p]);
        if (den[p] > 0.0) {
            const double v = cfg.normalized ? num[p] / den[p] : std::min(num[p], 1.0);
            hm.values[p] = static_cast<float>(v);
        }
    }
    return hm;
}

std::vector<std::uint8_t> binarize(const Heatmap& hm, double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0)) {
        throw ConfigError("binarize: threshold must be in (0,1)");
    }
    std::vector<std::uint8_t> mask(hm.values.size(), 0);
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (hm.coverage[i] > 0.0f && hm.values[i] > threshold) {
            mask[i] = 255;
        }
    }
    return mask;
}

void render_gray(const Heatmap& hm, const std::string& path) {
    ImageU8 img;
    img.h = hm.h;
    img.w = hm.w;
    img.channels = 1;
    img.px.resize(hm.values.size());
    for (std::size_t i = 0; i < img.px.size(); ++i) {
        img.px[i] = static_cast<std::uint8_t>(
            std::lround(std::clamp(hm.values[i], 0.0f, 1.0f) * 255.0f));
    }
    png_write_u8(path, img);
}

// blue (low) -> yellow (mid) -> red (high)
void render_color(const Heatmap& hm, const std::string& path) {
    ImageU8 img;
    img.h = hm.h;
    img.w = hm.w;
    img.channels = 3;
    img.px.resize(hm.values.size() * 3);
    for (std::size_t i = 0; i < hm.values.size(); ++i) {
        const double v = std::clamp(static_cast<double>(hm.values[i]), 0.0, 1.0);
        double r, g, b;
        if (v < 0.5) {
            const double t = v / 0.5;
            r = t * 255.0;
            g = t * 255.0;
            b = (1.0 - t) * 255.0;
        } else {
            const double t = (v - 0.5) / 0.5;
            r = 255.0;
            g = (1.0 - t) * 255.0;
            b = 0.0;
        }
        img.px[3 * i + 0] = static_cast<std::uint8_t>(std::lround(r));
        img.px[3 * i + 1] = static_cast<std::uint8_t>(std::lround(g));
        img.px[3 * i + 2] = static_cast<std::uint8_t>(std::lround(b));
    }
    png_write_u8(path, img);
}

void write_mask(const std::vector<std::uint8_t>& mask, int h, int w, const std::string& path) {
    ImageU8 img;
    img.h = h;
    img.w = w;
    img.channels = 1;
    img.px = mask;
    if (path.size() >= 4 && path.substr(path.size() - 4) == ".pgm") {
        pgm_write(path, img);
    } else {
        png_write_u8(path, img);
    }
}

}  // namespace occ
