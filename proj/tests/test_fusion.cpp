#include "doctest.h"

#include <cmath>
#include <random>

#include "core/fusion.hpp"
#include "core/image_io.hpp"
#include "testutil.hpp"

using namespace occ;
using testutil::TempDir;

namespace {

// independent per-pixel double-loop oracle for the mixture fusion
Heatmap naive_fuse(std::span<const PatchScore> scores, const FusionConfig& cfg, int h, int w) {
    Heatmap hm;
    hm.h = h;
    hm.w = w;
    hm.values.assign(static_cast<std::size_t>(h) * w, 0.0f);
    hm.coverage.assign(static_cast<std::size_t>(h) * w, 0.0f);
    const double sigma = kernel_sigma(cfg.fwhm);
    const double r2max = 4.0 * cfg.fwhm * cfg.fwhm;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double num = 0.0, den = 0.0;
            for (const PatchScore& s : scores) {
                const double r2 = static_cast<double>(y - s.center_r) * (y - s.center_r) +
                                  static_cast<double>(x - s.center_c) * (x - s.center_c);
                if (r2 > r2max) {
                    continue;
                }
                const double g = std::exp(-r2 / (2.0 * sigma * sigma));
                num += s.confidence * g;
                den += g;
            }
            const std::size_t p = static_cast<std::size_t>(y) * w + x;
            hm.coverage[p] = static_cast<float>(den);
            if (den > 0.0) {
                hm.values[p] = static_cast<float>(cfg.normalized ? num / den : std::min(num, 1.0));
            }
        }
    }
    return hm;
}

CnnModelF neutral_model(int channels) {
    NetConfig cfg;
    cfg.channels = channels;
    cfg.filters = {4, 4, 8};
    auto m = CnnModelF::init_with_config(cfg, InitSchedule{}, 1);
    m.w1().fill(0.0f);
    m.w2().fill(0.0f);
    m.w3().fill(0.0f);
    m.wfc().fill(0.0f);
    return m;  // logits [0,0]: confidence 0.5 for every patch
}

}  // namespace

TEST_CASE("kernel geometry: peak, half maximum, truncation, sigma") {
    CHECK(kernel_sigma(8.0) == doctest::Approx(3.3972).epsilon(1e-4));
    // peak value = confidence, half of it at radius fwhm/2
    const double fwhm = 8.0;
    CHECK(0.8 * kernel_value(0.0, fwhm) == doctest::Approx(0.8));
    CHECK(0.8 * kernel_value((fwhm / 2) * (fwhm / 2), fwhm) == doctest::Approx(0.4).epsilon(1e-9));
    // truncated to zero beyond radius 2*fwhm
    CHECK(kernel_value((2 * fwhm) * (2 * fwhm) + 1.0, fwhm) == 0.0);
    CHECK(kernel_value((2 * fwhm) * (2 * fwhm) - 1.0, fwhm) > 0.0);
}

TEST_CASE("sweep grid arithmetic matches the closed form") {
    CHECK(sweep_positions(480, 32, 8) == 57);
    CHECK(sweep_positions(640, 32, 8) == 77);
    CHECK(sweep_positions(480, 32, 4) == 113);
    CHECK(sweep_positions(640, 32, 4) == 153);
    CHECK(57 * 77 == 4389);
    CHECK(113 * 153 == 17289);
}

TEST_CASE("fusing equal confidences gives a constant heatmap on the support") {
    FusionConfig cfg;
    cfg.fwhm = 8.0;
    std::vector<PatchScore> scores;
    for (int i = 0; i < 5; ++i) {
        scores.push_back({20, 16 + 6 * i, 0.7f});
    }
    const Heatmap hm = fuse(scores, cfg, 48, 64);
    for (std::size_t p = 0; p < hm.values.size(); ++p) {
        if (hm.coverage[p] > 0.0f) {
            CHECK(hm.values[p] == doctest::Approx(0.7).epsilon(1e-6));
        } else {
            CHECK(hm.values[p] == 0.0f);
        }
    }
}

TEST_CASE("a single classification paints its kernel support with its confidence") {
    FusionConfig cfg;
    cfg.fwhm = 4.0;
    const std::vector<PatchScore> scores{{24, 24, 0.8f}};
    const Heatmap hm = fuse(scores, cfg, 48, 48);
    CHECK(hm.values[24 * 48 + 24] == doctest::Approx(0.8));
    // inside the truncation radius: the weighted mean of one term is the term
    CHECK(hm.values[24 * 48 + 24 + 7] == doctest::Approx(0.8));
    // outside radius 2*fwhm = 8: no coverage
    CHECK(hm.coverage[24 * 48 + 24 + 9] == 0.0f);
    CHECK(hm.values[24 * 48 + 24 + 9] == 0.0f);
    CHECK(hm.patch_count == 1);
}

TEST_CASE("two opposite kernels meet at 0.5 in the middle") {
    FusionConfig cfg;
    cfg.fwhm = 8.0;
    const std::vector<PatchScore> scores{{24, 20, 1.0f}, {24, 28, 0.0f}};
    const Heatmap hm = fuse(scores, cfg, 48, 48);
    CHECK(hm.values[24 * 48 + 24] == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("fusion matches the naive double-loop oracle on random instances") {
    std::mt19937 rng(301);
    for (int trial = 0; trial < 20; ++trial) {
        const int h = std::uniform_int_distribution<int>(16, 64)(rng);
        const int w = std::uniform_int_distribution<int>(16, 64)(rng);
        const int n = std::uniform_int_distribution<int>(1, 100)(rng);
        FusionConfig cfg;
        cfg.fwhm = std::uniform_real_distribution<double>(2.0, 10.0)(rng);
        cfg.normalized = trial % 2 == 0;
        std::vector<PatchScore> scores;
        for (int i = 0; i < n; ++i) {
            scores.push_back({std::uniform_int_distribution<int>(0, h - 1)(rng),
                              std::uniform_int_distribution<int>(0, w - 1)(rng),
                              std::uniform_real_distribution<float>(0.0f, 1.0f)(rng)});
        }
        const Heatmap a = fuse(scores, cfg, h, w);
        const Heatmap b = naive_fuse(scores, cfg, h, w);
        for (std::size_t p = 0; p < a.values.size(); ++p) {
            CHECK(std::abs(a.values[p] - b.values[p]) <= 1e-6);
        }
    }
}

TEST_CASE("fusion is order-invariant and stays inside the confidence range") {
    std::mt19937 rng(307);
    FusionConfig cfg;
    std::vector<PatchScore> scores;
    float lo = 1.0f, hi = 0.0f;
    for (int i = 0; i < 40; ++i) {
        const float c = std::uniform_real_distribution<float>(0.1f, 0.9f)(rng);
        lo = std::min(lo, c);
        hi = std::max(hi, c);
        scores.push_back({std::uniform_int_distribution<int>(8, 40)(rng),
                          std::uniform_int_distribution<int>(8, 56)(rng), c});
    }
    const Heatmap a = fuse(scores, cfg, 48, 64);
    auto shuffled = scores;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const Heatmap b = fuse(shuffled, cfg, 48, 64);
    for (std::size_t p = 0; p < a.values.size(); ++p) {
        CHECK(a.values[p] == doctest::Approx(b.values[p]).epsilon(1e-9));
        if (a.coverage[p] > 0.0f) {
            CHECK(a.values[p] >= lo - 1e-6f);
            CHECK(a.values[p] <= hi + 1e-6f);
        }
    }
}

TEST_CASE("binarize uses a strict threshold restricted to covered pixels") {
    FusionConfig cfg;
    const std::vector<PatchScore> scores{{16, 16, 0.5f}};
    const Heatmap hm = fuse(scores, cfg, 32, 32);
    // constant-0.5 support vs threshold 0.5: strict inequality keeps it empty
    const auto empty = binarize(hm, 0.5);
    for (const std::uint8_t v : empty) {
        CHECK(v == 0);
    }
    const auto low = binarize(hm, 0.4);
    const auto high = binarize(hm, 0.45);
    int low_count = 0, high_count = 0;
    for (std::size_t i = 0; i < low.size(); ++i) {
        low_count += low[i] == 255;
        high_count += high[i] == 255;
        if (high[i] == 255) {
            CHECK(low[i] == 255);  // raising the threshold never adds pixels
        }
    }
    CHECK(low_count > 0);
    CHECK(low_count >= high_count);
    CHECK_THROWS_AS(binarize(hm, 0.0), ConfigError);
    CHECK_THROWS_AS(binarize(hm, 1.0), ConfigError);
}

TEST_CASE("rendering round trips within quantization") {
    TempDir dir("render");
    Heatmap hm;
    hm.h = 8;
    hm.w = 8;
    hm.values.assign(64, 1.0f);
    hm.coverage.assign(64, 1.0f);
    const std::string ones = (dir.path() / "ones.png").string();
    render_gray(hm, ones);
    const ImageU8 img = png_read_u8(ones);
    for (const std::uint8_t v : img.px) {
        CHECK(v == 255);
    }

    hm.values.assign(64, 0.0f);
    const std::string zeros = (dir.path() / "zeros.png").string();
    render_gray(hm, zeros);
    const ImageU8 img0 = png_read_u8(zeros);
    for (const std::uint8_t v : img0.px) {
        CHECK(v == 0);
    }

    std::mt19937 rng(311);
    for (std::size_t i = 0; i < hm.values.size(); ++i) {
        hm.values[i] = std::uniform_real_distribution<float>(0.0f, 1.0f)(rng);
    }
    const std::string rnd = (dir.path() / "rnd.png").string();
    render_gray(hm, rnd);
    const ImageU8 imgr = png_read_u8(rnd);
    for (std::size_t i = 0; i < hm.values.size(); ++i) {
        CHECK(std::abs(imgr.px[i] / 255.0 - hm.values[i]) <= 0.5 / 255.0 + 1e-9);
    }

    // false-color endpoints: blue at 0, red at 1
    hm.values.assign(64, 0.0f);
    hm.values[0] = 1.0f;
    const std::string color = (dir.path() / "color.png").string();
    render_color(hm, color);
    const ImageU8 imgc = png_read_u8(color);
    CHECK(imgc.channels == 3);
    CHECK(imgc.px[0] == 255);  // red channel of a hot pixel
    CHECK(imgc.px[2] == 0);
    CHECK(imgc.px[3] == 0);    // next pixel is cold: blue
    CHECK(imgc.px[5] == 255);

    // masks go to pgm when asked
    const std::vector<std::uint8_t> mask(64, 255);
    const std::string pgm = (dir.path() / "mask.pgm").string();
    write_mask(mask, 8, 8, pgm);
    std::ifstream f(pgm, std::ios::binary);
    std::string header;
    f >> header;
    CHECK(header == "P5");
}

TEST_CASE("sweep classifies every grid position with matching stats") {
    const auto model = neutral_model(4);
    auto frame = testutil::flat_frame(64, 96, 2.0f);
    NormStats stats;
    stats.channels = 4;
    stats.mean = {0.5f, 0.5f, 0.5f, 2.0f};
    FusionConfig cfg;
    cfg.sweep_stride = 8;
    double wall = -1.0;
    const auto scores = sweep(model, frame, stats, cfg, 1, &wall);
    CHECK(scores.size() == static_cast<std::size_t>(sweep_positions(64, 32, 8)) *
                               sweep_positions(96, 32, 8));
    CHECK(wall >= 0.0);
    // patch centers are top-left + 16
    CHECK(scores[0].center_r == 16);
    CHECK(scores[0].center_c == 16);
    CHECK(scores[1].center_c == 24);
    for (const PatchScore& s : scores) {
        CHECK(s.confidence == doctest::Approx(0.5));
    }

    // halving the stride multiplies the position count by ~4 (exact grid form)
    cfg.sweep_stride = 4;
    const auto dense = sweep(model, frame, stats, cfg, 1, nullptr);
    CHECK(dense.size() == static_cast<std::size_t>(sweep_positions(64, 32, 4)) *
                              sweep_positions(96, 32, 4));

    // missing stats are an error
    NormStats none;
    CHECK_THROWS_AS(sweep(model, frame, none, cfg, 1, nullptr), DataError);
    // undersized frames are an error
    auto tiny = testutil::flat_frame(16, 16, 1.0f);
    CHECK_THROWS_AS(sweep(model, tiny, stats, cfg, 1, nullptr), DataError);
}
