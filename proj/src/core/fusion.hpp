// Full-frame inference: a constant-stride sweep of 32x32 patches, each
// classification spread as an isotropic Gaussian (peak = confidence, FWHM in
// pixels) and fused across overlapping patches into a per-pixel heatmap.
#pragma once

#include <span>
#include <string>
#include <vector>

#include "core/dataset.hpp"
#include "core/model.hpp"

namespace occ {

struct FusionConfig {
    int sweep_stride = 8;
    double fwhm = 8.0;
    int patch_size = kPatchSize;
    bool normalized = true;  // kernel-weighted mean; false = raw kernel sum

    void validate() const;
};

struct PatchScore {
    int center_r = 0;  // patch top-left + 16 in each axis
    int center_c = 0;
    float confidence = 0.0f;  // softmax probability of the Occlusion class
};

struct Heatmap {
    int h = 0;
    int w = 0;
    std::vector<float> values;    // in [0,1]; 0 where coverage is 0
    std::vector<float> coverage;  // accumulated kernel mass
    int frame_id = -1;
    int patch_count = 0;
    double wall_time = 0.0;  // seconds spent classifying the sweep
};

// sigma such that the kernel falls to half its peak at radius fwhm/2.
double kernel_sigma(double fwhm);

// Unit-peak kernel value at squared radial offset r2, truncated to zero
// beyond radius 2*fwhm.
double kernel_value(double r2, double fwhm);

// Grid positions along one axis: floor((extent - patch)/stride) + 1.
int sweep_positions(int extent, int patch_size, int stride);

// Classifies every stride-grid patch of the frame (normalized with the given
// stats). Requires stats matching the model's channel count.
std::vector<PatchScore> sweep(const CnnModelF& model, const RgbdFrame& frame,
                              const NormStats& stats, const FusionConfig& cfg, int threads = 1,
                              double* wall_time = nullptr);

// values(x) = sum_i conf_i G_i(x) / sum_i G_i(x) over covered pixels
// (normalized mode); raw mode accumulates conf_i G_i clamped to [0,1].
Heatmap fuse(std::span<const PatchScore> scores, const FusionConfig& cfg, int h, int w);

// mask = values > threshold, restricted to covered pixels (255/0).
std::vector<std::uint8_t> binarize(const Heatmap& hm, double threshold);

void render_gray(const Heatmap& hm, const std::string& path);
void render_color(const Heatmap& hm, const std::string& path);
// Writes PNG or, for a .pgm path, binary PGM.
void write_mask(const std::vector<std::uint8_t>& mask, int h, int w, const std::string& path);

}  // namespace occ
