// RGB-D sequence ingestion, depth-threshold ground-truth labeling, 32x32
// patch extraction with center-pixel labels, train/test splitting and the
// binary patch cache.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "core/common.hpp"
#include "core/tensor.hpp"

namespace occ {

constexpr int kPatchSize = 32;
constexpr double kDepthScale = 5000.0;      // raw 16-bit units per meter
constexpr double kPairTolerance = 0.02;     // seconds, rgb<->depth association

struct RgbdFrame {
    int h = 0;
    int w = 0;
    std::vector<std::uint8_t> rgb;    // h*w*3 interleaved
    std::vector<float> depth_m;       // meters; 0 where invalid
    std::vector<std::uint8_t> valid;  // 1 where depth known
    double timestamp = 0.0;
    int frame_id = -1;

    std::size_t index(int y, int x) const { return static_cast<std::size_t>(y) * w + x; }
};

enum class PixelLabel : std::uint8_t { NoEdge = 0, OcclusionEdge = 1, Invalid = 2 };

struct LabelFrame {
    int h = 0;
    int w = 0;
    std::vector<PixelLabel> labels;

    PixelLabel at(int y, int x) const { return labels[static_cast<std::size_t>(y) * w + x]; }
    PixelLabel& at(int y, int x) { return labels[static_cast<std::size_t>(y) * w + x]; }
};

enum class PatchLabel : std::uint8_t { NoOcclusion = 0, Occlusion = 1 };

struct Patch {
    TensorF data;  // C x 32 x 32; RGB scaled to [0,1], depth in meters
    PatchLabel label = PatchLabel::NoOcclusion;
    int frame_id = -1;
    int row = 0;  // top-left corner in the source frame
    int col = 0;
};

struct SequenceLoadResult {
    std::vector<RgbdFrame> frames;
    int unpaired_rgb = 0;
    int unpaired_depth = 0;
};

// Reads a TUM-layout directory: rgb.txt / depth.txt timestamp indices, 8-bit
// RGB PNGs and 16-bit depth PNGs at 5000 raw units per meter (0 = invalid).
// RGB frames pair with the nearest unused depth frame within 0.02 s; the rest
// are dropped and counted.
SequenceLoadResult load_sequence(const std::string& dir, int threads = 1);

// Depth-discontinuity ground truth: a pixel is an occlusion edge when it and
// at least one 8-neighbor are valid and the largest absolute depth difference
// to a valid neighbor exceeds tau; Invalid when the pixel or its whole
// neighborhood lacks depth. Border pixels use their clipped neighborhood.
LabelFrame make_labels(const RgbdFrame& frame, double tau_depth);

struct ExtractStats {
    int grid_positions = 0;
    int rejected = 0;
};

// Slides a stride grid of 32x32 windows over the frame. A window is rejected
// when any of its center 2x2 pixels (rows 15-16 x cols 15-16) is Invalid or
// when its Invalid fraction exceeds max_invalid_fraction; it is labeled
// Occlusion when at least `min_center_edges` of the center 4 pixels are
// occlusion edges.
std::vector<Patch> extract_patches(const RgbdFrame& frame, const LabelFrame& labels, int stride,
                                   double max_invalid_fraction, int channels,
                                   ExtractStats* stats = nullptr, int min_center_edges = 2);

struct NormStats {
    int channels = 0;
    std::vector<float> mean;

    void save(const std::string& path) const;
    static NormStats load(const std::string& path);
};

// Per-channel means over a training split (RGB already in [0,1], depth in
// meters). Normalization subtracts them in place.
NormStats compute_stats(const std::vector<Patch>& train_patches);
void normalize(std::vector<Patch>& patches, const NormStats& stats);

// Contiguous-in-time split: frames [0, boundary) train, [boundary, end) test.
int split_boundary(int frame_count, double train_fraction);
std::pair<std::vector<int>, std::vector<int>> split_frame_ids(int frame_count, int boundary);

// Keeps every positive and a seeded subsample of negatives capped at
// ratio * positives. No-op when negatives are already below the cap.
void subsample_negatives(std::vector<Patch>& patches, double ratio, std::uint64_t seed);

struct PatchSet {
    int channels = 0;
    NormStats stats;
    std::vector<Patch> train;
    std::vector<Patch> test;

    void save(const std::string& path) const;
    static PatchSet load(const std::string& path);
};

struct ExtractConfig {
    int channels = 4;
    int stride = 16;
    double tau_depth = 0.10;
    double max_invalid_fraction = 0.10;
    double train_fraction = 0.7;
    bool balance = false;
    double balance_ratio = 4.0;
    std::uint64_t seed = 1;
    int threads = 1;

    void validate() const;
};

// Full extraction pipeline over a sequence directory: load, label, extract
// per frame (merged in frame order), split by time, optionally balance the
// training half, then normalize with training-split statistics.
PatchSet extract_dataset(const std::string& dir, const ExtractConfig& cfg);

// Writes the trivalent label image (no edge 128, occlusion 255, invalid 0).
void write_label_png(const LabelFrame& labels, const std::string& path);

TensorF patch_tensor(const RgbdFrame& frame, int row, int col, int channels);

}  // namespace occ
