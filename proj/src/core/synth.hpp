// Synthetic RGB-D scene generator: axis-aligned boxes at distinct depths over
// a textured background plane, plus painted (texture-only) rectangles that
// create appearance edges without any depth discontinuity. Scenes render with
// exact depth and analytically known edge labels, and can be written out as a
// TUM-layout dataset.
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "core/dataset.hpp"

namespace occ {

struct SceneRect {
    int row = 0;
    int col = 0;
    int height = 0;
    int width = 0;
    double depth = 0.0;              // ignored for painted rectangles
    std::array<std::uint8_t, 3> color{128, 128, 128};
    double drift_r = 0.0;            // per-frame translation, pixels
    double drift_c = 0.0;
};

struct SceneSpec {
    int height = 480;
    int width = 640;
    int frames = 1;
    std::uint64_t seed = 1;
    double start_time = 1000.0;
    double dt = 1.0 / 30.0;

    double background_depth = 3.0;
    std::array<std::uint8_t, 3> background_color{168, 158, 146};
    int checker_size = 0;            // 0 = flat background
    double checker_drift_r = 0.0;    // texture pan, emulating camera motion
    double checker_drift_c = 0.0;

    double noise_std = 0.0;          // RGB noise, 8-bit units
    double depth_noise = 0.0;        // uniform +-v meters, kept << label_tau
    bool shadow = false;             // darken background right+below depth boxes
    int shadow_px = 2;
    double shadow_factor = 0.6;
    double label_tau = 0.10;

    std::vector<SceneRect> boxes;    // at their own depth
    std::vector<SceneRect> painted;  // at background depth

    void validate() const;
    static SceneSpec parse_json(const std::string& text);
    static SceneSpec load(const std::string& path);
};

struct SynthFrame {
    RgbdFrame frame;
    LabelFrame labels;                        // analytic occlusion labels
    std::vector<std::uint8_t> painted_edges;  // h*w, 1 on appearance-edge band
};

SynthFrame synth_scene(const SceneSpec& spec, int frame_index);

// Renders every frame into a TUM-layout directory: rgb/, depth/, rgb.txt,
// depth.txt, plus labels/ with the analytic label PNGs.
void write_synth_dataset(const SceneSpec& spec, const std::string& out_dir);

}  // namespace occ
