#include "core/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"

#include "core/image_io.hpp"

namespace fs = std::filesystem;

namespace occ {

namespace {

struct PlacedRect {
    int r0, c0, r1, c1;  // inclusive bounds
};

PlacedRect place(const SceneRect& r, int frame_index) {
    const int dr = static_cast<int>(std::lround(r.drift_r * frame_index));
    const int dc = static_cast<int>(std::lround(r.drift_c * frame_index));
    return {r.row + dr, r.col + dc, r.row + dr + r.height - 1, r.col + dc + r.width - 1};
}

bool inside(const PlacedRect& p, int y, int x) {
    return y >= p.r0 && y <= p.r1 && x >= p.c0 && x <= p.c1;
}

// adjacency band: the rectangle's own perimeter plus the one-pixel outside ring
bool on_band(const PlacedRect& p, int y, int x) {
    if (inside(p, y, x)) {
        return y == p.r0 || y == p.r1 || x == p.c0 || x == p.c1;
    }
    return y >= p.r0 - 1 && y <= p.r1 + 1 && x >= p.c0 - 1 && x <= p.c1 + 1;
}

int gap(const PlacedRect& a, const PlacedRect& b) {
    const int dr = std::max({a.r0 - b.r1, b.r0 - a.r1, 0});
    const int dc = std::max({a.c0 - b.c1, b.c0 - a.c1, 0});
    return std::max(dr, dc);
}

std::uint8_t clamp_u8(double v) {
    return static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
}

std::array<std::uint8_t, 3> parse_color(const nlohmann::json& j) {
    auto v = j.get<std::vector<int>>();
    if (v.size() != 3) {
        throw ConfigError("scene: color must have 3 components");
    }
    return {static_cast<std::uint8_t>(std::clamp(v[0], 0, 255)),
            static_cast<std::uint8_t>(std::clamp(v[1], 0, 255)),
            static_cast<std::uint8_t>(std::clamp(v[2], 0, 255))};
}

SceneRect parse_rect(const nlohmann::json& j, bool painted) {
    SceneRect r;
    auto rect = j.at("rect").get<std::vector<int>>();
    if (rect.size() != 4) {
        throw ConfigError("scene: rect must be [row, col, height, width]");
    }
    r.row = rect[0];
    r.col = rect[1];
    r.height = rect[2];
    r.width = rect[3];
    if (!painted) {
        r.depth = j.at("depth").get<double>();
    }
    if (j.contains("color")) {
        r.color = parse_color(j.at("color"));
    }
    if (j.contains("drift")) {
        auto d = j.at("drift").get<std::vector<double>>();
        if (d.size() != 2) {
            throw ConfigError("scene: drift must be [dr, dc]");
        }
        r.drift_r = d[0];
        r.drift_c = d[1];
    }
    return r;
}

}  // namespace

SceneSpec SceneSpec::parse_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("scene spec parse error: ") + e.what());
    }
    SceneSpec s;
    try {
        s.height = j.value("height", s.height);
        s.width = j.value("width", s.width);
        s.frames = j.value("frames", s.frames);
        s.seed = j.value("seed", s.seed);
        s.start_time = j.value("start_time", s.start_time);
        s.dt = j.value("dt", s.dt);
        if (j.contains("background")) {
            const auto& bg = j.at("background");
            s.background_depth = bg.value("depth", s.background_depth);
            if (bg.contains("color")) {
                s.background_color = parse_color(bg.at("color"));
            }
            s.checker_size = bg.value("checker_size", s.checker_size);
            if (bg.contains("drift")) {
                auto d = bg.at("drift").get<std::vector<double>>();
                if (d.size() != 2) {
                    throw ConfigError("scene: background drift must be [dr, dc]");
                }
                s.checker_drift_r = d[0];
                s.checker_drift_c = d[1];
            }
        }
        s.noise_std = j.value("noise_std", s.noise_std);
        s.depth_noise = j.value("depth_noise", s.depth_noise);
        s.shadow = j.value("shadow", s.shadow);
        s.shadow_px = j.value("shadow_px", s.shadow_px);
        s.shadow_factor = j.value("shadow_factor", s.shadow_factor);
        s.label_tau = j.value("label_tau", s.label_tau);
        for (const auto& b : j.value("boxes", nlohmann::json::array())) {
            s.boxes.push_back(parse_rect(b, false));
        }
        for (const auto& b : j.value("painted", nlohmann::json::array())) {
            s.painted.push_back(parse_rect(b, true));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("scene spec error: ") + e.what());
    }
    s.validate();
    return s;
}

SceneSpec SceneSpec::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) {
        throw DataError("scene spec not found: " + path);
    }
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return parse_json(text);
}

void SceneSpec::validate() const {
    if (height < kPatchSize || width < kPatchSize) {
        throw ConfigError("scene: frame must be at least " + std::to_string(kPatchSize) + "x" +
                          std::to_string(kPatchSize));
    }
    if (frames < 1) {
        throw ConfigError("scene: frames must be >= 1");
    }
    if (background_depth <= 0.0) {
        throw ConfigError("scene: background depth must be positive");
    }
    if (label_tau <= 0.0) {
        throw ConfigError("scene: label_tau must be positive");
    }
    if (depth_noise < 0.0 || 2.0 * depth_noise > 0.9 * label_tau) {
        throw ConfigError("scene: depth_noise must satisfy 2*noise <= 0.9*label_tau");
    }
    if (shadow && (shadow_px < 0 || shadow_factor <= 0.0 || shadow_factor > 1.0)) {
        throw ConfigError("scene: invalid shadow parameters");
    }

    // Every rectangle must stay inside the frame with margin and keep a gap
    // from every other one at every frame index, so the label bands of
    // different objects never interact.
    const int margin = 2;
    const int min_gap = 4;
    for (int f = 0; f < frames; ++f) {
        std::vector<PlacedRect> placed;
        auto check = [&](const SceneRect& r, bool painted) {
            if (r.height < 2 || r.width < 2) {
                throw ConfigError("scene: rectangles must be at least 2x2");
            }
            if (!painted) {
                if (r.depth <= 0.0) {
                    throw ConfigError("scene: box depth must be positive");
                }
                if (std::abs(r.depth - background_depth) - 2.0 * depth_noise <= 1.1 * label_tau) {
                    throw ConfigError(
                        "scene: box depth too close to background for tau " +
                        std::to_string(label_tau));
                }
            }
            const PlacedRect p = place(r, f);
            if (p.r0 < margin || p.c0 < margin || p.r1 >= height - margin ||
                p.c1 >= width - margin) {
                throw ConfigError("scene: rectangle leaves the frame (or margin) at frame " +
                                  std::to_string(f));
            }
            for (const PlacedRect& q : placed) {
                if (gap(p, q) < min_gap) {
                    throw ConfigError("scene: rectangles overlap or sit closer than " +
                                      std::to_string(min_gap) + " px at frame " +
                                      std::to_string(f));
                }
            }
            placed.push_back(p);
        };
        for (const SceneRect& r : boxes) {
            check(r, false);
        }
        for (const SceneRect& r : painted) {
            check(r, true);
        }
    }
}

SynthFrame synth_scene(const SceneSpec& spec, int frame_index) {
    spec.validate();
    if (frame_index < 0 || frame_index >= spec.frames) {
        throw ConfigError("synth_scene: frame index out of range");
    }
    const int h = spec.height;
    const int w = spec.width;
    const std::size_t n = static_cast<std::size_t>(h) * w;

    SynthFrame out;
    RgbdFrame& fr = out.frame;
    fr.h = h;
    fr.w = w;
    fr.frame_id = frame_index;
    fr.timestamp = spec.start_time + frame_index * spec.dt;
    fr.rgb.resize(n * 3);
    fr.depth_m.assign(n, static_cast<float>(spec.background_depth));
    fr.valid.assign(n, 1);

    // background texture, panned per frame
    const int cdr = static_cast<int>(std::lround(spec.checker_drift_r * frame_index));
    const int cdc = static_cast<int>(std::lround(spec.checker_drift_c * frame_index));
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const std::size_t p = fr.index(y, x);
            double shade = 1.0;
            if (spec.checker_size > 0) {
                const int cy = ((y + cdr) / spec.checker_size) & 1;
                const int cx = ((x + cdc) / spec.checker_size) & 1;
                shade = (cy ^ cx) ? 0.84 : 1.0;
            }
            for (int c = 0; c < 3; ++c) {
                fr.rgb[3 * p + c] = clamp_u8(spec.background_color[c] * shade);
            }
        }
    }

    std::vector<PlacedRect> boxes;
    for (const SceneRect& r : spec.boxes) {
        boxes.push_back(place(r, frame_index));
    }
    std::vector<PlacedRect> painted;
    for (const SceneRect& r : spec.painted) {
        painted.push_back(place(r, frame_index));
    }

    // shadows first so box fills overwrite their own band if drift collides
    if (spec.shadow) {
        auto is_free = [&](int y, int x) {
            for (const PlacedRect& b : boxes) {
                if (inside(b, y, x)) {
                    return false;
                }
            }
            for (const PlacedRect& b : painted) {
                if (inside(b, y, x)) {
                    return false;
                }
            }
            return true;
        };
        for (const PlacedRect& b : boxes) {
            for (int y = b.r0; y <= std::min(b.r1 + spec.shadow_px, h - 1); ++y) {
                for (int x = b.c0; x <= std::min(b.c1 + spec.shadow_px, w - 1); ++x) {
                    if (inside(b, y, x) || !is_free(y, x)) {
                        continue;
                    }
                    const std::size_t p = fr.index(y, x);
                    for (int c = 0; c < 3; ++c) {
                        fr.rgb[3 * p + c] = clamp_u8(fr.rgb[3 * p + c] * spec.shadow_factor);
                    }
                }
            }
        }
    }

    auto fill = [&](const PlacedRect& b, const std::array<std::uint8_t, 3>& color, double depth) {
        for (int y = b.r0; y <= b.r1; ++y) {
            for (int x = b.c0; x <= b.c1; ++x) {
                const std::size_t p = fr.index(y, x);
                fr.rgb[3 * p + 0] = color[0];
                fr.rgb[3 * p + 1] = color[1];
                fr.rgb[3 * p + 2] = color[2];
                if (depth > 0.0) {
                    fr.depth_m[p] = static_cast<float>(depth);
                }
            }
        }
    };
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        fill(boxes[i], spec.boxes[i].color, spec.boxes[i].depth);
    }
    for (std::size_t i = 0; i < painted.size(); ++i) {
        fill(painted[i], spec.painted[i].color, 0.0);
    }

    // per-frame deterministic noise
    Rng rng(spec.seed ^ (0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(frame_index + 1)));
    if (spec.noise_std > 0.0) {
        for (std::size_t p = 0; p < n; ++p) {
            for (int c = 0; c < 3; ++c) {
                fr.rgb[3 * p + c] =
                    clamp_u8(fr.rgb[3 * p + c] + rng.gaussian() * spec.noise_std);
            }
        }
    }
    if (spec.depth_noise > 0.0) {
        for (std::size_t p = 0; p < n; ++p) {
            fr.depth_m[p] += static_cast<float>((rng.uniform() * 2.0 - 1.0) * spec.depth_noise);
        }
    }

    // analytic labels: the 1-px band on both sides of each depth silhouette
    out.labels.h = h;
    out.labels.w = w;
    out.labels.labels.assign(n, PixelLabel::NoEdge);
    for (const PlacedRect& b : boxes) {
        for (int y = std::max(0, b.r0 - 1); y <= std::min(h - 1, b.r1 + 1); ++y) {
            for (int x = std::max(0, b.c0 - 1); x <= std::min(w - 1, b.c1 + 1); ++x) {
                if (on_band(b, y, x)) {
                    out.labels.at(y, x) = PixelLabel::OcclusionEdge;
                }
            }
        }
    }
    out.painted_edges.assign(n, 0);
    for (const PlacedRect& b : painted) {
        for (int y = std::max(0, b.r0 - 1); y <= std::min(h - 1, b.r1 + 1); ++y) {
            for (int x = std::max(0, b.c0 - 1); x <= std::min(w - 1, b.c1 + 1); ++x) {
                if (on_band(b, y, x)) {
                    out.painted_edges[fr.index(y, x)] = 1;
                }
            }
        }
    }
    return out;
}

void write_synth_dataset(const SceneSpec& spec, const std::string& out_dir) {
    spec.validate();
    const fs::path root(out_dir);
    fs::create_directories(root / "rgb");
    fs::create_directories(root / "depth");
    fs::create_directories(root / "labels");

    std::ofstream rgb_index(root / "rgb.txt", std::ios::trunc);
    std::ofstream depth_index(root / "depth.txt", std::ios::trunc);
    if (!rgb_index || !depth_index) {
        throw DataError("cannot write index files under " + out_dir);
    }
    rgb_index << "# color images\n# timestamp filename\n";
    depth_index << "# depth images\n# timestamp filename\n";

    for (int f = 0; f < spec.frames; ++f) {
        const SynthFrame sf = synth_scene(spec, f);
        char ts[32];
        std::snprintf(ts, sizeof(ts), "%.6f", sf.frame.timestamp);

        ImageU8 rgb;
        rgb.h = sf.frame.h;
        rgb.w = sf.frame.w;
        rgb.channels = 3;
        rgb.px = sf.frame.rgb;
        png_write_u8((root / "rgb" / (std::string(ts) + ".png")).string(), rgb);

        ImageU16 depth;
        depth.h = sf.frame.h;
        depth.w = sf.frame.w;
        depth.px.resize(rgb.px.size() / 3);
        for (std::size_t i = 0; i < depth.px.size(); ++i) {
            const double raw = sf.frame.valid[i] ? sf.frame.depth_m[i] * kDepthScale : 0.0;
            depth.px[i] = static_cast<std::uint16_t>(std::clamp(std::lround(raw), 0L, 65535L));
        }
        png_write_u16((root / "depth" / (std::string(ts) + ".png")).string(), depth);

        write_label_png(sf.labels, (root / "labels" / (std::string(ts) + ".png")).string());

        rgb_index << ts << " rgb/" << ts << ".png\n";
        depth_index << ts << " depth/" << ts << ".png\n";
    }
}

}  // namespace occ
