#include "core/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "core/bin_io.hpp"
#include "core/image_io.hpp"

namespace fs = std::filesystem;

namespace occ {

namespace {

struct IndexEntry {
    double timestamp;
    std::string file;
};

std::vector<IndexEntry> read_index(const std::string& dir, const char* name) {
    const fs::path path = fs::path(dir) / name;
    std::ifstream f(path);
    if (!f) {
        throw DataError("missing index file: " + path.string());
    }
    std::vector<IndexEntry> out;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#') {
            continue;
        }
        std::istringstream ls(line);
        IndexEntry e;
        if (ls >> e.timestamp >> e.file) {
            out.push_back(std::move(e));
        }
    }
    std::sort(out.begin(), out.end(),
              [](const IndexEntry& a, const IndexEntry& b) { return a.timestamp < b.timestamp; });
    return out;
}

}  // namespace

SequenceLoadResult load_sequence(const std::string& dir, int threads) {
    const auto rgb_index = read_index(dir, "rgb.txt");
    const auto depth_index = read_index(dir, "depth.txt");

    // Greedy nearest-timestamp association; each depth frame pairs at most once.
    std::vector<std::pair<int, int>> pairs;
    std::vector<bool> depth_used(depth_index.size(), false);
    std::size_t j = 0;
    for (std::size_t i = 0; i < rgb_index.size(); ++i) {
        const double ts = rgb_index[i].timestamp;
        while (j + 1 < depth_index.size() &&
               std::abs(depth_index[j + 1].timestamp - ts) <= std::abs(depth_index[j].timestamp - ts)) {
            ++j;
        }
        if (j < depth_index.size() && !depth_used[j] &&
            std::abs(depth_index[j].timestamp - ts) <= kPairTolerance) {
            depth_used[j] = true;
            pairs.emplace_back(static_cast<int>(i), static_cast<int>(j));
        }
    }
    if (pairs.empty()) {
        throw DataError("no rgb/depth pairs within " + std::to_string(kPairTolerance) +
                        " s in " + dir);
    }

    SequenceLoadResult result;
    result.unpaired_rgb = static_cast<int>(rgb_index.size() - pairs.size());
    result.unpaired_depth = static_cast<int>(depth_index.size() - pairs.size());
    result.frames.resize(pairs.size());

    parallel_for(pairs.size(), threads, [&](std::size_t b, std::size_t e) {
        for (std::size_t k = b; k < e; ++k) {
            const auto [ri, di] = pairs[k];
            ImageU8 rgb = png_read_u8((fs::path(dir) / rgb_index[static_cast<std::size_t>(ri)].file).string());
            ImageU16 depth = png_read_u16((fs::path(dir) / depth_index[static_cast<std::size_t>(di)].file).string());
            if (rgb.h != depth.h || rgb.w != depth.w) {
                throw DataError("rgb and depth sizes differ for pair at t=" +
                                std::to_string(rgb_index[static_cast<std::size_t>(ri)].timestamp));
            }
            RgbdFrame& fr = result.frames[k];
            fr.h = rgb.h;
            fr.w = rgb.w;
            fr.timestamp = rgb_index[static_cast<std::size_t>(ri)].timestamp;
            fr.frame_id = static_cast<int>(k);
            const std::size_t n = static_cast<std::size_t>(fr.h) * fr.w;
            fr.rgb.resize(n * 3);
            if (rgb.channels == 3) {
                fr.rgb = std::move(rgb.px);
            } else {
                for (std::size_t p = 0; p < n; ++p) {
                    fr.rgb[3 * p] = fr.rgb[3 * p + 1] = fr.rgb[3 * p + 2] = rgb.px[p];
                }
            }
            fr.depth_m.resize(n);
            fr.valid.resize(n);
            for (std::size_t p = 0; p < n; ++p) {
                const std::uint16_t raw = depth.px[p];
                fr.valid[p] = raw > 0 ? 1 : 0;
                fr.depth_m[p] = raw > 0 ? static_cast<float>(raw / kDepthScale) : 0.0f;
            }
        }
    });
    return result;
}

LabelFrame make_labels(const RgbdFrame& frame, double tau_depth) {
    if (tau_depth <= 0.0) {
        throw ConfigError("make_labels: tau_depth must be positive");
    }
    LabelFrame lf;
    lf.h = frame.h;
    lf.w = frame.w;
    lf.labels.assign(static_cast<std::size_t>(frame.h) * frame.w, PixelLabel::NoEdge);
    const float tau = static_cast<float>(tau_depth);
    for (int y = 0; y < frame.h; ++y) {
        for (int x = 0; x < frame.w; ++x) {
            const std::size_t p = frame.index(y, x);
            bool any_valid_neighbor = false;
            float max_diff = 0.0f;
            const float d = frame.depth_m[p];
            for (int dy = -1; dy <= 1; ++dy) {
                const int ny = y + dy;
                if (ny < 0 || ny >= frame.h) {
                    continue;
                }
                for (int dx = -1; dx <= 1; ++dx) {
                    if (dy == 0 && dx == 0) {
                        continue;
                    }
                    const int nx = x + dx;
                    if (nx < 0 || nx >= frame.w) {
                        continue;
                    }
                    const std::size_t q = frame.index(ny, nx);
                    if (!frame.valid[q]) {
                        continue;
                    }
                    any_valid_neighbor = true;
                    max_diff = std::max(max_diff, std::abs(d - frame.depth_m[q]));
                }
            }
            if (!frame.valid[p] || !any_valid_neighbor) {
                lf.labels[p] = PixelLabel::Invalid;
            } else if (max_diff > tau) {
                lf.labels[p] = PixelLabel::OcclusionEdge;
            }
        }
    }
    return lf;
}

TensorF patch_tensor(const RgbdFrame& frame, int row, int col, int channels) {
    TensorF t({channels, kPatchSize, kPatchSize});
    float* out = t.data();
    const std::size_t plane = static_cast<std::size_t>(kPatchSize) * kPatchSize;
    for (int y = 0; y < kPatchSize; ++y) {
        for (int x = 0; x < kPatchSize; ++x) {
            const std::size_t p = frame.index(row + y, col + x);
            const std::size_t o = static_cast<std::size_t>(y) * kPatchSize + x;
            out[o] = frame.rgb[3 * p] / 255.0f;
            out[plane + o] = frame.rgb[3 * p + 1] / 255.0f;
            out[2 * plane + o] = frame.rgb[3 * p + 2] / 255.0f;
            if (channels == 4) {
                out[3 * plane + o] = frame.depth_m[p];
            }
        }
    }
    return t;
}

std::vector<Patch> extract_patches(const RgbdFrame& frame, const LabelFrame& labels, int stride,
                                   double max_invalid_fraction, int channels, ExtractStats* stats,
                                   int min_center_edges) {
    if (stride < 1) {
        throw ConfigError("extract_patches: stride must be >= 1");
    }
    if (channels != 3 && channels != 4) {
        throw ConfigError("extract_patches: channels must be 3 or 4");
    }
    if (frame.h < kPatchSize || frame.w < kPatchSize) {
        throw DataError("frame " + std::to_string(frame.h) + "x" + std::to_string(frame.w) +
                        " smaller than patch size " + std::to_string(kPatchSize));
    }
    if (labels.h != frame.h || labels.w != frame.w) {
        throw ShapeError("extract_patches: label frame size mismatch");
    }

    std::vector<Patch> out;
    int grid = 0;
    int rejected = 0;
    const int c0 = kPatchSize / 2 - 1;  // center 2x2 = rows/cols 15..16 within the patch
    for (int r = 0; r + kPatchSize <= frame.h; r += stride) {
        for (int c = 0; c + kPatchSize <= frame.w; c += stride) {
            ++grid;
            int center_invalid = 0;
            int center_edges = 0;
            for (int dy = 0; dy < 2; ++dy) {
                for (int dx = 0; dx < 2; ++dx) {
                    const PixelLabel l = labels.at(r + c0 + dy, c + c0 + dx);
                    center_invalid += l == PixelLabel::Invalid;
                    center_edges += l == PixelLabel::OcclusionEdge;
                }
            }
            if (center_invalid > 0) {
                ++rejected;
                continue;
            }
            int invalid = 0;
            for (int y = 0; y < kPatchSize; ++y) {
                for (int x = 0; x < kPatchSize; ++x) {
                    invalid += labels.at(r + y, c + x) == PixelLabel::Invalid;
                }
            }
            if (invalid > max_invalid_fraction * (kPatchSize * kPatchSize)) {
                ++rejected;
                continue;
            }
            Patch p;
            p.data = patch_tensor(frame, r, c, channels);
            p.label = center_edges >= min_center_edges ? PatchLabel::Occlusion
                                                       : PatchLabel::NoOcclusion;
            p.frame_id = frame.frame_id;
            p.row = r;
            p.col = c;
            out.push_back(std::move(p));
        }
    }
    if (stats) {
        stats->grid_positions = grid;
        stats->rejected = rejected;
    }
    return out;
}

NormStats compute_stats(const std::vector<Patch>& train_patches) {
    if (train_patches.empty()) {
        throw DataError("compute_stats: empty training set");
    }
    const int channels = train_patches.front().data.extent(0);
    NormStats s;
    s.channels = channels;
    s.mean.assign(static_cast<std::size_t>(channels), 0.0f);
    std::vector<double> acc(static_cast<std::size_t>(channels), 0.0);
    const std::size_t plane = static_cast<std::size_t>(kPatchSize) * kPatchSize;
    for (const Patch& p : train_patches) {
        if (p.data.extent(0) != channels) {
            throw ShapeError("compute_stats: mixed channel counts in patch set");
        }
        const float* d = p.data.data();
        for (int c = 0; c < channels; ++c) {
            double sum = 0.0;
            for (std::size_t i = 0; i < plane; ++i) {
                sum += d[static_cast<std::size_t>(c) * plane + i];
            }
            acc[static_cast<std::size_t>(c)] += sum;
        }
    }
    const double denom = static_cast<double>(train_patches.size()) * static_cast<double>(plane);
    for (int c = 0; c < channels; ++c) {
        s.mean[static_cast<std::size_t>(c)] = static_cast<float>(acc[static_cast<std::size_t>(c)] / denom);
    }
    return s;
}

void normalize(std::vector<Patch>& patches, const NormStats& stats) {
    const std::size_t plane = static_cast<std::size_t>(kPatchSize) * kPatchSize;
    for (Patch& p : patches) {
        if (p.data.extent(0) != stats.channels) {
            throw ShapeError("normalize: patch channels " + std::to_string(p.data.extent(0)) +
                             " != stats channels " + std::to_string(stats.channels));
        }
        float* d = p.data.data();
        for (int c = 0; c < stats.channels; ++c) {
            const float m = stats.mean[static_cast<std::size_t>(c)];
            for (std::size_t i = 0; i < plane; ++i) {
                d[static_cast<std::size_t>(c) * plane + i] -= m;
            }
        }
    }
}

void NormStats::save(const std::string& path) const {
    nlohmann::json j;
    j["version"] = 1;
    j["channels"] = channels;
    j["mean"] = mean;
    std::ofstream f(path, std::ios::trunc);
    if (!f) {
        throw DataError("cannot write stats file: " + path);
    }
    f << j.dump(2) << "\n";
}

NormStats NormStats::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) {
        throw DataError("stats file not found: " + path);
    }
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed stats file " + path + ": " + e.what());
    }
    NormStats s;
    try {
        s.channels = j.at("channels").get<int>();
        s.mean = j.at("mean").get<std::vector<float>>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("malformed stats file " + path + ": " + e.what());
    }
    if (s.channels < 1 || s.mean.size() != static_cast<std::size_t>(s.channels)) {
        throw FormatError("stats file channel/mean mismatch: " + path);
    }
    return s;
}

int split_boundary(int frame_count, double train_fraction) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw ConfigError("train_fraction must be in (0,1)");
    }
    const int b = static_cast<int>(std::lround(train_fraction * frame_count));
    return std::clamp(b, 1, frame_count - 1);
}

std::pair<std::vector<int>, std::vector<int>> split_frame_ids(int frame_count, int boundary) {
    if (boundary <= 0 || boundary >= frame_count) {
        throw DataError("degenerate split boundary " + std::to_string(boundary) + " for " +
                        std::to_string(frame_count) + " frames");
    }
    std::vector<int> train, test;
    for (int i = 0; i < boundary; ++i) {
        train.push_back(i);
    }
    for (int i = boundary; i < frame_count; ++i) {
        test.push_back(i);
    }
    return {std::move(train), std::move(test)};
}

void subsample_negatives(std::vector<Patch>& patches, double ratio, std::uint64_t seed) {
    if (ratio <= 0.0) {
        throw ConfigError("balance ratio must be positive");
    }
    std::size_t positives = 0;
    for (const Patch& p : patches) {
        positives += p.label == PatchLabel::Occlusion;
    }
    const std::size_t keep_negatives =
        static_cast<std::size_t>(std::llround(ratio * static_cast<double>(positives)));
    std::vector<std::size_t> neg_idx;
    for (std::size_t i = 0; i < patches.size(); ++i) {
        if (patches[i].label == PatchLabel::NoOcclusion) {
            neg_idx.push_back(i);
        }
    }
    if (neg_idx.size() <= keep_negatives) {
        return;
    }
    Rng rng(seed);
    rng.shuffle(neg_idx);
    neg_idx.resize(keep_negatives);
    std::sort(neg_idx.begin(), neg_idx.end());
    std::vector<Patch> kept;
    kept.reserve(positives + keep_negatives);
    std::size_t ni = 0;
    for (std::size_t i = 0; i < patches.size(); ++i) {
        if (patches[i].label == PatchLabel::Occlusion) {
            kept.push_back(std::move(patches[i]));
        } else if (ni < neg_idx.size() && neg_idx[ni] == i) {
            kept.push_back(std::move(patches[i]));
            ++ni;
        }
    }
    patches = std::move(kept);
}

void ExtractConfig::validate() const {
    if (channels != 3 && channels != 4) {
        throw ConfigError("extract: channels must be 3 (rgb) or 4 (rgbd)");
    }
    if (stride < 1) {
        throw ConfigError("extract: stride must be >= 1");
    }
    if (tau_depth <= 0.0) {
        throw ConfigError("extract: tau_depth must be positive");
    }
    if (max_invalid_fraction < 0.0 || max_invalid_fraction > 1.0) {
        throw ConfigError("extract: max_invalid_fraction must be in [0,1]");
    }
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
        throw ConfigError("extract: train_fraction must be in (0,1)");
    }
    if (balance && balance_ratio <= 0.0) {
        throw ConfigError("extract: balance_ratio must be positive");
    }
}

PatchSet extract_dataset(const std::string& dir, const ExtractConfig& cfg) {
    cfg.validate();
    SequenceLoadResult seq = load_sequence(dir, cfg.threads);
    const int n = static_cast<int>(seq.frames.size());
    if (n < 2) {
        throw DataError("sequence needs at least 2 frames for a split, got " + std::to_string(n));
    }
    const int boundary = split_boundary(n, cfg.train_fraction);

    std::vector<std::vector<Patch>> per_frame(seq.frames.size());
    parallel_for(seq.frames.size(), cfg.threads, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) {
            const LabelFrame lf = make_labels(seq.frames[i], cfg.tau_depth);
            per_frame[i] = extract_patches(seq.frames[i], lf, cfg.stride,
                                           cfg.max_invalid_fraction, cfg.channels);
        }
    });

    PatchSet set;
    set.channels = cfg.channels;
    for (int i = 0; i < n; ++i) {
        auto& dst = i < boundary ? set.train : set.test;
        for (Patch& p : per_frame[static_cast<std::size_t>(i)]) {
            dst.push_back(std::move(p));
        }
    }
    if (set.train.empty() || set.test.empty()) {
        throw DataError("extraction produced an empty split (train " +
                        std::to_string(set.train.size()) + ", test " +
                        std::to_string(set.test.size()) + ")");
    }
    if (cfg.balance) {
        subsample_negatives(set.train, cfg.balance_ratio, cfg.seed);
    }
    set.stats = compute_stats(set.train);
    normalize(set.train, set.stats);
    normalize(set.test, set.stats);
    return set;
}

namespace {

constexpr char kCacheMagic[5] = "OCPC";
constexpr std::uint32_t kCacheVersion = 1;

void write_patch(std::ostream& f, const Patch& p) {
    f.put(static_cast<char>(p.label));
    bin::write_u32(f, static_cast<std::uint32_t>(p.frame_id));
    bin::write_u16(f, static_cast<std::uint16_t>(p.row));
    bin::write_u16(f, static_cast<std::uint16_t>(p.col));
    bin::write_f32_array(f, p.data.data(), p.data.size());
}

Patch read_patch(std::istream& f, int channels, const std::string& what) {
    Patch p;
    const int label = f.get();
    if (label < 0) {
        bin::truncated(what);
    }
    if (label > 1) {
        throw FormatError("invalid patch label in " + what);
    }
    p.label = static_cast<PatchLabel>(label);
    p.frame_id = static_cast<int>(bin::read_u32(f, what));
    p.row = bin::read_u16(f, what);
    p.col = bin::read_u16(f, what);
    p.data = TensorF({channels, kPatchSize, kPatchSize});
    bin::read_f32_array(f, p.data.data(), p.data.size(), what);
    return p;
}

}  // namespace

void PatchSet::save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw DataError("cannot write patch cache: " + path);
    }
    f.write(kCacheMagic, 4);
    bin::write_u32(f, kCacheVersion);
    bin::write_u32(f, static_cast<std::uint32_t>(channels));
    bin::write_u32(f, kPatchSize);
    for (int c = 0; c < channels; ++c) {
        bin::write_f32(f, stats.mean[static_cast<std::size_t>(c)]);
    }
    bin::write_u32(f, static_cast<std::uint32_t>(train.size()));
    bin::write_u32(f, static_cast<std::uint32_t>(test.size()));
    for (const Patch& p : train) {
        write_patch(f, p);
    }
    for (const Patch& p : test) {
        write_patch(f, p);
    }
    if (!f) {
        throw DataError("patch cache write failed: " + path);
    }
}

PatchSet PatchSet::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw DataError("patch cache not found: " + path);
    }
    const std::string what = "patch cache: " + path;
    char magic[4] = {};
    f.read(magic, 4);
    if (f.gcount() != 4 || std::memcmp(magic, kCacheMagic, 4) != 0) {
        throw FormatError("bad magic in patch cache: " + path);
    }
    const std::uint32_t version = bin::read_u32(f, what);
    if (version != kCacheVersion) {
        throw FormatError("unsupported patch cache version " + std::to_string(version) + " in " +
                          path);
    }
    PatchSet set;
    set.channels = static_cast<int>(bin::read_u32(f, what));
    if (set.channels != 3 && set.channels != 4) {
        throw FormatError("invalid channel count in patch cache: " + path);
    }
    const std::uint32_t ps = bin::read_u32(f, what);
    if (ps != kPatchSize) {
        throw FormatError("unsupported patch size " + std::to_string(ps) + " in " + path);
    }
    set.stats.channels = set.channels;
    set.stats.mean.resize(static_cast<std::size_t>(set.channels));
    for (int c = 0; c < set.channels; ++c) {
        set.stats.mean[static_cast<std::size_t>(c)] = bin::read_f32(f, what);
    }
    const std::uint32_t train_count = bin::read_u32(f, what);
    const std::uint32_t test_count = bin::read_u32(f, what);
    set.train.reserve(train_count);
    set.test.reserve(test_count);
    for (std::uint32_t i = 0; i < train_count; ++i) {
        set.train.push_back(read_patch(f, set.channels, what));
    }
    for (std::uint32_t i = 0; i < test_count; ++i) {
        set.test.push_back(read_patch(f, set.channels, what));
    }
    return set;
}

void write_label_png(const LabelFrame& labels, const std::string& path) {
    ImageU8 img;
    img.h = labels.h;
    img.w = labels.w;
    img.channels = 1;
    img.px.resize(static_cast<std::size_t>(labels.h) * labels.w);
    for (std::size_t i = 0; i < img.px.size(); ++i) {
        switch (labels.labels[i]) {
            case PixelLabel::NoEdge: img.px[i] = 128; break;
            case PixelLabel::OcclusionEdge: img.px[i] = 255; break;
            case PixelLabel::Invalid: img.px[i] = 0; break;
        }
    }
    png_write_u8(path, img);
}

}  // namespace occ
