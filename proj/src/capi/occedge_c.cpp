// C API shim over the core library: handle management, exception-to-status
// mapping, and a thread-local error message.
#include "occedge.h"

#include <cstring>
#include <filesystem>
#include <memory>
#include <string>

#include "core/dataset.hpp"
#include "core/evaluator.hpp"
#include "core/fusion.hpp"
#include "core/model.hpp"
#include "core/synth.hpp"
#include "core/trainer.hpp"

namespace fs = std::filesystem;

namespace {

thread_local std::string g_last_error;

void set_error(const std::string& msg) { g_last_error = msg; }

oe_status status_of(const std::exception& e) {
    set_error(e.what());
    if (dynamic_cast<const occ::ConfigError*>(&e)) {
        return OE_ERR_INVALID_ARGUMENT;
    }
    if (dynamic_cast<const occ::FormatError*>(&e)) {
        return OE_ERR_FORMAT;
    }
    if (dynamic_cast<const occ::DataError*>(&e)) {
        return OE_ERR_DATA;
    }
    if (dynamic_cast<const occ::ShapeError*>(&e)) {
        return OE_ERR_SHAPE;
    }
    if (dynamic_cast<const occ::NumericError*>(&e)) {
        return OE_ERR_NUMERIC;
    }
    return OE_ERR_INTERNAL;
}

template <typename Fn>
oe_status guarded(Fn&& fn) {
    try {
        fn();
        g_last_error.clear();
        return OE_OK;
    } catch (const std::exception& e) {
        return status_of(e);
    } catch (...) {
        set_error("unknown error");
        return OE_ERR_INTERNAL;
    }
}

oe_status require(bool ok, const char* msg) {
    if (!ok) {
        set_error(msg);
        return OE_ERR_INVALID_ARGUMENT;
    }
    return OE_OK;
}

std::string stats_sidecar(const std::string& model_path) { return model_path + ".stats.json"; }

}  // namespace

struct oe_patchset {
    occ::PatchSet set;
};

struct oe_model {
    occ::CnnModelF model;
    occ::NormStats stats;  // channels == 0 until attached
};

struct oe_heatmap {
    occ::Heatmap hm;
};

extern "C" {

const char* oe_version(void) { return "0.1.0"; }

const char* oe_last_error(void) { return g_last_error.c_str(); }

oe_status oe_synth_generate(const char* scene_json_path, const char* out_dir) {
    if (oe_status s = require(scene_json_path && out_dir, "null path argument"); s != OE_OK) {
        return s;
    }
    return guarded([&] {
        const occ::SceneSpec spec = occ::SceneSpec::load(scene_json_path);
        occ::write_synth_dataset(spec, out_dir);
    });
}

oe_status oe_label_gen(const char* dataset_dir, const char* out_dir, double tau_depth) {
    if (oe_status s = require(dataset_dir && out_dir, "null path argument"); s != OE_OK) {
        return s;
    }
    return guarded([&] {
        const auto seq = occ::load_sequence(dataset_dir);
        fs::create_directories(out_dir);
        for (const occ::RgbdFrame& frame : seq.frames) {
            const occ::LabelFrame lf = occ::make_labels(frame, tau_depth);
            char name[32];
            std::snprintf(name, sizeof(name), "label_%06d.png", frame.frame_id);
            occ::write_label_png(lf, (fs::path(out_dir) / name).string());
        }
    });
}

void oe_extract_params_init(oe_extract_params* p) {
    if (!p) {
        return;
    }
    const occ::ExtractConfig d;
    p->channels = d.channels;
    p->stride = d.stride;
    p->tau_depth = d.tau_depth;
    p->max_invalid_fraction = d.max_invalid_fraction;
    p->train_fraction = d.train_fraction;
    p->balance = d.balance ? 1 : 0;
    p->balance_ratio = d.balance_ratio;
    p->seed = d.seed;
    p->threads = d.threads;
}

oe_status oe_patchset_extract(const char* dataset_dir, const oe_extract_params* params,
                              oe_patchset** out) {
    if (oe_status s = require(dataset_dir && params && out, "null argument"); s != OE_OK) {
        return s;
    }
    return guarded([&] {
        occ::ExtractConfig cfg;
        cfg.channels = params->channels;
        cfg.stride = params->stride;
        cfg.tau_depth = params->tau_depth;
        cfg.max_invalid_fraction = params->max_invalid_fraction;
        cfg.train_fraction = params->train_fraction;
        cfg.balance = params->balance != 0;
        cfg.balance_ratio = params->balance_ratio;
        cfg.seed = params->seed;
        cfg.threads = params->threads;
        auto handle = std::make_unique<oe_patchset>();
        handle->set = occ::extract_dataset(dataset_dir, cfg);
        *out = handle.release();
    });
}

oe_status oe_patchset_open(const char* cache_path, oe_patchset** out) {
    if (oe_status s = require(cache_path && out, "null argument"); s != OE_OK) {
        return s;
    }
    return guarded([&] {
        auto handle = std::make_unique<oe_patchset>();
        handle->set = occ::PatchSet::load(cache_path);
        *out = handle.release();
    });
}

oe_status oe_patchset_save(const oe_patchset* set, const char* cache_path) {
    if (oe_status s = require(set && cache_path, "null argument"); s != OE_OK) {
        return s;
    }
    return guarded([&] { set->set.save(cache_path); });
}

void oe_patchset_close(oe_patchset* set) { delete set; }

oe_status oe_patchset_counts(const oe_patchset* set, int* train_count, int* test_count,
                             int* channels) {
    if (oe_status s = require(set != nullptr, "null patchset"); s != OE_OK) {
        return s;
    }
    if (train_count) {
        *train_count = static_cast<int>(set->set.train.size());
    }
    if (test_count) {
        *test_count = static_cast<int>(set->set.test.size());
    }
    if (channels) {
        *channels = set->set.channels;
    }
    return OE_OK;
}

void oe_train_params_init(oe_train_params* p) {
    if (!p) {
        return;
    }
    const occ::TrainConfig d;
    p->batch_size = d.batch_size;
    p->learning_rate = d.lr;
    p->momentum = d.momentum;
    p->l2 = d.l2;
    p->l2_on_output = d.l2_on_output ? 1 : 0;
    p->epochs = d.epochs;
    p->seed = d.shuffle_seed;
    p->eval_max_patches = d.eval_max_patches;
    p->checkpoint_every = d.checkpoint_every;
    p->threads = d.threads;
}

oe_status oe_model_init(int channels, unsigned long long seed, oe_model** out) {
    if (oe_status s = require(out != nullptr, "null output handle"); s != OE_OK) {
        return s;
    }
    return guarded([&] {
        auto handle = std::make_unique<oe_model>();
        handle->model = occ::CnnModelF::init(channels, occ::InitSchedule{}, seed);
        *out = handle.release();
    });
}

oe_status oe_model_train(oe_model* model, const oe_patchset* set, const oe_train_params* params,
                         const char* epoch_csv_path, const char* checkpoint_prefix) {
    if (oe_status s = require(model && set && params, "null argument"); s != OE_OK) {
        return s;
    }
    return guarded([&] {
        occ::TrainConfig cfg;
        cfg.batch_size = params->batch_size;
        cfg.lr = static_cast<float>(params->learning_rate);
        cfg.momentum = static_cast<float>(params->momentum);
        cfg.l2 = static_cast<float>(params->l2);
        cfg.l2_on_output = params->l2_on_output != 0;
        cfg.epochs = params->epochs;
        cfg.shuffle_seed = params->seed;
        cfg.eval_max_patches = params->eval_max_patches;
        cfg.checkpoint_every = checkpoint_prefix ? params->checkpoint_every : 0;
        cfg.checkpoint_prefix = checkpoint_prefix ? checkpoint_prefix : "";
        cfg.threads = params->threads;
        occ::train(model->model, set->set.train, set->set.test, cfg,
                   epoch_csv_path ? epoch_csv_path : "");
        model->stats = set->set.stats;
    });
}

oe_status oe_model_open(const char* path, oe_model** out) {
    if (oe_status s = require(path && out, "null argument"); s != OE_OK) {
        return s;
    }
    return guarded([&] {
        auto handle = std::make_unique<oe_model>();
        handle->model = occ::CnnModelF::load(path);
        const std::string sidecar = stats_sidecar(path);
        if (fs::exists(sidecar)) {
            handle->stats = occ::NormStats::load(sidecar);
        }
        *out = handle.release();
    });
}

oe_status oe_model_save(const oe_model* model, const char* path) {
    if (oe_status s = require(model && path, "null argument"); s != OE_OK) {
        return s;
    }
    return guarded([&] {
        model->model.save(path);
        if (model->stats.channels > 0) {
            model->stats.save(stats_sidecar(path));
        }
    });
}

void oe_model_close(oe_model* model) { delete model; }

int oe_model_channels(const oe_model* model) { return model ? model->model.channels() : 0; }

oe_status oe_model_classify(const oe_model* model, const float* patch_chw, int channels,
                            int* label, float* confidence) {
    if (oe_status s = require(model && patch_chw, "null argument"); s != OE_OK) {
        return s;
    }
    return guarded([&] {
        if (channels != model->model.channels()) {
            throw occ::ShapeError("classify: patch has " + std::to_string(channels) +
                                  " channels, model expects " +
                                  std::to_string(model->model.channels()));
        }
        occ::TensorF patch({channels, occ::kPatchSize, occ::kPatchSize});
        std::memcpy(patch.data(), patch_chw, patch.size() * sizeof(float));
        const auto [l, c] = occ::classify(model->model, patch);
        if (label) {
            *label = l == occ::PatchLabel::Occlusion ? 1 : 0;
        }
        if (confidence) {
            *confidence = c;
        }
    });
}

oe_status oe_model_evaluate(const oe_model* model, const oe_patchset* set, int split, int threads,
                            oe_eval_result* out) {
    if (oe_status s = require(model && set && out, "null argument"); s != OE_OK) {
        return s;
    }
    if (oe_status s = require(split >= 0 && split <= 2, "split must be 0 (test), 1 (train), 2 (both)");
        s != OE_OK) {
        return s;
    }
    return guarded([&] {
        occ::ConfusionCounts counts;
        auto accumulate = [&](const std::vector<occ::Patch>& patches) {
            const auto c = occ::evaluate(model->model, patches, threads);
            counts.tp += c.tp;
            counts.fp += c.fp;
            counts.tn += c.tn;
            counts.fn += c.fn;
        };
        if (split == 0 || split == 2) {
            accumulate(set->set.test);
        }
        if (split == 1 || split == 2) {
            accumulate(set->set.train);
        }
        const occ::Metrics m = occ::metrics(counts);
        out->tp = counts.tp;
        out->fp = counts.fp;
        out->tn = counts.tn;
        out->fn = counts.fn;
        out->overall_error = m.overall_error.value_or(-1.0);
        out->false_alarm = m.false_alarm.value_or(-1.0);
        out->missed_detection = m.missed_detection.value_or(-1.0);
    });
}

void oe_infer_params_init(oe_infer_params* p) {
    if (!p) {
        return;
    }
    const occ::FusionConfig d;
    p->stride = d.sweep_stride;
    p->fwhm = d.fwhm;
    p->normalized = d.normalized ? 1 : 0;
    p->threads = 1;
}

oe_status oe_infer_frame(const oe_model* model, const char* dataset_dir, int frame_index,
                         const oe_infer_params* params, oe_heatmap** out) {
    if (oe_status s = require(model && dataset_dir && params && out, "null argument"); s != OE_OK) {
        return s;
    }
    return guarded([&] {
        if (model->stats.channels == 0) {
            throw occ::DataError("model has no normalization stats (missing .stats.json sidecar)");
        }
        const auto seq = occ::load_sequence(dataset_dir, params->threads);
        if (frame_index < 0 || frame_index >= static_cast<int>(seq.frames.size())) {
            throw occ::DataError("frame index " + std::to_string(frame_index) +
                                 " out of range (sequence has " +
                                 std::to_string(seq.frames.size()) + " frames)");
        }
        occ::FusionConfig cfg;
        cfg.sweep_stride = params->stride;
        cfg.fwhm = params->fwhm;
        cfg.normalized = params->normalized != 0;
        const occ::RgbdFrame& frame = seq.frames[static_cast<std::size_t>(frame_index)];
        double wall = 0.0;
        const auto scores =
            occ::sweep(model->model, frame, model->stats, cfg, params->threads, &wall);
        auto handle = std::make_unique<oe_heatmap>();
        handle->hm = occ::fuse(scores, cfg, frame.h, frame.w);
        handle->hm.frame_id = frame_index;
        handle->hm.wall_time = wall;
        *out = handle.release();
    });
}

oe_status oe_heatmap_size(const oe_heatmap* hm, int* h, int* w) {
    if (oe_status s = require(hm != nullptr, "null heatmap"); s != OE_OK) {
        return s;
    }
    if (h) {
        *h = hm->hm.h;
    }
    if (w) {
        *w = hm->hm.w;
    }
    return OE_OK;
}

oe_status oe_heatmap_values(const oe_heatmap* hm, float* out, size_t capacity) {
    if (oe_status s = require(hm && out, "null argument"); s != OE_OK) {
        return s;
    }
    const std::size_t n = hm->hm.values.size();
    if (capacity < n) {
        set_error("buffer too small for heatmap values");
        return OE_ERR_INVALID_ARGUMENT;
    }
    std::memcpy(out, hm->hm.values.data(), n * sizeof(float));
    return OE_OK;
}

int oe_heatmap_patch_count(const oe_heatmap* hm) { return hm ? hm->hm.patch_count : 0; }

double oe_heatmap_wall_time(const oe_heatmap* hm) { return hm ? hm->hm.wall_time : 0.0; }

oe_status oe_heatmap_write_gray(const oe_heatmap* hm, const char* png_path) {
    if (oe_status s = require(hm && png_path, "null argument"); s != OE_OK) {
        return s;
    }
    return guarded([&] { occ::render_gray(hm->hm, png_path); });
}

oe_status oe_heatmap_write_color(const oe_heatmap* hm, const char* png_path) {
    if (oe_status s = require(hm && png_path, "null argument"); s != OE_OK) {
        return s;
    }
    return guarded([&] { occ::render_color(hm->hm, png_path); });
}

oe_status oe_heatmap_write_mask(const oe_heatmap* hm, double threshold, const char* path) {
    if (oe_status s = require(hm && path, "null argument"); s != OE_OK) {
        return s;
    }
    return guarded([&] {
        const auto mask = occ::binarize(hm->hm, threshold);
        occ::write_mask(mask, hm->hm.h, hm->hm.w, path);
    });
}

void oe_heatmap_close(oe_heatmap* hm) { delete hm; }

}  // extern "C"
