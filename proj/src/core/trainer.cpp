#include "core/trainer.hpp"

#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

namespace occ {

namespace {

using Clock = std::chrono::steady_clock;

void check_patches(const CnnModelF& model, std::span<const Patch> patches, const char* split) {
    for (const Patch& p : patches) {
        if (p.data.extent(0) != model.channels()) {
            throw ShapeError(std::string("train: ") + split + " patch has " +
                             std::to_string(p.data.extent(0)) + " channels, model expects " +
                             std::to_string(model.channels()));
        }
    }
}

}  // namespace

void TrainConfig::validate() const {
    if (batch_size < 1) {
        throw ConfigError("train: batch_size must be >= 1");
    }
    if (!(lr > 0.0f) || !(momentum >= 0.0f) || l2 < 0.0f) {
        throw ConfigError("train: rates must be positive (lr) and non-negative (momentum, l2)");
    }
    if (epochs < 0) {
        throw ConfigError("train: epochs must be >= 0");
    }
    if (eval_max_patches < 0 || checkpoint_every < 0) {
        throw ConfigError("train: eval_max_patches and checkpoint_every must be >= 0");
    }
    if (checkpoint_every > 0 && checkpoint_prefix.empty()) {
        throw ConfigError("train: checkpoint_every needs a checkpoint_prefix");
    }
}

TensorF batch_from_patches(std::span<const Patch> patches, std::span<const std::size_t> indices) {
    const int n = static_cast<int>(indices.size());
    const int c = patches[indices[0]].data.extent(0);
    TensorF batch({n, c, kPatchSize, kPatchSize});
    const std::size_t example = static_cast<std::size_t>(c) * kPatchSize * kPatchSize;
    for (int i = 0; i < n; ++i) {
        std::memcpy(batch.data() + static_cast<std::size_t>(i) * example,
                    patches[indices[static_cast<std::size_t>(i)]].data.data(),
                    example * sizeof(float));
    }
    return batch;
}

double classification_error(const CnnModelF& model, std::span<const Patch> patches,
                            int max_patches, std::uint64_t seed, int threads) {
    if (patches.empty()) {
        throw DataError("classification_error: empty patch set");
    }
    std::vector<std::size_t> idx(patches.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        idx[i] = i;
    }
    if (max_patches > 0 && static_cast<std::size_t>(max_patches) < idx.size()) {
        Rng rng(seed);
        rng.shuffle(idx);
        idx.resize(static_cast<std::size_t>(max_patches));
        std::sort(idx.begin(), idx.end());
    }
    std::size_t wrong = 0;
    const std::size_t chunk = 256;
    for (std::size_t at = 0; at < idx.size(); at += chunk) {
        const std::size_t end = std::min(at + chunk, idx.size());
        const TensorF batch =
            batch_from_patches(patches, std::span(idx).subspan(at, end - at));
        const auto preds = model.infer(batch, threads);
        for (std::size_t i = at; i < end; ++i) {
            const int want = patches[idx[i]].label == PatchLabel::Occlusion ? 1 : 0;
            wrong += preds[i - at].first != want;
        }
    }
    return static_cast<double>(wrong) / static_cast<double>(idx.size());
}

void append_epoch_csv(const std::string& path, const EpochRecord& r) {
    const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
    std::ofstream f(path, std::ios::app);
    if (!f) {
        throw DataError("cannot open epoch csv: " + path);
    }
    if (fresh) {
        f << "epoch,train_error,test_error,mean_loss,wall_time\n";
    }
    char line[160];
    std::snprintf(line, sizeof(line), "%d,%.6f,%.6f,%.6f,%.3f\n", r.epoch, r.train_error,
                  r.test_error, r.mean_loss, r.wall_time);
    f << line;
}

std::vector<EpochRecord> train(CnnModelF& model, const std::vector<Patch>& train_patches,
                               const std::vector<Patch>& test_patches, const TrainConfig& cfg,
                               const std::string& epoch_csv_path,
                               const std::function<void(const EpochRecord&)>& on_epoch) {
    cfg.validate();
    if (train_patches.empty() || test_patches.empty()) {
        throw DataError("train: empty split (train " + std::to_string(train_patches.size()) +
                        ", test " + std::to_string(test_patches.size()) + ")");
    }
    check_patches(model, train_patches, "train");
    check_patches(model, test_patches, "test");
    {
        std::set<int> train_frames, test_frames;
        for (const Patch& p : train_patches) {
            train_frames.insert(p.frame_id);
        }
        for (const Patch& p : test_patches) {
            test_frames.insert(p.frame_id);
        }
        for (int id : test_frames) {
            if (train_frames.count(id)) {
                throw DataError("train: frame " + std::to_string(id) +
                                " contributes to both splits");
            }
        }
    }

    std::vector<EpochRecord> records;
    if (cfg.epochs == 0) {
        return records;
    }

    Rng shuffle_rng(cfg.shuffle_seed);
    std::vector<std::size_t> order(train_patches.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    std::vector<int> labels;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = Clock::now();
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        std::size_t seen = 0;
        BatchState<float> state;
        for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end =
                std::min(at + static_cast<std::size_t>(cfg.batch_size), order.size());
            const auto slice = std::span(order).subspan(at, end - at);
            const TensorF batch = batch_from_patches(train_patches, slice);
            labels.clear();
            for (std::size_t i : slice) {
                labels.push_back(train_patches[i].label == PatchLabel::Occlusion ? 1 : 0);
            }
            model.forward(batch, state, cfg.threads);
            auto [loss, grads] = model.backward(state, labels, cfg.threads);
            model.sgd_step(grads, cfg.lr, cfg.momentum, cfg.l2, cfg.l2_on_output);
            loss_sum += static_cast<double>(loss) * static_cast<double>(slice.size());
            seen += slice.size();
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.mean_loss = loss_sum / static_cast<double>(seen);
        const std::uint64_t eval_seed = cfg.shuffle_seed ^ 0x5eed0e7a1ULL;
        rec.train_error = classification_error(model, train_patches, cfg.eval_max_patches,
                                               eval_seed, cfg.threads);
        rec.test_error = classification_error(model, test_patches, cfg.eval_max_patches,
                                              eval_seed + 1, cfg.threads);
        rec.wall_time = std::chrono::duration<double>(Clock::now() - t0).count();
        records.push_back(rec);

        if (!epoch_csv_path.empty()) {
            append_epoch_csv(epoch_csv_path, rec);
        }
        if (cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0) {
            model.save(cfg.checkpoint_prefix + ".ep" + std::to_string(epoch + 1) + ".ocm");
        }
        if (on_epoch) {
            on_epoch(rec);
        }
    }
    return records;
}

std::pair<PatchLabel, float> classify(const CnnModelF& model, const TensorF& patch) {
    if (patch.rank() != 3 || patch.extent(0) != model.channels()) {
        throw ShapeError("classify: patch " + shape_str(patch.shape()) + " does not match model (" +
                         std::to_string(model.channels()) + " channels)");
    }
    TensorF batch({1, patch.extent(0), patch.extent(1), patch.extent(2)});
    std::memcpy(batch.data(), patch.data(), patch.size() * sizeof(float));
    const auto preds = model.infer(batch, 1);
    return {preds[0].first == 1 ? PatchLabel::Occlusion : PatchLabel::NoOcclusion,
            preds[0].second};
}

}  // namespace occ
