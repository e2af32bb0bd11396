// Mini-batch SGD training over extracted patches with per-epoch train/test
// error tracking, plus single-patch classification.
#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "core/dataset.hpp"
#include "core/model.hpp"

namespace occ {

struct TrainConfig {
    int batch_size = 100;
    float lr = 0.001f;
    float momentum = 0.9f;
    float l2 = 0.001f;
    bool l2_on_output = true;
    int epochs = 30;
    std::uint64_t shuffle_seed = 1;
    int eval_max_patches = 0;   // per-epoch error subsample cap; 0 = full split
    int checkpoint_every = 0;   // epochs between checkpoints; 0 = off
    std::string checkpoint_prefix;
    int threads = 1;

    void validate() const;
};

struct EpochRecord {
    int epoch = 0;
    double train_error = 0.0;
    double test_error = 0.0;
    double mean_loss = 0.0;
    double wall_time = 0.0;  // seconds
};

// One epoch = seeded shuffle, batches of cfg.batch_size (last partial batch
// trained as-is), forward/backward/sgd_step, then classification error on
// both splits. Deterministic for a fixed seed; batch work parallelizes with
// results reduced in index order, so thread count does not change the bits.
std::vector<EpochRecord> train(CnnModelF& model, const std::vector<Patch>& train_patches,
                               const std::vector<Patch>& test_patches, const TrainConfig& cfg,
                               const std::string& epoch_csv_path = "",
                               const std::function<void(const EpochRecord&)>& on_epoch = {});

// Argmax label and the softmax probability of the Occlusion class (reported
// for Occlusion regardless of the argmax, for the fusion stage).
std::pair<PatchLabel, float> classify(const CnnModelF& model, const TensorF& patch);

// Fraction misclassified over (a seeded subsample of) the patches.
double classification_error(const CnnModelF& model, std::span<const Patch> patches,
                            int max_patches, std::uint64_t seed, int threads);

// Stacks patches[indices] into an NxCx32x32 batch tensor.
TensorF batch_from_patches(std::span<const Patch> patches, std::span<const std::size_t> indices);

void append_epoch_csv(const std::string& path, const EpochRecord& r);

}  // namespace occ
