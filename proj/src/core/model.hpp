// The patch classifier: three conv(5x5, stride 1, pad 2) + ReLU + 2x2 maxpool
// stages feeding a two-way affine output. Owns parameter init, the momentum
// SGD step and the versioned binary model format.
#pragma once

#include <array>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "core/bin_io.hpp"
#include "core/common.hpp"
#include "core/ops.hpp"
#include "core/tensor.hpp"

namespace occ {

struct NetConfig {
    int input_hw = 32;                       // square input, divisible by 8
    int channels = 4;                        // 4 = RGB-D, 3 = RGB
    std::array<int, 3> filters{32, 32, 64};
    int kernel = 5;
    int num_classes = 2;

    int fc_inputs() const {
        const int s = input_hw / 8;
        return filters[2] * s * s;
    }

    void validate() const {
        if (input_hw < 8 || input_hw % 8 != 0) {
            throw ConfigError("net config: input size must be a positive multiple of 8, got " +
                              std::to_string(input_hw));
        }
        if (channels < 1 || filters[0] < 1 || filters[1] < 1 || filters[2] < 1) {
            throw ConfigError("net config: channel and filter counts must be positive");
        }
        if (kernel < 1 || kernel % 2 == 0) {
            throw ConfigError("net config: kernel must be odd, got " + std::to_string(kernel));
        }
    }
};

struct InitSchedule {
    std::array<double, 3> conv_stds{0.0001, 0.01, 0.01};
    double output_std = 0.3;
    double bias_init = 0.0;

    void validate() const {
        for (double s : conv_stds) {
            if (!(s > 0.0)) {
                throw ConfigError("init schedule: conv stds must be strictly positive");
            }
        }
        if (!(output_std > 0.0)) {
            throw ConfigError("init schedule: output std must be strictly positive");
        }
    }
};

template <typename T>
struct ModelGrads {
    Tensor<T> w1, b1, w2, b2, w3, b3, wfc, bfc;
};

// Per-example activations retained by forward for the backward pass.
template <typename T>
struct BatchState {
    std::vector<Tensor<T>> x;
    std::vector<Tensor<T>> c1, p1, c2, p2, c3, p3;
    std::vector<Tensor<std::uint8_t>> m1, m2, m3;
    std::vector<Tensor<T>> logits;
    int count = 0;
};

template <typename T>
class CnnModel {
public:
    CnnModel() = default;

    static CnnModel init(int channels, const InitSchedule& schedule, std::uint64_t rng_seed) {
        if (channels != 3 && channels != 4) {
            throw ConfigError("model: unsupported channel count " + std::to_string(channels) +
                              " (expected 3 or 4)");
        }
        NetConfig cfg;
        cfg.channels = channels;
        return init_with_config(cfg, schedule, rng_seed);
    }

    static CnnModel init_with_config(const NetConfig& cfg, const InitSchedule& schedule,
                                     std::uint64_t rng_seed) {
        cfg.validate();
        schedule.validate();
        CnnModel m;
        m.cfg_ = cfg;
        m.setup_specs();
        Rng rng(rng_seed);
        m.w1_ = gaussian_tensor({cfg.filters[0], cfg.channels, cfg.kernel, cfg.kernel},
                                schedule.conv_stds[0], rng);
        m.w2_ = gaussian_tensor({cfg.filters[1], cfg.filters[0], cfg.kernel, cfg.kernel},
                                schedule.conv_stds[1], rng);
        m.w3_ = gaussian_tensor({cfg.filters[2], cfg.filters[1], cfg.kernel, cfg.kernel},
                                schedule.conv_stds[2], rng);
        m.wfc_ = gaussian_tensor({cfg.num_classes, cfg.fc_inputs()}, schedule.output_std, rng);
        const T b0 = static_cast<T>(schedule.bias_init);
        m.b1_ = Tensor<T>::full({cfg.filters[0]}, b0);
        m.b2_ = Tensor<T>::full({cfg.filters[1]}, b0);
        m.b3_ = Tensor<T>::full({cfg.filters[2]}, b0);
        m.bfc_ = Tensor<T>::full({cfg.num_classes}, b0);
        m.zero_momentum();
        return m;
    }

    const NetConfig& config() const { return cfg_; }
    int channels() const { return cfg_.channels; }

    Tensor<T>& w1() { return w1_; }
    Tensor<T>& b1() { return b1_; }
    Tensor<T>& w2() { return w2_; }
    Tensor<T>& b2() { return b2_; }
    Tensor<T>& w3() { return w3_; }
    Tensor<T>& b3() { return b3_; }
    Tensor<T>& wfc() { return wfc_; }
    Tensor<T>& bfc() { return bfc_; }
    const Tensor<T>& w1() const { return w1_; }
    const Tensor<T>& b1() const { return b1_; }
    const Tensor<T>& w2() const { return w2_; }
    const Tensor<T>& b2() const { return b2_; }
    const Tensor<T>& w3() const { return w3_; }
    const Tensor<T>& b3() const { return b3_; }
    const Tensor<T>& wfc() const { return wfc_; }
    const Tensor<T>& bfc() const { return bfc_; }
    const Tensor<T>& momentum_w1() const { return vw1_; }
    const Tensor<T>& momentum_wfc() const { return vwfc_; }

    // Forward over an NxCxHxW batch. Per-example work may run on several
    // threads; every result lands in its own slot, so the output is
    // bitwise-identical for any thread count.
    Tensor<T> forward(const Tensor<T>& batch, BatchState<T>& state, int threads = 1) const {
        check_batch(batch);
        const int n = batch.extent(0);
        state.count = n;
        resize_state(state, n);
        const std::size_t example = static_cast<std::size_t>(cfg_.channels) * cfg_.input_hw * cfg_.input_hw;
        parallel_for(static_cast<std::size_t>(n), threads, [&](std::size_t b, std::size_t e) {
            for (std::size_t i = b; i < e; ++i) {
                Tensor<T> x({cfg_.channels, cfg_.input_hw, cfg_.input_hw});
                std::memcpy(x.data(), batch.data() + i * example, example * sizeof(T));
                forward_one(std::move(x), state, i);
            }
        });
        Tensor<T> logits({n, cfg_.num_classes});
        for (int i = 0; i < n; ++i) {
            std::memcpy(logits.data() + static_cast<std::size_t>(i) * cfg_.num_classes,
                        state.logits[static_cast<std::size_t>(i)].data(),
                        sizeof(T) * static_cast<std::size_t>(cfg_.num_classes));
        }
        return logits;
    }

    // Gradients of the mean cross-entropy over the batch. Per-example grads
    // go to slots and are reduced in index order, so parallel execution is
    // bitwise-identical to sequential.
    std::pair<T, ModelGrads<T>> backward(const BatchState<T>& state, const std::vector<int>& labels,
                                         int threads = 1) const {
        if (state.count == 0) {
            throw ShapeError("backward: no forward state (call forward first)");
        }
        if (static_cast<int>(labels.size()) != state.count) {
            throw ShapeError("backward: " + std::to_string(labels.size()) + " labels for " +
                             std::to_string(state.count) + " examples");
        }
        const std::size_t n = static_cast<std::size_t>(state.count);
        std::vector<ModelGrads<T>> slots(n);
        std::vector<T> losses(n);
        parallel_for(n, threads, [&](std::size_t b, std::size_t e) {
            for (std::size_t i = b; i < e; ++i) {
                losses[i] = backward_one(state, i, labels[i], slots[i]);
            }
        });
        ModelGrads<T> total = empty_grads();
        T loss_sum{};
        for (std::size_t i = 0; i < n; ++i) {
            loss_sum += losses[i];
            add_grads(total, slots[i]);
        }
        const T inv = T{1} / static_cast<T>(n);
        scale_grads(total, inv);
        return {loss_sum * inv, std::move(total)};
    }

    // v <- momentum*v - lr*(grad + l2*w) for weights (biases skip the decay);
    // w <- w + v.
    void sgd_step(const ModelGrads<T>& g, T lr, T momentum, T l2, bool l2_on_output = true) {
        update(w1_, vw1_, g.w1, lr, momentum, l2);
        update(b1_, vb1_, g.b1, lr, momentum, T{});
        update(w2_, vw2_, g.w2, lr, momentum, l2);
        update(b2_, vb2_, g.b2, lr, momentum, T{});
        update(w3_, vw3_, g.w3, lr, momentum, l2);
        update(b3_, vb3_, g.b3, lr, momentum, T{});
        update(wfc_, vwfc_, g.wfc, lr, momentum, l2_on_output ? l2 : T{});
        update(bfc_, vbfc_, g.bfc, lr, momentum, T{});
    }

    // Argmax labels plus softmax probability of the positive class.
    std::vector<std::pair<int, T>> infer(const Tensor<T>& batch, int threads = 1) const {
        check_batch(batch);
        const int n = batch.extent(0);
        BatchState<T> state;
        forward(batch, state, threads);
        std::vector<std::pair<int, T>> out(static_cast<std::size_t>(n));
        for (std::size_t i = 0; i < static_cast<std::size_t>(n); ++i) {
            auto sm = softmax_xent(state.logits[i], 0);
            const int label = sm.probs[1] > sm.probs[0] ? 1 : 0;
            out[i] = {label, sm.probs[1]};
        }
        return out;
    }

    void save(const std::string& path) const {
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        if (!f) {
            throw DataError("cannot open model file for writing: " + path);
        }
        f.write(kMagic, 4);
        bin::write_u32(f, kVersion);
        bin::write_u32(f, static_cast<std::uint32_t>(cfg_.channels));
        bin::write_u32(f, static_cast<std::uint32_t>(cfg_.input_hw));
        bin::write_u32(f, static_cast<std::uint32_t>(cfg_.kernel));
        bin::write_u32(f, static_cast<std::uint32_t>(cfg_.filters[0]));
        bin::write_u32(f, static_cast<std::uint32_t>(cfg_.filters[1]));
        bin::write_u32(f, static_cast<std::uint32_t>(cfg_.filters[2]));
        bin::write_u32(f, static_cast<std::uint32_t>(cfg_.num_classes));
        for (const Tensor<T>* t : param_list()) {
            write_tensor(f, *t);
        }
        for (const Tensor<T>* t : momentum_list()) {
            write_tensor(f, *t);
        }
        if (!f) {
            throw DataError("write failed: " + path);
        }
    }

    static CnnModel load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) {
            throw DataError("model file not found: " + path);
        }
        char magic[4] = {};
        f.read(magic, 4);
        if (f.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0) {
            throw FormatError("bad magic in model file: " + path);
        }
        const std::string what = "model file: " + path;
        const std::uint32_t version = bin::read_u32(f, what);
        if (version != kVersion) {
            throw FormatError("unsupported model format version " + std::to_string(version) +
                              " in " + path);
        }
        NetConfig cfg;
        cfg.channels = static_cast<int>(bin::read_u32(f, what));
        cfg.input_hw = static_cast<int>(bin::read_u32(f, what));
        cfg.kernel = static_cast<int>(bin::read_u32(f, what));
        cfg.filters[0] = static_cast<int>(bin::read_u32(f, what));
        cfg.filters[1] = static_cast<int>(bin::read_u32(f, what));
        cfg.filters[2] = static_cast<int>(bin::read_u32(f, what));
        cfg.num_classes = static_cast<int>(bin::read_u32(f, what));
        cfg.validate();
        CnnModel m;
        m.cfg_ = cfg;
        m.setup_specs();
        for (Tensor<T>* t : m.param_list_mut()) {
            *t = read_tensor(f, path);
        }
        for (Tensor<T>* t : m.momentum_list_mut()) {
            *t = read_tensor(f, path);
        }
        m.check_loaded_shapes(path);
        return m;
    }

    const ConvSpec& conv1_spec() const { return spec1_; }
    const ConvSpec& conv2_spec() const { return spec2_; }
    const ConvSpec& conv3_spec() const { return spec3_; }

private:
    static constexpr const char kMagic[5] = "OCNM";
    static constexpr std::uint32_t kVersion = 1;

    void setup_specs() {
        const int k = cfg_.kernel;
        const int p = k / 2;
        spec1_ = {cfg_.channels, cfg_.filters[0], k, 1, p};
        spec2_ = {cfg_.filters[0], cfg_.filters[1], k, 1, p};
        spec3_ = {cfg_.filters[1], cfg_.filters[2], k, 1, p};
    }

    static Tensor<T> gaussian_tensor(Shape shape, double std, Rng& rng) {
        Tensor<T> t(std::move(shape));
        for (std::size_t i = 0; i < t.size(); ++i) {
            t[i] = static_cast<T>(rng.gaussian() * std);
        }
        return t;
    }

    void zero_momentum() {
        vw1_ = Tensor<T>(w1_.shape());
        vb1_ = Tensor<T>(b1_.shape());
        vw2_ = Tensor<T>(w2_.shape());
        vb2_ = Tensor<T>(b2_.shape());
        vw3_ = Tensor<T>(w3_.shape());
        vb3_ = Tensor<T>(b3_.shape());
        vwfc_ = Tensor<T>(wfc_.shape());
        vbfc_ = Tensor<T>(bfc_.shape());
    }

    void check_batch(const Tensor<T>& batch) const {
        if (batch.rank() != 4) {
            throw ShapeError("forward: batch must be NxCxHxW, got " + shape_str(batch.shape()));
        }
        if (batch.extent(1) != cfg_.channels) {
            throw ShapeError("forward: batch channels " + std::to_string(batch.extent(1)) +
                             " != model channels " + std::to_string(cfg_.channels));
        }
        if (batch.extent(2) != cfg_.input_hw || batch.extent(3) != cfg_.input_hw) {
            throw ShapeError("forward: batch spatial " + std::to_string(batch.extent(2)) + "x" +
                             std::to_string(batch.extent(3)) + " != model input " +
                             std::to_string(cfg_.input_hw) + "x" + std::to_string(cfg_.input_hw));
        }
    }

    static void resize_state(BatchState<T>& s, int n) {
        const auto sz = static_cast<std::size_t>(n);
        s.x.resize(sz);
        s.c1.resize(sz);
        s.p1.resize(sz);
        s.c2.resize(sz);
        s.p2.resize(sz);
        s.c3.resize(sz);
        s.p3.resize(sz);
        s.m1.resize(sz);
        s.m2.resize(sz);
        s.m3.resize(sz);
        s.logits.resize(sz);
    }

    void forward_one(Tensor<T> x, BatchState<T>& s, std::size_t i) const {
        s.x[i] = std::move(x);
        s.c1[i] = conv2d_forward(s.x[i], w1_, b1_, spec1_);
        auto pool1 = maxpool2_forward(relu_forward(s.c1[i]));
        s.p1[i] = std::move(pool1.first);
        s.m1[i] = std::move(pool1.second);
        s.c2[i] = conv2d_forward(s.p1[i], w2_, b2_, spec2_);
        auto pool2 = maxpool2_forward(relu_forward(s.c2[i]));
        s.p2[i] = std::move(pool2.first);
        s.m2[i] = std::move(pool2.second);
        s.c3[i] = conv2d_forward(s.p2[i], w3_, b3_, spec3_);
        auto pool3 = maxpool2_forward(relu_forward(s.c3[i]));
        s.p3[i] = std::move(pool3.first);
        s.m3[i] = std::move(pool3.second);
        s.logits[i] = fc_forward(s.p3[i], wfc_, bfc_);
    }

    T backward_one(const BatchState<T>& s, std::size_t i, int label, ModelGrads<T>& g) const {
        auto sm = softmax_xent(s.logits[i], label);
        auto gfc = fc_backward(s.p3[i], wfc_, sm.grad_logits);
        g.wfc = std::move(gfc.weights);
        g.bfc = std::move(gfc.biases);
        Tensor<T> grad = maxpool2_backward(s.m3[i], gfc.input);
        grad = relu_backward(s.c3[i], grad);
        auto gc3 = conv2d_backward(s.p2[i], w3_, grad, spec3_);
        g.w3 = std::move(gc3.weights);
        g.b3 = std::move(gc3.biases);
        grad = maxpool2_backward(s.m2[i], gc3.input);
        grad = relu_backward(s.c2[i], grad);
        auto gc2 = conv2d_backward(s.p1[i], w2_, grad, spec2_);
        g.w2 = std::move(gc2.weights);
        g.b2 = std::move(gc2.biases);
        grad = maxpool2_backward(s.m1[i], gc2.input);
        grad = relu_backward(s.c1[i], grad);
        auto gc1 = conv2d_backward(s.x[i], w1_, grad, spec1_);
        g.w1 = std::move(gc1.weights);
        g.b1 = std::move(gc1.biases);
        return sm.loss;
    }

    ModelGrads<T> empty_grads() const {
        return {Tensor<T>(w1_.shape()), Tensor<T>(b1_.shape()), Tensor<T>(w2_.shape()),
                Tensor<T>(b2_.shape()), Tensor<T>(w3_.shape()), Tensor<T>(b3_.shape()),
                Tensor<T>(wfc_.shape()), Tensor<T>(bfc_.shape())};
    }

    static void add_into(Tensor<T>& dst, const Tensor<T>& src) {
        for (std::size_t i = 0; i < dst.size(); ++i) {
            dst[i] += src[i];
        }
    }

    static void add_grads(ModelGrads<T>& total, const ModelGrads<T>& g) {
        add_into(total.w1, g.w1);
        add_into(total.b1, g.b1);
        add_into(total.w2, g.w2);
        add_into(total.b2, g.b2);
        add_into(total.w3, g.w3);
        add_into(total.b3, g.b3);
        add_into(total.wfc, g.wfc);
        add_into(total.bfc, g.bfc);
    }

    static void scale_grads(ModelGrads<T>& g, T s) {
        for (Tensor<T>* t : {&g.w1, &g.b1, &g.w2, &g.b2, &g.w3, &g.b3, &g.wfc, &g.bfc}) {
            for (std::size_t i = 0; i < t->size(); ++i) {
                (*t)[i] *= s;
            }
        }
    }

    void update(Tensor<T>& w, Tensor<T>& v, const Tensor<T>& g, T lr, T momentum, T decay) {
        if (!w.same_shape(g)) {
            throw ShapeError("sgd_step: grad " + shape_str(g.shape()) + " != param " +
                             shape_str(w.shape()));
        }
        for (std::size_t i = 0; i < w.size(); ++i) {
            v[i] = momentum * v[i] - lr * (g[i] + decay * w[i]);
            w[i] += v[i];
        }
    }

    std::array<const Tensor<T>*, 8> param_list() const {
        return {&w1_, &b1_, &w2_, &b2_, &w3_, &b3_, &wfc_, &bfc_};
    }
    std::array<Tensor<T>*, 8> param_list_mut() {
        return {&w1_, &b1_, &w2_, &b2_, &w3_, &b3_, &wfc_, &bfc_};
    }
    std::array<const Tensor<T>*, 8> momentum_list() const {
        return {&vw1_, &vb1_, &vw2_, &vb2_, &vw3_, &vb3_, &vwfc_, &vbfc_};
    }
    std::array<Tensor<T>*, 8> momentum_list_mut() {
        return {&vw1_, &vb1_, &vw2_, &vb2_, &vw3_, &vb3_, &vwfc_, &vbfc_};
    }

    void check_loaded_shapes(const std::string& path) {
        const Shape want_w1{cfg_.filters[0], cfg_.channels, cfg_.kernel, cfg_.kernel};
        if (w1_.shape() != want_w1 || wfc_.shape() != Shape{cfg_.num_classes, cfg_.fc_inputs()}) {
            throw FormatError("layer table does not match stored tensors in " + path);
        }
        for (std::size_t i = 0; i < 8; ++i) {
            if (momentum_list()[i]->shape() != param_list()[i]->shape()) {
                throw FormatError("momentum buffer shape mismatch in " + path);
            }
        }
    }

    static void write_tensor(std::ofstream& f, const Tensor<T>& t) {
        bin::write_u32(f, static_cast<std::uint32_t>(t.rank()));
        for (int d = 0; d < t.rank(); ++d) {
            bin::write_u32(f, static_cast<std::uint32_t>(t.extent(d)));
        }
        for (std::size_t i = 0; i < t.size(); ++i) {
            bin::write_f32(f, static_cast<float>(t[i]));
        }
    }

    static Tensor<T> read_tensor(std::ifstream& f, const std::string& path) {
        const std::string what = "model file: " + path;
        const std::uint32_t rank = bin::read_u32(f, what);
        if (rank < 1 || rank > 4) {
            throw FormatError("invalid tensor rank " + std::to_string(rank) + " in " + path);
        }
        Shape shape(rank);
        for (std::uint32_t d = 0; d < rank; ++d) {
            shape[d] = static_cast<int>(bin::read_u32(f, what));
        }
        const std::int64_t n = shape_size(shape);
        if (n <= 0 || n > (1LL << 28)) {
            throw FormatError("implausible tensor size in " + path);
        }
        std::vector<float> raw(static_cast<std::size_t>(n));
        bin::read_f32_array(f, raw.data(), raw.size(), what);
        std::vector<T> data(raw.begin(), raw.end());
        return Tensor<T>(std::move(shape), std::move(data));
    }

    NetConfig cfg_;
    ConvSpec spec1_, spec2_, spec3_;
    Tensor<T> w1_, b1_, w2_, b2_, w3_, b3_, wfc_, bfc_;
    Tensor<T> vw1_, vb1_, vw2_, vb2_, vw3_, vb3_, vwfc_, vbfc_;
};

using CnnModelF = CnnModel<float>;

}  // namespace occ
