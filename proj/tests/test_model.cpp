#include "doctest.h"

#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "core/model.hpp"
#include "testutil.hpp"

using namespace occ;
using testutil::TempDir;

namespace {

// toy architecture for gradient checks: 8x8 input, 2-2-4 filters, 4 -> 2 fc
NetConfig toy_config(int channels) {
    NetConfig cfg;
    cfg.input_hw = 8;
    cfg.channels = channels;
    cfg.filters = {2, 2, 4};
    return cfg;
}

template <typename T>
Tensor<T> random_batch(int n, int channels, int hw, std::mt19937& rng) {
    Tensor<T> batch({n, channels, hw, hw});
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    for (std::size_t i = 0; i < batch.size(); ++i) {
        batch[i] = static_cast<T>(d(rng));
    }
    return batch;
}

template <typename T>
double batch_loss(const CnnModel<T>& model, const Tensor<T>& batch,
                  const std::vector<int>& labels) {
    BatchState<T> state;
    model.forward(batch, state, 1);
    double sum = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        sum += static_cast<double>(softmax_xent(state.logits[i], labels[i]).loss);
    }
    return sum / static_cast<double>(labels.size());
}

// loss plus the ReLU/pooling activation pattern, for kink-aware FD checks
template <typename T>
std::pair<double, std::vector<std::uint8_t>> loss_and_signature(const CnnModel<T>& model,
                                                                const Tensor<T>& batch,
                                                                const std::vector<int>& labels) {
    BatchState<T> state;
    model.forward(batch, state, 1);
    double sum = 0.0;
    std::vector<std::uint8_t> sig;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        sum += static_cast<double>(softmax_xent(state.logits[i], labels[i]).loss);
        for (const Tensor<T>* act : {&state.c1[i], &state.c2[i], &state.c3[i]}) {
            for (std::size_t k = 0; k < act->size(); ++k) {
                sig.push_back((*act)[k] > T{} ? 1 : 0);
            }
        }
        for (const Tensor<std::uint8_t>* mask : {&state.m1[i], &state.m2[i], &state.m3[i]}) {
            sig.insert(sig.end(), mask->data(), mask->data() + mask->size());
        }
    }
    return {sum / static_cast<double>(labels.size()), std::move(sig)};
}

// differentiable operating point for gradient checks: healthy activation
// scales keep the net away from its ReLU kinks
InitSchedule gradcheck_init() {
    InitSchedule s;
    s.conv_stds = {0.1, 0.1, 0.1};
    s.output_std = 0.3;
    s.bias_init = 0.05;
    return s;
}

bool same_bits(const TensorF& a, const TensorF& b) {
    return a.shape() == b.shape() &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0;
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("init shapes the layer stack for 4 channels") {
    const auto m = CnnModelF::init(4, InitSchedule{}, 1);
    CHECK(m.w1().shape() == Shape{32, 4, 5, 5});
    CHECK(m.w2().shape() == Shape{32, 32, 5, 5});
    CHECK(m.w3().shape() == Shape{64, 32, 5, 5});
    CHECK(m.wfc().shape() == Shape{2, 1024});
    CHECK(m.b1().shape() == Shape{32});
    // biases start at zero, momentum buffers zeroed and shape-congruent
    for (std::size_t i = 0; i < m.b1().size(); ++i) {
        CHECK(m.b1()[i] == 0.0f);
    }
    CHECK(m.momentum_w1().shape() == m.w1().shape());
    for (std::size_t i = 0; i < m.momentum_w1().size(); ++i) {
        CHECK(m.momentum_w1()[i] == 0.0f);
    }
}

TEST_CASE("init rejects unsupported channel counts") {
    CHECK_THROWS_AS(CnnModelF::init(5, InitSchedule{}, 1), ConfigError);
    CHECK_THROWS_AS(CnnModelF::init(0, InitSchedule{}, 1), ConfigError);
}

TEST_CASE("init is deterministic for a fixed seed") {
    const auto a = CnnModelF::init(4, InitSchedule{}, 42);
    const auto b = CnnModelF::init(4, InitSchedule{}, 42);
    CHECK(same_bits(a.w1(), b.w1()));
    CHECK(same_bits(a.w2(), b.w2()));
    CHECK(same_bits(a.w3(), b.w3()));
    CHECK(same_bits(a.wfc(), b.wfc()));
    const auto c = CnnModelF::init(4, InitSchedule{}, 43);
    CHECK(!same_bits(a.w1(), c.w1()));
}

TEST_CASE("conv2 weights match their configured standard deviation") {
    const auto m = CnnModelF::init(4, InitSchedule{}, 7);
    const auto& w = m.w2();
    CHECK(w.size() == 25600);
    double sum = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        sum += w[i];
        sq += static_cast<double>(w[i]) * w[i];
    }
    const double mean = sum / static_cast<double>(w.size());
    const double std = std::sqrt(sq / static_cast<double>(w.size()) - mean * mean);
    CHECK(std == doctest::Approx(0.01).epsilon(0.05));
}

TEST_CASE("invalid init schedules are rejected") {
    InitSchedule s;
    s.conv_stds[1] = 0.0;
    CHECK_THROWS_AS(CnnModelF::init(4, s, 1), ConfigError);
}

TEST_CASE("forward produces Nx2 logits and the documented stage shapes") {
    std::mt19937 rng(5);
    const auto m = CnnModelF::init(4, InitSchedule{}, 1);
    const auto batch = random_batch<float>(100, 4, 32, rng);
    BatchState<float> state;
    const TensorF logits = m.forward(batch, state, 1);
    CHECK(logits.shape() == Shape{100, 2});
    CHECK(state.c1[0].shape() == Shape{32, 32, 32});
    CHECK(state.p1[0].shape() == Shape{32, 16, 16});
    CHECK(state.c2[0].shape() == Shape{32, 16, 16});
    CHECK(state.p2[0].shape() == Shape{32, 8, 8});
    CHECK(state.c3[0].shape() == Shape{64, 8, 8});
    CHECK(state.p3[0].shape() == Shape{64, 4, 4});
    CHECK(state.logits[0].shape() == Shape{2});
}

TEST_CASE("forward on all-zero input reproduces the output biases") {
    auto m = CnnModelF::init(4, InitSchedule{}, 1);
    m.bfc()[0] = 0.3f;
    m.bfc()[1] = -0.2f;
    const TensorF batch({3, 4, 32, 32});
    BatchState<float> state;
    const TensorF logits = m.forward(batch, state, 1);
    for (int i = 0; i < 3; ++i) {
        CHECK(logits[static_cast<std::size_t>(i) * 2] == 0.3f);
        CHECK(logits[static_cast<std::size_t>(i) * 2 + 1] == -0.2f);
    }
}

TEST_CASE("forward is per-example: permuting the batch permutes the logits") {
    std::mt19937 rng(9);
    const auto m = CnnModelF::init(3, InitSchedule{}, 2);
    const auto batch = random_batch<float>(4, 3, 32, rng);
    TensorF reversed(batch.shape());
    const std::size_t ex = batch.size() / 4;
    for (int i = 0; i < 4; ++i) {
        std::memcpy(reversed.data() + static_cast<std::size_t>(3 - i) * ex,
                    batch.data() + static_cast<std::size_t>(i) * ex, ex * sizeof(float));
    }
    BatchState<float> s1, s2;
    const TensorF a = m.forward(batch, s1, 1);
    const TensorF b = m.forward(reversed, s2, 1);
    for (int i = 0; i < 4; ++i) {
        CHECK(a[static_cast<std::size_t>(i) * 2] == b[static_cast<std::size_t>(3 - i) * 2]);
        CHECK(a[static_cast<std::size_t>(i) * 2 + 1] == b[static_cast<std::size_t>(3 - i) * 2 + 1]);
    }
}

TEST_CASE("forward and backward are bitwise identical across thread counts") {
    std::mt19937 rng(13);
    const auto m = CnnModelF::init(4, InitSchedule{}, 3);
    const auto batch = random_batch<float>(7, 4, 32, rng);
    const std::vector<int> labels{0, 1, 1, 0, 1, 0, 0};
    BatchState<float> s1, s4;
    const TensorF l1 = m.forward(batch, s1, 1);
    const TensorF l4 = m.forward(batch, s4, 4);
    CHECK(same_bits(l1, l4));
    const auto [loss1, g1] = m.backward(s1, labels, 1);
    const auto [loss4, g4] = m.backward(s4, labels, 4);
    CHECK(loss1 == loss4);
    CHECK(same_bits(g1.w1, g4.w1));
    CHECK(same_bits(g1.w3, g4.w3));
    CHECK(same_bits(g1.wfc, g4.wfc));
}

TEST_CASE("backward without forward fails") {
    const auto m = CnnModelF::init(4, InitSchedule{}, 1);
    BatchState<float> state;
    CHECK_THROWS_AS(m.backward(state, {0}), ShapeError);
}

TEST_CASE("duplicating an example leaves the mean gradient unchanged") {
    std::mt19937 rng(17);
    const auto m = CnnModelF::init(3, InitSchedule{}, 4);
    const auto one = random_batch<float>(1, 3, 32, rng);
    TensorF two({2, 3, 32, 32});
    std::memcpy(two.data(), one.data(), one.size() * sizeof(float));
    std::memcpy(two.data() + one.size(), one.data(), one.size() * sizeof(float));
    BatchState<float> s1, s2;
    m.forward(one, s1, 1);
    m.forward(two, s2, 1);
    const auto [loss1, g1] = m.backward(s1, {1}, 1);
    const auto [loss2, g2] = m.backward(s2, {1, 1}, 1);
    CHECK(loss1 == loss2);
    CHECK(same_bits(g1.w2, g2.w2));
    CHECK(same_bits(g1.bfc, g2.bfc));
}

TEST_CASE("loss for symmetric logits is ln 2") {
    // zero weights and biases force logits [0,0]
    NetConfig cfg = toy_config(3);
    auto m = CnnModel<float>::init_with_config(cfg, InitSchedule{}, 1);
    m.w1().fill(0.0f);
    m.w2().fill(0.0f);
    m.w3().fill(0.0f);
    m.wfc().fill(0.0f);
    std::mt19937 rng(21);
    const auto batch = random_batch<float>(2, 3, 8, rng);
    BatchState<float> state;
    m.forward(batch, state, 1);
    const auto [loss, grads] = m.backward(state, {0, 1}, 1);
    CHECK(loss == doctest::Approx(std::log(2.0)));
}

TEST_CASE("assembled network gradients match finite differences on the toy net") {
    std::mt19937 rng(23);
    auto m = CnnModel<double>::init_with_config(toy_config(3), gradcheck_init(), 5);
    const auto batch = random_batch<double>(2, 3, 8, rng);
    const std::vector<int> labels{1, 0};

    BatchState<double> state;
    m.forward(batch, state, 1);
    const auto [loss, grads] = m.backward(state, labels, 1);

    const auto loss_sig = [&] { return loss_and_signature(m, batch, labels); };
    const auto check_param = [&](Tensor<double>& param, const Tensor<double>& analytic) {
        const auto fd = testutil::finite_difference_checked(param, loss_sig);
        // most entries must be measurable, and those must agree
        CHECK(fd.valid_count * 2 >= param.size());
        CHECK(testutil::max_rel_error_where(analytic, fd) < 1e-3);
    };
    check_param(m.wfc(), grads.wfc);
    check_param(m.w3(), grads.w3);
    check_param(m.w2(), grads.w2);
    check_param(m.w1(), grads.w1);
    check_param(m.b3(), grads.b3);
    check_param(m.bfc(), grads.bfc);
}

TEST_CASE("sgd_step with zero gradients and zero state is a no-op") {
    auto m = CnnModel<double>::init_with_config(toy_config(3), InitSchedule{}, 6);
    m.w1().fill(0.0);
    ModelGrads<double> g{Tensor<double>(m.w1().shape()), Tensor<double>(m.b1().shape()),
                         Tensor<double>(m.w2().shape()), Tensor<double>(m.b2().shape()),
                         Tensor<double>(m.w3().shape()), Tensor<double>(m.b3().shape()),
                         Tensor<double>(m.wfc().shape()), Tensor<double>(m.bfc().shape())};
    const auto before = m.w2();
    m.sgd_step(g, 0.001, 0.9, 0.001);
    for (std::size_t i = 0; i < before.size(); ++i) {
        // only the decay term acts
        CHECK(m.w2()[i] == doctest::Approx(before[i] * (1.0 - 0.001 * 0.001)).epsilon(1e-14));
    }
    // with zero weights as well, everything stays put
    for (std::size_t i = 0; i < m.w1().size(); ++i) {
        CHECK(m.w1()[i] == 0.0);
    }
}

TEST_CASE("one sgd_step from rest moves by -lr*(grad + l2*w)") {
    auto m = CnnModel<double>::init_with_config(toy_config(3), InitSchedule{}, 7);
    const auto w_before = m.w3();
    ModelGrads<double> g{Tensor<double>(m.w1().shape()), Tensor<double>(m.b1().shape()),
                         Tensor<double>(m.w2().shape()), Tensor<double>(m.b2().shape()),
                         Tensor<double>::full(m.w3().shape(), 0.25), Tensor<double>(m.b3().shape()),
                         Tensor<double>(m.wfc().shape()), Tensor<double>(m.bfc().shape())};
    const double lr = 0.001, l2 = 0.001;
    m.sgd_step(g, lr, 0.9, l2);
    for (std::size_t i = 0; i < w_before.size(); ++i) {
        const double want = w_before[i] - lr * (0.25 + l2 * w_before[i]);
        CHECK(m.w3()[i] == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("two sgd_steps match the scalar momentum recurrence") {
    auto m = CnnModel<double>::init_with_config(toy_config(3), InitSchedule{}, 8);
    const double w0 = m.w2()[0];
    const double g = 0.125, lr = 0.001, mu = 0.9, l2 = 0.001;
    ModelGrads<double> grads{Tensor<double>(m.w1().shape()), Tensor<double>(m.b1().shape()),
                             Tensor<double>::full(m.w2().shape(), g), Tensor<double>(m.b2().shape()),
                             Tensor<double>(m.w3().shape()), Tensor<double>(m.b3().shape()),
                             Tensor<double>(m.wfc().shape()), Tensor<double>(m.bfc().shape())};
    m.sgd_step(grads, lr, mu, l2);
    m.sgd_step(grads, lr, mu, l2);

    // independent scalar simulation of the same recurrence
    double w = w0, v = 0.0;
    for (int step = 0; step < 2; ++step) {
        v = mu * v - lr * (g + l2 * w);
        w += v;
    }
    CHECK(m.w2()[0] == doctest::Approx(w).epsilon(1e-15));
}

TEST_CASE("l2 contributes exactly l2*w to the effective weight gradient") {
    std::mt19937 rng(29);
    auto a = CnnModel<double>::init_with_config(toy_config(3), InitSchedule{}, 9);
    auto b = CnnModel<double>::init_with_config(toy_config(3), InitSchedule{}, 9);
    const auto w_before = a.w3();
    ModelGrads<double> g{Tensor<double>(a.w1().shape()), Tensor<double>(a.b1().shape()),
                         Tensor<double>(a.w2().shape()), Tensor<double>(a.b2().shape()),
                         testutil::random_tensor(a.w3().shape(), rng), Tensor<double>(a.b3().shape()),
                         Tensor<double>(a.wfc().shape()), Tensor<double>(a.bfc().shape())};
    const double lr = 1.0, l2 = 0.001;  // lr 1 exposes the gradient directly
    a.sgd_step(g, lr, 0.0, l2);
    b.sgd_step(g, lr, 0.0, 0.0);
    for (std::size_t i = 0; i < w_before.size(); ++i) {
        const double diff = (b.w3()[i] - a.w3()[i]);  // = lr * l2 * w
        CHECK(diff == doctest::Approx(l2 * w_before[i]).epsilon(1e-6));
    }
    // biases receive no decay
    for (std::size_t i = 0; i < a.b3().size(); ++i) {
        CHECK(a.b3()[i] == b.b3()[i]);
    }
}

TEST_CASE("200 steps on a frozen toy batch strictly decrease the loss") {
    std::mt19937 rng(31);
    NetConfig cfg = toy_config(3);
    auto m = CnnModel<float>::init_with_config(cfg, InitSchedule{}, 10);
    const auto batch = random_batch<float>(10, 3, 8, rng);
    const std::vector<int> labels{1, 1, 1, 1, 1, 1, 1, 0, 0, 0};

    BatchState<float> state;
    m.forward(batch, state, 1);
    const double loss0 = m.backward(state, labels, 1).first;
    for (int step = 0; step < 200; ++step) {
        m.forward(batch, state, 1);
        const auto [loss, grads] = m.backward(state, labels, 1);
        m.sgd_step(grads, 0.001f, 0.9f, 0.0f);
    }
    m.forward(batch, state, 1);
    const double loss200 = m.backward(state, labels, 1).first;
    CHECK(loss200 < loss0);
}

TEST_CASE("save/load round trip is byte-identical") {
    TempDir dir("model");
    auto m = CnnModelF::init(4, InitSchedule{}, 11);
    // touch the momentum buffers so they are part of the round trip
    ModelGrads<float> g{TensorF::full(m.w1().shape(), 0.01f), TensorF(m.b1().shape()),
                        TensorF(m.w2().shape()), TensorF(m.b2().shape()),
                        TensorF(m.w3().shape()), TensorF(m.b3().shape()),
                        TensorF(m.wfc().shape()), TensorF(m.bfc().shape())};
    m.sgd_step(g, 0.001f, 0.9f, 0.001f);

    const std::string p1 = (dir.path() / "a.ocm").string();
    const std::string p2 = (dir.path() / "b.ocm").string();
    m.save(p1);
    auto loaded = CnnModelF::load(p1);
    loaded.save(p2);
    CHECK(slurp(p1) == slurp(p2));
    CHECK(same_bits(m.w1(), loaded.w1()));
    CHECK(same_bits(m.momentum_w1(), loaded.momentum_w1()));
    CHECK(loaded.channels() == 4);
}

TEST_CASE("3-channel model round trip preserves conv1 shape") {
    TempDir dir("model3");
    const auto m = CnnModelF::init(3, InitSchedule{}, 12);
    const std::string p = (dir.path() / "rgb.ocm").string();
    m.save(p);
    const auto loaded = CnnModelF::load(p);
    CHECK(loaded.w1().shape() == Shape{32, 3, 5, 5});
}

TEST_CASE("model load failures are distinct and leave no partial model") {
    TempDir dir("modelbad");
    const auto m = CnnModelF::init(3, InitSchedule{}, 13);
    const std::string good = (dir.path() / "good.ocm").string();
    m.save(good);

    SUBCASE("missing file") {
        CHECK_THROWS_AS(CnnModelF::load((dir.path() / "nope.ocm").string()), DataError);
    }
    SUBCASE("bad magic") {
        const std::string bad = (dir.path() / "bad.ocm").string();
        std::ofstream f(bad, std::ios::binary);
        f << "NOPE" << std::string(64, '\0');
        f.close();
        CHECK_THROWS_AS(CnnModelF::load(bad), FormatError);
    }
    SUBCASE("version mismatch") {
        std::string bytes = slurp(good);
        bytes[4] = 9;  // bump the format version field
        const std::string bad = (dir.path() / "ver.ocm").string();
        std::ofstream(bad, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        CHECK_THROWS_WITH_AS(CnnModelF::load(bad), doctest::Contains("version"), FormatError);
    }
    SUBCASE("truncated") {
        std::string bytes = slurp(good);
        bytes.resize(bytes.size() / 2);
        const std::string bad = (dir.path() / "trunc.ocm").string();
        std::ofstream(bad, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        CHECK_THROWS_WITH_AS(CnnModelF::load(bad), doctest::Contains("truncated"), FormatError);
    }
}

TEST_CASE("repeated forward calls are bitwise deterministic") {
    std::mt19937 rng(37);
    const auto m = CnnModelF::init(4, InitSchedule{}, 14);
    const auto batch = random_batch<float>(3, 4, 32, rng);
    BatchState<float> s1, s2;
    const TensorF a = m.forward(batch, s1, 2);
    const TensorF b = m.forward(batch, s2, 2);
    CHECK(same_bits(a, b));
}
