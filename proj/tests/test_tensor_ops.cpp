#include "doctest.h"

#include <random>

#include "core/ops.hpp"
#include "testutil.hpp"

using namespace occ;
using testutil::finite_difference;
using testutil::max_rel_error;
using testutil::random_tensor;

namespace {

// Scalar loss = <coeffs, op output>, so finite differences of the loss give
// the gradient the backward op must reproduce.
double weighted_sum(const TensorD& t, const TensorD& coeffs) {
    double s = 0.0;
    for (std::size_t i = 0; i < t.size(); ++i) {
        s += t[i] * coeffs[i];
    }
    return s;
}

}  // namespace

TEST_CASE("conv2d forward shapes follow the output formula") {
    ConvSpec spec{4, 32, 5, 1, 2};
    TensorD x({4, 32, 32});
    TensorD w({32, 4, 5, 5});
    TensorD b({32});
    const TensorD y = conv2d_forward(x, w, b, spec);
    CHECK(y.shape() == Shape{32, 32, 32});  // padding 2 preserves 32x32

    ConvSpec s2{1, 1, 3, 2, 0};
    CHECK(s2.out_extent(7) == 3);
}

TEST_CASE("conv2d on zero input emits the bias per channel") {
    ConvSpec spec{3, 5, 3, 1, 1};
    TensorD x({3, 8, 8});
    std::mt19937 rng(7);
    TensorD w = random_tensor({5, 3, 3, 3}, rng);
    TensorD b({5});
    for (int f = 0; f < 5; ++f) {
        b[f] = 0.5 * f - 1.0;
    }
    const TensorD y = conv2d_forward(x, w, b, spec);
    for (int f = 0; f < 5; ++f) {
        for (int i = 0; i < 64; ++i) {
            CHECK(y[static_cast<std::size_t>(f) * 64 + i] == doctest::Approx(b[f]));
        }
    }
}

TEST_CASE("conv2d 1x1 kernel of value 2 scales the input") {
    ConvSpec spec{1, 1, 1, 1, 0};
    TensorD x({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    TensorD w({1, 1, 1, 1}, {2.0});
    TensorD b({1});
    const TensorD y = conv2d_forward(x, w, b, spec);
    for (std::size_t i = 0; i < 9; ++i) {
        CHECK(y[i] == doctest::Approx(2.0 * x[i]));
    }
}

TEST_CASE("conv2d rejects mismatched shapes before computing") {
    ConvSpec spec{4, 8, 5, 1, 2};
    TensorD w({8, 4, 5, 5});
    TensorD b({8});
    CHECK_THROWS_AS(conv2d_forward(TensorD({3, 32, 32}), w, b, spec), ShapeError);
    CHECK_THROWS_AS(conv2d_forward(TensorD({4, 32, 32}), TensorD({8, 4, 3, 5}), b, spec),
                    ShapeError);
    CHECK_THROWS_AS(conv2d_forward(TensorD({4, 32, 32}), w, TensorD({7}), spec), ShapeError);
    // output extent < 1
    ConvSpec tiny{1, 1, 5, 1, 0};
    CHECK_THROWS_AS(conv2d_forward(TensorD({1, 3, 3}), TensorD({1, 1, 5, 5}), TensorD({1}), tiny),
                    ShapeError);
}

TEST_CASE("conv2d is linear in the input for fixed weights") {
    std::mt19937 rng(11);
    ConvSpec spec{2, 3, 3, 1, 1};
    const TensorD x = random_tensor({2, 6, 6}, rng);
    const TensorD w = random_tensor({3, 2, 3, 3}, rng);
    const TensorD b = random_tensor({3}, rng);
    const double a = 2.75;
    TensorD ax(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        ax[i] = a * x[i];
    }
    const TensorD lhs = conv2d_forward(ax, w, b, spec);
    const TensorD fx = conv2d_forward(x, w, b, spec);
    // f(a*x) == a*f(x) - (a-1)*bias
    const std::size_t plane = 36;
    for (int f = 0; f < 3; ++f) {
        for (std::size_t i = 0; i < plane; ++i) {
            const double want = a * fx[static_cast<std::size_t>(f) * plane + i] - (a - 1.0) * b[f];
            CHECK(lhs[static_cast<std::size_t>(f) * plane + i] == doctest::Approx(want).epsilon(1e-5));
        }
    }
}

TEST_CASE("conv2d backward: zero grad_out gives zero gradients") {
    std::mt19937 rng(3);
    ConvSpec spec{2, 2, 3, 1, 1};
    const TensorD x = random_tensor({2, 5, 5}, rng);
    const TensorD w = random_tensor({2, 2, 3, 3}, rng);
    const TensorD gy({2, 5, 5});
    const auto g = conv2d_backward(x, w, gy, spec);
    for (std::size_t i = 0; i < g.input.size(); ++i) {
        CHECK(g.input[i] == 0.0);
    }
    for (std::size_t i = 0; i < g.weights.size(); ++i) {
        CHECK(g.weights[i] == 0.0);
    }
    CHECK(g.biases[0] == 0.0);
    CHECK(g.biases[1] == 0.0);
}

TEST_CASE("conv2d backward matches central finite differences") {
    std::mt19937 rng(17);
    ConvSpec spec{1, 2, 3, 1, 1};
    TensorD x = random_tensor({1, 6, 6}, rng);
    TensorD w = random_tensor({2, 1, 3, 3}, rng);
    TensorD b = random_tensor({2}, rng);
    const TensorD coeffs = random_tensor({2, 6, 6}, rng);

    const auto loss = [&] { return weighted_sum(conv2d_forward(x, w, b, spec), coeffs); };
    const auto analytic = conv2d_backward(x, w, coeffs, spec);

    CHECK(max_rel_error(analytic.input, finite_difference(x, loss)) < 1e-3);
    CHECK(max_rel_error(analytic.weights, finite_difference(w, loss)) < 1e-3);
    CHECK(max_rel_error(analytic.biases, finite_difference(b, loss)) < 1e-3);
}

TEST_CASE("conv2d backward bias gradient equals the channel sum of grad_out") {
    std::mt19937 rng(19);
    ConvSpec spec{2, 3, 3, 1, 1};
    const TensorD x = random_tensor({2, 6, 6}, rng);
    const TensorD w = random_tensor({3, 2, 3, 3}, rng);
    const TensorD gy = random_tensor({3, 6, 6}, rng);
    const auto g = conv2d_backward(x, w, gy, spec);
    for (int f = 0; f < 3; ++f) {
        double sum = 0.0;  // independent summation oracle
        for (std::size_t i = 0; i < 36; ++i) {
            sum += gy[static_cast<std::size_t>(f) * 36 + i];
        }
        CHECK(g.biases[f] == doctest::Approx(sum).epsilon(1e-12));
    }
}

TEST_CASE("conv2d backward rejects grad_out shaped unlike the forward output") {
    ConvSpec spec{1, 2, 3, 1, 1};
    CHECK_THROWS_AS(conv2d_backward(TensorD({1, 6, 6}), TensorD({2, 1, 3, 3}), TensorD({2, 5, 6}),
                                    spec),
                    ShapeError);
}

TEST_CASE("maxpool halves spatial extents") {
    const TensorD x({32, 32, 32});
    const auto [y, mask] = maxpool2_forward(x);
    CHECK(y.shape() == Shape{32, 16, 16});
    CHECK(mask.shape() == Shape{32, 16, 16});
}

TEST_CASE("maxpool on constant input picks the first window position") {
    const TensorD x = TensorD::full({1, 4, 4}, 3.5);
    const auto [y, mask] = maxpool2_forward(x);
    for (std::size_t i = 0; i < y.size(); ++i) {
        CHECK(y[i] == 3.5);
        CHECK(mask[i] == 0);  // tie rule: first in row-major window order
    }
}

TEST_CASE("maxpool window [[1,2],[3,4]] gives 4") {
    const TensorD x({1, 2, 2}, {1, 2, 3, 4});
    const auto [y, mask] = maxpool2_forward(x);
    CHECK(y[0] == 4.0);
    CHECK(mask[0] == 3);
}

TEST_CASE("maxpool rejects odd spatial extents") {
    CHECK_THROWS_AS(maxpool2_forward(TensorD({1, 3, 4})), ShapeError);
    CHECK_THROWS_AS(maxpool2_forward(TensorD({1, 4, 5})), ShapeError);
}

TEST_CASE("maxpool backward routes one gradient per window on distinct inputs") {
    TensorD x({1, 4, 4});
    for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] = static_cast<double>(i);  // strictly increasing, no ties
    }
    const auto [y, mask] = maxpool2_forward(x);
    const TensorD gy = TensorD::full({1, 2, 2}, 1.0);
    const TensorD gx = maxpool2_backward(mask, gy);
    int ones = 0;
    for (std::size_t i = 0; i < gx.size(); ++i) {
        CHECK((gx[i] == 0.0 || gx[i] == 1.0));
        ones += gx[i] == 1.0;
    }
    CHECK(ones == 4);
    // max of each window is its bottom-right element here
    CHECK(gx[x.size() - 1] == 1.0);
}

TEST_CASE("maxpool round trip conserves gradient mass exactly") {
    std::mt19937 rng(23);
    const TensorD x = random_tensor({3, 8, 8}, rng);
    const auto [y, mask] = maxpool2_forward(x);
    const TensorD gy = random_tensor({3, 4, 4}, rng);
    const TensorD gx = maxpool2_backward(mask, gy);
    // routing conserves mass exactly: the nonzero routed values are exactly
    // the incoming gradients, each delivered once
    std::vector<double> in(gy.vec());
    std::vector<double> routed;
    for (std::size_t i = 0; i < gx.size(); ++i) {
        if (gx[i] != 0.0) {
            routed.push_back(gx[i]);
        }
    }
    std::sort(in.begin(), in.end());
    std::sort(routed.begin(), routed.end());
    CHECK(in == routed);
}

TEST_CASE("maxpool backward matches finite differences away from ties") {
    std::mt19937 rng(29);
    TensorD x = random_tensor({2, 6, 6}, rng);  // continuous draws: ties have measure zero
    const TensorD coeffs = random_tensor({2, 3, 3}, rng);
    const auto loss = [&] {
        return weighted_sum(maxpool2_forward(x).first, coeffs);
    };
    const auto mask = maxpool2_forward(x).second;
    const TensorD analytic = maxpool2_backward(mask, coeffs);
    CHECK(max_rel_error(analytic, finite_difference(x, loss)) < 1e-3);
}

TEST_CASE("relu forward and backward") {
    const TensorD x({3}, {-1.0, 0.0, 2.0});
    const TensorD y = relu_forward(x);
    CHECK(y[0] == 0.0);
    CHECK(y[1] == 0.0);
    CHECK(y[2] == 2.0);

    const TensorD gy({3}, {5.0, 5.0, 5.0});
    const TensorD gx = relu_backward(x, gy);
    CHECK(gx[0] == 0.0);
    CHECK(gx[1] == 0.0);  // subgradient at exactly 0 is 0
    CHECK(gx[2] == 5.0);
}

TEST_CASE("relu backward matches finite differences away from zero") {
    std::mt19937 rng(31);
    TensorD x = random_tensor({4, 4}, rng);
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (std::abs(x[i]) < 0.01) {
            x[i] = 0.1;  // keep clear of the kink
        }
    }
    const TensorD coeffs = random_tensor({4, 4}, rng);
    const auto loss = [&] { return weighted_sum(relu_forward(x), coeffs); };
    const TensorD analytic = relu_backward(x, coeffs);
    CHECK(max_rel_error(analytic, finite_difference(x, loss)) < 1e-4);
}

TEST_CASE("fc maps 1024 flattened inputs to 2 logits") {
    const TensorD x({64, 4, 4});
    CHECK(x.size() == 1024);
    const TensorD w({2, 1024});
    const TensorD b({2});
    const TensorD y = fc_forward(x, w, b);
    CHECK(y.shape() == Shape{2});
}

TEST_CASE("fc with a one-hot weight row picks out the first input") {
    TensorD w({2, 1024});
    w[0] = 1.0;  // W[0,0] = 1, everything else 0
    TensorD x({1024});
    x[0] = 1.0;  // e0
    const TensorD y = fc_forward(x, w, TensorD({2}));
    CHECK(y[0] == 1.0);
    CHECK(y[1] == 0.0);
}

TEST_CASE("fc rejects length mismatches") {
    CHECK_THROWS_AS(fc_forward(TensorD({10}), TensorD({2, 12}), TensorD({2})), ShapeError);
    CHECK_THROWS_AS(fc_forward(TensorD({10}), TensorD({2, 10}), TensorD({3})), ShapeError);
}

TEST_CASE("fc backward matches finite differences") {
    std::mt19937 rng(37);
    TensorD x = random_tensor({12}, rng);
    TensorD w = random_tensor({3, 12}, rng);
    TensorD b = random_tensor({3}, rng);
    const TensorD coeffs = random_tensor({3}, rng);
    const auto loss = [&] { return weighted_sum(fc_forward(x, w, b), coeffs); };
    const auto g = fc_backward(x, w, coeffs);
    CHECK(max_rel_error(g.input, finite_difference(x, loss)) < 1e-4);
    CHECK(max_rel_error(g.weights, finite_difference(w, loss)) < 1e-4);
    // bias gradient is grad_out itself
    for (int i = 0; i < 3; ++i) {
        CHECK(g.biases[i] == coeffs[i]);
    }
}

TEST_CASE("softmax cross-entropy on symmetric logits") {
    const auto r = softmax_xent(TensorD({2}), 0);
    CHECK(r.probs[0] == doctest::Approx(0.5));
    CHECK(r.probs[1] == doctest::Approx(0.5));
    CHECK(r.loss == doctest::Approx(std::log(2.0)));
}

TEST_CASE("softmax cross-entropy is stable for extreme logits") {
    const TensorD logits({2}, {1000.0, 0.0});
    const auto r = softmax_xent(logits, 0);
    CHECK(r.loss == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(std::isfinite(r.probs[0]));
    CHECK(std::isfinite(r.grad_logits[1]));
}

TEST_CASE("softmax rejects invalid labels") {
    CHECK_THROWS_AS(softmax_xent(TensorD({2}), 2), ShapeError);
    CHECK_THROWS_AS(softmax_xent(TensorD({2}), -1), ShapeError);
}

TEST_CASE("softmax gradient matches finite differences of the loss") {
    std::mt19937 rng(41);
    TensorD logits = random_tensor({2}, rng);
    const auto loss = [&] { return softmax_xent(logits, 1).loss; };
    const auto analytic = softmax_xent(logits, 1).grad_logits;
    CHECK(max_rel_error(analytic, finite_difference(logits, loss)) < 1e-4);
}

TEST_CASE("non-finite results raise instead of propagating") {
    // overflow in float: huge activations times huge weights
    ConvSpec spec{1, 1, 3, 1, 0};
    TensorF x = TensorF::full({1, 8, 8}, 3e38f);
    TensorF w = TensorF::full({1, 1, 3, 3}, 3e38f);
    TensorF b({1});
    CHECK_THROWS_AS(conv2d_forward(x, w, b, spec), NumericError);
}

TEST_CASE("finite-difference agreement holds across random seeds") {
    for (std::uint32_t seed = 100; seed < 110; ++seed) {
        std::mt19937 rng(seed);
        ConvSpec spec{2, 2, 3, 1, 1};
        TensorD x = random_tensor({2, 6, 6}, rng);
        TensorD w = random_tensor({2, 2, 3, 3}, rng);
        const TensorD coeffs = random_tensor({2, 6, 6}, rng);
        TensorD b = random_tensor({2}, rng);
        const auto loss = [&] { return weighted_sum(conv2d_forward(x, w, b, spec), coeffs); };
        const auto g = conv2d_backward(x, w, coeffs, spec);
        CHECK(max_rel_error(g.weights, finite_difference(w, loss)) < 1e-3);
        CHECK(max_rel_error(g.input, finite_difference(x, loss)) < 1e-3);
    }
}
