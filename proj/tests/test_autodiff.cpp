#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "drdm/autodiff.hpp"
#include "drdm/random.hpp"

using drdm::Rng;
using drdm::Tensor;
namespace ad = drdm::ad;

namespace {

// central-difference check of d(scalar fn)/d(input) against the tape
template <typename Fn>
void check_gradient(Fn&& fn, Tensor<double> input, double step = 1e-5, double tol = 1e-6) {
    auto x = ad::leaf(input, true);
    auto loss = fn(x);
    ad::backward(loss);
    REQUIRE(!x->grad.v.empty());
    for (std::int64_t i = 0; i < input.size(); ++i) {
        Tensor<double> plus = input, minus = input;
        plus[i] += step;
        minus[i] -= step;
        double fp = fn(ad::leaf(plus, false))->val[0];
        double fm = fn(ad::leaf(minus, false))->val[0];
        double numeric = (fp - fm) / (2 * step);
        CHECK(x->grad[i] == doctest::Approx(numeric).epsilon(tol).scale(1.0));
    }
}

Tensor<double> randn(Rng& rng, std::vector<int> shape) {
    return rng.normal_tensor<double>(std::move(shape));
}

}  // namespace

TEST_CASE("add/mul/scale forward values") {
    auto a = ad::leaf(Tensor<double>({2}, {1.0, 2.0}));
    auto b = ad::leaf(Tensor<double>({2}, {3.0, -1.0}));
    CHECK(ad::add(a, b)->val[0] == 4.0);
    CHECK(ad::mul(a, b)->val[1] == -2.0);
    CHECK(ad::scale(a, 2.0)->val[1] == 4.0);
    CHECK_THROWS_AS(ad::add(a, ad::leaf(Tensor<double>({3}))), drdm::invalid_input);
}

TEST_CASE("matmul forward") {
    auto a = ad::leaf(Tensor<double>({2, 2}, {1, 2, 3, 4}));
    auto b = ad::leaf(Tensor<double>({2, 1}, {1, 1}));
    auto c = ad::matmul(a, b);
    CHECK(c->val[0] == 3.0);
    CHECK(c->val[1] == 7.0);
}

TEST_CASE("elementwise gradients") {
    Rng rng(7);
    check_gradient([](auto x) { return ad::mse(ad::silu(x), ad::leaf(Tensor<double>({2, 3}))); },
                   randn(rng, {2, 3}));
    check_gradient(
        [](auto x) { return ad::mse(ad::sigmoid(x), ad::leaf(Tensor<double>({2, 3}))); },
        randn(rng, {2, 3}));
    check_gradient([](auto x) { return ad::mean_all(ad::mul(x, x)); }, randn(rng, {5}));
}

TEST_CASE("matmul/linear/softmax gradients") {
    Rng rng(11);
    Tensor<double> w = randn(rng, {3, 4});
    Tensor<double> b = randn(rng, {4});
    check_gradient(
        [&](auto x) {
            return ad::mse(ad::linear(x, ad::leaf(w), ad::leaf(b)),
                           ad::leaf(Tensor<double>({2, 4})));
        },
        randn(rng, {2, 3}));
    // gradient w.r.t. the weight as well
    Tensor<double> xin = randn(rng, {2, 3});
    check_gradient(
        [&](auto wv) {
            return ad::mse(ad::linear(ad::leaf(xin), wv, ad::leaf(b)),
                           ad::leaf(Tensor<double>({2, 4})));
        },
        w);
    check_gradient(
        [](auto x) { return ad::mse(ad::softmax_rows(x), ad::leaf(Tensor<double>({3, 4}))); },
        randn(rng, {3, 4}));
}

TEST_CASE("softmax rows sum to one") {
    Rng rng(3);
    auto x = ad::leaf(randn(rng, {6, 9}));
    auto y = ad::softmax_rows(x);
    for (int r = 0; r < 6; ++r) {
        double s = 0;
        for (int c = 0; c < 9; ++c) s += y->val.at(r, c);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("conv2d matches direct computation") {
    // 1x1 input channel, 3x3 kernel, known result
    Tensor<double> x({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    Tensor<double> w({1, 1, 3, 3}, {0, 0, 0, 0, 1, 0, 0, 0, 0});  // identity kernel
    Tensor<double> b({1}, {0.5});
    auto y = ad::conv2d(ad::leaf(x), ad::leaf(w), ad::leaf(b), 1);
    for (int i = 0; i < 9; ++i) CHECK(y->val[i] == doctest::Approx(x[i] + 0.5));
}

TEST_CASE("conv2d gradients (stride 1 and 2)") {
    Rng rng(5);
    for (int stride : {1, 2}) {
        Tensor<double> w = randn(rng, {3, 2, 3, 3});
        Tensor<double> b = randn(rng, {3});
        Tensor<double> x = randn(rng, {2, 4, 4});
        check_gradient(
            [&](auto xv) {
                auto y = ad::conv2d(xv, ad::leaf(w), ad::leaf(b), stride);
                return ad::mean_all(ad::mul(y, y));
            },
            x);
        check_gradient(
            [&](auto wv) {
                auto y = ad::conv2d(ad::leaf(x), wv, ad::leaf(b), stride);
                return ad::mean_all(ad::mul(y, y));
            },
            w);
        check_gradient(
            [&](auto bv) {
                auto y = ad::conv2d(ad::leaf(x), ad::leaf(w), bv, stride);
                return ad::mean_all(ad::mul(y, y));
            },
            b);
    }
}

TEST_CASE("layernorm, pooling, channel ops gradients") {
    Rng rng(13);
    Tensor<double> g = randn(rng, {3});
    Tensor<double> b = randn(rng, {3});
    check_gradient(
        [&](auto x) {
            auto y = ad::channel_layernorm(x, ad::leaf(g), ad::leaf(b));
            return ad::mean_all(ad::mul(y, y));
        },
        randn(rng, {3, 2, 2}), 1e-5, 1e-5);
    Tensor<double> ln_in = randn(rng, {3, 2, 2});
    check_gradient(
        [&](auto gv) {
            auto y = ad::channel_layernorm(ad::leaf(ln_in), gv, ad::leaf(b));
            return ad::mean_all(ad::mul(y, y));
        },
        g);
    check_gradient([](auto x) { return ad::mean_all(ad::global_avg_pool(x)); },
                   randn(rng, {3, 2, 2}));
    Tensor<double> s = randn(rng, {3});
    check_gradient(
        [&](auto x) { return ad::mean_all(ad::mul(ad::mul_channels(x, ad::leaf(s)), x)); },
        randn(rng, {3, 2, 2}));
    Tensor<double> cx = randn(rng, {3, 2, 2});
    check_gradient(
        [&](auto sv) {
            auto y = ad::mul_channels(ad::leaf(cx), sv);
            return ad::mean_all(ad::mul(y, y));
        },
        s);
    check_gradient(
        [&](auto bv) {
            auto y = ad::add_channels(ad::leaf(cx), bv);
            return ad::mean_all(ad::mul(y, y));
        },
        b);
    check_gradient([](auto x) { return ad::mean_all(ad::mul(ad::upsample_nearest2x(x),
                                                            ad::upsample_nearest2x(x))); },
                   randn(rng, {2, 3, 3}));
}

TEST_CASE("transpose/reshape/concat plumbing gradients") {
    Rng rng(17);
    check_gradient(
        [](auto x) {
            auto y = ad::transpose(x);
            return ad::mean_all(ad::mul(y, y));
        },
        randn(rng, {3, 4}));
    check_gradient(
        [](auto x) {
            auto y = ad::reshape(x, {4, 3});
            return ad::mean_all(ad::mul(y, y));
        },
        randn(rng, {3, 4}));
    Tensor<double> other = randn(rng, {2, 4});
    check_gradient(
        [&](auto x) {
            auto y = ad::concat_rows<double>({x, ad::leaf(other)});
            return ad::mean_all(ad::mul(y, y));
        },
        randn(rng, {3, 4}));
    Tensor<double> oc = randn(rng, {2, 3, 3});
    check_gradient(
        [&](auto x) {
            auto y = ad::concat_channels(x, ad::leaf(oc));
            return ad::mean_all(ad::mul(y, y));
        },
        randn(rng, {1, 3, 3}));
}

TEST_CASE("gradient accumulates over shared subexpressions") {
    auto x = ad::leaf(Tensor<double>({1}, {3.0}), true);
    auto y = ad::add(ad::mul(x, x), x);  // x^2 + x -> dy/dx = 2x + 1 = 7
    ad::backward(y);
    CHECK(x->grad[0] == doctest::Approx(7.0));
}

TEST_CASE("rng serialization round-trips the stream") {
    Rng a(42);
    a.normal();
    std::string s = a.serialize();
    Rng b;
    b.deserialize(s);
    for (int i = 0; i < 100; ++i) CHECK(a.normal() == b.normal());
}
