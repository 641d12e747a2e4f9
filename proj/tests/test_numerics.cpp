#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "fcgl/autodiff.hpp"
#include "fcgl/numerics.hpp"
#include "fcgl/optim.hpp"
#include "test_support.hpp"

using namespace fcgl;
namespace t = fcgl::testing;

TEST_CASE("backward of a plain sum is all ones") {
    ad::Tape tape;
    ad::Var x = tape.leaf(Tensor::row({1.0, -2.0, 3.0}), true);
    ad::Var loss = ad::sum(tape, x);
    tape.backward(loss);
    Tensor g = tape.gradient(x);
    for (int i = 0; i < 3; ++i) CHECK(g[i] == doctest::Approx(1.0));
}

TEST_CASE("backward of x dot x doubles the input") {
    ad::Tape tape;
    ad::Var x = tape.leaf(Tensor::row({3.0, 3.0}), true);
    ad::Var loss = ad::sum_squares(tape, x);
    tape.backward(loss);
    Tensor g = tape.gradient(x);
    CHECK(g[0] == doctest::Approx(6.0));
    CHECK(g[1] == doctest::Approx(6.0));
}

TEST_CASE("backward rejects non-scalar losses") {
    ad::Tape tape;
    ad::Var x = tape.leaf(Tensor::row({1.0, 2.0}), true);
    CHECK_THROWS_AS(tape.backward(x), std::invalid_argument);
}

TEST_CASE("tape is reusable after reset") {
    ad::Tape tape;
    ad::Var x = tape.leaf(Tensor::row({2.0}), true);
    tape.backward(ad::sum(tape, x));
    tape.reset();
    CHECK(tape.size() == 0);
    ad::Var y = tape.leaf(Tensor::row({4.0, 1.0}), true);
    tape.backward(ad::sum_squares(tape, y));
    CHECK(tape.gradient(y)[0] == doctest::Approx(8.0));
}

TEST_CASE("two-layer network gradients match central finite differences") {
    Rng rng(7);
    for (int trial = 0; trial < 4; ++trial) {
        Rng tr = rng.child("trial", trial);
        Tensor x = t::random_tensor({3, 4}, tr);
        Tensor w1 = t::random_tensor({4, 5}, tr);
        Tensor b1 = t::random_tensor({5}, tr);
        Tensor w2 = t::random_tensor({5, 2}, tr);
        Tensor b2 = t::random_tensor({2}, tr);

        auto loss_of = [&](const std::vector<Tensor>& params) {
            ad::Tape tape;
            ad::Var xv = tape.constant(x);
            ad::Var h = ad::elu(tape, ad::add_rowvec(tape, ad::matmul(tape, xv, tape.constant(params[0])),
                                                     tape.constant(params[1])));
            ad::Var z = ad::add_rowvec(tape, ad::matmul(tape, h, tape.constant(params[2])),
                                       tape.constant(params[3]));
            return tape.value(ad::masked_cross_entropy(tape, z, {0, 1, 0}, {0, 1, 2})).item();
        };
        std::vector<Tensor> params{w1, b1, w2, b2};
        std::vector<Tensor> fd = t::finite_difference(loss_of, params);

        ad::Tape tape;
        ad::Var xv = tape.constant(x);
        ad::Var w1v = tape.leaf(w1, true), b1v = tape.leaf(b1, true);
        ad::Var w2v = tape.leaf(w2, true), b2v = tape.leaf(b2, true);
        ad::Var h = ad::elu(tape, ad::add_rowvec(tape, ad::matmul(tape, xv, w1v), b1v));
        ad::Var z = ad::add_rowvec(tape, ad::matmul(tape, h, w2v), b2v);
        tape.backward(ad::masked_cross_entropy(tape, z, {0, 1, 0}, {0, 1, 2}));
        std::vector<Tensor> autodiff{tape.gradient(w1v), tape.gradient(b1v), tape.gradient(w2v), tape.gradient(b2v)};
        CHECK(t::max_relative_error(autodiff, fd) < 1e-4);
    }
}

TEST_CASE("elementwise and reduction op gradients match finite differences") {
    Rng rng(11);
    Tensor x = t::random_tensor({2, 3}, rng);
    auto check_unary = [&](auto op) {
        auto loss_of = [&](const std::vector<Tensor>& in) {
            ad::Tape tape;
            return tape.value(ad::sum_squares(tape, op(tape, tape.constant(in[0])))).item();
        };
        std::vector<Tensor> fd = t::finite_difference(loss_of, {x});
        ad::Tape tape;
        ad::Var xv = tape.leaf(x, true);
        tape.backward(ad::sum_squares(tape, op(tape, xv)));
        CHECK(t::max_relative_error({tape.gradient(xv)}, fd) < 1e-4);
    };
    check_unary([](ad::Tape& tp, ad::Var v) { return ad::relu(tp, v); });
    check_unary([](ad::Tape& tp, ad::Var v) { return ad::leaky_relu(tp, v, 0.2); });
    check_unary([](ad::Tape& tp, ad::Var v) { return ad::elu(tp, v); });
    check_unary([](ad::Tape& tp, ad::Var v) { return ad::sigmoid(tp, v); });
    check_unary([](ad::Tape& tp, ad::Var v) { return ad::softmax_rows(tp, v); });
}

TEST_CASE("segment softmax and edge aggregation gradients match finite differences") {
    Rng rng(13);
    const std::vector<int> dst{0, 0, 1, 1, 1, 2};
    const std::vector<int> src{0, 1, 0, 1, 2, 2};
    Tensor e = t::random_tensor({6}, rng);
    Tensor feat = t::random_tensor({3, 2}, rng);

    auto loss_of = [&](const std::vector<Tensor>& in) {
        ad::Tape tape;
        ad::Var ev = tape.constant(in[0]);
        ad::Var fv = tape.constant(in[1]);
        ad::Var alpha = ad::segment_softmax(tape, ev, dst, 3);
        ad::Var msg = ad::gather_rows(tape, fv, src);
        ad::Var out = ad::edge_aggregate(tape, alpha, msg, dst, 3);
        return tape.value(ad::sum_squares(tape, out)).item();
    };
    std::vector<Tensor> fd = t::finite_difference(loss_of, {e, feat});

    ad::Tape tape;
    ad::Var ev = tape.leaf(e, true);
    ad::Var fv = tape.leaf(feat, true);
    ad::Var alpha = ad::segment_softmax(tape, ev, dst, 3);
    ad::Var msg = ad::gather_rows(tape, fv, src);
    ad::Var out = ad::edge_aggregate(tape, alpha, msg, dst, 3);
    tape.backward(ad::sum_squares(tape, out));
    CHECK(t::max_relative_error({tape.gradient(ev), tape.gradient(fv)}, fd) < 1e-4);
}

TEST_CASE("weighted KL to a teacher matches finite differences and direct evaluation") {
    Rng rng(17);
    Tensor logits = t::random_tensor({3, 4}, rng);
    Tensor teacher = ad::softmax_rows_value(t::random_tensor({3, 4}, rng));
    Tensor weights = Tensor::row({0.5, 1.5, 2.0});

    ad::Tape tape;
    ad::Var lv = tape.leaf(logits, true);
    ad::Var loss = ad::weighted_kl_to_teacher(tape, lv, teacher, weights);

    Tensor p = ad::softmax_rows_value(logits);
    double expected = 0.0;
    for (int i = 0; i < 3; ++i) {
        std::vector<double> pi(4), qi(4);
        for (int j = 0; j < 4; ++j) {
            pi[j] = p.at(i, j);
            qi[j] = teacher.at(i, j);
        }
        expected += weights[i] * kl_divergence(pi, qi);
    }
    CHECK(tape.value(loss).item() == doctest::Approx(expected).epsilon(1e-9));

    auto loss_of = [&](const std::vector<Tensor>& in) {
        ad::Tape tp;
        return tp.value(ad::weighted_kl_to_teacher(tp, tp.constant(in[0]), teacher, weights)).item();
    };
    std::vector<Tensor> fd = t::finite_difference(loss_of, {logits});
    tape.backward(loss);
    CHECK(t::max_relative_error({tape.gradient(lv)}, fd) < 1e-4);
}

TEST_CASE("dropout gradients match finite differences with a replayed mask") {
    Rng rng(19);
    Tensor x = t::random_tensor({4, 3}, rng);
    const uint64_t mask_seed = 99;
    auto loss_of = [&](const std::vector<Tensor>& in) {
        ad::Tape tape;
        Rng dr(mask_seed);
        ad::Var d = ad::dropout(tape, tape.constant(in[0]), 0.4, dr, true);
        return tape.value(ad::sum_squares(tape, d)).item();
    };
    std::vector<Tensor> fd = t::finite_difference(loss_of, {x});
    ad::Tape tape;
    Rng dr(mask_seed);
    ad::Var xv = tape.leaf(x, true);
    tape.backward(ad::sum_squares(tape, ad::dropout(tape, xv, 0.4, dr, true)));
    CHECK(t::max_relative_error({tape.gradient(xv)}, fd) < 1e-4);
}

TEST_CASE("adam with zero gradients is a fixed point") {
    std::vector<Tensor> params{Tensor::row({1.0, -2.0})};
    std::vector<Tensor> grads{Tensor({2})};
    AdamState state = AdamState::for_params(params);
    adam_step(params, grads, state, 1e-2, 0.0);
    CHECK(params[0][0] == doctest::Approx(1.0));
    CHECK(params[0][1] == doctest::Approx(-2.0));
    CHECK(state.step == 1);
}

TEST_CASE("first adam step moves opposite the gradient sign") {
    std::vector<Tensor> params{Tensor::row({0.5, -0.5, 2.0})};
    std::vector<Tensor> grads{Tensor::row({0.3, -4.0, 1e-3})};
    AdamState state = AdamState::for_params(params);
    std::vector<Tensor> before = params;
    adam_step(params, grads, state, 1e-2, 0.0);
    for (int i = 0; i < 3; ++i) {
        const double moved = params[0][i] - before[0][i];
        CHECK(moved * grads[0][i] < 0.0);
    }
}

TEST_CASE("adam is deterministic") {
    auto run = [] {
        std::vector<Tensor> params{Tensor::row({1.0, 2.0})};
        AdamState state = AdamState::for_params(params);
        for (int i = 0; i < 5; ++i) {
            std::vector<Tensor> grads{Tensor::row({0.1 * (i + 1), -0.2})};
            adam_step(params, grads, state, 1e-2, 5e-4);
        }
        return params[0];
    };
    Tensor a = run(), b = run();
    CHECK(a[0] == b[0]);
    CHECK(a[1] == b[1]);
}

TEST_CASE("adam rejects shape mismatches") {
    std::vector<Tensor> params{Tensor::row({1.0, 2.0})};
    std::vector<Tensor> grads{Tensor::row({1.0, 2.0, 3.0})};
    AdamState state = AdamState::for_params(params);
    CHECK_THROWS_AS(adam_step(params, grads, state, 1e-2, 0.0), std::invalid_argument);
}

TEST_CASE("kl divergence basics") {
    CHECK(kl_divergence({0.5, 0.5}, {0.5, 0.5}) == doctest::Approx(0.0));
    CHECK(kl_divergence({1.0, 0.0}, {0.5, 0.5}) == doctest::Approx(std::log(2.0)));
    CHECK_THROWS_AS(kl_divergence({0.5, 0.5}, {1.0}), std::invalid_argument);
    CHECK_THROWS_AS(kl_divergence({1.5, -0.5}, {0.5, 0.5}), std::invalid_argument);

    Rng rng(23);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> p(5), q(5);
        double sp = 0, sq = 0;
        for (int i = 0; i < 5; ++i) {
            p[i] = rng.uniform(0.01, 1.0);
            q[i] = rng.uniform(0.01, 1.0);
            sp += p[i];
            sq += q[i];
        }
        for (int i = 0; i < 5; ++i) {
            p[i] /= sp;
            q[i] /= sq;
        }
        CHECK(kl_divergence(p, q) >= -1e-12);
    }
}

TEST_CASE("pairwise euclidean distances") {
    Tensor a = Tensor::matrix(2, 1, {0.0, 3.0});
    Tensor d = pairwise_euclidean(a, a);
    CHECK(d.at(0, 0) == 0.0);
    CHECK(d.at(0, 1) == doctest::Approx(3.0));
    CHECK(d.at(1, 0) == doctest::Approx(3.0));
    CHECK(d.at(1, 1) == 0.0);

    Rng rng(29);
    Tensor x = t::random_tensor({5, 3}, rng);
    Tensor y = t::random_tensor({5, 3}, rng);
    Tensor dist = pairwise_euclidean(x, y);
    for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) {
            double acc = 0.0;
            for (int k = 0; k < 3; ++k) {
                const double diff = x.at(i, k) - y.at(j, k);
                acc += diff * diff;
            }
            CHECK(dist.at(i, j) == std::sqrt(acc));
        }

    Tensor same = pairwise_euclidean(x, x);
    for (int i = 0; i < 5; ++i) CHECK(same.at(i, i) == 0.0);
    CHECK_THROWS_AS(pairwise_euclidean(x, Tensor::matrix(2, 2, {1, 2, 3, 4})), std::invalid_argument);
}

TEST_CASE("softmax rows are stochastic and cross-entropy of a one-hot is tiny") {
    Rng rng(31);
    Tensor z = t::random_tensor({6, 5}, rng, -30.0, 30.0);
    Tensor p = ad::softmax_rows_value(z);
    for (int i = 0; i < 6; ++i) {
        double sum = 0.0;
        for (int j = 0; j < 5; ++j) sum += p.at(i, j);
        CHECK(std::abs(sum - 1.0) < 1e-9);
    }
    ad::Tape tape;
    Tensor sharp({1, 4});
    sharp.at(0, 2) = 50.0;
    ad::Var loss = ad::masked_cross_entropy(tape, tape.constant(sharp), {2}, {0});
    CHECK(tape.value(loss).item() < 1e-6);
}

TEST_CASE("lbfgs minimizes a convex quadratic") {
    Tensor x = Tensor::row({5.0, -3.0, 2.0});
    auto fn = [](const Tensor& point, Tensor& grad) {
        double f = 0.0;
        for (int i = 0; i < 3; ++i) {
            const double target = static_cast<double>(i);
            f += (point[i] - target) * (point[i] - target) * (i + 1);
            grad[i] = 2.0 * (point[i] - target) * (i + 1);
        }
        return f;
    };
    const double final_value = lbfgs_minimize(fn, x, 100);
    CHECK(final_value < 1e-10);
    CHECK(x[0] == doctest::Approx(0.0).epsilon(1e-4));
    CHECK(x[2] == doctest::Approx(2.0).epsilon(1e-4));
}

TEST_CASE("rng substreams are independent of draw order and deterministic") {
    Rng a(42);
    Rng b(42);
    (void)a.next_u64();
    (void)a.next_u64();
    Rng child_a = a.child("stream", 3);
    Rng child_b = b.child("stream", 3);
    CHECK(child_a.next_u64() == child_b.next_u64());
    CHECK(Rng(1).child("x").next_u64() != Rng(1).child("y").next_u64());
}
