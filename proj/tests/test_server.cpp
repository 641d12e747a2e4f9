#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "fcgl/server.hpp"
#include "test_support.hpp"

using namespace fcgl;
namespace t = fcgl::testing;

namespace {

GnnConfig tiny_config(int in_dim = 3, int classes = 3) {
    GnnConfig c;
    c.variant = GnnVariant::gat;
    c.in_dim = in_dim;
    c.hidden_dim = 4;
    c.num_classes = classes;
    c.dropout = 0.0;
    return c;
}

ClientUpdate make_update(int id, const GnnParams& params, int count) {
    ClientUpdate u;
    u.client_id = id;
    u.params = params;
    u.train_node_count = count;
    return u;
}

GlobalBuffer random_buffer(int rows, int dim, uint64_t seed) {
    GlobalBuffer buffer;
    Rng rng(seed);
    for (int i = 0; i < rows; ++i) {
        GlobalBufferRow row;
        row.features = t::random_tensor({dim}, rng);
        row.label = static_cast<int>(rng.below(3));
        row.client_id = i % 2;
        row.task_index = 0;
        buffer.rows.push_back(std::move(row));
    }
    return buffer;
}

}  // namespace

TEST_CASE("aggregating a single client returns its parameters exactly") {
    GnnConfig cfg = tiny_config();
    GnnParams p = GnnParams::init(cfg, Rng(1));
    GnnParams out = aggregate({make_update(0, p, 17)});
    for (size_t i = 0; i < p.tensors.size(); ++i)
        for (int64_t j = 0; j < p.tensors[i].size(); ++j) CHECK(out.tensors[i][j] == p.tensors[i][j]);
}

TEST_CASE("aggregation weights by sample counts") {
    GnnConfig cfg = tiny_config();
    GnnParams a = GnnParams::init(cfg, Rng(2));
    GnnParams b = a;
    for (Tensor& t : a.tensors) scale_in_place(t, 0.0);            // all zeros
    for (Tensor& t : b.tensors) {
        scale_in_place(t, 0.0);
        for (int64_t i = 0; i < t.size(); ++i) t[i] = 4.0;          // all fours
    }
    GnnParams out = aggregate({make_update(0, a, 1), make_update(1, b, 3)});
    for (const Tensor& t : out.tensors)
        for (int64_t i = 0; i < t.size(); ++i) CHECK(t[i] == doctest::Approx(3.0));
}

TEST_CASE("aggregation of identical parameters is idempotent regardless of counts") {
    GnnConfig cfg = tiny_config();
    GnnParams p = GnnParams::init(cfg, Rng(3));
    GnnParams out = aggregate({make_update(0, p, 5), make_update(1, p, 50), make_update(2, p, 1)});
    for (size_t i = 0; i < p.tensors.size(); ++i)
        for (int64_t j = 0; j < p.tensors[i].size(); ++j)
            CHECK(out.tensors[i][j] == doctest::Approx(p.tensors[i][j]).epsilon(1e-15));
}

TEST_CASE("aggregate rejects empty input and mismatched architectures") {
    CHECK_THROWS_AS(aggregate({}), std::invalid_argument);
    GnnParams a = GnnParams::init(tiny_config(3, 3), Rng(4));
    GnnParams b = GnnParams::init(tiny_config(3, 4), Rng(5));
    CHECK_THROWS_AS(aggregate({make_update(0, a, 1), make_update(1, b, 1)}), std::invalid_argument);
}

TEST_CASE("class inference recovers the encoded class for random prototypes") {
    Rng rng(6);
    int correct = 0;
    const int trials = 50;
    for (int trial = 0; trial < trials; ++trial) {
        Rng tr = rng.child("t", trial);
        const int dim = 4 + static_cast<int>(tr.below(12));
        const int classes = 2 + static_cast<int>(tr.below(5));
        EncodingNet net = EncodingNet::build(dim, classes, tr.next_u64());
        const int cls = static_cast<int>(tr.below(classes));
        Tensor proto = t::random_tensor({dim}, tr);
        PrototypeGradientPacket packet = encode_prototype(net, proto, cls, 0, 0);
        if (infer_class(packet) == cls) correct++;

        // Scaling the prototype must not change the inferred class.
        Tensor half = proto;
        scale_in_place(half, 0.5);
        CHECK(infer_class(encode_prototype(net, half, cls, 0, 0)) == cls);
    }
    CHECK(correct == trials);
}

TEST_CASE("gradient matching reconstruction collapses the loss and round-trips the class") {
    Rng rng(7);
    ReconConfig config;
    config.iterations = 300;
    for (int trial = 0; trial < 5; ++trial) {
        Rng tr = rng.child("t", trial);
        const int dim = 6 + static_cast<int>(tr.below(10));
        const int classes = 3;
        EncodingNet net = EncodingNet::build(dim, classes, tr.next_u64());
        const int cls = static_cast<int>(tr.below(classes));
        Tensor proto = t::random_tensor({dim}, tr);
        PrototypeGradientPacket packet = encode_prototype(net, proto, cls, 0, 0);

        ReconResult result = reconstruct(packet, net, config, tr.child("recon"));
        CHECK(result.inferred_class == cls);
        CHECK(result.final_loss <= 1e-3 * result.initial_loss);

        PrototypeGradientPacket echo = encode_prototype(net, result.pseudo_prototype, result.inferred_class, 0, 0);
        CHECK(infer_class(echo) == cls);
    }
}

TEST_CASE("matching-loss gradients w.r.t. the candidate vector agree with finite differences") {
    // The matching loss differentiates through the encoding network's own
    // backpropagation; this checks that second-order construction end to end.
    Rng rng(77);
    for (int trial = 0; trial < 3; ++trial) {
        Rng tr = rng.child("t", trial);
        const int dim = 5 + static_cast<int>(tr.below(6));
        const int classes = 2 + static_cast<int>(tr.below(3));
        EncodingNet net = EncodingNet::build(dim, classes, tr.next_u64());
        const int cls = static_cast<int>(tr.below(classes));
        Tensor proto = t::random_tensor({dim}, tr);
        PrototypeGradientPacket packet = encode_prototype(net, proto, cls, 0, 0);
        Tensor candidate = t::random_tensor({dim}, tr);

        auto loss_of = [&](const Tensor& x) {
            ad::Tape tape;
            ad::Var xv = tape.constant(x);
            EncodingGradients grads = encoding_gradients(tape, net, xv, cls);
            double total = 0.0;
            for (size_t l = 0; l < grads.weight_grads.size(); ++l) {
                const Tensor& gw = tape.value(grads.weight_grads[l]);
                const Tensor& gb = tape.value(grads.bias_grads[l]);
                for (int64_t i = 0; i < gw.size(); ++i) {
                    const double d = gw[i] - packet.weight_grads[l][i];
                    total += d * d;
                }
                for (int64_t i = 0; i < gb.size(); ++i) {
                    const double d = gb[i] - packet.bias_grads[l][i];
                    total += d * d;
                }
            }
            return total;
        };

        ad::Tape tape;
        ad::Var xv = tape.leaf(candidate, true);
        EncodingGradients grads = encoding_gradients(tape, net, xv, cls);
        ad::Var loss{-1};
        for (size_t l = 0; l < grads.weight_grads.size(); ++l) {
            ad::Var wt =
                ad::sum_squares(tape, ad::sub(tape, grads.weight_grads[l], tape.constant(packet.weight_grads[l])));
            ad::Var bt =
                ad::sum_squares(tape, ad::sub(tape, grads.bias_grads[l], tape.constant(packet.bias_grads[l])));
            ad::Var layer = ad::add(tape, wt, bt);
            loss = loss.id >= 0 ? ad::add(tape, loss, layer) : layer;
        }
        CHECK(tape.value(loss).item() == doctest::Approx(loss_of(candidate)).epsilon(1e-12));
        tape.backward(loss);
        Tensor autodiff = tape.gradient(xv);

        const double h = 1e-6;
        Tensor probe = candidate;
        double worst = 0.0;
        for (int64_t i = 0; i < probe.size(); ++i) {
            const double original = probe[i];
            probe[i] = original + h;
            const double up = loss_of(probe);
            probe[i] = original - h;
            const double down = loss_of(probe);
            probe[i] = original;
            worst = std::max(worst, t::relative_error(autodiff[i], (up - down) / (2.0 * h)));
        }
        CHECK(worst < 1e-4);
    }
}

TEST_CASE("the true prototype's packet matches itself better than a random vector's packet") {
    Rng rng(8);
    int wins = 0;
    for (int trial = 0; trial < 20; ++trial) {
        Rng tr = rng.child("t", trial);
        const int dim = 8;
        EncodingNet net = EncodingNet::build(dim, 3, tr.next_u64());
        Tensor proto = t::random_tensor({dim}, tr);
        Tensor other = t::random_tensor({dim}, tr);
        PrototypeGradientPacket target = encode_prototype(net, proto, 1, 0, 0);
        PrototypeGradientPacket same = encode_prototype(net, proto, 1, 0, 0);
        PrototypeGradientPacket off = encode_prototype(net, other, 1, 0, 0);
        auto packet_distance = [&](const PrototypeGradientPacket& a, const PrototypeGradientPacket& b) {
            double acc = 0.0;
            for (size_t l = 0; l < a.weight_grads.size(); ++l) {
                for (int64_t i = 0; i < a.weight_grads[l].size(); ++i) {
                    const double d = a.weight_grads[l][i] - b.weight_grads[l][i];
                    acc += d * d;
                }
                for (int64_t i = 0; i < a.bias_grads[l].size(); ++i) {
                    const double d = a.bias_grads[l][i] - b.bias_grads[l][i];
                    acc += d * d;
                }
            }
            return acc;
        };
        if (packet_distance(target, same) < packet_distance(target, off)) wins++;
    }
    CHECK(wins == 20);
}

TEST_CASE("lbfgs reconstruction also collapses the matching loss") {
    Rng rng(9);
    EncodingNet net = EncodingNet::build(10, 3, 424242);
    Tensor proto = t::random_tensor({10}, rng);
    PrototypeGradientPacket packet = encode_prototype(net, proto, 2, 0, 0);
    ReconConfig config;
    config.optimizer = ReconConfig::Optimizer::lbfgs;
    config.iterations = 300;
    ReconResult result = reconstruct(packet, net, config, rng.child("r"));
    CHECK(result.inferred_class == 2);
    CHECK(result.final_loss <= 1e-3 * result.initial_loss);
}

TEST_CASE("buffer knn edge cases and a full-sort oracle") {
    GlobalBuffer one = random_buffer(1, 4, 10);
    std::vector<std::vector<int>> knn = buffer_knn(one, 1);
    CHECK(knn == std::vector<std::vector<int>>{{0}});

    // Orthogonal rows: positive self-products, zero cross-products.
    GlobalBuffer ortho;
    for (int i = 0; i < 3; ++i) {
        GlobalBufferRow row;
        row.features = Tensor({3});
        row.features[i] = 2.0;
        row.label = i;
        ortho.rows.push_back(std::move(row));
    }
    knn = buffer_knn(ortho, 1);
    for (int i = 0; i < 3; ++i) CHECK(knn[i] == std::vector<int>{i});

    GlobalBuffer big = random_buffer(12, 5, 11);
    for (int k : {1, 3, 7}) {
        std::vector<std::vector<int>> fast = buffer_knn(big, k);
        Tensor x = big.feature_matrix();
        Tensor gram = matmul(x, x, false, true);
        for (int u = 0; u < 12; ++u) {
            std::vector<int> order(12);
            for (int i = 0; i < 12; ++i) order[i] = i;
            std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
                const double sa = 1.0 / (1.0 + std::exp(-gram.at(u, a)));
                const double sb = 1.0 / (1.0 + std::exp(-gram.at(u, b)));
                if (sa != sb) return sa > sb;
                return a < b;
            });
            order.resize(k);
            std::sort(order.begin(), order.end());
            CHECK(fast[u] == order);
            CHECK(static_cast<int>(fast[u].size()) == std::min(k, 12));
        }
    }

    // Excess k is capped at the row count.
    std::vector<std::vector<int>> capped = buffer_knn(big, 50);
    for (const auto& row : capped) CHECK(row.size() == 12);
}

TEST_CASE("transfer weights normalize per class and skip unseen classes") {
    EvolutionTrajectory q1{{1.0, 0.0}, 0};
    EvolutionTrajectory q2{{1.0, 2.0}, 0};
    std::vector<std::vector<double>> w = transfer_class_weights({q1, q2}, 2);
    CHECK(w[0][0] == doctest::Approx(0.5));
    CHECK(w[1][0] == doctest::Approx(0.5));
    CHECK(w[0][1] == doctest::Approx(0.0));
    CHECK(w[1][1] == doctest::Approx(1.0));

    EvolutionTrajectory none{{0.0, 0.0}, 0};
    std::vector<std::vector<double>> zero = transfer_class_weights({none, none}, 2);
    CHECK(zero[0][0] == 0.0);
    CHECK(zero[1][1] == 0.0);

    Rng rng(12);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<EvolutionTrajectory> qs;
        for (int k = 0; k < 3; ++k) {
            EvolutionTrajectory q;
            for (int c = 0; c < 4; ++c) q.cumulative.push_back(rng.uniform(0.0, 2.0));
            qs.push_back(std::move(q));
        }
        std::vector<std::vector<double>> weights = transfer_class_weights(qs, 4);
        for (int c = 0; c < 4; ++c) {
            double sum = 0.0;
            for (int k = 0; k < 3; ++k) sum += weights[k][c];
            CHECK(std::abs(sum - 1.0) < 1e-9);
        }
    }
}

TEST_CASE("knowledge transfer with a single identical teacher is a no-op") {
    GnnConfig cfg = tiny_config(4, 3);
    GnnParams p = GnnParams::init(cfg, Rng(13));
    GlobalBuffer buffer = random_buffer(5, 4, 14);
    std::vector<std::vector<int>> knn = buffer_knn(buffer, 1);
    EvolutionTrajectory q{{1.0, 1.0, 1.0}, 0};
    TransferResult result = knowledge_transfer(p, {p}, {q}, buffer, knn, 3, 1e-2);
    for (double loss : result.loss_curve) CHECK(loss < 1e-12);
    for (size_t i = 0; i < p.tensors.size(); ++i)
        for (int64_t j = 0; j < p.tensors[i].size(); ++j)
            CHECK(result.params.tensors[i][j] == doctest::Approx(p.tensors[i][j]).epsilon(1e-12));
}

TEST_CASE("knowledge transfer reduces the divergence on a random instance") {
    GnnConfig cfg = tiny_config(4, 3);
    GnnParams global = GnnParams::init(cfg, Rng(15));
    GnnParams teacher1 = GnnParams::init(cfg, Rng(16));
    GnnParams teacher2 = GnnParams::init(cfg, Rng(17));
    GlobalBuffer buffer = random_buffer(8, 4, 18);
    std::vector<std::vector<int>> knn = buffer_knn(buffer, 2);
    EvolutionTrajectory q1{{1.0, 0.4, 0.1}, 0};
    EvolutionTrajectory q2{{0.2, 1.0, 0.9}, 0};
    TransferResult result =
        knowledge_transfer(global, {teacher1, teacher2}, {q1, q2}, buffer, knn, 5, 1e-2);
    REQUIRE(result.loss_curve.size() == 5);
    for (size_t e = 1; e < result.loss_curve.size(); ++e) CHECK(result.loss_curve[e] < result.loss_curve[e - 1]);
}
