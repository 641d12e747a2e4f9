#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "fcgl/gnn.hpp"
#include "test_support.hpp"

using namespace fcgl;
namespace t = fcgl::testing;

namespace {

GnnConfig small_config(GnnVariant variant, int in_dim = 3, int hidden = 4, int classes = 2) {
    GnnConfig c;
    c.variant = variant;
    c.in_dim = in_dim;
    c.hidden_dim = hidden;
    c.num_classes = classes;
    c.dropout = 0.0;
    return c;
}

TaskView toy_task(int per_class, uint64_t seed, double separation = 3.0) {
    // Two linearly separable classes, a few intra-class edges.
    TaskView task;
    task.task_index = 0;
    task.class_set = {0, 1};
    Rng rng(seed);
    task.features = Tensor({2 * per_class, 2});
    for (int i = 0; i < 2 * per_class; ++i) {
        const int cls = i < per_class ? 0 : 1;
        task.labels.push_back(cls);
        task.features.at(i, 0) = (cls == 0 ? -separation : separation) + rng.normal(0.0, 0.5);
        task.features.at(i, 1) = rng.normal(0.0, 0.5);
    }
    for (int i = 1; i < per_class; ++i) {
        task.edges.emplace_back(i - 1, i);
        task.edges.emplace_back(per_class + i - 1, per_class + i);
    }
    task.train_mask.assign(2 * per_class, 1);
    task.val_mask.assign(2 * per_class, 0);
    task.test_mask.assign(2 * per_class, 0);
    return task;
}

std::vector<ad::Var> as_constants(ad::Tape& tape, const GnnParams& p) {
    std::vector<ad::Var> vars;
    for (const Tensor& t : p.tensors) vars.push_back(tape.constant(t));
    return vars;
}

}  // namespace

TEST_CASE("gcn on the identity adjacency equals a row-wise mlp") {
    GnnConfig cfg = small_config(GnnVariant::gcn);
    GnnParams params = GnnParams::init(cfg, Rng(1));
    Rng rng(2);
    Tensor x = t::random_tensor({5, 3}, rng);

    ModelAdjacency id = identity_adjacency(5, cfg.variant);
    auto [hidden, logits] = gnn_eval(params, x, id);

    // Same computation done manually per row.
    for (int i = 0; i < 5; ++i) {
        Tensor row({1, 3});
        for (int j = 0; j < 3; ++j) row.at(0, j) = x.at(i, j);
        Tensor h1 = matmul(row, params.tensors[0]);
        for (int j = 0; j < h1.size(); ++j) h1[j] = std::max(h1[j] + params.tensors[1][j], 0.0);
        Tensor h2 = matmul(h1.reshaped({1, cfg.hidden_dim}), params.tensors[2]);
        for (int j = 0; j < h2.size(); ++j) h2[j] = std::max(h2[j] + params.tensors[3][j], 0.0);
        Tensor z = matmul(h2.reshaped({1, cfg.hidden_dim}), params.tensors[4]);
        for (int j = 0; j < cfg.num_classes; ++j)
            CHECK(logits.at(i, j) == doctest::Approx(z[j] + params.tensors[5][j]).epsilon(1e-12));
        for (int j = 0; j < cfg.hidden_dim; ++j) CHECK(hidden.at(i, j) == doctest::Approx(h2[j]).epsilon(1e-12));
    }
}

TEST_CASE("eval mode is deterministic") {
    GnnConfig cfg = small_config(GnnVariant::gat);
    GnnParams params = GnnParams::init(cfg, Rng(3));
    Rng rng(4);
    Tensor x = t::random_tensor({6, 3}, rng);
    ModelAdjacency adj = prepare_adjacency(6, {{0, 1}, {1, 2}, {3, 4}}, cfg.variant);
    auto a = gnn_eval(params, x, adj);
    auto b = gnn_eval(params, x, adj);
    for (int64_t i = 0; i < a.second.size(); ++i) CHECK(a.second[i] == b.second[i]);
}

TEST_CASE("gat attention over each neighborhood sums to one") {
    GnnConfig cfg = small_config(GnnVariant::gat, 3, 5, 2);
    GnnParams params = GnnParams::init(cfg, Rng(5));
    Rng rng(6);
    Tensor x = t::random_tensor({7, 3}, rng);
    ModelAdjacency adj = prepare_adjacency(7, {{0, 1}, {1, 2}, {2, 3}, {4, 5}}, cfg.variant);
    GatIntrospection stats;
    gnn_eval(params, x, adj, &stats);
    REQUIRE(stats.attention_row_sums.size() == 2);
    for (const auto& layer : stats.attention_row_sums)
        for (double s : layer) CHECK(std::abs(s - 1.0) < 1e-9);
}

TEST_CASE("supervised loss on perfect and uniform predictions") {
    ad::Tape tape;
    Tensor sharp({2, 3});
    sharp.at(0, 1) = 40.0;
    sharp.at(1, 2) = 40.0;
    ad::Var perfect = supervised_loss(tape, tape.constant(sharp), {1, 2}, {0, 1});
    CHECK(tape.value(perfect).item() < 1e-3);

    Tensor uniform({4, 5});
    ad::Var flat = supervised_loss(tape, tape.constant(uniform), {0, 1, 2, 3}, {0, 1, 2, 3});
    CHECK(tape.value(flat).item() == doctest::Approx(std::log(5.0)).epsilon(1e-12));

    CHECK_THROWS_AS(supervised_loss(tape, tape.constant(uniform), {0, 1, 2, 3}, {}), std::invalid_argument);
}

TEST_CASE("full model gradients match finite differences for both variants") {
    for (GnnVariant variant : {GnnVariant::gat, GnnVariant::gcn}) {
        GnnConfig cfg = small_config(variant);
        GnnParams params = GnnParams::init(cfg, Rng(7));
        Rng rng(8);
        Tensor x = t::random_tensor({5, 3}, rng);
        ModelAdjacency adj = prepare_adjacency(5, {{0, 1}, {1, 2}, {2, 3}, {3, 4}}, variant);
        const std::vector<int> labels{0, 1, 0, 1, 0};
        const std::vector<int> rows{0, 1, 2, 3, 4};

        auto loss_of = [&](const std::vector<Tensor>& tensors) {
            ad::Tape tape;
            std::vector<ad::Var> vars;
            for (const Tensor& p : tensors) vars.push_back(tape.constant(p));
            ForwardResult fw = gnn_forward(tape, cfg, vars, tape.constant(x), adj, false, nullptr);
            return tape.value(supervised_loss(tape, fw.logits, labels, rows)).item();
        };
        std::vector<Tensor> fd = t::finite_difference(loss_of, params.tensors);

        ad::Tape tape;
        std::vector<ad::Var> vars;
        for (const Tensor& p : params.tensors) vars.push_back(tape.leaf(p, true));
        ForwardResult fw = gnn_forward(tape, cfg, vars, tape.constant(x), adj, false, nullptr);
        tape.backward(supervised_loss(tape, fw.logits, labels, rows));
        std::vector<Tensor> autodiff;
        for (ad::Var v : vars) autodiff.push_back(tape.gradient(v));
        CHECK(t::max_relative_error(autodiff, fd) < 1e-4);
    }
}

TEST_CASE("training with zero learning rate leaves parameters untouched") {
    GnnConfig cfg = small_config(GnnVariant::gat, 2, 4, 2);
    GnnParams params = GnnParams::init(cfg, Rng(9));
    TaskView task = toy_task(4, 10);
    ModelAdjacency adj = prepare_adjacency(task.num_nodes(), task.edges, cfg.variant);
    TrainHyper hyper;
    hyper.lr = 0.0;
    hyper.dropout = 0.0;
    hyper.epochs = 3;
    LossBuilder builder = [&](ad::Tape& tape, const std::vector<ad::Var>& vars, Rng&) {
        ForwardResult fw = gnn_forward(tape, cfg, vars, tape.constant(task.features), adj, false, nullptr);
        return supervised_loss(tape, fw.logits, task.labels, task.train_rows());
    };
    auto [after, loss] = train_epochs(params, builder, hyper, Rng(11));
    (void)loss;
    for (size_t i = 0; i < params.tensors.size(); ++i)
        for (int64_t j = 0; j < params.tensors[i].size(); ++j)
            CHECK(after.tensors[i][j] == params.tensors[i][j]);
}

TEST_CASE("fifty epochs separate a linearly separable toy graph") {
    GnnConfig cfg = small_config(GnnVariant::gat, 2, 8, 2);
    cfg.dropout = 0.0;
    GnnParams params = GnnParams::init(cfg, Rng(12));
    TaskView task = toy_task(6, 13);
    ModelAdjacency adj = prepare_adjacency(task.num_nodes(), task.edges, cfg.variant);
    TrainHyper hyper;
    hyper.lr = 1e-2;
    hyper.weight_decay = 0.0;
    hyper.dropout = 0.0;
    hyper.epochs = 1;
    LossBuilder builder = [&](ad::Tape& tape, const std::vector<ad::Var>& vars, Rng&) {
        ForwardResult fw = gnn_forward(tape, cfg, vars, tape.constant(task.features), adj, false, nullptr);
        return supervised_loss(tape, fw.logits, task.labels, task.train_rows());
    };
    double previous = 1e300;
    int increases = 0;
    for (int epoch = 0; epoch < 50; ++epoch) {
        auto [next, loss] = train_epochs(std::move(params), builder, hyper, Rng(14).child("e", epoch));
        params = std::move(next);
        if (loss > previous + 1e-9) increases++;
        previous = loss;
    }
    CHECK(increases <= 2);   // allow tiny Adam wobble, trend must descend
    std::vector<int> all_rows = task.train_rows();
    CHECK(evaluate(params, task, adj, all_rows) == doctest::Approx(1.0));
}

TEST_CASE("training is bit deterministic given the seed") {
    GnnConfig cfg = small_config(GnnVariant::gat, 2, 4, 2);
    cfg.dropout = 0.5;
    GnnParams params = GnnParams::init(cfg, Rng(15));
    TaskView task = toy_task(5, 16);
    ModelAdjacency adj = prepare_adjacency(task.num_nodes(), task.edges, cfg.variant);
    TrainHyper hyper;
    hyper.epochs = 4;
    hyper.dropout = 0.5;
    auto run = [&] {
        LossBuilder builder = [&](ad::Tape& tape, const std::vector<ad::Var>& vars, Rng& rng) {
            Rng fwd = rng.child("fwd");
            ForwardResult fw = gnn_forward(tape, cfg, vars, tape.constant(task.features), adj, true, &fwd);
            return supervised_loss(tape, fw.logits, task.labels, task.train_rows());
        };
        return train_epochs(params, builder, hyper, Rng(17)).first;
    };
    GnnParams a = run(), b = run();
    for (size_t i = 0; i < a.tensors.size(); ++i)
        for (int64_t j = 0; j < a.tensors[i].size(); ++j) CHECK(a.tensors[i][j] == b.tensors[i][j]);
}

TEST_CASE("flatten and unflatten round trip exactly") {
    for (GnnVariant variant : {GnnVariant::gat, GnnVariant::gcn}) {
        GnnConfig cfg = small_config(variant, 4, 6, 3);
        GnnParams params = GnnParams::init(cfg, Rng(18));
        std::vector<double> flat = params.flatten();
        GnnParams back = GnnParams::unflatten(cfg, flat);
        REQUIRE(back.tensors.size() == params.tensors.size());
        for (size_t i = 0; i < params.tensors.size(); ++i) {
            REQUIRE(back.tensors[i].same_shape(params.tensors[i]));
            for (int64_t j = 0; j < params.tensors[i].size(); ++j)
                CHECK(back.tensors[i][j] == params.tensors[i][j]);
        }
        CHECK(back.flatten() == flat);
        CHECK(static_cast<int64_t>(flat.size()) == params.parameter_count());
    }
}

TEST_CASE("evaluate: constant predictor, binomial sanity, copied parameters") {
    GnnConfig cfg = small_config(GnnVariant::gat, 2, 4, 4);
    GnnParams params = GnnParams::init(cfg, Rng(19));

    // Single-class task where the model always answers that class.
    TaskView task;
    task.task_index = 0;
    task.class_set = {2};
    task.labels.assign(6, 2);
    task.features = Tensor({6, 2});
    task.test_mask.assign(6, 1);
    task.train_mask.assign(6, 0);
    task.val_mask.assign(6, 0);
    GnnParams biased = params;
    biased.tensors.back()[2] = 100.0;   // head bias dominates every logit
    ModelAdjacency id = identity_adjacency(6, cfg.variant);
    CHECK(evaluate(biased, task, id, task.test_rows()) == doctest::Approx(1.0));

    // Random labels: accuracy close to 1/C.
    Rng rng(20);
    TaskView random_task;
    random_task.task_index = 0;
    random_task.class_set = {0, 1, 2, 3};
    const int n = 400;
    random_task.features = t::random_tensor({n, 2}, rng);
    for (int i = 0; i < n; ++i) random_task.labels.push_back(static_cast<int>(rng.below(4)));
    random_task.test_mask.assign(n, 1);
    random_task.train_mask.assign(n, 0);
    random_task.val_mask.assign(n, 0);
    ModelAdjacency id_n = identity_adjacency(n, cfg.variant);
    const double acc = evaluate(params, random_task, id_n, random_task.test_rows());
    const double sigma = std::sqrt(0.25 * 0.75 / n);
    CHECK(std::abs(acc - 0.25) < 3.5 * sigma + 0.05);

    GnnParams copy = params;
    CHECK(evaluate(copy, random_task, id_n, random_task.test_rows()) == acc);
}

TEST_CASE("node permutation leaves evaluation unchanged") {
    GnnConfig cfg = small_config(GnnVariant::gat, 2, 4, 2);
    GnnParams params = GnnParams::init(cfg, Rng(21));
    TaskView task = toy_task(5, 22);
    task.test_mask = task.train_mask;
    ModelAdjacency adj = prepare_adjacency(task.num_nodes(), task.edges, cfg.variant);
    const double base = evaluate(params, task, adj, task.test_rows());

    const int n = task.num_nodes();
    std::vector<int> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = (i * 7 + 3) % n;   // a fixed permutation
    TaskView shuffled = task;
    for (int i = 0; i < n; ++i) {
        shuffled.labels[perm[i]] = task.labels[i];
        for (int j = 0; j < 2; ++j) shuffled.features.at(perm[i], j) = task.features.at(i, j);
    }
    shuffled.edges.clear();
    for (auto [u, v] : task.edges)
        shuffled.edges.emplace_back(std::min(perm[u], perm[v]), std::max(perm[u], perm[v]));
    std::sort(shuffled.edges.begin(), shuffled.edges.end());
    ModelAdjacency adj2 = prepare_adjacency(n, shuffled.edges, cfg.variant);
    const double permuted = evaluate(params, shuffled, adj2, shuffled.test_rows());
    CHECK(permuted == doctest::Approx(base).epsilon(1e-12));
}
