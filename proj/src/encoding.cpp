#include "fcgl/encoding.hpp"

#include <cmath>
#include <stdexcept>

#include "fcgl/rng.hpp"

namespace fcgl {

namespace {

Tensor fanin_uniform(int rows, int cols, Rng& rng) {
    Tensor t({rows, cols});
    const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
    return t;
}

Tensor fanin_uniform_vec(int n, int fan_in, Rng& rng) {
    Tensor t({n});
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (int64_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(-bound, bound);
    return t;
}

}  // namespace

EncodingNet EncodingNet::build(int in_dim, int num_classes, uint64_t shared_seed) {
    if (in_dim <= 0 || num_classes <= 0)
        throw std::invalid_argument("encoding net: in_dim and num_classes must be positive");
    EncodingNet net;
    net.in_dim = in_dim;
    net.num_classes = num_classes;
    const int dims[5] = {in_dim, 128, 128, 64, num_classes};
    Rng rng(shared_seed);
    for (int layer = 0; layer < 4; ++layer) {
        Rng lr = rng.child("encode-layer", static_cast<uint64_t>(layer));
        net.weights.push_back(fanin_uniform(dims[layer], dims[layer + 1], lr));
        net.biases.push_back(fanin_uniform_vec(dims[layer + 1], dims[layer], lr));
    }
    return net;
}

EncodingGradients encoding_gradients(ad::Tape& tape, const EncodingNet& net, ad::Var input_row, int target_class) {
    if (target_class < 0 || target_class >= net.num_classes)
        throw std::invalid_argument("encoding_gradients: class out of range");
    const Tensor& in = tape.value(input_row);
    if (in.size() != net.in_dim) throw std::invalid_argument("encoding_gradients: input width mismatch");
    ad::Var x = in.rank() == 2 ? input_row : ad::reshape(tape, input_row, {1, net.in_dim});

    const int layers = net.num_layers();
    std::vector<ad::Var> activations;   // a_0 .. a_{L-1}, inputs to each affine layer
    std::vector<ad::Var> pre;           // z_1 .. z_L
    activations.push_back(x);
    ad::Var h = x;
    for (int l = 0; l < layers; ++l) {
        ad::Var w = tape.constant(net.weights[static_cast<size_t>(l)]);
        ad::Var b = tape.constant(net.biases[static_cast<size_t>(l)]);
        ad::Var z = ad::add_rowvec(tape, ad::matmul(tape, h, w), b);
        pre.push_back(z);
        if (l + 1 < layers) {
            h = ad::relu(tape, z);
            activations.push_back(h);
        }
    }

    // Backpropagation of the cross-entropy, spelled out as forward tape ops
    // so the resulting gradients stay differentiable w.r.t. the input. The
    // ReLU masks are read off as constants, which matches the almost-
    // everywhere derivative of the step function.
    ad::Var prob = ad::softmax_rows(tape, pre.back());
    ad::Var delta = ad::sub(tape, prob,
                            tape.constant(ad::onehot(target_class, net.num_classes).reshaped({1, net.num_classes})));

    EncodingGradients grads;
    grads.weight_grads.resize(static_cast<size_t>(layers));
    grads.bias_grads.resize(static_cast<size_t>(layers));
    for (int l = layers - 1; l >= 0; --l) {
        const int in_width = tape.value(activations[static_cast<size_t>(l)]).dim(1);
        const int out_width = tape.value(delta).dim(1);
        ad::Var a_col = ad::reshape(tape, activations[static_cast<size_t>(l)], {in_width, 1});
        grads.weight_grads[static_cast<size_t>(l)] = ad::matmul(tape, a_col, delta);
        grads.bias_grads[static_cast<size_t>(l)] = ad::reshape(tape, delta, {out_width});
        if (l > 0) {
            ad::Var w_t = tape.constant(transpose(net.weights[static_cast<size_t>(l)]));
            ad::Var back = ad::matmul(tape, delta, w_t);
            const Tensor& z_prev = tape.value(pre[static_cast<size_t>(l - 1)]);
            Tensor mask = z_prev;
            for (int64_t i = 0; i < mask.size(); ++i) mask[i] = mask[i] > 0.0 ? 1.0 : 0.0;
            delta = ad::mul(tape, back, tape.constant(std::move(mask)));
        }
    }
    return grads;
}

PrototypeGradientPacket encode_prototype(const EncodingNet& net, const Tensor& prototype, int target_class,
                                         int client_id, int task_index) {
    ad::Tape tape;
    ad::Var x = tape.constant(prototype);
    EncodingGradients grads = encoding_gradients(tape, net, x, target_class);
    PrototypeGradientPacket packet;
    packet.client_id = client_id;
    packet.task_index = task_index;
    for (size_t l = 0; l < grads.weight_grads.size(); ++l) {
        packet.weight_grads.push_back(tape.value(grads.weight_grads[l]));
        packet.bias_grads.push_back(tape.value(grads.bias_grads[l]));
    }
    return packet;
}

}  // namespace fcgl
