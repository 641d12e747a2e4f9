#pragma once

#include <cstdint>
#include <vector>

#include "fcgl/autodiff.hpp"
#include "fcgl/tensor.hpp"

namespace fcgl {

/// Frozen 4-layer MLP (in -> 128 -> 128 -> 64 -> classes, ReLU between
/// affine maps) used to encode class prototypes as parameter gradients.
/// Every party builds bit-identical parameters from the shared seed; the
/// network is never trained.
struct EncodingNet {
    int in_dim = 0;
    int num_classes = 0;
    std::vector<Tensor> weights;   // (in,128), (128,128), (128,64), (64,C)
    std::vector<Tensor> biases;    // (128), (128), (64), (C)

    static EncodingNet build(int in_dim, int num_classes, uint64_t shared_seed);
    int num_layers() const { return static_cast<int>(weights.size()); }
};

/// Per-layer gradients of the softmax cross-entropy of the network's
/// prediction for `input_row` against the one-hot target class, expressed
/// as tape variables. The network parameters are constants; gradients flow
/// into input_row when it requires them, which is how pseudo-prototype
/// reconstruction differentiates through this computation.
struct EncodingGradients {
    std::vector<ad::Var> weight_grads;
    std::vector<ad::Var> bias_grads;
};

EncodingGradients encoding_gradients(ad::Tape& tape, const EncodingNet& net, ad::Var input_row, int target_class);

/// One client-to-server message: the encoding-net gradients of one class
/// prototype. The class itself is not transmitted; the receiver infers it
/// from the gradient's sign structure.
struct PrototypeGradientPacket {
    std::vector<Tensor> weight_grads;
    std::vector<Tensor> bias_grads;
    int client_id = 0;
    int task_index = 0;
};

/// Evaluate the gradients of a concrete prototype (no differentiation).
PrototypeGradientPacket encode_prototype(const EncodingNet& net, const Tensor& prototype, int target_class,
                                         int client_id, int task_index);

}  // namespace fcgl
