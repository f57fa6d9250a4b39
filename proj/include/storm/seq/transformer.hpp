#pragma once

#include <string>
#include <vector>

#include "storm/nn/params.hpp"
#include "storm/nn/tape.hpp"

namespace storm::seq {

struct AttentionConfig {
    int layers = 4;
    int heads = 4;
    int width = 256;     // model width H
    int mlp_ratio = 4;   // hidden expansion in the MLP
    double dropout = 0.0;

    void validate() const;
};

// Parameter bundle of one affine map; weight is in x out, bias 1 x out.
struct LinearP {
    nn::Param* w = nullptr;
    nn::Param* b = nullptr;
};

nn::Var linear(nn::Tape& t, nn::Var x, const LinearP& p);

// Pre-norm residual block: x += Attn(LN(x)); x += MLP(LN(x)).
struct BlockP {
    nn::Param* ln1_g = nullptr;
    nn::Param* ln1_b = nullptr;
    LinearP q, k, v, o;
    nn::Param* ln2_g = nullptr;
    nn::Param* ln2_b = nullptr;
    LinearP fc1, fc2;
};

struct StackP {
    std::vector<BlockP> blocks;
    int heads = 0;
};

// Creates parameters for `layers` blocks under `prefix`, seeded init.
StackP make_stack(nn::ParamStore& store, const std::string& prefix,
                  const AttentionConfig& cfg, nn::Rng& rng);

nn::Var layer_norm_affine(nn::Tape& t, nn::Var x, nn::Param* gain, nn::Param* bias);

// Multi-head self-attention over the rows of x (M x H).
nn::Var self_attention(nn::Tape& t, nn::Var x, const BlockP& p, int heads);

// Multi-head cross-attention: queries from q_rows, keys/values from kv_rows.
nn::Var cross_attention(nn::Tape& t, nn::Var q_rows, nn::Var kv_rows, const BlockP& p,
                        int heads);

nn::Var block_forward(nn::Tape& t, nn::Var x, const BlockP& p, int heads);

nn::Var stack_forward(nn::Tape& t, nn::Var x, const StackP& p);

}  // namespace storm::seq
