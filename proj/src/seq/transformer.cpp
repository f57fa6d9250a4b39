#include "storm/seq/transformer.hpp"

#include <cmath>

#include "storm/errors.hpp"

namespace storm::seq {

using nn::Tape;
using nn::Var;

void AttentionConfig::validate() const {
    if (layers < 1) throw ConfigError("attention: layers must be >= 1");
    if (heads < 1) throw ConfigError("attention: heads must be >= 1");
    if (width % heads != 0)
        throw ConfigError("attention: width " + std::to_string(width) +
                          " not divisible by heads " + std::to_string(heads));
    if (mlp_ratio < 1) throw ConfigError("attention: mlp_ratio must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("attention: dropout in [0,1)");
}

Var linear(Tape& t, Var x, const LinearP& p) {
    return add_rowvec(matmul(x, t.use(*p.w)), t.use(*p.b));
}

namespace {

LinearP make_linear(nn::ParamStore& store, const std::string& name, int in, int out,
                    nn::Rng& rng, double sigma = 0.02) {
    LinearP p;
    p.w = &store.create(name + ".w", in, out, /*decay=*/true);
    p.b = &store.create(name + ".b", 1, out, /*decay=*/false);
    nn::init_normal(*p.w, rng, sigma);
    return p;
}

}  // namespace

StackP make_stack(nn::ParamStore& store, const std::string& prefix,
                  const AttentionConfig& cfg, nn::Rng& rng) {
    cfg.validate();
    StackP stack;
    stack.heads = cfg.heads;
    int h = cfg.width;
    for (int l = 0; l < cfg.layers; ++l) {
        std::string base = prefix + "." + std::to_string(l);
        BlockP b;
        b.ln1_g = &store.create(base + ".ln1.g", 1, h, false);
        b.ln1_b = &store.create(base + ".ln1.b", 1, h, false);
        nn::init_const(*b.ln1_g, 1.0);
        b.q = make_linear(store, base + ".q", h, h, rng);
        b.k = make_linear(store, base + ".k", h, h, rng);
        b.v = make_linear(store, base + ".v", h, h, rng);
        b.o = make_linear(store, base + ".o", h, h, rng);
        b.ln2_g = &store.create(base + ".ln2.g", 1, h, false);
        b.ln2_b = &store.create(base + ".ln2.b", 1, h, false);
        nn::init_const(*b.ln2_g, 1.0);
        b.fc1 = make_linear(store, base + ".fc1", h, h * cfg.mlp_ratio, rng);
        b.fc2 = make_linear(store, base + ".fc2", h * cfg.mlp_ratio, h, rng);
        stack.blocks.push_back(b);
    }
    return stack;
}

Var layer_norm_affine(Tape& t, Var x, nn::Param* gain, nn::Param* bias) {
    return add_rowvec(mul_rowvec(layer_norm_rows(x), t.use(*gain)), t.use(*bias));
}

namespace {

Var heads_attention(Tape& t, Var q, Var k, Var v, int heads) {
    int h = static_cast<int>(q.cols());
    int dh = h / heads;
    double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    std::vector<Var> outs;
    outs.reserve(heads);
    for (int i = 0; i < heads; ++i) {
        Var qh = slice_cols(q, i * dh, dh);
        Var kh = slice_cols(k, i * dh, dh);
        Var vh = slice_cols(v, i * dh, dh);
        Var scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
        Var attn = softmax_rows(scores);
        outs.push_back(matmul(attn, vh));
    }
    return heads == 1 ? outs[0] : concat_cols(outs);
}

}  // namespace

Var self_attention(Tape& t, Var x, const BlockP& p, int heads) {
    Var q = linear(t, x, p.q);
    Var k = linear(t, x, p.k);
    Var v = linear(t, x, p.v);
    return linear(t, heads_attention(t, q, k, v, heads), p.o);
}

Var cross_attention(Tape& t, Var q_rows, Var kv_rows, const BlockP& p, int heads) {
    Var q = linear(t, q_rows, p.q);
    Var k = linear(t, kv_rows, p.k);
    Var v = linear(t, kv_rows, p.v);
    return linear(t, heads_attention(t, q, k, v, heads), p.o);
}

Var block_forward(Tape& t, Var x, const BlockP& p, int heads) {
    Var h1 = layer_norm_affine(t, x, p.ln1_g, p.ln1_b);
    x = add(x, self_attention(t, h1, p, heads));
    Var h2 = layer_norm_affine(t, x, p.ln2_g, p.ln2_b);
    Var m = linear(t, gelu(linear(t, h2, p.fc1)), p.fc2);
    return add(x, m);
}

Var stack_forward(Tape& t, Var x, const StackP& p) {
    for (const auto& b : p.blocks) x = block_forward(t, x, b, p.heads);
    return x;
}

}  // namespace storm::seq
