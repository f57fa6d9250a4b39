#include "storm/vq/quantizer.hpp"

#include <cmath>
#include <fstream>

#include "storm/errors.hpp"

namespace storm::vq {

using nn::Tape;
using nn::Var;

Codebook make_codebook(nn::ParamStore& store, const std::string& name, int k, int h,
                       nn::Rng& rng) {
    if (k < 2) throw ConfigError("codebook size must be >= 2, got " + std::to_string(k));
    Codebook cb;
    cb.name = name;
    cb.entries = &store.create("codebook." + name, k, h, /*decay=*/false);
    double lim = 1.0 / static_cast<double>(k);
    nn::init_uniform(*cb.entries, rng, -lim, lim);
    return cb;
}

int nearest_code(const Eigen::RowVectorXd& z, const Matrix& entries) {
    if (!z.allFinite()) throw ConfigError("nearest_code: non-finite input");
    int best = 0;
    double best_d = (z - entries.row(0)).squaredNorm();
    for (int k = 1; k < entries.rows(); ++k) {
        double d = (z - entries.row(k)).squaredNorm();
        if (d < best_d) {  // strict: ties keep the smallest index
            best_d = d;
            best = k;
        }
    }
    return best;
}

QuantizationOutcome quantize(Tape& t, Var tokens, const Codebook& cb, double temperature) {
    if (!tokens.val().allFinite()) throw ConfigError("quantize: non-finite tokens");
    if (temperature <= 0.0) throw ConfigError("quantize: temperature must be positive");

    Var entries = t.use(*cb.entries);
    Var d2 = pairwise_sqdist(tokens, entries);

    QuantizationOutcome out;
    const Matrix& dv = d2.val();
    out.indices.resize(dv.rows());
    for (Eigen::Index m = 0; m < dv.rows(); ++m) {
        int best = 0;
        double best_d = dv(m, 0);
        for (Eigen::Index k = 1; k < dv.cols(); ++k) {
            if (dv(m, k) < best_d) {
                best_d = dv(m, k);
                best = static_cast<int>(k);
            }
        }
        out.indices[m] = best;
    }

    Var z_q = gather_rows(entries, out.indices);
    out.commitment_term = sum_sq(sub(tokens, detach(z_q)));
    out.codebook_term = sum_sq(sub(detach(tokens), z_q));
    // straight-through: value is z_q, gradient passes to tokens unchanged
    out.quantized = add(tokens, detach(sub(z_q, tokens)));
    out.soft_assign = softmax_rows(scale(d2, -1.0 / temperature));
    return out;
}

Var diversity_loss(Tape& t, const std::vector<Var>& p_bars) {
    if (p_bars.empty()) throw ConfigError("diversity_loss: need at least one codebook");
    int g = static_cast<int>(p_bars.size());
    int k = static_cast<int>(p_bars.front().val().size());
    Var acc = sum(xlogx(p_bars[0]));
    for (int i = 1; i < g; ++i) acc = add(acc, sum(xlogx(p_bars[i])));
    return scale(acc, 1.0 / (static_cast<double>(g) * k));
}

Var orthogonality_loss(Tape& t, const Codebook& cb) {
    Var entries = t.use(*cb.entries);
    int k = cb.size();
    Var normed = row_l2_normalize(entries);
    Var gram = matmul(normed, transpose(normed));
    Var eye = t.input(Matrix::Identity(k, k));
    return scale(sum_sq(sub(gram, eye)), 1.0 / (static_cast<double>(k) * k));
}

double diversity_loss_value(const std::vector<Eigen::VectorXd>& p_bars) {
    double acc = 0.0;
    int g = static_cast<int>(p_bars.size());
    int k = static_cast<int>(p_bars.front().size());
    for (const auto& p : p_bars)
        for (int i = 0; i < p.size(); ++i)
            if (p(i) > 0.0) acc += p(i) * std::log(p(i));
    return acc / (static_cast<double>(g) * k);
}

double orthogonality_loss_value(const Matrix& entries) {
    int k = static_cast<int>(entries.rows());
    Matrix normed = entries;
    for (int r = 0; r < k; ++r) normed.row(r) /= (normed.row(r).norm() + 1e-12);
    Matrix gram = normed * normed.transpose();
    gram -= Matrix::Identity(k, k);
    return gram.squaredNorm() / (static_cast<double>(k) * k);
}

std::int64_t UsageStats::total() const {
    std::int64_t s = 0;
    for (auto c : counts) s += c;
    return s;
}

double UsageStats::entropy() const {
    std::int64_t tot = total();
    if (tot == 0) return 0.0;
    double h = 0.0;
    for (auto c : counts) {
        if (c == 0) continue;
        double p = static_cast<double>(c) / static_cast<double>(tot);
        h -= p * std::log(p);
    }
    return h;
}

UsageAccumulator::UsageAccumulator(int k)
    : counts_(k, 0), soft_sum_(Eigen::VectorXd::Zero(k)) {}

void UsageAccumulator::add(const std::vector<int>& indices, const Matrix& soft_assign) {
    for (int id : indices) {
        if (id < 0 || id >= static_cast<int>(counts_.size()))
            throw ConfigError("usage: code id out of range: " + std::to_string(id));
        counts_[id]++;
    }
    soft_sum_ += soft_assign.colwise().sum().transpose();
    tokens_ += soft_assign.rows();
}

void UsageAccumulator::reset() {
    std::fill(counts_.begin(), counts_.end(), 0);
    soft_sum_.setZero();
    tokens_ = 0;
}

UsageStats UsageAccumulator::finalize() const {
    UsageStats s;
    s.counts = counts_;
    s.p_bar = tokens_ > 0 ? (soft_sum_ / static_cast<double>(tokens_)).eval()
                          : Eigen::VectorXd::Zero(soft_sum_.size()).eval();
    int dead = 0;
    for (auto c : counts_)
        if (c == 0) ++dead;
    s.dead_fraction = counts_.empty() ? 1.0
                                      : static_cast<double>(dead) /
                                            static_cast<double>(counts_.size());
    return s;
}

UsageHistogram usage_histogram(const std::vector<int>& indices, int k, int bucket) {
    if (k < 1 || bucket < 1) throw ConfigError("usage_histogram: bad K or bucket");
    UsageHistogram h;
    h.bucket = bucket;
    h.buckets.assign((k + bucket - 1) / bucket, 0);
    std::vector<std::int64_t> counts(k, 0);
    for (int id : indices) {
        if (id < 0 || id >= k)
            throw ConfigError("usage_histogram: id out of range: " + std::to_string(id));
        counts[id]++;
    }
    for (int c = 0; c < k; ++c) h.buckets[c / bucket] += counts[c];
    int dead = 0;
    for (auto c : counts)
        if (c == 0) ++dead;
    h.dead_fraction = static_cast<double>(dead) / static_cast<double>(k);
    return h;
}

void write_histogram_csv(const UsageHistogram& h, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << "bucket_start,count\n";
    for (std::size_t i = 0; i < h.buckets.size(); ++i)
        f << i * static_cast<std::size_t>(h.bucket) << ',' << h.buckets[i] << "\n";
}

}  // namespace storm::vq
