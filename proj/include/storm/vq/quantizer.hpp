#pragma once

#include <string>
#include <vector>

#include "storm/nn/params.hpp"
#include "storm/nn/tape.hpp"

namespace storm::vq {

using nn::Matrix;

// K learnable embeddings of width H. Entries are rows. The codebook is
// trained through the explicit codebook loss term, not EMA updates.
struct Codebook {
    nn::Param* entries = nullptr;  // K x H
    std::string name;              // "ts" or "cs"

    int size() const { return static_cast<int>(entries->value.rows()); }
    int width() const { return static_cast<int>(entries->value.cols()); }
};

Codebook make_codebook(nn::ParamStore& store, const std::string& name, int k, int h,
                       nn::Rng& rng);

// argmin_k ||z - e_k||^2; ties break to the smallest index.
int nearest_code(const Eigen::RowVectorXd& z, const Matrix& entries);

struct QuantizationOutcome {
    std::vector<int> indices;   // hard assignment per token
    nn::Var quantized;          // M x H codebook rows, straight-through value
    nn::Var commitment_term;    // ||sg[z_q] - z_e||^2 (summed squares)
    nn::Var codebook_term;      // ||sg[z_e] - z_q||^2 (summed squares)
    nn::Var soft_assign;        // M x K row-stochastic, softmax(-d^2 / temperature)
};

// Gradient contract: the gradient arriving at `quantized` flows unchanged to
// `tokens`; `entries` receive gradient only through codebook_term (and, when
// enabled downstream, the soft-assign diversity path).
QuantizationOutcome quantize(nn::Tape& t, nn::Var tokens, const Codebook& cb,
                             double temperature = 1.0);

// (1/(G*K)) sum_g sum_k p log p over batch-averaged soft distributions; <= 0,
// most negative at uniform usage, so minimizing it spreads usage out.
nn::Var diversity_loss(nn::Tape& t, const std::vector<nn::Var>& p_bars);

// (1/K^2) || l2(E) l2(E)^T - I ||_F^2 over row-normalized entries.
nn::Var orthogonality_loss(nn::Tape& t, const Codebook& cb);

double diversity_loss_value(const std::vector<Eigen::VectorXd>& p_bars);
double orthogonality_loss_value(const Matrix& entries);

struct UsageStats {
    std::vector<std::int64_t> counts;  // hard-assignment tallies, size K
    Eigen::VectorXd p_bar;             // averaged soft distribution
    double dead_fraction = 1.0;

    std::int64_t total() const;
    double entropy() const;  // of the normalized hard counts
};

// Serialized accumulation of quantization outcomes; not safe for concurrent
// mutation.
class UsageAccumulator {
public:
    explicit UsageAccumulator(int k);
    void add(const std::vector<int>& indices, const Matrix& soft_assign);
    void reset();
    UsageStats finalize() const;

private:
    std::vector<std::int64_t> counts_;
    Eigen::VectorXd soft_sum_;
    std::int64_t tokens_ = 0;
};

// ceil(K/bucket) buckets of summed counts, plus the dead-code share.
struct UsageHistogram {
    int bucket = 5;
    std::vector<std::int64_t> buckets;
    double dead_fraction = 1.0;
};

UsageHistogram usage_histogram(const std::vector<int>& indices, int k, int bucket = 5);
void write_histogram_csv(const UsageHistogram& h, const std::string& path);

}  // namespace storm::vq
