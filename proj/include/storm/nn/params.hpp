#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace storm::nn {

// Seeded RNG wrapper; all randomness in the library flows through instances
// of this, never through global state.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    double normal(double mu = 0.0, double sigma = 1.0) {
        return std::normal_distribution<double>(mu, sigma)(gen_);
    }
    double uniform(double lo, double hi) {
        return std::uniform_real_distribution<double>(lo, hi)(gen_);
    }
    std::uint64_t next_u64() { return gen_(); }
    int uniform_int(int lo, int hi) {  // inclusive bounds
        return std::uniform_int_distribution<int>(lo, hi)(gen_);
    }
    template <typename T>
    void shuffle(std::vector<T>& v) {
        std::shuffle(v.begin(), v.end(), gen_);
    }
    std::mt19937_64& engine() { return gen_; }

private:
    std::mt19937_64 gen_;
};

struct Param {
    std::string name;
    Eigen::MatrixXd value;
    Eigen::MatrixXd grad;
    Eigen::MatrixXd m;  // AdamW first moment
    Eigen::MatrixXd v;  // AdamW second moment
    bool decay = true;  // participates in weight decay

    Eigen::Index size() const { return value.size(); }
};

// Owning registry of named parameters. Names are stable identifiers used for
// checkpoint round-trips, so creation order and naming must be deterministic.
class ParamStore {
public:
    Param& create(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                  bool decay = true);
    Param* find(const std::string& name);
    const std::vector<std::unique_ptr<Param>>& all() const { return params_; }

    void zero_grad();
    double grad_norm() const;
    void clip_grad_norm(double max_norm);
    std::int64_t total_size() const;

    // Bit-exact binary round-trip (raw IEEE-754 payload).
    void save(const std::string& path) const;
    void load(const std::string& path);

private:
    std::vector<std::unique_ptr<Param>> params_;
};

// Initializers.
void init_normal(Param& p, Rng& rng, double sigma);
void init_uniform(Param& p, Rng& rng, double lo, double hi);
void init_zeros(Param& p);
void init_const(Param& p, double c);

// Decoupled weight decay Adam.
class AdamW {
public:
    AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
          double weight_decay = 0.0)
        : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}

    void step(ParamStore& params, double lr);
    std::int64_t t() const { return t_; }

private:
    double beta1_, beta2_, eps_, weight_decay_;
    std::int64_t t_ = 0;
};

}  // namespace storm::nn
