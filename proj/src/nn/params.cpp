#include "storm/nn/params.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "storm/errors.hpp"

namespace storm::nn {

Param& ParamStore::create(const std::string& name, Eigen::Index rows, Eigen::Index cols,
                          bool decay) {
    if (find(name) != nullptr) throw InternalError("duplicate parameter name: " + name);
    auto p = std::make_unique<Param>();
    p->name = name;
    p->value = Eigen::MatrixXd::Zero(rows, cols);
    p->grad = Eigen::MatrixXd::Zero(rows, cols);
    p->m = Eigen::MatrixXd::Zero(rows, cols);
    p->v = Eigen::MatrixXd::Zero(rows, cols);
    p->decay = decay;
    params_.push_back(std::move(p));
    return *params_.back();
}

Param* ParamStore::find(const std::string& name) {
    for (auto& p : params_)
        if (p->name == name) return p.get();
    return nullptr;
}

void ParamStore::zero_grad() {
    for (auto& p : params_) p->grad.setZero();
}

double ParamStore::grad_norm() const {
    double s = 0.0;
    for (auto& p : params_) s += p->grad.squaredNorm();
    return std::sqrt(s);
}

void ParamStore::clip_grad_norm(double max_norm) {
    double n = grad_norm();
    if (n > max_norm && n > 0.0) {
        double f = max_norm / n;
        for (auto& p : params_) p->grad *= f;
    }
}

std::int64_t ParamStore::total_size() const {
    std::int64_t s = 0;
    for (auto& p : params_) s += p->size();
    return s;
}

namespace {
constexpr char kMagic[8] = {'S', 'T', 'R', 'M', 'P', 'R', 'M', '1'};
}

void ParamStore::save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write parameter file: " + path);
    f.write(kMagic, 8);
    std::uint64_t n = params_.size();
    f.write(reinterpret_cast<const char*>(&n), sizeof(n));
    for (const auto& p : params_) {
        std::uint64_t len = p->name.size();
        f.write(reinterpret_cast<const char*>(&len), sizeof(len));
        f.write(p->name.data(), static_cast<std::streamsize>(len));
        std::int64_t rows = p->value.rows(), cols = p->value.cols();
        f.write(reinterpret_cast<const char*>(&rows), sizeof(rows));
        f.write(reinterpret_cast<const char*>(&cols), sizeof(cols));
        f.write(reinterpret_cast<const char*>(p->value.data()),
                static_cast<std::streamsize>(sizeof(double) * p->value.size()));
    }
    if (!f) throw IoError("short write on parameter file: " + path);
}

void ParamStore::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open parameter file: " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kMagic, 8) != 0)
        throw ParseError("not a parameter file: " + path);
    std::uint64_t n = 0;
    f.read(reinterpret_cast<char*>(&n), sizeof(n));
    if (n != params_.size())
        throw ParseError("parameter count mismatch in " + path);
    for (auto& p : params_) {
        std::uint64_t len = 0;
        f.read(reinterpret_cast<char*>(&len), sizeof(len));
        std::string name(len, '\0');
        f.read(name.data(), static_cast<std::streamsize>(len));
        if (name != p->name) throw ParseError("parameter name mismatch: " + name);
        std::int64_t rows = 0, cols = 0;
        f.read(reinterpret_cast<char*>(&rows), sizeof(rows));
        f.read(reinterpret_cast<char*>(&cols), sizeof(cols));
        if (rows != p->value.rows() || cols != p->value.cols())
            throw ParseError("parameter shape mismatch: " + name);
        f.read(reinterpret_cast<char*>(p->value.data()),
               static_cast<std::streamsize>(sizeof(double) * p->value.size()));
        if (!f) throw ParseError("truncated parameter file: " + path);
    }
}

void init_normal(Param& p, Rng& rng, double sigma) {
    for (Eigen::Index i = 0; i < p.value.size(); ++i)
        p.value.data()[i] = rng.normal(0.0, sigma);
}

void init_uniform(Param& p, Rng& rng, double lo, double hi) {
    for (Eigen::Index i = 0; i < p.value.size(); ++i)
        p.value.data()[i] = rng.uniform(lo, hi);
}

void init_zeros(Param& p) { p.value.setZero(); }

void init_const(Param& p, double c) { p.value.setConstant(c); }

void AdamW::step(ParamStore& params, double lr) {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& p : params.all()) {
        Param& q = *p;
        q.m = beta1_ * q.m + (1.0 - beta1_) * q.grad;
        q.v = beta2_ * q.v + (1.0 - beta2_) * q.grad.cwiseProduct(q.grad);
        Eigen::ArrayXXd mhat = q.m.array() / bc1;
        Eigen::ArrayXXd vhat = q.v.array() / bc2;
        q.value.array() -= lr * (mhat / (vhat.sqrt() + eps_));
        if (q.decay && weight_decay_ > 0.0) q.value.array() -= lr * weight_decay_ * q.value.array();
    }
}

}  // namespace storm::nn
