#include "storm/seq/patching.hpp"

#include "storm/errors.hpp"

namespace storm::seq {

namespace {

// Linear index into the (W*N) x D window, row-major over (row, col).
inline int window_linear(int t, int i, int f, int n, int d) {
    return (t * n + i) * d + f;
}

}  // namespace

int ts_token_of(int t, int i, int w, int n, int days_per_patch) {
    (void)n;
    int blocks = w / days_per_patch;
    return i * blocks + t / days_per_patch;
}

int cs_token_of(int t) { return t; }

std::vector<int> ts_patch_map(int w, int n, int d, int p) {
    if (p < 1 || w % p != 0)
        throw ConfigError("days_per_patch " + std::to_string(p) + " must divide window " +
                          std::to_string(w));
    int blocks = w / p;
    int m = blocks * n;
    int len = p * d;
    std::vector<int> map(static_cast<std::size_t>(m) * len);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < blocks; ++j) {
            int token = i * blocks + j;
            for (int dt = 0; dt < p; ++dt) {
                for (int f = 0; f < d; ++f) {
                    int within = dt * d + f;
                    map[static_cast<std::size_t>(token) * len + within] =
                        window_linear(j * p + dt, i, f, n, d);
                }
            }
        }
    }
    return map;
}

std::vector<int> ts_unpatch_map(int w, int n, int d, int p) {
    auto fwd = ts_patch_map(w, n, d, p);
    std::vector<int> inv(fwd.size());
    for (std::size_t dst = 0; dst < fwd.size(); ++dst)
        inv[static_cast<std::size_t>(fwd[dst])] = static_cast<int>(dst);
    return inv;
}

std::vector<int> cs_patch_map(int w, int n, int d) {
    int len = n * d;
    std::vector<int> map(static_cast<std::size_t>(w) * len);
    for (int t = 0; t < w; ++t) {
        for (int i = 0; i < n; ++i) {
            for (int f = 0; f < d; ++f) {
                map[static_cast<std::size_t>(t) * len + i * d + f] =
                    window_linear(t, i, f, n, d);
            }
        }
    }
    return map;
}

std::vector<int> cs_unpatch_map(int w, int n, int d) {
    auto fwd = cs_patch_map(w, n, d);
    std::vector<int> inv(fwd.size());
    for (std::size_t dst = 0; dst < fwd.size(); ++dst)
        inv[static_cast<std::size_t>(fwd[dst])] = static_cast<int>(dst);
    return inv;
}

namespace {

Matrix apply_map(const Matrix& src, int rows, int cols, const std::vector<int>& map) {
    Matrix out(rows, cols);
    int in_cols = static_cast<int>(src.cols());
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            int lin = map[static_cast<std::size_t>(r) * cols + c];
            out(r, c) = src(lin / in_cols, lin % in_cols);
        }
    }
    return out;
}

}  // namespace

PatchGrid patch_time_series(const Matrix& window, int w, int n, int d, int p) {
    if (window.rows() != static_cast<Eigen::Index>(w) * n || window.cols() != d)
        throw InternalError("patch_time_series: window shape mismatch");
    PatchGrid grid;
    grid.axis = PatchAxis::kTs;
    grid.patch_shape = {p, 1, d};
    grid.origin_w = w;
    grid.origin_n = n;
    grid.origin_d = d;
    auto map = ts_patch_map(w, n, d, p);
    grid.tokens = apply_map(window, (w / p) * n, p * d, map);
    return grid;
}

PatchGrid patch_cross_section(const Matrix& window, int w, int n, int d) {
    if (window.rows() != static_cast<Eigen::Index>(w) * n || window.cols() != d)
        throw InternalError("patch_cross_section: window shape mismatch");
    PatchGrid grid;
    grid.axis = PatchAxis::kCs;
    grid.patch_shape = {1, n, d};
    grid.origin_w = w;
    grid.origin_n = n;
    grid.origin_d = d;
    auto map = cs_patch_map(w, n, d);
    grid.tokens = apply_map(window, w, n * d, map);
    return grid;
}

Matrix unpatch(const PatchGrid& grid) {
    int w = grid.origin_w, n = grid.origin_n, d = grid.origin_d;
    std::vector<int> map = grid.axis == PatchAxis::kTs
                               ? ts_unpatch_map(w, n, d, grid.patch_shape.days)
                               : cs_unpatch_map(w, n, d);
    return apply_map(grid.tokens, w * n, d, map);
}

}  // namespace storm::seq
