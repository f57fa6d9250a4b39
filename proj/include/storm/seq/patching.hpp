#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace storm::seq {

using Matrix = Eigen::MatrixXd;

enum class PatchAxis { kTs, kCs };

struct PatchShape {
    int days = 0;
    int stocks = 0;
    int features = 0;
    int flat() const { return days * stocks * features; }
};

// Lossless tiling of a (W*N) x D window into M flattened patches of length P.
// TS axis: patch (stock i, block j) holds days [j*p, (j+1)*p) of stock i,
// stock-major order (all blocks of stock 0 first). CS axis: patch t holds all
// N stocks of day t. Token layout within a patch is day-major then feature.
struct PatchGrid {
    Matrix tokens;  // M x P
    PatchAxis axis = PatchAxis::kTs;
    PatchShape patch_shape;
    int origin_w = 0, origin_n = 0, origin_d = 0;

    int count() const { return static_cast<int>(tokens.rows()); }
    int patch_len() const { return static_cast<int>(tokens.cols()); }
};

PatchGrid patch_time_series(const Matrix& window, int w, int n, int d, int days_per_patch);
PatchGrid patch_cross_section(const Matrix& window, int w, int n, int d);

// Inverse tilings, window layout (W*N) x D with row t*N + i.
Matrix unpatch(const PatchGrid& grid);

// Cell index maps used to run the same rearrangements on tape nodes.
// Maps are destination-linear (row-major over the destination shape) and give
// the source linear index (row-major over the source shape).
std::vector<int> ts_patch_map(int w, int n, int d, int days_per_patch);    // window -> tokens
std::vector<int> ts_unpatch_map(int w, int n, int d, int days_per_patch);  // tokens -> window
std::vector<int> cs_patch_map(int w, int n, int d);
std::vector<int> cs_unpatch_map(int w, int n, int d);

// Token index of a window element, per the documented ordering.
int ts_token_of(int t, int i, int w, int n, int days_per_patch);
int cs_token_of(int t);

}  // namespace storm::seq
