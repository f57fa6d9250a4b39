#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace storm::data {

using Matrix = Eigen::MatrixXd;

struct Bar {
    std::string date;  // ISO-8601 calendar day
    std::string ticker;
    double open = 0, high = 0, low = 0, close = 0;
    double volume = 0;
};

// Aligned (date x stock x feature) panel. All tickers share one inner-joined
// calendar; rows[t] is the N x D feature matrix of day t.
struct FeaturePanel {
    std::vector<std::string> dates;    // strictly increasing
    std::vector<std::string> tickers;  // ordered
    std::vector<Matrix> rows;          // per day, N x D
    std::vector<std::string> feature_names;
    int d1 = 0;  // raw price features
    int d2 = 0;  // indicator features

    int days() const { return static_cast<int>(dates.size()); }
    int stocks() const { return static_cast<int>(tickers.size()); }
    int features() const { return static_cast<int>(feature_names.size()); }
    int feature_index(const std::string& name) const;  // -1 if absent
    int ticker_index(const std::string& name) const;   // -1 if absent
};

struct WindowSample {
    Matrix window;                // (W*N) x D, row t*N + n
    Eigen::VectorXd label;        // next-day close-to-close return per stock
    std::string anchor_date;      // last date inside the window
    int anchor_row = 0;           // panel row index of the anchor
};

struct NormStats {
    Eigen::VectorXd mean;  // per feature
    Eigen::VectorXd std;   // per feature; 0 marks a zero-variance feature
};

struct DatasetSplit {
    std::vector<WindowSample> train;
    std::vector<WindowSample> test;
    std::string boundary_date;
    int window = 0;
    std::optional<NormStats> stats;  // set once normalized
};

// CSV with header date,ticker,open,high,low,close,volume. Malformed rows and
// duplicate (date,ticker) pairs are rejected with the offending line number.
// Dates are inner-joined: only days on which every ticker has a bar survive.
FeaturePanel load_bars(const std::string& path, int* dropped_dates = nullptr);

// Names from the built-in indicator set, e.g. "ret1", "mean20", "vz20".
// Unknown names raise ConfigError. Warm-up rows are dropped from the front.
FeaturePanel compute_indicators(const FeaturePanel& panel,
                                const std::vector<std::string>& spec);

std::vector<std::string> builtin_indicators();
std::vector<std::string> default_indicators();

// Extension hook: register a custom single-output indicator. The callback
// receives the raw panel and fills one value per (day, stock); it reports its
// warm-up length (leading rows to drop).
using IndicatorFn = void (*)(const FeaturePanel&, Matrix& out /* T x N */);
void register_indicator(const std::string& name, int warmup, IndicatorFn fn);

std::vector<WindowSample> make_windows(const FeaturePanel& panel, int window);

DatasetSplit split_by_date(const FeaturePanel& panel, int window,
                           const std::string& boundary_date);
DatasetSplit split_by_fraction(const FeaturePanel& panel, int window,
                               double train_fraction);

// Z-scores features with statistics computed over train windows only; test
// windows reuse the train statistics. Zero-variance features map to 0.
DatasetSplit normalize_features(DatasetSplit split);
void apply_normalization(std::vector<WindowSample>& samples, const NormStats& stats);

enum class Regime { kTrend, kMeanRevert, kMixed };
Regime regime_from_string(const std::string& s);
std::string to_string(Regime r);

// Geometric price paths with per-stock drift/volatility plus a shared market
// component; OHLC invariants hold, bit-deterministic for a fixed seed.
FeaturePanel generate_synthetic(std::uint64_t seed, int n_stocks, int n_days,
                                Regime regime);

// Panel cache: raw column-major value file + JSON sidecar manifest.
void save_panel(const FeaturePanel& panel, const std::string& dir);
FeaturePanel load_panel(const std::string& dir);

void write_bars_csv(const FeaturePanel& raw_panel, const std::string& path);

}  // namespace storm::data
