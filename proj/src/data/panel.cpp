#include "storm/data/panel.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "storm/errors.hpp"
#include "storm/nn/params.hpp"

namespace storm::data {

namespace fs = std::filesystem;
using nlohmann::json;

int FeaturePanel::feature_index(const std::string& name) const {
    for (std::size_t i = 0; i < feature_names.size(); ++i)
        if (feature_names[i] == name) return static_cast<int>(i);
    return -1;
}

int FeaturePanel::ticker_index(const std::string& name) const {
    for (std::size_t i = 0; i < tickers.size(); ++i)
        if (tickers[i] == name) return static_cast<int>(i);
    return -1;
}

// ---- CSV ingestion ---------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

double parse_number(const std::string& s, int line_no, const char* col) {
    try {
        std::size_t pos = 0;
        double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ParseError("line " + std::to_string(line_no) + ": bad " + col +
                         " value '" + s + "'");
    }
}

void validate_bar(const Bar& b, int line_no) {
    auto fail = [&](const std::string& why) {
        throw ParseError("line " + std::to_string(line_no) + ": " + why + " (" +
                         b.date + "," + b.ticker + ")");
    };
    if (b.open <= 0 || b.high <= 0 || b.low <= 0 || b.close <= 0)
        fail("non-positive price");
    if (b.volume < 0) fail("negative volume");
    if (b.low > std::min(b.open, b.close)) fail("low above min(open, close)");
    if (b.high < std::max(b.open, b.close)) fail("high below max(open, close)");
}

const std::vector<std::string> kRawFeatures = {"open", "high", "low", "close", "volume"};

}  // namespace

FeaturePanel load_bars(const std::string& path, int* dropped_dates) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open bar file: " + path);

    std::string header;
    if (!std::getline(f, header)) throw ParseError("empty file: " + path);
    if (!header.empty() && header.back() == '\r') header.pop_back();
    if (header != "date,ticker,open,high,low,close,volume")
        throw ParseError("unexpected header: '" + header + "'");

    std::map<std::string, std::map<std::string, Bar>> by_ticker;  // ticker -> date -> bar
    std::set<std::pair<std::string, std::string>> seen;
    std::string line;
    int line_no = 1;
    while (std::getline(f, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto cells = split_csv_line(line);
        if (cells.size() != 7)
            throw ParseError("line " + std::to_string(line_no) + ": expected 7 columns, got " +
                             std::to_string(cells.size()));
        Bar b;
        b.date = cells[0];
        b.ticker = cells[1];
        if (b.date.empty() || b.ticker.empty())
            throw ParseError("line " + std::to_string(line_no) + ": empty date or ticker");
        b.open = parse_number(cells[2], line_no, "open");
        b.high = parse_number(cells[3], line_no, "high");
        b.low = parse_number(cells[4], line_no, "low");
        b.close = parse_number(cells[5], line_no, "close");
        b.volume = parse_number(cells[6], line_no, "volume");
        validate_bar(b, line_no);
        if (!seen.insert({b.date, b.ticker}).second)
            throw ParseError("line " + std::to_string(line_no) + ": duplicate (" + b.date +
                             "," + b.ticker + ")");
        by_ticker[b.ticker][b.date] = b;
    }
    if (by_ticker.empty()) throw ParseError("no data rows in " + path);

    // Inner join on dates: keep only days present for every ticker.
    std::map<std::string, int> date_counts;
    for (auto& [tk, bars] : by_ticker)
        for (auto& [d, b] : bars) date_counts[d]++;
    std::vector<std::string> dates;
    int n = static_cast<int>(by_ticker.size());
    int dropped = 0;
    for (auto& [d, c] : date_counts) {
        if (c == n)
            dates.push_back(d);
        else
            ++dropped;
    }
    if (dropped_dates != nullptr) *dropped_dates = dropped;
    if (dates.empty()) throw ParseError("no dates common to all tickers in " + path);

    FeaturePanel panel;
    panel.dates = dates;
    for (auto& [tk, bars] : by_ticker) panel.tickers.push_back(tk);
    panel.feature_names = kRawFeatures;
    panel.d1 = static_cast<int>(kRawFeatures.size());
    panel.d2 = 0;
    panel.rows.reserve(dates.size());
    for (const auto& d : dates) {
        Matrix row(panel.stocks(), panel.features());
        for (int i = 0; i < panel.stocks(); ++i) {
            const Bar& b = by_ticker[panel.tickers[i]].at(d);
            row(i, 0) = b.open;
            row(i, 1) = b.high;
            row(i, 2) = b.low;
            row(i, 3) = b.close;
            row(i, 4) = b.volume;
        }
        panel.rows.push_back(std::move(row));
    }
    return panel;
}

// ---- indicators --------------------------------------------------------------

namespace {

struct IndicatorDef {
    std::string name;
    int warmup;
    // fills out(t, i) for t >= warmup
    std::function<void(const FeaturePanel&, Matrix&)> fn;
};

Matrix feature_series(const FeaturePanel& p, int feat) {
    Matrix m(p.days(), p.stocks());
    for (int t = 0; t < p.days(); ++t) m.row(t) = p.rows[t].col(feat).transpose();
    return m;
}

IndicatorDef make_return(int horizon) {
    return {"ret" + std::to_string(horizon), horizon,
            [horizon](const FeaturePanel& p, Matrix& out) {
                Matrix close = feature_series(p, p.feature_index("close"));
                for (int t = horizon; t < p.days(); ++t)
                    out.row(t) = (close.row(t).array() / close.row(t - horizon).array()) - 1.0;
            }};
}

enum class Roll { kMean, kStd, kMax, kMin };

IndicatorDef make_rolling(Roll kind, int win) {
    const char* prefix = kind == Roll::kMean  ? "mean"
                         : kind == Roll::kStd ? "std"
                         : kind == Roll::kMax ? "max"
                                              : "min";
    return {std::string(prefix) + std::to_string(win), win - 1,
            [kind, win](const FeaturePanel& p, Matrix& out) {
                Matrix close = feature_series(p, p.feature_index("close"));
                for (int t = win - 1; t < p.days(); ++t) {
                    auto block = close.middleRows(t - win + 1, win);
                    switch (kind) {
                        case Roll::kMean: out.row(t) = block.colwise().mean(); break;
                        case Roll::kStd: {
                            Eigen::RowVectorXd mu = block.colwise().mean();
                            Eigen::RowVectorXd var =
                                (block.rowwise() - mu).array().square().colwise().mean();
                            out.row(t) = var.array().sqrt();
                            break;
                        }
                        case Roll::kMax: out.row(t) = block.colwise().maxCoeff(); break;
                        case Roll::kMin: out.row(t) = block.colwise().minCoeff(); break;
                    }
                }
            }};
}

std::vector<IndicatorDef> builtin_defs() {
    std::vector<IndicatorDef> defs;
    for (int h : {1, 5, 10, 20}) defs.push_back(make_return(h));
    for (int w : {5, 10, 20, 60}) {
        defs.push_back(make_rolling(Roll::kMean, w));
        defs.push_back(make_rolling(Roll::kStd, w));
        defs.push_back(make_rolling(Roll::kMax, w));
        defs.push_back(make_rolling(Roll::kMin, w));
    }
    defs.push_back({"co_ratio", 0, [](const FeaturePanel& p, Matrix& out) {
                        int c = p.feature_index("close"), o = p.feature_index("open");
                        for (int t = 0; t < p.days(); ++t)
                            out.row(t) = (p.rows[t].col(c).array() / p.rows[t].col(o).array())
                                             .transpose();
                    }});
    defs.push_back({"hl_range", 0, [](const FeaturePanel& p, Matrix& out) {
                        int h = p.feature_index("high"), l = p.feature_index("low"),
                            c = p.feature_index("close");
                        for (int t = 0; t < p.days(); ++t)
                            out.row(t) = ((p.rows[t].col(h) - p.rows[t].col(l)).array() /
                                          p.rows[t].col(c).array())
                                             .transpose();
                    }});
    // volume z-score over a trailing 20-day window
    defs.push_back({"vz20", 19, [](const FeaturePanel& p, Matrix& out) {
                        Matrix vol = feature_series(p, p.feature_index("volume"));
                        for (int t = 19; t < p.days(); ++t) {
                            auto block = vol.middleRows(t - 19, 20);
                            Eigen::RowVectorXd mu = block.colwise().mean();
                            Eigen::RowVectorXd sd =
                                (block.rowwise() - mu).array().square().colwise().mean().sqrt();
                            for (int i = 0; i < p.stocks(); ++i)
                                out(t, i) = sd(i) > 0 ? (vol(t, i) - mu(i)) / sd(i) : 0.0;
                        }
                    }});
    return defs;
}

std::vector<IndicatorDef>& custom_defs() {
    static std::vector<IndicatorDef> defs;
    return defs;
}

const IndicatorDef* find_def(const std::vector<IndicatorDef>& defs, const std::string& name) {
    for (const auto& d : defs)
        if (d.name == name) return &d;
    return nullptr;
}

}  // namespace

std::vector<std::string> builtin_indicators() {
    std::vector<std::string> names;
    for (const auto& d : builtin_defs()) names.push_back(d.name);
    for (const auto& d : custom_defs()) names.push_back(d.name);
    return names;
}

std::vector<std::string> default_indicators() {
    return {"ret1", "ret5", "ret20", "mean5", "mean20", "std20", "co_ratio", "hl_range", "vz20"};
}

void register_indicator(const std::string& name, int warmup, IndicatorFn fn) {
    if (find_def(builtin_defs(), name) != nullptr || find_def(custom_defs(), name) != nullptr)
        throw ConfigError("indicator already registered: " + name);
    custom_defs().push_back({name, warmup, fn});
}

FeaturePanel compute_indicators(const FeaturePanel& panel,
                                const std::vector<std::string>& spec) {
    if (panel.d1 < 5) throw ConfigError("panel lacks raw OHLCV features");
    auto builtins = builtin_defs();
    std::vector<const IndicatorDef*> chosen;
    for (const auto& name : spec) {
        const IndicatorDef* def = find_def(builtins, name);
        if (def == nullptr) def = find_def(custom_defs(), name);
        if (def == nullptr) throw ConfigError("unknown indicator: " + name);
        chosen.push_back(def);
    }

    int warmup = 0;
    for (auto* d : chosen) warmup = std::max(warmup, d->warmup);
    if (panel.days() <= warmup)
        throw ConfigError("panel too short for indicator warm-up of " +
                          std::to_string(warmup) + " rows");

    std::vector<Matrix> cols;
    for (auto* d : chosen) {
        Matrix out = Matrix::Zero(panel.days(), panel.stocks());
        d->fn(panel, out);
        cols.push_back(std::move(out));
    }

    FeaturePanel out;
    out.tickers = panel.tickers;
    out.d1 = panel.d1;
    out.d2 = panel.d2 + static_cast<int>(chosen.size());
    out.feature_names = panel.feature_names;
    for (auto* d : chosen) out.feature_names.push_back(d->name);
    out.dates.assign(panel.dates.begin() + warmup, panel.dates.end());
    out.rows.reserve(out.dates.size());
    for (int t = warmup; t < panel.days(); ++t) {
        Matrix row(panel.stocks(), out.features());
        row.leftCols(panel.features()) = panel.rows[t];
        for (std::size_t j = 0; j < cols.size(); ++j)
            row.col(panel.features() + static_cast<Eigen::Index>(j)) =
                cols[j].row(t).transpose();
        out.rows.push_back(std::move(row));
    }
    return out;
}

// ---- windowing and splits ----------------------------------------------------

std::vector<WindowSample> make_windows(const FeaturePanel& panel, int window) {
    if (window < 1) throw ConfigError("window must be >= 1");
    if (panel.days() < window + 1)
        throw ConfigError("need at least W+1 = " + std::to_string(window + 1) +
                          " panel rows, have " + std::to_string(panel.days()));
    int close = panel.feature_index("close");
    if (close < 0) throw ConfigError("panel lacks a close feature");

    int n = panel.stocks(), d = panel.features();
    std::vector<WindowSample> samples;
    samples.reserve(panel.days() - window);
    for (int j = 0; j + window < panel.days(); ++j) {
        WindowSample s;
        s.window.resize(window * n, d);
        for (int t = 0; t < window; ++t)
            s.window.middleRows(static_cast<Eigen::Index>(t) * n, n) = panel.rows[j + t];
        s.label.resize(n);
        const Matrix& last = panel.rows[j + window - 1];
        const Matrix& next = panel.rows[j + window];
        for (int i = 0; i < n; ++i)
            s.label(i) = (next(i, close) - last(i, close)) / last(i, close);
        s.anchor_date = panel.dates[j + window - 1];
        s.anchor_row = j + window - 1;
        samples.push_back(std::move(s));
    }
    return samples;
}

DatasetSplit split_by_date(const FeaturePanel& panel, int window,
                           const std::string& boundary_date) {
    auto samples = make_windows(panel, window);
    // boundary row: first panel row dated on/after the boundary
    int boundary_row = panel.days();
    for (int t = 0; t < panel.days(); ++t) {
        if (panel.dates[t] >= boundary_date) {
            boundary_row = t;
            break;
        }
    }
    DatasetSplit split;
    split.boundary_date = boundary_date;
    split.window = window;
    for (auto& s : samples) {
        int label_row = s.anchor_row + 1;
        if (s.anchor_row < boundary_row && label_row < boundary_row)
            split.train.push_back(std::move(s));
        else if (s.anchor_row >= boundary_row)
            split.test.push_back(std::move(s));
        // a window whose label would straddle the boundary is dropped
    }
    return split;
}

DatasetSplit split_by_fraction(const FeaturePanel& panel, int window,
                               double train_fraction) {
    if (train_fraction <= 0.0 || train_fraction >= 1.0)
        throw ConfigError("train_fraction must be in (0,1)");
    int boundary_row = static_cast<int>(panel.days() * train_fraction);
    boundary_row = std::clamp(boundary_row, 1, panel.days() - 1);
    return split_by_date(panel, window, panel.dates[boundary_row]);
}

void apply_normalization(std::vector<WindowSample>& samples, const NormStats& stats) {
    for (auto& s : samples) {
        for (Eigen::Index d = 0; d < s.window.cols(); ++d) {
            if (stats.std(d) > 0.0)
                s.window.col(d) = (s.window.col(d).array() - stats.mean(d)) / stats.std(d);
            else
                s.window.col(d).setZero();
        }
    }
}

DatasetSplit normalize_features(DatasetSplit split) {
    if (split.train.empty()) throw ConfigError("cannot normalize an empty train split");
    Eigen::Index d = split.train.front().window.cols();
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(d);
    Eigen::VectorXd sumsq = Eigen::VectorXd::Zero(d);
    double count = 0;
    for (const auto& s : split.train) {
        sum += s.window.colwise().sum().transpose();
        sumsq += s.window.array().square().colwise().sum().transpose().matrix();
        count += static_cast<double>(s.window.rows());
    }
    NormStats stats;
    stats.mean = sum / count;
    Eigen::VectorXd var = sumsq / count - stats.mean.array().square().matrix();
    stats.std = var.cwiseMax(0.0).cwiseSqrt();
    for (Eigen::Index i = 0; i < d; ++i)
        if (stats.std(i) < 1e-12) stats.std(i) = 0.0;

    apply_normalization(split.train, stats);
    apply_normalization(split.test, stats);
    split.stats = stats;
    return split;
}

// ---- synthetic panels ----------------------------------------------------------

Regime regime_from_string(const std::string& s) {
    if (s == "trend") return Regime::kTrend;
    if (s == "mean_revert") return Regime::kMeanRevert;
    if (s == "mixed") return Regime::kMixed;
    throw ConfigError("unknown regime: " + s + " (expected trend|mean_revert|mixed)");
}

std::string to_string(Regime r) {
    switch (r) {
        case Regime::kTrend: return "trend";
        case Regime::kMeanRevert: return "mean_revert";
        case Regime::kMixed: return "mixed";
    }
    return "?";
}

namespace {

// Synthetic calendar: sequential days starting 2010-01-01, 28-day months.
std::string synth_date(int t) {
    int year = 2010 + t / 336;
    int rem = t % 336;
    int month = rem / 28 + 1;
    int day = rem % 28 + 1;
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", year, month, day);
    return buf;
}

}  // namespace

FeaturePanel generate_synthetic(std::uint64_t seed, int n_stocks, int n_days,
                                Regime regime) {
    if (n_stocks < 1 || n_days < 2)
        throw ConfigError("synthetic panel needs N >= 1 and T >= 2");
    nn::Rng rng(seed);

    std::vector<double> drift(n_stocks), vol(n_stocks), beta(n_stocks), mr(n_stocks);
    for (int i = 0; i < n_stocks; ++i) {
        bool trending = regime == Regime::kTrend ||
                        (regime == Regime::kMixed && i % 2 == 0);
        drift[i] = trending ? rng.uniform(0.0006, 0.0016) : 0.0;
        vol[i] = rng.uniform(0.006, 0.014);
        beta[i] = rng.uniform(0.5, 1.5);
        mr[i] = regime == Regime::kTrend ? 0.0 : rng.uniform(0.02, 0.08);
    }

    std::vector<double> close(n_stocks), anchor(n_stocks);
    for (int i = 0; i < n_stocks; ++i) {
        close[i] = rng.uniform(20.0, 200.0);
        anchor[i] = close[i];
    }

    FeaturePanel panel;
    panel.feature_names = kRawFeatures;
    panel.d1 = 5;
    panel.d2 = 0;
    for (int i = 0; i < n_stocks; ++i) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "S%03d", i);
        panel.tickers.push_back(buf);
    }

    for (int t = 0; t < n_days; ++t) {
        panel.dates.push_back(synth_date(t));
        double market = rng.normal(0.0, 0.006);
        Matrix row(n_stocks, 5);
        for (int i = 0; i < n_stocks; ++i) {
            double prev = close[i];
            double pull = mr[i] > 0 ? mr[i] * std::log(anchor[i] / prev) : 0.0;
            double r = drift[i] + pull + beta[i] * market + vol[i] * rng.normal();
            r = std::max(r, -0.5);  // prices stay positive
            double c = prev * (1.0 + r);
            double o = prev * (1.0 + 0.2 * vol[i] * rng.normal());
            double hi = std::max(o, c) * (1.0 + std::abs(0.3 * vol[i] * rng.normal()));
            double lo = std::min(o, c) * (1.0 - std::abs(0.3 * vol[i] * rng.normal()));
            double v = 1e6 * std::exp(0.3 * rng.normal());
            row(i, 0) = o;
            row(i, 1) = hi;
            row(i, 2) = lo;
            row(i, 3) = c;
            row(i, 4) = v;
            close[i] = c;
        }
        panel.rows.push_back(std::move(row));
    }
    return panel;
}

// ---- panel cache ----------------------------------------------------------------

namespace {
constexpr char kPanelMagic[8] = {'S', 'T', 'R', 'M', 'P', 'N', 'L', '1'};
}

void save_panel(const FeaturePanel& panel, const std::string& dir) {
    fs::create_directories(dir);
    std::string bin_path = (fs::path(dir) / "panel.bin").string();
    std::ofstream f(bin_path, std::ios::binary);
    if (!f) throw IoError("cannot write " + bin_path);
    f.write(kPanelMagic, 8);
    std::int64_t t = panel.days(), n = panel.stocks(), d = panel.features();
    f.write(reinterpret_cast<const char*>(&t), sizeof(t));
    f.write(reinterpret_cast<const char*>(&n), sizeof(n));
    f.write(reinterpret_cast<const char*>(&d), sizeof(d));
    // columnar: feature-major, then day, then stock
    for (int fi = 0; fi < d; ++fi) {
        for (int ti = 0; ti < t; ++ti) {
            Eigen::VectorXd col = panel.rows[ti].col(fi);
            f.write(reinterpret_cast<const char*>(col.data()),
                    static_cast<std::streamsize>(sizeof(double) * col.size()));
        }
    }
    if (!f) throw IoError("short write on " + bin_path);

    // informational per-feature stats over the cached panel; training
    // recomputes its own statistics from the train split only
    json stats = json::object();
    for (int fi = 0; fi < d; ++fi) {
        double mean = 0, count = 0;
        for (const auto& row : panel.rows) {
            mean += row.col(fi).sum();
            count += static_cast<double>(row.rows());
        }
        mean /= count;
        double var = 0;
        for (const auto& row : panel.rows)
            var += (row.col(fi).array() - mean).square().sum();
        var /= count;
        stats[panel.feature_names[fi]] = {{"mean", mean}, {"std", std::sqrt(var)}};
    }

    json manifest = {
        {"format", "storm-panel-v1"},
        {"tickers", panel.tickers},
        {"dates", panel.dates},
        {"feature_names", panel.feature_names},
        {"d1", panel.d1},
        {"d2", panel.d2},
        {"date_range", {panel.dates.front(), panel.dates.back()}},
        {"normalization_stats", {{"scope", "whole-panel"}, {"per_feature", stats}}},
    };
    std::ofstream mf((fs::path(dir) / "manifest.json").string());
    mf << manifest.dump(2) << "\n";
}

FeaturePanel load_panel(const std::string& dir) {
    std::ifstream mf((fs::path(dir) / "manifest.json").string());
    if (!mf) throw IoError("cannot open panel manifest in " + dir);
    json manifest = json::parse(mf, nullptr, true, true);

    FeaturePanel panel;
    panel.tickers = manifest.at("tickers").get<std::vector<std::string>>();
    panel.dates = manifest.at("dates").get<std::vector<std::string>>();
    panel.feature_names = manifest.at("feature_names").get<std::vector<std::string>>();
    panel.d1 = manifest.at("d1").get<int>();
    panel.d2 = manifest.at("d2").get<int>();

    std::string bin_path = (fs::path(dir) / "panel.bin").string();
    std::ifstream f(bin_path, std::ios::binary);
    if (!f) throw IoError("cannot open " + bin_path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kPanelMagic, 8) != 0)
        throw ParseError("not a panel file: " + bin_path);
    std::int64_t t = 0, n = 0, d = 0;
    f.read(reinterpret_cast<char*>(&t), sizeof(t));
    f.read(reinterpret_cast<char*>(&n), sizeof(n));
    f.read(reinterpret_cast<char*>(&d), sizeof(d));
    if (t != panel.days() || n != panel.stocks() || d != panel.features())
        throw ParseError("panel.bin shape disagrees with manifest in " + dir);
    panel.rows.assign(static_cast<std::size_t>(t), Matrix(n, d));
    for (int fi = 0; fi < d; ++fi) {
        for (int ti = 0; ti < t; ++ti) {
            Eigen::VectorXd col(n);
            f.read(reinterpret_cast<char*>(col.data()),
                   static_cast<std::streamsize>(sizeof(double) * n));
            panel.rows[ti].col(fi) = col;
        }
    }
    if (!f) throw ParseError("truncated panel file: " + bin_path);
    return panel;
}

void write_bars_csv(const FeaturePanel& panel, const std::string& path) {
    if (panel.d1 < 5) throw ConfigError("panel lacks raw OHLCV features");
    std::ofstream f(path);
    if (!f) throw IoError("cannot write " + path);
    f << "date,ticker,open,high,low,close,volume\n";
    f.precision(17);
    for (int t = 0; t < panel.days(); ++t) {
        for (int i = 0; i < panel.stocks(); ++i) {
            const Matrix& r = panel.rows[t];
            f << panel.dates[t] << ',' << panel.tickers[i] << ',' << r(i, 0) << ','
              << r(i, 1) << ',' << r(i, 2) << ',' << r(i, 3) << ',' << r(i, 4) << "\n";
        }
    }
}

}  // namespace storm::data
