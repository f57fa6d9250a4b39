#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "storm/data/panel.hpp"
#include "storm/errors.hpp"

using namespace storm::data;

namespace {

std::string write_tmp(const std::string& name, const std::string& content) {
    std::string path = "/tmp/storm_md_" + name;
    std::ofstream f(path);
    f << content;
    return path;
}

const char* kHeader = "date,ticker,open,high,low,close,volume\n";

}  // namespace

TEST_CASE("load_bars builds a T=3, N=2, D=5 panel from a clean file") {
    std::string csv = kHeader;
    for (const char* d : {"2020-01-01", "2020-01-02", "2020-01-03"}) {
        csv += std::string(d) + ",AAA,10,11,9,10.5,1000\n";
        csv += std::string(d) + ",BBB,20,22,19,21,2000\n";
    }
    auto panel = load_bars(write_tmp("clean.csv", csv));
    CHECK(panel.days() == 3);
    CHECK(panel.stocks() == 2);
    CHECK(panel.features() == 5);
    CHECK(panel.d1 == 5);
    CHECK(panel.d2 == 0);
    CHECK(panel.tickers == std::vector<std::string>{"AAA", "BBB"});
    CHECK(panel.rows[1](1, 3) == 21.0);  // close of BBB on day 2
}

TEST_CASE("inner join drops dates missing for any ticker") {
    std::string csv = kHeader;
    csv += "2020-01-01,AAA,10,11,9,10,100\n";
    csv += "2020-01-02,AAA,10,11,9,10,100\n";
    csv += "2020-01-03,AAA,10,11,9,10,100\n";
    csv += "2020-01-01,BBB,20,22,19,21,200\n";
    csv += "2020-01-03,BBB,20,22,19,21,200\n";
    int dropped = 0;
    auto panel = load_bars(write_tmp("join.csv", csv), &dropped);
    CHECK(panel.days() == 2);
    CHECK(dropped == 1);
    CHECK(panel.dates == std::vector<std::string>{"2020-01-01", "2020-01-03"});
}

TEST_CASE("malformed rows are rejected with their line number") {
    std::string csv = kHeader;
    csv += "2020-01-01,AAA,10,11,9,10,100\n";
    csv += "2020-01-02,AAA,10,9,11,10,100\n";  // low > high
    CHECK_THROWS_WITH_AS(load_bars(write_tmp("badrow.csv", csv)),
                         doctest::Contains("line 3"), storm::ParseError);

    std::string dup = kHeader;
    dup += "2020-01-01,AAA,10,11,9,10,100\n";
    dup += "2020-01-01,AAA,10,11,9,10,100\n";
    CHECK_THROWS_AS(load_bars(write_tmp("dup.csv", dup)), storm::ParseError);

    std::string badnum = kHeader;
    badnum += "2020-01-01,AAA,10,11,x,10,100\n";
    CHECK_THROWS_WITH_AS(load_bars(write_tmp("badnum.csv", badnum)),
                         doctest::Contains("line 2"), storm::ParseError);
}

TEST_CASE("indicators: constant close and definitional 1-day return") {
    FeaturePanel p;
    p.feature_names = {"open", "high", "low", "close", "volume"};
    p.d1 = 5;
    p.tickers = {"AAA"};
    std::vector<double> closes = {100, 110, 121, 133.1, 146.41, 161.051};
    for (std::size_t t = 0; t < closes.size(); ++t) {
        p.dates.push_back("2020-01-0" + std::to_string(t + 1));
        Matrix row(1, 5);
        row << closes[t], closes[t], closes[t], closes[t], 1000.0;
        p.rows.push_back(row);
    }

    auto with_ret = compute_indicators(p, {"ret1"});
    int ri = with_ret.feature_index("ret1");
    CHECK(with_ret.days() == 5);  // one warm-up row dropped
    CHECK(with_ret.rows[0](0, ri) == doctest::Approx(0.10).epsilon(1e-12));

    // constant close: 5-day rolling mean equals the constant
    FeaturePanel flat = p;
    for (auto& row : flat.rows) {
        row(0, 0) = row(0, 1) = row(0, 2) = row(0, 3) = 42.0;
    }
    auto with_mean = compute_indicators(flat, {"mean5"});
    int mi = with_mean.feature_index("mean5");
    for (const auto& row : with_mean.rows) CHECK(row(0, mi) == doctest::Approx(42.0));

    CHECK_THROWS_AS(compute_indicators(p, {"nope"}), storm::ConfigError);
}

TEST_CASE("20-day rolling std matches a two-pass oracle on a sinusoid") {
    FeaturePanel p;
    p.feature_names = {"open", "high", "low", "close", "volume"};
    p.d1 = 5;
    p.tickers = {"AAA"};
    int t_total = 80;
    std::vector<double> closes(t_total);
    for (int t = 0; t < t_total; ++t) {
        closes[t] = 100.0 + 10.0 * std::sin(0.37 * t);
        p.dates.push_back("d" + std::to_string(1000 + t));
        Matrix row(1, 5);
        row << closes[t], closes[t] + 1, closes[t] - 1, closes[t], 1.0;
        p.rows.push_back(row);
    }
    auto out = compute_indicators(p, {"std20"});
    int si = out.feature_index("std20");
    int warm = t_total - out.days();
    for (int t = 0; t < out.days(); ++t) {
        int end = warm + t;  // index into closes of this output row
        double mean = 0;
        for (int k = end - 19; k <= end; ++k) mean += closes[k];
        mean /= 20.0;
        double var = 0;
        for (int k = end - 19; k <= end; ++k) var += (closes[k] - mean) * (closes[k] - mean);
        var /= 20.0;
        CHECK(std::abs(out.rows[t](0, si) - std::sqrt(var)) < 1e-10);
    }
}

TEST_CASE("make_windows counts and labels") {
    auto panel = generate_synthetic(11, 3, 100, Regime::kMixed);
    CHECK(make_windows(panel, 64).size() == 36);

    auto p65 = generate_synthetic(11, 2, 65, Regime::kMixed);
    CHECK(make_windows(p65, 64).size() == 1);

    CHECK_THROWS_AS(make_windows(p65, 65), storm::ConfigError);

    // labels equal hand-computed close-to-close returns of rows 63 -> 64
    auto windows = make_windows(p65, 64);
    int close = p65.feature_index("close");
    for (int i = 0; i < 2; ++i) {
        double expect =
            (p65.rows[64](i, close) - p65.rows[63](i, close)) / p65.rows[63](i, close);
        CHECK(windows[0].label(i) == doctest::Approx(expect).epsilon(1e-14));
    }
    CHECK(windows[0].anchor_date == p65.dates[63]);
}

TEST_CASE("windowing is leak-free: labels come strictly after their window") {
    auto panel = generate_synthetic(5, 2, 40, Regime::kMixed);
    auto windows = make_windows(panel, 8);
    for (const auto& w : windows) {
        // the label row is anchor_row + 1; every window row is <= anchor_row
        CHECK(w.anchor_row + 1 < panel.days());
        CHECK(panel.dates[w.anchor_row] == w.anchor_date);
        CHECK(panel.dates[w.anchor_row + 1] > w.anchor_date);
    }
}

TEST_CASE("split respects the boundary and drops the straddling window") {
    auto panel = generate_synthetic(7, 2, 60, Regime::kMixed);
    std::string boundary = panel.dates[40];
    auto split = split_by_date(panel, 8, boundary);
    for (const auto& s : split.train) {
        CHECK(s.anchor_date < boundary);
        CHECK(panel.dates[s.anchor_row + 1] < boundary);  // label stays pre-boundary
    }
    for (const auto& s : split.test) CHECK(s.anchor_date >= boundary);
    CHECK(split.train.size() + split.test.size() + 1 == make_windows(panel, 8).size());
}

TEST_CASE("normalization: z-score example, zero-variance rule, train moments") {
    auto panel = generate_synthetic(13, 3, 120, Regime::kMixed);
    auto split = split_by_fraction(panel, 8, 0.7);
    auto norm = normalize_features(std::move(split));
    REQUIRE(norm.stats.has_value());

    // re-deriving moments from the normalized train windows gives ~N(0,1)
    Eigen::Index d = norm.train.front().window.cols();
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(d), sumsq = Eigen::VectorXd::Zero(d);
    double count = 0;
    for (const auto& s : norm.train) {
        sum += s.window.colwise().sum().transpose();
        sumsq += s.window.array().square().colwise().sum().transpose().matrix();
        count += static_cast<double>(s.window.rows());
    }
    for (Eigen::Index i = 0; i < d; ++i) {
        double mean = sum(i) / count;
        double var = sumsq(i) / count - mean * mean;
        CHECK(std::abs(mean) < 1e-6);
        CHECK(std::abs(std::sqrt(std::max(var, 0.0)) - 1.0) < 1e-6);
    }

    // direct z-score arithmetic
    NormStats stats;
    stats.mean = Eigen::VectorXd::Constant(1, 3.0);
    stats.std = Eigen::VectorXd::Constant(1, 2.0);
    std::vector<WindowSample> one(1);
    one[0].window = Matrix::Constant(1, 1, 5.0);
    apply_normalization(one, stats);
    CHECK(one[0].window(0, 0) == doctest::Approx(1.0));

    // zero-variance features map to zero
    stats.std(0) = 0.0;
    one[0].window(0, 0) = 17.0;
    apply_normalization(one, stats);
    CHECK(one[0].window(0, 0) == 0.0);
}

TEST_CASE("synthetic generator: determinism, trend, degenerate sizes, invariants") {
    auto a = generate_synthetic(99, 4, 50, Regime::kTrend);
    auto b = generate_synthetic(99, 4, 50, Regime::kTrend);
    REQUIRE(a.days() == b.days());
    for (int t = 0; t < a.days(); ++t) CHECK((a.rows[t] - b.rows[t]).norm() == 0.0);

    auto c = generate_synthetic(100, 4, 50, Regime::kTrend);
    bool differs = false;
    for (int t = 0; t < a.days() && !differs; ++t)
        differs = (a.rows[t] - c.rows[t]).norm() > 0;
    CHECK(differs);

    // trend regime: >= 80% of stocks end above their start over T=500
    auto tr = generate_synthetic(3, 20, 500, Regime::kTrend);
    int close = tr.feature_index("close");
    int up = 0;
    for (int i = 0; i < 20; ++i)
        if (tr.rows.back()(i, close) > tr.rows.front()(i, close)) ++up;
    CHECK(up >= 16);

    CHECK(generate_synthetic(1, 1, 2, Regime::kMixed).stocks() == 1);
    CHECK_THROWS_AS(generate_synthetic(1, 0, 10, Regime::kMixed), storm::ConfigError);

    // bar invariants hold everywhere
    for (int t = 0; t < tr.days(); ++t) {
        for (int i = 0; i < tr.stocks(); ++i) {
            double o = tr.rows[t](i, 0), h = tr.rows[t](i, 1), l = tr.rows[t](i, 2),
                   cl = tr.rows[t](i, 3), v = tr.rows[t](i, 4);
            CHECK(l <= std::min(o, cl));
            CHECK(h >= std::max(o, cl));
            CHECK(v >= 0);
            CHECK(l > 0);
        }
    }
}

TEST_CASE("panel cache round-trips values and manifest") {
    auto panel = generate_synthetic(21, 3, 30, Regime::kMixed);
    auto rich = compute_indicators(panel, {"ret1", "mean5"});
    save_panel(rich, "/tmp/storm_md_cache");
    auto back = load_panel("/tmp/storm_md_cache");
    CHECK(back.d1 == rich.d1);
    CHECK(back.d2 == 2);
    CHECK(back.feature_names == rich.feature_names);
    CHECK(back.dates == rich.dates);
    REQUIRE(back.days() == rich.days());
    for (int t = 0; t < rich.days(); ++t) CHECK((back.rows[t] - rich.rows[t]).norm() == 0.0);
}

TEST_CASE("bars csv round-trip through load_bars") {
    auto panel = generate_synthetic(33, 3, 20, Regime::kMixed);
    write_bars_csv(panel, "/tmp/storm_md_bars.csv");
    auto back = load_bars("/tmp/storm_md_bars.csv");
    CHECK(back.days() == panel.days());
    CHECK(back.tickers == panel.tickers);
    for (int t = 0; t < panel.days(); ++t)
        CHECK((back.rows[t] - panel.rows[t]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("custom indicator hook participates like a builtin") {
    static bool registered = false;
    if (!registered) {
        register_indicator("const7", 0, [](const FeaturePanel& p, Matrix& out) {
            (void)p;
            out.setConstant(7.0);
        });
        registered = true;
    }
    auto panel = generate_synthetic(44, 2, 10, Regime::kMixed);
    auto out = compute_indicators(panel, {"const7"});
    CHECK(out.rows[0](0, out.feature_index("const7")) == 7.0);
}
