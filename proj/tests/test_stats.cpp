#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "layerlens/common.hpp"
#include "layerlens/stats.hpp"

using namespace layerlens;

namespace {

std::vector<feature_row> make_rows(const std::vector<double>& y,
                                   const std::vector<std::vector<double>>& predictors) {
    std::vector<feature_row> rows;
    for (size_t i = 0; i < y.size(); ++i) rows.push_back({y[i], predictors[i]});
    return rows;
}

// Independent long-double normal-equations solver (explicit Gaussian
// elimination with partial pivoting) used as the OLS oracle.
std::vector<double> solve_normal_equations(const std::vector<feature_row>& rows) {
    size_t k = rows[0].predictors.size() + 1;
    std::vector<std::vector<long double>> aug(k, std::vector<long double>(k + 1, 0.0L));
    for (const auto& r : rows) {
        std::vector<long double> x(k);
        x[0] = 1.0L;
        for (size_t j = 0; j + 1 < k; ++j) x[j + 1] = r.predictors[j];
        for (size_t a = 0; a < k; ++a) {
            for (size_t b = 0; b < k; ++b) aug[a][b] += x[a] * x[b];
            aug[a][k] += x[a] * static_cast<long double>(r.y);
        }
    }
    for (size_t col = 0; col < k; ++col) {
        size_t pivot = col;
        for (size_t r = col + 1; r < k; ++r)
            if (std::abs(static_cast<double>(aug[r][col])) >
                std::abs(static_cast<double>(aug[pivot][col])))
                pivot = r;
        std::swap(aug[col], aug[pivot]);
        for (size_t r = 0; r < k; ++r) {
            if (r == col) continue;
            long double f = aug[r][col] / aug[col][col];
            for (size_t c = col; c <= k; ++c) aug[r][c] -= f * aug[col][c];
        }
    }
    std::vector<double> beta(k);
    for (size_t i = 0; i < k; ++i) beta[i] = static_cast<double>(aug[i][k] / aug[i][i]);
    return beta;
}

} // namespace

TEST_CASE("OLS recovers an exact linear relation", "[stats]") {
    // y = 3 + 2x with no noise: beta exact, residuals zero, variance floored.
    std::vector<feature_row> rows;
    for (int i = 0; i < 10; ++i)
        rows.push_back({3.0 + 2.0 * i, {static_cast<double>(i)}});
    regression_fit fit = fit_ols(rows);
    CHECK(fit.beta[0] == Catch::Approx(3.0).margin(1e-10));
    CHECK(fit.beta[1] == Catch::Approx(2.0).margin(1e-10));
    CHECK(fit.sigma2 == kSigma2Floor);
    CHECK(fit.n == 10);
    CHECK(fit.n_predictors == 1);
    CHECK_FALSE(fit.ridged);
    CHECK(predict(fit, {0.0, {4.0}}) == Catch::Approx(11.0).margin(1e-9));
}

TEST_CASE("OLS matches statsmodels on a pinned design", "[stats]") {
    // Oracle: statsmodels OLS(y, X).fit() on this exact 12-row design gives
    // params [3.0438092960483, 1.6265858718921, -0.3906935681348] and
    // llf -2.352828743915813 (Gaussian MLE log-likelihood).
    std::vector<double> x1 = {-2.645, -1.869, 0.608, 1.407, 0.819, 0.882,
                              0.024,  -0.664, -0.145, 0.903, -0.595, -0.296};
    std::vector<double> x2 = {1.669,  -0.899, -1.151, -1.249, 0.096, -0.429,
                              -0.898, -0.942, -0.257, -0.366, -0.46, 0.121};
    std::vector<double> y = {-2.171, 0.339, 4.239, 5.22,  4.255, 5.147,
                             3.465,  2.683, 2.684, 4.89,  2.32,  2.761};
    std::vector<feature_row> rows;
    for (size_t i = 0; i < y.size(); ++i) rows.push_back({y[i], {x1[i], x2[i]}});

    regression_fit fit = fit_ols(rows);
    CHECK(fit.beta[0] == Catch::Approx(3.0438092960483263).margin(1e-9));
    CHECK(fit.beta[1] == Catch::Approx(1.6265858718920910).margin(1e-9));
    CHECK(fit.beta[2] == Catch::Approx(-0.3906935681348481).margin(1e-9));
    CHECK(fit.loglik == Catch::Approx(-2.352828743915813).margin(1e-9));
    CHECK(fit.sigma2 == Catch::Approx(0.08666207295339733).margin(1e-12));
}

TEST_CASE("OLS agrees with a long-double normal-equations oracle", "[stats]") {
    std::mt19937 rng(20240818);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (int design = 0; design < 100; ++design) {
        size_t n = 30 + static_cast<size_t>(design % 20);
        size_t k = 2 + static_cast<size_t>(design % 4);
        std::vector<feature_row> rows;
        for (size_t i = 0; i < n; ++i) {
            feature_row r;
            for (size_t j = 0; j < k; ++j) r.predictors.push_back(noise(rng));
            r.y = 5.0 + noise(rng);
            for (size_t j = 0; j < k; ++j) r.y += (static_cast<double>(j) - 1.0) * r.predictors[j];
            rows.push_back(std::move(r));
        }

        regression_fit fit = fit_ols(rows);
        std::vector<double> want = solve_normal_equations(rows);
        REQUIRE(fit.beta.size() == static_cast<Eigen::Index>(want.size()));
        for (size_t j = 0; j < want.size(); ++j) {
            INFO("design " << design << " coefficient " << j);
            REQUIRE(fit.beta[static_cast<Eigen::Index>(j)] ==
                    Catch::Approx(want[j]).margin(1e-8));
        }

        // Residuals are orthogonal to every design column (including the
        // intercept): sum of residuals and residual-predictor dot products
        // vanish at the optimum.
        double resid_sum = 0.0;
        std::vector<double> dots(k, 0.0);
        for (const auto& r : rows) {
            double resid = r.y - predict(fit, r);
            resid_sum += resid;
            for (size_t j = 0; j < k; ++j) dots[j] += resid * r.predictors[j];
        }
        CHECK(std::abs(resid_sum) < 1e-7);
        for (size_t j = 0; j < k; ++j) CHECK(std::abs(dots[j]) < 1e-6);
    }
}

TEST_CASE("gaussian log-likelihood matches the closed form", "[stats]") {
    // rss = 2, n = 2 puts sigma^2 at 1, so ll = -(ln(2 pi) + 1).
    CHECK(gaussian_loglik(2.0, 2) == Catch::Approx(-(std::log(2 * M_PI) + 1.0)).margin(1e-12));
    // The variance floor kicks in for tiny residuals.
    CHECK(gaussian_loglik(0.0, 4) ==
          Catch::Approx(-2.0 * (std::log(2 * M_PI * kSigma2Floor) + 1.0)).margin(1e-12));
}

TEST_CASE("nested in-sample fits never lose log-likelihood", "[stats]") {
    std::mt19937 rng(7);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<feature_row> rows;
        for (int i = 0; i < 40; ++i) {
            feature_row r;
            for (int j = 0; j < 4; ++j) r.predictors.push_back(noise(rng));
            r.y = 2.0 + 0.5 * r.predictors[0] + noise(rng);
            rows.push_back(std::move(r));
        }
        regression_fit full = fit_ols(rows);
        regression_fit base = fit_ols(select_columns(rows, {1, 2, 3}));
        ppp_result r = delta_ll(full, base);
        CHECK(r.delta_ll >= -1e-9);
        CHECK(r.df_diff == 1);
        CHECK(r.ll_full == full.loglik);
        CHECK(r.ll_baseline == base.loglik);
    }
}

TEST_CASE("delta_ll rejects mismatched fits", "[stats]") {
    std::vector<feature_row> rows;
    for (int i = 0; i < 10; ++i)
        rows.push_back({static_cast<double>(i), {static_cast<double>(i), i * 0.5}});
    regression_fit full = fit_ols(rows);
    regression_fit base = fit_ols(select_columns(rows, {0}));
    CHECK_THROWS_AS(delta_ll(base, full), data_error);  // baseline wider than full
    std::vector<feature_row> fewer(rows.begin(), rows.begin() + 8);
    regression_fit small = fit_ols(fewer);
    CHECK_THROWS_AS(delta_ll(full, small), data_error);  // different row counts
}

TEST_CASE("chi-squared survival function matches reference values", "[stats]") {
    // Oracle: scipy.stats.chi2.sf, transcribed to 16 significant digits.
    struct case_t {
        double x;
        int df;
        double sf;
    };
    const case_t cases[] = {
        {0.5, 1, 0.47950012218695337},   {2.0, 1, 0.15729920705028105},
        {7.815, 1, 0.005181434795588456},{0.5, 2, 0.7788007830714049},
        {2.0, 2, 0.36787944117144245},   {7.815, 2, 0.020090664993125482},
        {0.5, 3, 0.9188914116546758},    {2.0, 3, 0.5724067044708798},
        {7.815, 3, 0.049993902974883875},{0.5, 4, 0.9735009788392561},
        {2.0, 4, 0.7357588823428847},    {7.815, 4, 0.09859493845376334},
        {0.5, 5, 0.9921232932326296},    {2.0, 5, 0.8491450360846096},
        {7.815, 5, 0.1667303825819486},  {0.5, 6, 0.9978385033102375},
        {2.0, 6, 0.9196986029286058},    {7.815, 6, 0.2519726627274846},
    };
    for (const auto& c : cases) {
        INFO("chi2_sf(" << c.x << ", " << c.df << ")");
        CHECK(chi2_sf(c.x, c.df) == Catch::Approx(c.sf).margin(1e-10));
    }
    CHECK(chi2_sf(0.0, 3) == 1.0);
    CHECK(chi2_sf(1e6, 3) == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("chi-squared p-values decrease in the statistic", "[stats]") {
    for (int df = 1; df <= 6; ++df) {
        double prev = 1.0;
        for (double x = 0.25; x < 30.0; x += 0.25) {
            double p = chi2_sf(x, df);
            CHECK(p <= prev);
            prev = p;
        }
    }
}

TEST_CASE("the likelihood-ratio test doubles delta-LL", "[stats]") {
    // A statistic of 7.815 on 3 df sits at the classical 5% boundary.
    lrt_result r = lr_test(7.815 / 2.0, 3);
    CHECK(r.statistic == Catch::Approx(7.815).margin(1e-12));
    CHECK(r.df == 3);
    CHECK(r.p_value == Catch::Approx(0.05).margin(0.0005));

    CHECK_THROWS_AS(lr_test(-0.1, 3), numerical_error);
    CHECK_THROWS_AS(lr_test(1.0, 0), data_error);
    CHECK_THROWS_AS(chi2_sf(-1.0, 3), numerical_error);
    CHECK_THROWS_AS(chi2_sf(1.0, 0), data_error);
}

TEST_CASE("pearson correlation matches its definition", "[stats]") {
    CHECK(pearson({1, 2, 3, 4}, {3, 5, 7, 9}) == Catch::Approx(1.0).margin(1e-12));
    CHECK(pearson({1, 2, 3, 4}, {4, 3, 2, 1}) == Catch::Approx(-1.0).margin(1e-12));

    // Hand oracle: covariance / (sd_x sd_y) computed with explicit sums.
    std::vector<double> x = {0.3, -1.2, 2.4, 0.9, -0.7};
    std::vector<double> y = {1.1, 0.4, 2.0, -0.3, 0.8};
    double mx = 0, my = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= 5;
    my /= 5;
    double sxy = 0, sxx = 0, syy = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    CHECK(pearson(x, y) == Catch::Approx(sxy / std::sqrt(sxx * syy)).margin(1e-14));

    CHECK_THROWS_AS(pearson({1, 1, 1}, {1, 2, 3}), numerical_error);
    CHECK_THROWS_AS(pearson({1, 2}, {1, 2, 3}), data_error);
    CHECK_THROWS_AS(pearson({1}, {1}), data_error);
}

TEST_CASE("feature assembly follows the fixed spillover layout", "[stats]") {
    // Two sentences; the second starts mid-series so its first word must fall
    // back to corpus means for both predecessor slots.
    std::vector<word_obs> words = {
        {300, 1.0, 3, -2.0, std::nullopt, 0},
        {310, 2.0, 4, -3.0, std::nullopt, 0},
        {320, 3.0, 5, -4.0, std::nullopt, 0},
        {330, 4.0, 6, -5.0, std::nullopt, 1},
        {340, 5.0, 7, -6.0, std::nullopt, 1},
    };
    feature_matrix fm = build_features(words);
    REQUIRE(fm.rows.size() == 5);
    REQUIRE(fm.n_predictors == 9);
    double mean_interest = 3.0, mean_length = 5.0, mean_logfreq = -4.0;

    // Word 0: no predecessors at all.
    CHECK(fm.rows[0].predictors ==
          std::vector<double>{1.0, mean_interest, mean_interest, 3, mean_length, mean_length,
                              -2.0, mean_logfreq, mean_logfreq});
    CHECK(fm.imputed[0] ==
          std::vector<bool>{false, true, true, false, true, true, false, true, true});

    // Word 1: one predecessor.
    CHECK(fm.rows[1].predictors ==
          std::vector<double>{2.0, 1.0, mean_interest, 4, 3, mean_length, -3.0, -2.0,
                              mean_logfreq});
    CHECK(fm.imputed[1] ==
          std::vector<bool>{false, false, true, false, false, true, false, false, true});

    // Word 2: both predecessors in-sentence.
    CHECK(fm.rows[2].predictors ==
          std::vector<double>{3.0, 2.0, 1.0, 5, 4, 3, -4.0, -3.0, -2.0});
    CHECK(fm.imputed[2] == std::vector<bool>(9, false));

    // Word 3 opens sentence 1: the spillover window must not cross sentences.
    CHECK(fm.rows[3].predictors ==
          std::vector<double>{4.0, mean_interest, mean_interest, 6, mean_length, mean_length,
                              -5.0, mean_logfreq, mean_logfreq});
    CHECK(fm.rows[4].predictors ==
          std::vector<double>{5.0, 4.0, mean_interest, 7, 6, mean_length, -6.0, -5.0,
                              mean_logfreq});

    CHECK(fm.rows[0].y == 300.0);
    CHECK(fm.rows[4].y == 340.0);
}

TEST_CASE("the extra predictor adds three trailing columns", "[stats]") {
    std::vector<word_obs> words = {
        {300, 1.0, 3, -2.0, 0.5, 0},
        {310, 2.0, 4, -3.0, 0.7, 0},
    };
    feature_matrix fm = build_features(words, true);
    REQUIRE(fm.n_predictors == 12);
    double mean_extra = 0.6;
    CHECK(fm.rows[0].predictors[9] == 0.5);
    CHECK(fm.rows[0].predictors[10] == mean_extra);
    CHECK(fm.rows[1].predictors[9] == 0.7);
    CHECK(fm.rows[1].predictors[10] == 0.5);
    CHECK(fm.rows[1].predictors[11] == mean_extra);

    std::vector<word_obs> missing = {{300, 1.0, 3, -2.0, std::nullopt, 0}};
    CHECK_THROWS_AS(build_features(missing, true), data_error);

    CHECK(build_features({}).rows.empty());
}

TEST_CASE("column and row selection validate indices", "[stats]") {
    std::vector<feature_row> rows = make_rows({1.0, 2.0}, {{10, 20, 30}, {40, 50, 60}});
    std::vector<feature_row> cols = select_columns(rows, {2, 0});
    CHECK(cols[0].predictors == std::vector<double>{30, 10});
    CHECK(cols[1].predictors == std::vector<double>{60, 40});
    CHECK(cols[0].y == 1.0);
    CHECK_THROWS_AS(select_columns(rows, {3}), data_error);

    std::vector<feature_row> sel = select_rows(rows, {1});
    REQUIRE(sel.size() == 1);
    CHECK(sel[0].y == 2.0);
    CHECK_THROWS_AS(select_rows(rows, {2}), data_error);

    CHECK(kBaselineColumns == std::vector<size_t>{3, 4, 5, 6, 7, 8});
    CHECK(kFullColumns == std::vector<size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8});
    CHECK(kFullPlusExtraColumns == std::vector<size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11});
}

TEST_CASE("degenerate designs fall back to a tiny ridge", "[stats]") {
    // Two identical predictor columns make the Gram matrix singular.
    std::mt19937 rng(5);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<feature_row> rows;
    for (int i = 0; i < 12; ++i) {
        double v = noise(rng);
        rows.push_back({1.0 + 2.0 * v + 0.01 * noise(rng), {v, v}});
    }
    regression_fit fit = fit_ols(rows);
    CHECK(fit.ridged);
    CHECK(fit.beta.allFinite());
    // Predictions still track the target despite the redundant column.
    for (const auto& r : rows)
        CHECK(std::abs(predict(fit, r) - r.y) < 0.1);
}

TEST_CASE("regression inputs are validated", "[stats]") {
    CHECK_THROWS_AS(fit_ols({}), numerical_error);

    std::vector<feature_row> too_few = {{1.0, {1, 2, 3}}, {2.0, {4, 5, 6}}};
    CHECK_THROWS_AS(fit_ols(too_few), numerical_error);

    std::vector<feature_row> ragged = make_rows({1, 2, 3, 4}, {{1}, {2, 3}, {4}, {5}});
    CHECK_THROWS_AS(fit_ols(ragged), data_error);

    std::vector<feature_row> inf_rows =
        make_rows({1, 2, 3, 4}, {{1}, {std::numeric_limits<double>::infinity()}, {3}, {4}});
    CHECK_THROWS_AS(fit_ols(inf_rows), numerical_error);

    std::vector<feature_row> nan_y =
        make_rows({1, std::nan(""), 3, 4}, {{1}, {2}, {3}, {4}});
    CHECK_THROWS_AS(fit_ols(nan_y), numerical_error);

    regression_fit fit = fit_ols(make_rows({1, 2, 3}, {{1}, {2}, {3}}));
    CHECK_THROWS_AS(predict(fit, {0.0, {1.0, 2.0}}), data_error);
}

TEST_CASE("cross-validated log-likelihood is deterministic and honest", "[stats]") {
    std::mt19937 rng(11);
    std::normal_distribution<double> noise(0.0, 1.0);
    std::vector<feature_row> rows;
    for (int i = 0; i < 60; ++i) {
        double x = noise(rng);
        rows.push_back({1.0 + 3.0 * x + 0.5 * noise(rng), {x, noise(rng)}});
    }
    double a = cv_heldout_loglik(rows, 5);
    double b = cv_heldout_loglik(rows, 5);
    CHECK(a == b);  // same folds, same result

    // The informative model wins held-out likelihood over noise-only.
    std::vector<feature_row> noise_only = select_columns(rows, {1});
    std::vector<feature_row> informative = select_columns(rows, {0});
    CHECK(cv_delta_ll(informative, noise_only, 5) > 0.0);

    CHECK_THROWS_AS(cv_heldout_loglik(rows, 1), usage_error);
    std::vector<feature_row> fewer(rows.begin(), rows.begin() + 10);
    CHECK_THROWS_AS(cv_delta_ll(rows, fewer, 5), data_error);
}
