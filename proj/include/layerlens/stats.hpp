#pragma once

// Reading-time regressions: spillover feature assembly, OLS with Gaussian
// MLE log-likelihood, nested-model ΔLL (PPP), likelihood-ratio tests against
// the chi-squared survival function, and Pearson correlation.
//
// Predictor order (fixed): interest_t, interest_t-1, interest_t-2,
// length_t, length_t-1, length_t-2, logfreq_t, logfreq_t-1, logfreq_t-2,
// then optionally extra_t, extra_t-1, extra_t-2. Intercept implicit.

#include <cmath>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "layerlens/common.hpp"

namespace layerlens {

inline constexpr double kSigma2Floor = 1e-6;  // ms^2
inline constexpr double kRidge = 1e-8;

// ---------------------------------------------------------------------------
// Feature assembly.
// ---------------------------------------------------------------------------

// One word as seen by the regressions, in corpus order. `sentence_id` scopes
// the spillover window: predecessors are taken within the same sentence only.
struct word_obs {
    double y = 0.0;         // reading time, ms
    double interest = 0.0;  // surprisal or update-measure value
    double length = 0.0;    // characters
    double logfreq = 0.0;   // natural-log word frequency
    std::optional<double> extra;  // second interest predictor (additive models)
    int sentence_id = 0;
};

struct feature_row {
    double y = 0.0;
    std::vector<double> predictors;
};

struct feature_matrix {
    std::vector<feature_row> rows;
    // imputed[i][k] marks predictor k of row i as mean-imputed (missing
    // predecessor at a sentence start).
    std::vector<std::vector<bool>> imputed;
    size_t n_predictors = 0;
};

// Builds one row per word. Missing predecessor slots (sentence starts) are
// imputed with the feature means over all words passed in; callers hand the
// full training corpus here and subset rows afterwards.
inline feature_matrix build_features(const std::vector<word_obs>& words, bool with_extra = false) {
    feature_matrix out;
    size_t n = words.size();
    if (n == 0) return out;
    double mean_interest = 0, mean_length = 0, mean_logfreq = 0, mean_extra = 0;
    for (const auto& w : words) {
        mean_interest += w.interest;
        mean_length += w.length;
        mean_logfreq += w.logfreq;
        if (with_extra) {
            if (!w.extra)
                throw data_error("stats: extra measure requested but a word has no extra value");
            mean_extra += *w.extra;
        }
    }
    mean_interest /= static_cast<double>(n);
    mean_length /= static_cast<double>(n);
    mean_logfreq /= static_cast<double>(n);
    mean_extra /= static_cast<double>(n);

    out.n_predictors = with_extra ? 12 : 9;
    out.rows.reserve(n);
    out.imputed.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        const word_obs* prev1 =
            (i >= 1 && words[i - 1].sentence_id == words[i].sentence_id) ? &words[i - 1] : nullptr;
        const word_obs* prev2 =
            (i >= 2 && words[i - 2].sentence_id == words[i].sentence_id) ? &words[i - 2] : nullptr;
        feature_row row;
        row.y = words[i].y;
        std::vector<bool> mask(out.n_predictors, false);
        auto push = [&](double current, double p1, double p2, double mean, size_t base) {
            row.predictors.push_back(current);
            row.predictors.push_back(prev1 ? p1 : mean);
            row.predictors.push_back(prev2 ? p2 : mean);
            mask[base + 1] = prev1 == nullptr;
            mask[base + 2] = prev2 == nullptr;
        };
        push(words[i].interest, prev1 ? prev1->interest : 0, prev2 ? prev2->interest : 0,
             mean_interest, 0);
        push(words[i].length, prev1 ? prev1->length : 0, prev2 ? prev2->length : 0, mean_length, 3);
        push(words[i].logfreq, prev1 ? prev1->logfreq : 0, prev2 ? prev2->logfreq : 0, mean_logfreq,
             6);
        if (with_extra)
            push(*words[i].extra, prev1 ? prev1->extra.value() : 0,
                 prev2 ? prev2->extra.value() : 0, mean_extra, 9);
        out.rows.push_back(std::move(row));
        out.imputed.push_back(std::move(mask));
    }
    return out;
}

// Column subset (e.g. the lexical baseline drops the interest columns).
inline std::vector<feature_row> select_columns(const std::vector<feature_row>& rows,
                                               const std::vector<size_t>& columns) {
    std::vector<feature_row> out;
    out.reserve(rows.size());
    for (const auto& r : rows) {
        feature_row nr;
        nr.y = r.y;
        for (size_t c : columns) {
            if (c >= r.predictors.size())
                throw data_error("stats: column index out of range in select_columns");
            nr.predictors.push_back(r.predictors[c]);
        }
        out.push_back(std::move(nr));
    }
    return out;
}

inline std::vector<feature_row> select_rows(const std::vector<feature_row>& rows,
                                            const std::vector<size_t>& indices) {
    std::vector<feature_row> out;
    out.reserve(indices.size());
    for (size_t i : indices) {
        if (i >= rows.size()) throw data_error("stats: row index out of range in select_rows");
        out.push_back(rows[i]);
    }
    return out;
}

// The lexical-baseline columns for the fixed predictor layout.
inline const std::vector<size_t> kBaselineColumns = {3, 4, 5, 6, 7, 8};
inline const std::vector<size_t> kFullColumns = {0, 1, 2, 3, 4, 5, 6, 7, 8};
inline const std::vector<size_t> kFullPlusExtraColumns = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11};

// ---------------------------------------------------------------------------
// OLS with Gaussian log-likelihood.
// ---------------------------------------------------------------------------

struct regression_fit {
    Eigen::VectorXd beta;  // [intercept, predictors...]
    double sigma2 = 0.0;   // MLE residual variance, floored
    size_t n = 0;
    size_t n_predictors = 0;
    double loglik = 0.0;
    bool ridged = false;  // Gram matrix needed the ridge fallback
};

inline double gaussian_loglik(double rss, size_t n) {
    double sigma2 = std::max(rss / static_cast<double>(n), kSigma2Floor);
    return -0.5 * static_cast<double>(n) * (std::log(2.0 * M_PI * sigma2) + 1.0);
}

inline regression_fit fit_ols(const std::vector<feature_row>& rows) {
    if (rows.empty()) throw numerical_error("stats: fit_ols on an empty row set");
    size_t n = rows.size();
    size_t k = rows[0].predictors.size() + 1;  // + intercept
    if (n <= rows[0].predictors.size())
        throw numerical_error("stats: fit_ols needs more rows (" + std::to_string(n) +
                              ") than predictors (" + std::to_string(k - 1) + ")");
    Eigen::MatrixXd x(n, k);
    Eigen::VectorXd y(n);
    for (size_t i = 0; i < n; ++i) {
        if (rows[i].predictors.size() != k - 1)
            throw data_error("stats: ragged feature rows in fit_ols");
        x(i, 0) = 1.0;
        for (size_t j = 0; j + 1 < k; ++j) {
            double v = rows[i].predictors[j];
            if (!std::isfinite(v)) throw numerical_error("stats: non-finite predictor value");
            x(i, j + 1) = v;
        }
        if (!std::isfinite(rows[i].y)) throw numerical_error("stats: non-finite response value");
        y[i] = rows[i].y;
    }

    Eigen::MatrixXd gram = x.transpose() * x;
    Eigen::VectorXd moment = x.transpose() * y;
    regression_fit fit;
    fit.n = n;
    fit.n_predictors = k - 1;

    Eigen::FullPivLU<Eigen::MatrixXd> lu(gram);
    if (!lu.isInvertible()) {
        gram.diagonal().array() += kRidge;
        fit.ridged = true;
    }
    fit.beta = gram.ldlt().solve(moment);
    if (!fit.beta.allFinite()) {
        if (!fit.ridged) {
            gram.diagonal().array() += kRidge;
            fit.ridged = true;
            fit.beta = gram.ldlt().solve(moment);
        }
        if (!fit.beta.allFinite())
            throw numerical_error("stats: singular design matrix (even after ridge fallback)");
    }

    double rss = (y - x * fit.beta).squaredNorm();
    fit.sigma2 = std::max(rss / static_cast<double>(n), kSigma2Floor);
    fit.loglik = gaussian_loglik(rss, n);
    return fit;
}

inline double predict(const regression_fit& fit, const feature_row& row) {
    if (row.predictors.size() != fit.n_predictors)
        throw data_error("stats: predictor count mismatch in predict");
    double yhat = fit.beta[0];
    for (size_t j = 0; j < row.predictors.size(); ++j)
        yhat += fit.beta[static_cast<Eigen::Index>(j) + 1] * row.predictors[j];
    return yhat;
}

// ---------------------------------------------------------------------------
// ΔLL (PPP), likelihood-ratio test, Pearson.
// ---------------------------------------------------------------------------

struct ppp_result {
    double delta_ll = 0.0;
    double ll_full = 0.0;
    double ll_baseline = 0.0;
    int df_diff = 0;
};

inline ppp_result delta_ll(const regression_fit& full, const regression_fit& baseline) {
    if (full.n != baseline.n)
        throw data_error("stats: delta_ll fits were made on different row counts");
    if (full.n_predictors < baseline.n_predictors)
        throw data_error("stats: delta_ll baseline has more predictors than the full model");
    ppp_result r;
    r.ll_full = full.loglik;
    r.ll_baseline = baseline.loglik;
    r.delta_ll = full.loglik - baseline.loglik;
    r.df_diff = static_cast<int>(full.n_predictors - baseline.n_predictors);
    return r;
}

// Regularized incomplete gamma Q(a, x) = Γ(a, x)/Γ(a) via series / continued
// fraction; chi2_sf(x, df) = Q(df/2, x/2).
namespace detail {

inline double gamma_q(double a, double x) {
    if (x < 0 || a <= 0) throw numerical_error("stats: gamma_q domain error");
    if (x == 0) return 1.0;
    double lg = std::lgamma(a);
    if (x < a + 1.0) {
        // Series for P(a,x); Q = 1 - P.
        double term = 1.0 / a;
        double sum = term;
        double ap = a;
        for (int i = 0; i < 1000; ++i) {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if (std::abs(term) < std::abs(sum) * 1e-16) break;
        }
        double p = sum * std::exp(-x + a * std::log(x) - lg);
        return std::min(std::max(1.0 - p, 0.0), 1.0);
    }
    // Lentz continued fraction for Q(a,x).
    const double tiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i <= 1000; ++i) {
        double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < 1e-16) break;
    }
    double q = std::exp(-x + a * std::log(x) - lg) * h;
    return std::min(std::max(q, 0.0), 1.0);
}

} // namespace detail

inline double chi2_sf(double statistic, int df) {
    if (df <= 0) throw data_error("stats: chi-squared df must be positive");
    if (statistic < 0) throw numerical_error("stats: chi-squared statistic must be >= 0");
    return detail::gamma_q(0.5 * df, 0.5 * statistic);
}

struct lrt_result {
    double statistic = 0.0;
    int df = 0;
    double p_value = 1.0;
};

inline lrt_result lr_test(double delta_ll_value, int df) {
    if (df <= 0) throw data_error("stats: lr_test df must be positive");
    if (delta_ll_value < 0)
        throw numerical_error("stats: lr_test requires delta_ll >= 0 (nested in-sample fits)");
    lrt_result r;
    r.statistic = 2.0 * delta_ll_value;
    r.df = df;
    r.p_value = chi2_sf(r.statistic, df);
    return r;
}

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2)
        throw data_error("stats: pearson needs two equal-length series of size >= 2");
    size_t n = x.size();
    double mx = 0, my = 0;
    for (size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0, sxx = 0, syy = 0;
    for (size_t i = 0; i < n; ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (!(sxx > 0) || !(syy > 0))
        throw numerical_error("stats: pearson on a constant series");
    return sxy / std::sqrt(sxx * syy);
}

// ---------------------------------------------------------------------------
// Cross-validated ΔLL (documented alternative to in-sample PPP; --cv k).
// Folds are assigned deterministically by row index modulo k. Held-out
// log-likelihood uses the training fit's β and σ².
// ---------------------------------------------------------------------------

inline double cv_heldout_loglik(const std::vector<feature_row>& rows, int k_folds) {
    if (k_folds < 2) throw usage_error("stats: --cv needs k >= 2");
    size_t n = rows.size();
    double total = 0.0;
    for (int fold = 0; fold < k_folds; ++fold) {
        std::vector<feature_row> train;
        std::vector<const feature_row*> test;
        for (size_t i = 0; i < n; ++i) {
            if (static_cast<int>(i % static_cast<size_t>(k_folds)) == fold)
                test.push_back(&rows[i]);
            else
                train.push_back(rows[i]);
        }
        if (test.empty()) continue;
        regression_fit fit = fit_ols(train);
        for (const feature_row* row : test) {
            double resid = row->y - predict(fit, *row);
            total += -0.5 * (std::log(2.0 * M_PI * fit.sigma2) + resid * resid / fit.sigma2);
        }
    }
    return total;
}

inline double cv_delta_ll(const std::vector<feature_row>& full_rows,
                          const std::vector<feature_row>& baseline_rows, int k_folds) {
    if (full_rows.size() != baseline_rows.size())
        throw data_error("stats: cv_delta_ll row sets differ in size");
    return cv_heldout_loglik(full_rows, k_folds) - cv_heldout_loglik(baseline_rows, k_folds);
}

} // namespace layerlens
