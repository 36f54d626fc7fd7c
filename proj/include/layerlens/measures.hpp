#pragma once

// Word-level measures on top of lens distributions: layer-specific surprisal
// (subword joint probability; optional whitespace-trailing boundary
// correction), the surprisal update SU, and KL/JS divergences between a
// shallow and a deep lens distribution summed over a word's subword positions.
// All probability math in nats; probabilities floored at 1e-12 before logs.

#include <cmath>
#include <string>
#include <vector>

#include "layerlens/lens.hpp"
#include "layerlens/tokenizer.hpp"

namespace layerlens {

inline constexpr double kProbFloor = 1e-12;

enum class decoding_mode { leading, trailing };

inline decoding_mode decoding_from_string(const std::string& s) {
    if (s == "leading") return decoding_mode::leading;
    if (s == "trailing") return decoding_mode::trailing;
    throw usage_error("measures: unknown decoding mode '" + s + "' (use leading|trailing)");
}

struct word_span {
    std::string word_text;       // as written, including any leading space
    std::vector<int> token_ids;  // non-empty, consecutive in the sentence
    int start_pos = 0;           // position of first subword; >= 1 (context exists)
};

struct surprisal_record {
    int layer = 0;
    double surprisal_nats = 0.0;
};

struct update_record {
    double su = 0.0;  // raw word-surprisal difference, shallow - deep
    double kl = 0.0;  // KL(deep || shallow), summed over subword positions
    double js = 0.0;  // JS(deep, shallow), summed over subword positions
};

// ---------------------------------------------------------------------------
// Distribution-level operations (double vectors, fixed left-to-right sums).
// ---------------------------------------------------------------------------

// KL(Q||P) = sum_w Q(w) ln(Q(w)/P(w)), 0·ln(0/·) = 0; floors inside the logs.
inline double kl_divergence(const Eigen::VectorXd& q, const Eigen::VectorXd& p) {
    if (q.size() != p.size())
        throw data_error("measures: KL dimension mismatch: " + std::to_string(q.size()) +
                         " vs " + std::to_string(p.size()));
    double sum = 0.0;
    for (Eigen::Index i = 0; i < q.size(); ++i) {
        double qi = q[i];
        if (qi <= 0.0) continue;
        sum += qi * (std::log(std::max(qi, kProbFloor)) - std::log(std::max(p[i], kProbFloor)));
    }
    return std::max(sum, 0.0);
}

// JS(Q,P) = KL(Q||M)/2 + KL(P||M)/2, M = (P+Q)/2; result in [0, ln 2].
inline double js_divergence(const Eigen::VectorXd& q, const Eigen::VectorXd& p) {
    if (q.size() != p.size())
        throw data_error("measures: JS dimension mismatch: " + std::to_string(q.size()) +
                         " vs " + std::to_string(p.size()));
    double sum_q = 0.0, sum_p = 0.0;
    for (Eigen::Index i = 0; i < q.size(); ++i) {
        double m = 0.5 * (q[i] + p[i]);
        double lm = std::log(std::max(m, kProbFloor));
        if (q[i] > 0.0) sum_q += q[i] * (std::log(std::max(q[i], kProbFloor)) - lm);
        if (p[i] > 0.0) sum_p += p[i] * (std::log(std::max(p[i], kProbFloor)) - lm);
    }
    double js = 0.5 * sum_q + 0.5 * sum_p;
    return std::min(std::max(js, 0.0), std::log(2.0));
}

// SU building block: change in surprisal from shallow to deep (§6.1).
inline double surprisal_update(double s_shallow, double s_deep) {
    return s_shallow - s_deep;
}

// Z-score normalization (population standard deviation), fn.8.
inline std::vector<double> z_normalize(const std::vector<double>& series) {
    if (series.size() < 2)
        throw numerical_error("measures: z_normalize needs at least 2 values");
    double mean = 0.0;
    for (double v : series) mean += v;
    mean /= static_cast<double>(series.size());
    double var = 0.0;
    for (double v : series) var += (v - mean) * (v - mean);
    var /= static_cast<double>(series.size());
    if (!(var > 0.0))
        throw numerical_error("measures: z_normalize on a zero-variance series");
    double inv = 1.0 / std::sqrt(var);
    std::vector<double> out;
    out.reserve(series.size());
    for (double v : series) out.push_back((v - mean) * inv);
    return out;
}

// ---------------------------------------------------------------------------
// Boundary mass B(c): probability of tokens that begin with the whitespace
// marker, plus end-of-text, under a lens log-probability row.
// ---------------------------------------------------------------------------

inline Eigen::VectorXd boundary_mask(const vocabulary& vocab) {
    Eigen::VectorXd mask = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(vocab.size()));
    for (int id : vocab.boundary_token_ids()) mask[id] = 1.0;
    return mask;
}

inline double boundary_mass(const Eigen::VectorXd& log_prob_row, const Eigen::VectorXd& mask) {
    if (log_prob_row.size() != mask.size())
        throw data_error("measures: boundary mask dimension mismatch");
    // Scalar std::exp on purpose: fully suppressed entries (log p = -inf) must
    // contribute an exact zero. Eigen's vectorized exp clamps its argument and
    // yields a subnormal instead, which would defeat the B(ctx) = 0 guard.
    double total = 0.0;
    for (Eigen::Index i = 0; i < mask.size(); ++i)
        if (mask[i] != 0.0) total += std::exp(log_prob_row[i]);
    return total;
}

// ---------------------------------------------------------------------------
// Word-level operations over a lens session. `log_probs` arguments are the
// [seq_len, vocab] natural-log probability matrix of one layer, so callers
// iterating many words per layer pay for the lens GEMM once.
// ---------------------------------------------------------------------------

namespace detail {

template <typename Scalar>
void check_span(const lens_session<Scalar>& session, const word_span& span) {
    const auto& ids = session.ids();
    if (span.token_ids.empty())
        throw data_error("measures: empty word span for '" + span.word_text + "'");
    if (span.start_pos < 1)
        throw data_error("measures: word span for '" + span.word_text +
                         "' has no preceding context (start_pos must be >= 1)");
    if (span.start_pos + span.token_ids.size() > ids.size())
        throw data_error("measures: word span for '" + span.word_text +
                         "' extends past the sentence");
    for (size_t j = 0; j < span.token_ids.size(); ++j)
        if (ids[span.start_pos + j] != span.token_ids[j])
            throw data_error("measures: word span for '" + span.word_text +
                             "' is misaligned with the sentence tokens");
}

// Leading-whitespace chain-rule log-probability: sum over subwords of the
// floored conditional log-probability.
inline double lead_log_prob(const Eigen::MatrixXd& log_probs, const word_span& span) {
    double sum = 0.0;
    for (size_t j = 0; j < span.token_ids.size(); ++j) {
        double lp = log_probs(span.start_pos + static_cast<int>(j) - 1, span.token_ids[j]);
        sum += std::max(lp, std::log(kProbFloor));
    }
    return sum;
}

} // namespace detail

// P_lead(span) · B(ctx ⊕ span) / B(ctx), clamped to (0, 1].
template <typename Scalar>
double trailing_word_probability(const lens_session<Scalar>& session,
                                 const Eigen::MatrixXd& log_probs, const word_span& span,
                                 const Eigen::VectorXd& mask) {
    detail::check_span(session, span);
    double lead = detail::lead_log_prob(log_probs, span);
    int last = span.start_pos + static_cast<int>(span.token_ids.size()) - 1;
    double b_before = boundary_mass(log_probs.row(span.start_pos - 1).transpose(), mask);
    double b_after = boundary_mass(log_probs.row(last).transpose(), mask);
    if (!(b_before > 0.0))
        throw numerical_error("measures: degenerate boundary mass B(ctx) = 0, cannot renormalize");
    double log_p = lead + std::log(std::max(b_after, kProbFloor)) - std::log(b_before);
    double p = std::exp(std::min(log_p, 0.0));  // clamp to (0, 1]
    return std::max(p, kProbFloor);
}

template <typename Scalar>
surprisal_record word_surprisal(const lens_session<Scalar>& session,
                                const Eigen::MatrixXd& log_probs, const word_span& span,
                                int layer, decoding_mode mode, const Eigen::VectorXd* mask) {
    detail::check_span(session, span);
    double s;
    if (mode == decoding_mode::leading) {
        s = -detail::lead_log_prob(log_probs, span);
    } else {
        if (!mask)
            throw data_error("measures: trailing decoding requires a boundary mask");
        s = -std::log(trailing_word_probability(session, log_probs, span, *mask));
    }
    return surprisal_record{layer, s};
}

// Convenience overloads that run the forward pass themselves (toy scale).

template <typename Scalar>
surprisal_record word_surprisal(const model<Scalar>& m, const std::vector<int>& sentence_ids,
                                const word_span& span, int layer,
                                decoding_mode mode = decoding_mode::leading,
                                const vocabulary* vocab = nullptr) {
    lens_session<Scalar> session(m, sentence_ids);
    Eigen::MatrixXd log_probs = session.log_probs(layer);
    if (mode == decoding_mode::leading)
        return word_surprisal(session, log_probs, span, layer, mode, nullptr);
    if (!vocab) throw data_error("measures: trailing decoding requires a vocabulary");
    Eigen::VectorXd mask = boundary_mask(*vocab);
    return word_surprisal(session, log_probs, span, layer, mode, &mask);
}

template <typename Scalar>
double trailing_word_probability(const model<Scalar>& m, const std::vector<int>& sentence_ids,
                                 const word_span& span, int layer, const vocabulary& vocab) {
    lens_session<Scalar> session(m, sentence_ids);
    Eigen::MatrixXd log_probs = session.log_probs(layer);
    Eigen::VectorXd mask = boundary_mask(vocab);
    return trailing_word_probability(session, log_probs, span, mask);
}

// SU + KL + JS for one word between a shallow and a deep layer. KL and JS sum
// position-wise divergences between the distributions predicting each subword
// (deep = Q, shallow = P); su is the raw surprisal difference (z-normalization
// happens at regression time).
template <typename Scalar>
update_record word_update_measures(const lens_session<Scalar>& session,
                                   const Eigen::MatrixXd& shallow_log_probs,
                                   const Eigen::MatrixXd& deep_log_probs, const word_span& span,
                                   int shallow_layer, int deep_layer, decoding_mode mode,
                                   const Eigen::VectorXd* mask) {
    detail::check_span(session, span);
    update_record rec;
    double s_shallow =
        word_surprisal(session, shallow_log_probs, span, shallow_layer, mode, mask).surprisal_nats;
    double s_deep =
        word_surprisal(session, deep_log_probs, span, deep_layer, mode, mask).surprisal_nats;
    rec.su = surprisal_update(s_shallow, s_deep);
    for (size_t j = 0; j < span.token_ids.size(); ++j) {
        int row = span.start_pos + static_cast<int>(j) - 1;
        Eigen::VectorXd q = deep_log_probs.row(row).array().exp();
        Eigen::VectorXd p = shallow_log_probs.row(row).array().exp();
        rec.kl += kl_divergence(q, p);
        rec.js += js_divergence(q, p);
    }
    return rec;
}

template <typename Scalar>
update_record word_update_measures(const model<Scalar>& m, const std::vector<int>& sentence_ids,
                                   const word_span& span, int shallow_layer, int deep_layer,
                                   decoding_mode mode = decoding_mode::leading,
                                   const vocabulary* vocab = nullptr) {
    lens_session<Scalar> session(m, sentence_ids);
    Eigen::MatrixXd shallow_lp = session.log_probs(shallow_layer);
    Eigen::MatrixXd deep_lp = session.log_probs(deep_layer);
    Eigen::VectorXd mask;
    if (mode == decoding_mode::trailing) {
        if (!vocab) throw data_error("measures: trailing decoding requires a vocabulary");
        mask = boundary_mask(*vocab);
    }
    return word_update_measures(session, shallow_lp, deep_lp, span, shallow_layer, deep_layer,
                                mode, mode == decoding_mode::trailing ? &mask : nullptr);
}

} // namespace layerlens
