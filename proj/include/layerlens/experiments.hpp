#pragma once

// The three analyses over an extraction table:
//   exp1 — per-layer garden-path slowdowns: an OLS reading-time model trained
//          on filler sentences predicts ms at the disambiguating region; the
//          D+ minus D- difference is compared with the human effect.
//   exp2 — per-layer in-sample ΔLL for surprisal over the lexical baseline in
//          the four {D+,D-} × {RoI, non-RoI} buckets, plus the Pearson
//          correlation of ΔLL with layer index over a configured layer range.
//   exp3 — update measures (SU, KL, JS) and deep surprisal against the
//          lexical baseline on the full pair corpus and the RoI subset, with
//          likelihood-ratio tests; plus surprisal+JS over surprisal alone.
//
// Features are always built over the whole extraction corpus (targets and
// fillers) so spillover imputation and z-normalization see one consistent
// scope; row subsets are taken afterwards.

#include <cmath>
#include <map>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "layerlens/common.hpp"
#include "layerlens/dataset.hpp"
#include "layerlens/pipeline.hpp"
#include "layerlens/stats.hpp"

namespace layerlens {

// ---------------------------------------------------------------------------
// Shared scaffolding.
// ---------------------------------------------------------------------------

namespace detail {

// Lexical skeleton of the regression observations; `interest` (and `extra`)
// get filled per analysis. Frequencies enter in natural log.
inline std::vector<word_obs> base_observations(const extraction_table& table,
                                               const frequency_lexicon& lex) {
    std::vector<word_obs> obs;
    obs.reserve(table.words.size());
    for (const auto& w : table.words) {
        word_obs o;
        o.y = w.rt_ms;
        o.length = word_length(w.word_text);
        o.logfreq = lookup_logfreq(lex, w.word_text) * std::log(10.0);
        o.sentence_id = w.sentence_ord;
        obs.push_back(o);
    }
    return obs;
}

using word_key = std::tuple<std::string, std::string, int>;  // item, condition, word_index

inline std::map<word_key, size_t> corpus_index(const extraction_table& table) {
    std::map<word_key, size_t> index;
    for (size_t i = 0; i < table.words.size(); ++i) {
        const auto& w = table.words[i];
        if (!index.emplace(word_key{w.item_id, w.condition, w.word_index}, i).second)
            throw data_error("experiments: duplicate word " + w.item_id + "/" + w.condition +
                             "/" + std::to_string(w.word_index) + " in extraction table");
    }
    return index;
}

inline size_t lookup_row(const std::map<word_key, size_t>& index, const std::string& item,
                         const std::string& condition, int word_index) {
    auto it = index.find(word_key{item, condition, word_index});
    if (it == index.end())
        throw data_error("experiments: extraction table lacks word " + item + "/" + condition +
                         "/" + std::to_string(word_index));
    return it->second;
}

inline void set_interest_layer(std::vector<word_obs>& obs, const extraction_table& table,
                               int layer) {
    for (size_t i = 0; i < obs.size(); ++i)
        obs[i].interest = table.words[i].surprisal[static_cast<size_t>(layer)];
}

inline std::vector<double> layer_surprisal_z(const extraction_table& table, int layer) {
    std::vector<double> values;
    values.reserve(table.words.size());
    for (const auto& w : table.words) values.push_back(w.surprisal[static_cast<size_t>(layer)]);
    return z_normalize(values);
}

inline double predict_row(const regression_fit& fit, const feature_row& row,
                          const std::vector<size_t>& columns) {
    feature_row sub;
    sub.y = row.y;
    sub.predictors.reserve(columns.size());
    for (size_t c : columns) sub.predictors.push_back(row.predictors[c]);
    return predict(fit, sub);
}

inline void check_layer(int layer, int n_layers, const std::string& what) {
    if (layer < 0 || layer > n_layers)
        throw usage_error("experiments: " + what + " layer " + std::to_string(layer) +
                          " out of range 0.." + std::to_string(n_layers));
}

} // namespace detail

// ---------------------------------------------------------------------------
// Experiment 1.
// ---------------------------------------------------------------------------

struct exp1_row {
    std::string phenomenon;
    int layer = 0;
    double estimated_ms = 0.0;
    double human_ms = 0.0;
    size_t n_pairs = 0;
};

struct exp1_result {
    std::vector<exp1_row> rows;
};

inline exp1_result run_exp1(const extraction_table& table, const annotated_dataset& ds,
                            const frequency_lexicon& lex) {
    auto obs = detail::base_observations(table, lex);
    auto index = detail::corpus_index(table);

    std::vector<size_t> filler_rows;
    for (size_t i = 0; i < table.words.size(); ++i)
        if (table.words[i].condition == "filler") filler_rows.push_back(i);
    if (filler_rows.empty())
        throw data_error("experiments: exp1 needs filler sentences to train on");

    // Slowdown functional: sum over each side's own {t*, t*+1} window, D+
    // minus D-, averaged over a phenomenon's pairs.
    auto slowdown = [&](const sentence_pair& pair, auto&& value_at) {
        pair_roi roi = roi_indices(pair, roi_scheme::exp1);
        double plus = 0, minus = 0;
        for (int k : roi.plus.indices)
            plus += value_at(detail::lookup_row(index, pair.item_id, pair.ambiguous.condition, k));
        for (int k : roi.minus.indices)
            minus +=
                value_at(detail::lookup_row(index, pair.item_id, pair.unambiguous.condition, k));
        return plus - minus;
    };

    std::vector<std::string> phenomena = ds.phenomena();
    std::map<std::string, std::vector<const sentence_pair*>> by_phenomenon;
    for (const auto& p : ds.pairs) by_phenomenon[p.phenomenon].push_back(&p);

    std::map<std::string, double> human_ms;
    for (const auto& ph : phenomena) {
        double total = 0;
        for (const sentence_pair* p : by_phenomenon[ph])
            total += slowdown(*p, [&](size_t row) { return table.words[row].rt_ms; });
        human_ms[ph] = total / static_cast<double>(by_phenomenon[ph].size());
    }

    exp1_result out;
    for (int layer = 0; layer <= table.n_layers; ++layer) {
        detail::set_interest_layer(obs, table, layer);
        feature_matrix fm = build_features(obs);
        regression_fit fit =
            fit_ols(select_columns(select_rows(fm.rows, filler_rows), kFullColumns));
        for (const auto& ph : phenomena) {
            double total = 0;
            for (const sentence_pair* p : by_phenomenon[ph])
                total += slowdown(*p, [&](size_t row) {
                    return detail::predict_row(fit, fm.rows[row], kFullColumns);
                });
            exp1_row row;
            row.phenomenon = ph;
            row.layer = layer;
            row.estimated_ms = total / static_cast<double>(by_phenomenon[ph].size());
            row.human_ms = human_ms[ph];
            row.n_pairs = by_phenomenon[ph].size();
            out.rows.push_back(row);
        }
    }
    return out;
}

inline std::string exp1_csv(const exp1_result& result) {
    csv::writer w;
    w.row({"phenomenon", "layer", "estimated_ms", "human_ms", "n_pairs"});
    for (const auto& r : result.rows)
        w.row({r.phenomenon, std::to_string(r.layer), format_double(r.estimated_ms),
               format_double(r.human_ms), std::to_string(r.n_pairs)});
    return w.str();
}

// ---------------------------------------------------------------------------
// Experiment 2.
// ---------------------------------------------------------------------------

struct exp2_options {
    // Layer range the layerwise correlation is taken over. -1: top block.
    // The default starts at block 1: layer 0 is the embedding reference
    // point, not a lens reading of a block.
    int layer_min = 1;
    int layer_max = -1;
    // 0: in-sample ΔLL (the default protocol). k >= 2: k-fold cross-validated
    // ΔLL with held-out log-likelihoods in the ll_full/ll_baseline columns.
    int cv_folds = 0;
};

struct exp2_ppp_row {
    std::string phenomenon;
    std::string ambiguity;  // "D+" | "D-"
    std::string region;     // "RoI" | "non-RoI"
    int layer = 0;
    double delta_ll = 0.0;
    double ll_full = 0.0;
    double ll_baseline = 0.0;
    size_t n_rows = 0;
};

struct exp2_corr_row {
    std::string phenomenon;
    std::string ambiguity;
    std::string region;
    double pearson_r = 0.0;
    int layer_min = 0;
    int layer_max = 0;
};

struct exp2_result {
    std::vector<exp2_ppp_row> ppp;
    std::vector<exp2_corr_row> correlations;
};

inline exp2_result run_exp2(const extraction_table& table, const annotated_dataset& ds,
                            const frequency_lexicon& lex, const exp2_options& opt = {}) {
    int layer_max = opt.layer_max < 0 ? table.n_layers : opt.layer_max;
    detail::check_layer(opt.layer_min, table.n_layers, "exp2 layer_min");
    detail::check_layer(layer_max, table.n_layers, "exp2 layer_max");
    if (opt.layer_min >= layer_max)
        throw usage_error("experiments: exp2 layer range needs layer_min < layer_max");

    auto obs = detail::base_observations(table, lex);
    auto index = detail::corpus_index(table);
    auto buckets = split_conditions(ds, roi_scheme::exp2);

    // Bucket → phenomenon → corpus row indices.
    const std::vector<condition_key> key_order = {
        {true, true}, {true, false}, {false, true}, {false, false}};
    std::map<condition_key, std::map<std::string, std::vector<size_t>>> rows_of;
    for (const auto& [key, refs] : buckets) {
        for (const token_ref& t : refs) {
            const sentence_pair& pair = ds.pairs[t.pair_index];
            const annotated_sentence& side = t.ambiguous_side ? pair.ambiguous : pair.unambiguous;
            rows_of[key][pair.phenomenon].push_back(
                detail::lookup_row(index, pair.item_id, side.condition, t.word_index));
        }
    }

    // Per-layer feature matrices (interest = that layer's surprisal).
    std::vector<feature_matrix> features;
    features.reserve(static_cast<size_t>(table.n_layers) + 1);
    for (int layer = 0; layer <= table.n_layers; ++layer) {
        detail::set_interest_layer(obs, table, layer);
        features.push_back(build_features(obs));
    }

    exp2_result out;
    for (const auto& ph : ds.phenomena()) {
        for (const condition_key& key : key_order) {
            const std::vector<size_t>& rows = rows_of[key][ph];
            if (rows.empty())
                throw data_error("experiments: exp2 bucket " + key.ambiguity_label() + "/" +
                                 key.region_label() + " is empty for " + ph);
            std::vector<double> xs, ys;
            for (int layer = 0; layer <= table.n_layers; ++layer) {
                auto sub = select_rows(features[static_cast<size_t>(layer)].rows, rows);
                auto full_rows_sub = select_columns(sub, kFullColumns);
                auto base_rows_sub = select_columns(sub, kBaselineColumns);
                exp2_ppp_row row;
                if (opt.cv_folds > 0) {
                    row.ll_full = cv_heldout_loglik(full_rows_sub, opt.cv_folds);
                    row.ll_baseline = cv_heldout_loglik(base_rows_sub, opt.cv_folds);
                    row.delta_ll = row.ll_full - row.ll_baseline;
                } else {
                    ppp_result ppp = delta_ll(fit_ols(full_rows_sub), fit_ols(base_rows_sub));
                    row.delta_ll = ppp.delta_ll;
                    row.ll_full = ppp.ll_full;
                    row.ll_baseline = ppp.ll_baseline;
                }
                row.phenomenon = ph;
                row.ambiguity = key.ambiguity_label();
                row.region = key.region_label();
                row.layer = layer;
                row.n_rows = rows.size();
                out.ppp.push_back(row);
                if (layer >= opt.layer_min && layer <= layer_max) {
                    xs.push_back(static_cast<double>(layer));
                    ys.push_back(row.delta_ll);
                }
            }
            exp2_corr_row corr;
            corr.phenomenon = ph;
            corr.ambiguity = key.ambiguity_label();
            corr.region = key.region_label();
            corr.pearson_r = pearson(xs, ys);
            corr.layer_min = opt.layer_min;
            corr.layer_max = layer_max;
            out.correlations.push_back(corr);
        }
    }
    return out;
}

inline std::string exp2_ppp_csv(const exp2_result& result) {
    csv::writer w;
    w.row({"phenomenon", "ambiguity", "region", "layer", "delta_ll", "ll_full", "ll_baseline",
           "n_rows"});
    for (const auto& r : result.ppp)
        w.row({r.phenomenon, r.ambiguity, r.region, std::to_string(r.layer),
               format_double(r.delta_ll), format_double(r.ll_full), format_double(r.ll_baseline),
               std::to_string(r.n_rows)});
    return w.str();
}

inline std::string exp2_correlations_csv(const exp2_result& result) {
    csv::writer w;
    w.row({"phenomenon", "ambiguity", "region", "pearson_r", "layer_min", "layer_max"});
    for (const auto& r : result.correlations)
        w.row({r.phenomenon, r.ambiguity, r.region, format_double(r.pearson_r),
               std::to_string(r.layer_min), std::to_string(r.layer_max)});
    return w.str();
}

// ---------------------------------------------------------------------------
// Experiment 3.
// ---------------------------------------------------------------------------

struct exp3_options {
    // Layers SU is rebuilt from at analysis time (z-scored per layer over the
    // whole corpus). -1: take the extraction's configured layers.
    int su_shallow = -1;
    int su_deep = -1;
};

struct exp3_row {
    std::string phenomenon;
    std::string scope;    // "full" | "roi"
    std::string measure;  // su | kl | js | surprisal | surprisal_plus_js
    double delta_ll = 0.0;
    double ll_full = 0.0;
    double ll_baseline = 0.0;
    double statistic = 0.0;
    int df = 0;
    double p_value = 1.0;
    size_t n_rows = 0;
};

struct exp3_result {
    std::vector<exp3_row> rows;
};

inline exp3_result run_exp3(const extraction_table& table, const annotated_dataset& ds,
                            const frequency_lexicon& lex, const exp3_options& opt = {}) {
    int shallow = opt.su_shallow < 0 ? table.shallow_layer : opt.su_shallow;
    int deep = opt.su_deep < 0 ? table.deep_layer : opt.su_deep;
    detail::check_layer(shallow, table.n_layers, "exp3 SU shallow");
    detail::check_layer(deep, table.n_layers, "exp3 SU deep");
    if (shallow == deep) throw usage_error("experiments: exp3 SU needs shallow != deep");

    auto obs = detail::base_observations(table, lex);
    auto index = detail::corpus_index(table);

    // Interest columns over the whole corpus.
    std::vector<double> z_shallow = detail::layer_surprisal_z(table, shallow);
    std::vector<double> z_deep = detail::layer_surprisal_z(table, deep);
    size_t n = table.words.size();
    std::vector<double> su(n), kl(n), js(n), surp(n);
    for (size_t i = 0; i < n; ++i) {
        su[i] = z_shallow[i] - z_deep[i];
        kl[i] = table.words[i].kl;
        js[i] = table.words[i].js;
        surp[i] = table.words[i].surprisal[static_cast<size_t>(table.n_layers)];
    }

    auto features_for = [&](const std::vector<double>& interest) {
        for (size_t i = 0; i < n; ++i) obs[i].interest = interest[i];
        return build_features(obs);
    };
    std::map<std::string, feature_matrix> fm;
    fm["su"] = features_for(su);
    fm["kl"] = features_for(kl);
    fm["js"] = features_for(js);
    fm["surprisal"] = features_for(surp);
    // Additive model: surprisal as interest, JS as the extra predictor.
    for (size_t i = 0; i < n; ++i) {
        obs[i].interest = surp[i];
        obs[i].extra = js[i];
    }
    feature_matrix fm_additive = build_features(obs, /*with_extra=*/true);

    // Row scopes per phenomenon: all pair words, and the exp2 RoI windows.
    std::map<std::string, std::vector<size_t>> full_rows, roi_rows;
    for (const auto& pair : ds.pairs) {
        pair_roi roi = roi_indices(pair, roi_scheme::exp2);
        for (bool amb : {true, false}) {
            const annotated_sentence& side = amb ? pair.ambiguous : pair.unambiguous;
            const std::vector<int>& window = amb ? roi.plus.indices : roi.minus.indices;
            for (const auto& w : side.words) {
                size_t row = detail::lookup_row(index, pair.item_id, side.condition, w.word_index);
                full_rows[pair.phenomenon].push_back(row);
                if (std::find(window.begin(), window.end(), w.word_index) != window.end())
                    roi_rows[pair.phenomenon].push_back(row);
            }
        }
    }

    auto tested_row = [&](const std::string& ph, const std::string& scope,
                          const std::string& measure, const std::vector<feature_row>& sub,
                          const std::vector<size_t>& full_cols,
                          const std::vector<size_t>& base_cols) {
        regression_fit full = fit_ols(select_columns(sub, full_cols));
        regression_fit base = fit_ols(select_columns(sub, base_cols));
        ppp_result ppp = delta_ll(full, base);
        lrt_result lrt = lr_test(ppp.delta_ll, ppp.df_diff);
        exp3_row row;
        row.phenomenon = ph;
        row.scope = scope;
        row.measure = measure;
        row.delta_ll = ppp.delta_ll;
        row.ll_full = ppp.ll_full;
        row.ll_baseline = ppp.ll_baseline;
        row.statistic = lrt.statistic;
        row.df = lrt.df;
        row.p_value = lrt.p_value;
        row.n_rows = sub.size();
        return row;
    };

    exp3_result out;
    const std::vector<std::string> measure_order = {"su", "kl", "js", "surprisal"};
    for (const auto& ph : ds.phenomena()) {
        for (const auto& [scope, rows] :
             {std::pair<std::string, const std::vector<size_t>&>{"full", full_rows[ph]},
              std::pair<std::string, const std::vector<size_t>&>{"roi", roi_rows[ph]}}) {
            if (rows.empty())
                throw data_error("experiments: exp3 scope '" + scope + "' is empty for " + ph);
            for (const auto& measure : measure_order) {
                auto sub = select_rows(fm[measure].rows, rows);
                out.rows.push_back(
                    tested_row(ph, scope, measure, sub, kFullColumns, kBaselineColumns));
            }
            auto sub = select_rows(fm_additive.rows, rows);
            out.rows.push_back(tested_row(ph, scope, "surprisal_plus_js", sub,
                                          kFullPlusExtraColumns, kFullColumns));
        }
    }
    return out;
}

inline std::string exp3_csv(const exp3_result& result) {
    csv::writer w;
    w.row({"phenomenon", "scope", "measure", "delta_ll", "ll_full", "ll_baseline", "statistic",
           "df", "p_value", "n_rows"});
    for (const auto& r : result.rows)
        w.row({r.phenomenon, r.scope, r.measure, format_double(r.delta_ll),
               format_double(r.ll_full), format_double(r.ll_baseline),
               format_double(r.statistic), std::to_string(r.df), format_double(r.p_value),
               std::to_string(r.n_rows)});
    return w.str();
}

} // namespace layerlens
