#pragma once

// Extraction pipeline: tokenize each annotated sentence, run one forward pass,
// decode every layer's next-token distributions, and emit the word × layer
// measures table (surprisal per layer plus the pair-level SU/KL/JS update
// measures for the configured shallow/deep layers).

#include <algorithm>
#include <filesystem>
#include <map>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "layerlens/common.hpp"
#include "layerlens/dataset.hpp"
#include "layerlens/lens.hpp"
#include "layerlens/measures.hpp"
#include "layerlens/model.hpp"
#include "layerlens/tokenizer.hpp"

namespace layerlens {

struct extract_options {
    std::string decoding = "trailing";
    int shallow_layer = 1;
    int deep_layer = -1;  // -1: top block
    unsigned jobs = 1;
};

// One word of the extraction corpus with its per-layer surprisal profile.
struct word_record {
    std::string item_id;
    std::string condition;  // "+", "-" or "filler"
    std::string phenomenon;
    int word_index = 0;  // 1-based within sentence
    std::string word_text;
    double rt_ms = 0.0;
    bool is_disambiguating = false;
    int sentence_ord = 0;  // sentence index in corpus order (spillover scope)
    std::vector<double> surprisal;  // indexed by layer, 0..n_layers
    double su_raw = 0.0;  // s_shallow - s_deep, un-normalized
    double kl = 0.0;
    double js = 0.0;
};

struct extraction_table {
    std::vector<word_record> words;  // corpus order: pair sides, then fillers
    int n_layers = 0;
    int shallow_layer = 1;
    int deep_layer = 12;
    std::string decoding = "trailing";
};

// ---------------------------------------------------------------------------
// Sentence tokenization with word alignment.
// ---------------------------------------------------------------------------

struct tokenized_sentence {
    std::vector<int> ids;          // [<|endoftext|>] + sentence subwords
    std::vector<word_span> spans;  // one span per word, in order
};

// Words are encoded one at a time with their leading space; under byte-level
// BPE the concatenation equals the whole-sentence encoding because merges
// never cross pre-token (whitespace) boundaries. The check below makes that
// assumption explicit per sentence.
inline tokenized_sentence tokenize_sentence(const tokenizer& tok, const annotated_sentence& s) {
    tokenized_sentence out;
    out.ids.push_back(tok.vocab().eot_id());
    std::string full;
    for (const auto& w : s.words) {
        word_span span;
        span.word_text = " " + w.text;
        span.token_ids = tok.encode(span.word_text);
        if (span.token_ids.empty())
            throw data_error("pipeline: word '" + w.text + "' in " + s.item_id +
                             " tokenized to nothing");
        span.start_pos = static_cast<int>(out.ids.size());
        full += span.word_text;
        out.ids.insert(out.ids.end(), span.token_ids.begin(), span.token_ids.end());
        out.spans.push_back(std::move(span));
    }
    std::vector<int> whole = tok.encode(full);
    if (whole.size() + 1 != out.ids.size() ||
        !std::equal(whole.begin(), whole.end(), out.ids.begin() + 1))
        throw data_error("pipeline: per-word tokenization of " + s.item_id + "/" + s.condition +
                         " does not align with the sentence tokenization");
    return out;
}

// ---------------------------------------------------------------------------
// Extraction.
// ---------------------------------------------------------------------------

namespace detail {

template <typename Scalar>
std::vector<word_record> extract_sentence(const model<Scalar>& m, const tokenizer& tok,
                                          const annotated_sentence& s, int ord,
                                          const extract_options& opt,
                                          const translator_set<Scalar>* translators,
                                          const Eigen::VectorXd& mask) {
    int n_layers = m.config().n_layers;
    int shallow = opt.shallow_layer;
    int deep = opt.deep_layer < 0 ? n_layers : opt.deep_layer;
    if (shallow < 0 || shallow > n_layers || deep < 0 || deep > n_layers)
        throw usage_error("pipeline: shallow/deep layer out of range 0.." +
                          std::to_string(n_layers));
    decoding_mode mode = decoding_from_string(opt.decoding);
    const Eigen::VectorXd* mask_ptr = mode == decoding_mode::trailing ? &mask : nullptr;

    tokenized_sentence ts = tokenize_sentence(tok, s);
    lens_session<Scalar> session(m, ts.ids, translators);

    std::vector<word_record> records(s.words.size());
    for (size_t i = 0; i < s.words.size(); ++i) {
        word_record& rec = records[i];
        rec.item_id = s.item_id;
        rec.condition = s.condition;
        rec.phenomenon = s.phenomenon;
        rec.word_index = s.words[i].word_index;
        rec.word_text = s.words[i].text;
        rec.rt_ms = s.words[i].rt_ms;
        rec.is_disambiguating = s.words[i].is_disambiguating;
        rec.sentence_ord = ord;
        rec.surprisal.assign(static_cast<size_t>(n_layers) + 1, 0.0);
    }

    // One layer in memory at a time, keeping copies of the shallow and deep
    // distributions for the update measures.
    Eigen::MatrixXd shallow_lp, deep_lp;
    for (int layer = 0; layer <= n_layers; ++layer) {
        Eigen::MatrixXd lp = session.log_probs(layer);
        for (size_t i = 0; i < ts.spans.size(); ++i)
            records[i].surprisal[static_cast<size_t>(layer)] =
                word_surprisal(session, lp, ts.spans[i], layer, mode, mask_ptr).surprisal_nats;
        if (layer == shallow) shallow_lp = lp;
        if (layer == deep) deep_lp = std::move(lp);
    }
    for (size_t i = 0; i < ts.spans.size(); ++i) {
        update_record u = word_update_measures(session, shallow_lp, deep_lp, ts.spans[i], shallow,
                                               deep, mode, mask_ptr);
        records[i].su_raw = u.su;
        records[i].kl = u.kl;
        records[i].js = u.js;
    }
    return records;
}

} // namespace detail

template <typename Scalar>
extraction_table extract_table(const model<Scalar>& m, const tokenizer& tok,
                               const annotated_dataset& ds, const extract_options& opt = {},
                               const translator_set<Scalar>* translators = nullptr) {
    std::vector<const annotated_sentence*> sentences;
    for (const auto& p : ds.pairs) {
        sentences.push_back(&p.ambiguous);
        sentences.push_back(&p.unambiguous);
    }
    for (const auto& f : ds.fillers) sentences.push_back(&f);

    Eigen::VectorXd mask = boundary_mask(tok.vocab());
    std::vector<std::vector<word_record>> slots(sentences.size());
    parallel_for(sentences.size(), opt.jobs, [&](size_t i) {
        slots[i] = detail::extract_sentence(m, tok, *sentences[i], static_cast<int>(i), opt,
                                            translators, mask);
    });

    extraction_table table;
    table.n_layers = m.config().n_layers;
    table.shallow_layer = opt.shallow_layer;
    table.deep_layer = opt.deep_layer < 0 ? table.n_layers : opt.deep_layer;
    table.decoding = opt.decoding;
    for (auto& slot : slots)
        for (auto& rec : slot) table.words.push_back(std::move(rec));
    return table;
}

// ---------------------------------------------------------------------------
// Measures CSV: one row per word per layer; the pair-level update measures
// repeat on every layer row of their word.
// ---------------------------------------------------------------------------

inline const std::vector<std::string> kMeasuresColumns = {
    "item_id", "condition", "word_index", "word_text", "layer",
    "surprisal_nats", "su_raw", "kl", "js"};

inline std::string measures_csv(const extraction_table& table) {
    csv::writer w;
    w.row(kMeasuresColumns);
    for (const auto& rec : table.words) {
        for (int layer = 0; layer <= table.n_layers; ++layer) {
            w.row({rec.item_id, rec.condition, std::to_string(rec.word_index), rec.word_text,
                   std::to_string(layer), format_double(rec.surprisal[static_cast<size_t>(layer)]),
                   format_double(rec.su_raw), format_double(rec.kl), format_double(rec.js)});
        }
    }
    return w.str();
}

inline void write_measures_csv(const std::filesystem::path& path, const extraction_table& table) {
    write_file_atomic(path, measures_csv(table));
}

// Reloads a measures CSV, joining word metadata (reading times, phenomenon,
// disambiguation flags, corpus order) back in from the dataset it was
// extracted from.
inline extraction_table load_measures_csv(const std::filesystem::path& path,
                                          const annotated_dataset& ds) {
    auto rows = csv::parse(read_file(path), path.string());
    if (rows.empty()) throw data_error("pipeline: empty measures file: " + path.string());
    const auto& header = rows[0];
    auto col = [&](const std::string& name) {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end())
            throw data_error("pipeline: measures file lacks column '" + name + "'");
        return static_cast<size_t>(it - header.begin());
    };
    size_t c_item = col("item_id"), c_cond = col("condition"), c_widx = col("word_index");
    size_t c_layer = col("layer"), c_surp = col("surprisal_nats");
    size_t c_su = col("su_raw"), c_kl = col("kl"), c_js = col("js");

    struct parsed_word {
        std::map<int, double> surprisal;
        double su_raw = 0, kl = 0, js = 0;
    };
    using word_key = std::tuple<std::string, std::string, int>;
    std::map<word_key, parsed_word> parsed;
    int max_layer = 0;
    for (size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        if (row.size() != header.size())
            throw data_error("pipeline: measures row " + std::to_string(r + 1) +
                             " has wrong field count");
        word_key key{row[c_item], row[c_cond], static_cast<int>(parse_long(row[c_widx]))};
        int layer = static_cast<int>(parse_long(row[c_layer]));
        if (layer < 0) throw data_error("pipeline: negative layer in measures file");
        max_layer = std::max(max_layer, layer);
        parsed_word& pw = parsed[key];
        if (!pw.surprisal.emplace(layer, parse_double(row[c_surp])).second)
            throw data_error("pipeline: duplicate measures row for " + row[c_item] + "/" +
                             row[c_cond] + " word " + row[c_widx] + " layer " + row[c_layer]);
        pw.su_raw = parse_double(row[c_su]);
        pw.kl = parse_double(row[c_kl]);
        pw.js = parse_double(row[c_js]);
    }

    std::vector<const annotated_sentence*> sentences;
    for (const auto& p : ds.pairs) {
        sentences.push_back(&p.ambiguous);
        sentences.push_back(&p.unambiguous);
    }
    for (const auto& f : ds.fillers) sentences.push_back(&f);

    extraction_table table;
    table.n_layers = max_layer;
    size_t consumed = 0;
    for (size_t ord = 0; ord < sentences.size(); ++ord) {
        const annotated_sentence& s = *sentences[ord];
        for (const auto& w : s.words) {
            auto it = parsed.find(word_key{s.item_id, s.condition, w.word_index});
            if (it == parsed.end())
                throw data_error("pipeline: measures file lacks word " +
                                 std::to_string(w.word_index) + " of " + s.item_id + "/" +
                                 s.condition);
            const parsed_word& pw = it->second;
            if (pw.surprisal.size() != static_cast<size_t>(max_layer) + 1)
                throw data_error("pipeline: incomplete layer coverage for " + s.item_id + "/" +
                                 s.condition + " word " + std::to_string(w.word_index));
            word_record rec;
            rec.item_id = s.item_id;
            rec.condition = s.condition;
            rec.phenomenon = s.phenomenon;
            rec.word_index = w.word_index;
            rec.word_text = w.text;
            rec.rt_ms = w.rt_ms;
            rec.is_disambiguating = w.is_disambiguating;
            rec.sentence_ord = static_cast<int>(ord);
            rec.surprisal.resize(static_cast<size_t>(max_layer) + 1);
            for (const auto& [layer, value] : pw.surprisal)
                rec.surprisal[static_cast<size_t>(layer)] = value;
            rec.su_raw = pw.su_raw;
            rec.kl = pw.kl;
            rec.js = pw.js;
            table.words.push_back(std::move(rec));
            ++consumed;
        }
    }
    if (consumed != parsed.size())
        throw data_error("pipeline: measures file has " +
                         std::to_string(parsed.size() - consumed) +
                         " word(s) not present in the dataset");
    return table;
}

// ---------------------------------------------------------------------------
// Extraction manifest.
// ---------------------------------------------------------------------------

struct asset_paths {
    std::filesystem::path config;
    std::filesystem::path weights;
    std::filesystem::path vocab;
    std::filesystem::path merges;
};

inline std::string manifest_json(const model_config& config, const asset_paths& assets,
                                 const extract_options& opt, bool tuned_lens,
                                 const nlohmann::json& run_config = nlohmann::json::object()) {
    int deep = opt.deep_layer < 0 ? config.n_layers : opt.deep_layer;
    nlohmann::json j;
    j["decoding"] = opt.decoding;
    j["deep_layer"] = deep;
    j["lens"] = tuned_lens ? "tuned" : "logit";
    j["model"] = {{"d_model", config.d_model},
                  {"ln_epsilon", config.ln_epsilon},
                  {"max_context", config.max_context},
                  {"n_heads", config.n_heads},
                  {"n_layers", config.n_layers},
                  {"vocab_size", config.vocab_size},
                  {"weights_sha256", sha256::file_digest(assets.weights)}};
    j["run_config"] = run_config;
    j["shallow_layer"] = opt.shallow_layer;
    j["tokenizer"] = {{"merges_sha256", sha256::file_digest(assets.merges)},
                      {"vocab_sha256", sha256::file_digest(assets.vocab)}};
    j["znorm_scope"] = "corpus";
    return j.dump(2) + "\n";
}

struct manifest_data {
    int shallow_layer = 1;
    int deep_layer = 12;
    std::string decoding = "trailing";
};

inline manifest_data read_manifest(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw data_error("pipeline: bad manifest JSON " + path.string() + ": " + e.what());
    }
    manifest_data m;
    m.shallow_layer = j.at("shallow_layer").get<int>();
    m.deep_layer = j.at("deep_layer").get<int>();
    m.decoding = j.at("decoding").get<std::string>();
    return m;
}

} // namespace layerlens
