#pragma once

// SAP-format reading-time data: participant-averaged (or raw per-participant)
// word rows for matched sentence pairs and fillers, plus the frequency
// lexicon and RoI/condition partitions.
//
// Dataset CSV schema (header mandatory, UTF-8, comma separated):
//   item_id, phenomenon, condition (+|-|filler), word_index, word_text,
//   [participant_id,] rt_ms, is_disambiguating (0/1)
// With a participant_id column, rows are arithmetic-mean-collapsed per
// (item, condition, word). Lexicon: two-column TSV `word<TAB>log10_freq`.

#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "layerlens/common.hpp"

namespace layerlens {

struct annotated_word {
    int word_index = 0;  // 1-based within sentence
    std::string text;
    double rt_ms = 0.0;  // participant-mean reading time
    bool is_disambiguating = false;
};

struct annotated_sentence {
    std::string item_id;
    std::string phenomenon;
    std::string condition;  // "+", "-" or "filler"
    std::vector<annotated_word> words;

    // 1-based index of the disambiguating word; -1 when absent (fillers).
    int t_star() const {
        for (const auto& w : words)
            if (w.is_disambiguating) return w.word_index;
        return -1;
    }
};

struct sentence_pair {
    std::string item_id;
    std::string phenomenon;  // MVRR | NPS | NPZ | RC | Attachment
    annotated_sentence ambiguous;    // D+
    annotated_sentence unambiguous;  // D-
    int t_star_plus = -1;
    int t_star_minus = -1;
};

struct annotated_dataset {
    std::vector<sentence_pair> pairs;
    std::vector<annotated_sentence> fillers;

    std::vector<std::string> phenomena() const {
        std::vector<std::string> names;
        for (const auto& p : pairs)
            if (std::find(names.begin(), names.end(), p.phenomenon) == names.end())
                names.push_back(p.phenomenon);
        return names;
    }

    size_t target_word_count() const {
        size_t n = 0;
        for (const auto& p : pairs) n += p.ambiguous.words.size() + p.unambiguous.words.size();
        return n;
    }
};

// ---------------------------------------------------------------------------
// Loading.
// ---------------------------------------------------------------------------

namespace detail {

inline void validate_sentence(const annotated_sentence& s, bool is_filler) {
    if (s.words.empty())
        throw data_error("dataset: sentence " + s.item_id + "/" + s.condition + " has no words");
    std::set<int> seen;
    for (const auto& w : s.words) {
        if (!seen.insert(w.word_index).second)
            throw data_error("dataset: duplicate word index " + std::to_string(w.word_index) +
                             " in sentence " + s.item_id + "/" + s.condition);
        if (!std::isfinite(w.rt_ms) || w.rt_ms <= 0)
            throw data_error("dataset: non-positive reading time at " + s.item_id + "/" +
                             s.condition + " word " + std::to_string(w.word_index));
        if (w.word_index < 1 || w.word_index > static_cast<int>(s.words.size()))
            throw data_error("dataset: word indices of " + s.item_id + "/" + s.condition +
                             " are not 1..n");
    }
    int n_disamb = 0;
    for (const auto& w : s.words) n_disamb += w.is_disambiguating ? 1 : 0;
    if (is_filler) {
        if (n_disamb != 0)
            throw data_error("dataset: filler sentence " + s.item_id +
                             " carries a disambiguating marker");
    } else if (n_disamb != 1) {
        throw data_error("dataset: target sentence " + s.item_id + "/" + s.condition + " has " +
                         std::to_string(n_disamb) + " disambiguating words (expected exactly 1)");
    }
}

} // namespace detail

inline annotated_dataset load_dataset(const std::filesystem::path& file) {
    auto rows = csv::parse(read_file(file), "dataset");
    if (rows.empty()) throw data_error("dataset: empty file: " + file.string());

    const auto& header = rows[0];
    auto col = [&](const std::string& name) -> std::optional<size_t> {
        for (size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        return std::nullopt;
    };
    auto require = [&](const std::string& name) {
        auto c = col(name);
        if (!c) throw data_error("dataset: missing column '" + name + "' in " + file.string());
        return *c;
    };
    size_t c_item = require("item_id"), c_phen = require("phenomenon");
    size_t c_cond = require("condition"), c_widx = require("word_index");
    size_t c_text = require("word_text"), c_rt = require("rt_ms");
    size_t c_dis = require("is_disambiguating");
    std::optional<size_t> c_participant = col("participant_id");

    // Accumulate per (item, condition) in first-appearance order; in raw mode
    // average rt over participants per word.
    struct word_acc {
        std::string text;
        double rt_sum = 0;
        int rt_count = 0;
        bool is_disamb = false;
        bool first = true;
    };
    struct sentence_acc {
        std::string item_id, phenomenon, condition;
        std::map<int, word_acc> words;
    };
    std::vector<sentence_acc> order;
    std::map<std::pair<std::string, std::string>, size_t> index;

    for (size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        if (row.size() == 1 && row[0].empty()) continue;  // trailing blank line
        if (row.size() != header.size())
            throw data_error("dataset: row " + std::to_string(r + 1) + " has " +
                             std::to_string(row.size()) + " fields, expected " +
                             std::to_string(header.size()));
        auto fail = [&](const std::string& why) {
            return data_error("dataset: row " + std::to_string(r + 1) + ": " + why);
        };
        const std::string& condition = row[c_cond];
        if (condition != "+" && condition != "-" && condition != "filler")
            throw fail("condition must be +, - or filler, got '" + condition + "'");
        int word_index;
        double rt;
        try {
            word_index = static_cast<int>(parse_long(row[c_widx]));
            rt = parse_double(row[c_rt]);
        } catch (const data_error& e) {
            throw fail(e.what());
        }
        const std::string& dis = row[c_dis];
        if (dis != "0" && dis != "1") throw fail("is_disambiguating must be 0 or 1");

        auto key = std::make_pair(row[c_item], condition);
        auto it = index.find(key);
        if (it == index.end()) {
            it = index.emplace(key, order.size()).first;
            order.push_back({row[c_item], row[c_phen], condition, {}});
        }
        sentence_acc& sent = order[it->second];
        if (sent.phenomenon != row[c_phen]) throw fail("inconsistent phenomenon for " + row[c_item]);
        word_acc& acc = sent.words[word_index];
        if (acc.first) {
            acc.text = row[c_text];
            acc.is_disamb = dis == "1";
            acc.first = false;
        } else {
            if (!c_participant)
                throw fail("duplicate word index " + std::to_string(word_index) + " for " +
                           row[c_item] + "/" + condition);
            if (acc.text != row[c_text] || acc.is_disamb != (dis == "1"))
                throw fail("participants disagree on word " + std::to_string(word_index) + " of " +
                           row[c_item] + "/" + condition);
        }
        acc.rt_sum += rt;
        acc.rt_count += 1;
    }

    // Materialize, validate, and pair up.
    annotated_dataset dataset;
    std::map<std::string, size_t> pair_index;
    for (const auto& acc : order) {
        annotated_sentence sent;
        sent.item_id = acc.item_id;
        sent.phenomenon = acc.phenomenon;
        sent.condition = acc.condition;
        for (const auto& [idx, w] : acc.words)
            sent.words.push_back({idx, w.text, w.rt_sum / w.rt_count, w.is_disamb});
        bool is_filler = acc.condition == "filler";
        detail::validate_sentence(sent, is_filler);
        if (is_filler) {
            dataset.fillers.push_back(std::move(sent));
            continue;
        }
        auto it = pair_index.find(sent.item_id);
        if (it == pair_index.end()) {
            it = pair_index.emplace(sent.item_id, dataset.pairs.size()).first;
            sentence_pair p;
            p.item_id = sent.item_id;
            p.phenomenon = sent.phenomenon;
            dataset.pairs.push_back(std::move(p));
        }
        sentence_pair& pair = dataset.pairs[it->second];
        if (pair.phenomenon != sent.phenomenon)
            throw data_error("dataset: item " + sent.item_id + " has inconsistent phenomena");
        if (sent.condition == "+") {
            if (!pair.ambiguous.words.empty())
                throw data_error("dataset: item " + sent.item_id + " has two D+ sentences");
            pair.t_star_plus = sent.t_star();
            pair.ambiguous = std::move(sent);
        } else {
            if (!pair.unambiguous.words.empty())
                throw data_error("dataset: item " + sent.item_id + " has two D- sentences");
            pair.t_star_minus = sent.t_star();
            pair.unambiguous = std::move(sent);
        }
    }
    for (const auto& pair : dataset.pairs) {
        if (pair.ambiguous.words.empty())
            throw data_error("dataset: item " + pair.item_id + " is missing its D+ sentence");
        if (pair.unambiguous.words.empty())
            throw data_error("dataset: item " + pair.item_id + " is missing its D- sentence");
    }
    return dataset;
}

// ---------------------------------------------------------------------------
// RoI windows and condition partitions.
// ---------------------------------------------------------------------------

enum class roi_scheme { exp1, exp2 };

struct roi_result {
    std::vector<int> indices;  // 1-based word indices, ascending
    bool clipped = false;      // window hit a sentence boundary
};

inline roi_result roi_window(int t_star, int sentence_len, roi_scheme scheme) {
    if (t_star < 1)
        throw data_error("dataset: sentence lacks a disambiguating index (t*)");
    int lo = scheme == roi_scheme::exp1 ? t_star : t_star - 2;
    int hi = scheme == roi_scheme::exp1 ? t_star + 1 : t_star + 2;
    roi_result out;
    for (int k = lo; k <= hi; ++k) {
        if (k < 1 || k > sentence_len) {
            out.clipped = true;
            continue;
        }
        out.indices.push_back(k);
    }
    return out;
}

struct pair_roi {
    roi_result plus;
    roi_result minus;
};

inline pair_roi roi_indices(const sentence_pair& pair, roi_scheme scheme) {
    return {roi_window(pair.t_star_plus, static_cast<int>(pair.ambiguous.words.size()), scheme),
            roi_window(pair.t_star_minus, static_cast<int>(pair.unambiguous.words.size()), scheme)};
}

struct condition_key {
    bool ambiguous = false;  // D+ vs D-
    bool in_roi = false;

    std::string ambiguity_label() const { return ambiguous ? "D+" : "D-"; }
    std::string region_label() const { return in_roi ? "RoI" : "non-RoI"; }
    bool operator<(const condition_key& o) const {
        return std::tie(ambiguous, in_roi) < std::tie(o.ambiguous, o.in_roi);
    }
};

// Reference to one analyzed (pair-side) token.
struct token_ref {
    size_t pair_index = 0;
    bool ambiguous_side = false;
    int word_index = 0;  // 1-based
};

inline std::map<condition_key, std::vector<token_ref>> split_conditions(
    const annotated_dataset& dataset, roi_scheme scheme) {
    std::map<condition_key, std::vector<token_ref>> buckets;
    for (const condition_key key : {condition_key{false, false}, condition_key{false, true},
                                    condition_key{true, false}, condition_key{true, true}})
        buckets[key];  // four buckets even when empty
    for (size_t pi = 0; pi < dataset.pairs.size(); ++pi) {
        const sentence_pair& pair = dataset.pairs[pi];
        pair_roi roi = roi_indices(pair, scheme);
        for (bool amb_side : {true, false}) {
            const annotated_sentence& sent = amb_side ? pair.ambiguous : pair.unambiguous;
            const std::vector<int>& window = amb_side ? roi.plus.indices : roi.minus.indices;
            for (const auto& w : sent.words) {
                bool in = std::find(window.begin(), window.end(), w.word_index) != window.end();
                buckets[condition_key{amb_side, in}].push_back({pi, amb_side, w.word_index});
            }
        }
    }
    return buckets;
}

// ---------------------------------------------------------------------------
// Frequency lexicon.
// ---------------------------------------------------------------------------

class frequency_lexicon {
public:
    static frequency_lexicon load(const std::filesystem::path& file,
                                  std::optional<double> oov_override = std::nullopt) {
        frequency_lexicon lex;
        std::string text = read_file(file);
        size_t pos = 0;
        size_t line_no = 0;
        double min_value = std::numeric_limits<double>::infinity();
        while (pos < text.size()) {
            size_t eol = text.find('\n', pos);
            if (eol == std::string::npos) eol = text.size();
            std::string_view line(text.data() + pos, eol - pos);
            pos = eol + 1;
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
            if (line.empty()) continue;
            size_t tab = line.find('\t');
            if (tab == std::string_view::npos)
                throw data_error("dataset: lexicon line " + std::to_string(line_no) +
                                 " is not word<TAB>log10_freq");
            std::string word = to_lower_ascii(line.substr(0, tab));
            double value = parse_double(line.substr(tab + 1));
            if (!std::isfinite(value))
                throw data_error("dataset: lexicon line " + std::to_string(line_no) +
                                 " has a non-finite value");
            lex.values_[word] = value;
            min_value = std::min(min_value, value);
        }
        if (lex.values_.empty())
            throw data_error("dataset: empty lexicon: " + file.string());
        lex.oov_value_ = oov_override.value_or(min_value - 1.0);
        return lex;
    }

    // Word-form normalization: ASCII lowercase + strip boundary punctuation.
    static std::string normalize(const std::string& word) {
        static const std::string punct = ".,;:!?\"'()[]`";
        size_t begin = 0, end = word.size();
        while (begin < end && punct.find(word[begin]) != std::string::npos) ++begin;
        while (end > begin && punct.find(word[end - 1]) != std::string::npos) --end;
        return to_lower_ascii(word.substr(begin, end - begin));
    }

    double lookup(const std::string& word) const {
        auto it = values_.find(normalize(word));
        return it == values_.end() ? oov_value_ : it->second;
    }

    double oov_value() const { return oov_value_; }
    size_t size() const { return values_.size(); }

private:
    std::map<std::string, double> values_;
    double oov_value_ = 0.0;
};

inline double lookup_logfreq(const frequency_lexicon& lex, const std::string& word) {
    return lex.lookup(word);
}

// Word length in Unicode code points (the regression's character count).
inline int word_length(const std::string& text) {
    int n = 0;
    for (char c : text)
        if ((static_cast<unsigned char>(c) & 0xC0) != 0x80) ++n;
    return n;
}

} // namespace layerlens
