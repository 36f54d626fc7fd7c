#pragma once

// GPT-2 byte-level BPE tokenizer: vocab.json (token -> id) + merges.txt
// (ranked merge rules), with the reference pre-tokenizer split
//   's|'t|'re|'ve|'m|'ll|'d| ?L+| ?N+| ?[^\s L N]+|\s+(?!\S)|\s+
// implemented as a hand-rolled scanner over Unicode codepoints (category
// tables in unicode_tables.hpp). Byte-level mapping makes encode/decode a
// total round-trip for arbitrary byte strings.

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "layerlens/common.hpp"
#include "layerlens/unicode_tables.hpp"

namespace layerlens {

namespace unicode {

inline bool in_ranges(char32_t cp, const codepoint_range* ranges, size_t count) {
    size_t lo = 0, hi = count;
    while (lo < hi) {
        size_t mid = (lo + hi) / 2;
        if (cp > ranges[mid].last)
            lo = mid + 1;
        else if (cp < ranges[mid].first)
            hi = mid;
        else
            return true;
    }
    return false;
}

inline bool is_letter(char32_t cp) {
    return in_ranges(cp, kLetterRanges, std::size(kLetterRanges));
}

inline bool is_number(char32_t cp) {
    return in_ranges(cp, kNumberRanges, std::size(kNumberRanges));
}

inline bool is_whitespace(char32_t cp) {
    return in_ranges(cp, kWhitespaceRanges, std::size(kWhitespaceRanges));
}

// Decodes one UTF-8 codepoint at byte offset i; advances i. Bytes that do not
// form valid UTF-8 are classified as themselves (byte-level BPE keeps them).
inline char32_t decode_utf8(const std::string& s, size_t& i) {
    auto byte = [&](size_t k) { return static_cast<uint8_t>(s[k]); };
    uint8_t b0 = byte(i);
    size_t len = b0 < 0x80 ? 1 : (b0 >> 5) == 0x6 ? 2 : (b0 >> 4) == 0xE ? 3 : (b0 >> 3) == 0x1E ? 4 : 0;
    if (len == 0 || i + len > s.size()) {
        ++i;
        return b0;
    }
    char32_t cp = b0 & (0x7F >> len);
    for (size_t k = 1; k < len; ++k) {
        if ((byte(i + k) & 0xC0) != 0x80) {
            ++i;
            return b0;
        }
        cp = (cp << 6) | (byte(i + k) & 0x3F);
    }
    i += len;
    return len == 1 ? b0 : cp;
}

inline void append_utf8(std::string& out, char32_t cp) {
    if (cp < 0x80) {
        out += static_cast<char>(cp);
    } else if (cp < 0x800) {
        out += static_cast<char>(0xC0 | (cp >> 6));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else if (cp < 0x10000) {
        out += static_cast<char>(0xE0 | (cp >> 12));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    } else {
        out += static_cast<char>(0xF0 | (cp >> 18));
        out += static_cast<char>(0x80 | ((cp >> 12) & 0x3F));
        out += static_cast<char>(0x80 | ((cp >> 6) & 0x3F));
        out += static_cast<char>(0x80 | (cp & 0x3F));
    }
}

} // namespace unicode

// ---------------------------------------------------------------------------
// Byte <-> printable-alphabet mapping (the "bytes_to_unicode" table): the 188
// printable Latin-1 bytes map to themselves, the rest to U+0100+n in byte
// order. Byte 0x20 maps to U+0120 ("Ġ"), the whitespace marker.
// ---------------------------------------------------------------------------

struct byte_alphabet {
    char32_t byte_to_char[256];
    std::unordered_map<char32_t, uint8_t> char_to_byte;

    byte_alphabet() {
        auto printable = [](int b) {
            return (b >= 0x21 && b <= 0x7E) || (b >= 0xA1 && b <= 0xAC) || (b >= 0xAE && b <= 0xFF);
        };
        char32_t next = 256;
        for (int b = 0; b < 256; ++b) {
            char32_t cp = printable(b) ? static_cast<char32_t>(b) : next++;
            byte_to_char[b] = cp;
            char_to_byte.emplace(cp, static_cast<uint8_t>(b));
        }
    }

    static const byte_alphabet& instance() {
        static const byte_alphabet table;
        return table;
    }
};

inline constexpr char32_t kWhitespaceMarkerCp = 0x120;  // "Ġ"
inline const std::string kWhitespaceMarker = "Ġ";
inline const std::string kEndOfTextToken = "<|endoftext|>";

// ---------------------------------------------------------------------------
// Pre-tokenizer scanner. Returns byte ranges of the input.
// ---------------------------------------------------------------------------

namespace detail {

struct pretoken {
    size_t begin;
    size_t end;
};

inline std::vector<pretoken> pretokenize(const std::string& text) {
    // Decode once into codepoints plus their byte offsets.
    std::vector<char32_t> cps;
    std::vector<size_t> offs;  // offs[k] = byte offset of cps[k]; offs[n] = text.size()
    size_t i = 0;
    while (i < text.size()) {
        offs.push_back(i);
        cps.push_back(unicode::decode_utf8(text, i));
    }
    offs.push_back(text.size());
    size_t n = cps.size();

    static const char* kContractions[] = {"'s", "'t", "'re", "'ve", "'m", "'ll", "'d"};

    std::vector<pretoken> out;
    size_t k = 0;
    auto is_sp = [&](size_t p) { return unicode::is_whitespace(cps[p]); };
    while (k < n) {
        // Contraction alternatives ('s 't 're 've 'm 'll 'd), literal and
        // case-sensitive, tried first.
        if (cps[k] == '\'') {
            size_t matched = 0;
            for (const char* c : kContractions) {
                size_t len = std::string_view(c).size();
                if (k + len <= n) {
                    bool ok = true;
                    for (size_t j = 0; j < len; ++j)
                        if (cps[k + j] != static_cast<char32_t>(c[j])) { ok = false; break; }
                    if (ok && len > matched) matched = len;
                }
            }
            if (matched) {
                out.push_back({offs[k], offs[k + matched]});
                k += matched;
                continue;
            }
        }
        size_t start = k;
        size_t j = k + (cps[k] == ' ' ? 1 : 0);  // " ?" — a literal-space prefix only
        if (j < n && unicode::is_letter(cps[j])) {
            while (j < n && unicode::is_letter(cps[j])) ++j;
            out.push_back({offs[start], offs[j]});
            k = j;
        } else if (j < n && unicode::is_number(cps[j])) {
            while (j < n && unicode::is_number(cps[j])) ++j;
            out.push_back({offs[start], offs[j]});
            k = j;
        } else if (j < n && !is_sp(j)) {
            while (j < n && !is_sp(j) && !unicode::is_letter(cps[j]) && !unicode::is_number(cps[j]))
                ++j;
            out.push_back({offs[start], offs[j]});
            k = j;
        } else {
            // Whitespace run: "\s+(?!\S)" keeps the run except its final char
            // when a non-space follows; "\s+" covers the single-char remainder.
            size_t run_end = k;
            while (run_end < n && is_sp(run_end)) ++run_end;
            size_t take = run_end;
            if (run_end < n && run_end - k >= 2) take = run_end - 1;
            out.push_back({offs[k], offs[take]});
            k = take;
        }
    }
    return out;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Vocabulary + BPE.
// ---------------------------------------------------------------------------

class vocabulary {
public:
    static vocabulary load(const std::filesystem::path& vocab_path,
                           const std::filesystem::path& merges_path) {
        vocabulary v;
        nlohmann::json vocab_json;
        try {
            vocab_json = nlohmann::json::parse(read_file(vocab_path));
        } catch (const nlohmann::json::exception& e) {
            throw data_error("tokenizer: malformed vocab JSON (" + vocab_path.string() +
                             "): " + e.what());
        }
        if (!vocab_json.is_object())
            throw data_error("tokenizer: vocab file is not a JSON object");
        v.token_of_.resize(vocab_json.size());
        std::vector<bool> seen(vocab_json.size(), false);
        for (auto it = vocab_json.begin(); it != vocab_json.end(); ++it) {
            size_t id = it.value().get<size_t>();
            if (id >= v.token_of_.size() || seen[id])
                throw data_error("tokenizer: vocab ids are not dense/unique at id " +
                                 std::to_string(id));
            seen[id] = true;
            v.token_of_[id] = it.key();
            v.id_of_.emplace(it.key(), static_cast<int>(id));
        }

        std::string merges_text = read_file(merges_path);
        size_t pos = 0;
        int rank = 0;
        while (pos < merges_text.size()) {
            size_t eol = merges_text.find('\n', pos);
            if (eol == std::string::npos) eol = merges_text.size();
            std::string_view line(merges_text.data() + pos, eol - pos);
            pos = eol + 1;
            if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
            if (line.empty() || line[0] == '#') continue;
            size_t sp = line.find(' ');
            if (sp == std::string_view::npos || line.find(' ', sp + 1) != std::string_view::npos)
                throw data_error("tokenizer: malformed merges line: '" + std::string(line) + "'");
            v.merges_.emplace_back(std::string(line.substr(0, sp)),
                                   std::string(line.substr(sp + 1)));
            v.merge_rank_.emplace(std::string(line), rank++);
        }

        auto eot = v.id_of_.find(kEndOfTextToken);
        v.eot_id_ = eot == v.id_of_.end() ? -1 : eot->second;
        return v;
    }

    size_t size() const { return token_of_.size(); }
    int eot_id() const { return eot_id_; }

    const std::string& token_of(int id) const {
        if (id < 0 || static_cast<size_t>(id) >= token_of_.size())
            throw data_error("tokenizer: token id out of range: " + std::to_string(id));
        return token_of_[static_cast<size_t>(id)];
    }

    int id_of(const std::string& token) const {
        auto it = id_of_.find(token);
        if (it == id_of_.end())
            throw data_error("tokenizer: token not in vocabulary: '" + token + "'");
        return it->second;
    }

    // Rank of the merge "left right", or -1 if absent.
    int merge_rank(const std::string& left, const std::string& right) const {
        auto it = merge_rank_.find(left + " " + right);
        return it == merge_rank_.end() ? -1 : it->second;
    }

    // Ids whose token string begins with the whitespace marker, plus
    // end-of-text: the boundary set B of whitespace-trailing decoding.
    std::vector<int> boundary_token_ids() const {
        std::vector<int> ids;
        for (size_t id = 0; id < token_of_.size(); ++id)
            if (starts_with(token_of_[id], kWhitespaceMarker)) ids.push_back(static_cast<int>(id));
        if (eot_id_ >= 0) ids.push_back(eot_id_);
        return ids;
    }

    const std::vector<std::pair<std::string, std::string>>& merges() const { return merges_; }

private:
    std::unordered_map<std::string, int> id_of_;
    std::vector<std::string> token_of_;
    std::vector<std::pair<std::string, std::string>> merges_;
    std::unordered_map<std::string, int> merge_rank_;
    int eot_id_ = -1;
};

class tokenizer {
public:
    explicit tokenizer(vocabulary vocab) : vocab_(std::move(vocab)) {}

    const vocabulary& vocab() const { return vocab_; }

    // Encode arbitrary text. <|endoftext|> occurrences are recognized as the
    // special token (matching the reference tokenizer's added-token handling).
    std::vector<int> encode(const std::string& text) const {
        std::vector<int> ids;
        size_t pos = 0;
        while (pos < text.size()) {
            size_t eot = vocab_.eot_id() >= 0 ? text.find(kEndOfTextToken, pos) : std::string::npos;
            size_t segment_end = eot == std::string::npos ? text.size() : eot;
            encode_segment(text.substr(pos, segment_end - pos), ids);
            if (eot == std::string::npos) break;
            ids.push_back(vocab_.eot_id());
            pos = segment_end + kEndOfTextToken.size();
        }
        return ids;
    }

    std::string decode(const std::vector<int>& ids) const {
        const auto& alphabet = byte_alphabet::instance();
        std::string out;
        for (int id : ids) {
            const std::string& tok = vocab_.token_of(id);
            if (tok == kEndOfTextToken) {
                out += tok;
                continue;
            }
            size_t i = 0;
            while (i < tok.size()) {
                char32_t cp = unicode::decode_utf8(tok, i);
                auto it = alphabet.char_to_byte.find(cp);
                if (it == alphabet.char_to_byte.end())
                    throw data_error("tokenizer: token '" + tok + "' contains a non-alphabet char");
                out += static_cast<char>(it->second);
            }
        }
        return out;
    }

private:
    void encode_segment(const std::string& segment, std::vector<int>& ids) const {
        const auto& alphabet = byte_alphabet::instance();
        for (const auto& span : detail::pretokenize(segment)) {
            std::string mapped;
            for (size_t i = span.begin; i < span.end; ++i)
                unicode::append_utf8(mapped, alphabet.byte_to_char[static_cast<uint8_t>(segment[i])]);
            {
                std::lock_guard<std::mutex> lock(cache_mutex_);
                auto cached = bpe_cache_.find(mapped);
                if (cached != bpe_cache_.end()) {
                    ids.insert(ids.end(), cached->second.begin(), cached->second.end());
                    continue;
                }
            }
            std::vector<int> word_ids = bpe(mapped);
            ids.insert(ids.end(), word_ids.begin(), word_ids.end());
            std::lock_guard<std::mutex> lock(cache_mutex_);
            bpe_cache_.emplace(std::move(mapped), std::move(word_ids));
        }
    }

    std::vector<int> bpe(const std::string& mapped) const {
        // Split into single-codepoint symbols.
        std::vector<std::string> symbols;
        size_t i = 0;
        while (i < mapped.size()) {
            size_t start = i;
            unicode::decode_utf8(mapped, i);
            symbols.push_back(mapped.substr(start, i - start));
        }
        // Repeatedly apply the lowest-ranked adjacent merge.
        while (symbols.size() >= 2) {
            int best_rank = -1;
            size_t best_pos = 0;
            for (size_t k = 0; k + 1 < symbols.size(); ++k) {
                int rank = vocab_.merge_rank(symbols[k], symbols[k + 1]);
                if (rank >= 0 && (best_rank < 0 || rank < best_rank)) {
                    best_rank = rank;
                    best_pos = k;
                }
            }
            if (best_rank < 0) break;
            const std::string& left = symbols[best_pos];
            const std::string& right = symbols[best_pos + 1];
            std::string merged = left + right;
            std::vector<std::string> next;
            next.reserve(symbols.size());
            for (size_t k = 0; k < symbols.size();) {
                if (k + 1 < symbols.size() && symbols[k] == left && symbols[k + 1] == right) {
                    next.push_back(merged);
                    k += 2;
                } else {
                    next.push_back(symbols[k]);
                    ++k;
                }
            }
            symbols = std::move(next);
        }
        std::vector<int> ids;
        ids.reserve(symbols.size());
        for (const auto& s : symbols) ids.push_back(vocab_.id_of(s));
        return ids;
    }

    vocabulary vocab_;
    // Pre-token -> ids memo; mutex-guarded so concurrent encode() calls are safe.
    mutable std::mutex cache_mutex_;
    mutable std::unordered_map<std::string, std::vector<int>> bpe_cache_;
};

} // namespace layerlens
