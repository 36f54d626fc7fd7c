#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "layerlens/common.hpp"
#include "layerlens/dataset.hpp"
#include "layerlens/pipeline.hpp"
#include "layerlens/tokenizer.hpp"
#include "test_support.hpp"

using namespace layerlens;

namespace {

annotated_sentence make_sentence(const std::string& item, const std::string& phenomenon,
                                 const std::string& condition,
                                 const std::vector<std::string>& words, int t_star = 0) {
    annotated_sentence s;
    s.item_id = item;
    s.phenomenon = phenomenon;
    s.condition = condition;
    for (size_t i = 0; i < words.size(); ++i) {
        annotated_word w;
        w.word_index = static_cast<int>(i) + 1;
        w.text = words[i];
        w.rt_ms = 300.0 + 10.0 * static_cast<double>(i);
        w.is_disambiguating = static_cast<int>(i) + 1 == t_star;
        s.words.push_back(w);
    }
    return s;
}

// Toy-alphabet dataset: one MVRR pair plus one filler, all words over {a,b,c,.}.
annotated_dataset make_toy_dataset_in_memory() {
    annotated_dataset ds;
    sentence_pair pair;
    pair.item_id = "I1";
    pair.phenomenon = "MVRR";
    pair.ambiguous = make_sentence("I1", "MVRR", "+", {"ab", "ca", "c", "abc"}, 3);
    pair.unambiguous = make_sentence("I1", "MVRR", "-", {"ab", "a", "c", "ab."}, 3);
    pair.t_star_plus = 3;
    pair.t_star_minus = 3;
    ds.pairs.push_back(std::move(pair));
    ds.fillers.push_back(make_sentence("F1", "filler", "filler", {"b", "ca", "ab"}));
    return ds;
}

} // namespace

TEST_CASE("tokenize_sentence aligns per-word spans with the sentence encoding", "[pipeline]") {
    tokenizer tok(testsupport::make_toy_vocabulary());
    annotated_sentence s = make_sentence("I1", "MVRR", "+", {"ab", "ca", "c"});

    tokenized_sentence ts = tokenize_sentence(tok, s);
    // " ab" -> {Ġab}, " ca" -> {Ġc, a}, " c" -> {Ġc}, with EOT prepended.
    CHECK(ts.ids == std::vector<int>{10, 9, 7, 1, 7});
    REQUIRE(ts.spans.size() == 3);
    CHECK(ts.spans[0].word_text == " ab");
    CHECK(ts.spans[0].token_ids == std::vector<int>{9});
    CHECK(ts.spans[0].start_pos == 1);
    CHECK(ts.spans[1].token_ids == std::vector<int>{7, 1});
    CHECK(ts.spans[1].start_pos == 2);
    CHECK(ts.spans[2].token_ids == std::vector<int>{7});
    CHECK(ts.spans[2].start_pos == 4);
}

TEST_CASE("tokenize_sentence covers punctuation-bearing words", "[pipeline]") {
    tokenizer tok(testsupport::make_toy_vocabulary());
    annotated_sentence s = make_sentence("I2", "MVRR", "-", {"ab", "ab."});
    tokenized_sentence ts = tokenize_sentence(tok, s);
    CHECK(ts.ids == std::vector<int>{10, 9, 9, 4});
    CHECK(ts.spans[1].token_ids == std::vector<int>{9, 4});

    // Every span must reproduce the tokenizer's own encoding of its text.
    for (const auto& span : ts.spans) CHECK(span.token_ids == tok.encode(span.word_text));
}

TEST_CASE("tokenize_sentence on the GPT-2 tokenizer", "[pipeline][gpt2]") {
    if (!testsupport::gpt2_assets_present()) SKIP("GPT-2 assets not present");
    const tokenizer& tok = testsupport::gpt2_tokenizer();
    annotated_sentence s =
        make_sentence("I1", "MVRR", "+", {"The", "horse", "raced", "past", "the", "barn", "fell."});
    tokenized_sentence ts = tokenize_sentence(tok, s);

    CHECK(ts.ids[0] == tok.vocab().eot_id());
    size_t pos = 1;
    std::string text;
    for (const auto& span : ts.spans) {
        CHECK(span.start_pos == static_cast<int>(pos));
        CHECK(span.token_ids == tok.encode(span.word_text));
        pos += span.token_ids.size();
        text += span.word_text;
    }
    CHECK(pos == ts.ids.size());
    CHECK(text == " The horse raced past the barn fell.");
    CHECK(tok.decode(std::vector<int>(ts.ids.begin() + 1, ts.ids.end())) == text);
}

TEST_CASE("extract_table emits one record per word in corpus order", "[pipeline]") {
    model<double> m = testsupport::make_toy_model(11);
    tokenizer tok(testsupport::make_toy_vocabulary());
    annotated_dataset ds = make_toy_dataset_in_memory();

    extraction_table table = extract_table(m, tok, ds);
    CHECK(table.n_layers == 2);
    CHECK(table.shallow_layer == 1);
    CHECK(table.deep_layer == 2);  // -1 resolves to the top block
    CHECK(table.decoding == "trailing");
    REQUIRE(table.words.size() == 11);

    // Corpus order: D+ sentence, D- sentence, filler; sentence_ord follows.
    CHECK(table.words[0].item_id == "I1");
    CHECK(table.words[0].condition == "+");
    CHECK(table.words[0].sentence_ord == 0);
    CHECK(table.words[4].condition == "-");
    CHECK(table.words[4].sentence_ord == 1);
    CHECK(table.words[8].condition == "filler");
    CHECK(table.words[8].sentence_ord == 2);

    for (const auto& rec : table.words) {
        REQUIRE(rec.surprisal.size() == 3);
        for (double s : rec.surprisal) {
            CHECK(std::isfinite(s));
            CHECK(s > 0.0);
        }
        // SU is the shallow-minus-deep surprisal difference, computed through
        // the same decoding path as the per-layer columns.
        CHECK(rec.su_raw == rec.surprisal[1] - rec.surprisal[2]);
        CHECK(rec.kl >= 0.0);
        CHECK(rec.js >= 0.0);
        // JS sums over the word's subword positions: ln 2 per subword.
        size_t n_subwords = tok.encode(" " + rec.word_text).size();
        CHECK(rec.js <= static_cast<double>(n_subwords) * std::log(2.0) + 1e-12);
        CHECK(rec.rt_ms > 0.0);
    }
    // Word metadata survives: the D+ disambiguating word is word 3.
    CHECK(table.words[2].is_disambiguating);
    CHECK_FALSE(table.words[3].is_disambiguating);
}

TEST_CASE("extract_table honours layer and decoding options", "[pipeline]") {
    model<double> m = testsupport::make_toy_model(11);
    tokenizer tok(testsupport::make_toy_vocabulary());
    annotated_dataset ds = make_toy_dataset_in_memory();

    extract_options opt;
    opt.shallow_layer = 0;
    opt.deep_layer = 1;
    extraction_table table = extract_table(m, tok, ds, opt);
    CHECK(table.shallow_layer == 0);
    CHECK(table.deep_layer == 1);
    for (const auto& rec : table.words)
        CHECK(rec.su_raw == rec.surprisal[0] - rec.surprisal[1]);

    extract_options leading;
    leading.decoding = "leading";
    extraction_table lead_table = extract_table(m, tok, ds, leading);
    CHECK(lead_table.decoding == "leading");
    bool any_difference = false;
    for (size_t i = 0; i < table.words.size(); ++i)
        if (lead_table.words[i].surprisal[2] != table.words[i].surprisal[2])
            any_difference = true;
    CHECK(any_difference);

    extract_options bad_layer;
    bad_layer.shallow_layer = 9;
    CHECK_THROWS_AS(extract_table(m, tok, ds, bad_layer), usage_error);
    extract_options bad_mode;
    bad_mode.decoding = "sideways";
    CHECK_THROWS_AS(extract_table(m, tok, ds, bad_mode), usage_error);
}

TEST_CASE("extraction is independent of the worker count", "[pipeline]") {
    model<double> m = testsupport::make_toy_model(23);
    tokenizer tok(testsupport::make_toy_vocabulary());
    annotated_dataset ds = make_toy_dataset_in_memory();

    extract_options serial;
    serial.jobs = 1;
    extract_options parallel;
    parallel.jobs = 4;
    std::string a = measures_csv(extract_table(m, tok, ds, serial));
    std::string b = measures_csv(extract_table(m, tok, ds, parallel));
    CHECK(a == b);  // byte-identical
}

TEST_CASE("measures CSV round-trips through load_measures_csv", "[pipeline]") {
    testsupport::scratch_dir dir;
    model<double> m = testsupport::make_toy_model(31);
    tokenizer tok(testsupport::make_toy_vocabulary());
    annotated_dataset ds = make_toy_dataset_in_memory();
    extraction_table table = extract_table(m, tok, ds);

    std::string csv_text = measures_csv(table);
    CHECK(csv_text.rfind("item_id,condition,word_index,word_text,layer,surprisal_nats,"
                         "su_raw,kl,js\n",
                         0) == 0);
    CHECK(std::count(csv_text.begin(), csv_text.end(), '\n') ==
          1 + static_cast<long>(table.words.size()) * 3);

    write_measures_csv(dir / "measures.csv", table);
    extraction_table loaded = load_measures_csv(dir / "measures.csv", ds);
    CHECK(loaded.n_layers == table.n_layers);
    REQUIRE(loaded.words.size() == table.words.size());
    for (size_t i = 0; i < table.words.size(); ++i) {
        const auto& want = table.words[i];
        const auto& got = loaded.words[i];
        CHECK(got.item_id == want.item_id);
        CHECK(got.condition == want.condition);
        CHECK(got.phenomenon == want.phenomenon);
        CHECK(got.word_index == want.word_index);
        CHECK(got.word_text == want.word_text);
        CHECK(got.rt_ms == want.rt_ms);
        CHECK(got.is_disambiguating == want.is_disambiguating);
        CHECK(got.sentence_ord == want.sentence_ord);
        REQUIRE(got.surprisal.size() == want.surprisal.size());
        // format_double keeps max_digits10, so values survive exactly.
        for (size_t l = 0; l < want.surprisal.size(); ++l)
            CHECK(got.surprisal[l] == want.surprisal[l]);
        CHECK(got.su_raw == want.su_raw);
        CHECK(got.kl == want.kl);
        CHECK(got.js == want.js);
    }
}

TEST_CASE("load_measures_csv rejects malformed files", "[pipeline]") {
    testsupport::scratch_dir dir;
    annotated_dataset ds;
    ds.fillers.push_back(make_sentence("F1", "filler", "filler", {"ab", "c"}));

    const std::string header = "item_id,condition,word_index,word_text,layer,surprisal_nats,"
                               "su_raw,kl,js\n";
    auto row = [](int widx, const std::string& text, int layer, double surp) {
        return "F1,filler," + std::to_string(widx) + "," + text + "," + std::to_string(layer) +
               "," + format_double(surp) + ",0.5,0.1,0.05\n";
    };
    std::string good = header + row(1, "ab", 0, 3.0) + row(1, "ab", 1, 2.5) +
                       row(2, "c", 0, 4.0) + row(2, "c", 1, 3.5);

    SECTION("well-formed file loads") {
        write_file_atomic(dir / "m.csv", good);
        extraction_table t = load_measures_csv(dir / "m.csv", ds);
        CHECK(t.n_layers == 1);
        REQUIRE(t.words.size() == 2);
        CHECK(t.words[0].surprisal == std::vector<double>{3.0, 2.5});
        CHECK(t.words[1].rt_ms == ds.fillers[0].words[1].rt_ms);
    }
    SECTION("missing column") {
        write_file_atomic(dir / "m.csv", "item_id,condition,word_index,word_text,layer,"
                                         "surprisal_nats,su_raw,kl\nF1,filler,1,ab,0,3.0,0.5,0.1\n");
        CHECK_THROWS_AS(load_measures_csv(dir / "m.csv", ds), data_error);
    }
    SECTION("empty file") {
        write_file_atomic(dir / "m.csv", "");
        CHECK_THROWS_AS(load_measures_csv(dir / "m.csv", ds), data_error);
    }
    SECTION("duplicate word/layer row") {
        write_file_atomic(dir / "m.csv", good + row(2, "c", 1, 9.0));
        CHECK_THROWS_AS(load_measures_csv(dir / "m.csv", ds), data_error);
    }
    SECTION("missing word") {
        write_file_atomic(dir / "m.csv", header + row(1, "ab", 0, 3.0) + row(1, "ab", 1, 2.5));
        CHECK_THROWS_AS(load_measures_csv(dir / "m.csv", ds), data_error);
    }
    SECTION("incomplete layer coverage") {
        write_file_atomic(dir / "m.csv",
                          header + row(1, "ab", 0, 3.0) + row(1, "ab", 1, 2.5) + row(2, "c", 0, 4.0));
        CHECK_THROWS_AS(load_measures_csv(dir / "m.csv", ds), data_error);
    }
    SECTION("word not present in the dataset") {
        write_file_atomic(dir / "m.csv", good + row(3, "zz", 0, 1.0) + row(3, "zz", 1, 1.0));
        CHECK_THROWS_AS(load_measures_csv(dir / "m.csv", ds), data_error);
    }
    SECTION("negative layer") {
        write_file_atomic(dir / "m.csv", header + "F1,filler,1,ab,-1,3.0,0.5,0.1,0.05\n");
        CHECK_THROWS_AS(load_measures_csv(dir / "m.csv", ds), data_error);
    }
}

TEST_CASE("manifest records the extraction configuration", "[pipeline]") {
    testsupport::scratch_dir dir;
    testsupport::toy_model_spec spec = testsupport::make_toy_archive(3);
    testsupport::write_toy_tokenizer_files(dir.path());
    save_safetensors(dir / "model.safetensors", spec.archive, /*f64=*/true);
    write_file_atomic(dir / "config.json", R"({"n_layer":2,"n_embd":8,"n_head":2,)"
                                           R"("vocab_size":11,"n_positions":32,)"
                                           R"("layer_norm_epsilon":1e-5})");

    asset_paths assets{dir / "config.json", dir / "model.safetensors", dir / "vocab.json",
                       dir / "merges.txt"};
    extract_options opt;  // deep_layer = -1 resolves against the config
    nlohmann::json run_config = {{"dataset", "toy.csv"}};
    std::string text = manifest_json(spec.config, assets, opt, /*tuned_lens=*/false, run_config);

    nlohmann::json j = nlohmann::json::parse(text);
    CHECK(j["decoding"] == "trailing");
    CHECK(j["shallow_layer"] == 1);
    CHECK(j["deep_layer"] == 2);
    CHECK(j["lens"] == "logit");
    CHECK(j["znorm_scope"] == "corpus");
    CHECK(j["model"]["n_layers"] == 2);
    CHECK(j["model"]["d_model"] == 8);
    CHECK(j["model"]["vocab_size"] == 11);
    CHECK(j["model"]["weights_sha256"] == sha256::file_digest(dir / "model.safetensors"));
    CHECK(j["tokenizer"]["vocab_sha256"] == sha256::file_digest(dir / "vocab.json"));
    CHECK(j["run_config"]["dataset"] == "toy.csv");

    write_file_atomic(dir / "manifest.json", text);
    manifest_data m = read_manifest(dir / "manifest.json");
    CHECK(m.shallow_layer == 1);
    CHECK(m.deep_layer == 2);
    CHECK(m.decoding == "trailing");

    extract_options tuned;
    tuned.decoding = "leading";
    tuned.deep_layer = 1;
    nlohmann::json j2 = nlohmann::json::parse(
        manifest_json(spec.config, assets, tuned, /*tuned_lens=*/true));
    CHECK(j2["lens"] == "tuned");
    CHECK(j2["decoding"] == "leading");
    CHECK(j2["deep_layer"] == 1);

    write_file_atomic(dir / "bad.json", "{not json");
    CHECK_THROWS_AS(read_manifest(dir / "bad.json"), data_error);
}

TEST_CASE("extract_table on GPT-2 produces a sane mini-table", "[pipeline][gpt2]") {
    if (!testsupport::gpt2_assets_present()) SKIP("GPT-2 assets not present");
    const model<double>& m = testsupport::gpt2_model();
    const tokenizer& tok = testsupport::gpt2_tokenizer();

    annotated_dataset ds;
    sentence_pair pair;
    pair.item_id = "I1";
    pair.phenomenon = "MVRR";
    pair.ambiguous = make_sentence(
        "I1", "MVRR", "+", {"The", "horse", "raced", "past", "the", "barn", "fell."}, 7);
    pair.unambiguous = make_sentence(
        "I1", "MVRR", "-", {"The", "horse", "that", "raced", "past", "the", "barn", "fell."}, 8);
    pair.t_star_plus = 7;
    pair.t_star_minus = 8;
    ds.pairs.push_back(std::move(pair));
    ds.fillers.push_back(
        make_sentence("F1", "filler", "filler", {"The", "girl", "fed", "the", "lamb."}));

    extraction_table table = extract_table(m, tok, ds);
    CHECK(table.n_layers == 12);
    CHECK(table.deep_layer == 12);
    REQUIRE(table.words.size() == 20);
    for (const auto& rec : table.words) {
        REQUIRE(rec.surprisal.size() == 13);
        for (double s : rec.surprisal) {
            CHECK(std::isfinite(s));
            CHECK(s > 0.0);
            CHECK(s <= -std::log(1e-12) + 1e-9);  // probability floor bound
        }
        CHECK(rec.su_raw == rec.surprisal[1] - rec.surprisal[12]);
        CHECK(rec.kl >= 0.0);
        CHECK(rec.js >= 0.0);
        size_t n_subwords = tok.encode(" " + rec.word_text).size();
        CHECK(rec.js <= static_cast<double>(n_subwords) * std::log(2.0) + 1e-12);
    }
    // The final-layer surprisal of a frequent function word ("the") should be
    // well under that of a rare content word in the same sentence ("barn").
    const auto& the_word = table.words[4];   // D+ word 5: "the"
    const auto& barn_word = table.words[5];  // D+ word 6: "barn"
    REQUIRE(the_word.word_text == "the");
    REQUIRE(barn_word.word_text == "barn");
    CHECK(the_word.surprisal[12] < barn_word.surprisal[12]);
}
