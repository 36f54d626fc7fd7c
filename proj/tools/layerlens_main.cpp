// layerlens: extract per-layer next-word measures from a GPT-2-style model
// and run the reading-time analyses over them.
//
// Commands:
//   layerlens extract   — tokenize + forward the dataset, write measures.csv
//   layerlens run expN  — exp1 | exp2 | exp3 over an existing extraction
//   layerlens report    — plot-ready JSON from the result CSVs
//   layerlens validate  — schema-check dataset/lexicon/model files
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical error.

#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "layerlens/common.hpp"
#include "layerlens/dataset.hpp"
#include "layerlens/experiments.hpp"
#include "layerlens/lens.hpp"
#include "layerlens/measures.hpp"
#include "layerlens/model.hpp"
#include "layerlens/pipeline.hpp"
#include "layerlens/safetensors.hpp"
#include "layerlens/stats.hpp"
#include "layerlens/tokenizer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct cli_config {
    std::string model_config = "assets/gpt2/config.json";
    std::string weights = "assets/gpt2/model.safetensors";
    std::string vocab = "assets/gpt2/vocab.json";
    std::string merges = "assets/gpt2/merges.txt";
    std::string lens = "logit";  // logit | tuned
    std::string translators;     // safetensors path, required for tuned
    std::string decoding = "trailing";
    int shallow_layer = 1;
    int deep_layer = -1;  // -1: top block
    std::string dataset = "data/sap/dataset.csv";
    std::string lexicon = "data/sap/lexicon.tsv";
    std::string output_dir = "out";
    unsigned jobs = 1;
    int cv_folds = 0;
    int layer_min = 1;
    int layer_max = -1;
    int su_shallow = -1;
    int su_deep = -1;
    std::string model_name = "gpt2-small";
};

// Binds the shared options onto one subcommand. The same cli_config backs
// every subcommand; only the parsed one writes to it.
void add_common_options(CLI::App* cmd, cli_config& cfg, std::string& config_path) {
    cmd->add_option("--config", config_path, "JSON config file; flags override its values");
    cmd->add_option("--model-config", cfg.model_config, "Model config.json");
    cmd->add_option("--weights", cfg.weights, "Model safetensors archive");
    cmd->add_option("--vocab", cfg.vocab, "Tokenizer vocab.json");
    cmd->add_option("--merges", cfg.merges, "Tokenizer merges.txt");
    cmd->add_option("--lens", cfg.lens, "Lens mode: logit | tuned");
    cmd->add_option("--translators", cfg.translators, "Tuned-lens translator safetensors");
    cmd->add_option("--decoding", cfg.decoding, "Word decoding: leading | trailing");
    cmd->add_option("--shallow", cfg.shallow_layer, "Shallow layer for SU/KL/JS");
    cmd->add_option("--deep", cfg.deep_layer, "Deep layer for SU/KL/JS (-1: top block)");
    cmd->add_option("--dataset", cfg.dataset, "Annotated reading-time CSV");
    cmd->add_option("--lexicon", cfg.lexicon, "word<TAB>log10-frequency lexicon");
    cmd->add_option("--out", cfg.output_dir, "Output directory");
    cmd->add_option("--jobs", cfg.jobs, "Worker threads for extraction");
    cmd->add_option("--cv", cfg.cv_folds, "Cross-validation folds for exp2 (0: in-sample)");
    cmd->add_option("--layer-min", cfg.layer_min, "First layer of the exp2 correlation range");
    cmd->add_option("--layer-max", cfg.layer_max,
                    "Last layer of the exp2 correlation range (-1: top block)");
    cmd->add_option("--su-shallow", cfg.su_shallow,
                    "Shallow layer exp3 rebuilds SU from (-1: extraction setting)");
    cmd->add_option("--su-deep", cfg.su_deep,
                    "Deep layer exp3 rebuilds SU from (-1: extraction setting)");
    cmd->add_option("--model-name", cfg.model_name, "Model label used in reports");
}

// Values from the config file fill in any option the command line left at
// its default; unknown keys are rejected.
void apply_config_file(const std::string& path, const CLI::App& cmd, cli_config& cfg) {
    json j;
    try {
        j = json::parse(layerlens::read_file(path));
    } catch (const json::exception& e) {
        throw layerlens::data_error("cli: bad config JSON " + path + ": " + e.what());
    }
    if (!j.is_object()) throw layerlens::data_error("cli: config file must be a JSON object");

    auto absent = [&](const char* flag) { return cmd.count(flag) == 0; };
    std::map<std::string, std::function<void(const json&)>> setters = {
        {"model_config", [&](const json& v) { if (absent("--model-config")) cfg.model_config = v.get<std::string>(); }},
        {"weights", [&](const json& v) { if (absent("--weights")) cfg.weights = v.get<std::string>(); }},
        {"vocab", [&](const json& v) { if (absent("--vocab")) cfg.vocab = v.get<std::string>(); }},
        {"merges", [&](const json& v) { if (absent("--merges")) cfg.merges = v.get<std::string>(); }},
        {"lens", [&](const json& v) { if (absent("--lens")) cfg.lens = v.get<std::string>(); }},
        {"translators", [&](const json& v) { if (absent("--translators")) cfg.translators = v.get<std::string>(); }},
        {"decoding", [&](const json& v) { if (absent("--decoding")) cfg.decoding = v.get<std::string>(); }},
        {"shallow_layer", [&](const json& v) { if (absent("--shallow")) cfg.shallow_layer = v.get<int>(); }},
        {"deep_layer", [&](const json& v) { if (absent("--deep")) cfg.deep_layer = v.get<int>(); }},
        {"dataset", [&](const json& v) { if (absent("--dataset")) cfg.dataset = v.get<std::string>(); }},
        {"lexicon", [&](const json& v) { if (absent("--lexicon")) cfg.lexicon = v.get<std::string>(); }},
        {"output_dir", [&](const json& v) { if (absent("--out")) cfg.output_dir = v.get<std::string>(); }},
        {"jobs", [&](const json& v) { if (absent("--jobs")) cfg.jobs = v.get<unsigned>(); }},
        {"cv_folds", [&](const json& v) { if (absent("--cv")) cfg.cv_folds = v.get<int>(); }},
        {"layer_min", [&](const json& v) { if (absent("--layer-min")) cfg.layer_min = v.get<int>(); }},
        {"layer_max", [&](const json& v) { if (absent("--layer-max")) cfg.layer_max = v.get<int>(); }},
        {"su_shallow", [&](const json& v) { if (absent("--su-shallow")) cfg.su_shallow = v.get<int>(); }},
        {"su_deep", [&](const json& v) { if (absent("--su-deep")) cfg.su_deep = v.get<int>(); }},
        {"model_name", [&](const json& v) { if (absent("--model-name")) cfg.model_name = v.get<std::string>(); }},
    };
    for (const auto& [key, value] : j.items()) {
        auto it = setters.find(key);
        if (it == setters.end())
            throw layerlens::usage_error("cli: unknown config key '" + key + "' in " + path);
        try {
            it->second(value);
        } catch (const json::exception& e) {
            throw layerlens::data_error("cli: config key '" + key + "': " + e.what());
        }
    }
}

json effective_config_json(const cli_config& cfg) {
    return json{{"model_config", cfg.model_config},
                {"weights", cfg.weights},
                {"vocab", cfg.vocab},
                {"merges", cfg.merges},
                {"lens", cfg.lens},
                {"translators", cfg.translators},
                {"decoding", cfg.decoding},
                {"shallow_layer", cfg.shallow_layer},
                {"deep_layer", cfg.deep_layer},
                {"dataset", cfg.dataset},
                {"lexicon", cfg.lexicon},
                {"output_dir", cfg.output_dir},
                {"jobs", cfg.jobs},
                {"cv_folds", cfg.cv_folds},
                {"layer_min", cfg.layer_min},
                {"layer_max", cfg.layer_max},
                {"su_shallow", cfg.su_shallow},
                {"su_deep", cfg.su_deep},
                {"model_name", cfg.model_name}};
}

void check_lens_mode(const cli_config& cfg) {
    if (cfg.lens != "logit" && cfg.lens != "tuned")
        throw layerlens::usage_error("cli: --lens must be logit or tuned, got '" + cfg.lens + "'");
    if (cfg.lens == "tuned" && cfg.translators.empty())
        throw layerlens::usage_error("cli: --lens tuned requires --translators");
    layerlens::decoding_from_string(cfg.decoding);  // validates
}

// ---------------------------------------------------------------------------
// extract
// ---------------------------------------------------------------------------

void cmd_extract(const cli_config& cfg) {
    check_lens_mode(cfg);
    layerlens::annotated_dataset ds = layerlens::load_dataset(cfg.dataset);
    layerlens::tokenizer tok(layerlens::vocabulary::load(cfg.vocab, cfg.merges));
    layerlens::model<double> m = layerlens::model<double>::load(cfg.model_config, cfg.weights);
    if (tok.vocab().size() != static_cast<size_t>(m.config().vocab_size))
        throw layerlens::data_error(
            "cli: tokenizer has " + std::to_string(tok.vocab().size()) +
            " entries but the model expects " + std::to_string(m.config().vocab_size));

    layerlens::translator_set<double> translators;
    const layerlens::translator_set<double>* tr = nullptr;
    if (cfg.lens == "tuned") {
        translators = layerlens::translator_set<double>::load(cfg.translators,
                                                              m.config().d_model);
        tr = &translators;
    }

    layerlens::extract_options opt;
    opt.decoding = cfg.decoding;
    opt.shallow_layer = cfg.shallow_layer;
    opt.deep_layer = cfg.deep_layer;
    opt.jobs = cfg.jobs;

    layerlens::extraction_table table = layerlens::extract_table(m, tok, ds, opt, tr);

    fs::path out_dir(cfg.output_dir);
    layerlens::write_measures_csv(out_dir / "measures.csv", table);
    layerlens::asset_paths assets{cfg.model_config, cfg.weights, cfg.vocab, cfg.merges};
    layerlens::write_file_atomic(
        out_dir / "manifest.json",
        layerlens::manifest_json(m.config(), assets, opt, tr != nullptr,
                                 effective_config_json(cfg)));
    std::cout << "wrote " << (out_dir / "measures.csv").string() << " (" << table.words.size()
              << " words x " << (table.n_layers + 1) << " layers)\n";
    std::cout << "wrote " << (out_dir / "manifest.json").string() << "\n";
}

// ---------------------------------------------------------------------------
// run exp1|exp2|exp3
// ---------------------------------------------------------------------------

void cmd_run(const cli_config& cfg, const std::string& which) {
    layerlens::annotated_dataset ds = layerlens::load_dataset(cfg.dataset);
    layerlens::frequency_lexicon lex = layerlens::frequency_lexicon::load(cfg.lexicon);

    fs::path out_dir(cfg.output_dir);
    fs::path measures_path = out_dir / "measures.csv";
    if (!fs::exists(measures_path))
        throw layerlens::data_error("cli: no extraction at " + measures_path.string() +
                                    "; run `layerlens extract` first");
    layerlens::extraction_table table = layerlens::load_measures_csv(measures_path, ds);

    fs::path manifest_path = out_dir / "manifest.json";
    if (fs::exists(manifest_path)) {
        layerlens::manifest_data md = layerlens::read_manifest(manifest_path);
        table.shallow_layer = md.shallow_layer;
        table.deep_layer = md.deep_layer;
        table.decoding = md.decoding;
    } else {
        table.shallow_layer = cfg.shallow_layer;
        table.deep_layer = cfg.deep_layer < 0 ? table.n_layers : cfg.deep_layer;
        table.decoding = cfg.decoding;
    }

    if (which == "exp1") {
        if (cfg.cv_folds > 0)
            throw layerlens::usage_error("cli: --cv applies to exp2 only");
        layerlens::exp1_result r = layerlens::run_exp1(table, ds, lex);
        layerlens::write_file_atomic(out_dir / "exp1_slowdowns.csv", layerlens::exp1_csv(r));
        std::cout << "wrote " << (out_dir / "exp1_slowdowns.csv").string() << "\n";
    } else if (which == "exp2") {
        layerlens::exp2_options opt;
        opt.layer_min = cfg.layer_min;
        opt.layer_max = cfg.layer_max;
        opt.cv_folds = cfg.cv_folds;
        layerlens::exp2_result r = layerlens::run_exp2(table, ds, lex, opt);
        layerlens::write_file_atomic(out_dir / "exp2_ppp.csv", layerlens::exp2_ppp_csv(r));
        layerlens::write_file_atomic(out_dir / "exp2_correlations.csv",
                                     layerlens::exp2_correlations_csv(r));
        std::cout << "wrote " << (out_dir / "exp2_ppp.csv").string() << "\n";
        std::cout << "wrote " << (out_dir / "exp2_correlations.csv").string() << "\n";
    } else if (which == "exp3") {
        if (cfg.cv_folds > 0)
            throw layerlens::usage_error("cli: --cv applies to exp2 only");
        layerlens::exp3_options opt;
        opt.su_shallow = cfg.su_shallow;
        opt.su_deep = cfg.su_deep;
        layerlens::exp3_result r = layerlens::run_exp3(table, ds, lex, opt);
        layerlens::write_file_atomic(out_dir / "exp3_ppp.csv", layerlens::exp3_csv(r));
        std::cout << "wrote " << (out_dir / "exp3_ppp.csv").string() << "\n";
    } else {
        throw layerlens::usage_error("cli: unknown experiment '" + which +
                                     "' (use exp1|exp2|exp3)");
    }
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

// Reads one result CSV into column-name-addressable rows.
struct csv_table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    size_t col(const std::string& name) const {
        for (size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return i;
        throw layerlens::data_error("cli: results file lacks column '" + name + "'");
    }
};

csv_table read_csv(const fs::path& path) {
    auto parsed = layerlens::csv::parse(layerlens::read_file(path), path.string());
    if (parsed.empty()) throw layerlens::data_error("cli: empty results file " + path.string());
    csv_table t;
    t.header = parsed[0];
    t.rows.assign(parsed.begin() + 1, parsed.end());
    return t;
}

json report_exp1(const csv_table& t, const std::string& model_name) {
    size_t c_ph = t.col("phenomenon"), c_layer = t.col("layer");
    size_t c_est = t.col("estimated_ms"), c_hum = t.col("human_ms"), c_n = t.col("n_pairs");
    std::vector<std::string> order;
    std::map<std::string, json> series;
    for (const auto& row : t.rows) {
        const std::string& ph = row[c_ph];
        if (!series.count(ph)) {
            order.push_back(ph);
            series[ph] = json{{"phenomenon", ph},
                              {"human_ms", layerlens::parse_double(row[c_hum])},
                              {"n_pairs", layerlens::parse_long(row[c_n])},
                              {"layers", json::array()},
                              {"estimated_ms", json::array()}};
        }
        series[ph]["layers"].push_back(layerlens::parse_long(row[c_layer]));
        series[ph]["estimated_ms"].push_back(layerlens::parse_double(row[c_est]));
    }
    json out{{"figure", "exp1_slowdowns"}, {"model", model_name}, {"phenomena", json::array()}};
    for (const auto& ph : order) out["phenomena"].push_back(series[ph]);
    return out;
}

json report_exp2(const csv_table& ppp, const csv_table* corr, const std::string& model_name) {
    size_t c_ph = ppp.col("phenomenon"), c_amb = ppp.col("ambiguity");
    size_t c_reg = ppp.col("region"), c_layer = ppp.col("layer"), c_dll = ppp.col("delta_ll");
    std::vector<std::string> order;
    std::map<std::string, json> series;
    for (const auto& row : ppp.rows) {
        std::string key = row[c_ph] + "\x1f" + row[c_amb] + "\x1f" + row[c_reg];
        if (!series.count(key)) {
            order.push_back(key);
            series[key] = json{{"phenomenon", row[c_ph]}, {"ambiguity", row[c_amb]},
                               {"region", row[c_reg]},   {"layers", json::array()},
                               {"delta_ll", json::array()}};
        }
        series[key]["layers"].push_back(layerlens::parse_long(row[c_layer]));
        series[key]["delta_ll"].push_back(layerlens::parse_double(row[c_dll]));
    }
    json out{{"figure", "exp2_layer_ppp"}, {"model", model_name}, {"series", json::array()}};
    for (const auto& key : order) out["series"].push_back(series[key]);
    out["correlations"] = json::array();
    if (corr) {
        size_t k_ph = corr->col("phenomenon"), k_amb = corr->col("ambiguity");
        size_t k_reg = corr->col("region"), k_r = corr->col("pearson_r");
        size_t k_lo = corr->col("layer_min"), k_hi = corr->col("layer_max");
        for (const auto& row : corr->rows)
            out["correlations"].push_back(json{{"phenomenon", row[k_ph]},
                                               {"ambiguity", row[k_amb]},
                                               {"region", row[k_reg]},
                                               {"pearson_r", layerlens::parse_double(row[k_r])},
                                               {"layer_min", layerlens::parse_long(row[k_lo])},
                                               {"layer_max", layerlens::parse_long(row[k_hi])}});
    }
    return out;
}

json report_exp3(const csv_table& t, const std::string& model_name) {
    size_t c_ph = t.col("phenomenon"), c_scope = t.col("scope"), c_m = t.col("measure");
    size_t c_dll = t.col("delta_ll"), c_stat = t.col("statistic");
    size_t c_df = t.col("df"), c_p = t.col("p_value"), c_n = t.col("n_rows");
    json out{{"figure", "exp3_update_ppp"}, {"model", model_name}, {"rows", json::array()}};
    for (const auto& row : t.rows)
        out["rows"].push_back(json{{"phenomenon", row[c_ph]},
                                   {"scope", row[c_scope]},
                                   {"measure", row[c_m]},
                                   {"delta_ll", layerlens::parse_double(row[c_dll])},
                                   {"statistic", layerlens::parse_double(row[c_stat])},
                                   {"df", layerlens::parse_long(row[c_df])},
                                   {"p_value", layerlens::parse_double(row[c_p])},
                                   {"n_rows", layerlens::parse_long(row[c_n])}});
    return out;
}

void cmd_report(const cli_config& cfg) {
    fs::path out_dir(cfg.output_dir);
    bool any = false;
    if (fs::exists(out_dir / "exp1_slowdowns.csv")) {
        json j = report_exp1(read_csv(out_dir / "exp1_slowdowns.csv"), cfg.model_name);
        layerlens::write_file_atomic(out_dir / "report_exp1.json", j.dump(2) + "\n");
        std::cout << "wrote " << (out_dir / "report_exp1.json").string() << "\n";
        any = true;
    }
    if (fs::exists(out_dir / "exp2_ppp.csv")) {
        csv_table ppp = read_csv(out_dir / "exp2_ppp.csv");
        csv_table corr;
        bool has_corr = fs::exists(out_dir / "exp2_correlations.csv");
        if (has_corr) corr = read_csv(out_dir / "exp2_correlations.csv");
        json j = report_exp2(ppp, has_corr ? &corr : nullptr, cfg.model_name);
        layerlens::write_file_atomic(out_dir / "report_exp2.json", j.dump(2) + "\n");
        std::cout << "wrote " << (out_dir / "report_exp2.json").string() << "\n";
        any = true;
    }
    if (fs::exists(out_dir / "exp3_ppp.csv")) {
        json j = report_exp3(read_csv(out_dir / "exp3_ppp.csv"), cfg.model_name);
        layerlens::write_file_atomic(out_dir / "report_exp3.json", j.dump(2) + "\n");
        std::cout << "wrote " << (out_dir / "report_exp3.json").string() << "\n";
        any = true;
    }
    if (!any)
        throw layerlens::data_error("cli: no experiment results in " + out_dir.string() +
                                    "; run `layerlens run exp1|exp2|exp3` first");
}

// ---------------------------------------------------------------------------
// validate
// ---------------------------------------------------------------------------

void cmd_validate(const cli_config& cfg) {
    check_lens_mode(cfg);

    layerlens::annotated_dataset ds = layerlens::load_dataset(cfg.dataset);
    size_t filler_words = 0;
    for (const auto& f : ds.fillers) filler_words += f.words.size();
    std::cout << "dataset: " << ds.pairs.size() << " pairs ("
              << ds.target_word_count() << " target words), " << ds.fillers.size()
              << " fillers (" << filler_words << " words), phenomena:";
    for (const auto& ph : ds.phenomena()) std::cout << " " << ph;
    std::cout << "\n";

    layerlens::frequency_lexicon lex = layerlens::frequency_lexicon::load(cfg.lexicon);
    std::cout << "lexicon: " << lex.size() << " entries, OOV log10-frequency "
              << layerlens::format_double(lex.oov_value()) << "\n";

    layerlens::model_config mc = layerlens::model_config::from_json_file(cfg.model_config);
    mc.validate();
    auto header = layerlens::safetensors_header(cfg.weights);
    auto need = [&](const std::string& name, std::vector<size_t> shape) {
        auto it = header.find(name);
        if (it == header.end()) it = header.find("transformer." + name);
        if (it == header.end())
            throw layerlens::data_error("cli: weights lack tensor '" + name + "'");
        if (it->second.shape != shape) {
            std::string got;
            for (size_t d : it->second.shape) got += (got.empty() ? "" : "x") + std::to_string(d);
            throw layerlens::data_error("cli: tensor '" + name + "' has shape [" + got + "]");
        }
    };
    size_t d = static_cast<size_t>(mc.d_model), v = static_cast<size_t>(mc.vocab_size);
    need("wte.weight", {v, d});
    need("wpe.weight", {static_cast<size_t>(mc.max_context), d});
    need("ln_f.weight", {d});
    need("ln_f.bias", {d});
    for (int l = 0; l < mc.n_layers; ++l) {
        std::string p = "h." + std::to_string(l) + ".";
        need(p + "ln_1.weight", {d});
        need(p + "attn.c_attn.weight", {d, 3 * d});
        need(p + "attn.c_proj.weight", {d, d});
        need(p + "ln_2.weight", {d});
        need(p + "mlp.c_fc.weight", {d, 4 * d});
        need(p + "mlp.c_proj.weight", {4 * d, d});
    }
    std::cout << "model: " << mc.n_layers << " layers, d_model " << mc.d_model << ", "
              << mc.n_heads << " heads, vocab " << mc.vocab_size << ", weights schema ok\n";

    layerlens::vocabulary vocab = layerlens::vocabulary::load(cfg.vocab, cfg.merges);
    if (vocab.size() != static_cast<size_t>(mc.vocab_size))
        throw layerlens::data_error("cli: tokenizer has " + std::to_string(vocab.size()) +
                                    " entries but the model expects " +
                                    std::to_string(mc.vocab_size));
    std::cout << "tokenizer: " << vocab.size() << " entries, " << vocab.merges().size()
              << " merges, <|endoftext|> id " << vocab.eot_id() << "\n";

    if (cfg.lens == "tuned") {
        auto tr_header = layerlens::safetensors_header(cfg.translators);
        size_t n = 0;
        for (const auto& [name, info] : tr_header) {
            if (!layerlens::starts_with(name, "translator."))
                throw layerlens::data_error("cli: unexpected tensor '" + name +
                                            "' in translator file");
            ++n;
        }
        std::cout << "translators: " << n << " tensors\n";
    }
    std::cout << "ok\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Layer-resolved surprisal and probability-update toolkit"};
    app.require_subcommand(1);

    cli_config cfg;
    std::string config_path;
    std::string experiment;

    CLI::App* c_extract = app.add_subcommand("extract", "Extract per-layer word measures");
    CLI::App* c_run = app.add_subcommand("run", "Run an experiment over an extraction");
    c_run->add_option("experiment", experiment, "exp1 | exp2 | exp3")->required();
    CLI::App* c_report = app.add_subcommand("report", "Emit plot-ready JSON from result CSVs");
    CLI::App* c_validate = app.add_subcommand("validate", "Schema-check input files");
    for (CLI::App* cmd : {c_extract, c_run, c_report, c_validate})
        add_common_options(cmd, cfg, config_path);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    CLI::App* active = app.get_subcommands().front();
    try {
        if (!config_path.empty()) apply_config_file(config_path, *active, cfg);
        if (active == c_extract)
            cmd_extract(cfg);
        else if (active == c_run)
            cmd_run(cfg, experiment);
        else if (active == c_report)
            cmd_report(cfg);
        else
            cmd_validate(cfg);
        return 0;
    } catch (const layerlens::usage_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const layerlens::data_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const layerlens::numerical_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
