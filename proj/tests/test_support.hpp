#pragma once

// Shared helpers for the test binaries: fixture paths, deterministic toy
// models and tokenizers, scratch directories, and CLI invocation.

#include <filesystem>
#include <string>
#include <vector>

#include "layerlens/dataset.hpp"
#include "layerlens/model.hpp"
#include "layerlens/safetensors.hpp"
#include "layerlens/tokenizer.hpp"

namespace testsupport {

std::filesystem::path source_dir();
std::filesystem::path fixture_path(const std::string& name);
std::filesystem::path gpt2_dir();

// True when the full GPT-2 asset set (config, weights, tokenizer files) is on
// disk; large-model tests SKIP otherwise.
bool gpt2_assets_present();

// Shared lazily-loaded GPT-2 instances (call only when gpt2_assets_present()).
const layerlens::model<double>& gpt2_model();
const layerlens::tokenizer& gpt2_tokenizer();

// RAII scratch directory under the system temp dir.
class scratch_dir {
public:
    scratch_dir();
    ~scratch_dir();
    scratch_dir(const scratch_dir&) = delete;
    scratch_dir& operator=(const scratch_dir&) = delete;
    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

// Seeded toy transformer in GPT-2 tensor naming, plus its config.
struct toy_model_spec {
    layerlens::model_config config;
    layerlens::tensor_archive archive;
};
toy_model_spec make_toy_archive(unsigned seed, int n_layers = 2, int d_model = 8,
                                int n_heads = 2, int vocab_size = 11, int max_context = 32);
layerlens::model<double> make_toy_model(unsigned seed);

// Toy byte-level BPE tokenizer over the alphabet {a, b, c, '.'} with 11
// entries, matching the toy model's vocab_size. Writes vocab.json/merges.txt
// into `dir` and loads them back.
void write_toy_tokenizer_files(const std::filesystem::path& dir);
layerlens::vocabulary make_toy_vocabulary(const std::filesystem::path& dir);
layerlens::vocabulary make_toy_vocabulary();  // files live in a process-wide scratch dir

// Tiny annotated dataset (1 pair + 2 fillers) and lexicon over the toy
// tokenizer's alphabet.
void write_toy_dataset(const std::filesystem::path& csv_path);
void write_toy_lexicon(const std::filesystem::path& tsv_path);

// Runs the layerlens CLI; the binary path comes from the LAYERLENS_BIN
// environment variable (set by CTest).
struct cli_result {
    int exit_code = -1;
    std::string out;
    std::string err;
};
cli_result run_cli(const std::vector<std::string>& args);

} // namespace testsupport
