#pragma once

// Decoder-only transformer (GPT-2 family): config, weight loading from a
// safetensors archive using the published GPT-2 tensor names (docs/weights.md),
// and a deterministic forward pass that captures every layer's post-residual
// state. Templated on the compute scalar: the pipeline instantiates double,
// tests also use float. All math is single-threaded Eigen with a fixed
// operation order, so identical inputs give bit-identical outputs.

#define EIGEN_DONT_PARALLELIZE 1

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "layerlens/common.hpp"
#include "layerlens/safetensors.hpp"

namespace layerlens {

struct model_config {
    int n_layers = 0;
    int d_model = 0;
    int n_heads = 0;
    int vocab_size = 0;
    int max_context = 0;
    double ln_epsilon = 1e-5;

    void validate() const {
        if (n_layers < 0) throw data_error("model: n_layers must be >= 0");
        if (d_model < 1 || n_heads < 1 || vocab_size < 1 || max_context < 1)
            throw data_error("model: d_model, n_heads, vocab_size, max_context must be >= 1");
        if (d_model % n_heads != 0)
            throw data_error("model: d_model (" + std::to_string(d_model) +
                             ") not divisible by n_heads (" + std::to_string(n_heads) + ")");
        if (!(ln_epsilon > 0)) throw data_error("model: ln_epsilon must be > 0");
    }

    // Reads either this library's config keys or the published GPT-2
    // config.json keys (n_layer/n_embd/n_head/vocab_size/n_positions).
    static model_config from_json_file(const std::filesystem::path& path) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(read_file(path));
        } catch (const nlohmann::json::exception& e) {
            throw data_error("model: malformed config JSON (" + path.string() + "): " + e.what());
        }
        auto pick_int = [&](std::initializer_list<const char*> keys) -> int {
            for (const char* k : keys)
                if (j.contains(k)) return j.at(k).get<int>();
            std::string names;
            for (const char* k : keys) names += std::string(names.empty() ? "" : "/") + k;
            throw data_error("model: config missing key " + names);
        };
        model_config c;
        c.n_layers = pick_int({"n_layers", "n_layer"});
        c.d_model = pick_int({"d_model", "n_embd"});
        c.n_heads = pick_int({"n_heads", "n_head"});
        c.vocab_size = pick_int({"vocab_size"});
        c.max_context = pick_int({"max_context", "n_positions", "n_ctx"});
        if (j.contains("ln_epsilon"))
            c.ln_epsilon = j.at("ln_epsilon").get<double>();
        else if (j.contains("layer_norm_epsilon"))
            c.ln_epsilon = j.at("layer_norm_epsilon").get<double>();
        c.validate();
        return c;
    }
};

template <typename Scalar>
using matrix_t = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using vector_t = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// states[0] is emb+pos (Eq. 2); states[l] is the post-residual output of
// block l. The final layer-norm is NOT baked in — lens decoding applies it.
template <typename Scalar>
struct layer_stack {
    std::vector<matrix_t<Scalar>> states;  // (n_layers+1) x [seq_len, d_model]

    int seq_len() const { return states.empty() ? 0 : static_cast<int>(states[0].rows()); }
    int n_layers() const { return static_cast<int>(states.size()) - 1; }
};

template <typename Scalar>
struct transformer_block {
    vector_t<Scalar> ln1_gain, ln1_bias, ln2_gain, ln2_bias;
    matrix_t<Scalar> attn_qkv_w;   // [d, 3d]
    vector_t<Scalar> attn_qkv_b;   // [3d]
    matrix_t<Scalar> attn_proj_w;  // [d, d]
    vector_t<Scalar> attn_proj_b;  // [d]
    matrix_t<Scalar> mlp_fc_w;     // [d, d_ff]
    vector_t<Scalar> mlp_fc_b;     // [d_ff]
    matrix_t<Scalar> mlp_proj_w;   // [d_ff, d]
    vector_t<Scalar> mlp_proj_b;   // [d]
};

namespace detail {

template <typename Scalar>
matrix_t<Scalar> to_matrix(const tensor_entry& t, size_t rows, size_t cols) {
    matrix_t<Scalar> m(rows, cols);
    for (size_t i = 0; i < rows * cols; ++i)
        m.data()[i] = static_cast<Scalar>(t.data[i]);
    return m;
}

template <typename Scalar>
vector_t<Scalar> to_vector(const tensor_entry& t, size_t len) {
    vector_t<Scalar> v(len);
    for (size_t i = 0; i < len; ++i) v[i] = static_cast<Scalar>(t.data[i]);
    return v;
}

inline void check_finite(const tensor_entry& t, const std::string& name) {
    for (double v : t.data)
        if (!std::isfinite(v))
            throw data_error("model: tensor '" + name + "' contains a non-finite value");
}

} // namespace detail

template <typename Scalar>
class model {
public:
    static model load(const std::filesystem::path& config_path,
                      const std::filesystem::path& weights_path) {
        model_config config = model_config::from_json_file(config_path);
        tensor_archive archive = load_safetensors(weights_path);
        return from_archive(config, archive);
    }

    static model from_archive(const model_config& config, const tensor_archive& raw) {
        config.validate();
        // Tolerate the "transformer." name prefix some exports carry.
        const tensor_archive* arch = &raw;
        tensor_archive stripped;
        if (!raw.contains("wte.weight") && raw.contains("transformer.wte.weight")) {
            for (const auto& [name, t] : raw.tensors)
                stripped.tensors.emplace(
                    starts_with(name, "transformer.") ? name.substr(12) : name, t);
            arch = &stripped;
        }

        model m;
        m.config_ = config;
        size_t d = static_cast<size_t>(config.d_model);
        size_t v = static_cast<size_t>(config.vocab_size);
        size_t ctx = static_cast<size_t>(config.max_context);
        size_t ff = 4 * d;

        auto mat = [&](const std::string& name, size_t r, size_t c) {
            const tensor_entry& t = arch->at(name, {r, c});
            detail::check_finite(t, name);
            return detail::to_matrix<Scalar>(t, r, c);
        };
        auto vec = [&](const std::string& name, size_t len) {
            const tensor_entry& t = arch->at(name, {len});
            detail::check_finite(t, name);
            return detail::to_vector<Scalar>(t, len);
        };

        m.wte_ = mat("wte.weight", v, d);
        m.wpe_ = mat("wpe.weight", ctx, d);
        for (int l = 0; l < config.n_layers; ++l) {
            std::string p = "h." + std::to_string(l) + ".";
            transformer_block<Scalar> b;
            b.ln1_gain = vec(p + "ln_1.weight", d);
            b.ln1_bias = vec(p + "ln_1.bias", d);
            b.attn_qkv_w = mat(p + "attn.c_attn.weight", d, 3 * d);
            b.attn_qkv_b = vec(p + "attn.c_attn.bias", 3 * d);
            b.attn_proj_w = mat(p + "attn.c_proj.weight", d, d);
            b.attn_proj_b = vec(p + "attn.c_proj.bias", d);
            b.ln2_gain = vec(p + "ln_2.weight", d);
            b.ln2_bias = vec(p + "ln_2.bias", d);
            b.mlp_fc_w = mat(p + "mlp.c_fc.weight", d, ff);
            b.mlp_fc_b = vec(p + "mlp.c_fc.bias", ff);
            b.mlp_proj_w = mat(p + "mlp.c_proj.weight", ff, d);
            b.mlp_proj_b = vec(p + "mlp.c_proj.bias", d);
            m.blocks_.push_back(std::move(b));
        }
        m.lnf_gain_ = vec("ln_f.weight", d);
        m.lnf_bias_ = vec("ln_f.bias", d);
        return m;
    }

    const model_config& config() const { return config_; }
    const matrix_t<Scalar>& unembedding() const { return wte_; }  // W_U = wte (tied)

    // Eq. 1–2: embeddings plus every block's post-residual output.
    layer_stack<Scalar> forward_collect(const std::vector<int>& ids) const {
        int T = static_cast<int>(ids.size());
        if (T < 1) throw data_error("model: empty token sequence");
        if (T > config_.max_context)
            throw data_error("model: sequence length " + std::to_string(T) +
                             " exceeds max_context " + std::to_string(config_.max_context));
        for (int id : ids)
            if (id < 0 || id >= config_.vocab_size)
                throw data_error("model: token id out of range: " + std::to_string(id));

        layer_stack<Scalar> stack;
        stack.states.reserve(static_cast<size_t>(config_.n_layers) + 1);
        matrix_t<Scalar> h(T, config_.d_model);
        for (int i = 0; i < T; ++i)
            h.row(i) = wte_.row(ids[i]) + wpe_.row(i);
        stack.states.push_back(h);
        for (const auto& block : blocks_) {
            block_forward(h, block);
            stack.states.push_back(h);
        }
        return stack;
    }

    // The model's final layer norm, applied row-wise.
    matrix_t<Scalar> final_layernorm(const matrix_t<Scalar>& x) const {
        return layernorm(x, lnf_gain_, lnf_bias_);
    }

    // Standard output head, written as an independent straight-line path (not
    // shared with lens decoding) so lens-vs-head checks are meaningful.
    vector_t<Scalar> head_logits(const layer_stack<Scalar>& stack, int position) const {
        const matrix_t<Scalar>& final_state = stack.states.back();
        if (position < 0 || position >= final_state.rows())
            throw data_error("model: head position out of range");
        int d = config_.d_model;
        vector_t<Scalar> row = final_state.row(position);
        Scalar mean = 0, var = 0;
        for (int j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<Scalar>(d);
        for (int j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= static_cast<Scalar>(d);
        Scalar inv = Scalar(1) / std::sqrt(var + static_cast<Scalar>(config_.ln_epsilon));
        vector_t<Scalar> normed(d);
        for (int j = 0; j < d; ++j)
            normed[j] = (row[j] - mean) * inv * lnf_gain_[j] + lnf_bias_[j];
        vector_t<Scalar> logits(config_.vocab_size);
        for (int w = 0; w < config_.vocab_size; ++w) {
            Scalar acc = 0;
            for (int j = 0; j < d; ++j) acc += wte_(w, j) * normed[j];
            logits[w] = acc;
        }
        return logits;
    }

private:
    matrix_t<Scalar> layernorm(const matrix_t<Scalar>& x, const vector_t<Scalar>& gain,
                               const vector_t<Scalar>& bias) const {
        matrix_t<Scalar> out(x.rows(), x.cols());
        Scalar eps = static_cast<Scalar>(config_.ln_epsilon);
        for (Eigen::Index i = 0; i < x.rows(); ++i) {
            Scalar mean = x.row(i).mean();
            auto centered = (x.row(i).array() - mean).eval();
            Scalar var = centered.square().sum() / static_cast<Scalar>(x.cols());
            Scalar inv = Scalar(1) / std::sqrt(var + eps);
            out.row(i) = ((centered * inv) * gain.transpose().array()).matrix() +
                         bias.transpose();
        }
        return out;
    }

    static void softmax_rows_causal(matrix_t<Scalar>& scores) {
        // Row i attends to columns 0..i only.
        for (Eigen::Index i = 0; i < scores.rows(); ++i) {
            auto row = scores.row(i).head(i + 1);
            Scalar mx = row.maxCoeff();
            auto ex = (row.array() - mx).exp().eval();
            Scalar z = ex.sum();
            scores.row(i).head(i + 1) = (ex / z).matrix();
            scores.row(i).tail(scores.cols() - i - 1).setZero();
        }
    }

    static Scalar gelu_new(Scalar x) {
        const Scalar c = static_cast<Scalar>(0.7978845608028654);  // sqrt(2/pi)
        return Scalar(0.5) * x *
               (Scalar(1) + std::tanh(c * (x + static_cast<Scalar>(0.044715) * x * x * x)));
    }

    void block_forward(matrix_t<Scalar>& h, const transformer_block<Scalar>& block) const {
        int T = static_cast<int>(h.rows());
        int d = config_.d_model;
        int heads = config_.n_heads;
        int dh = d / heads;
        Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(dh));

        // Attention sublayer.
        matrix_t<Scalar> a = layernorm(h, block.ln1_gain, block.ln1_bias);
        matrix_t<Scalar> qkv(T, 3 * d);
        qkv.noalias() = a * block.attn_qkv_w;
        qkv.rowwise() += block.attn_qkv_b.transpose();
        matrix_t<Scalar> merged(T, d);
        for (int head = 0; head < heads; ++head) {
            auto q = qkv.block(0, head * dh, T, dh);
            auto k = qkv.block(0, d + head * dh, T, dh);
            auto v = qkv.block(0, 2 * d + head * dh, T, dh);
            matrix_t<Scalar> scores(T, T);
            scores.noalias() = q * k.transpose();
            scores *= scale;
            softmax_rows_causal(scores);
            merged.block(0, head * dh, T, dh).noalias() = scores * v;
        }
        matrix_t<Scalar> attn_out(T, d);
        attn_out.noalias() = merged * block.attn_proj_w;
        attn_out.rowwise() += block.attn_proj_b.transpose();
        h += attn_out;

        // MLP sublayer.
        matrix_t<Scalar> m = layernorm(h, block.ln2_gain, block.ln2_bias);
        matrix_t<Scalar> inner(T, block.mlp_fc_w.cols());
        inner.noalias() = m * block.mlp_fc_w;
        inner.rowwise() += block.mlp_fc_b.transpose();
        for (Eigen::Index i = 0; i < inner.size(); ++i)
            inner.data()[i] = gelu_new(inner.data()[i]);
        matrix_t<Scalar> mlp_out(T, d);
        mlp_out.noalias() = inner * block.mlp_proj_w;
        mlp_out.rowwise() += block.mlp_proj_b.transpose();
        h += mlp_out;
    }

    model_config config_;
    matrix_t<Scalar> wte_;
    matrix_t<Scalar> wpe_;
    std::vector<transformer_block<Scalar>> blocks_;
    vector_t<Scalar> lnf_gain_, lnf_bias_;
};

} // namespace layerlens
