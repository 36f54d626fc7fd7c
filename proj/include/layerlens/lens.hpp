#pragma once

// Logit-lens / tuned-lens decoding (Eq. 3): an intermediate layer's state is
// passed through an optional per-layer affine translator, the model's FINAL
// layer norm, and the unembedding matrix. Identity translator == logit-lens.
// Softmax / log-softmax use max-subtraction and 64-bit accumulation whatever
// the model's compute scalar.

#include <map>
#include <optional>

#include "layerlens/model.hpp"

namespace layerlens {

template <typename Scalar>
struct lens_translator {
    int layer = 0;
    matrix_t<Scalar> weight;  // [d_model, d_model]; applied as h' = weight·h + bias
    vector_t<Scalar> bias;    // [d_model]

    static lens_translator identity(int layer, int d_model) {
        lens_translator t;
        t.layer = layer;
        t.weight = matrix_t<Scalar>::Identity(d_model, d_model);
        t.bias = vector_t<Scalar>::Zero(d_model);
        return t;
    }
};

// Per-layer translators loaded from a safetensors archive with tensors named
// "translator.<layer>.weight" [d,d] and "translator.<layer>.bias" [d].
// Layers absent from the archive decode with the plain logit-lens.
template <typename Scalar>
class translator_set {
public:
    static translator_set load(const std::filesystem::path& path, int d_model) {
        tensor_archive archive = load_safetensors(path);
        translator_set set;
        size_t d = static_cast<size_t>(d_model);
        for (const auto& [name, entry] : archive.tensors) {
            if (!starts_with(name, "translator."))
                throw data_error("lens: unexpected tensor '" + name + "' in translator archive");
            size_t dot = name.find('.', 11);
            if (dot == std::string::npos)
                throw data_error("lens: malformed translator tensor name '" + name + "'");
            int layer = static_cast<int>(parse_long(name.substr(11, dot - 11)));
            std::string kind = name.substr(dot + 1);
            auto& tr = set.by_layer_[layer];
            tr.layer = layer;
            if (kind == "weight") {
                detail::check_finite(archive.at(name, {d, d}), name);
                tr.weight = detail::to_matrix<Scalar>(entry, d, d);
            } else if (kind == "bias") {
                detail::check_finite(archive.at(name, {d}), name);
                tr.bias = detail::to_vector<Scalar>(entry, d);
            } else {
                throw data_error("lens: malformed translator tensor name '" + name + "'");
            }
        }
        for (auto& [layer, tr] : set.by_layer_) {
            if (tr.weight.size() == 0)
                throw data_error("lens: translator layer " + std::to_string(layer) +
                                 " missing weight tensor");
            if (tr.bias.size() == 0) tr.bias = vector_t<Scalar>::Zero(d_model);
        }
        return set;
    }

    const lens_translator<Scalar>* find(int layer) const {
        auto it = by_layer_.find(layer);
        return it == by_layer_.end() ? nullptr : &it->second;
    }

    bool empty() const { return by_layer_.empty(); }

    void add(lens_translator<Scalar> tr) { by_layer_[tr.layer] = std::move(tr); }

private:
    std::map<int, lens_translator<Scalar>> by_layer_;
};

// ---------------------------------------------------------------------------
// Softmax helpers (double accumulation).
// ---------------------------------------------------------------------------

template <typename Derived>
Eigen::VectorXd log_softmax_double(const Eigen::MatrixBase<Derived>& logits) {
    Eigen::VectorXd x = logits.derived().template cast<double>().reshaped();
    double mx = x.maxCoeff();
    Eigen::ArrayXd shifted = x.array() - mx;
    double lse = std::log(shifted.exp().sum());
    return (shifted - lse).matrix();
}

template <typename Derived>
Eigen::VectorXd softmax_double(const Eigen::MatrixBase<Derived>& logits) {
    Eigen::VectorXd x = logits.derived().template cast<double>().reshaped();
    double mx = x.maxCoeff();
    Eigen::ArrayXd ex = (x.array() - mx).exp();
    return (ex / ex.sum()).matrix();
}

// ---------------------------------------------------------------------------
// Lens decoding.
// ---------------------------------------------------------------------------

// Raw lens logits for a whole layer: W_U · LayerNorm_final(T(h)) per position.
template <typename Scalar>
matrix_t<Scalar> lens_logits(const model<Scalar>& m, const layer_stack<Scalar>& stack, int layer,
                             const lens_translator<Scalar>* translator = nullptr) {
    if (layer < 0 || layer >= static_cast<int>(stack.states.size()))
        throw data_error("lens: layer index out of range: " + std::to_string(layer));
    matrix_t<Scalar> h = stack.states[static_cast<size_t>(layer)];
    if (translator) {
        if (translator->weight.rows() != m.config().d_model ||
            translator->weight.cols() != m.config().d_model ||
            translator->bias.size() != m.config().d_model)
            throw data_error("lens: translator shape does not match d_model");
        matrix_t<Scalar> translated(h.rows(), h.cols());
        translated.noalias() = h * translator->weight.transpose();
        translated.rowwise() += translator->bias.transpose();
        h = std::move(translated);
    }
    matrix_t<Scalar> normed = m.final_layernorm(h);
    matrix_t<Scalar> logits(h.rows(), m.config().vocab_size);
    logits.noalias() = normed * m.unembedding().transpose();
    return logits;
}

// Spec-level single-position distribution (probabilities, double precision).
template <typename Scalar>
Eigen::VectorXd lens_distribution(const model<Scalar>& m, const layer_stack<Scalar>& stack,
                                  int layer, int position,
                                  const lens_translator<Scalar>* translator = nullptr) {
    if (position < 0 || position >= stack.seq_len())
        throw data_error("lens: position out of range: " + std::to_string(position));
    matrix_t<Scalar> logits = lens_logits(m, stack, layer, translator);
    return softmax_double(logits.row(position).transpose());
}

// The model's own head as a probability distribution (independent code path).
template <typename Scalar>
Eigen::VectorXd head_distribution(const model<Scalar>& m, const layer_stack<Scalar>& stack,
                                  int position) {
    return softmax_double(m.head_logits(stack, position));
}

// One forward pass plus on-demand per-layer log-probabilities. This is the
// unit the extraction pipeline parallelizes over (one session per sentence).
template <typename Scalar>
class lens_session {
public:
    lens_session(const model<Scalar>& m, std::vector<int> ids,
                 const translator_set<Scalar>* translators = nullptr)
        : model_(m),
          ids_(std::move(ids)),
          translators_(translators),
          stack_(m.forward_collect(ids_)) {}

    const model<Scalar>& get_model() const { return model_; }
    const std::vector<int>& ids() const { return ids_; }
    const layer_stack<Scalar>& stack() const { return stack_; }
    int n_layers() const { return stack_.n_layers(); }
    int seq_len() const { return stack_.seq_len(); }

    // [seq_len, vocab] natural-log probabilities for one layer.
    Eigen::MatrixXd log_probs(int layer) const {
        const lens_translator<Scalar>* tr =
            translators_ ? translators_->find(layer) : nullptr;
        matrix_t<Scalar> logits = lens_logits(model_, stack_, layer, tr);
        Eigen::MatrixXd out(logits.rows(), logits.cols());
        for (Eigen::Index i = 0; i < logits.rows(); ++i)
            out.row(i) = log_softmax_double(logits.row(i).transpose()).transpose();
        return out;
    }

    Eigen::VectorXd log_prob_row(int layer, int position) const {
        if (position < 0 || position >= seq_len())
            throw data_error("lens: position out of range: " + std::to_string(position));
        const lens_translator<Scalar>* tr =
            translators_ ? translators_->find(layer) : nullptr;
        matrix_t<Scalar> logits = lens_logits(model_, stack_, layer, tr);
        return log_softmax_double(logits.row(position).transpose());
    }

private:
    const model<Scalar>& model_;
    std::vector<int> ids_;
    const translator_set<Scalar>* translators_;
    layer_stack<Scalar> stack_;
};

} // namespace layerlens
