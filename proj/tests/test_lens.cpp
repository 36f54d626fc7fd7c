#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "layerlens/common.hpp"
#include "layerlens/lens.hpp"
#include "layerlens/safetensors.hpp"
#include "test_support.hpp"

using namespace layerlens;

namespace {

const std::vector<int> kToyIds = {10, 5, 1, 9, 4, 6};

} // namespace

TEST_CASE("lens distributions are proper probability vectors", "[lens]") {
    model<double> m = testsupport::make_toy_model(7);
    lens_session<double> session(m, kToyIds);
    for (int layer = 0; layer <= session.n_layers(); ++layer) {
        Eigen::MatrixXd lp = session.log_probs(layer);
        REQUIRE(lp.rows() == static_cast<Eigen::Index>(kToyIds.size()));
        REQUIRE(lp.cols() == m.config().vocab_size);
        for (Eigen::Index i = 0; i < lp.rows(); ++i) {
            double total = lp.row(i).array().exp().sum();
            INFO("layer " << layer << " row " << i);
            REQUIRE(total == Catch::Approx(1.0).epsilon(1e-12));
            REQUIRE(lp.row(i).maxCoeff() <= 0.0);
        }
    }
}

TEST_CASE("last-layer lens equals the model head", "[lens]") {
    // The lens at the deepest layer and the output head compute the same
    // distribution through two separately written code paths.
    model<double> m = testsupport::make_toy_model(19);
    lens_session<double> session(m, kToyIds);
    const layer_stack<double>& stack = session.stack();
    for (int pos = 0; pos < session.seq_len(); ++pos) {
        Eigen::VectorXd lens = lens_distribution(m, stack, session.n_layers(), pos);
        Eigen::VectorXd head = head_distribution(m, stack, pos);
        REQUIRE(lens.size() == head.size());
        for (Eigen::Index w = 0; w < lens.size(); ++w) {
            INFO("pos " << pos << " token " << w);
            REQUIRE(std::abs(lens[w] - head[w]) <= 1e-6);
        }
    }
}

TEST_CASE("identity translators reproduce the logit-lens bitwise", "[lens]") {
    model<double> m = testsupport::make_toy_model(3);
    translator_set<double> identity;
    for (int layer = 0; layer <= m.config().n_layers; ++layer)
        identity.add(lens_translator<double>::identity(layer, m.config().d_model));

    lens_session<double> plain(m, kToyIds);
    lens_session<double> tuned(m, kToyIds, &identity);
    for (int layer = 0; layer <= m.config().n_layers; ++layer) {
        Eigen::MatrixXd a = plain.log_probs(layer);
        Eigen::MatrixXd b = tuned.log_probs(layer);
        REQUIRE((a.array() == b.array()).all());  // bitwise
    }
}

TEST_CASE("a non-identity translator changes the decoded distribution", "[lens]") {
    model<double> m = testsupport::make_toy_model(3);
    translator_set<double> set;
    lens_translator<double> tr = lens_translator<double>::identity(1, m.config().d_model);
    tr.weight *= 0.5;
    tr.bias.setConstant(0.25);
    set.add(tr);

    lens_session<double> plain(m, kToyIds);
    lens_session<double> tuned(m, kToyIds, &set);
    CHECK(!(plain.log_probs(1).array() == tuned.log_probs(1).array()).all());
    // Layers without a translator fall back to the plain logit-lens.
    CHECK((plain.log_probs(0).array() == tuned.log_probs(0).array()).all());
    CHECK((plain.log_probs(2).array() == tuned.log_probs(2).array()).all());
}

TEST_CASE("translator archives round-trip through safetensors", "[lens]") {
    testsupport::scratch_dir dir;
    int d = 8;
    tensor_archive archive;
    tensor_entry w;
    w.shape = {static_cast<size_t>(d), static_cast<size_t>(d)};
    w.data.assign(static_cast<size_t>(d * d), 0.0);
    for (int i = 0; i < d; ++i) w.data[static_cast<size_t>(i * d + i)] = 2.0;
    tensor_entry b;
    b.shape = {static_cast<size_t>(d)};
    b.data.assign(static_cast<size_t>(d), 0.125);
    archive.tensors["translator.3.weight"] = w;
    archive.tensors["translator.3.bias"] = b;
    archive.tensors["translator.5.weight"] = w;  // bias omitted -> zeros
    save_safetensors(dir / "tr.safetensors", archive, true);

    translator_set<double> set = translator_set<double>::load(dir / "tr.safetensors", d);
    const lens_translator<double>* t3 = set.find(3);
    REQUIRE(t3 != nullptr);
    CHECK(t3->weight(0, 0) == 2.0);
    CHECK(t3->bias[0] == 0.125);
    const lens_translator<double>* t5 = set.find(5);
    REQUIRE(t5 != nullptr);
    CHECK(t5->bias.isZero());
    CHECK(set.find(4) == nullptr);
}

TEST_CASE("translator loading rejects malformed archives", "[lens]") {
    testsupport::scratch_dir dir;
    tensor_entry w;
    w.shape = {8, 8};
    w.data.assign(64, 1.0);
    tensor_entry b;
    b.shape = {8};
    b.data.assign(8, 0.0);

    SECTION("foreign tensor name") {
        tensor_archive a;
        a.tensors["weird.weight"] = w;
        save_safetensors(dir / "t.safetensors", a, true);
        CHECK_THROWS_AS(translator_set<double>::load(dir / "t.safetensors", 8), data_error);
    }
    SECTION("missing weight") {
        tensor_archive a;
        a.tensors["translator.2.bias"] = b;
        save_safetensors(dir / "t.safetensors", a, true);
        CHECK_THROWS_AS(translator_set<double>::load(dir / "t.safetensors", 8), data_error);
    }
    SECTION("wrong d_model") {
        tensor_archive a;
        a.tensors["translator.2.weight"] = w;
        a.tensors["translator.2.bias"] = b;
        save_safetensors(dir / "t.safetensors", a, true);
        CHECK_THROWS_AS(translator_set<double>::load(dir / "t.safetensors", 16), data_error);
    }
    SECTION("unparsable layer index") {
        tensor_archive a;
        a.tensors["translator.x.weight"] = w;
        save_safetensors(dir / "t.safetensors", a, true);
        CHECK_THROWS_AS(translator_set<double>::load(dir / "t.safetensors", 8), data_error);
    }
}

TEST_CASE("translators applied before the final layer norm shift the lens", "[lens]") {
    // Applying h' = W·h + b and then ln_f must differ from ln_f alone whenever
    // the translator is not an identity — checked structurally above; here the
    // exact affine order is pinned against a hand computation.
    model<double> m = testsupport::make_toy_model(31);
    int d = m.config().d_model;
    lens_translator<double> tr = lens_translator<double>::identity(0, d);
    tr.weight.setZero();
    for (int i = 0; i < d; ++i) tr.weight(i, (i + 1) % d) = 1.0;  // cyclic permutation
    tr.bias.setConstant(0.5);

    lens_session<double> session(m, kToyIds);
    const matrix_t<double>& h0 = session.stack().states[0];
    // Hand path: permute+shift the state, then reuse the model's own ln_f and
    // unembedding (those pieces are validated elsewhere).
    matrix_t<double> translated(h0.rows(), h0.cols());
    for (Eigen::Index i = 0; i < h0.rows(); ++i)
        for (int j = 0; j < d; ++j) translated(i, j) = h0(i, (j + 1) % d) + 0.5;
    matrix_t<double> want_logits = m.final_layernorm(translated) * m.unembedding().transpose();

    matrix_t<double> got_logits = lens_logits(m, session.stack(), 0, &tr);
    for (Eigen::Index i = 0; i < want_logits.rows(); ++i)
        for (Eigen::Index j = 0; j < want_logits.cols(); ++j)
            REQUIRE(got_logits(i, j) == Catch::Approx(want_logits(i, j)).margin(1e-12));
}

TEST_CASE("lens rejects out-of-range layers and positions", "[lens]") {
    model<double> m = testsupport::make_toy_model(7);
    lens_session<double> session(m, kToyIds);
    CHECK_THROWS_AS(session.log_probs(-1), data_error);
    CHECK_THROWS_AS(session.log_probs(m.config().n_layers + 1), data_error);
    CHECK_THROWS_AS(session.log_prob_row(0, -1), data_error);
    CHECK_THROWS_AS(session.log_prob_row(0, static_cast<int>(kToyIds.size())), data_error);
    CHECK_THROWS_AS(lens_distribution(m, session.stack(), 0, 99), data_error);
}

TEST_CASE("translator shape mismatch is rejected at decode time", "[lens]") {
    model<double> m = testsupport::make_toy_model(7);
    lens_session<double> session(m, kToyIds);
    lens_translator<double> bad = lens_translator<double>::identity(0, 4);  // wrong d
    CHECK_THROWS_AS(lens_logits(m, session.stack(), 0, &bad), data_error);
}
