#include <catch2/catch_amalgamated.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>

#include "everadapt/losses.hpp"
#include "everadapt/model.hpp"
#include "test_support.hpp"

using namespace everadapt;

TEST_CASE("model spec validation") {
    ModelSpec s = ModelSpec::desk_default(3);
    CHECK_NOTHROW(s.validate());

    SECTION("no blocks") {
        s.conv_blocks.clear();
        CHECK_THROWS_AS(s.validate(), config_error);
    }
    SECTION("too few classes") {
        s.num_classes = 1;
        CHECK_THROWS_AS(s.validate(), config_error);
    }
    SECTION("inconsistent feature dim") {
        s.feature_dim = 7;
        CHECK_THROWS_AS(s.validate(), config_error);
    }
}

TEST_CASE("paper-default spec forwards [B,1,1024] to [B,C]") {
    Model m = build_model(ModelSpec::paper_default(8), 1);
    m.set_training(false);
    for (auto& b : m.blocks) {
        b.norm.mode = NormMode::EvalBN;
        b.norm.stats_initialized = true;
    }
    auto x = make_tensor({2, 1, 1024});
    Rng rng(2);
    testutil::fill_uniform(*x, rng);
    Graph g;
    auto logits = m.forward(g, x);
    CHECK(logits->shape == std::vector<std::size_t>{2, 8});
    for (double v : logits->data) CHECK(std::isfinite(v));
}

TEST_CASE("same seed gives bit-identical initial weights") {
    Model a = build_model(ModelSpec::desk_default(3), 99);
    Model b = build_model(ModelSpec::desk_default(3), 99);
    Model c = build_model(ModelSpec::desk_default(3), 100);
    auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
    REQUIRE(pa.size() == pb.size());
    bool any_diff_c = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i]->data == pb[i]->data);
        if (pa[i]->data != pc[i]->data) any_diff_c = true;
    }
    CHECK(any_diff_c);
}

TEST_CASE("desk-default forward stays under 1 ms per sample") {
    Model m = build_model(ModelSpec::desk_default(3), 1);
    m.set_training(false);
    for (auto& b : m.blocks) {
        b.norm.mode = NormMode::EvalBN;
        b.norm.stats_initialized = true;
    }
    const std::size_t batch = 64;
    auto x = make_tensor({batch, 1, 128});
    Rng rng(3);
    testutil::fill_uniform(*x, rng);
    // Warm-up pass, then timed passes.
    {
        Graph g;
        m.forward(g, x);
    }
    const auto t0 = std::chrono::steady_clock::now();
    const int reps = 5;
    for (int r = 0; r < reps; ++r) {
        Graph g;
        m.forward(g, x);
    }
    const double seconds = std::chrono::duration<double>(
                               std::chrono::steady_clock::now() - t0).count();
    const double ms_per_sample = 1000.0 * seconds / static_cast<double>(reps * batch);
    CHECK(ms_per_sample < 1.0);
}

TEST_CASE("extract_features contract") {
    Model m = build_model(ModelSpec::desk_default(3), 5);
    m.set_training(false);
    for (auto& b : m.blocks) {
        b.norm.mode = NormMode::EvalBN;
        b.norm.stats_initialized = true;
    }
    auto x = make_tensor({4, 1, 128});
    Rng rng(4);
    testutil::fill_uniform(*x, rng);

    Graph g1, g2;
    auto f1 = m.extract_features(g1, x);
    auto f2 = m.extract_features(g2, x);
    CHECK(f1->shape == std::vector<std::size_t>{4, 16});
    CHECK(f1->data == f2->data);
    for (double v : f1->data) CHECK(std::isfinite(v));

    SECTION("wrong channel count") {
        auto bad = make_tensor({4, 2, 128});
        Graph g;
        CHECK_THROWS_AS(m.extract_features(g, bad), dimension_error);
    }
}

TEST_CASE("classify contract") {
    Model m = build_model(ModelSpec::desk_default(3), 6);
    SECTION("shape [B,C]") {
        auto f = make_tensor({5, 16});
        Graph g;
        CHECK(m.classify(g, f)->shape == std::vector<std::size_t>{5, 3});
    }
    SECTION("zero features and zero bias give zero logits") {
        for (auto& v : m.fc_bias->data) v = 0.0;
        auto f = make_tensor({2, 16}, 0.0);
        Graph g;
        auto logits = m.classify(g, f);
        for (double v : logits->data) CHECK(v == 0.0);
    }
    SECTION("matches the dense op on a hand 2x2 case") {
        ModelSpec tiny = ModelSpec::desk_default(2);
        tiny.conv_blocks = {{2, 1, 0.0}};
        tiny.feature_dim = 2;
        Model t = build_model(tiny, 0);
        t.fc_weight->data = {1.0, 2.0, 3.0, 4.0};
        t.fc_bias->data = {0.5, -0.5};
        auto f = make_tensor({1, 2}, {1.0, 1.0});
        Graph g;
        auto logits = t.classify(g, f);
        CHECK(logits->data[0] == Catch::Approx(3.5));
        CHECK(logits->data[1] == Catch::Approx(6.5));
    }
    SECTION("dim mismatch") {
        auto f = make_tensor({2, 5});
        Graph g;
        CHECK_THROWS_AS(m.classify(g, f), dimension_error);
    }
}

TEST_CASE("norm kind switch changes no parameter shapes") {
    ModelSpec bn_spec = ModelSpec::desk_default(3);
    bn_spec.norm_mode = NormKind::BN;
    ModelSpec cbn_spec = ModelSpec::desk_default(3);
    cbn_spec.norm_mode = NormKind::CBN;
    Model a = build_model(bn_spec, 7);
    Model b = build_model(cbn_spec, 7);
    auto pa = a.parameters(), pb = b.parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i]->shape == pb[i]->shape);
}

TEST_CASE("end-to-end gradients on the desk model match finite differences") {
    Model m = build_model(ModelSpec::desk_default(3), 11);
    m.set_training(false);   // dropout disabled for the check
    for (auto& b : m.blocks) {
        b.norm.mode = NormMode::TrainBN;   // exercise batch statistics too
    }
    auto x = make_tensor({3, 1, 32});
    Rng rng(12);
    testutil::fill_uniform(*x, rng);
    const std::vector<int> labels{0, 1, 2};

    // Shrink the input length so the FD sweep over ~800 parameters stays fast:
    // spec pooling (2x) twice maps 32 -> 5 after the two conv blocks.
    auto eval = [&]() {
        // TrainBN mutates EMA; run on a scratch copy of the states.
        std::vector<BatchNormState> saved;
        for (auto& b : m.blocks) saved.push_back(b.norm);
        Graph g;
        const double v = cross_entropy(g, m.forward(g, x), labels)->data[0];
        for (std::size_t i = 0; i < m.blocks.size(); ++i) m.blocks[i].norm = saved[i];
        return v;
    };

    std::vector<BatchNormState> saved;
    for (auto& b : m.blocks) saved.push_back(b.norm);
    Graph g;
    auto loss = cross_entropy(g, m.forward(g, x), labels);
    g.backward(loss);
    for (std::size_t i = 0; i < m.blocks.size(); ++i) m.blocks[i].norm = saved[i];

    for (const auto& p : m.parameters()) {
        REQUIRE(!p->grad.empty());
        const double err = testutil::max_grad_err(eval, *p, p->grad);
        INFO("parameter " << p->shape_str());
        CHECK(err < 1e-3);
    }
}

TEST_CASE("checkpoint round trip is bit-exact") {
    namespace fs = std::filesystem;
    Model m = build_model(ModelSpec::desk_default(3), 21);
    // Make the state distinctive.
    Rng rng(22);
    for (auto& p : m.parameters())
        for (auto& v : p->data) v = rng.uniform(-2.0, 2.0);
    for (auto& b : m.blocks) {
        for (auto& v : b.norm.mu_ema) v = rng.uniform(-1.0, 1.0);
        for (auto& v : b.norm.var_ema) v = rng.uniform(0.5, 3.0);
        b.norm.mode = NormMode::CBN;
        b.norm.stats_initialized = true;
        b.norm.ema_momentum = 0.05;
    }

    const auto path = fs::temp_directory_path() / "everadapt_test_ckpt.bin";
    save_model(path.string(), m);
    Model r = load_model(path.string());

    auto pm = m.parameters(), pr = r.parameters();
    REQUIRE(pm.size() == pr.size());
    for (std::size_t i = 0; i < pm.size(); ++i) CHECK(pm[i]->data == pr[i]->data);
    for (std::size_t i = 0; i < m.blocks.size(); ++i) {
        CHECK(m.blocks[i].norm.mu_ema == r.blocks[i].norm.mu_ema);
        CHECK(m.blocks[i].norm.var_ema == r.blocks[i].norm.var_ema);
        CHECK(r.blocks[i].norm.mode == NormMode::CBN);
        CHECK(r.blocks[i].norm.stats_initialized);
        CHECK(r.blocks[i].norm.ema_momentum == 0.05);
    }
    CHECK(r.spec.num_classes == 3);
    fs::remove(path);

    SECTION("corrupted magic rejected") {
        const auto bad = fs::temp_directory_path() / "everadapt_bad_ckpt.bin";
        std::ofstream f(bad, std::ios::binary);
        f << "not a checkpoint";
        f.close();
        CHECK_THROWS_AS(load_model(bad.string()), format_error);
        fs::remove(bad);
    }
}

TEST_CASE("dropout honors train/eval mode in the block stack") {
    ModelSpec spec = ModelSpec::desk_default(3);
    spec.conv_blocks[0].dropout_p = 0.5;
    Model m = build_model(spec, 30);
    for (auto& b : m.blocks) {
        b.norm.mode = NormMode::EvalBN;
        b.norm.stats_initialized = true;
    }
    auto x = make_tensor({2, 1, 128});
    Rng rng(31);
    testutil::fill_uniform(*x, rng);

    m.set_training(false);
    Graph g1, g2;
    CHECK(m.extract_features(g1, x)->data == m.extract_features(g2, x)->data);

    m.set_training(true);
    Graph g3, g4;
    // Successive training forwards consume the dropout stream: masks differ.
    CHECK(m.extract_features(g3, x)->data != m.extract_features(g4, x)->data);
}
