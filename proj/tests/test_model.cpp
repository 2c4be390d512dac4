// Backbone model: merge schedules, parameter registry and initialization,
// forward-pass wiring, ablations, checkpoints, and gradient fidelity.

#include <doctest.h>

#include "dam/model.hpp"
#include "test_util.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

using namespace dam;

namespace {

ModelConfig tiny_config(int layers = 2) {
    ModelConfig cfg;
    cfg.d_model = 8;
    cfg.d_ff = 8;
    cfg.n_layers = layers;
    cfg.n_heads = 2;
    cfg.dropout = 0.0;
    return cfg;
}

DamModel<double> tiny_model(int layers = 2, std::uint64_t seed = 11) {
    DamModel<double> m(tiny_config(layers));
    Rng rng(seed);
    m.init_params(rng);
    return m;
}

PreparedContext<double> hourly_context(const DamModel<double>& m, int n, std::uint64_t seed = 3) {
    std::vector<double> times(static_cast<std::size_t>(n));
    std::vector<double> values(static_cast<std::size_t>(n));
    Rng rng(seed);
    for (int i = 0; i < n; ++i) {
        const double t = (i - n) / 24.0;
        times[static_cast<std::size_t>(i)] = t;
        values[static_cast<std::size_t>(i)] = std::sin(kTwoPi * t) + 0.2 * t + rng.normal(0.0, 0.05);
    }
    return m.prepare_context(times, values);
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Groups must partition 0..n-1 with survivors in original relative order.
void check_partition(const MergeGroups& groups, int n) {
    std::vector<int> seen;
    for (const auto& g : groups) {
        REQUIRE(!g.empty());
        for (int i : g) seen.push_back(i);
    }
    std::sort(seen.begin(), seen.end());
    std::vector<int> expect(static_cast<std::size_t>(n));
    std::iota(expect.begin(), expect.end(), 0);
    CHECK(seen == expect);
}

// Fresh implementation of the deterministic bipartite matcher used as an
// oracle: even positions propose to their most similar odd position, the r
// strongest proposals merge.
TomePlan oracle_tome_plan(const MatrixD& metric, int r_requested) {
    const int n = static_cast<int>(metric.rows());
    TomePlan plan;
    plan.r = std::max(0, std::min(r_requested, n / 2));

    std::vector<int> a, b;
    for (int i = 0; i < n; ++i) (i % 2 == 0 ? a : b).push_back(i);
    auto cosine = [&](int i, int j) {
        const double ni = metric.row(i).norm(), nj = metric.row(j).norm();
        if (ni == 0.0 || nj == 0.0) return 0.0;
        return metric.row(i).dot(metric.row(j)) / (ni * nj);
    };
    struct Proposal {
        double score;
        int a_rank;
        int b_rank;
    };
    std::vector<Proposal> props;
    for (std::size_t ai = 0; ai < a.size(); ++ai) {
        double best = -std::numeric_limits<double>::infinity();
        int arg = 0;
        for (std::size_t bi = 0; bi < b.size(); ++bi) {
            const double s = cosine(a[ai], b[bi]);
            if (s > best) {
                best = s;
                arg = static_cast<int>(bi);
            }
        }
        props.push_back({best, static_cast<int>(ai), arg});
    }
    std::sort(props.begin(), props.end(), [](const Proposal& x, const Proposal& y) {
        if (x.score != y.score) return x.score > y.score;
        return x.a_rank < y.a_rank;
    });
    std::vector<bool> gone(a.size(), false);
    std::vector<std::vector<int>> attach(b.size());
    for (int k = 0; k < plan.r; ++k) {
        gone[static_cast<std::size_t>(props[static_cast<std::size_t>(k)].a_rank)] = true;
        attach[static_cast<std::size_t>(props[static_cast<std::size_t>(k)].b_rank)].push_back(
            a[static_cast<std::size_t>(props[static_cast<std::size_t>(k)].a_rank)]);
    }
    for (int i = 0; i < n; ++i) {
        if (i % 2 == 0) {
            const std::size_t ai = static_cast<std::size_t>(i / 2);
            if (!gone[ai]) plan.groups.push_back({i});
        } else {
            std::vector<int> g = {i};
            const std::size_t bi = static_cast<std::size_t>(i / 2);
            for (int src : attach[bi]) g.push_back(src);
            std::sort(g.begin(), g.end());
            plan.groups.push_back(std::move(g));
        }
    }
    return plan;
}

}  // namespace

TEST_CASE("model config validation") {
    CHECK_NOTHROW(tiny_config().validate());
    ModelConfig c = tiny_config();
    c.d_model = 0;
    CHECK_THROWS_AS(c.validate(), user_error);
    c = tiny_config();
    c.n_heads = 3;  // 8 % 3 != 0
    CHECK_THROWS_AS(c.validate(), user_error);
    c = tiny_config();
    c.dropout = 1.0;
    CHECK_THROWS_AS(c.validate(), user_error);
    c = tiny_config();
    c.dropout = -0.1;
    CHECK_THROWS_AS(c.validate(), user_error);
    c = tiny_config();
    c.hsr_reference_context = 0;
    CHECK_THROWS_AS(c.validate(), user_error);
    CHECK_THROWS_AS(DamModel<double>{c}, user_error);  // construction validates
}

TEST_CASE("merge target scales with context size") {
    ModelConfig cfg;  // n_tome 250, reference context 540
    CHECK(tome_target_for_context(540, cfg) == 250);
    CHECK(tome_target_for_context(900, cfg) == 417);
    CHECK(tome_target_for_context(1100, cfg) == 509);
    CHECK(tome_target_for_context(1200, cfg) == 556);
    CHECK(tome_target_for_context(1300, cfg) == 602);
    CHECK(tome_target_for_context(1400, cfg) == 648);
    CHECK(tome_target_for_context(400, cfg) == 185);
    CHECK(tome_target_for_context(1, cfg) == 1);  // floor at one token
    ModelConfig wide = cfg;
    wide.n_tome = 600;  // ratio above 1 cannot exceed the context itself
    CHECK(tome_target_for_context(10, wide) == 10);
    CHECK_THROWS_AS(tome_target_for_context(0, cfg), std::invalid_argument);
    CHECK_THROWS_AS(tome_target_for_context(-5, cfg), std::invalid_argument);
}

TEST_CASE("per-layer merge schedule") {
    CHECK(tome_schedule(540, 250, 4) == std::vector<int>{73, 73, 73, 71});
    CHECK(tome_schedule(12, 6, 2) == std::vector<int>{3, 3});
    CHECK(tome_schedule(12, 12, 2) == std::vector<int>{0, 0});
    CHECK(tome_schedule(0, 0, 3) == std::vector<int>{0, 0, 0});
    // A target below what halving allows stops at the matching limit.
    CHECK(tome_schedule(10, 0, 1) == std::vector<int>{5});
    CHECK(tome_schedule(10, 0, 2) == std::vector<int>{5, 2});
    // Target above the current count never yields a negative amount.
    CHECK(tome_schedule(5, 9, 2) == std::vector<int>{0, 0});
    CHECK_THROWS_AS(tome_schedule(10, 5, 0), std::invalid_argument);
    CHECK_THROWS_AS(tome_schedule(-1, 0, 2), std::invalid_argument);

    for (int n : {7, 53, 540, 1201}) {
        for (int target : {1, n / 3, n}) {
            const auto rs = tome_schedule(n, target, 4);
            int count = n;
            for (int r : rs) {
                CHECK(r >= 0);
                CHECK(r <= count / 2);
                count -= r;
            }
            CHECK(count >= target);  // exact when reachable, floor otherwise
            if (target >= n) CHECK(count == n);
        }
    }
}

TEST_CASE("token-merge plans match a fresh matcher implementation") {
    Rng rng(21);
    for (int n = 0; n <= 32; ++n) {
        MatrixD metric(n, 4);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < 4; ++j) metric(i, j) = rng.normal(0.0, 1.0);
        }
        // Inject ties and degenerate rows.
        if (n >= 6) {
            metric.row(2) = metric.row(0);     // duplicate similarity patterns
            metric.row(5).setZero();           // zero-magnitude token
        }
        for (int r : {0, 1, n / 2, n}) {
            const TomePlan got = build_tome_plan(metric, r);
            const TomePlan want = oracle_tome_plan(metric, r);
            CAPTURE(n);
            CAPTURE(r);
            CHECK(got.r == want.r);
            CHECK(got.groups == want.groups);
            check_partition(got.groups, n);
            CHECK(static_cast<int>(got.groups.size()) == n - got.r);
        }
    }
}

TEST_CASE("parameter registry layout") {
    const DamModel<double> m = tiny_model(2);
    const int per_layer = 46;
    CHECK(m.tensor_count() == 10 + 2 * per_layer + 4);
    CHECK(m.tensor_name(0) == "temporal_embedding.weight");
    CHECK(m.tensor_name(1) == "temporal_embedding.bias");
    CHECK(m.tensor_name(2) == "value_embedding.weight");
    CHECK(m.tensor_name(4) == "btoken_period_embedder.weight");
    CHECK(m.tensor_name(6) == "btoken_coeffs_embedder.weight");
    CHECK(m.tensor_name(8) == "affine_embedding.weight");
    CHECK(m.tensor_name(10) == "layers.0.mhsa_tv.q_proj.weight");
    CHECK(m.tensor_name(10 + per_layer) == "layers.1.mhsa_tv.q_proj.weight");
    CHECK(m.tensor_name(m.tensor_count() - 4) == "basis_collapsor.weight");
    CHECK(m.tensor_name(m.tensor_count() - 1) == "affine_collapser.bias");

    CHECK(m.tensor(0).rows() == 437);  // temporal features, one per frequency
    CHECK(m.tensor(0).cols() == 8);
    CHECK(m.tensor(8).rows() == 50);  // percentile features

    // The coefficient mixer works across frequencies with a doubled hidden
    // width.
    std::size_t ffbx = 0;
    while (m.tensor_name(ffbx) != "layers.0.ff_b_cross.in.weight") ++ffbx;
    CHECK(m.tensor(ffbx).rows() == 437);
    CHECK(m.tensor(ffbx).cols() == 874);
    CHECK(m.tensor(ffbx + 2).rows() == 874);
    CHECK(m.tensor(ffbx + 2).cols() == 437);

    std::size_t total = 0;
    for (std::size_t i = 0; i < m.tensor_count(); ++i) {
        total += static_cast<std::size_t>(m.tensor(i).size());
    }
    CHECK(m.scalar_count() == total);
}

TEST_CASE("initialization is deterministic and respects per-tensor bounds") {
    DamModel<double> m1(tiny_config()), m2(tiny_config()), m3(tiny_config());
    Rng r1(5), r2(5), r3(6);
    m1.init_params(r1);
    m2.init_params(r2);
    m3.init_params(r3);
    bool all_equal = true, any_diff_seed = false;
    for (std::size_t i = 0; i < m1.tensor_count(); ++i) {
        if (!(m1.tensor(i) == m2.tensor(i))) all_equal = false;
        if (!(m1.tensor(i) == m3.tensor(i))) any_diff_seed = true;
    }
    CHECK(all_equal);
    CHECK(any_diff_seed);

    const double d = 8.0;
    const double qkv_bound = std::sqrt(6.0 / (4.0 * d));
    for (std::size_t i = 0; i < m1.tensor_count(); ++i) {
        const std::string& name = m1.tensor_name(i);
        const MatrixD& t = m1.tensor(i);
        const double peak = t.cwiseAbs().maxCoeff();
        CAPTURE(name);
        if (name.find("layernorm") != std::string::npos) {
            if (ends_with(name, ".gain")) CHECK(t == MatrixD::Ones(t.rows(), t.cols()));
            else CHECK(t == MatrixD::Zero(t.rows(), t.cols()));
        } else if (ends_with(name, "q_proj.weight") || ends_with(name, "k_proj.weight") ||
                   ends_with(name, "v_proj.weight")) {
            CHECK(peak <= qkv_bound);
            CHECK(peak > 0.2 * qkv_bound);
        } else if (ends_with(name, "q_proj.bias") || ends_with(name, "k_proj.bias") ||
                   ends_with(name, "v_proj.bias") || ends_with(name, "out_proj.bias")) {
            CHECK(t == MatrixD::Zero(t.rows(), t.cols()));
        } else if (ends_with(name, "out_proj.weight")) {
            CHECK(peak <= 1.0 / std::sqrt(d));
            CHECK(peak > 0.0);
        } else if (ends_with(name, ".weight")) {
            CHECK(peak <= 1.0 / std::sqrt(double(t.rows())));
            CHECK(peak > 0.0);
        } else {
            // Plain bias: bounded by the fan-in of its weight, the previous
            // registry slot.
            CHECK(peak <= 1.0 / std::sqrt(double(m1.tensor(i - 1).rows())));
        }
    }
}

TEST_CASE("coefficient damping is a scaled asinh") {
    CHECK(DamModel<double>::damp(0.0) == 0.0);
    CHECK(DamModel<double>::damp(10.0) == doctest::Approx(std::asinh(1.0) / 0.1).epsilon(1e-15));
    CHECK(DamModel<double>::damp(-10.0) == -DamModel<double>::damp(10.0));
    CHECK(DamModel<double>::damp(0.5) < 0.5);  // compresses
    CHECK(DamModel<double>::damp(0.5) > 0.4);
}

TEST_CASE("forward pass shapes, merge trace, and provenance") {
    const DamModel<double> m = tiny_model(2);
    const PreparedContext<double> pc = hourly_context(m, 12);
    CHECK(pc.theta0.rows() == 437);
    CHECK(pc.theta0.cols() == 2);
    CHECK(std::all_of(pc.times.begin(), pc.times.end(), [](double t) { return t < 0.0; }));

    Graph<double> g;
    AttentionRecord<double> rec;
    ForwardOptions<double> opt;
    opt.record = &rec;
    const ForwardResult fr = m.forward(g, pc, opt);

    // Context 12 at ratio 250/540 merges down to 6, split 3 + 3.
    CHECK(fr.tv_counts == std::vector<int>{9, 6});
    CHECK(g.value(fr.basis_node).rows() == 437);
    CHECK(g.value(fr.basis_node).cols() == 2);
    CHECK(g.value(fr.affine_node).rows() == 1);
    CHECK(g.value(fr.affine_node).cols() == 2);
    CHECK(g.value(fr.offset_node)(0, 0) == g.value(fr.affine_node)(0, 0));
    CHECK(g.value(fr.scale_node)(0, 0) == g.value(fr.affine_node)(0, 1));
    const double clamped = g.value(fr.clamped_scale_node)(0, 0);
    CHECK(std::abs(clamped) >= 1e-6);
    check_partition(fr.provenance, 12);
    CHECK(fr.provenance.size() == 6);

    REQUIRE(rec.layers.size() == 2);
    CHECK(rec.layers[0].r == 3);
    CHECK(rec.layers[1].r == 3);
    // Self-attention sees the affine token + unmerged TV tokens, plus the
    // zero-attention column; cross-attention queries are the 437 B-tokens.
    REQUIRE(rec.layers[0].self_probs.size() == 2);  // heads
    CHECK(rec.layers[0].self_probs[0].rows() == 13);
    CHECK(rec.layers[0].self_probs[0].cols() == 14);
    CHECK(rec.layers[1].self_probs[0].rows() == 10);
    CHECK(rec.layers[1].self_probs[0].cols() == 11);
    CHECK(rec.layers[0].cross_probs[0].rows() == 437);
    CHECK(rec.layers[0].cross_probs[0].cols() == 11);
    CHECK(rec.layers[1].cross_probs[0].cols() == 8);
    for (const auto& layer : rec.layers) {
        for (const auto& P : layer.self_probs) {
            for (Eigen::Index r = 0; r < P.rows(); ++r) {
                CHECK(P.row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
                CHECK(P.row(r).minCoeff() >= 0.0);
            }
        }
    }
    CHECK(rec.layers[1].provenance == fr.provenance);

    SUBCASE("explicit merge target overrides the derived one") {
        Graph<double> g2;
        ForwardOptions<double> keep;
        keep.n_tome = 12;
        const ForwardResult fr2 = m.forward(g2, pc, keep);
        CHECK(fr2.tv_counts == std::vector<int>{12, 12});
        CHECK(fr2.provenance.size() == 12);
    }
    SUBCASE("input validation") {
        Graph<double> g3;
        PreparedContext<double> broken = pc;
        broken.theta0.resize(10, 2);
        CHECK_THROWS_AS(m.forward(g3, broken), std::invalid_argument);
        CHECK_THROWS_AS(m.prepare_context({-1.0, -0.5}, {1.0}), std::invalid_argument);
        CHECK_THROWS_AS(m.prepare_context({}, {}), std::invalid_argument);
    }
}

TEST_CASE("forward is deterministic and every ablation changes the output") {
    const DamModel<double> m = tiny_model(2);
    const PreparedContext<double> pc = hourly_context(m, 12);

    Graph<double> g1, g2;
    const ForwardResult a = m.forward(g1, pc);
    ForwardOptions<double> none;
    none.ablate = AblationMask::from_names({});
    const ForwardResult b = m.forward(g2, pc, none);
    CHECK(g1.value(a.basis_node) == g2.value(b.basis_node));
    CHECK(g1.value(a.affine_node) == g2.value(b.affine_node));

    const MatrixD base = g1.value(a.basis_node);
    for (const char* name :
         {"self-attn", "cross-attn", "ff_tv", "ff_b", "ff_b_cross", "tome"}) {
        Graph<double> g;
        ForwardOptions<double> opt;
        opt.ablate = AblationMask::from_names({name});
        const ForwardResult fr = m.forward(g, pc, opt);
        CAPTURE(name);
        CHECK(!(g.value(fr.basis_node) == base));
        if (std::string(name) == "tome") {
            CHECK(fr.tv_counts == std::vector<int>{12, 12});
        }
    }
    CHECK_THROWS_WITH_AS(AblationMask::from_names({"zap"}),
                         doctest::Contains("unknown ablation component"), user_error);
}

TEST_CASE("standardized predictions agree with the exported forecast function") {
    const DamModel<double> m = tiny_model(1, 13);
    const PreparedContext<double> pc = hourly_context(m, 16);
    Graph<double> g;
    const ForwardResult fr = m.forward(g, pc);
    const std::vector<double> query = {-2.0, -0.25, 0.5, 3.0, 40.0};
    const int pred = m.predict_standardized(g, fr, query);
    REQUIRE(g.value(pred).rows() == 5);
    REQUIRE(g.value(pred).cols() == 1);
    CHECK_THROWS_AS(m.predict_standardized(g, fr, {}), std::invalid_argument);

    const ForecastFunction fn = m.to_forecast_function(g, fr, pc.norm);
    CHECK(fn.form == AffineForm::appb);
    CHECK(fn.affine.b == g.value(fr.affine_node)(0, 0));
    CHECK(fn.affine.a == g.value(fr.affine_node)(0, 1));
    CHECK(fn.theta.col(0) == g.value(fr.basis_node).col(1));  // sine first outside
    CHECK(fn.theta.col(1) == g.value(fr.basis_node).col(0));
    CHECK(fn.norm.med == pc.norm.med);
    CHECK(fn.norm.iqr == pc.norm.iqr);

    // De-standardizing the graph predictions reproduces the function values.
    const std::vector<double> fn_values = evaluate(fn, query);
    for (std::size_t i = 0; i < query.size(); ++i) {
        const double via_graph = pc.norm.iqr * g.value(pred)(static_cast<Eigen::Index>(i), 0) +
                                 pc.norm.med;
        CHECK(fn_values[i] == doctest::Approx(via_graph).epsilon(1e-10));
    }
}

TEST_CASE("training mode applies dropout stochastically") {
    ModelConfig cfg = tiny_config(1);
    cfg.dropout = 0.4;
    DamModel<double> m(cfg);
    Rng init(9);
    m.init_params(init);
    const PreparedContext<double> pc = hourly_context(m, 10);

    Graph<double> g1, g2, g3;
    Rng d1(100), d2(100), d3(101);
    ForwardOptions<double> o1, o2, o3;
    o1.training = true;
    o1.dropout_rng = &d1;
    o2.training = true;
    o2.dropout_rng = &d2;
    o3.training = true;
    o3.dropout_rng = &d3;
    const MatrixD out1 = g1.value(m.forward(g1, pc, o1).basis_node);
    const MatrixD out2 = g2.value(m.forward(g2, pc, o2).basis_node);
    const MatrixD out3 = g3.value(m.forward(g3, pc, o3).basis_node);
    CHECK(out1 == out2);       // same dropout stream
    CHECK(!(out1 == out3));    // different stream

    Graph<double> g4;
    ForwardOptions<double> missing;
    missing.training = true;
    CHECK_THROWS_AS(m.forward(g4, pc, missing), std::logic_error);

    Graph<double> g5;  // inference ignores dropout entirely
    const MatrixD quiet = g5.value(m.forward(g5, pc).basis_node);
    Graph<double> g6;
    CHECK(quiet == g6.value(m.forward(g6, pc).basis_node));
}

TEST_CASE("cumulative attention summarizes received attention") {
    MatrixD probs(3, 6);  // n_lead=2 leading columns, 3 TV columns, zero slot
    probs << 0.1, 0.1, 0.2, 0.3, 0.2, 0.1,  //
        0.0, 0.2, 0.4, 0.1, 0.2, 0.1,       //
        0.3, 0.1, 0.0, 0.2, 0.3, 0.1;
    const std::vector<double> got = cumulative_attention(probs, 2);
    REQUIRE(got.size() == 3);
    // Raw sums 0.6, 0.6, 0.7 -> normalized by the max.
    CHECK(got[0] == doctest::Approx(0.6 / 0.7).epsilon(1e-12));
    CHECK(got[1] == doctest::Approx(0.6 / 0.7).epsilon(1e-12));
    CHECK(got[2] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(*std::max_element(got.begin(), got.end()) == 1.0);
    const MatrixD no_tv = MatrixD::Ones(2, 3);
    CHECK_THROWS_AS(cumulative_attention(no_tv, 2), std::invalid_argument);
}

TEST_CASE("checkpoints round-trip bit-identically") {
    test::TempDir tmp("dam-model-ckpt");
    const DamModel<double> m = tiny_model(1, 17);
    save_checkpoint(m, tmp.file("ckpt"));
    const DamModel<double> loaded = load_checkpoint<double>(tmp.file("ckpt"));
    CHECK(loaded.config() == m.config());
    REQUIRE(loaded.tensor_count() == m.tensor_count());
    for (std::size_t i = 0; i < m.tensor_count(); ++i) {
        CHECK(loaded.tensor(i) == m.tensor(i));
    }
    save_checkpoint(loaded, tmp.file("ckpt2"));
    CHECK(test::read_file(tmp.file("ckpt2") + "/weights.bin") ==
          test::read_file(tmp.file("ckpt") + "/weights.bin"));
    CHECK(test::read_file(tmp.file("ckpt2") + "/manifest.json") ==
          test::read_file(tmp.file("ckpt") + "/manifest.json"));

    // Loading changes predictions not at all: run one forward on each.
    const PreparedContext<double> pc = hourly_context(m, 10);
    Graph<double> ga, gb;
    CHECK(ga.value(m.forward(ga, pc).basis_node) ==
          gb.value(loaded.forward(gb, pc).basis_node));
}

TEST_CASE("checkpoint loading rejects broken inputs") {
    test::TempDir tmp("dam-model-ckpt-err");
    CHECK_THROWS_AS(load_checkpoint<double>(tmp.file("missing")), user_error);

    const DamModel<double> m = tiny_model(1, 19);
    const std::string dir = tmp.file("ckpt");
    save_checkpoint(m, dir);

    auto restore = [&] { save_checkpoint(m, dir); };
    auto rewrite = [&](const std::string& from, const std::string& to) {
        std::string text = test::read_file(dir + "/manifest.json");
        const auto at = text.find(from);
        REQUIRE(at != std::string::npos);
        text.replace(at, from.size(), to);
        std::ofstream out(dir + "/manifest.json", std::ios::binary | std::ios::trunc);
        out << text;
    };

    SUBCASE("scalar type mismatch") {
        CHECK_THROWS_WITH_AS(load_checkpoint<float>(dir), doctest::Contains("float64"),
                             user_error);
    }
    SUBCASE("format tag mismatch") {
        rewrite("dam-checkpoint-v1", "dam-checkpoint-v9");
        CHECK_THROWS_WITH_AS(load_checkpoint<double>(dir),
                             doctest::Contains("unsupported checkpoint format"), user_error);
        restore();
    }
    SUBCASE("frequency set mismatch") {
        rewrite(BasisSpec::version(), "fset-999-v1");
        CHECK_THROWS_WITH_AS(load_checkpoint<double>(dir),
                             doctest::Contains("does not match this build"), user_error);
        restore();
    }
    SUBCASE("tensor table mismatch") {
        rewrite("temporal_embedding.weight", "temporal_embedding.wrong1");
        CHECK_THROWS_WITH_AS(load_checkpoint<double>(dir),
                             doctest::Contains("does not match the model layout"), user_error);
        restore();
    }
    SUBCASE("truncated weights") {
        const std::string bytes = test::read_file(dir + "/weights.bin");
        std::ofstream out(dir + "/weights.bin", std::ios::binary | std::ios::trunc);
        out << bytes.substr(0, bytes.size() / 2);
        out.close();
        CHECK_THROWS_WITH_AS(load_checkpoint<double>(dir), doctest::Contains("truncated"),
                             user_error);
        restore();
    }
    SUBCASE("manifest not JSON") {
        std::ofstream out(dir + "/manifest.json", std::ios::binary | std::ios::trunc);
        out << "{ not json";
        out.close();
        CHECK_THROWS_WITH_AS(load_checkpoint<double>(dir), doctest::Contains("not valid JSON"),
                             user_error);
        restore();
    }
}

TEST_CASE("end-to-end gradients match finite differences") {
    DamModel<double> m(tiny_config(1));
    Rng init(23);
    m.init_params(init);
    const PreparedContext<double> pc = hourly_context(m, 12);
    const std::vector<double> query = {0.25, 1.0, 2.5};
    MatrixD target(3, 1);
    target << 0.4, -0.2, 0.1;

    auto loss_of = [&](std::vector<MatrixD>* grads) {
        Graph<double> g;
        ForwardOptions<double> opt;
        opt.grads = grads;
        const ForwardResult fr = m.forward(g, pc, opt);
        const int pred = m.predict_standardized(g, fr, query);
        const int loss = g.huber_loss(pred, g.input(target), g.input(MatrixD::Ones(3, 1)), 1.0,
                                      1.0 / 3.0);
        const double value = g.value(loss)(0, 0);
        if (grads != nullptr) g.backward(loss);
        return value;
    };

    std::vector<MatrixD> grads = m.make_grad_store();
    REQUIRE(grads.size() == m.tensor_count());
    loss_of(&grads);

    const double h = 1e-5;
    int checked = 0;
    for (std::size_t i = 0; i < m.tensor_count(); i += 7) {
        MatrixD& t = m.tensor(i);
        const Eigen::Index r = t.rows() / 2, c = t.cols() / 2;
        const double keep = t(r, c);
        t(r, c) = keep + h;
        const double lp = loss_of(nullptr);
        t(r, c) = keep - h;
        const double lm = loss_of(nullptr);
        t(r, c) = keep;
        const double fd = (lp - lm) / (2.0 * h);
        const double an = grads[i](r, c);
        CAPTURE(m.tensor_name(i));
        CHECK(std::abs(fd - an) <= 1e-6 + 1e-4 * std::max(std::abs(fd), std::abs(an)));
        ++checked;
    }
    CHECK(checked >= 8);

    // Without accumulators the graph is inference-only.
    Graph<double> g;
    const ForwardResult fr = m.forward(g, pc);
    const int pred = m.predict_standardized(g, fr, query);
    const int loss = g.huber_loss(pred, g.input(target), g.input(MatrixD::Ones(3, 1)), 1.0, 1.0);
    CHECK_THROWS_AS(g.backward(loss), std::logic_error);
}
