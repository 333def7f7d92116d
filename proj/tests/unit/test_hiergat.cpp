#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>

#include "matprobe/error.hpp"
#include "matprobe/hiergat.hpp"
#include "matprobe/numerics/grad_check.hpp"
#include "matprobe/rng.hpp"
#include "support.hpp"

using namespace matprobe;
using namespace matprobe::hiergat;
using nlohmann::json;
using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

namespace {

json toy_doc(bool swapped = false) {
    json a = {{"id", "A"}, {"name", "A"}, {"level", "group"}, {"parent", "r"}};
    json b = {{"id", "B"}, {"name", "B"}, {"level", "group"}, {"parent", "r"}};
    json a1 = {{"id", "a1"}, {"name", "a1"}, {"level", "leaf"}, {"parent", "A"}};
    json a2 = {{"id", "a2"}, {"name", "a2"}, {"level", "leaf"}, {"parent", "A"}};
    json b1 = {{"id", "b1"}, {"name", "b1"}, {"level", "leaf"}, {"parent", "B"}};
    json r = {{"id", "r"}, {"name", "r"}, {"level", "root"}, {"parent", nullptr}};
    json nodes = swapped ? json::array({r, b, b1, a, a2, a1}) : json::array({r, a, a1, a2, b, b1});
    return {{"level_names", {"root", "group", "leaf"}}, {"nodes", nodes}};
}

const Taxonomy& toy() {
    static const Taxonomy t = Taxonomy::from_json(toy_doc());
    return t;
}

ModelConfig small_config(std::size_t in = 4) {
    ModelConfig c;
    c.input_dim = in;
    c.hidden_dim = 5;
    c.output_dim = 3;
    c.layers = 2;
    c.dropout = 0.0;
    return c;
}

void randomize(HierGatModel& m, std::uint64_t seed, double scale = 0.7) {
    std::uint64_t k = 0;
    for (auto* p : m.parameters()) {
        for (std::size_t i = 0; i < p->value.size(); ++i) p->value[i] = scale * rng::gaussian(seed, k++);
    }
}

Tensor random_features(std::size_t rows, std::size_t d, std::uint64_t seed) {
    Tensor x({rows, d});
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng::gaussian(seed, i);
    return x;
}

// ---- straight-line oracle, independent of the tape ops ----

double leaky(double v, double s) { return v > 0 ? v : s * v; }

Mat to_mat(const Tensor& t) {
    Mat m(t.rows(), Vec(t.cols()));
    for (std::size_t r = 0; r < t.rows(); ++r)
        for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t.at(r, c);
    return m;
}

// y = x^T W (+ b)
Vec vm(const Vec& x, const Tensor& W, const Tensor* b = nullptr) {
    Vec y(W.cols(), 0.0);
    for (std::size_t c = 0; c < W.cols(); ++c) {
        for (std::size_t r = 0; r < W.rows(); ++r) y[c] += x[r] * W.at(r, c);
        if (b) y[c] += (*b)[c];
    }
    return y;
}

Mat oracle_layer(const GatLayerParams& L, const Mat& h, const std::vector<std::pair<std::size_t, std::size_t>>& edges,
                 double s) {
    const std::size_t m = h.size();
    Mat out(m);
    for (std::size_t i = 0; i < m; ++i) {
        std::vector<std::size_t> nbrs;
        for (auto [from, to] : edges)
            if (to == i) nbrs.push_back(from);
        Vec zi = vm(h[i], L.att_proj.value);
        double sdi = 0;
        for (std::size_t k = 0; k < zi.size(); ++k) sdi += zi[k] * L.att_dst.value[k];
        Vec scores;
        for (std::size_t j : nbrs) {
            Vec zj = vm(h[j], L.att_proj.value);
            double ssj = 0;
            for (std::size_t k = 0; k < zj.size(); ++k) ssj += zj[k] * L.att_src.value[k];
            scores.push_back(leaky(sdi + ssj, s));
        }
        double mx = -1e300, tot = 0;
        for (double v : scores) mx = std::max(mx, v);
        for (double& v : scores) tot += v = std::exp(v - mx);
        Vec agg(L.d_out, 0.0);
        for (std::size_t n = 0; n < nbrs.size(); ++n) {
            const double alpha = scores[n] / tot;
            Vec pre(L.msg_b1.value.size(), 0.0);
            Vec u = vm(h[i], L.msg_w1_dst.value, &L.msg_b1.value);
            Vec v = vm(h[nbrs[n]], L.msg_w1_src.value);
            for (std::size_t k = 0; k < pre.size(); ++k) pre[k] = leaky(u[k] + v[k], s);
            Vec msg = vm(pre, L.msg_w2.value, &L.msg_b2.value);
            for (std::size_t k = 0; k < agg.size(); ++k) agg[k] += alpha * msg[k];
        }
        Vec cat = h[i];
        cat.insert(cat.end(), agg.begin(), agg.end());
        Vec hid = vm(cat, L.update.w1.value, &L.update.b1.value);
        for (double& v : hid) v = leaky(v, s);
        Vec o = vm(hid, L.update.w2.value, &L.update.b2.value);
        Vec res = L.residual ? vm(h[i], L.residual->value) : h[i];
        for (std::size_t k = 0; k < o.size(); ++k) o[k] += res[k];
        out[i] = o;
    }
    return out;
}

Vec oracle_logits(const HierGatModel& model, const Vec& feature) {
    const auto& t = model.taxonomy();
    const std::size_t n = t.size();
    Mat h = to_mat(model.prototypes.value);
    h.push_back(feature);
    auto edges = to_graph(t).edges;
    for (std::size_t i = 0; i < n; ++i) edges.emplace_back(n, i);
    for (const auto& L : model.layers) h = oracle_layer(L, h, edges, model.config().leaky_slope);
    Vec logits(n);
    for (std::size_t i = 0; i < n; ++i) logits[i] = vm(h[i], model.readout_w.value, &model.readout_b.value)[0];
    return logits;
}

}  // namespace

TEST_CASE("init_prototypes") {
    HierGatModel m(toy(), small_config(3));
    SUBCASE("single image per leaf is copied") {
        std::map<NodeId, std::vector<Vec>> f{{"a1", {{1, 0, 0}}}, {"a2", {{0, 1, 0}}}, {"b1", {{0, 0, 1}}}};
        init_prototypes(m, f);
        const auto& P = m.prototypes.value;
        const auto row = [&](const char* id) {
            const std::size_t i = toy().index_of(id);
            return Vec{P.at(i, 0), P.at(i, 1), P.at(i, 2)};
        };
        CHECK(row("a1") == Vec{1, 0, 0});
        CHECK(row("b1") == Vec{0, 0, 1});
        // brute-force mean oracle over every image under the node
        CHECK(row("A") == Vec{0.5, 0.5, 0});
        CHECK(row("B") == Vec{0, 0, 1});
        const Vec r = row("r");
        for (double v : r) CHECK(v == doctest::Approx(1.0 / 3.0));
    }
    SUBCASE("symmetric images average to zero") {
        std::map<NodeId, std::vector<Vec>> f{{"a1", {{1, 2, 3}, {-1, -2, -3}}}, {"a2", {{1, 1, 1}}}, {"b1", {{2, 2, 2}}}};
        init_prototypes(m, f);
        const std::size_t i = toy().index_of("a1");
        for (std::size_t k = 0; k < 3; ++k) CHECK(m.prototypes.value.at(i, k) == 0.0);
    }
    SUBCASE("empty group") {
        std::map<NodeId, std::vector<Vec>> f{{"a1", {{1, 0, 0}}}, {"a2", {{0, 1, 0}}}};
        CHECK_THROWS_WITH_AS(init_prototypes(m, f), doctest::Contains("'B'"), DataError);
    }
    SUBCASE("dimension mismatch") {
        std::map<NodeId, std::vector<Vec>> f{{"a1", {{1, 0}}}};
        CHECK_THROWS_AS(init_prototypes(m, f), DataError);
    }
}

TEST_CASE("global node insertion") {
    const auto& t = toy();
    AugmentedGraph g(to_graph(t));
    const Vec f(4, 1.0);
    g.insert_global_node(f, 4);
    CHECK(g.out_degree(t.size()) == t.size());
    CHECK(g.in_degree(t.size()) == 0);
    CHECK_THROWS_AS(g.insert_global_node(f, 4), UsageError);
    g.remove_global_node();
    CHECK_FALSE(g.has_global());
    CHECK_THROWS_AS(g.insert_global_node(Vec(3, 1.0), 4), DataError);

    auto root_only = Taxonomy::from_json({{"level_names", {"root"}},
                                          {"nodes", {{{"id", "r"}, {"name", "r"}, {"level", "root"}, {"parent", nullptr}}}}});
    AugmentedGraph g1(to_graph(root_only));
    g1.insert_global_node(f, 4);
    CHECK(g1.edges().size() == 1);
}

TEST_CASE("gat_layer") {
    HierGatModel m(toy(), small_config(3), 3);
    randomize(m, 5);
    const GatLayerParams& L = m.layers[0];
    const double s = 0.2;
    SUBCASE("empty neighbourhood uses a zero aggregate") {
        Tape t;
        Mat h{{0.3, -0.2, 0.5}};
        Var out = gat_layer(t, L, t.constant(Tensor({1, 3}, h[0])), {}, {}, s, {}, 0, false);
        Vec cat = h[0];
        cat.insert(cat.end(), 3, 0.0);
        Vec hid = vm(cat, L.update.w1.value, &L.update.b1.value);
        for (double& v : hid) v = leaky(v, s);
        Vec o = vm(hid, L.update.w2.value, &L.update.b2.value);
        Vec res = L.residual ? vm(h[0], L.residual->value) : h[0];
        for (std::size_t k = 0; k < 3; ++k) CHECK(out.value()[k] == doctest::Approx(o[k] + res[k]).epsilon(1e-12));
        CHECK(out.value().all_finite());
    }
    SUBCASE("two identical neighbours split attention evenly") {
        // node 0 has neighbours 1 and 2 with equal states; node 3 has only neighbour 4 with the same state.
        Tensor h({5, 3}, Vec{0.1, 0.2, 0.3, 1, -1, 2, 1, -1, 2, 0.1, 0.2, 0.3, 1, -1, 2});
        Tape t;
        Var out = gat_layer(t, L, t.constant(h), {1, 2, 4}, {0, 0, 3}, s, {}, 0, false);
        for (std::size_t k = 0; k < 3; ++k) CHECK(out.value().at(0, k) == doctest::Approx(out.value().at(3, k)));
    }
    SUBCASE("path graph matches the straight-line evaluation") {
        Mat h{{0.5, -1.0, 0.25}, {1.5, 0.3, -0.7}, {-0.4, 0.9, 0.2}};
        std::vector<std::pair<std::size_t, std::size_t>> edges{{0, 1}, {1, 2}};
        Tensor ht({3, 3});
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t k = 0; k < 3; ++k) ht.at(i, k) = h[i][k];
        Tape t;
        Var out = gat_layer(t, L, t.constant(ht), {0, 1}, {1, 2}, s, {}, 0, false);
        const Mat expected = oracle_layer(L, h, edges, s);
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t k = 0; k < 3; ++k) CHECK(out.value().at(i, k) == doctest::Approx(expected[i][k]).epsilon(1e-12));
    }
    SUBCASE("dimension mismatch") {
        Tape t;
        CHECK_THROWS_AS(gat_layer(t, L, t.constant(Tensor({2, 4})), {}, {}, s, {}, 0, false), DataError);
    }
}

TEST_CASE("forward") {
    HierGatModel m(toy(), small_config(4), 11);
    randomize(m, 13);
    const Tensor x = random_features(3, 4, 17);

    SUBCASE("matches the oracle for every sample in a batch") {
        const auto scores = m.predict(x);
        REQUIRE(scores.size() == 3);
        for (std::size_t s = 0; s < 3; ++s) {
            const Vec f(x.data() + s * 4, x.data() + (s + 1) * 4);
            const Vec expected = oracle_logits(m, f);
            for (std::size_t i = 0; i < toy().size(); ++i)
                CHECK(scores[s].logits[i] == doctest::Approx(expected[i]).epsilon(1e-12));
        }
    }
    SUBCASE("per-level distributions sum to one") {
        for (const auto& s : m.predict(x)) {
            for (std::size_t level = 0; level < toy().depth(); ++level) {
                double total = 0;
                for (std::size_t i : toy().level_members(level)) total += s.probs[i];
                CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
            }
        }
    }
    SUBCASE("zero readout gives uniform levels") {
        m.readout_w.value.fill(0.0);
        for (const auto& s : m.predict(x)) {
            CHECK(s.probs[toy().index_of("a1")] == doctest::Approx(1.0 / 3.0));
            CHECK(s.probs[toy().index_of("B")] == doctest::Approx(0.5));
        }
    }
    SUBCASE("dimension mismatch") {
        CHECK_THROWS_AS(m.predict(random_features(1, 5, 1)), DataError);
    }
}

TEST_CASE("golden toy model") {
    HierGatModel m(toy(), small_config(4), 2024);
    randomize(m, 2025);
    const Tensor x = random_features(1, 4, 2026);
    const Vec logits = m.predict(x).front().logits;
    const auto path = testing::asset("../tests/data/hiergat_golden.json");
    if (std::getenv("MATPROBE_WRITE_GOLDEN")) {
        std::ofstream out(path);
        out << std::setprecision(17) << json{{"logits", oracle_logits(m, Vec(x.data(), x.data() + 4))},
                                             {"flat", flat_argmax(toy(), oracle_logits(m, Vec(x.data(), x.data() + 4)))}}
                                            .dump(1);
    }
    std::ifstream in(path);
    REQUIRE(in.good());
    const json golden = json::parse(in);
    const Vec expected = golden.at("logits").get<Vec>();
    REQUIRE(expected.size() == logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) CHECK(logits[i] == doctest::Approx(expected[i]).epsilon(1e-12));
    CHECK(predict_flat(m, Vec(x.data(), x.data() + 4)) == golden.at("flat").get<std::string>());
}

TEST_CASE("hierarchical loss") {
    const auto shipped = Taxonomy::load(testing::asset("taxonomy.json"));
    SUBCASE("uniform logits on the shipped tree, label steel") {
        Tape t;
        const auto label = encode_label(shipped, taxonomy::label_of(shipped, "steel"));
        auto terms = hierarchical_loss(t.constant(Tensor({shipped.size()})), shipped, label);
        // per-level class counts 1, 2, 6, 13, 57 read off the tree
        const double mean_ce = (std::log(1.0) + std::log(2.0) + std::log(6.0) + std::log(13.0) + std::log(57.0)) / 5.0;
        CHECK(terms.bce.value().item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
        CHECK(std::abs(terms.mean_ce.value().item() - mean_ce) < 1e-9);
        CHECK(std::abs(terms.loss.value().item() - std::max(std::log(2.0), mean_ce)) < 1e-9);
    }
    SUBCASE("perfect logits") {
        Tape t;
        const auto label = encode_label(shipped, taxonomy::label_of(shipped, "brick"));
        Tensor z({shipped.size()}, -40.0);
        for (std::size_t i = 0; i < z.size(); ++i)
            if (label.multi_hot[i] == 1.0) z[i] = 40.0;
        CHECK(hierarchical_loss(t.constant(z), shipped, label).loss.value().item() < 1e-10);
    }
    SUBCASE("loss dominates both terms") {
        const auto leaves = toy().leaves();
        for (std::uint64_t s = 0; s < 1000; ++s) {
            Tape t;
            Tensor z({toy().size()});
            for (std::size_t i = 0; i < z.size(); ++i) z[i] = 5.0 * rng::gaussian(s, i);
            const auto label = encode_label(toy(), taxonomy::label_of(toy(), leaves[s % leaves.size()]));
            auto terms = hierarchical_loss(t.constant(z), toy(), label);
            CHECK(terms.loss.value().item() >= terms.bce.value().item());
            CHECK(terms.loss.value().item() >= terms.mean_ce.value().item());
        }
    }
    SUBCASE("label mismatch") {
        CHECK_THROWS_AS(encode_label(toy(), taxonomy::HierarchicalLabel{{"r", "B", "a1"}}), DataError);
        CHECK_THROWS_AS(encode_label(toy(), taxonomy::label_of(toy(), "A")), DataError);
        CHECK_THROWS_AS(encode_label(toy(), taxonomy::HierarchicalLabel{{"r", "X"}}), DataError);
    }
}

TEST_CASE("gradients of the full model match finite differences") {
    HierGatModel m(toy(), small_config(4), 7);
    randomize(m, 8, 0.5);
    const Tensor x = random_features(2, 4, 9);
    const std::vector<EncodedLabel> labels{encode_label(toy(), taxonomy::label_of(toy(), "a2")),
                                           encode_label(toy(), taxonomy::label_of(toy(), "b1"))};
    for (bool drop : {false, true}) {
        CAPTURE(drop);
        const ForwardOptions opts{drop, 0.3, 77};
        auto f = [&](Tape& t) { return batch_loss(m.forward(t, x, opts, true), toy(), labels); };
        auto report = numerics::grad_check(f, m.parameters(), 1e-5, 1e-4);
        for (const auto& p : report.parameters) {
            INFO(p.name);
            CHECK(p.max_relative_error < 1e-4);
        }
    }
}

TEST_CASE("three-node toy graph gradients") {
    auto doc = json{{"level_names", {"root", "leaf"}},
                    {"nodes",
                     {{{"id", "r"}, {"name", "r"}, {"level", "root"}, {"parent", nullptr}},
                      {{"id", "x"}, {"name", "x"}, {"level", "leaf"}, {"parent", "r"}},
                      {{"id", "y"}, {"name", "y"}, {"level", "leaf"}, {"parent", "r"}}}}};
    const auto t3 = Taxonomy::from_json(doc);
    HierGatModel m(t3, small_config(3), 1);
    randomize(m, 2, 0.6);
    const Tensor x = random_features(1, 3, 3);
    const std::vector<EncodedLabel> labels{encode_label(t3, taxonomy::label_of(t3, "y"))};
    auto report = numerics::grad_check(
        [&](Tape& t) { return batch_loss(m.forward(t, x, {}, true), t3, labels); }, m.parameters(), 1e-5, 1e-4);
    CHECK(report.passed());
}

TEST_CASE("predict_flat") {
    auto one = Taxonomy::from_json({{"level_names", {"root", "leaf"}},
                                    {"nodes",
                                     {{{"id", "r"}, {"name", "r"}, {"level", "root"}, {"parent", nullptr}},
                                      {{"id", "only"}, {"name", "only"}, {"level", "leaf"}, {"parent", "r"}}}}});
    HierGatModel m(one, small_config(2));
    CHECK(predict_flat(m, Vec{0.3, -0.1}) == "only");
    CHECK(flat_argmax(toy(), Vec{0, 0, 1, 1, 0, 1}) == "a1");
    CHECK(flat_argmax(toy(), Vec{0, 0, 0.5, 1, 0, 1}) == "a2");
}

TEST_CASE("permutation robustness") {
    const auto swapped = Taxonomy::from_json(toy_doc(true));
    HierGatModel a(toy(), small_config(4), 21);
    randomize(a, 22);
    HierGatModel b(swapped, small_config(4), 99);
    transfer_parameters(a, b);
    const Tensor x = random_features(2, 4, 23);
    const auto sa = a.predict(x);
    const auto sb = b.predict(x);
    for (std::size_t s = 0; s < 2; ++s) {
        for (const auto& id : toy().preorder()) {
            CHECK(sa[s].logits[toy().index_of(id)] ==
                  doctest::Approx(sb[s].logits[swapped.index_of(id)]).epsilon(1e-12));
        }
    }
}

namespace {

Dataset clustered(const Taxonomy& t, std::size_t per_class, std::size_t d, std::uint64_t seed) {
    Dataset ds;
    const auto leaves = t.leaves();
    ds.features = Tensor({leaves.size() * per_class, d});
    std::size_t row = 0;
    for (std::size_t c = 0; c < leaves.size(); ++c) {
        for (std::size_t k = 0; k < per_class; ++k, ++row) {
            for (std::size_t j = 0; j < d; ++j) {
                const double centre = rng::gaussian(seed, c * 1000 + j);
                ds.features.at(row, j) = centre + 0.3 * rng::gaussian(seed + 1, row * d + j);
            }
            ds.labels.push_back(leaves[c]);
        }
    }
    return ds;
}

double accuracy(const HierGatModel& m, const Dataset& ds) {
    const auto scores = m.predict(ds.features);
    std::size_t ok = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) ok += flat_argmax(m.taxonomy(), scores[i].logits) == ds.labels[i];
    return static_cast<double>(ok) / static_cast<double>(scores.size());
}

}  // namespace

TEST_CASE("fit") {
    const std::size_t d = 8;
    auto three = Taxonomy::from_json({{"level_names", {"root", "leaf"}},
                                      {"nodes",
                                       {{{"id", "r"}, {"name", "r"}, {"level", "root"}, {"parent", nullptr}},
                                        {{"id", "p"}, {"name", "p"}, {"level", "leaf"}, {"parent", "r"}},
                                        {{"id", "q"}, {"name", "q"}, {"level", "leaf"}, {"parent", "r"}},
                                        {{"id", "s"}, {"name", "s"}, {"level", "leaf"}, {"parent", "r"}}}}});
    const Dataset ds = clustered(three, 20, d, 5);
    ModelConfig cfg = small_config(d);
    cfg.hidden_dim = 16;
    cfg.output_dim = 8;
    TrainingConfig tc;
    tc.batch_size = 15;
    tc.epochs = 50;
    tc.learning_rate = 1e-2;
    tc.weight_decay = 5e-4;

    SUBCASE("zero epochs leave the model unchanged") {
        HierGatModel m(three, cfg, 1);
        m.prototypes.value = compute_prototypes(three, ds.features, ds.labels);
        const auto before = m.readout_w.value;
        tc.epochs = 0;
        auto r = fit(m, ds, tc);
        CHECK(r.epoch_loss.empty());
        CHECK(m.readout_w.value == before);
    }
    SUBCASE("separable classes are learned") {
        HierGatModel m(three, cfg, 1);
        m.prototypes.value = compute_prototypes(three, ds.features, ds.labels);
        auto r = fit(m, ds, tc);
        REQUIRE(r.epoch_loss.size() == 50);
        for (double l : r.epoch_loss) CHECK(std::isfinite(l));
        CHECK(r.epoch_loss.back() < 0.05);
        CHECK(accuracy(m, ds) >= 0.95);

        HierGatModel again(three, cfg, 1);
        again.prototypes.value = compute_prototypes(three, ds.features, ds.labels);
        const auto r2 = fit(again, ds, tc);
        for (std::size_t e = 0; e < r.epoch_loss.size(); ++e) CHECK(r2.epoch_loss[e] == r.epoch_loss[e]);
    }
    SUBCASE("missing class") {
        HierGatModel m(three, cfg, 1);
        Dataset partial = ds;
        partial.labels.resize(40);
        partial.features = Tensor({40, d}, Vec(ds.features.data(), ds.features.data() + 40 * d));
        CHECK_THROWS_WITH_AS(fit(m, partial, tc), doctest::Contains("'s'"), DataError);
    }
}

TEST_CASE("stratified batches keep class proportions") {
    std::vector<NodeId> labels;
    for (int i = 0; i < 60; ++i) labels.push_back("a");
    for (int i = 0; i < 30; ++i) labels.push_back("b");
    for (int i = 0; i < 10; ++i) labels.push_back("c");
    const auto batches = make_batches(labels, 10, true, 3);
    REQUIRE(batches.size() == 10);
    std::vector<bool> used(labels.size(), false);
    for (const auto& b : batches) {
        std::map<NodeId, int> count;
        for (std::size_t i : b) {
            CHECK_FALSE(used[i]);
            used[i] = true;
            ++count[labels[i]];
        }
        CHECK(std::abs(count["a"] - 6) <= 1);
        CHECK(std::abs(count["b"] - 3) <= 1);
        CHECK(std::abs(count["c"] - 1) <= 1);
    }
    CHECK(make_batches(labels, 1000, false, 3).size() == 1);
}

TEST_CASE("checkpoint round trip") {
    HierGatModel m(toy(), small_config(4), 31);
    randomize(m, 32);
    m.encoder_name = "trivial";
    m.trained = true;
    const auto path = std::filesystem::temp_directory_path() / "matprobe_model_test.mpt";
    save_model(path, m);
    const HierGatModel back = load_model(path, toy());
    CHECK(back.encoder_name == "trivial");
    CHECK(back.trained);
    CHECK(back.config().hidden_dim == 5);
    const Tensor x = random_features(1, 4, 33);
    const auto a = m.predict(x).front().logits;
    const auto b = back.predict(x).front().logits;
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(b[i] == doctest::Approx(a[i]).epsilon(1e-5));

    const auto other = Taxonomy::from_json(toy_doc(true));
    CHECK_THROWS_WITH_AS(load_model(path, other), doctest::Contains("does not match"), DataError);
    std::filesystem::remove(path);
}
