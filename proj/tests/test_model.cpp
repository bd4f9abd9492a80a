#include <catch2/catch_amalgamated.hpp>

#include "rcgrl/model.hpp"
#include "rcgrl/synthgen.hpp"

using namespace rcgrl;

namespace {

AttributedGraph random_graph(int n, int d, Rng& rng, double edge_prob = 0.3) {
    AttributedGraph g;
    g.num_nodes = n;
    g.node_feat.resize(n, d);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < d; ++c) g.node_feat(r, c) = rng.uniform(-1, 1);
    for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b)
            if (a != b && rng.next_double() < edge_prob) g.edge_index.push_back({a, b});
    g.label = static_cast<int>(rng.below(3));
    g.id = "r";
    return g;
}

// Dense adjacency-matrix oracle for one layer:
//   H' = tanh(H com_w + 1 com_b + S (H agg_w + 1 agg_b))
// with S(dst, src) accumulating the scale of every src->dst edge.
Mat dense_mp_oracle(const Mat& h, const std::vector<std::array<int, 2>>& edges,
                    const Eigen::VectorXd* scale, const MpLayerParams& L) {
    const int n = static_cast<int>(h.rows());
    Mat S = Mat::Zero(n, n);
    for (size_t e = 0; e < edges.size(); ++e)
        S(edges[e][1], edges[e][0]) += scale ? (*scale)[static_cast<long>(e)] : 1.0;
    Mat agg = h * L.agg_w;
    agg.rowwise() += L.agg_b.row(0);
    Mat self = h * L.com_w;
    self.rowwise() += L.com_b.row(0);
    return (self + S * agg).array().tanh();
}

} // namespace

TEST_CASE("isolated node reduces to the self term") {
    Rng rng(1);
    MpLayerParams L = make_mp_layer(3, 4, rng);
    Mat h(2, 3);
    h << 0.2, -0.4, 0.9, 0.0, 0.5, -0.1;
    std::vector<std::array<int, 2>> edges{{0, 1}};  // node 0 has no incoming edge
    Mat out = mp_layer(h, edges, nullptr, L);
    Mat self = h * L.com_w;
    self.rowwise() += L.com_b.row(0);
    REQUIRE((out.row(0) - self.row(0).array().tanh().matrix()).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("edge scale zero equals deleting the edge") {
    Rng rng(2);
    MpLayerParams L = make_mp_layer(3, 4, rng);
    AttributedGraph g = random_graph(5, 3, rng, 0.5);
    REQUIRE(g.num_edges() >= 2);
    Eigen::VectorXd scale = Eigen::VectorXd::Ones(g.num_edges());
    scale[0] = 0.0;
    Mat with_scaled = mp_layer(g.node_feat, g.edge_index, &scale, L);

    auto edges_minus = g.edge_index;
    edges_minus.erase(edges_minus.begin());
    Mat without = mp_layer(g.node_feat, edges_minus, nullptr, L);
    REQUIRE((with_scaled - without).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("message passing matches the dense adjacency oracle on 50 random graphs") {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 2 + static_cast<int>(rng.below(9));  // <= 10 nodes
        AttributedGraph g = random_graph(n, 3, rng, 0.35);
        MpLayerParams L = make_mp_layer(3, 5, rng);
        Eigen::VectorXd scale(g.num_edges());
        for (int e = 0; e < g.num_edges(); ++e) scale[e] = rng.next_double();
        Mat ours = mp_layer(g.node_feat, g.edge_index, &scale, L);
        Mat oracle = dense_mp_oracle(g.node_feat, g.edge_index, &scale, L);
        REQUIRE((ours - oracle).cwiseAbs().maxCoeff() < 1e-6);
        Mat ours_unit = mp_layer(g.node_feat, g.edge_index, nullptr, L);
        Mat oracle_unit = dense_mp_oracle(g.node_feat, g.edge_index, nullptr, L);
        REQUIRE((ours_unit - oracle_unit).cwiseAbs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("two-stage encode matches the dense oracle around the removal point") {
    Rng rng(4);
    AttributedGraph g = random_graph(6, 4, rng, 0.4);
    EncoderParams th = make_encoder(4, 3, 5, 4, 11);
    GraphBatch b = make_batch(std::vector<const AttributedGraph*>{&g});

    EdgeWeights z;
    z.weights.resize(g.num_edges());
    for (int e = 0; e < g.num_edges(); ++e) z.weights[e] = rng.next_double();
    Removal rm = remove_confounders(b, z, 0.5);
    const int u = 2;
    EncodeOutput out = encode(th, b, rm, u);

    // oracle: two full-graph layers, then two layers on kept edges with scales
    Mat h = g.node_feat;
    for (int k = 0; k < u; ++k) h = dense_mp_oracle(h, g.edge_index, nullptr, th.layers[k]);
    std::vector<std::array<int, 2>> kept_edges;
    std::vector<double> kept_scale;
    for (size_t e = 0; e < rm.kept.size(); ++e)
        if (rm.kept[e]) {
            kept_edges.push_back(g.edge_index[e]);
            kept_scale.push_back(z.weights[static_cast<long>(e)]);
        }
    Eigen::VectorXd ks = Eigen::Map<Eigen::VectorXd>(kept_scale.data(),
                                                     static_cast<long>(kept_scale.size()));
    for (int k = u; k < 4; ++k) h = dense_mp_oracle(h, kept_edges, &ks, th.layers[k]);
    Mat pooled = h.colwise().mean();
    Mat logits = pooled * th.head_w;
    logits.rowwise() += th.head_b.row(0);

    REQUIRE((out.representation - pooled).cwiseAbs().maxCoeff() < 1e-6);
    REQUIRE((out.logits - logits).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("zero scorer weights give a constant squashed bias weight") {
    Rng rng(5);
    AttributedGraph g = random_graph(6, 4, rng, 0.4);
    GraphBatch b = make_batch(std::vector<const AttributedGraph*>{&g});
    IVGenParams q = make_ivgen(4, 6, 5, 3);
    q.mlp_w2.setZero();
    q.mlp_b2(0, 0) = 0.7;
    EdgeWeights z = compute_iv(q, b);
    const double expect = 1.0 / (1.0 + std::exp(-0.7));
    for (int e = 0; e < z.weights.size(); ++e)
        REQUIRE(z.weights[e] == Catch::Approx(expect).epsilon(1e-12));
}

TEST_CASE("edge weights stay in (0,1) and permute with edge order") {
    Rng rng(6);
    AttributedGraph g = random_graph(7, 4, rng, 0.4);
    IVGenParams q = make_ivgen(4, 6, 5, 17);
    GraphBatch b1 = make_batch(std::vector<const AttributedGraph*>{&g});
    EdgeWeights z1 = compute_iv(q, b1);
    for (int e = 0; e < z1.weights.size(); ++e) {
        REQUIRE(z1.weights[e] > 0.0);
        REQUIRE(z1.weights[e] < 1.0);
    }

    // reverse the edge order; weights must follow their edges
    AttributedGraph g2 = g;
    std::reverse(g2.edge_index.begin(), g2.edge_index.end());
    GraphBatch b2 = make_batch(std::vector<const AttributedGraph*>{&g2});
    EdgeWeights z2 = compute_iv(q, b2);
    const int m = g.num_edges();
    for (int e = 0; e < m; ++e)
        REQUIRE(z2.weights[m - 1 - e] == Catch::Approx(z1.weights[e]).epsilon(1e-9));
}

TEST_CASE("compute_iv gradients match finite differences") {
    Rng rng(7);
    AttributedGraph g = random_graph(6, 3, rng, 0.4);
    GraphBatch b = make_batch(std::vector<const AttributedGraph*>{&g});
    IVGenParams q = make_ivgen(3, 4, 3, 23);

    // reverse-mode gradient of the mean edge weight
    ad::Tape tape;
    TapeEngine E{tape};
    auto qv = register_ivgen(E, q, true);
    auto z = compute_iv_impl(E, qv, b);
    auto out = tape.mean_all(z);
    tape.backward(out);
    auto vars = collect_vars(qv);

    auto eval = [&](const IVGenParams& qq) {
        ValueEngine VE;
        auto vv = register_ivgen(VE, qq, false);
        return VE.mean_all(compute_iv_impl(VE, vv, b))(0, 0);
    };
    auto ts = tensors(q);
    for (size_t p = 0; p < ts.size(); ++p) {
        const Mat grad = tape.grad(vars[p]);
        for (int r = 0; r < ts[p]->rows(); ++r)
            for (int c = 0; c < ts[p]->cols(); ++c) {
                IVGenParams plus = q, minus = q;
                const double eps = 1e-6;
                (*tensors(plus)[p])(r, c) += eps;
                (*tensors(minus)[p])(r, c) -= eps;
                const double fd = (eval(plus) - eval(minus)) / (2 * eps);
                const double scale = std::max({std::abs(fd), std::abs(grad(r, c)), 1e-6});
                REQUIRE(std::abs(fd - grad(r, c)) / scale < 1e-4);
            }
    }
}

TEST_CASE("remove_confounders drops the stated count with index tie-breaks") {
    // 8 edges, drop 0.75 -> exactly 6 dropped, the two highest kept
    AttributedGraph g;
    g.num_nodes = 4;
    g.node_feat = Mat::Zero(4, 2);
    for (int e = 0; e < 8; ++e) g.edge_index.push_back({e % 4, (e + 1) % 4});
    g.id = "t";
    GraphBatch b = make_batch(std::vector<const AttributedGraph*>{&g});
    EdgeWeights z;
    z.weights.resize(8);
    z.weights << 0.1, 0.9, 0.2, 0.8, 0.3, 0.7, 0.4, 0.6;
    Removal rm = remove_confounders(b, z, 0.75);
    int kept = 0;
    for (bool k : rm.kept) kept += k;
    REQUIRE(kept == 2);
    REQUIRE(rm.kept[1]);  // 0.9
    REQUIRE(rm.kept[3]);  // 0.8
    REQUIRE(rm.scale[1] == 0.9);
    REQUIRE(rm.scale[0] == 0.0);

    // drop 0 keeps everything with the weights as scales
    Removal rm0 = remove_confounders(b, z, 0.0);
    for (bool k : rm0.kept) REQUIRE(k);
    REQUIRE(rm0.scale == z.weights);

    // equal weights, 5 edges, drop 0.4 -> edges 0 and 1 dropped
    AttributedGraph g5;
    g5.num_nodes = 3;
    g5.node_feat = Mat::Zero(3, 2);
    for (int e = 0; e < 5; ++e) g5.edge_index.push_back({e % 3, (e + 1) % 3});
    g5.id = "t5";
    GraphBatch b5 = make_batch(std::vector<const AttributedGraph*>{&g5});
    EdgeWeights z5;
    z5.weights = Eigen::VectorXd::Constant(5, 0.5);
    Removal rm5 = remove_confounders(b5, z5, 0.4);
    REQUIRE_FALSE(rm5.kept[0]);
    REQUIRE_FALSE(rm5.kept[1]);
    REQUIRE(rm5.kept[2]);
    REQUIRE(rm5.kept[3]);
    REQUIRE(rm5.kept[4]);
}

TEST_CASE("drop counts match the rational floor oracle on enumerated cases") {
    // every edge count <= 8 against a rational-arithmetic floor(p*m)
    const std::vector<std::pair<int, int>> fractions{
        {0, 1}, {1, 4}, {3, 10}, {2, 5}, {1, 2}, {3, 5}, {3, 4}, {4, 5}, {9, 10}, {1, 1}};
    for (int m = 1; m <= 8; ++m) {
        AttributedGraph g;
        g.num_nodes = std::max(2, m);
        g.node_feat = Mat::Zero(g.num_nodes, 1);
        for (int e = 0; e < m; ++e) g.edge_index.push_back({e % g.num_nodes, (e + 1) % g.num_nodes});
        g.id = "t";
        GraphBatch b = make_batch(std::vector<const AttributedGraph*>{&g});
        EdgeWeights z;
        z.weights.resize(m);
        Rng rng(static_cast<std::uint64_t>(m));
        for (int e = 0; e < m; ++e) z.weights[e] = rng.next_double();
        for (auto [num, den] : fractions) {
            const double p = static_cast<double>(num) / static_cast<double>(den);
            Removal rm = remove_confounders(b, z, p);
            int dropped = 0;
            for (bool k : rm.kept) dropped += !k;
            REQUIRE(dropped == (num * m) / den);  // exact integer floor
        }
    }
}

TEST_CASE("u = K makes removal degenerate") {
    Rng rng(8);
    AttributedGraph g = random_graph(6, 4, rng, 0.4);
    GraphBatch b = make_batch(std::vector<const AttributedGraph*>{&g});
    EncoderParams th = make_encoder(4, 3, 5, 4, 2);
    EdgeWeights z;
    z.weights.resize(g.num_edges());
    for (int e = 0; e < g.num_edges(); ++e) z.weights[e] = rng.next_double();
    Removal rm = remove_confounders(b, z, 0.75);
    EncodeOutput with_removal = encode(th, b, rm, 4);
    EncodeOutput without = encode(th, b, std::nullopt, 4);
    REQUIRE(with_removal.representation == without.representation);
    REQUIRE(with_removal.logits == without.logits);
}

TEST_CASE("drop zero with unit weights equals no removal") {
    Rng rng(9);
    AttributedGraph g = random_graph(7, 4, rng, 0.35);
    GraphBatch b = make_batch(std::vector<const AttributedGraph*>{&g});
    EncoderParams th = make_encoder(4, 3, 5, 4, 3);
    EdgeWeights ones;
    ones.weights = Eigen::VectorXd::Ones(g.num_edges());
    Removal rm = remove_confounders(b, ones, 0.0);
    EncodeOutput a = encode(th, b, rm, 2);
    EncodeOutput c = encode(th, b, std::nullopt, 2);
    REQUIRE(a.representation == c.representation);
    REQUIRE(a.logits == c.logits);
}

TEST_CASE("node relabeling leaves representation and logits unchanged") {
    Rng rng(10);
    AttributedGraph g = random_graph(8, 4, rng, 0.35);
    EncoderParams th = make_encoder(4, 3, 6, 3, 5);

    std::vector<int> perm(static_cast<size_t>(g.num_nodes));
    for (size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
    for (size_t i = perm.size(); i > 1; --i)
        std::swap(perm[i - 1], perm[rng.below(i)]);

    AttributedGraph gp = g;
    for (int v = 0; v < g.num_nodes; ++v) gp.node_feat.row(perm[static_cast<size_t>(v)]) = g.node_feat.row(v);
    for (size_t e = 0; e < g.edge_index.size(); ++e)
        gp.edge_index[e] = {perm[static_cast<size_t>(g.edge_index[e][0])],
                            perm[static_cast<size_t>(g.edge_index[e][1])]};

    GraphBatch b1 = make_batch(std::vector<const AttributedGraph*>{&g});
    GraphBatch b2 = make_batch(std::vector<const AttributedGraph*>{&gp});
    EncodeOutput o1 = encode(th, b1, std::nullopt, 3);
    EncodeOutput o2 = encode(th, b2, std::nullopt, 3);
    REQUIRE((o1.representation - o2.representation).cwiseAbs().maxCoeff() < 1e-6);
    REQUIRE((o1.logits - o2.logits).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("batched encoding equals per-graph encoding") {
    Rng rng(11);
    std::vector<AttributedGraph> gs;
    for (int i = 0; i < 6; ++i) gs.push_back(random_graph(3 + i, 4, rng, 0.4));
    EncoderParams th = make_encoder(4, 3, 6, 3, 7);
    GraphBatch all = make_batch(gs);
    EncodeOutput batched = encode(th, all, std::nullopt, 3);
    for (int i = 0; i < 6; ++i) {
        GraphBatch single = make_batch(std::vector<const AttributedGraph*>{&gs[static_cast<size_t>(i)]});
        EncodeOutput one = encode(th, single, std::nullopt, 3);
        REQUIRE((batched.representation.row(i) - one.representation.row(0))
                    .cwiseAbs()
                    .maxCoeff() < 1e-12);
        REQUIRE((batched.logits.row(i) - one.logits.row(0)).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("tape and value engines produce identical forward values") {
    Rng rng(12);
    AttributedGraph g = random_graph(9, 4, rng, 0.3);
    GraphBatch b = make_batch(std::vector<const AttributedGraph*>{&g});
    EncoderParams th = make_encoder(4, 3, 6, 4, 9);
    IVGenParams q = make_ivgen(4, 6, 5, 9);

    EdgeWeights z = compute_iv(q, b);
    Removal rm = remove_confounders(b, z, 0.5);

    ad::Tape tape;
    TapeEngine TE{tape};
    auto thv = register_encoder(TE, th, false);
    auto qv = register_ivgen(TE, q, true);
    auto zt = compute_iv_impl(TE, qv, b);
    auto plan = removal_plan(TE, b, rm, zt);
    auto enc = encode_impl(TE, thv, b, &plan, 2);

    EncodeOutput vo = encode(th, b, rm, 2);
    REQUIRE(tape.val(enc.representation) == vo.representation);
    REQUIRE(tape.val(enc.logits) == vo.logits);
    REQUIRE(tape.val(zt).col(0) == z.weights);
}

TEST_CASE("predict breaks ties toward the lowest class") {
    Mat logits(2, 3);
    logits << 0, 0, 0, -1, 5, 5;
    auto preds = argmax_rows(logits);
    REQUIRE(preds[0] == 0);
    REQUIRE(preds[1] == 1);
}

TEST_CASE("encode validates u") {
    Rng rng(13);
    AttributedGraph g = random_graph(4, 2, rng);
    GraphBatch b = make_batch(std::vector<const AttributedGraph*>{&g});
    EncoderParams th = make_encoder(2, 2, 3, 2, 1);
    REQUIRE_THROWS_AS(encode(th, b, std::nullopt, 5), ConfigError);
    REQUIRE_THROWS_AS(encode(th, b, std::nullopt, -1), ConfigError);
}

TEST_CASE("remove_confounders validates alignment and fraction") {
    Rng rng(14);
    AttributedGraph g = random_graph(4, 2, rng, 0.5);
    GraphBatch b = make_batch(std::vector<const AttributedGraph*>{&g});
    EdgeWeights bad;
    bad.weights = Eigen::VectorXd::Ones(g.num_edges() + 1);
    REQUIRE_THROWS_AS(remove_confounders(b, bad, 0.5), DataError);
    EdgeWeights ok;
    ok.weights = Eigen::VectorXd::Ones(g.num_edges());
    REQUIRE_THROWS_AS(remove_confounders(b, ok, 1.5), ConfigError);
}
