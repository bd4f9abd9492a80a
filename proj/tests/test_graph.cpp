#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>

#include "rcgrl/graph.hpp"
#include "rcgrl/rng.hpp"

using namespace rcgrl;

namespace {

std::string tmp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

AttributedGraph small_graph(const std::string& id, int n, int d, int label, Split split,
                            Rng& rng) {
    AttributedGraph g;
    g.id = id;
    g.num_nodes = n;
    g.node_feat.resize(n, d);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < d; ++c) g.node_feat(r, c) = rng.next_double();
    for (int v = 1; v < n; ++v) {
        const int p = static_cast<int>(rng.below(static_cast<std::uint64_t>(v)));
        g.edge_index.push_back({v, p});
        g.edge_index.push_back({p, v});
    }
    g.label = label;
    g.split = split;
    return g;
}

Dataset small_dataset(int n_graphs, int d = 3) {
    Rng rng(11);
    Dataset ds;
    ds.num_classes = 3;
    ds.feature_dim = d;
    ds.metadata = Json{{"origin", "test"}};
    for (int i = 0; i < n_graphs; ++i)
        ds.graphs.push_back(small_graph("g" + std::to_string(i), 3 + i % 4, d, i % 3,
                                        i % 2 ? Split::val : Split::train, rng));
    return ds;
}

} // namespace

TEST_CASE("dataset round-trips through the jsonl format") {
    Dataset ds = small_dataset(3);
    const std::string p = tmp_path("rcgrl_ds_roundtrip.jsonl");
    save_dataset(ds, p);
    Dataset ds2 = load_dataset(p);
    REQUIRE(ds2.graphs.size() == 3);
    REQUIRE(ds2.num_classes == ds.num_classes);
    REQUIRE(ds2.feature_dim == ds.feature_dim);
    REQUIRE(ds2.metadata.at("origin") == "test");
    for (size_t i = 0; i < ds.graphs.size(); ++i) REQUIRE(ds.graphs[i] == ds2.graphs[i]);

    // save(load(p)) is byte-identical
    const std::string p2 = tmp_path("rcgrl_ds_roundtrip2.jsonl");
    save_dataset(ds2, p2);
    std::ifstream f1(p), f2(p2);
    std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    REQUIRE(s1 == s2);
    std::remove(p.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("empty dataset saves a metadata header and zero graph lines") {
    Dataset ds;
    ds.num_classes = 2;
    ds.feature_dim = 5;
    const std::string p = tmp_path("rcgrl_ds_empty.jsonl");
    save_dataset(ds, p);
    std::ifstream in(p);
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) ++lines;
    REQUIRE(lines == 1);
    Dataset ds2 = load_dataset(p);
    REQUIRE(ds2.graphs.empty());
    REQUIRE(ds2.feature_dim == 5);
    std::remove(p.c_str());
}

TEST_CASE("one-graph dataset writes exactly one graph line") {
    Dataset ds = small_dataset(1);
    const std::string p = tmp_path("rcgrl_ds_one.jsonl");
    save_dataset(ds, p);
    std::ifstream in(p);
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) ++lines;
    REQUIRE(lines == 2);
    std::remove(p.c_str());
}

TEST_CASE("load rejects an out-of-range edge and names the line") {
    const std::string p = tmp_path("rcgrl_ds_badedge.jsonl");
    {
        std::ofstream out(p);
        out << R"({"num_classes":2,"feature_dim":1,"metadata":{}})" << "\n";
        out << R"({"id":"ok","num_nodes":2,"node_feat":[[0.0],[0.1]],"edge_index":[[0,1]],)"
            << R"("label":0,"causal_edge_mask":null,"split":"train"})" << "\n";
        out << R"({"id":"bad","num_nodes":4,"node_feat":[[0.0],[0.1],[0.2],[0.3]],)"
            << R"("edge_index":[[5,0]],"label":1,"causal_edge_mask":null,"split":"test"})"
            << "\n";
    }
    try {
        load_dataset(p);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        const std::string msg = e.what();
        REQUIRE(msg.find(":3") != std::string::npos);
        REQUIRE(msg.find("edge_index") != std::string::npos);
    }
    std::remove(p.c_str());
}

TEST_CASE("load rejects inconsistent feature dimensions") {
    const std::string p = tmp_path("rcgrl_ds_baddim.jsonl");
    {
        std::ofstream out(p);
        out << R"({"num_classes":2,"feature_dim":2,"metadata":{}})" << "\n";
        out << R"({"id":"a","num_nodes":1,"node_feat":[[0.0,1.0]],"edge_index":[],)"
            << R"("label":0,"causal_edge_mask":null,"split":"train"})" << "\n";
        out << R"({"id":"b","num_nodes":1,"node_feat":[[0.0]],"edge_index":[],)"
            << R"("label":0,"causal_edge_mask":null,"split":"train"})" << "\n";
    }
    REQUIRE_THROWS_AS(load_dataset(p), DataError);
    std::remove(p.c_str());
}

TEST_CASE("load rejects a missing file") {
    REQUIRE_THROWS_AS(load_dataset("/nonexistent/rcgrl.jsonl"), DataError);
}

TEST_CASE("load rejects a misaligned causal mask") {
    const std::string p = tmp_path("rcgrl_ds_badmask.jsonl");
    {
        std::ofstream out(p);
        out << R"({"num_classes":2,"feature_dim":1,"metadata":{}})" << "\n";
        out << R"({"id":"a","num_nodes":2,"node_feat":[[0.0],[0.1]],"edge_index":[[0,1],[1,0]],)"
            << R"("label":0,"causal_edge_mask":[true],"split":"train"})" << "\n";
    }
    try {
        load_dataset(p);
        FAIL("expected DataError");
    } catch (const DataError& e) {
        REQUIRE(std::string(e.what()).find("causal_edge_mask") != std::string::npos);
    }
    std::remove(p.c_str());
}

TEST_CASE("batching a single graph keeps indices unchanged") {
    Dataset ds = small_dataset(1);
    GraphBatch b = make_batch({&ds.graphs[0]});
    REQUIRE(b.edge_index == ds.graphs[0].edge_index);
    REQUIRE(b.node_feat == ds.graphs[0].node_feat);
    for (int a : b.graph_assignment) REQUIRE(a == 0);
}

TEST_CASE("batching offsets the second graph by the first graph's size") {
    Rng rng(3);
    AttributedGraph g1 = small_graph("a", 3, 2, 0, Split::train, rng);
    AttributedGraph g2 = small_graph("b", 4, 2, 1, Split::train, rng);
    GraphBatch b = make_batch(std::vector<const AttributedGraph*>{&g1, &g2});
    REQUIRE(b.num_nodes() == 7);
    REQUIRE(b.node_spans[1].first == 3);
    for (size_t e = 0; e < g2.edge_index.size(); ++e) {
        REQUIRE(b.edge_index[g1.edge_index.size() + e][0] == g2.edge_index[e][0] + 3);
        REQUIRE(b.edge_index[g1.edge_index.size() + e][1] == g2.edge_index[e][1] + 3);
    }
    REQUIRE(b.graph_assignment[2] == 0);
    REQUIRE(b.graph_assignment[3] == 1);
}

TEST_CASE("batch of 32 random graphs unbatches to the originals") {
    Rng rng(77);
    std::vector<AttributedGraph> gs;
    for (int i = 0; i < 32; ++i) {
        AttributedGraph g = small_graph("g" + std::to_string(i),
                                        2 + static_cast<int>(rng.below(9)), 4,
                                        static_cast<int>(rng.below(3)),
                                        Split::test, rng);
        if (i % 3 == 0)
            g.causal_edge_mask = std::vector<bool>(g.edge_index.size(), i % 2 == 0);
        gs.push_back(std::move(g));
    }
    GraphBatch b = make_batch(gs);
    std::vector<AttributedGraph> back = unbatch(b);
    REQUIRE(back.size() == gs.size());
    for (size_t i = 0; i < gs.size(); ++i) REQUIRE(back[i] == gs[i]);
}

TEST_CASE("make_batch rejects empty lists and mixed dims") {
    REQUIRE_THROWS_AS(make_batch(std::vector<const AttributedGraph*>{}), DataError);
    Rng rng(1);
    AttributedGraph g1 = small_graph("a", 3, 2, 0, Split::train, rng);
    AttributedGraph g2 = small_graph("b", 3, 5, 0, Split::train, rng);
    REQUIRE_THROWS_AS(make_batch(std::vector<const AttributedGraph*>{&g1, &g2}), DataError);
}
