#pragma once

#include <array>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include "json.hpp"

#include "rcgrl/errors.hpp"

namespace rcgrl {

using Mat = Eigen::MatrixXd;
using Json = nlohmann::json;

enum class Split { train, val, test };

inline const char* to_string(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::val: return "val";
        case Split::test: return "test";
    }
    return "?";
}

inline Split split_from_string(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "val") return Split::val;
    if (s == "test") return Split::test;
    throw DataError("unknown split value '" + s + "'");
}

// One labeled graph. Edges are directed; undirected structures carry both
// directions. Immutable by convention after construction.
struct AttributedGraph {
    std::string id;
    int num_nodes = 0;
    Mat node_feat;                                        // num_nodes x d
    std::vector<std::array<int, 2>> edge_index;           // (src, dst)
    int label = 0;
    std::optional<std::vector<bool>> causal_edge_mask;    // aligned with edge_index
    Split split = Split::train;

    int num_edges() const { return static_cast<int>(edge_index.size()); }

    bool operator==(const AttributedGraph& o) const {
        return id == o.id && num_nodes == o.num_nodes && label == o.label &&
               split == o.split && edge_index == o.edge_index &&
               causal_edge_mask == o.causal_edge_mask &&
               node_feat.rows() == o.node_feat.rows() &&
               node_feat.cols() == o.node_feat.cols() && node_feat == o.node_feat;
    }
};

struct Dataset {
    std::vector<AttributedGraph> graphs;
    int num_classes = 0;
    int feature_dim = 0;
    Json metadata = Json::object();

    std::vector<const AttributedGraph*> split_view(Split s) const {
        std::vector<const AttributedGraph*> out;
        for (const auto& g : graphs)
            if (g.split == s) out.push_back(&g);
        return out;
    }
};

inline void validate_graph(const AttributedGraph& g, int feature_dim, int num_classes,
                           const std::string& where) {
    if (g.num_nodes < 0) throw DataError(where + ": num_nodes is negative");
    if (g.node_feat.rows() != g.num_nodes)
        throw DataError(where + ": field node_feat has " + std::to_string(g.node_feat.rows()) +
                        " rows, expected " + std::to_string(g.num_nodes));
    if (g.node_feat.cols() != feature_dim)
        throw DataError(where + ": field node_feat has dimension " +
                        std::to_string(g.node_feat.cols()) + ", dataset feature_dim is " +
                        std::to_string(feature_dim));
    for (size_t e = 0; e < g.edge_index.size(); ++e) {
        const auto [s, d] = g.edge_index[e];
        if (s < 0 || s >= g.num_nodes || d < 0 || d >= g.num_nodes)
            throw DataError(where + ": field edge_index entry " + std::to_string(e) + " = (" +
                            std::to_string(s) + "," + std::to_string(d) +
                            ") references a node outside [0," + std::to_string(g.num_nodes) + ")");
    }
    if (g.causal_edge_mask && g.causal_edge_mask->size() != g.edge_index.size())
        throw DataError(where + ": field causal_edge_mask has length " +
                        std::to_string(g.causal_edge_mask->size()) + ", expected " +
                        std::to_string(g.edge_index.size()));
    if (g.label < 0 || g.label >= num_classes)
        throw DataError(where + ": field label " + std::to_string(g.label) +
                        " outside [0," + std::to_string(num_classes) + ")");
}

inline void validate_dataset(const Dataset& ds) {
    if (ds.num_classes <= 0) throw DataError("dataset: num_classes must be positive");
    if (ds.feature_dim < 0) throw DataError("dataset: feature_dim must be non-negative");
    for (size_t i = 0; i < ds.graphs.size(); ++i)
        validate_graph(ds.graphs[i], ds.feature_dim, ds.num_classes,
                       "graph " + std::to_string(i) + " (id=" + ds.graphs[i].id + ")");
}

// ---------------------------------------------------------------------------
// JSON Lines dataset format.
// Line 1: {"num_classes": int, "feature_dim": int, "metadata": {...}}
// Lines 2..: one graph object per line (see graph_to_json).
// ---------------------------------------------------------------------------

inline Json graph_to_json(const AttributedGraph& g) {
    Json j;
    j["id"] = g.id;
    j["num_nodes"] = g.num_nodes;
    Json feat = Json::array();
    for (int r = 0; r < g.node_feat.rows(); ++r) {
        Json row = Json::array();
        for (int c = 0; c < g.node_feat.cols(); ++c) row.push_back(g.node_feat(r, c));
        feat.push_back(std::move(row));
    }
    j["node_feat"] = std::move(feat);
    Json edges = Json::array();
    for (const auto& e : g.edge_index) edges.push_back(Json::array({e[0], e[1]}));
    j["edge_index"] = std::move(edges);
    j["label"] = g.label;
    if (g.causal_edge_mask) {
        Json m = Json::array();
        for (bool b : *g.causal_edge_mask) m.push_back(b);
        j["causal_edge_mask"] = std::move(m);
    } else {
        j["causal_edge_mask"] = nullptr;
    }
    j["split"] = to_string(g.split);
    return j;
}

inline AttributedGraph graph_from_json(const Json& j, const std::string& where) {
    auto need = [&](const char* key) -> const Json& {
        auto it = j.find(key);
        if (it == j.end()) throw DataError(where + ": missing field " + key);
        return *it;
    };
    AttributedGraph g;
    try {
        g.id = need("id").get<std::string>();
        g.num_nodes = need("num_nodes").get<int>();
        const Json& feat = need("node_feat");
        if (!feat.is_array()) throw DataError(where + ": field node_feat is not an array");
        const int rows = static_cast<int>(feat.size());
        int cols = -1;
        for (int r = 0; r < rows; ++r) {
            if (!feat[r].is_array())
                throw DataError(where + ": field node_feat row " + std::to_string(r) +
                                " is not an array");
            if (cols < 0) {
                cols = static_cast<int>(feat[r].size());
                g.node_feat.resize(rows, cols);
            } else if (static_cast<int>(feat[r].size()) != cols) {
                throw DataError(where + ": field node_feat has ragged rows");
            }
            for (int c = 0; c < cols; ++c) g.node_feat(r, c) = feat[r][c].get<double>();
        }
        if (rows == 0) g.node_feat.resize(0, 0);
        for (const auto& e : need("edge_index")) {
            if (!e.is_array() || e.size() != 2)
                throw DataError(where + ": field edge_index entry is not a pair");
            g.edge_index.push_back({e[0].get<int>(), e[1].get<int>()});
        }
        g.label = need("label").get<int>();
        const Json& mask = need("causal_edge_mask");
        if (!mask.is_null()) {
            std::vector<bool> m;
            for (const auto& b : mask) m.push_back(b.get<bool>());
            g.causal_edge_mask = std::move(m);
        }
        g.split = split_from_string(need("split").get<std::string>());
    } catch (const Json::exception& e) {
        throw DataError(where + ": malformed record (" + e.what() + ")");
    }
    return g;
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open dataset file '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw DataError(path + ": empty file, expected metadata line");
    Dataset ds;
    try {
        Json header = Json::parse(line);
        ds.num_classes = header.at("num_classes").get<int>();
        ds.feature_dim = header.at("feature_dim").get<int>();
        ds.metadata = header.value("metadata", Json::object());
    } catch (const Json::exception& e) {
        throw DataError(path + ":1: malformed metadata line (" + std::string(e.what()) + ")");
    }
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        Json j;
        try {
            j = Json::parse(line);
        } catch (const Json::exception& e) {
            throw DataError(path + ":" + std::to_string(lineno) + ": invalid JSON (" + e.what() +
                            ")");
        }
        const std::string where = path + ":" + std::to_string(lineno);
        AttributedGraph g = graph_from_json(j, where);
        validate_graph(g, ds.feature_dim, ds.num_classes, where);
        ds.graphs.push_back(std::move(g));
    }
    return ds;
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
    validate_dataset(ds);
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write dataset file '" + path + "'");
    Json header;
    header["num_classes"] = ds.num_classes;
    header["feature_dim"] = ds.feature_dim;
    header["metadata"] = ds.metadata;
    out << header.dump() << '\n';
    for (const auto& g : ds.graphs) out << graph_to_json(g).dump() << '\n';
    if (!out) throw DataError("write failed for '" + path + "'");
}

// ---------------------------------------------------------------------------
// Batching: block-diagonal concatenation. Unbatch reproduces the member
// graphs bit-exactly (same features, same edge order).
// ---------------------------------------------------------------------------

struct GraphBatch {
    Mat node_feat;                                // N x d stacked
    std::vector<std::array<int, 2>> edge_index;   // offset-adjusted
    std::vector<int> graph_assignment;            // node -> slot
    std::vector<int> labels;
    std::vector<std::pair<int, int>> node_spans;  // per graph [begin,end)
    std::vector<std::pair<int, int>> edge_spans;
    int num_graphs = 0;

    // carried through so unbatch is lossless
    std::vector<std::string> ids;
    std::vector<Split> splits;
    std::vector<std::optional<std::vector<bool>>> causal_masks;

    int num_nodes() const { return static_cast<int>(graph_assignment.size()); }
    int num_edges() const { return static_cast<int>(edge_index.size()); }
};

inline GraphBatch make_batch(const std::vector<const AttributedGraph*>& graphs) {
    if (graphs.empty()) throw DataError("make_batch: empty graph list");
    const int d = static_cast<int>(graphs[0]->node_feat.cols());
    int total_nodes = 0, total_edges = 0;
    for (const auto* g : graphs) {
        if (g->node_feat.cols() != d)
            throw DataError("make_batch: mixed feature_dim (" + std::to_string(g->node_feat.cols()) +
                            " vs " + std::to_string(d) + ")");
        total_nodes += g->num_nodes;
        total_edges += g->num_edges();
    }
    GraphBatch b;
    b.num_graphs = static_cast<int>(graphs.size());
    b.node_feat.resize(total_nodes, d);
    b.edge_index.reserve(total_edges);
    b.graph_assignment.reserve(total_nodes);
    int node_off = 0, edge_off = 0;
    for (int gi = 0; gi < b.num_graphs; ++gi) {
        const AttributedGraph& g = *graphs[gi];
        b.node_feat.middleRows(node_off, g.num_nodes) = g.node_feat;
        for (const auto& e : g.edge_index)
            b.edge_index.push_back({e[0] + node_off, e[1] + node_off});
        for (int v = 0; v < g.num_nodes; ++v) b.graph_assignment.push_back(gi);
        b.labels.push_back(g.label);
        b.node_spans.emplace_back(node_off, node_off + g.num_nodes);
        b.edge_spans.emplace_back(edge_off, edge_off + g.num_edges());
        b.ids.push_back(g.id);
        b.splits.push_back(g.split);
        b.causal_masks.push_back(g.causal_edge_mask);
        node_off += g.num_nodes;
        edge_off += g.num_edges();
    }
    return b;
}

inline GraphBatch make_batch(const std::vector<AttributedGraph>& graphs) {
    std::vector<const AttributedGraph*> ptrs;
    ptrs.reserve(graphs.size());
    for (const auto& g : graphs) ptrs.push_back(&g);
    return make_batch(ptrs);
}

inline std::vector<AttributedGraph> unbatch(const GraphBatch& b) {
    std::vector<AttributedGraph> out(b.num_graphs);
    for (int gi = 0; gi < b.num_graphs; ++gi) {
        AttributedGraph& g = out[gi];
        const auto [nb, ne] = b.node_spans[gi];
        const auto [eb, ee] = b.edge_spans[gi];
        g.id = b.ids[gi];
        g.num_nodes = ne - nb;
        g.node_feat = b.node_feat.middleRows(nb, g.num_nodes);
        g.edge_index.reserve(ee - eb);
        for (int e = eb; e < ee; ++e)
            g.edge_index.push_back({b.edge_index[e][0] - nb, b.edge_index[e][1] - nb});
        g.label = b.labels[gi];
        g.causal_edge_mask = b.causal_masks[gi];
        g.split = b.splits[gi];
    }
    return out;
}

} // namespace rcgrl
