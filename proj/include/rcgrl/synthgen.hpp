#pragma once

#include <algorithm>
#include <array>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "rcgrl/graph.hpp"
#include "rcgrl/rng.hpp"

namespace rcgrl {

enum class FeatureRule { noise, constant, degree_one_hot };

inline const char* to_string(FeatureRule r) {
    switch (r) {
        case FeatureRule::noise: return "noise";
        case FeatureRule::constant: return "constant";
        case FeatureRule::degree_one_hot: return "degree-one-hot";
    }
    return "?";
}

inline FeatureRule feature_rule_from_string(const std::string& s) {
    if (s == "noise") return FeatureRule::noise;
    if (s == "constant") return FeatureRule::constant;
    if (s == "degree-one-hot") return FeatureRule::degree_one_hot;
    throw ConfigError("unknown feature rule '" + s + "'");
}

struct MotifSpec {
    std::string name;
    int node_count = 0;
    std::vector<std::array<int, 2>> edges;  // undirected pairs
    FeatureRule node_feature_generator = FeatureRule::noise;

    void validate() const {
        if (node_count <= 0) throw ConfigError("motif '" + name + "': empty");
        std::vector<std::vector<int>> adj(node_count);
        for (const auto& e : edges) {
            if (e[0] < 0 || e[0] >= node_count || e[1] < 0 || e[1] >= node_count)
                throw ConfigError("motif '" + name + "': edge endpoint out of range");
            adj[e[0]].push_back(e[1]);
            adj[e[1]].push_back(e[0]);
        }
        // connectivity check
        std::vector<bool> seen(node_count, false);
        std::vector<int> stack{0};
        seen[0] = true;
        int reached = 1;
        while (!stack.empty()) {
            int v = stack.back();
            stack.pop_back();
            for (int w : adj[v])
                if (!seen[w]) {
                    seen[w] = true;
                    ++reached;
                    stack.push_back(w);
                }
        }
        if (reached != node_count) throw ConfigError("motif '" + name + "': not connected");
    }
};

// Built-in shapes. Class motifs are near-isomorphic five-node rings so the
// causal signal is genuinely hard; confounder motifs are small but have very
// distinct degree signatures, which is what makes them an attractive shortcut.
inline MotifSpec motif_by_name(const std::string& name) {
    if (name == "cycle5")
        return {"cycle5", 5, {{{0, 1}}, {{1, 2}}, {{2, 3}}, {{3, 4}}, {{4, 0}}}};
    if (name == "house5")  // 5-cycle plus one chord
        return {"house5", 5, {{{0, 1}}, {{1, 2}}, {{2, 3}}, {{3, 4}}, {{4, 0}}, {{1, 4}}}};
    if (name == "crane5")  // 4-cycle with a pendant node
        return {"crane5", 5, {{{0, 1}}, {{1, 2}}, {{2, 3}}, {{3, 0}}, {{0, 4}}}};
    if (name == "triangle") return {"triangle", 3, {{{0, 1}}, {{1, 2}}, {{2, 0}}}};
    if (name == "star4") return {"star4", 4, {{{0, 1}}, {{0, 2}}, {{0, 3}}}};
    if (name == "path4") return {"path4", 4, {{{0, 1}}, {{1, 2}}, {{2, 3}}}};
    throw ConfigError("unknown motif '" + name + "'");
}

struct GenConfig {
    int n_graphs = 5000;
    double bias = 1.0 / 3.0;  // "balanced" == 1/3 for 3 classes
    std::uint64_t seed = 0;
    std::pair<int, int> base_graph_size_range{10, 20};
    std::array<MotifSpec, 3> class_motifs{motif_by_name("cycle5"), motif_by_name("house5"),
                                          motif_by_name("crane5")};
    std::array<MotifSpec, 3> confounder_motifs{motif_by_name("triangle"), motif_by_name("star4"),
                                               motif_by_name("path4")};
    int feature_dim = 4;
    int noise_edges = 2;          // extra undirected edges on top of the base tree
    bool large_subgraphs = false; // doubles the base and attaches the confounder twice
    std::array<double, 3> split_fractions{0.6, 0.2, 0.2};

    void validate() const {
        if (n_graphs <= 0) throw ConfigError("generate: n_graphs must be positive");
        if (bias < 1.0 / 3.0 - 1e-12 || bias > 1.0 + 1e-12)
            throw ConfigError("generate: bias must lie in [1/3, 1]");
        if (base_graph_size_range.first < 2 ||
            base_graph_size_range.second < base_graph_size_range.first)
            throw ConfigError("generate: invalid base_graph_size_range");
        if (feature_dim <= 0) throw ConfigError("generate: feature_dim must be positive");
        for (const auto& m : class_motifs) m.validate();
        for (const auto& m : confounder_motifs) m.validate();
    }

    Json to_json() const {
        Json j;
        j["n"] = n_graphs;
        j["bias"] = bias;
        j["seed"] = seed;
        j["base-size-min"] = base_graph_size_range.first;
        j["base-size-max"] = base_graph_size_range.second;
        j["feature-dim"] = feature_dim;
        j["noise-edges"] = noise_edges;
        j["large-subgraphs"] = large_subgraphs;
        j["split-fractions"] = split_fractions;
        Json cm = Json::array(), km = Json::array();
        for (const auto& m : class_motifs) cm.push_back(m.name);
        for (const auto& m : confounder_motifs) km.push_back(m.name);
        j["class-motifs"] = cm;
        j["confounder-motifs"] = km;
        return j;
    }
};

namespace detail {

inline void append_motif(AttributedGraph& g, const MotifSpec& m, int base_size, Rng& rng,
                         bool causal, std::vector<FeatureRule>& node_rules) {
    const int off = g.num_nodes;
    g.num_nodes += m.node_count;
    for (int v = 0; v < m.node_count; ++v) node_rules.push_back(m.node_feature_generator);
    auto& mask = *g.causal_edge_mask;
    for (const auto& e : m.edges) {
        g.edge_index.push_back({e[0] + off, e[1] + off});
        g.edge_index.push_back({e[1] + off, e[0] + off});
        mask.push_back(causal);
        mask.push_back(causal);
    }
    // one attachment edge from a random motif node to a random base node
    const int mnode = off + static_cast<int>(rng.below(m.node_count));
    const int bnode = static_cast<int>(rng.below(base_size));
    g.edge_index.push_back({mnode, bnode});
    g.edge_index.push_back({bnode, mnode});
    mask.push_back(causal);
    mask.push_back(causal);
}

} // namespace detail

// Sampling arithmetic, shared with nothing else: one stream per graph derived
// from (seed, index); draw order is label, confounder selection, base size,
// tree parents, noise endpoints, attachments, node features.
inline AttributedGraph generate_graph(const GenConfig& cfg, int index, Split split,
                                      int* confounder_type_out = nullptr) {
    Rng rng = derive_stream(cfg.seed, static_cast<std::uint64_t>(index));

    const int num_classes = static_cast<int>(cfg.class_motifs.size());
    const int label = static_cast<int>(rng.below(num_classes));
    const double p_match = (split == Split::train) ? cfg.bias : 1.0 / 3.0;
    int conf_type;
    if (rng.next_double() < p_match) {
        conf_type = label;  // identity pairing between class and confounder type
    } else {
        const int pick = static_cast<int>(rng.below(2));
        conf_type = (label + 1 + pick) % 3;
    }

    auto base_range = cfg.base_graph_size_range;
    if (cfg.large_subgraphs) {
        base_range.first *= 2;
        base_range.second *= 2;
    }
    const int base_size = rng.uniform_int(base_range.first, base_range.second);

    AttributedGraph g;
    char idbuf[32];
    std::snprintf(idbuf, sizeof(idbuf), "g%06d-c%d", index, conf_type);
    g.id = idbuf;
    g.label = label;
    g.split = split;
    g.num_nodes = base_size;
    g.causal_edge_mask = std::vector<bool>{};
    std::vector<FeatureRule> node_rules(base_size, FeatureRule::noise);
    auto& mask = *g.causal_edge_mask;

    // random recursive tree
    for (int v = 1; v < base_size; ++v) {
        const int parent = static_cast<int>(rng.below(v));
        g.edge_index.push_back({v, parent});
        g.edge_index.push_back({parent, v});
        mask.push_back(false);
        mask.push_back(false);
    }
    // noise edges; duplicate/self-loop draws are consumed but skipped
    std::set<std::pair<int, int>> have;
    for (const auto& e : g.edge_index) have.insert({std::min(e[0], e[1]), std::max(e[0], e[1])});
    for (int j = 0; j < cfg.noise_edges; ++j) {
        const int u = static_cast<int>(rng.below(base_size));
        const int w = static_cast<int>(rng.below(base_size));
        if (u == w) continue;
        auto key = std::make_pair(std::min(u, w), std::max(u, w));
        if (!have.insert(key).second) continue;
        g.edge_index.push_back({u, w});
        g.edge_index.push_back({w, u});
        mask.push_back(false);
        mask.push_back(false);
    }

    detail::append_motif(g, cfg.class_motifs[label], base_size, rng, /*causal=*/true, node_rules);
    detail::append_motif(g, cfg.confounder_motifs[conf_type], base_size, rng, /*causal=*/false,
                         node_rules);
    if (cfg.large_subgraphs)
        detail::append_motif(g, cfg.confounder_motifs[conf_type], base_size, rng, false,
                             node_rules);

    // node features come last in the stream so structural draws stay aligned
    // across feature rules
    g.node_feat.resize(g.num_nodes, cfg.feature_dim);
    std::vector<int> degree(g.num_nodes, 0);
    for (const auto& e : g.edge_index) ++degree[e[0]];
    for (int v = 0; v < g.num_nodes; ++v) {
        switch (node_rules[v]) {
            case FeatureRule::noise:
                for (int c = 0; c < cfg.feature_dim; ++c) g.node_feat(v, c) = rng.next_double();
                break;
            case FeatureRule::constant:
                g.node_feat.row(v).setConstant(0.5);
                break;
            case FeatureRule::degree_one_hot: {
                g.node_feat.row(v).setZero();
                g.node_feat(v, std::min(degree[v], cfg.feature_dim - 1)) = 1.0;
                break;
            }
        }
    }
    if (confounder_type_out) *confounder_type_out = conf_type;
    return g;
}

inline Dataset generate(const GenConfig& cfg) {
    cfg.validate();
    const int n = cfg.n_graphs;
    const int n_train = static_cast<int>(std::llround(cfg.split_fractions[0] * n));
    const int n_val = static_cast<int>(std::llround(cfg.split_fractions[1] * n));
    Dataset ds;
    ds.num_classes = static_cast<int>(cfg.class_motifs.size());
    ds.feature_dim = cfg.feature_dim;
    ds.metadata = Json{{"generator", "rcgrl-synthgen"},
                       {"generator-version", 1},
                       {"bias", cfg.bias},
                       {"seed", cfg.seed},
                       {"config", cfg.to_json()}};
    ds.graphs.reserve(n);
    for (int i = 0; i < n; ++i) {
        const Split split = i < n_train ? Split::train : (i < n_train + n_val ? Split::val : Split::test);
        ds.graphs.push_back(generate_graph(cfg, i, split));
    }
    return ds;
}

// ---------------------------------------------------------------------------
// bias_report: (split, class, confounder_type) -> count. Relies on the
// generator's id convention ("g<index>-c<type>").
// ---------------------------------------------------------------------------

struct BiasReport {
    // counts[split][class][confounder_type]
    std::map<Split, std::vector<std::vector<long>>> counts;
    int num_classes = 0;
    int num_confounder_types = 0;

    long split_total(Split s) const {
        long t = 0;
        auto it = counts.find(s);
        if (it == counts.end()) return 0;
        for (const auto& row : it->second)
            for (long c : row) t += c;
        return t;
    }
};

inline int confounder_type_from_id(const std::string& id) {
    const auto pos = id.rfind("-c");
    if (pos == std::string::npos || pos + 2 >= id.size()) return -1;
    const char c = id[pos + 2];
    if (c < '0' || c > '9' || pos + 3 != id.size()) return -1;
    return c - '0';
}

inline BiasReport bias_report(const Dataset& ds) {
    if (!ds.metadata.contains("generator"))
        throw DataError("bias_report: dataset lacks generator metadata");
    BiasReport rep;
    rep.num_classes = ds.num_classes;
    rep.num_confounder_types = 3;
    for (Split s : {Split::train, Split::val, Split::test})
        rep.counts[s].assign(rep.num_classes, std::vector<long>(rep.num_confounder_types, 0));
    for (const auto& g : ds.graphs) {
        const int ct = confounder_type_from_id(g.id);
        if (ct < 0 || ct >= rep.num_confounder_types)
            throw DataError("bias_report: graph id '" + g.id +
                            "' does not carry a confounder-type tag");
        rep.counts[g.split][g.label][ct] += 1;
    }
    return rep;
}

inline std::string bias_report_csv(const BiasReport& rep) {
    std::string out = "split,class,confounder_type,count\n";
    for (const auto& [split, table] : rep.counts)
        for (int l = 0; l < rep.num_classes; ++l)
            for (int k = 0; k < rep.num_confounder_types; ++k)
                out += std::string(to_string(split)) + "," + std::to_string(l) + "," +
                       std::to_string(k) + "," + std::to_string(table[l][k]) + "\n";
    return out;
}

} // namespace rcgrl
