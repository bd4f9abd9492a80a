#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "rcgrl/report.hpp"
#include "rcgrl/trainer.hpp"

namespace rcgrl {

struct MetricsRecord {
    double accuracy = 0.0;
    double mean_ce = 0.0;
    std::optional<double> roc_auc;                   // binary tasks only
    std::optional<double> kept_confounder_fraction;  // filled by confounder analyses
};

// Rank-statistic ROC-AUC; tied pairs count 0.5. Matches brute-force pair
// counting exactly (both numerators are sums of halves).
inline double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
    const size_t n = scores.size();
    if (n != labels.size() || n == 0) throw DataError("roc_auc: bad inputs");
    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });
    std::vector<double> rank(n, 0.0);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double mid = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
        for (size_t k = i; k <= j; ++k) rank[order[k]] = mid;
        i = j + 1;
    }
    double r_pos = 0.0;
    long p = 0;
    for (size_t k = 0; k < n; ++k)
        if (labels[k] == 1) {
            r_pos += rank[k];
            ++p;
        }
    const long neg = static_cast<long>(n) - p;
    if (p == 0 || neg == 0) throw DataError("roc_auc: needs both classes present");
    return (r_pos - static_cast<double>(p) * (static_cast<double>(p) + 1.0) / 2.0) /
           (static_cast<double>(p) * static_cast<double>(neg));
}

// Accuracy (and ROC-AUC for binary tasks) over one split, through the same
// pipeline the mode trains with.
inline MetricsRecord evaluate(const EncoderParams& theta, const IVGenParams* phi,
                              const Dataset& ds, Split split, const TrainConfig& cfg) {
    auto graphs = ds.split_view(split);
    if (graphs.empty()) throw DataError(std::string("evaluate: empty split ") + to_string(split));
    MetricsRecord rec;
    long correct = 0;
    double ce_sum = 0.0;
    std::vector<double> pos_scores;
    std::vector<int> bin_labels;
    const size_t chunk = 256;
    for (size_t at = 0; at < graphs.size(); at += chunk) {
        std::vector<const AttributedGraph*> part(
            graphs.begin() + static_cast<long>(at),
            graphs.begin() + static_cast<long>(std::min(at + chunk, graphs.size())));
        GraphBatch b = make_batch(part);
        EncodeOutput out;
        if (phi) {
            EdgeWeights z = compute_iv(*phi, b);
            out = encode(theta, b, remove_confounders(b, z, cfg.drop_fraction), cfg.u);
        } else {
            out = encode(theta, b, std::nullopt, cfg.num_layers);
        }
        const auto preds = argmax_rows(out.logits);
        for (int gi = 0; gi < b.num_graphs; ++gi) {
            if (preds[static_cast<size_t>(gi)] == b.labels[static_cast<size_t>(gi)]) ++correct;
            ce_sum += cross_entropy(out.logits.row(gi), b.labels[static_cast<size_t>(gi)]);
            if (ds.num_classes == 2) {
                // positive-class score: logit margin, rank-equivalent to p(1)
                pos_scores.push_back(out.logits(gi, 1) - out.logits(gi, 0));
                bin_labels.push_back(b.labels[static_cast<size_t>(gi)]);
            }
        }
    }
    rec.accuracy = static_cast<double>(correct) / static_cast<double>(graphs.size());
    rec.mean_ce = ce_sum / static_cast<double>(graphs.size());
    if (ds.num_classes == 2) rec.roc_auc = roc_auc(pos_scores, bin_labels);
    return rec;
}

// ---------------------------------------------------------------------------
// Confounder removal measured against the ground-truth causal mask.
// ---------------------------------------------------------------------------

struct ConfounderRatio {
    double kept_confounder_fraction = 0.0;  // non-causal edges surviving / non-causal edges
    double causal_recall = 0.0;             // causal edges surviving / causal edges
    double removal_precision = 0.0;         // non-causal among dropped / dropped
    long causal_total = 0, noncausal_total = 0, dropped_total = 0;
};

inline ConfounderRatio confounder_ratio(const IVGenParams& phi,
                                        const std::vector<const AttributedGraph*>& graphs,
                                        double drop_fraction) {
    if (graphs.empty()) throw DataError("confounder_ratio: empty graph list");
    long kept_nc = 0, nc = 0, kept_c = 0, c = 0, dropped = 0, dropped_nc = 0;
    const size_t chunk = 256;
    for (size_t at = 0; at < graphs.size(); at += chunk) {
        std::vector<const AttributedGraph*> part(
            graphs.begin() + static_cast<long>(at),
            graphs.begin() + static_cast<long>(std::min(at + chunk, graphs.size())));
        for (const auto* g : part)
            if (!g->causal_edge_mask)
                throw DataError("confounder_ratio: graph '" + g->id +
                                "' lacks a causal_edge_mask");
        GraphBatch b = make_batch(part);
        EdgeWeights z = compute_iv(phi, b);
        Removal rm = remove_confounders(b, z, drop_fraction);
        for (int gi = 0; gi < b.num_graphs; ++gi) {
            const auto [eb, ee] = b.edge_spans[gi];
            const auto& mask = *b.causal_masks[static_cast<size_t>(gi)];
            for (int e = eb; e < ee; ++e) {
                const bool causal = mask[static_cast<size_t>(e - eb)];
                const bool kept = rm.kept[static_cast<size_t>(e)];
                if (causal) {
                    ++c;
                    if (kept) ++kept_c;
                } else {
                    ++nc;
                    if (kept) ++kept_nc;
                }
                if (!kept) {
                    ++dropped;
                    if (!causal) ++dropped_nc;
                }
            }
        }
    }
    ConfounderRatio r;
    r.causal_total = c;
    r.noncausal_total = nc;
    r.dropped_total = dropped;
    r.kept_confounder_fraction = nc > 0 ? static_cast<double>(kept_nc) / nc : 0.0;
    r.causal_recall = c > 0 ? static_cast<double>(kept_c) / c : 0.0;
    r.removal_precision = dropped > 0 ? static_cast<double>(dropped_nc) / dropped : 0.0;
    return r;
}

inline std::string confounder_ratio_csv(const ConfounderRatio& r, double drop_fraction) {
    std::string out =
        "drop_fraction,kept_confounder_fraction,causal_recall,removal_precision,"
        "causal_edges,noncausal_edges,dropped_edges\n";
    out += format_double(drop_fraction) + "," + format_double(r.kept_confounder_fraction) + "," +
           format_double(r.causal_recall) + "," + format_double(r.removal_precision) + "," +
           std::to_string(r.causal_total) + "," + std::to_string(r.noncausal_total) + "," +
           std::to_string(r.dropped_total) + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// Granger-style greedy pruning diagnostic (label-peeking; existence proof for
// confounders, not a method). Removes one edge at a time while the true-label
// cross entropy strictly improves, up to search_budget edges per graph.
// ---------------------------------------------------------------------------

struct GrangerRow {
    std::string id;
    int label = 0;
    bool complete_correct = false, pruned_correct = false;
    double complete_ce = 0.0, pruned_ce = 0.0;
    int edges_removed = 0;
};

struct GrangerResult {
    double complete_accuracy = 0.0, pruned_accuracy = 0.0;
    std::vector<GrangerRow> rows;
};

namespace detail {

// Single-graph forward with an explicit keep-mask, unit scales, all layers.
inline Mat masked_logits(const EncoderParams& th, const GraphBatch& b,
                         const std::vector<bool>& keep) {
    ValueEngine E;
    auto vars = register_encoder(E, th, false);
    RemovalPlanT<Mat> plan;
    int n_kept = 0;
    for (size_t e = 0; e < keep.size(); ++e)
        if (keep[e]) {
            plan.kept_src.push_back(b.edge_index[e][0]);
            plan.kept_dst.push_back(b.edge_index[e][1]);
            plan.kept_ids.push_back(static_cast<int>(e));
            ++n_kept;
        }
    plan.scale = Mat::Ones(n_kept, 1);
    return encode_impl(E, vars, b, &plan, 0).logits;
}

} // namespace detail

inline GrangerResult granger_prune(const EncoderParams& theta,
                                   const std::vector<const AttributedGraph*>& graphs,
                                   int search_budget) {
    if (search_budget < 0) throw ConfigError("granger_prune: negative search budget");
    if (graphs.empty()) throw DataError("granger_prune: empty graph list");
    GrangerResult res;
    long complete_ok = 0, pruned_ok = 0;
    for (const auto* g : graphs) {
        GraphBatch b = make_batch(std::vector<const AttributedGraph*>{g});
        std::vector<bool> keep(b.edge_index.size(), true);
        Mat logits = detail::masked_logits(theta, b, keep);
        GrangerRow row;
        row.id = g->id;
        row.label = g->label;
        row.complete_ce = cross_entropy(logits.row(0), g->label);
        row.complete_correct = argmax_rows(logits)[0] == g->label;

        double cur_ce = row.complete_ce;
        for (int step = 0; step < search_budget; ++step) {
            int best_edge = -1;
            double best_ce = cur_ce;
            for (size_t e = 0; e < keep.size(); ++e) {
                if (!keep[e]) continue;
                keep[e] = false;
                const double ce = cross_entropy(
                    detail::masked_logits(theta, b, keep).row(0), g->label);
                keep[e] = true;
                if (ce < best_ce) {
                    best_ce = ce;
                    best_edge = static_cast<int>(e);
                }
            }
            if (best_edge < 0) break;  // no removal helps
            keep[static_cast<size_t>(best_edge)] = false;
            cur_ce = best_ce;
            ++row.edges_removed;
        }
        Mat pruned_logits = detail::masked_logits(theta, b, keep);
        row.pruned_ce = cur_ce;
        row.pruned_correct = argmax_rows(pruned_logits)[0] == g->label;
        if (row.complete_correct) ++complete_ok;
        if (row.pruned_correct) ++pruned_ok;
        res.rows.push_back(std::move(row));
    }
    res.complete_accuracy = static_cast<double>(complete_ok) / static_cast<double>(graphs.size());
    res.pruned_accuracy = static_cast<double>(pruned_ok) / static_cast<double>(graphs.size());
    return res;
}

inline std::string granger_csv(const GrangerResult& r) {
    std::string out = "id,label,complete_correct,pruned_correct,complete_ce,pruned_ce,"
                      "edges_removed\n";
    for (const auto& row : r.rows)
        out += row.id + "," + std::to_string(row.label) + "," +
               std::to_string(row.complete_correct ? 1 : 0) + "," +
               std::to_string(row.pruned_correct ? 1 : 0) + "," +
               format_double(row.complete_ce) + "," + format_double(row.pruned_ce) + "," +
               std::to_string(row.edges_removed) + "\n";
    out += "# complete_accuracy=" + format_double(r.complete_accuracy) +
           " pruned_accuracy=" + format_double(r.pruned_accuracy) + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// IV-position sweep: one full training run per u, shared seed.
// ---------------------------------------------------------------------------

struct SweepRow {
    int u = 0;
    double val_acc = 0.0;
    double test_acc = 0.0;
};

inline std::vector<SweepRow> sweep_u(const Dataset& ds, const TrainConfig& base_cfg,
                                     const std::vector<int>& u_values) {
    std::vector<SweepRow> rows;
    for (int u : u_values) {
        if (u < 0 || u > base_cfg.num_layers)
            throw ConfigError("sweep_u: u=" + std::to_string(u) + " outside [0," +
                              std::to_string(base_cfg.num_layers) + "]");
        TrainConfig cfg = base_cfg;
        cfg.u = u;
        TrainResult res = train(ds, cfg);
        SweepRow row;
        row.u = u;
        row.val_acc = res.state.best_val_acc;
        row.test_acc =
            evaluate(res.state.theta,
                     cfg.mode == TrainMode::rcgrl ? &res.state.phi : nullptr, ds, Split::test,
                     cfg)
                .accuracy;
        rows.push_back(row);
    }
    return rows;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::string out = "u,val_accuracy,test_accuracy\n";
    for (const auto& r : rows)
        out += std::to_string(r.u) + "," + format_double(r.val_acc) + "," +
               format_double(r.test_acc) + "\n";
    return out;
}

inline std::string sweep_svg(const std::vector<SweepRow>& rows) {
    std::vector<double> xs, ys;
    for (const auto& r : rows) {
        xs.push_back(r.u);
        ys.push_back(r.test_acc);
    }
    return svg_line_chart("test accuracy vs IV position", "u", "test accuracy", xs, ys);
}

} // namespace rcgrl
