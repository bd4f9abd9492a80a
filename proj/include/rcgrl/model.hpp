#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "rcgrl/graph.hpp"
#include "rcgrl/rng.hpp"
#include "rcgrl/tape.hpp"

namespace rcgrl {

// ---------------------------------------------------------------------------
// Engines. The same forward assembly runs either on plain matrices
// (ValueEngine, used for evaluation) or on the autodiff tape (TapeEngine,
// used for training). Both produce identical values; a test pins that.
// ---------------------------------------------------------------------------

struct ValueEngine {
    using V = Mat;

    V constant(Mat m) { return m; }
    V param(Mat m) { return m; }
    V detach(const V& a) { return a; }
    V matmul(const V& a, const V& b) { return a * b; }
    V add(const V& a, const V& b) { return a + b; }
    V sub(const V& a, const V& b) { return a - b; }
    V cmul(const V& a, const V& b) { return a.cwiseProduct(b); }
    V add_rowvec(const V& a, const V& r) {
        Mat out = a;
        out.rowwise() += r.row(0);
        return out;
    }
    V scale_rows(const V& a, const V& s) {
        return (a.array().colwise() * s.col(0).array()).matrix();
    }
    V tanh_(const V& a) { return a.array().tanh(); }
    V logistic(const V& a) { return (1.0 / (1.0 + (-a.array()).exp())).matrix(); }
    V abs_(const V& a) { return a.cwiseAbs(); }
    V add_scalar(const V& a, double c) { return (a.array() + c).matrix(); }
    V mul_scalar(const V& a, double c) { return a * c; }
    V gather_rows(const V& a, const std::vector<int>& idx) {
        Mat out(static_cast<int>(idx.size()), a.cols());
        for (size_t k = 0; k < idx.size(); ++k) out.row(static_cast<int>(k)) = a.row(idx[k]);
        return out;
    }
    V scatter_add_rows(const V& a, const std::vector<int>& idx, int out_rows) {
        Mat out = Mat::Zero(out_rows, a.cols());
        for (size_t k = 0; k < idx.size(); ++k) out.row(idx[k]) += a.row(static_cast<int>(k));
        return out;
    }
    V segment_mean_rows(const V& a, const std::vector<int>& seg, int n_seg) {
        Mat out = Mat::Zero(n_seg, a.cols());
        std::vector<double> count(n_seg, 0.0);
        for (size_t k = 0; k < seg.size(); ++k) {
            out.row(seg[k]) += a.row(static_cast<int>(k));
            count[seg[k]] += 1.0;
        }
        for (int s = 0; s < n_seg; ++s)
            if (count[s] > 0) out.row(s) /= count[s];
        return out;
    }
    V concat_cols(const V& a, const V& b) {
        Mat out(a.rows(), a.cols() + b.cols());
        out << a, b;
        return out;
    }
    V softmax_ce_rows(const V& l, const std::vector<int>& labels) {
        Mat out(l.rows(), 1);
        for (int i = 0; i < l.rows(); ++i) {
            const double m = l.row(i).maxCoeff();
            const double z = (l.row(i).array() - m).exp().sum();
            out(i, 0) = std::log(z) + m - l(i, labels[static_cast<size_t>(i)]);
        }
        return out;
    }
    V cosine_rows(const V& a, const V& b) {
        Mat out(a.rows(), 1);
        for (int i = 0; i < a.rows(); ++i) {
            const double na = a.row(i).norm(), nb = b.row(i).norm();
            out(i, 0) = (na < 1e-300 || nb < 1e-300) ? 0.0 : a.row(i).dot(b.row(i)) / (na * nb);
        }
        return out;
    }
    V dot_const(const V& a, const Mat& w) {
        Mat out(1, 1);
        out(0, 0) = a.cwiseProduct(w).sum();
        return out;
    }
    V mean_all(const V& a) {
        Mat out(1, 1);
        out(0, 0) = a.mean();
        return out;
    }
};

struct TapeEngine {
    ad::Tape& t;
    using V = ad::Var;

    V constant(Mat m) { return t.constant(std::move(m)); }
    V param(Mat m) { return t.param(std::move(m)); }
    V detach(V a) { return t.detach(a); }
    V matmul(V a, V b) { return t.matmul(a, b); }
    V add(V a, V b) { return t.add(a, b); }
    V sub(V a, V b) { return t.sub(a, b); }
    V cmul(V a, V b) { return t.cmul(a, b); }
    V add_rowvec(V a, V r) { return t.add_rowvec(a, r); }
    V scale_rows(V a, V s) { return t.scale_rows(a, s); }
    V tanh_(V a) { return t.tanh_(a); }
    V logistic(V a) { return t.logistic(a); }
    V abs_(V a) { return t.abs_(a); }
    V add_scalar(V a, double c) { return t.add_scalar(a, c); }
    V mul_scalar(V a, double c) { return t.mul_scalar(a, c); }
    V gather_rows(V a, const std::vector<int>& idx) { return t.gather_rows(a, idx); }
    V scatter_add_rows(V a, const std::vector<int>& idx, int out_rows) {
        return t.scatter_add_rows(a, idx, out_rows);
    }
    V segment_mean_rows(V a, const std::vector<int>& seg, int n_seg) {
        return t.segment_mean_rows(a, seg, n_seg);
    }
    V concat_cols(V a, V b) { return t.concat_cols(a, b); }
    V softmax_ce_rows(V l, const std::vector<int>& labels) { return t.softmax_ce_rows(l, labels); }
    V cosine_rows(V a, V b) { return t.cosine_rows(a, b); }
    V dot_const(V a, Mat w) { return t.dot_const(a, std::move(w)); }
    V mean_all(V a) { return t.mean_all(a); }
};

// ---------------------------------------------------------------------------
// Parameters. X (n x in) * W (in x out) + b (1 x out) convention throughout.
// ---------------------------------------------------------------------------

struct MpLayerParams {
    Mat agg_w, agg_b, com_w, com_b;

    int in_dim() const { return static_cast<int>(agg_w.rows()); }
    int out_dim() const { return static_cast<int>(agg_w.cols()); }
};

// theta: message-passing encoder plus classifier head
struct EncoderParams {
    std::vector<MpLayerParams> layers;
    Mat head_w, head_b;

    int num_layers() const { return static_cast<int>(layers.size()); }
    int feature_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
    int num_classes() const { return static_cast<int>(head_w.cols()); }
};

// phi: one embedding layer plus a two-layer edge scorer squashed into (0,1)
struct IVGenParams {
    MpLayerParams embed;
    Mat mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

inline Mat glorot_uniform(int rows, int cols, Rng& rng) {
    const double limit = std::sqrt(6.0 / (rows + cols));
    Mat m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = rng.uniform(-limit, limit);
    return m;
}

inline MpLayerParams make_mp_layer(int in, int out, Rng& rng) {
    MpLayerParams p;
    p.agg_w = glorot_uniform(in, out, rng);
    p.agg_b = Mat::Zero(1, out);
    p.com_w = glorot_uniform(in, out, rng);
    p.com_b = Mat::Zero(1, out);
    return p;
}

inline EncoderParams make_encoder(int feature_dim, int num_classes, int hidden, int num_layers,
                                  std::uint64_t seed) {
    EncoderParams th;
    for (int k = 0; k < num_layers; ++k) {
        Rng rng = derive_stream(seed, 1000 + static_cast<std::uint64_t>(k));
        th.layers.push_back(make_mp_layer(k == 0 ? feature_dim : hidden, hidden, rng));
    }
    Rng rng = derive_stream(seed, 1900);
    th.head_w = glorot_uniform(hidden, num_classes, rng);
    th.head_b = Mat::Zero(1, num_classes);
    return th;
}

inline IVGenParams make_ivgen(int feature_dim, int hidden, int scorer_hidden, std::uint64_t seed) {
    Rng r0 = derive_stream(seed, 2000);
    IVGenParams q;
    q.embed = make_mp_layer(feature_dim, hidden, r0);
    Rng r1 = derive_stream(seed, 2001);
    q.mlp_w1 = glorot_uniform(2 * hidden, scorer_hidden, r1);
    q.mlp_b1 = Mat::Zero(1, scorer_hidden);
    q.mlp_w2 = glorot_uniform(scorer_hidden, 1, r1);
    q.mlp_b2 = Mat::Zero(1, 1);
    return q;
}

// Stable flattening used by the optimizer, serialization and gradient checks.
inline std::vector<Mat*> tensors(EncoderParams& th) {
    std::vector<Mat*> out;
    for (auto& l : th.layers) {
        out.push_back(&l.agg_w);
        out.push_back(&l.agg_b);
        out.push_back(&l.com_w);
        out.push_back(&l.com_b);
    }
    out.push_back(&th.head_w);
    out.push_back(&th.head_b);
    return out;
}

inline std::vector<std::string> tensor_names(const EncoderParams& th) {
    std::vector<std::string> out;
    for (size_t k = 0; k < th.layers.size(); ++k) {
        const std::string p = "layer" + std::to_string(k) + ".";
        out.insert(out.end(), {p + "agg_w", p + "agg_b", p + "com_w", p + "com_b"});
    }
    out.push_back("head_w");
    out.push_back("head_b");
    return out;
}

inline std::vector<Mat*> tensors(IVGenParams& q) {
    return {&q.embed.agg_w, &q.embed.agg_b, &q.embed.com_w, &q.embed.com_b,
            &q.mlp_w1,      &q.mlp_b1,      &q.mlp_w2,      &q.mlp_b2};
}

inline std::vector<std::string> tensor_names(const IVGenParams&) {
    return {"embed.agg_w", "embed.agg_b", "embed.com_w", "embed.com_b",
            "mlp_w1",      "mlp_b1",      "mlp_w2",      "mlp_b2"};
}

// ---------------------------------------------------------------------------
// Engine-side parameter registration. Var layout mirrors tensors() order.
// ---------------------------------------------------------------------------

template <class V>
struct MpLayerVarsT {
    V agg_w, agg_b, com_w, com_b;
};

template <class V>
struct EncoderVarsT {
    std::vector<MpLayerVarsT<V>> layers;
    V head_w, head_b;
};

template <class V>
struct IVGenVarsT {
    MpLayerVarsT<V> embed;
    V mlp_w1, mlp_b1, mlp_w2, mlp_b2;
};

template <class Eng>
MpLayerVarsT<typename Eng::V> register_layer(Eng& E, const MpLayerParams& p, bool trainable) {
    auto reg = [&](const Mat& m) { return trainable ? E.param(m) : E.constant(m); };
    return {reg(p.agg_w), reg(p.agg_b), reg(p.com_w), reg(p.com_b)};
}

template <class Eng>
EncoderVarsT<typename Eng::V> register_encoder(Eng& E, const EncoderParams& th, bool trainable) {
    auto reg = [&](const Mat& m) { return trainable ? E.param(m) : E.constant(m); };
    EncoderVarsT<typename Eng::V> v;
    for (const auto& l : th.layers) v.layers.push_back(register_layer(E, l, trainable));
    v.head_w = reg(th.head_w);
    v.head_b = reg(th.head_b);
    return v;
}

template <class Eng>
IVGenVarsT<typename Eng::V> register_ivgen(Eng& E, const IVGenParams& q, bool trainable) {
    auto reg = [&](const Mat& m) { return trainable ? E.param(m) : E.constant(m); };
    IVGenVarsT<typename Eng::V> v;
    v.embed = register_layer(E, q.embed, trainable);
    v.mlp_w1 = reg(q.mlp_w1);
    v.mlp_b1 = reg(q.mlp_b1);
    v.mlp_w2 = reg(q.mlp_w2);
    v.mlp_b2 = reg(q.mlp_b2);
    return v;
}

inline std::vector<ad::Var> collect_vars(const EncoderVarsT<ad::Var>& v) {
    std::vector<ad::Var> out;
    for (const auto& l : v.layers) out.insert(out.end(), {l.agg_w, l.agg_b, l.com_w, l.com_b});
    out.push_back(v.head_w);
    out.push_back(v.head_b);
    return out;
}

inline std::vector<ad::Var> collect_vars(const IVGenVarsT<ad::Var>& v) {
    return {v.embed.agg_w, v.embed.agg_b, v.embed.com_w, v.embed.com_b,
            v.mlp_w1,      v.mlp_b1,      v.mlp_w2,      v.mlp_b2};
}

// ---------------------------------------------------------------------------
// Forward assembly shared by both engines.
// ---------------------------------------------------------------------------

// h'_v = tanh(com(h_v) + sum over incoming edges of scale_e * agg(h_src)).
template <class Eng>
typename Eng::V mp_layer_apply(Eng& E, const MpLayerVarsT<typename Eng::V>& L, typename Eng::V h,
                               const std::vector<int>& src, const std::vector<int>& dst,
                               const typename Eng::V* scale, int num_nodes) {
    auto self = E.add_rowvec(E.matmul(h, L.com_w), L.com_b);
    if (src.empty()) return E.tanh_(self);
    auto msg = E.add_rowvec(E.matmul(E.gather_rows(h, src), L.agg_w), L.agg_b);
    if (scale) msg = E.scale_rows(msg, *scale);
    auto agg = E.scatter_add_rows(msg, dst, num_nodes);
    return E.tanh_(E.add(self, agg));
}

inline void edge_endpoint_lists(const GraphBatch& b, std::vector<int>& src, std::vector<int>& dst) {
    src.resize(b.edge_index.size());
    dst.resize(b.edge_index.size());
    for (size_t e = 0; e < b.edge_index.size(); ++e) {
        src[e] = b.edge_index[e][0];
        dst[e] = b.edge_index[e][1];
    }
}

// Removal decision: which edges survive and the multiplicative scale the
// survivors carry into layers u+1..K. No trainable parameters.
struct Removal {
    std::vector<bool> kept;    // aligned with batch edge_index
    Eigen::VectorXd scale;     // aligned with batch edge_index; 0 where dropped
};

template <class V>
struct RemovalPlanT {
    std::vector<int> kept_src, kept_dst, kept_ids;
    V scale;  // |kept| x 1
};

// Builds the per-engine plan; `z` must be the (|E| x 1) edge-weight value the
// decision in `rm` was made from, so gradients reach phi through the scales.
template <class Eng>
RemovalPlanT<typename Eng::V> removal_plan(Eng& E, const GraphBatch& b, const Removal& rm,
                                           typename Eng::V z) {
    RemovalPlanT<typename Eng::V> plan;
    for (size_t e = 0; e < rm.kept.size(); ++e) {
        if (!rm.kept[e]) continue;
        plan.kept_src.push_back(b.edge_index[e][0]);
        plan.kept_dst.push_back(b.edge_index[e][1]);
        plan.kept_ids.push_back(static_cast<int>(e));
    }
    plan.scale = E.gather_rows(z, plan.kept_ids);
    return plan;
}

template <class Eng>
struct EncodedT {
    typename Eng::V representation;  // num_graphs x hidden
    typename Eng::V logits;          // num_graphs x num_classes
};

// Layers 1..u see the full graph with unit scale; layers u+1..K see only the
// surviving edges with messages scaled by the edge weight.
template <class Eng>
EncodedT<Eng> encode_impl(Eng& E, const EncoderVarsT<typename Eng::V>& th, const GraphBatch& b,
                          const RemovalPlanT<typename Eng::V>* rem, int u) {
    const int K = static_cast<int>(th.layers.size());
    if (u < 0 || u > K) throw ConfigError("encode: u must lie in [0," + std::to_string(K) + "]");
    std::vector<int> src_all, dst_all;
    edge_endpoint_lists(b, src_all, dst_all);
    auto h = E.constant(b.node_feat);
    for (int k = 0; k < K; ++k) {
        if (rem != nullptr && k >= u)
            h = mp_layer_apply(E, th.layers[k], h, rem->kept_src, rem->kept_dst, &rem->scale,
                               b.num_nodes());
        else
            h = mp_layer_apply(E, th.layers[k], h, src_all, dst_all, nullptr, b.num_nodes());
    }
    auto pooled = E.segment_mean_rows(h, b.graph_assignment, b.num_graphs);
    auto logits = E.add_rowvec(E.matmul(pooled, th.head_w), th.head_b);
    return {pooled, logits};
}

template <class Eng>
typename Eng::V compute_iv_impl(Eng& E, const IVGenVarsT<typename Eng::V>& q,
                                const GraphBatch& b) {
    std::vector<int> src_all, dst_all;
    edge_endpoint_lists(b, src_all, dst_all);
    auto h = mp_layer_apply(E, q.embed, E.constant(b.node_feat), src_all, dst_all, nullptr,
                            b.num_nodes());
    auto cat = E.concat_cols(E.gather_rows(h, src_all), E.gather_rows(h, dst_all));
    auto hid = E.tanh_(E.add_rowvec(E.matmul(cat, q.mlp_w1), q.mlp_b1));
    return E.logistic(E.add_rowvec(E.matmul(hid, q.mlp_w2), q.mlp_b2));  // |E| x 1
}

// ---------------------------------------------------------------------------
// Public value-semantics operations.
// ---------------------------------------------------------------------------

// Z_i: one weight per edge, each in (0,1).
struct EdgeWeights {
    Eigen::VectorXd weights;
};

struct EncodeOutput {
    Mat representation;
    Mat logits;
    std::optional<std::vector<bool>> kept_edge_mask;
};

// Single message-passing layer on explicit inputs (mostly for oracle tests).
inline Mat mp_layer(const Mat& h, const std::vector<std::array<int, 2>>& edge_index,
                    const Eigen::VectorXd* edge_scale, const MpLayerParams& layer) {
    if (h.cols() != layer.in_dim()) throw DataError("mp_layer: feature dimension mismatch");
    if (edge_scale && edge_scale->size() != static_cast<long>(edge_index.size()))
        throw DataError("mp_layer: edge_scale misaligned with edge_index");
    std::vector<int> src(edge_index.size()), dst(edge_index.size());
    for (size_t e = 0; e < edge_index.size(); ++e) {
        src[e] = edge_index[e][0];
        dst[e] = edge_index[e][1];
    }
    ValueEngine E;
    MpLayerVarsT<Mat> L{layer.agg_w, layer.agg_b, layer.com_w, layer.com_b};
    std::optional<Mat> scale;
    if (edge_scale) scale = Mat(*edge_scale);
    return mp_layer_apply(E, L, h, src, dst, scale ? &*scale : nullptr,
                          static_cast<int>(h.rows()));
}

inline EdgeWeights compute_iv(const IVGenParams& q, const GraphBatch& b) {
    if (b.node_feat.cols() != q.embed.in_dim())
        throw DataError("compute_iv: feature dimension mismatch");
    ValueEngine E;
    auto vars = register_ivgen(E, q, false);
    Mat z = compute_iv_impl(E, vars, b);
    return EdgeWeights{z.col(0)};
}

// Per graph, the floor(drop_fraction * |E_i|) lowest-weight edges are dropped;
// ties break toward the lower edge index. Survivors carry their weight as the
// message scale.
inline Removal remove_confounders(const GraphBatch& b, const EdgeWeights& z, double drop_fraction) {
    if (drop_fraction < 0.0 || drop_fraction > 1.0)
        throw ConfigError("remove_confounders: drop_fraction outside [0,1]");
    if (z.weights.size() != b.num_edges())
        throw DataError("remove_confounders: weight/edge misalignment");
    Removal rm;
    rm.kept.assign(b.edge_index.size(), true);
    rm.scale = z.weights;
    for (int gi = 0; gi < b.num_graphs; ++gi) {
        const auto [eb, ee] = b.edge_spans[gi];
        const int m = ee - eb;
        if (m == 0) continue;
        // +1e-9 keeps the count at the mathematical floor when p*m is an
        // integer that binary arithmetic lands just below
        const int k_drop = static_cast<int>(std::floor(drop_fraction * m + 1e-9));
        if (k_drop <= 0) continue;
        std::vector<int> order(m);
        std::iota(order.begin(), order.end(), eb);
        std::stable_sort(order.begin(), order.end(), [&](int a, int c) {
            return z.weights[a] < z.weights[c];
        });
        for (int j = 0; j < k_drop; ++j) {
            rm.kept[static_cast<size_t>(order[j])] = false;
            rm.scale[order[j]] = 0.0;
        }
    }
    return rm;
}

inline EncodeOutput encode(const EncoderParams& th, const GraphBatch& b,
                           const std::optional<Removal>& removal, int u) {
    ValueEngine E;
    auto vars = register_encoder(E, th, false);
    EncodeOutput out;
    if (removal) {
        Mat z = removal->scale;
        auto plan = removal_plan(E, b, *removal, Mat(z));
        auto enc = encode_impl(E, vars, b, &plan, u);
        out.representation = enc.representation;
        out.logits = enc.logits;
        out.kept_edge_mask = removal->kept;
    } else {
        auto enc = encode_impl(E, vars, b, nullptr, u);
        out.representation = enc.representation;
        out.logits = enc.logits;
    }
    return out;
}

// Argmax per row; ties resolve to the lowest class index.
inline std::vector<int> argmax_rows(const Mat& logits) {
    std::vector<int> out(static_cast<size_t>(logits.rows()));
    for (int i = 0; i < logits.rows(); ++i) {
        int best = 0;
        for (int c = 1; c < logits.cols(); ++c)
            if (logits(i, c) > logits(i, best)) best = c;
        out[static_cast<size_t>(i)] = best;
    }
    return out;
}

inline std::vector<int> predict(const EncoderParams& th, const GraphBatch& b) {
    return argmax_rows(encode(th, b, std::nullopt, th.num_layers()).logits);
}

} // namespace rcgrl
