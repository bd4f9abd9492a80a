#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "rcgrl/losses.hpp"

namespace rcgrl {

enum class TrainMode { rcgrl, erm };
enum class Alternation { per_epoch, per_batch };

inline const char* to_string(TrainMode m) { return m == TrainMode::rcgrl ? "rcgrl" : "erm"; }
inline const char* to_string(Alternation a) {
    return a == Alternation::per_epoch ? "per-epoch" : "per-batch";
}

inline TrainMode train_mode_from_string(const std::string& s) {
    if (s == "rcgrl") return TrainMode::rcgrl;
    if (s == "erm") return TrainMode::erm;
    throw ConfigError("unknown mode '" + s + "' (expected rcgrl|erm)");
}

inline Alternation alternation_from_string(const std::string& s) {
    if (s == "per-epoch") return Alternation::per_epoch;
    if (s == "per-batch") return Alternation::per_batch;
    throw ConfigError("unknown alternation '" + s + "' (expected per-epoch|per-batch)");
}

struct TrainConfig {
    TrainMode mode = TrainMode::rcgrl;
    int u = 2;
    double drop_fraction = 0.75;
    LossConfig loss;
    double lr = 1e-3;
    int batch_size = 32;
    int max_epochs = 300;
    int min_epochs_before_early_stop = 10;
    int patience = 5;
    std::uint64_t seed = 0;
    Alternation alternation = Alternation::per_epoch;
    bool full_batch = false;
    int hidden_width = 32;
    int num_layers = 4;
    int iv_hidden_width = 32;
    int scorer_hidden_width = 32;

    void validate() const {
        loss.validate();
        if (u < 0 || u > num_layers) throw ConfigError("TrainConfig: u outside [0,num_layers]");
        if (drop_fraction < 0.0 || drop_fraction > 1.0)
            throw ConfigError("TrainConfig: drop_fraction outside [0,1]");
        if (patience < 1) throw ConfigError("TrainConfig: patience must be >= 1");
        if (batch_size < 1) throw ConfigError("TrainConfig: batch_size must be >= 1");
        if (max_epochs < 1) throw ConfigError("TrainConfig: max_epochs must be >= 1");
        if (num_layers < 1) throw ConfigError("TrainConfig: num_layers must be >= 1");
        if (lr <= 0) throw ConfigError("TrainConfig: lr must be > 0");
    }

    Json to_json() const {
        return Json{{"mode", to_string(mode)},
                    {"u", u},
                    {"drop-fraction", drop_fraction},
                    {"gamma", loss.gamma},
                    {"sigma", loss.sigma},
                    {"lambda", loss.lambda_},
                    {"tau", loss.tau},
                    {"lr", lr},
                    {"batch-size", batch_size},
                    {"max-epochs", max_epochs},
                    {"min-epochs", min_epochs_before_early_stop},
                    {"patience", patience},
                    {"seed", seed},
                    {"alternation", to_string(alternation)},
                    {"full-batch", full_batch},
                    {"hidden-width", hidden_width},
                    {"num-layers", num_layers},
                    {"iv-hidden-width", iv_hidden_width},
                    {"scorer-hidden-width", scorer_hidden_width}};
    }

    static TrainConfig from_json(const Json& j) {
        TrainConfig c;
        if (j.contains("mode")) c.mode = train_mode_from_string(j["mode"].get<std::string>());
        c.u = j.value("u", c.u);
        c.drop_fraction = j.value("drop-fraction", c.drop_fraction);
        c.loss.gamma = j.value("gamma", c.loss.gamma);
        c.loss.sigma = j.value("sigma", c.loss.sigma);
        c.loss.lambda_ = j.value("lambda", c.loss.lambda_);
        c.loss.tau = j.value("tau", c.loss.tau);
        c.lr = j.value("lr", c.lr);
        c.batch_size = j.value("batch-size", c.batch_size);
        c.max_epochs = j.value("max-epochs", c.max_epochs);
        c.min_epochs_before_early_stop = j.value("min-epochs", c.min_epochs_before_early_stop);
        c.patience = j.value("patience", c.patience);
        c.seed = j.value("seed", c.seed);
        if (j.contains("alternation"))
            c.alternation = alternation_from_string(j["alternation"].get<std::string>());
        c.full_batch = j.value("full-batch", c.full_batch);
        c.hidden_width = j.value("hidden-width", c.hidden_width);
        c.num_layers = j.value("num-layers", c.num_layers);
        c.iv_hidden_width = j.value("iv-hidden-width", c.iv_hidden_width);
        c.scorer_hidden_width = j.value("scorer-hidden-width", c.scorer_hidden_width);
        return c;
    }
};

// ---------------------------------------------------------------------------
// Adam.
// ---------------------------------------------------------------------------

struct AdamState {
    std::vector<Mat> m, v;
    long t = 0;

    void init(const std::vector<Mat*>& params) {
        m.clear();
        v.clear();
        for (const Mat* p : params) {
            m.push_back(Mat::Zero(p->rows(), p->cols()));
            v.push_back(Mat::Zero(p->rows(), p->cols()));
        }
        t = 0;
    }
};

inline void adam_step(const std::vector<Mat*>& params, const std::vector<Mat>& grads,
                      AdamState& st, double lr, double beta1 = 0.9, double beta2 = 0.999,
                      double eps = 1e-8) {
    st.t += 1;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(st.t));
    for (size_t i = 0; i < params.size(); ++i) {
        st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * grads[i];
        st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * grads[i].cwiseProduct(grads[i]);
        const Mat mhat = st.m[i] / bc1;
        const Mat vhat = st.v[i] / bc2;
        *params[i] -= lr * (mhat.array() / (vhat.array().sqrt() + eps)).matrix();
    }
}

// ---------------------------------------------------------------------------
// Training state and epoch records.
// ---------------------------------------------------------------------------

struct TrainState {
    EncoderParams theta;
    IVGenParams phi;
    AdamState adam_theta, adam_phi;
    int epoch = 0;  // last completed epoch
    double best_val_acc = -1.0;
    int best_epoch = 0;
    EncoderParams best_theta;
    IVGenParams best_phi;
    std::uint64_t seed = 0;  // all streams derive statelessly from (seed, tag)
};

struct EpochRecord {
    int epoch = 0;
    std::string phase;  // theta | phi | both
    double loss_o = std::numeric_limits<double>::quiet_NaN();
    double loss_a = std::numeric_limits<double>::quiet_NaN();
    double loss_w = std::numeric_limits<double>::quiet_NaN();
    double m = std::numeric_limits<double>::quiet_NaN();
    double zeta = std::numeric_limits<double>::quiet_NaN();
    double train_acc = std::numeric_limits<double>::quiet_NaN();
    double val_acc = std::numeric_limits<double>::quiet_NaN();
};

inline std::string format_double(double v) {
    if (std::isnan(v)) return "";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string metrics_csv(const std::vector<EpochRecord>& history) {
    std::string out = "epoch,phase,split,loss_o,loss_a,loss_w,M,zeta,accuracy\n";
    for (const auto& r : history) {
        out += std::to_string(r.epoch) + "," + r.phase + ",train," + format_double(r.loss_o) +
               "," + format_double(r.loss_a) + "," + format_double(r.loss_w) + "," +
               format_double(r.m) + "," + format_double(r.zeta) + "," +
               format_double(r.train_acc) + "\n";
        out += std::to_string(r.epoch) + "," + r.phase + ",val,,,,,," +
               format_double(r.val_acc) + "\n";
    }
    return out;
}

// Accuracy through the mode's evaluation pipeline: removal active when phi is
// given, plain full-graph encoding otherwise.
inline double pipeline_accuracy(const EncoderParams& theta, const IVGenParams* phi,
                                const std::vector<const AttributedGraph*>& graphs,
                                const TrainConfig& cfg) {
    if (graphs.empty()) throw DataError("pipeline_accuracy: empty split");
    long correct = 0;
    const size_t chunk = 256;
    for (size_t at = 0; at < graphs.size(); at += chunk) {
        std::vector<const AttributedGraph*> part(
            graphs.begin() + static_cast<long>(at),
            graphs.begin() + static_cast<long>(std::min(at + chunk, graphs.size())));
        GraphBatch b = make_batch(part);
        EncodeOutput out;
        if (phi) {
            EdgeWeights z = compute_iv(*phi, b);
            Removal rm = remove_confounders(b, z, cfg.drop_fraction);
            out = encode(theta, b, rm, cfg.u);
        } else {
            out = encode(theta, b, std::nullopt, cfg.num_layers);
        }
        const auto preds = argmax_rows(out.logits);
        for (size_t i = 0; i < preds.size(); ++i)
            if (preds[i] == b.labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(graphs.size());
}

// ---------------------------------------------------------------------------
// Trainer: drives one epoch at a time so checkpoint/resume and the freeze
// contracts are directly testable.
// ---------------------------------------------------------------------------

class Trainer {
public:
    Trainer(const Dataset& ds, TrainConfig cfg) : Trainer(ds, cfg, init_state(ds, cfg)) {}

    Trainer(const Dataset& ds, TrainConfig cfg, TrainState st)
        : ds_(&ds), cfg_(std::move(cfg)), st_(std::move(st)) {
        cfg_.validate();
        train_ = ds.split_view(Split::train);
        val_ = ds.split_view(Split::val);
        if (train_.empty()) throw DataError("train: empty train split");
        if (val_.empty()) throw DataError("train: empty val split");
    }

    static TrainState init_state(const Dataset& ds, const TrainConfig& cfg) {
        cfg.validate();
        TrainState st;
        st.seed = cfg.seed;
        st.theta = make_encoder(ds.feature_dim, ds.num_classes, cfg.hidden_width, cfg.num_layers,
                                cfg.seed);
        st.phi = make_ivgen(ds.feature_dim, cfg.iv_hidden_width, cfg.scorer_hidden_width,
                            cfg.seed);
        st.adam_theta.init(tensors(st.theta));
        st.adam_phi.init(tensors(st.phi));
        st.best_theta = st.theta;
        st.best_phi = st.phi;
        return st;
    }

    EpochRecord run_epoch() {
        const int epoch = st_.epoch + 1;
        EpochRecord rec;
        rec.epoch = epoch;

        std::vector<size_t> order(train_.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        Rng shuffle_rng = derive_stream(st_.seed, 3000 + static_cast<std::uint64_t>(epoch));
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.below(i)]);

        const size_t bs = cfg_.full_batch ? train_.size() : static_cast<size_t>(cfg_.batch_size);
        double sum_o = 0, sum_a = 0, sum_w = 0, sum_m = 0, sum_zeta = 0;
        long n_o = 0, n_w = 0, correct = 0, seen = 0;
        int batch_index = 0;

        for (size_t at = 0; at < order.size(); at += bs, ++batch_index) {
            std::vector<const AttributedGraph*> part;
            for (size_t i = at; i < std::min(at + bs, order.size()); ++i)
                part.push_back(train_[order[i]]);
            GraphBatch b = make_batch(part);
            const long n = b.num_graphs;

            const Phase phase = phase_for(epoch, batch_index);
            std::vector<int> preds;
            if (phase == Phase::phi) {
                auto res = loss_robustness(st_.theta, st_.phi, b, cfg_.loss, cfg_.u,
                                           cfg_.drop_fraction);
                check_finite(res.loss_r, epoch, batch_index);
                adam_step(tensors(st_.phi), res.phi_grads, st_.adam_phi, cfg_.lr);
                sum_w += res.loss_w * n;
                sum_m += res.m * n;
                sum_zeta += res.zeta * n;
                n_w += n;
                preds = std::move(res.predictions);
            } else if (phase == Phase::theta && cfg_.mode == TrainMode::rcgrl) {
                auto res = loss_contrast_aux(st_.theta, st_.phi, b, cfg_.loss, cfg_.u,
                                             cfg_.drop_fraction);
                check_finite(res.loss_c, epoch, batch_index);
                adam_step(tensors(st_.theta), res.theta_grads, st_.adam_theta, cfg_.lr);
                sum_o += res.loss_o * n;
                sum_a += res.loss_a * n;
                n_o += n;
                preds = std::move(res.predictions);
            } else {  // erm
                auto res = loss_erm(st_.theta, b);
                check_finite(res.loss, epoch, batch_index);
                adam_step(tensors(st_.theta), res.theta_grads, st_.adam_theta, cfg_.lr);
                sum_o += res.loss * n;
                n_o += n;
                preds = std::move(res.predictions);
            }
            for (size_t i = 0; i < preds.size(); ++i)
                if (preds[i] == b.labels[i]) ++correct;
            seen += n;
        }

        rec.phase = phase_label(epoch);
        if (n_o > 0) rec.loss_o = sum_o / static_cast<double>(n_o);
        if (n_o > 0 && cfg_.mode == TrainMode::rcgrl) rec.loss_a = sum_a / static_cast<double>(n_o);
        if (n_w > 0) {
            rec.loss_w = sum_w / static_cast<double>(n_w);
            rec.m = sum_m / static_cast<double>(n_w);
            rec.zeta = sum_zeta / static_cast<double>(n_w);
        }
        rec.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
        rec.val_acc = pipeline_accuracy(st_.theta,
                                        cfg_.mode == TrainMode::rcgrl ? &st_.phi : nullptr, val_,
                                        cfg_);

        st_.epoch = epoch;
        if (rec.val_acc > st_.best_val_acc) {
            st_.best_val_acc = rec.val_acc;
            st_.best_epoch = epoch;
            st_.best_theta = st_.theta;
            st_.best_phi = st_.phi;
        }
        history_.push_back(rec);
        return rec;
    }

    bool should_stop() const {
        if (st_.epoch >= cfg_.max_epochs) return true;
        if (st_.epoch < cfg_.min_epochs_before_early_stop) return false;
        return st_.epoch - st_.best_epoch >= cfg_.patience;
    }

    const TrainState& state() const { return st_; }
    TrainState& mutable_state() { return st_; }
    const std::vector<EpochRecord>& history() const { return history_; }
    const TrainConfig& config() const { return cfg_; }

private:
    enum class Phase { theta, phi };

    Phase phase_for(int epoch, int batch_index) const {
        if (cfg_.mode == TrainMode::erm) return Phase::theta;
        if (cfg_.alternation == Alternation::per_batch)
            return batch_index % 2 == 0 ? Phase::phi : Phase::theta;
        return epoch % 2 == 1 ? Phase::phi : Phase::theta;  // odd epochs train phi
    }

    std::string phase_label(int epoch) const {
        if (cfg_.mode == TrainMode::erm) return "theta";
        if (cfg_.alternation == Alternation::per_batch) return "both";
        return epoch % 2 == 1 ? "phi" : "theta";
    }

    static void check_finite(double loss, int epoch, int batch) {
        if (!std::isfinite(loss))
            throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " batch " +
                               std::to_string(batch));
    }

    const Dataset* ds_;
    TrainConfig cfg_;
    TrainState st_;
    std::vector<const AttributedGraph*> train_, val_;
    std::vector<EpochRecord> history_;
};

struct TrainResult {
    TrainState state;  // theta/phi hold the best-val parameters
    std::vector<EpochRecord> history;
};

inline TrainResult train(const Dataset& ds, const TrainConfig& cfg) {
    Trainer tr(ds, cfg);
    while (!tr.should_stop()) tr.run_epoch();
    TrainResult res{tr.state(), tr.history()};
    res.state.theta = res.state.best_theta;
    res.state.phi = res.state.best_phi;
    return res;
}

// ---------------------------------------------------------------------------
// Checkpoint format: versioned JSON archive with parameters, optimizer
// moments, best-val snapshot and the data metadata needed to rebuild.
// ---------------------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

inline Json mat_to_json(const Mat& m) {
    Json rows = Json::array();
    for (int r = 0; r < m.rows(); ++r) {
        Json row = Json::array();
        for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return Json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(rows)}};
}

inline Mat mat_from_json(const Json& j) {
    const int rows = j.at("rows").get<int>();
    const int cols = j.at("cols").get<int>();
    Mat m(rows, cols);
    const Json& data = j.at("data");
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = data[r][c].get<double>();
    return m;
}

template <class Params>
Json params_to_json(const Params& p) {
    Params& mp = const_cast<Params&>(p);
    auto ts = tensors(mp);
    auto names = tensor_names(p);
    Json j;
    for (size_t i = 0; i < ts.size(); ++i) j[names[i]] = mat_to_json(*ts[i]);
    return j;
}

template <class Params>
void params_from_json(const Json& j, Params& p) {
    auto ts = tensors(p);
    auto names = tensor_names(p);
    for (size_t i = 0; i < ts.size(); ++i) *ts[i] = mat_from_json(j.at(names[i]));
}

inline Json adam_to_json(const AdamState& a) {
    Json m = Json::array(), v = Json::array();
    for (const auto& x : a.m) m.push_back(mat_to_json(x));
    for (const auto& x : a.v) v.push_back(mat_to_json(x));
    return Json{{"t", a.t}, {"m", std::move(m)}, {"v", std::move(v)}};
}

inline AdamState adam_from_json(const Json& j) {
    AdamState a;
    a.t = j.at("t").get<long>();
    for (const auto& x : j.at("m")) a.m.push_back(mat_from_json(x));
    for (const auto& x : j.at("v")) a.v.push_back(mat_from_json(x));
    return a;
}

struct Checkpoint {
    TrainState state;
    TrainConfig config;
    int feature_dim = 0;
    int num_classes = 0;
};

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    Json j;
    j["version"] = kCheckpointVersion;
    j["kind"] = "rcgrl-checkpoint";
    j["train_config"] = ck.config.to_json();
    j["feature_dim"] = ck.feature_dim;
    j["num_classes"] = ck.num_classes;
    j["theta"] = params_to_json(ck.state.theta);
    j["phi"] = params_to_json(ck.state.phi);
    j["trainer"] = Json{{"epoch", ck.state.epoch},
                        {"best_val_acc", ck.state.best_val_acc},
                        {"best_epoch", ck.state.best_epoch},
                        {"seed", ck.state.seed},
                        {"adam_theta", adam_to_json(ck.state.adam_theta)},
                        {"adam_phi", adam_to_json(ck.state.adam_phi)},
                        {"best_theta", params_to_json(ck.state.best_theta)},
                        {"best_phi", params_to_json(ck.state.best_phi)}};
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write checkpoint '" + path + "'");
    out << j.dump() << '\n';
    if (!out) throw DataError("write failed for checkpoint '" + path + "'");
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open checkpoint '" + path + "'");
    Json j;
    try {
        in >> j;
    } catch (const Json::exception& e) {
        throw DataError("checkpoint '" + path + "': invalid JSON (" + e.what() + ")");
    }
    const int version = j.value("version", -1);
    if (version != kCheckpointVersion)
        throw ConfigError("checkpoint '" + path + "': version " + std::to_string(version) +
                          " unsupported (expected " + std::to_string(kCheckpointVersion) + ")");
    Checkpoint ck;
    ck.config = TrainConfig::from_json(j.at("train_config"));
    ck.feature_dim = j.at("feature_dim").get<int>();
    ck.num_classes = j.at("num_classes").get<int>();
    ck.state.theta = make_encoder(ck.feature_dim, ck.num_classes, ck.config.hidden_width,
                                  ck.config.num_layers, 0);
    ck.state.phi = make_ivgen(ck.feature_dim, ck.config.iv_hidden_width,
                              ck.config.scorer_hidden_width, 0);
    ck.state.best_theta = ck.state.theta;
    ck.state.best_phi = ck.state.phi;
    params_from_json(j.at("theta"), ck.state.theta);
    params_from_json(j.at("phi"), ck.state.phi);
    const Json& tr = j.at("trainer");
    ck.state.epoch = tr.at("epoch").get<int>();
    ck.state.best_val_acc = tr.at("best_val_acc").get<double>();
    ck.state.best_epoch = tr.at("best_epoch").get<int>();
    ck.state.seed = tr.at("seed").get<std::uint64_t>();
    ck.state.adam_theta = adam_from_json(tr.at("adam_theta"));
    ck.state.adam_phi = adam_from_json(tr.at("adam_phi"));
    params_from_json(tr.at("best_theta"), ck.state.best_theta);
    params_from_json(tr.at("best_phi"), ck.state.best_phi);
    return ck;
}

} // namespace rcgrl
