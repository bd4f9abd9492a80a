#pragma once

#include <cmath>
#include <iostream>
#include <map>
#include <vector>

#include "rcgrl/model.hpp"

namespace rcgrl {

struct LossConfig {
    double gamma = 0.1;    // exponent on the emphasis weights w_i
    double sigma = 0.01;   // regularizer activation threshold
    double lambda_ = 1.0;  // contrastive weight
    double tau = 1000.0;   // regularizer scale
    double o_max = 1.0;    // cosine similarity bounds
    double o_min = -1.0;

    void validate() const {
        if (sigma <= 0) throw ConfigError("LossConfig: sigma must be > 0");
        if (tau <= 0) throw ConfigError("LossConfig: tau must be > 0");
        if (gamma < 0) throw ConfigError("LossConfig: gamma must be >= 0");
        if (o_min >= o_max) throw ConfigError("LossConfig: o_min must be < o_max");
    }
};

inline double cosine_sim(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
    const double na = a.norm(), nb = b.norm();
    if (na == 0.0 || nb == 0.0) {
        std::cerr << "cosine_sim: zero vector, similarity defined as 0\n";
        return 0.0;
    }
    return a.dot(b) / (na * nb);
}

// Per-batch class means. Treated as constants during differentiation.
struct ClassMeans {
    std::map<int, Eigen::RowVectorXd> t_per_class;
    Eigen::RowVectorXd t_bar;
};

inline ClassMeans compute_class_means(const Mat& reps, const std::vector<int>& labels) {
    if (reps.rows() == 0) throw DataError("compute_class_means: empty batch");
    ClassMeans m;
    std::map<int, int> count;
    for (size_t i = 0; i < labels.size(); ++i) {
        auto [it, fresh] = m.t_per_class.try_emplace(labels[i],
                                                     Eigen::RowVectorXd::Zero(reps.cols()));
        it->second += reps.row(static_cast<int>(i));
        count[labels[i]] += 1;
    }
    for (auto& [l, v] : m.t_per_class) v /= static_cast<double>(count[l]);
    m.t_bar = reps.colwise().mean();
    return m;
}

// w_i = |s(h_i, t_label) - O_max| on a correct prediction, |s - O_min| on a
// wrong one. Samples whose class mean is unavailable get the neutral 1.
inline Eigen::VectorXd sample_weights(const Mat& reps, const std::vector<int>& labels,
                                      const std::vector<int>& predictions, const ClassMeans& means,
                                      const LossConfig& cfg) {
    const int n = static_cast<int>(reps.rows());
    Eigen::VectorXd w(n);
    for (int i = 0; i < n; ++i) {
        auto it = means.t_per_class.find(labels[static_cast<size_t>(i)]);
        if (it == means.t_per_class.end()) {
            w[i] = 1.0;
            continue;
        }
        const double s = cosine_sim(reps.row(i).transpose(), it->second.transpose());
        const double target =
            predictions[static_cast<size_t>(i)] == labels[static_cast<size_t>(i)] ? cfg.o_max
                                                                                  : cfg.o_min;
        w[i] = std::abs(s - target);
    }
    return w;
}

// M = tau * mean_i |s(h_i, t_bar) - O_max|
inline double regularizer_M(const Mat& reps, const ClassMeans& means, const LossConfig& cfg) {
    if (reps.rows() == 0) throw DataError("regularizer_M: empty batch");
    double acc = 0.0;
    for (int i = 0; i < reps.rows(); ++i)
        acc += std::abs(cosine_sim(reps.row(i).transpose(), means.t_bar.transpose()) - cfg.o_max);
    return cfg.tau * acc / static_cast<double>(reps.rows());
}

inline double cross_entropy(const Eigen::RowVectorXd& logits, int label) {
    const double m = logits.maxCoeff();
    const double z = (logits.array() - m).exp().sum();
    return std::log(z) + m - logits[label];
}

// ---------------------------------------------------------------------------
// Robustness-emphasizing loss L_r = L_w + zeta * M (trains phi, theta frozen).
//
// The pieces the formulation treats as constants per step (removal decision,
// w_i, t_bar, zeta) are computed once at the base point and injected into the
// differentiable assembly. Finite-difference checks evaluate the same
// assembly against the same frozen auxiliaries.
// ---------------------------------------------------------------------------

struct RobustnessAux {
    EdgeWeights z;             // base-point weights the removal was decided from
    Removal removal;
    Eigen::VectorXd w;         // emphasis weights (constants)
    Eigen::RowVectorXd t_bar;  // detached batch mean
    int zeta = 0;
    double m_at_base = 0.0;
    std::vector<int> predictions;
};

inline RobustnessAux robustness_aux(const EncoderParams& theta, const IVGenParams& phi,
                                    const GraphBatch& b, const LossConfig& cfg, int u,
                                    double drop_fraction) {
    if (b.num_graphs == 0) throw DataError("loss_robustness: empty batch");
    RobustnessAux aux;
    aux.z = compute_iv(phi, b);
    aux.removal = remove_confounders(b, aux.z, drop_fraction);
    EncodeOutput out = encode(theta, b, aux.removal, u);
    aux.predictions = argmax_rows(out.logits);
    ClassMeans means = compute_class_means(out.representation, b.labels);
    aux.w = sample_weights(out.representation, b.labels, aux.predictions, means, cfg);
    aux.t_bar = means.t_bar;
    aux.m_at_base = regularizer_M(out.representation, means, cfg);
    aux.zeta = aux.m_at_base <= cfg.sigma ? -1 : 0;
    return aux;
}

template <class Eng>
struct RobustnessParts {
    typename Eng::V loss_r, loss_w, m;
};

template <class Eng>
RobustnessParts<Eng> robustness_objective(Eng& E, const EncoderVarsT<typename Eng::V>& theta,
                                          const IVGenVarsT<typename Eng::V>& phi,
                                          const GraphBatch& b, const RobustnessAux& aux,
                                          const LossConfig& cfg, int u) {
    const int n = b.num_graphs;
    auto z = compute_iv_impl(E, phi, b);
    auto plan = removal_plan(E, b, aux.removal, z);
    auto enc = encode_impl(E, theta, b, &plan, u);

    Mat wpow(n, 1);
    for (int i = 0; i < n; ++i)
        wpow(i, 0) = std::pow(aux.w[i], cfg.gamma) / static_cast<double>(n);
    auto ce = E.softmax_ce_rows(enc.logits, b.labels);
    auto loss_w = E.dot_const(ce, wpow);

    auto tbar = E.constant(aux.t_bar.replicate(n, 1));
    auto sim = E.cosine_rows(enc.representation, tbar);
    auto m = E.mul_scalar(E.mean_all(E.abs_(E.add_scalar(sim, -cfg.o_max))), cfg.tau);

    // zeta is a constant gate: when 0 the regularizer node stays disconnected
    // from the loss, so it contributes no gradient at all
    auto loss_r = aux.zeta != 0 ? E.add(loss_w, E.mul_scalar(m, static_cast<double>(aux.zeta)))
                                : loss_w;
    return {loss_r, loss_w, m};
}

struct RobustnessResult {
    double loss_r = 0, loss_w = 0, m = 0;
    int zeta = 0;
    std::vector<int> predictions;
    std::vector<Mat> phi_grads;  // aligned with tensors(phi); empty unless requested
};

inline RobustnessResult loss_robustness(const EncoderParams& theta_frozen, const IVGenParams& phi,
                                        const GraphBatch& b, const LossConfig& cfg, int u,
                                        double drop_fraction, bool want_grads = true) {
    RobustnessAux aux = robustness_aux(theta_frozen, phi, b, cfg, u, drop_fraction);
    ad::Tape tape;
    TapeEngine E{tape};
    auto th = register_encoder(E, theta_frozen, /*trainable=*/false);
    auto q = register_ivgen(E, phi, /*trainable=*/want_grads);
    auto parts = robustness_objective(E, th, q, b, aux, cfg, u);
    RobustnessResult res;
    res.loss_r = tape.val(parts.loss_r)(0, 0);
    res.loss_w = tape.val(parts.loss_w)(0, 0);
    res.m = tape.val(parts.m)(0, 0);
    res.zeta = aux.zeta;
    res.predictions = aux.predictions;
    if (want_grads) {
        tape.backward(parts.loss_r);
        for (ad::Var v : collect_vars(q)) res.phi_grads.push_back(tape.grad(v));
    }
    return res;
}

// Differentiable-surrogate value at (theta, phi) with auxiliaries frozen.
inline double robustness_value(const EncoderParams& theta, const IVGenParams& phi,
                               const GraphBatch& b, const RobustnessAux& aux,
                               const LossConfig& cfg, int u) {
    ValueEngine E;
    auto th = register_encoder(E, theta, false);
    auto q = register_ivgen(E, phi, false);
    return robustness_objective(E, th, q, b, aux, cfg, u).loss_r(0, 0);
}

// ---------------------------------------------------------------------------
// Contrast-auxiliary loss L_c = L_o + lambda * L_a (trains theta, phi frozen).
// The removal branch inside L_a is a constant snapshot taken with the current
// theta; gradient reaches theta only through the no-removal branch f'.
// ---------------------------------------------------------------------------

struct ContrastAux {
    EdgeWeights z;      // from frozen phi
    Removal removal;
    Mat snapshot_reps;  // pooled reps of the removal branch at theta-dot
};

inline ContrastAux contrast_aux(const EncoderParams& theta, const IVGenParams& phi_frozen,
                                const GraphBatch& b, int u, double drop_fraction) {
    if (b.num_graphs == 0) throw DataError("loss_contrast_aux: empty batch");
    ContrastAux aux;
    aux.z = compute_iv(phi_frozen, b);
    aux.removal = remove_confounders(b, aux.z, drop_fraction);
    aux.snapshot_reps = encode(theta, b, aux.removal, u).representation;
    return aux;
}

template <class Eng>
struct ContrastParts {
    typename Eng::V loss_c, loss_o, loss_a, logits_rm;
};

template <class Eng>
ContrastParts<Eng> contrast_objective(Eng& E, const EncoderVarsT<typename Eng::V>& theta,
                                      const GraphBatch& b, const ContrastAux& aux,
                                      const LossConfig& cfg, int u) {
    auto z = E.constant(Mat(aux.z.weights));
    auto plan = removal_plan(E, b, aux.removal, z);
    auto enc_rm = encode_impl(E, theta, b, &plan, u);
    auto loss_o = E.mean_all(E.softmax_ce_rows(enc_rm.logits, b.labels));

    auto enc_full = encode_impl(E, theta, b, nullptr, u);  // f': no removal module
    auto sim = E.cosine_rows(E.constant(aux.snapshot_reps), enc_full.representation);
    auto loss_a = E.mul_scalar(E.mean_all(sim), -1.0);

    auto loss_c = E.add(loss_o, E.mul_scalar(loss_a, cfg.lambda_));
    return {loss_c, loss_o, loss_a, enc_rm.logits};
}

struct ContrastResult {
    double loss_c = 0, loss_o = 0, loss_a = 0;
    std::vector<int> predictions;  // from the removal pipeline
    std::vector<Mat> theta_grads;  // aligned with tensors(theta)
};

inline ContrastResult loss_contrast_aux(const EncoderParams& theta, const IVGenParams& phi_frozen,
                                        const GraphBatch& b, const LossConfig& cfg, int u,
                                        double drop_fraction, bool want_grads = true) {
    ContrastAux aux = contrast_aux(theta, phi_frozen, b, u, drop_fraction);
    ad::Tape tape;
    TapeEngine E{tape};
    auto th = register_encoder(E, theta, /*trainable=*/want_grads);
    auto parts = contrast_objective(E, th, b, aux, cfg, u);
    ContrastResult res;
    res.loss_c = tape.val(parts.loss_c)(0, 0);
    res.loss_o = tape.val(parts.loss_o)(0, 0);
    res.loss_a = tape.val(parts.loss_a)(0, 0);
    res.predictions = argmax_rows(tape.val(parts.logits_rm));
    if (want_grads) {
        tape.backward(parts.loss_c);
        for (ad::Var v : collect_vars(th)) res.theta_grads.push_back(tape.grad(v));
    }
    return res;
}

inline double contrast_value(const EncoderParams& theta, const GraphBatch& b,
                             const ContrastAux& aux, const LossConfig& cfg, int u) {
    ValueEngine E;
    auto th = register_encoder(E, theta, false);
    return contrast_objective(E, th, b, aux, cfg, u).loss_c(0, 0);
}

// Plain ERM objective: mean cross entropy on full graphs, no q, no removal.
struct ErmResult {
    double loss = 0;
    std::vector<int> predictions;
    std::vector<Mat> theta_grads;
};

inline ErmResult loss_erm(const EncoderParams& theta, const GraphBatch& b,
                          bool want_grads = true) {
    if (b.num_graphs == 0) throw DataError("loss_erm: empty batch");
    ad::Tape tape;
    TapeEngine E{tape};
    auto th = register_encoder(E, theta, want_grads);
    auto enc = encode_impl(E, th, b, nullptr, static_cast<int>(theta.layers.size()));
    auto loss = E.mean_all(E.softmax_ce_rows(enc.logits, b.labels));
    ErmResult res;
    res.loss = tape.val(loss)(0, 0);
    res.predictions = argmax_rows(tape.val(enc.logits));
    if (want_grads) {
        tape.backward(loss);
        for (ad::Var v : collect_vars(th)) res.theta_grads.push_back(tape.grad(v));
    }
    return res;
}

} // namespace rcgrl
