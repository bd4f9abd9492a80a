#pragma once

#include <cassert>
#include <cmath>
#include <functional>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace rcgrl::ad {

using Mat = Eigen::MatrixXd;

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Reverse-mode tape over dense matrices. Nodes are created in topological
// order by construction; backward() walks them in reverse. Gradients are
// only materialized for nodes reachable from a parameter leaf.
class Tape {
public:
    Var constant(Mat v) { return push(std::move(v), false, nullptr); }
    Var param(Mat v) { return push(std::move(v), true, nullptr); }

    const Mat& val(Var v) const { return nodes_[v.id].val; }

    // Zero matrix of the node's shape if no gradient reached it.
    Mat grad(Var v) const {
        const Node& n = nodes_[v.id];
        if (n.grad.size() == 0) return Mat::Zero(n.val.rows(), n.val.cols());
        return n.grad;
    }

    bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

    Var detach(Var a) { return constant(nodes_[a.id].val); }

    Var matmul(Var a, Var b) {
        Mat out = val(a) * val(b);
        return push(std::move(out), needs(a, b), [a, b](Tape& t, const Mat& g) {
            t.accum(a, g * t.val(b).transpose());
            t.accum(b, t.val(a).transpose() * g);
        });
    }

    Var add(Var a, Var b) {
        return push(val(a) + val(b), needs(a, b), [a, b](Tape& t, const Mat& g) {
            t.accum(a, g);
            t.accum(b, g);
        });
    }

    Var sub(Var a, Var b) {
        return push(val(a) - val(b), needs(a, b), [a, b](Tape& t, const Mat& g) {
            t.accum(a, g);
            t.accum(b, -g);
        });
    }

    Var cmul(Var a, Var b) {
        return push(val(a).cwiseProduct(val(b)), needs(a, b), [a, b](Tape& t, const Mat& g) {
            t.accum(a, g.cwiseProduct(t.val(b)));
            t.accum(b, g.cwiseProduct(t.val(a)));
        });
    }

    // a: n x k, r: 1 x k broadcast over rows
    Var add_rowvec(Var a, Var r) {
        Mat out = val(a);
        out.rowwise() += val(r).row(0);
        return push(std::move(out), needs(a, r), [a, r](Tape& t, const Mat& g) {
            t.accum(a, g);
            t.accum(r, g.colwise().sum());
        });
    }

    // a: n x k, s: n x 1; row i scaled by s(i)
    Var scale_rows(Var a, Var s) {
        Mat out = val(a).array().colwise() * val(s).col(0).array();
        return push(std::move(out), needs(a, s), [a, s](Tape& t, const Mat& g) {
            t.accum(a, g.array().colwise() * t.val(s).col(0).array());
            Mat gs = (g.cwiseProduct(t.val(a))).rowwise().sum();
            t.accum(s, gs);
        });
    }

    Var tanh_(Var a) {
        Mat out = val(a).array().tanh();
        Var r = push(std::move(out), needs(a), nullptr);
        nodes_[r.id].back = [a, r](Tape& t, const Mat& g) {
            t.accum(a, g.cwiseProduct((1.0 - t.val(r).array().square()).matrix()));
        };
        return r;
    }

    Var logistic(Var a) {
        Mat out = (1.0 / (1.0 + (-val(a).array()).exp())).matrix();
        Var r = push(std::move(out), needs(a), nullptr);
        nodes_[r.id].back = [a, r](Tape& t, const Mat& g) {
            const auto& y = t.val(r).array();
            t.accum(a, g.cwiseProduct((y * (1.0 - y)).matrix()));
        };
        return r;
    }

    Var abs_(Var a) {
        return push(val(a).cwiseAbs(), needs(a), [a](Tape& t, const Mat& g) {
            t.accum(a, g.cwiseProduct(t.val(a).array().sign().matrix()));
        });
    }

    Var add_scalar(Var a, double c) {
        return push((val(a).array() + c).matrix(), needs(a),
                    [a](Tape& t, const Mat& g) { t.accum(a, g); });
    }

    Var mul_scalar(Var a, double c) {
        return push(val(a) * c, needs(a),
                    [a, c](Tape& t, const Mat& g) { t.accum(a, g * c); });
    }

    Var gather_rows(Var a, std::vector<int> idx) {
        const Mat& v = val(a);
        Mat out(static_cast<int>(idx.size()), v.cols());
        for (size_t k = 0; k < idx.size(); ++k) out.row(static_cast<int>(k)) = v.row(idx[k]);
        return push(std::move(out), needs(a), [a, idx = std::move(idx)](Tape& t, const Mat& g) {
            Mat da = Mat::Zero(t.val(a).rows(), t.val(a).cols());
            for (size_t k = 0; k < idx.size(); ++k) da.row(idx[k]) += g.row(static_cast<int>(k));
            t.accum(a, da);
        });
    }

    // out(r, :) = sum of a rows k with idx[k] == r
    Var scatter_add_rows(Var a, std::vector<int> idx, int out_rows) {
        const Mat& v = val(a);
        Mat out = Mat::Zero(out_rows, v.cols());
        for (size_t k = 0; k < idx.size(); ++k) out.row(idx[k]) += v.row(static_cast<int>(k));
        return push(std::move(out), needs(a), [a, idx = std::move(idx)](Tape& t, const Mat& g) {
            Mat da(static_cast<int>(idx.size()), g.cols());
            for (size_t k = 0; k < idx.size(); ++k) da.row(static_cast<int>(k)) = g.row(idx[k]);
            t.accum(a, da);
        });
    }

    // out(s, :) = mean over rows with seg[k] == s; every segment must be non-empty
    Var segment_mean_rows(Var a, std::vector<int> seg, int n_seg) {
        const Mat& v = val(a);
        Mat out = Mat::Zero(n_seg, v.cols());
        std::vector<double> count(n_seg, 0.0);
        for (size_t k = 0; k < seg.size(); ++k) {
            out.row(seg[k]) += v.row(static_cast<int>(k));
            count[seg[k]] += 1.0;
        }
        for (int s = 0; s < n_seg; ++s)
            if (count[s] > 0) out.row(s) /= count[s];
        return push(std::move(out), needs(a),
                    [a, seg = std::move(seg), count = std::move(count)](Tape& t, const Mat& g) {
                        Mat da(static_cast<int>(seg.size()), g.cols());
                        for (size_t k = 0; k < seg.size(); ++k)
                            da.row(static_cast<int>(k)) = g.row(seg[k]) / count[seg[k]];
                        t.accum(a, da);
                    });
    }

    Var concat_cols(Var a, Var b) {
        Mat out(val(a).rows(), val(a).cols() + val(b).cols());
        out << val(a), val(b);
        return push(std::move(out), needs(a, b), [a, b](Tape& t, const Mat& g) {
            t.accum(a, g.leftCols(t.val(a).cols()));
            t.accum(b, g.rightCols(t.val(b).cols()));
        });
    }

    // Per-row cross entropy -log softmax(logits)[label]; returns n x 1.
    Var softmax_ce_rows(Var logits, std::vector<int> labels) {
        const Mat& l = val(logits);
        const int n = static_cast<int>(l.rows());
        Mat probs(n, l.cols());
        Mat out(n, 1);
        for (int i = 0; i < n; ++i) {
            const double m = l.row(i).maxCoeff();
            Eigen::ArrayXd e = (l.row(i).array() - m).exp();
            const double z = e.sum();
            probs.row(i) = (e / z).matrix();
            out(i, 0) = std::log(z) + m - l(i, labels[static_cast<size_t>(i)]);
        }
        Var r = push(std::move(out), needs(logits), nullptr);
        aux_[r.id] = std::move(probs);
        nodes_[r.id].back = [logits, labels = std::move(labels), r](Tape& t, const Mat& g) {
            const Mat& p = t.aux_.at(r.id);
            Mat dl = p;
            for (int i = 0; i < dl.rows(); ++i) {
                dl(i, labels[static_cast<size_t>(i)]) -= 1.0;
                dl.row(i) *= g(i, 0);
            }
            t.accum(logits, dl);
        };
        return r;
    }

    // Row-wise cosine similarity; returns n x 1. Zero-norm rows yield 0 with
    // zero gradient.
    Var cosine_rows(Var a, Var b) {
        const Mat& va = val(a);
        const Mat& vb = val(b);
        const int n = static_cast<int>(va.rows());
        Mat out(n, 1);
        for (int i = 0; i < n; ++i) {
            const double na = va.row(i).norm(), nb = vb.row(i).norm();
            out(i, 0) = (na < kZeroNorm || nb < kZeroNorm)
                            ? 0.0
                            : va.row(i).dot(vb.row(i)) / (na * nb);
        }
        Var r = push(std::move(out), needs(a, b), nullptr);
        nodes_[r.id].back = [a, b, r](Tape& t, const Mat& g) {
            const Mat& va = t.val(a);
            const Mat& vb = t.val(b);
            const Mat& s = t.val(r);
            Mat da = Mat::Zero(va.rows(), va.cols());
            Mat db = Mat::Zero(vb.rows(), vb.cols());
            for (int i = 0; i < va.rows(); ++i) {
                const double na = va.row(i).norm(), nb = vb.row(i).norm();
                if (na < kZeroNorm || nb < kZeroNorm) continue;
                da.row(i) = g(i, 0) * (vb.row(i) / (na * nb) - s(i, 0) * va.row(i) / (na * na));
                db.row(i) = g(i, 0) * (va.row(i) / (na * nb) - s(i, 0) * vb.row(i) / (nb * nb));
            }
            t.accum(a, da);
            t.accum(b, db);
        };
        return r;
    }

    // sum(a .* w) with constant weights; returns 1 x 1
    Var dot_const(Var a, Mat w) {
        Mat out(1, 1);
        out(0, 0) = val(a).cwiseProduct(w).sum();
        return push(std::move(out), needs(a), [a, w = std::move(w)](Tape& t, const Mat& g) {
            t.accum(a, g(0, 0) * w);
        });
    }

    Var mean_all(Var a) {
        Mat out(1, 1);
        out(0, 0) = val(a).mean();
        return push(std::move(out), needs(a), [a](Tape& t, const Mat& g) {
            const double n = static_cast<double>(t.val(a).size());
            t.accum(a, Mat::Constant(t.val(a).rows(), t.val(a).cols(), g(0, 0) / n));
        });
    }

    void backward(Var out) {
        assert(val(out).rows() == 1 && val(out).cols() == 1);
        for (auto& n : nodes_) n.grad.resize(0, 0);
        nodes_[out.id].grad = Mat::Ones(1, 1);
        for (int i = out.id; i >= 0; --i) {
            Node& n = nodes_[i];
            if (!n.requires_grad || !n.back || n.grad.size() == 0) continue;
            n.back(*this, n.grad);
        }
    }

    size_t size() const { return nodes_.size(); }

private:
    static constexpr double kZeroNorm = 1e-300;

    using BackFn = std::function<void(Tape&, const Mat&)>;

    struct Node {
        Mat val;
        Mat grad;
        BackFn back;
        bool requires_grad = false;
    };

    std::vector<Node> nodes_;
    std::unordered_map<int, Mat> aux_;

    bool needs(Var a) const { return nodes_[a.id].requires_grad; }
    bool needs(Var a, Var b) const { return needs(a) || needs(b); }

    Var push(Mat v, bool rg, BackFn back) {
        nodes_.push_back(Node{std::move(v), Mat(), rg ? std::move(back) : nullptr, rg});
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    void accum(Var v, const Mat& g) {
        Node& n = nodes_[v.id];
        if (!n.requires_grad) return;
        if (n.grad.size() == 0) n.grad = Mat::Zero(n.val.rows(), n.val.cols());
        n.grad += g;
    }
};

} // namespace rcgrl::ad
