#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mmpath/common.hpp"

// Minimal reverse-mode automatic differentiation on dense matrices.
// A Tape owns the computation graph; ops append nodes and return Var
// handles. backward() walks the tape once in reverse. The scalar type is
// a template parameter: training runs float, gradient checks run double
// through the identical code path.
namespace mmpath::ad {

template <class S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

template <class S>
using Arr = Eigen::Array<S, Eigen::Dynamic, Eigen::Dynamic>;

template <class S>
class Tape;

template <class S>
struct Var {
    Tape<S>* tape = nullptr;
    int idx = -1;

    const Mat<S>& val() const { return tape->value(idx); }
    Eigen::Index rows() const { return val().rows(); }
    Eigen::Index cols() const { return val().cols(); }
    S scalar() const { return val()(0, 0); }
};

template <class S>
class Tape {
public:
    struct Node {
        Mat<S> value;
        Mat<S> grad;
        std::function<void(Tape&)> backward; // empty for leaves
        bool requires_grad = false;
        bool grad_live = false;
    };

    Var<S> leaf(Mat<S> v, bool requires_grad = false) {
        nodes_.push_back({std::move(v), {}, {}, requires_grad, false});
        return {this, static_cast<int>(nodes_.size()) - 1};
    }

    Var<S> scalar_leaf(S v, bool requires_grad = false) {
        Mat<S> m(1, 1);
        m(0, 0) = v;
        return leaf(std::move(m), requires_grad);
    }

    // next_index()/push() split lets the backward closure capture the
    // output index before the node exists.
    int next_index() const { return static_cast<int>(nodes_.size()); }

    Var<S> push(Mat<S> v, bool requires_grad, std::function<void(Tape&)> bw) {
        nodes_.push_back({std::move(v), {}, std::move(bw), requires_grad, false});
        return {this, static_cast<int>(nodes_.size()) - 1};
    }

    Mat<S>& value(int i) { return nodes_[static_cast<size_t>(i)].value; }
    const Mat<S>& value(int i) const { return nodes_[static_cast<size_t>(i)].value; }

    bool requires_grad(int i) const { return nodes_[static_cast<size_t>(i)].requires_grad; }

    Mat<S>& grad(int i) {
        Node& n = nodes_[static_cast<size_t>(i)];
        if (!n.grad_live) {
            n.grad = Mat<S>::Zero(n.value.rows(), n.value.cols());
            n.grad_live = true;
        }
        return n.grad;
    }

    bool grad_live(int i) const { return nodes_[static_cast<size_t>(i)].grad_live; }

    template <class Expr>
    void accumulate(int i, const Expr& g) {
        if (!requires_grad(i)) return;
        grad(i) += g;
    }

    // Seeds d(root)/d(root) = 1 and propagates. root must be 1x1.
    void backward(Var<S> root) {
        if (root.val().rows() != 1 || root.val().cols() != 1) {
            throw DimensionError("backward root must be a scalar");
        }
        grad(root.idx)(0, 0) = S(1);
        for (int i = root.idx; i >= 0; --i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (n.grad_live && n.requires_grad && n.backward) n.backward(*this);
        }
    }

    size_t size() const { return nodes_.size(); }

private:
    std::vector<Node> nodes_;
};

namespace detail {

template <class S>
void check_same_shape(const Var<S>& a, const Var<S>& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw DimensionError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) +
                             "x" + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                             "x" + std::to_string(b.cols()) + ")");
    }
}

template <class S, class BwFactory>
Var<S> unary_op(Var<S> a, Mat<S> value, BwFactory&& make_bw) {
    Tape<S>& t = *a.tape;
    bool rq = t.requires_grad(a.idx);
    std::function<void(Tape<S>&)> bw;
    if (rq) bw = make_bw(t.next_index());
    return t.push(std::move(value), rq, std::move(bw));
}

template <class S, class BwFactory>
Var<S> binary_op(Var<S> a, Var<S> b, Mat<S> value, BwFactory&& make_bw) {
    Tape<S>& t = *a.tape;
    bool rq = t.requires_grad(a.idx) || t.requires_grad(b.idx);
    std::function<void(Tape<S>&)> bw;
    if (rq) bw = make_bw(t.next_index());
    return t.push(std::move(value), rq, std::move(bw));
}

} // namespace detail

// ---- arithmetic ----------------------------------------------------------

template <class S>
Var<S> add(Var<S> a, Var<S> b) {
    detail::check_same_shape(a, b, "add");
    int ai = a.idx, bi = b.idx;
    return detail::binary_op(a, b, Mat<S>(a.val() + b.val()), [=](int oi) {
        return [=](Tape<S>& t) {
            t.accumulate(ai, t.grad(oi));
            t.accumulate(bi, t.grad(oi));
        };
    });
}

template <class S>
Var<S> sub(Var<S> a, Var<S> b) {
    detail::check_same_shape(a, b, "sub");
    int ai = a.idx, bi = b.idx;
    return detail::binary_op(a, b, Mat<S>(a.val() - b.val()), [=](int oi) {
        return [=](Tape<S>& t) {
            t.accumulate(ai, t.grad(oi));
            t.accumulate(bi, -t.grad(oi));
        };
    });
}

// Elementwise product.
template <class S>
Var<S> mul(Var<S> a, Var<S> b) {
    detail::check_same_shape(a, b, "mul");
    int ai = a.idx, bi = b.idx;
    return detail::binary_op(a, b, Mat<S>(a.val().cwiseProduct(b.val())), [=](int oi) {
        return [=](Tape<S>& t) {
            t.accumulate(ai, t.grad(oi).cwiseProduct(t.value(bi)));
            t.accumulate(bi, t.grad(oi).cwiseProduct(t.value(ai)));
        };
    });
}

// Elementwise quotient.
template <class S>
Var<S> div(Var<S> a, Var<S> b) {
    detail::check_same_shape(a, b, "div");
    int ai = a.idx, bi = b.idx;
    return detail::binary_op(a, b, Mat<S>(a.val().cwiseQuotient(b.val())), [=](int oi) {
        return [=](Tape<S>& t) {
            const Mat<S>& bv = t.value(bi);
            t.accumulate(ai, t.grad(oi).cwiseQuotient(bv));
            t.accumulate(bi, -t.grad(oi).cwiseProduct(t.value(ai)).cwiseQuotient(bv.cwiseProduct(bv)));
        };
    });
}

// out = a * mul_c + add_c, elementwise.
template <class S>
Var<S> affine(Var<S> a, S mul_c, S add_c = S(0)) {
    int ai = a.idx;
    Mat<S> v = (a.val().array() * mul_c + add_c).matrix();
    return detail::unary_op(a, std::move(v), [=](int oi) {
        return [=](Tape<S>& t) { t.accumulate(ai, t.grad(oi) * mul_c); };
    });
}

template <class S>
Var<S> matmul(Var<S> a, Var<S> b) {
    if (a.cols() != b.rows()) throw DimensionError("matmul: inner dimensions differ");
    int ai = a.idx, bi = b.idx;
    return detail::binary_op(a, b, Mat<S>(a.val() * b.val()), [=](int oi) {
        return [=](Tape<S>& t) {
            t.accumulate(ai, t.grad(oi) * t.value(bi).transpose());
            t.accumulate(bi, t.value(ai).transpose() * t.grad(oi));
        };
    });
}

// out = a * b^T
template <class S>
Var<S> matmul_nt(Var<S> a, Var<S> b) {
    if (a.cols() != b.cols()) throw DimensionError("matmul_nt: inner dimensions differ");
    int ai = a.idx, bi = b.idx;
    return detail::binary_op(a, b, Mat<S>(a.val() * b.val().transpose()), [=](int oi) {
        return [=](Tape<S>& t) {
            t.accumulate(ai, t.grad(oi) * t.value(bi));
            t.accumulate(bi, t.grad(oi).transpose() * t.value(ai));
        };
    });
}

template <class S>
Var<S> transpose(Var<S> a) {
    int ai = a.idx;
    return detail::unary_op(a, Mat<S>(a.val().transpose()), [=](int oi) {
        return [=](Tape<S>& t) { t.accumulate(ai, t.grad(oi).transpose()); };
    });
}

// Broadcast-add a 1 x n row vector to every row of a.
template <class S>
Var<S> add_rowvec(Var<S> a, Var<S> v) {
    if (v.rows() != 1 || v.cols() != a.cols()) throw DimensionError("add_rowvec: bad vector shape");
    int ai = a.idx, vi = v.idx;
    Mat<S> out = a.val();
    out.rowwise() += v.val().row(0);
    return detail::binary_op(a, v, std::move(out), [=](int oi) {
        return [=](Tape<S>& t) {
            t.accumulate(ai, t.grad(oi));
            t.accumulate(vi, t.grad(oi).colwise().sum());
        };
    });
}

// Multiply every element by a learnable 1x1 scalar.
template <class S>
Var<S> scale_by(Var<S> a, Var<S> s) {
    if (s.rows() != 1 || s.cols() != 1) throw DimensionError("scale_by: scalar must be 1x1");
    int ai = a.idx, si = s.idx;
    return detail::binary_op(a, s, Mat<S>(a.val() * s.scalar()), [=](int oi) {
        return [=](Tape<S>& t) {
            t.accumulate(ai, t.grad(oi) * t.value(si)(0, 0));
            Mat<S> gs(1, 1);
            gs(0, 0) = t.grad(oi).cwiseProduct(t.value(ai)).sum();
            t.accumulate(si, gs);
        };
    });
}

// Elementwise product with a constant matrix (dropout masks, pad zeroing).
template <class S>
Var<S> cmul(Var<S> a, const Mat<S>& m) {
    if (m.rows() != a.rows() || m.cols() != a.cols()) throw DimensionError("cmul: shape mismatch");
    int ai = a.idx;
    Mat<S> value = a.val().cwiseProduct(m);
    Mat<S> mask = m;
    return detail::unary_op(a, std::move(value), [=, mask = std::move(mask)](int oi) {
        return [=](Tape<S>& t) { t.accumulate(ai, t.grad(oi).cwiseProduct(mask)); };
    });
}

// ---- elementwise nonlinearities ------------------------------------------

template <class S>
Var<S> relu(Var<S> a) {
    int ai = a.idx;
    return detail::unary_op(a, Mat<S>(a.val().cwiseMax(S(0))), [=](int oi) {
        return [=](Tape<S>& t) {
            Arr<S> gate = (t.value(ai).array() > S(0)).template cast<S>();
            t.accumulate(ai, (t.grad(oi).array() * gate).matrix());
        };
    });
}

template <class S>
Var<S> exp(Var<S> a) {
    int ai = a.idx;
    return detail::unary_op(a, Mat<S>(a.val().array().exp().matrix()), [=](int oi) {
        return [=](Tape<S>& t) { t.accumulate(ai, t.grad(oi).cwiseProduct(t.value(oi))); };
    });
}

template <class S>
Var<S> log(Var<S> a) {
    int ai = a.idx;
    return detail::unary_op(a, Mat<S>(a.val().array().log().matrix()), [=](int oi) {
        return [=](Tape<S>& t) { t.accumulate(ai, t.grad(oi).cwiseQuotient(t.value(ai))); };
    });
}

template <class S>
Var<S> sqrt(Var<S> a) {
    int ai = a.idx;
    return detail::unary_op(a, Mat<S>(a.val().array().sqrt().matrix()), [=](int oi) {
        return [=](Tape<S>& t) {
            t.accumulate(ai, (t.grad(oi).array() * S(0.5) / t.value(oi).array()).matrix());
        };
    });
}

// ---- reductions ----------------------------------------------------------

template <class S>
Var<S> sum_all(Var<S> a) {
    int ai = a.idx;
    Mat<S> v(1, 1);
    v(0, 0) = a.val().sum();
    return detail::unary_op(a, std::move(v), [=](int oi) {
        return [=](Tape<S>& t) {
            t.accumulate(ai, Mat<S>::Constant(t.value(ai).rows(), t.value(ai).cols(), t.grad(oi)(0, 0)));
        };
    });
}

// m x n -> m x 1 row sums.
template <class S>
Var<S> sum_cols(Var<S> a) {
    int ai = a.idx;
    return detail::unary_op(a, Mat<S>(a.val().rowwise().sum()), [=](int oi) {
        return [=](Tape<S>& t) {
            t.accumulate(ai, t.grad(oi) * Mat<S>::Ones(1, t.value(ai).cols()));
        };
    });
}

// m x n -> 1 x n column means.
template <class S>
Var<S> mean_rows(Var<S> a) {
    int ai = a.idx;
    S inv = S(1) / static_cast<S>(a.rows());
    return detail::unary_op(a, Mat<S>(a.val().colwise().mean()), [=](int oi) {
        return [=](Tape<S>& t) {
            t.accumulate(ai, (Mat<S>::Ones(t.value(ai).rows(), 1) * t.grad(oi)) * inv);
        };
    });
}

// ---- structure -----------------------------------------------------------

template <class S>
Var<S> gather_rows(Var<S> a, std::vector<int> rows) {
    for (int r : rows) {
        if (r < 0 || r >= a.rows()) throw DimensionError("gather_rows: index out of range");
    }
    int ai = a.idx;
    Mat<S> out(static_cast<Eigen::Index>(rows.size()), a.cols());
    for (size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = a.val().row(rows[i]);
    return detail::unary_op(a, std::move(out), [=, rows = std::move(rows)](int oi) {
        return [=](Tape<S>& t) {
            if (!t.requires_grad(ai)) return;
            Mat<S>& g = t.grad(ai);
            const Mat<S>& go = t.grad(oi);
            for (size_t i = 0; i < rows.size(); ++i) {
                g.row(rows[i]) += go.row(static_cast<Eigen::Index>(i));
            }
        };
    });
}

template <class S>
Var<S> slice_rows(Var<S> a, int start, int count) {
    if (start < 0 || count < 0 || start + count > a.rows()) throw DimensionError("slice_rows: bad range");
    int ai = a.idx;
    return detail::unary_op(a, Mat<S>(a.val().middleRows(start, count)), [=](int oi) {
        return [=](Tape<S>& t) {
            if (!t.requires_grad(ai)) return;
            t.grad(ai).middleRows(start, count) += t.grad(oi);
        };
    });
}

template <class S>
Var<S> slice_cols(Var<S> a, int start, int count) {
    if (start < 0 || count < 0 || start + count > a.cols()) throw DimensionError("slice_cols: bad range");
    int ai = a.idx;
    return detail::unary_op(a, Mat<S>(a.val().middleCols(start, count)), [=](int oi) {
        return [=](Tape<S>& t) {
            if (!t.requires_grad(ai)) return;
            t.grad(ai).middleCols(start, count) += t.grad(oi);
        };
    });
}

template <class S>
Var<S> concat_rows(const std::vector<Var<S>>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows: empty input");
    Tape<S>& t = *parts[0].tape;
    Eigen::Index total = 0, cols = parts[0].cols();
    bool rq = false;
    for (const auto& p : parts) {
        if (p.cols() != cols) throw DimensionError("concat_rows: column mismatch");
        total += p.rows();
        rq = rq || t.requires_grad(p.idx);
    }
    Mat<S> out(total, cols);
    Eigen::Index at = 0;
    std::vector<std::pair<int, std::pair<Eigen::Index, Eigen::Index>>> spans;
    for (const auto& p : parts) {
        out.middleRows(at, p.rows()) = p.val();
        spans.push_back({p.idx, {at, p.rows()}});
        at += p.rows();
    }
    std::function<void(Tape<S>&)> bw;
    if (rq) {
        int oi = t.next_index();
        bw = [oi, spans = std::move(spans)](Tape<S>& tp) {
            for (const auto& [idx, span] : spans) {
                if (!tp.requires_grad(idx)) continue;
                tp.grad(idx) += tp.grad(oi).middleRows(span.first, span.second);
            }
        };
    }
    return t.push(std::move(out), rq, std::move(bw));
}

template <class S>
Var<S> concat_cols(const std::vector<Var<S>>& parts) {
    if (parts.empty()) throw DimensionError("concat_cols: empty input");
    Tape<S>& t = *parts[0].tape;
    Eigen::Index total = 0, rows = parts[0].rows();
    bool rq = false;
    for (const auto& p : parts) {
        if (p.rows() != rows) throw DimensionError("concat_cols: row mismatch");
        total += p.cols();
        rq = rq || t.requires_grad(p.idx);
    }
    Mat<S> out(rows, total);
    Eigen::Index at = 0;
    std::vector<std::pair<int, std::pair<Eigen::Index, Eigen::Index>>> spans;
    for (const auto& p : parts) {
        out.middleCols(at, p.cols()) = p.val();
        spans.push_back({p.idx, {at, p.cols()}});
        at += p.cols();
    }
    std::function<void(Tape<S>&)> bw;
    if (rq) {
        int oi = t.next_index();
        bw = [oi, spans = std::move(spans)](Tape<S>& tp) {
            for (const auto& [idx, span] : spans) {
                if (!tp.requires_grad(idx)) continue;
                tp.grad(idx) += tp.grad(oi).middleCols(span.first, span.second);
            }
        };
    }
    return t.push(std::move(out), rq, std::move(bw));
}

// n x n -> n x 1 main diagonal.
template <class S>
Var<S> diag(Var<S> a) {
    if (a.rows() != a.cols()) throw DimensionError("diag: matrix must be square");
    int ai = a.idx;
    return detail::unary_op(a, Mat<S>(a.val().diagonal()), [=](int oi) {
        return [=](Tape<S>& t) {
            if (!t.requires_grad(ai)) return;
            t.grad(ai).diagonal() += t.grad(oi).col(0);
        };
    });
}

// ---- rowwise softmax family ----------------------------------------------

// Softmax over each row; columns where valid[j] == 0 get probability 0.
template <class S>
Var<S> softmax_rows(Var<S> a, const std::vector<uint8_t>& valid = {}) {
    if (!valid.empty() && static_cast<Eigen::Index>(valid.size()) != a.cols()) {
        throw DimensionError("softmax_rows: mask length mismatch");
    }
    Mat<S> y = a.val();
    const S neg_inf = -std::numeric_limits<S>::infinity();
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
        S mx = neg_inf;
        for (Eigen::Index j = 0; j < y.cols(); ++j) {
            if (!valid.empty() && !valid[static_cast<size_t>(j)]) continue;
            mx = std::max(mx, y(i, j));
        }
        S denom = S(0);
        for (Eigen::Index j = 0; j < y.cols(); ++j) {
            if (!valid.empty() && !valid[static_cast<size_t>(j)]) {
                y(i, j) = S(0);
            } else {
                y(i, j) = std::exp(y(i, j) - mx);
                denom += y(i, j);
            }
        }
        y.row(i) /= denom;
    }
    int ai = a.idx;
    return detail::unary_op(a, std::move(y), [=](int oi) {
        return [=](Tape<S>& t) {
            const Mat<S>& out = t.value(oi);
            const Mat<S>& go = t.grad(oi);
            Mat<S> gx(out.rows(), out.cols());
            for (Eigen::Index i = 0; i < out.rows(); ++i) {
                S dot = go.row(i).dot(out.row(i));
                gx.row(i) = out.row(i).array() * (go.row(i).array() - dot);
            }
            t.accumulate(ai, gx);
        };
    });
}

// m x n -> m x 1 of log(sum_j exp(a_ij)), numerically stable.
template <class S>
Var<S> logsumexp_rows(Var<S> a) {
    Mat<S> out(a.rows(), 1);
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        S mx = a.val().row(i).maxCoeff();
        out(i, 0) = mx + std::log((a.val().row(i).array() - mx).exp().sum());
    }
    int ai = a.idx;
    return detail::unary_op(a, std::move(out), [=](int oi) {
        return [=](Tape<S>& t) {
            const Mat<S>& x = t.value(ai);
            const Mat<S>& lse = t.value(oi);
            const Mat<S>& go = t.grad(oi);
            Mat<S> gx(x.rows(), x.cols());
            for (Eigen::Index i = 0; i < x.rows(); ++i) {
                gx.row(i) = go(i, 0) * (x.row(i).array() - lse(i, 0)).exp().matrix();
            }
            t.accumulate(ai, gx);
        };
    });
}

// Cross entropy per row: out_i = logsumexp(logits_i) - logits_i[target_i].
template <class S>
Var<S> cross_entropy_rows(Var<S> logits, std::vector<int> targets) {
    if (static_cast<Eigen::Index>(targets.size()) != logits.rows()) {
        throw DimensionError("cross_entropy_rows: one target per row required");
    }
    for (int tgt : targets) {
        if (tgt < 0 || tgt >= logits.cols()) throw DimensionError("cross_entropy_rows: target out of range");
    }
    Mat<S> out(logits.rows(), 1);
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        S mx = logits.val().row(i).maxCoeff();
        S lse = mx + std::log((logits.val().row(i).array() - mx).exp().sum());
        out(i, 0) = lse - logits.val()(i, targets[static_cast<size_t>(i)]);
    }
    int ai = logits.idx;
    return detail::unary_op(logits, std::move(out), [=, targets = std::move(targets)](int oi) {
        return [=](Tape<S>& t) {
            const Mat<S>& x = t.value(ai);
            const Mat<S>& go = t.grad(oi);
            Mat<S> gx(x.rows(), x.cols());
            for (Eigen::Index i = 0; i < x.rows(); ++i) {
                S mx = x.row(i).maxCoeff();
                Eigen::Array<S, 1, Eigen::Dynamic> ex = (x.row(i).array() - mx).exp();
                gx.row(i) = (ex / ex.sum()).matrix() * go(i, 0);
                gx(i, targets[static_cast<size_t>(i)]) -= go(i, 0);
            }
            t.accumulate(ai, gx);
        };
    });
}

// Pairwise Euclidean distances: out_ij = sqrt(||a_i - b_j||^2 + eps).
// eps keeps the derivative finite when a pair coincides.
template <class S>
Var<S> pairwise_dist(Var<S> a, Var<S> b, S eps) {
    if (a.cols() != b.cols()) throw DimensionError("pairwise_dist: dimension mismatch");
    Mat<S> out(a.rows(), b.rows());
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        for (Eigen::Index j = 0; j < b.rows(); ++j) {
            out(i, j) = std::sqrt((a.val().row(i) - b.val().row(j)).squaredNorm() + eps);
        }
    }
    int ai = a.idx, bi = b.idx;
    return detail::binary_op(a, b, std::move(out), [=](int oi) {
        return [=](Tape<S>& t) {
            const Mat<S>& av = t.value(ai);
            const Mat<S>& bv = t.value(bi);
            const Mat<S>& d = t.value(oi);
            const Mat<S>& go = t.grad(oi);
            for (Eigen::Index i = 0; i < av.rows(); ++i) {
                for (Eigen::Index j = 0; j < bv.rows(); ++j) {
                    if (go(i, j) == S(0)) continue;
                    Mat<S> dir = (av.row(i) - bv.row(j)) * (go(i, j) / d(i, j));
                    if (t.requires_grad(ai)) t.grad(ai).row(i) += dir;
                    if (t.requires_grad(bi)) t.grad(bi).row(j) -= dir;
                }
            }
        };
    });
}

// Row-wise layer normalization with learnable gain/bias (both 1 x n).
template <class S>
Var<S> layer_norm_rows(Var<S> x, Var<S> gain, Var<S> bias, S eps) {
    if (gain.rows() != 1 || gain.cols() != x.cols() || bias.rows() != 1 || bias.cols() != x.cols()) {
        throw DimensionError("layer_norm_rows: gain/bias must be 1 x cols");
    }
    Eigen::Index n = x.cols();
    Mat<S> xhat(x.rows(), n), out(x.rows(), n);
    std::vector<S> inv_std(static_cast<size_t>(x.rows()));
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        S mean = x.val().row(i).mean();
        S var = (x.val().row(i).array() - mean).square().mean();
        S is = S(1) / std::sqrt(var + eps);
        inv_std[static_cast<size_t>(i)] = is;
        xhat.row(i) = (x.val().row(i).array() - mean).matrix() * is;
        out.row(i) = xhat.row(i).cwiseProduct(gain.val().row(0)) + bias.val().row(0);
    }
    Tape<S>& t = *x.tape;
    bool rq = t.requires_grad(x.idx) || t.requires_grad(gain.idx) || t.requires_grad(bias.idx);
    int xi = x.idx, gi = gain.idx, bi2 = bias.idx;
    std::function<void(Tape<S>&)> bw;
    if (rq) {
        int oi = t.next_index();
        bw = [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<S>& tp) {
            const Mat<S>& go = tp.grad(oi);
            const Mat<S>& gv = tp.value(gi);
            Eigen::Index cols = go.cols();
            if (tp.requires_grad(gi)) {
                tp.grad(gi) += (go.cwiseProduct(xhat)).colwise().sum();
            }
            if (tp.requires_grad(bi2)) {
                tp.grad(bi2) += go.colwise().sum();
            }
            if (tp.requires_grad(xi)) {
                Mat<S> gx(go.rows(), cols);
                for (Eigen::Index i = 0; i < go.rows(); ++i) {
                    Mat<S> dxhat = go.row(i).cwiseProduct(gv.row(0));
                    S m1 = dxhat.mean();
                    S m2 = dxhat.cwiseProduct(xhat.row(i)).mean();
                    gx.row(i) = inv_std[static_cast<size_t>(i)] *
                                (dxhat.array() - m1 - xhat.row(i).array() * m2).matrix();
                }
                tp.accumulate(xi, gx);
            }
        };
    }
    return t.push(std::move(out), rq, std::move(bw));
}

} // namespace mmpath::ad
