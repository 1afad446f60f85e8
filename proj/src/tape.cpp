#include "ssnn/tape.hpp"

#include <cmath>

namespace ssnn::ad {

namespace {

void require_vector(const Tensor& t, const char* op) {
    if (t.rank() != 1) throw contract_error(std::string(op) + ": expected rank-1 tensor, got " + shape_str(t.shape()));
}
void require_matrix(const Tensor& t, const char* op) {
    if (t.rank() != 2) throw contract_error(std::string(op) + ": expected rank-2 tensor, got " + shape_str(t.shape()));
}

}  // namespace

Var Tape::constant(Tensor v) {
    Node n;
    n.op = Op::Const;
    n.val = std::move(v);
    return wrap(push(std::move(n)));
}

Var Tape::param(const ParamStore& store, int slot) {
    std::uint64_t key = (reinterpret_cast<std::uint64_t>(&store) << 16) ^ static_cast<std::uint64_t>(slot);
    auto it = param_cache_.find(key);
    if (it != param_cache_.end()) return wrap(it->second);
    Node n;
    n.op = Op::Param;
    n.val = store.value(slot);
    n.store = &store;
    n.slot = slot;
    int id = push(std::move(n));
    param_cache_[key] = id;
    return wrap(id);
}

Var Tape::add(Var a, Var b) {
    check_mine(a, "add");
    check_mine(b, "add");
    check_same_shape(at(a).val, at(b).val, "add");
    Node n;
    n.op = Op::Add;
    n.a = a.id;
    n.b = b.id;
    n.val = at(a).val;
    const Tensor& bv = at(b).val;
    for (std::int64_t i = 0; i < n.val.numel(); ++i) n.val[i] += bv[i];
    return wrap(push(std::move(n)));
}

Var Tape::sub(Var a, Var b) {
    check_mine(a, "sub");
    check_mine(b, "sub");
    check_same_shape(at(a).val, at(b).val, "sub");
    Node n;
    n.op = Op::Sub;
    n.a = a.id;
    n.b = b.id;
    n.val = at(a).val;
    const Tensor& bv = at(b).val;
    for (std::int64_t i = 0; i < n.val.numel(); ++i) n.val[i] -= bv[i];
    return wrap(push(std::move(n)));
}

Var Tape::mul(Var a, Var b) {
    check_mine(a, "mul");
    check_mine(b, "mul");
    check_same_shape(at(a).val, at(b).val, "mul");
    Node n;
    n.op = Op::Mul;
    n.a = a.id;
    n.b = b.id;
    n.val = at(a).val;
    const Tensor& bv = at(b).val;
    for (std::int64_t i = 0; i < n.val.numel(); ++i) n.val[i] *= bv[i];
    return wrap(push(std::move(n)));
}

Var Tape::neg(Var a) {
    check_mine(a, "neg");
    Node n;
    n.op = Op::Neg;
    n.a = a.id;
    n.val = at(a).val;
    for (std::int64_t i = 0; i < n.val.numel(); ++i) n.val[i] = -n.val[i];
    return wrap(push(std::move(n)));
}

Var Tape::scale(Var a, double c) {
    check_mine(a, "scale");
    Node n;
    n.op = Op::Scale;
    n.a = a.id;
    n.attr = c;
    n.val = at(a).val;
    for (std::int64_t i = 0; i < n.val.numel(); ++i) n.val[i] *= c;
    return wrap(push(std::move(n)));
}

Var Tape::mul_scalar(Var a, Var s) {
    check_mine(a, "mul_scalar");
    check_mine(s, "mul_scalar");
    if (at(s).val.numel() != 1)
        throw contract_error("mul_scalar: scalar operand has shape " + shape_str(at(s).val.shape()));
    Node n;
    n.op = Op::MulScalar;
    n.a = a.id;
    n.b = s.id;
    n.val = at(a).val;
    double sv = at(s).val[0];
    for (std::int64_t i = 0; i < n.val.numel(); ++i) n.val[i] *= sv;
    return wrap(push(std::move(n)));
}

Var Tape::recip(Var s) {
    check_mine(s, "recip");
    if (at(s).val.numel() != 1)
        throw contract_error("recip: expected scalar, got " + shape_str(at(s).val.shape()));
    Node n;
    n.op = Op::Recip;
    n.a = s.id;
    n.val = Tensor::scalar(1.0 / at(s).val[0]);
    return wrap(push(std::move(n)));
}

Var Tape::tanh(Var a) {
    check_mine(a, "tanh");
    Node n;
    n.op = Op::Tanh;
    n.a = a.id;
    n.val = at(a).val;
    for (std::int64_t i = 0; i < n.val.numel(); ++i) n.val[i] = std::tanh(n.val[i]);
    return wrap(push(std::move(n)));
}

Var Tape::sigmoid(Var a) {
    check_mine(a, "sigmoid");
    Node n;
    n.op = Op::Sigmoid;
    n.a = a.id;
    n.val = at(a).val;
    for (std::int64_t i = 0; i < n.val.numel(); ++i) {
        double x = n.val[i];
        n.val[i] = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    }
    return wrap(push(std::move(n)));
}

Var Tape::exp(Var a) {
    check_mine(a, "exp");
    Node n;
    n.op = Op::Exp;
    n.a = a.id;
    n.val = at(a).val;
    for (std::int64_t i = 0; i < n.val.numel(); ++i) n.val[i] = std::exp(n.val[i]);
    return wrap(push(std::move(n)));
}

Var Tape::log(Var a) {
    check_mine(a, "log");
    Node n;
    n.op = Op::Log;
    n.a = a.id;
    n.val = at(a).val;
    for (std::int64_t i = 0; i < n.val.numel(); ++i) n.val[i] = std::log(n.val[i]);
    return wrap(push(std::move(n)));
}

Var Tape::softmax(Var a) {
    check_mine(a, "softmax");
    Node n;
    n.op = Op::Softmax;
    n.a = a.id;
    n.val = at(a).val;
    softmax_inplace(n.val.data(), n.val.numel());
    return wrap(push(std::move(n)));
}

Var Tape::log_softmax(Var a) {
    check_mine(a, "log_softmax");
    Node n;
    n.op = Op::LogSoftmax;
    n.a = a.id;
    n.val = at(a).val;
    log_softmax_inplace(n.val.data(), n.val.numel());
    return wrap(push(std::move(n)));
}

Var Tape::log_softmax_rows(Var a) {
    check_mine(a, "log_softmax_rows");
    require_matrix(at(a).val, "log_softmax_rows");
    Node n;
    n.op = Op::LogSoftmaxRows;
    n.a = a.id;
    n.val = at(a).val;
    int rows = n.val.dim(0), cols = n.val.dim(1);
    for (int r = 0; r < rows; ++r) log_softmax_inplace(n.val.data() + static_cast<std::int64_t>(r) * cols, cols);
    return wrap(push(std::move(n)));
}

Var Tape::logsumexp(Var a) {
    check_mine(a, "logsumexp");
    Node n;
    n.op = Op::LogSumExp;
    n.a = a.id;
    n.val = Tensor::scalar(log_sum_exp(at(a).val.data(), at(a).val.numel()));
    return wrap(push(std::move(n)));
}

Var Tape::sum(Var a) {
    check_mine(a, "sum");
    Node n;
    n.op = Op::Sum;
    n.a = a.id;
    double s = 0.0;
    for (std::int64_t i = 0; i < at(a).val.numel(); ++i) s += at(a).val[i];
    n.val = Tensor::scalar(s);
    return wrap(push(std::move(n)));
}

Var Tape::dot(Var a, Var b) {
    check_mine(a, "dot");
    check_mine(b, "dot");
    check_same_shape(at(a).val, at(b).val, "dot");
    Node n;
    n.op = Op::Dot;
    n.a = a.id;
    n.b = b.id;
    double s = 0.0;
    const Tensor& av = at(a).val;
    const Tensor& bv = at(b).val;
    for (std::int64_t i = 0; i < av.numel(); ++i) s += av[i] * bv[i];
    n.val = Tensor::scalar(s);
    return wrap(push(std::move(n)));
}

Var Tape::matvec(Var w, Var x) {
    check_mine(w, "matvec");
    check_mine(x, "matvec");
    const Tensor& W = at(w).val;
    const Tensor& X = at(x).val;
    require_matrix(W, "matvec");
    require_vector(X, "matvec");
    if (W.dim(1) != X.dim(0))
        throw contract_error("matvec: shape mismatch " + shape_str(W.shape()) + " vs " + shape_str(X.shape()));
    int r = W.dim(0), c = W.dim(1);
    Node n;
    n.op = Op::MatVec;
    n.a = w.id;
    n.b = x.id;
    n.val = Tensor(Shape{r});
    for (int i = 0; i < r; ++i) {
        double s = 0.0;
        const double* row = W.data() + static_cast<std::int64_t>(i) * c;
        for (int j = 0; j < c; ++j) s += row[j] * X[j];
        n.val[i] = s;
    }
    return wrap(push(std::move(n)));
}

Var Tape::mat_t_vec(Var w, Var y) {
    check_mine(w, "mat_t_vec");
    check_mine(y, "mat_t_vec");
    const Tensor& W = at(w).val;
    const Tensor& Y = at(y).val;
    require_matrix(W, "mat_t_vec");
    require_vector(Y, "mat_t_vec");
    if (W.dim(0) != Y.dim(0))
        throw contract_error("mat_t_vec: shape mismatch " + shape_str(W.shape()) + " vs " + shape_str(Y.shape()));
    int r = W.dim(0), c = W.dim(1);
    Node n;
    n.op = Op::MatTVec;
    n.a = w.id;
    n.b = y.id;
    n.val = Tensor(Shape{c});
    for (int i = 0; i < r; ++i) {
        const double* row = W.data() + static_cast<std::int64_t>(i) * c;
        for (int j = 0; j < c; ++j) n.val[j] += row[j] * Y[i];
    }
    return wrap(push(std::move(n)));
}

Var Tape::outer_add(Var a, Var b) {
    check_mine(a, "outer_add");
    check_mine(b, "outer_add");
    const Tensor& A = at(a).val;
    const Tensor& B = at(b).val;
    require_vector(A, "outer_add");
    require_vector(B, "outer_add");
    int na = A.dim(0), nb = B.dim(0);
    Node n;
    n.op = Op::OuterAdd;
    n.a = a.id;
    n.b = b.id;
    n.val = Tensor(Shape{na * nb});
    for (int i = 0; i < na; ++i)
        for (int j = 0; j < nb; ++j) n.val[static_cast<std::int64_t>(i) * nb + j] = A[i] + B[j];
    return wrap(push(std::move(n)));
}

Var Tape::concat(Var a, Var b) {
    check_mine(a, "concat");
    check_mine(b, "concat");
    const Tensor& A = at(a).val;
    const Tensor& B = at(b).val;
    require_vector(A, "concat");
    require_vector(B, "concat");
    Node n;
    n.op = Op::Concat;
    n.a = a.id;
    n.b = b.id;
    n.val = Tensor(Shape{A.dim(0) + B.dim(0)});
    for (int i = 0; i < A.dim(0); ++i) n.val[i] = A[i];
    for (int i = 0; i < B.dim(0); ++i) n.val[A.dim(0) + i] = B[i];
    return wrap(push(std::move(n)));
}

Var Tape::slice(Var a, int start, int len) {
    check_mine(a, "slice");
    const Tensor& A = at(a).val;
    require_vector(A, "slice");
    if (start < 0 || len <= 0 || start + len > A.dim(0))
        throw contract_error("slice: range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                             ") out of " + shape_str(A.shape()));
    Node n;
    n.op = Op::Slice;
    n.a = a.id;
    n.i0 = start;
    n.i1 = len;
    n.val = Tensor(Shape{len});
    for (int i = 0; i < len; ++i) n.val[i] = A[start + i];
    return wrap(push(std::move(n)));
}

Var Tape::pick(Var a, int index) {
    check_mine(a, "pick");
    const Tensor& A = at(a).val;
    if (index < 0 || index >= A.numel())
        throw contract_error("pick: index " + std::to_string(index) + " out of " + shape_str(A.shape()));
    Node n;
    n.op = Op::Pick;
    n.a = a.id;
    n.i0 = index;
    n.val = Tensor::scalar(A[index]);
    return wrap(push(std::move(n)));
}

Var Tape::reshape(Var a, Shape shape) {
    check_mine(a, "reshape");
    if (shape_numel(shape) != at(a).val.numel())
        throw contract_error("reshape: " + shape_str(at(a).val.shape()) + " -> " + shape_str(shape) +
                             " changes element count");
    Node n;
    n.op = Op::Reshape;
    n.a = a.id;
    n.val = Tensor(std::move(shape), at(a).val.vec());
    return wrap(push(std::move(n)));
}

namespace {
// -1 unless w is exactly one-hot.
int one_hot_index(const Tensor& w) {
    int idx = -1;
    for (std::int64_t i = 0; i < w.numel(); ++i) {
        if (w[i] == 1.0) {
            if (idx >= 0) return -1;
            idx = static_cast<int>(i);
        } else if (w[i] != 0.0) {
            return -1;
        }
    }
    return idx;
}
}  // namespace

Var Tape::mix_rows(Var bank, Var w) {
    check_mine(bank, "mix_rows");
    check_mine(w, "mix_rows");
    const Tensor& B = at(bank).val;
    const Tensor& W = at(w).val;
    require_vector(W, "mix_rows");
    if (B.rank() < 2 || B.dim(0) != W.dim(0))
        throw contract_error("mix_rows: bank " + shape_str(B.shape()) + " vs weights " + shape_str(W.shape()));
    Shape out_shape(B.shape().begin() + 1, B.shape().end());
    std::int64_t stride = shape_numel(out_shape);
    Node n;
    n.op = Op::MixRows;
    n.a = bank.id;
    n.b = w.id;
    n.val = Tensor(out_shape);
    int hot = one_hot_index(W);
    if (hot >= 0) {
        const double* src = B.data() + hot * stride;
        for (std::int64_t i = 0; i < stride; ++i) n.val[i] = src[i];
    } else {
        for (int k = 0; k < W.dim(0); ++k) {
            double wk = W[k];
            if (wk == 0.0) continue;
            const double* src = B.data() + k * stride;
            for (std::int64_t i = 0; i < stride; ++i) n.val[i] += wk * src[i];
        }
    }
    return wrap(push(std::move(n)));
}

Var Tape::bank_matvec(Var bank, Var w, Var x) {
    check_mine(bank, "bank_matvec");
    check_mine(w, "bank_matvec");
    check_mine(x, "bank_matvec");
    const Tensor& B = at(bank).val;
    const Tensor& W = at(w).val;
    const Tensor& X = at(x).val;
    require_vector(W, "bank_matvec");
    require_vector(X, "bank_matvec");
    if (B.rank() != 3 || B.dim(0) != W.dim(0) || B.dim(2) != X.dim(0))
        throw contract_error("bank_matvec: bank " + shape_str(B.shape()) + " weights " + shape_str(W.shape()) +
                             " x " + shape_str(X.shape()));
    int K = B.dim(0), r = B.dim(1), c = B.dim(2);
    Node n;
    n.op = Op::BankMatVec;
    n.a = bank.id;
    n.b = w.id;
    n.c = x.id;
    n.val = Tensor(Shape{r});
    for (int k = 0; k < K; ++k) {
        double wk = W[k];
        if (wk == 0.0) continue;
        const double* M = B.data() + static_cast<std::int64_t>(k) * r * c;
        for (int i = 0; i < r; ++i) {
            double s = 0.0;
            const double* row = M + static_cast<std::int64_t>(i) * c;
            for (int j = 0; j < c; ++j) s += row[j] * X[j];
            n.val[i] += wk * s;
        }
    }
    return wrap(push(std::move(n)));
}

Var Tape::straight_through(Var y, int hard_index) {
    check_mine(y, "straight_through");
    const Tensor& Y = at(y).val;
    require_vector(Y, "straight_through");
    if (hard_index < 0 || hard_index >= Y.dim(0))
        throw contract_error("straight_through: index " + std::to_string(hard_index) + " out of " +
                             shape_str(Y.shape()));
    Node n;
    n.op = Op::StraightThrough;
    n.a = y.id;
    n.i0 = hard_index;
    n.val = Tensor(Shape{Y.dim(0)});
    n.val[hard_index] = 1.0;
    return wrap(push(std::move(n)));
}

Tensor& Tape::grab_adj(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.touched) {
        n.adj = Tensor(n.val.shape());
        n.touched = true;
    }
    return n.adj;
}

void Tape::backward(Var loss) {
    check_mine(loss, "backward");
    if (at(loss).val.numel() != 1)
        throw contract_error("backward: loss must be scalar, got " + shape_str(at(loss).val.shape()));
    for (Node& n : nodes_) {
        n.touched = false;
        n.adj = Tensor();
    }
    grab_adj(loss.id)[0] = 1.0;
    for (int id = loss.id; id >= 0; --id) {
        if (!nodes_[static_cast<size_t>(id)].touched) continue;
        backprop_node(id);
    }
    ran_backward_ = true;
}

void Tape::backprop_node(int id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    const Tensor& u = n.adj;  // upstream adjoint
    switch (n.op) {
        case Op::Const:
        case Op::Param:
            break;
        case Op::Add: {
            Tensor& ga = grab_adj(n.a);
            Tensor& gb = grab_adj(n.b);
            for (std::int64_t i = 0; i < u.numel(); ++i) {
                ga[i] += u[i];
                gb[i] += u[i];
            }
            break;
        }
        case Op::Sub: {
            Tensor& ga = grab_adj(n.a);
            Tensor& gb = grab_adj(n.b);
            for (std::int64_t i = 0; i < u.numel(); ++i) {
                ga[i] += u[i];
                gb[i] -= u[i];
            }
            break;
        }
        case Op::Mul: {
            const Tensor& av = nodes_[static_cast<size_t>(n.a)].val;
            const Tensor& bv = nodes_[static_cast<size_t>(n.b)].val;
            Tensor& ga = grab_adj(n.a);
            Tensor& gb = grab_adj(n.b);
            for (std::int64_t i = 0; i < u.numel(); ++i) {
                ga[i] += u[i] * bv[i];
                gb[i] += u[i] * av[i];
            }
            break;
        }
        case Op::Neg: {
            Tensor& ga = grab_adj(n.a);
            for (std::int64_t i = 0; i < u.numel(); ++i) ga[i] -= u[i];
            break;
        }
        case Op::Scale: {
            Tensor& ga = grab_adj(n.a);
            for (std::int64_t i = 0; i < u.numel(); ++i) ga[i] += n.attr * u[i];
            break;
        }
        case Op::MulScalar: {
            const Tensor& av = nodes_[static_cast<size_t>(n.a)].val;
            double sv = nodes_[static_cast<size_t>(n.b)].val[0];
            Tensor& ga = grab_adj(n.a);
            Tensor& gs = grab_adj(n.b);
            for (std::int64_t i = 0; i < u.numel(); ++i) {
                ga[i] += sv * u[i];
                gs[0] += av[i] * u[i];
            }
            break;
        }
        case Op::Recip: {
            double sv = nodes_[static_cast<size_t>(n.a)].val[0];
            grab_adj(n.a)[0] -= u[0] / (sv * sv);
            break;
        }
        case Op::Tanh: {
            Tensor& ga = grab_adj(n.a);
            for (std::int64_t i = 0; i < u.numel(); ++i) ga[i] += (1.0 - n.val[i] * n.val[i]) * u[i];
            break;
        }
        case Op::Sigmoid: {
            Tensor& ga = grab_adj(n.a);
            for (std::int64_t i = 0; i < u.numel(); ++i) ga[i] += n.val[i] * (1.0 - n.val[i]) * u[i];
            break;
        }
        case Op::Exp: {
            Tensor& ga = grab_adj(n.a);
            for (std::int64_t i = 0; i < u.numel(); ++i) ga[i] += n.val[i] * u[i];
            break;
        }
        case Op::Log: {
            const Tensor& av = nodes_[static_cast<size_t>(n.a)].val;
            Tensor& ga = grab_adj(n.a);
            for (std::int64_t i = 0; i < u.numel(); ++i) ga[i] += u[i] / av[i];
            break;
        }
        case Op::Softmax: {
            // dL/dx = (u - <u, s>) * s
            Tensor& ga = grab_adj(n.a);
            double us = 0.0;
            for (std::int64_t i = 0; i < u.numel(); ++i) us += u[i] * n.val[i];
            for (std::int64_t i = 0; i < u.numel(); ++i) ga[i] += (u[i] - us) * n.val[i];
            break;
        }
        case Op::LogSoftmax: {
            // dL/dx = u - softmax(x) * sum(u)
            Tensor& ga = grab_adj(n.a);
            double su = 0.0;
            for (std::int64_t i = 0; i < u.numel(); ++i) su += u[i];
            for (std::int64_t i = 0; i < u.numel(); ++i) ga[i] += u[i] - std::exp(n.val[i]) * su;
            break;
        }
        case Op::LogSoftmaxRows: {
            Tensor& ga = grab_adj(n.a);
            int rows = n.val.dim(0), cols = n.val.dim(1);
            for (int r = 0; r < rows; ++r) {
                std::int64_t off = static_cast<std::int64_t>(r) * cols;
                double su = 0.0;
                for (int j = 0; j < cols; ++j) su += u[off + j];
                for (int j = 0; j < cols; ++j) ga[off + j] += u[off + j] - std::exp(n.val[off + j]) * su;
            }
            break;
        }
        case Op::LogSumExp: {
            const Tensor& av = nodes_[static_cast<size_t>(n.a)].val;
            Tensor& ga = grab_adj(n.a);
            for (std::int64_t i = 0; i < av.numel(); ++i) ga[i] += std::exp(av[i] - n.val[0]) * u[0];
            break;
        }
        case Op::Sum: {
            Tensor& ga = grab_adj(n.a);
            for (std::int64_t i = 0; i < ga.numel(); ++i) ga[i] += u[0];
            break;
        }
        case Op::Dot: {
            const Tensor& av = nodes_[static_cast<size_t>(n.a)].val;
            const Tensor& bv = nodes_[static_cast<size_t>(n.b)].val;
            Tensor& ga = grab_adj(n.a);
            Tensor& gb = grab_adj(n.b);
            for (std::int64_t i = 0; i < av.numel(); ++i) {
                ga[i] += bv[i] * u[0];
                gb[i] += av[i] * u[0];
            }
            break;
        }
        case Op::MatVec: {
            const Tensor& W = nodes_[static_cast<size_t>(n.a)].val;
            const Tensor& X = nodes_[static_cast<size_t>(n.b)].val;
            Tensor& gw = grab_adj(n.a);
            Tensor& gx = grab_adj(n.b);
            int r = W.dim(0), c = W.dim(1);
            for (int i = 0; i < r; ++i) {
                double ui = u[i];
                const double* row = W.data() + static_cast<std::int64_t>(i) * c;
                double* grow = gw.data() + static_cast<std::int64_t>(i) * c;
                for (int j = 0; j < c; ++j) {
                    grow[j] += ui * X[j];
                    gx[j] += ui * row[j];
                }
            }
            break;
        }
        case Op::MatTVec: {
            const Tensor& W = nodes_[static_cast<size_t>(n.a)].val;
            const Tensor& Y = nodes_[static_cast<size_t>(n.b)].val;
            Tensor& gw = grab_adj(n.a);
            Tensor& gy = grab_adj(n.b);
            int r = W.dim(0), c = W.dim(1);
            for (int i = 0; i < r; ++i) {
                const double* row = W.data() + static_cast<std::int64_t>(i) * c;
                double* grow = gw.data() + static_cast<std::int64_t>(i) * c;
                double acc = 0.0;
                for (int j = 0; j < c; ++j) {
                    grow[j] += Y[i] * u[j];
                    acc += row[j] * u[j];
                }
                gy[i] += acc;
            }
            break;
        }
        case Op::OuterAdd: {
            const Tensor& A = nodes_[static_cast<size_t>(n.a)].val;
            const Tensor& B = nodes_[static_cast<size_t>(n.b)].val;
            Tensor& ga = grab_adj(n.a);
            Tensor& gb = grab_adj(n.b);
            int na = A.dim(0), nb = B.dim(0);
            for (int i = 0; i < na; ++i)
                for (int j = 0; j < nb; ++j) {
                    double ui = u[static_cast<std::int64_t>(i) * nb + j];
                    ga[i] += ui;
                    gb[j] += ui;
                }
            break;
        }
        case Op::Concat: {
            const Tensor& A = nodes_[static_cast<size_t>(n.a)].val;
            Tensor& ga = grab_adj(n.a);
            Tensor& gb = grab_adj(n.b);
            int na = A.dim(0);
            for (int i = 0; i < na; ++i) ga[i] += u[i];
            for (std::int64_t i = 0; i < gb.numel(); ++i) gb[i] += u[na + i];
            break;
        }
        case Op::Slice: {
            Tensor& ga = grab_adj(n.a);
            for (int i = 0; i < n.i1; ++i) ga[n.i0 + i] += u[i];
            break;
        }
        case Op::Pick: {
            grab_adj(n.a)[n.i0] += u[0];
            break;
        }
        case Op::Reshape: {
            Tensor& ga = grab_adj(n.a);
            for (std::int64_t i = 0; i < u.numel(); ++i) ga[i] += u[i];
            break;
        }
        case Op::MixRows: {
            const Tensor& B = nodes_[static_cast<size_t>(n.a)].val;
            const Tensor& W = nodes_[static_cast<size_t>(n.b)].val;
            Tensor& gb = grab_adj(n.a);
            Tensor& gw = grab_adj(n.b);
            std::int64_t stride = u.numel();
            for (int k = 0; k < W.dim(0); ++k) {
                const double* src = B.data() + k * stride;
                double* gdst = gb.data() + k * stride;
                double wk = W[k];
                double acc = 0.0;
                for (std::int64_t i = 0; i < stride; ++i) {
                    gdst[i] += wk * u[i];
                    acc += src[i] * u[i];
                }
                gw[k] += acc;
            }
            break;
        }
        case Op::BankMatVec: {
            const Tensor& B = nodes_[static_cast<size_t>(n.a)].val;
            const Tensor& W = nodes_[static_cast<size_t>(n.b)].val;
            const Tensor& X = nodes_[static_cast<size_t>(n.c)].val;
            Tensor& gbank = grab_adj(n.a);
            Tensor& gw = grab_adj(n.b);
            Tensor& gx = grab_adj(n.c);
            int K = B.dim(0), r = B.dim(1), c = B.dim(2);
            for (int k = 0; k < K; ++k) {
                const double* M = B.data() + static_cast<std::int64_t>(k) * r * c;
                double* gM = gbank.data() + static_cast<std::int64_t>(k) * r * c;
                double wk = W[k];
                double acc = 0.0;
                for (int i = 0; i < r; ++i) {
                    const double* row = M + static_cast<std::int64_t>(i) * c;
                    double* grow = gM + static_cast<std::int64_t>(i) * c;
                    double ui = u[i];
                    double rowx = 0.0;
                    for (int j = 0; j < c; ++j) {
                        rowx += row[j] * X[j];
                        if (wk != 0.0) {
                            grow[j] += wk * ui * X[j];
                            gx[j] += wk * ui * row[j];
                        }
                    }
                    acc += ui * rowx;
                }
                gw[k] += acc;
            }
            break;
        }
        case Op::StraightThrough: {
            Tensor& ga = grab_adj(n.a);
            for (std::int64_t i = 0; i < u.numel(); ++i) ga[i] += u[i];
            break;
        }
    }
}

Tensor Tape::adjoint(Var v) const {
    check_mine(v, "adjoint");
    const Node& n = at(v);
    return n.touched ? n.adj : Tensor(n.val.shape());
}

Gradients Tape::gradient(Var loss, const ParamStore& store) {
    backward(loss);
    return collect(store);
}

Gradients Tape::collect(const ParamStore& store) const {
    if (!ran_backward_) throw contract_error("collect: backward() has not been run");
    Gradients g;
    g.store = &store;
    g.tensors.reserve(static_cast<size_t>(store.size()));
    for (int i = 0; i < store.size(); ++i) g.tensors.push_back(Tensor(store.value(i).shape()));
    for (const Node& n : nodes_) {
        if (n.op != Op::Param || n.store != &store || !n.touched) continue;
        Tensor& dst = g.tensors[static_cast<size_t>(n.slot)];
        for (std::int64_t i = 0; i < dst.numel(); ++i) dst[i] += n.adj[i];
    }
    return g;
}

void Tape::clear() {
    nodes_.clear();
    param_cache_.clear();
    ran_backward_ = false;
}

}  // namespace ssnn::ad
