#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "ssnn/param_store.hpp"
#include "ssnn/tensor.hpp"

namespace ssnn::ad {

enum class Op : std::uint8_t {
    Const,
    Param,
    Add,
    Sub,
    Mul,
    Neg,
    Scale,       // x * c (compile-time double attr)
    MulScalar,   // x * s, s a scalar node
    Recip,       // 1 / s, scalar
    Tanh,
    Sigmoid,
    Exp,
    Log,
    Softmax,      // over the whole tensor
    LogSoftmax,   // over the whole tensor
    LogSoftmaxRows,  // per row of a matrix
    LogSumExp,    // -> scalar
    Sum,          // -> scalar
    Dot,          // -> scalar
    MatVec,       // W[r,c] x[c] -> [r]
    MatTVec,      // W[r,c]^T y[r] -> [c]
    OuterAdd,     // a[n], b[m] -> [n*m], out[i*m+j] = a[i]+b[j]
    Concat,       // [n],[m] -> [n+m]
    Slice,        // contiguous sub-vector (start=i0, len=i1)
    Pick,         // element i0 -> scalar
    Reshape,
    MixRows,      // bank[K,rest...], w[K] -> [rest...], sum_k w[k]*bank[k]
    BankMatVec,   // bank[K,r,c], w[K], x[c] -> [r], sum_k w[k]*(bank[k] x)
    StraightThrough,  // value: one-hot(i0); gradient: identity into input
};

class Tape;

// Lightweight handle into a tape.
struct Var {
    Tape* tape = nullptr;
    int id = -1;
    bool valid() const { return tape != nullptr && id >= 0; }
};

// Gradients aligned with one ParamStore: slot i of the store <-> tensors[i].
struct Gradients {
    const ParamStore* store = nullptr;
    std::vector<Tensor> tensors;

    const Tensor& operator[](int slot) const { return tensors[static_cast<size_t>(slot)]; }
    const Tensor& at(const std::string& name) const { return tensors[static_cast<size_t>(store->require(name))]; }

    double squared_norm() const {
        double s = 0.0;
        for (const Tensor& t : tensors)
            for (double v : t.vec()) s += v * v;
        return s;
    }
    bool all_finite() const {
        for (const Tensor& t : tensors)
            if (!t.all_finite()) return false;
        return true;
    }
};

// Recorded forward ops with eagerly computed values; reverse-mode accumulation
// replays them backwards. Re-running gradient() on the same tape yields
// identical results (adjoints are reset each time).
class Tape {
public:
    Var constant(Tensor v);
    Var scalar(double v) { return constant(Tensor::scalar(v)); }

    // Binds the parameter's current value; one node per (store, slot) per tape.
    Var param(const ParamStore& store, int slot);
    Var param(const ParamStore& store, const std::string& name) { return param(store, store.require(name)); }

    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var neg(Var a);
    Var scale(Var a, double c);
    Var mul_scalar(Var a, Var s);
    Var recip(Var s);
    Var tanh(Var a);
    Var sigmoid(Var a);
    Var exp(Var a);
    Var log(Var a);
    Var softmax(Var a);
    Var log_softmax(Var a);
    Var log_softmax_rows(Var a);
    Var logsumexp(Var a);
    Var sum(Var a);
    Var dot(Var a, Var b);
    Var matvec(Var w, Var x);
    Var mat_t_vec(Var w, Var y);
    Var outer_add(Var a, Var b);
    Var concat(Var a, Var b);
    Var slice(Var a, int start, int len);
    Var pick(Var a, int index);
    Var reshape(Var a, Shape shape);
    Var mix_rows(Var bank, Var w);
    Var bank_matvec(Var bank, Var w, Var x);
    Var straight_through(Var y, int hard_index);

    const Tensor& val(Var v) const { return nodes_[static_cast<size_t>(v.id)].val; }

    // Adjoint of any node after backward(); zero tensor if the node is off-path.
    Tensor adjoint(Var v) const;

    // Seeds d(loss)/d(loss) = 1 and accumulates adjoints. loss must be scalar.
    void backward(Var loss);

    // backward() + gather per-parameter gradients for `store` (zeros off-path).
    Gradients gradient(Var loss, const ParamStore& store);

    // Gather only; requires backward() already run on this tape.
    Gradients collect(const ParamStore& store) const;

    int size() const { return static_cast<int>(nodes_.size()); }
    void clear();

private:
    struct Node {
        Op op;
        int a = -1, b = -1, c = -1;
        int i0 = 0, i1 = 0;
        double attr = 0.0;
        Tensor val;
        Tensor adj;
        bool touched = false;
        const ParamStore* store = nullptr;
        int slot = -1;
    };

    int push(Node n) {
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size() - 1);
    }
    Var wrap(int id) { return Var{this, id}; }
    Node& at(Var v) { return nodes_[static_cast<size_t>(v.id)]; }
    const Node& at(Var v) const { return nodes_[static_cast<size_t>(v.id)]; }
    void check_mine(Var v, const char* op) const {
        if (v.tape != this || v.id < 0 || v.id >= size())
            throw contract_error(std::string(op) + ": variable does not belong to this tape");
    }
    Tensor& grab_adj(int id);
    void backprop_node(int id);

    std::vector<Node> nodes_;
    std::unordered_map<std::uint64_t, int> param_cache_;
    bool ran_backward_ = false;
};

}  // namespace ssnn::ad
