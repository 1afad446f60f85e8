#pragma once

#include "ssnn/generative.hpp"
#include "ssnn/inference.hpp"
#include "ssnn/rng.hpp"

namespace ssnn::testing {

inline ModelDims dims(int K, int M, int m, int h, int e = 2, int q = 2) {
    ModelDims d;
    d.K = K;
    d.M = M;
    d.m = m;
    d.h = h;
    d.e = e;
    d.q = q;
    return d;
}

// All weights and logits zero: uniform tables, tanh(0) recurrences, standard
// normal emissions.
inline GenerativeParams zero_params(const ModelDims& d) {
    ParamStore s;
    s.add("pi0", Tensor(Shape{d.K}));
    s.add("trans", Tensor(Shape{d.K, d.K}));
    s.add("dur", Tensor(Shape{d.K, d.M}));
    s.add("W_x", Tensor(Shape{d.K, d.h, d.m}));
    s.add("W_h", Tensor(Shape{d.K, d.h, d.h}));
    s.add("b_h", Tensor(Shape{d.K, d.h}));
    s.add("h0", Tensor(Shape{d.K, d.h}));
    s.add("W_mu", Tensor(Shape{d.K, d.m, d.h}));
    s.add("b_mu", Tensor(Shape{d.K, d.m}));
    s.add("W_sigma", Tensor(Shape{d.K, d.m, d.h}));
    s.add("b_sigma", Tensor(Shape{d.K, d.m}));
    return GenerativeParams(d, std::move(s));
}

// Every slot zero, including the forget-gate bias and the terminal summary.
inline InferenceParams zero_inference_params(const ModelDims& d) {
    ParamStore s;
    for (const char* prefix : {"enc_f", "enc_b"}) {
        s.add(std::string(prefix) + "_W", Tensor(Shape{4 * d.e, d.m}));
        s.add(std::string(prefix) + "_U", Tensor(Shape{4 * d.e, d.e}));
        s.add(std::string(prefix) + "_b", Tensor(Shape{4 * d.e}));
    }
    int u = d.m + 2 * d.e;
    for (const char* gate : {"r", "z", "c"}) {
        s.add(std::string("sum_W") + gate, Tensor(Shape{d.q, u}));
        s.add(std::string("sum_U") + gate, Tensor(Shape{d.q, d.q}));
        s.add(std::string("sum_b") + gate, Tensor(Shape{d.q}));
    }
    s.add("sum_I_term", Tensor(Shape{d.q}));
    s.add("head_Wz", Tensor(Shape{d.q, d.K}));
    s.add("head_Wd", Tensor(Shape{d.q, d.M}));
    return InferenceParams(d, std::move(s));
}

inline Sequence random_sequence(int T, int m, Rng& rng, const std::string& id = "seq") {
    Sequence s;
    s.id = id;
    s.x = Tensor(Shape{T, m});
    for (std::int64_t i = 0; i < s.x.numel(); ++i) s.x[i] = rng.normal();
    return s;
}

// Uniform-random countdown-valid path (right-censoring included).
inline LatentPath random_valid_path(int T, int K, int M, Rng& rng) {
    LatentPath p;
    p.z.assign(static_cast<size_t>(T), 0);
    p.d.assign(static_cast<size_t>(T), 0);
    int t = 0;
    while (t < T) {
        int k = rng.uniform_int(K) + 1;
        int delta = rng.uniform_int(M) + 1;
        int fill = std::min(delta, T - t);
        for (int i = 0; i < fill; ++i) {
            p.z[static_cast<size_t>(t + i)] = k;
            p.d[static_cast<size_t>(t + i)] = delta - i;
        }
        t += fill;
    }
    return p;
}

}  // namespace ssnn::testing
