#include "ssnn/inference.hpp"

#include <cmath>

namespace ssnn {

namespace {

Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = stddev * rng.normal();
    return t;
}

struct LstmVars {
    ad::Var W, U, b;
};

struct LstmState {
    ad::Var h, c;
};

LstmVars bind_lstm(ad::Tape& tape, const ParamStore& store, const std::string& prefix) {
    return {tape.param(store, prefix + "_W"), tape.param(store, prefix + "_U"), tape.param(store, prefix + "_b")};
}

// Standard gated cell, gate order i, f, g, o.
LstmState lstm_step(ad::Tape& t, const LstmVars& w, ad::Var x, const LstmState& prev, int e) {
    ad::Var pre = t.add(t.add(t.matvec(w.W, x), t.matvec(w.U, prev.h)), w.b);
    ad::Var i = t.sigmoid(t.slice(pre, 0, e));
    ad::Var f = t.sigmoid(t.slice(pre, e, e));
    ad::Var g = t.tanh(t.slice(pre, 2 * e, e));
    ad::Var o = t.sigmoid(t.slice(pre, 3 * e, e));
    ad::Var c = t.add(t.mul(f, prev.c), t.mul(i, g));
    return {t.mul(o, t.tanh(c)), c};
}

struct GruVars {
    ad::Var Wr, Wz, Wc, Ur, Uz, Uc, br, bz, bc;
};

// Gated backward-summary cell: r, z gates and a candidate state.
ad::Var gru_step(ad::Tape& t, const GruVars& w, ad::Var u, ad::Var prev, ad::Var ones_q) {
    ad::Var r = t.sigmoid(t.add(t.add(t.matvec(w.Wr, u), t.matvec(w.Ur, prev)), w.br));
    ad::Var z = t.sigmoid(t.add(t.add(t.matvec(w.Wz, u), t.matvec(w.Uz, prev)), w.bz));
    ad::Var c = t.tanh(t.add(t.add(t.matvec(w.Wc, u), t.matvec(w.Uc, t.mul(r, prev))), w.bc));
    return t.add(t.mul(t.sub(ones_q, z), prev), t.mul(z, c));
}

}  // namespace

InferenceParams::InferenceParams(ModelDims dims, ParamStore store) : dims_(dims), store_(std::move(store)) {
    validate();
}

InferenceParams InferenceParams::random_init(const ModelDims& dims, Rng& rng) {
    if (dims.e < 1 || dims.q < 1) throw contract_error("inference dims e, q must be >= 1");
    int m = dims.m, e = dims.e, q = dims.q, K = dims.K, M = dims.M;
    ParamStore s;
    for (const char* prefix : {"enc_f", "enc_b"}) {
        s.add(std::string(prefix) + "_W", normal_tensor(Shape{4 * e, m}, 1.0 / std::sqrt(static_cast<double>(m)), rng));
        s.add(std::string(prefix) + "_U", normal_tensor(Shape{4 * e, e}, 1.0 / std::sqrt(static_cast<double>(e)), rng));
        Tensor b(Shape{4 * e});
        for (int i = e; i < 2 * e; ++i) b[i] = 1.0;  // forget gate bias
        s.add(std::string(prefix) + "_b", std::move(b));
    }
    int u = m + 2 * e;
    for (const char* gate : {"r", "z", "c"}) {
        s.add(std::string("sum_W") + gate, normal_tensor(Shape{q, u}, 1.0 / std::sqrt(static_cast<double>(u)), rng));
        s.add(std::string("sum_U") + gate, normal_tensor(Shape{q, q}, 1.0 / std::sqrt(static_cast<double>(q)), rng));
        s.add(std::string("sum_b") + gate, Tensor(Shape{q}));
    }
    s.add("sum_I_term", Tensor(Shape{q}));
    s.add("head_Wz", normal_tensor(Shape{q, K}, 1.0 / std::sqrt(static_cast<double>(q)), rng));
    s.add("head_Wd", normal_tensor(Shape{q, M}, 1.0 / std::sqrt(static_cast<double>(q)), rng));
    return InferenceParams(dims, std::move(s));
}

void InferenceParams::validate() const {
    int m = dims_.m, e = dims_.e, q = dims_.q, K = dims_.K, M = dims_.M;
    int u = m + 2 * e;
    auto expect = [&](const char* name, Shape shape) {
        const Tensor& t = store_.value(name);
        if (t.shape() != shape)
            throw contract_error(std::string("parameter ") + name + " has shape " + shape_str(t.shape()) +
                                 ", expected " + shape_str(shape));
        if (!t.all_finite()) throw contract_error(std::string("parameter ") + name + " contains non-finite values");
    };
    for (const char* prefix : {"enc_f", "enc_b"}) {
        expect((std::string(prefix) + "_W").c_str(), Shape{4 * e, m});
        expect((std::string(prefix) + "_U").c_str(), Shape{4 * e, e});
        expect((std::string(prefix) + "_b").c_str(), Shape{4 * e});
    }
    for (const char* gate : {"r", "z", "c"}) {
        expect((std::string("sum_W") + gate).c_str(), Shape{q, u});
        expect((std::string("sum_U") + gate).c_str(), Shape{q, q});
        expect((std::string("sum_b") + gate).c_str(), Shape{q});
    }
    expect("sum_I_term", Shape{q});
    expect("head_Wz", Shape{q, K});
    expect("head_Wd", Shape{q, M});
}

InferenceGraph build_inference_graph(ad::Tape& tape, const Sequence& x, const InferenceParams& phi,
                                     const EncoderCarry* carry) {
    const ModelDims& dm = phi.dims();
    if (x.obs_dim() != dm.m)
        throw contract_error("build_inference_graph: observation dim " + std::to_string(x.obs_dim()) +
                             " != m " + std::to_string(dm.m));
    int T = x.length(), e = dm.e, q = dm.q;
    const ParamStore& store = phi.store();

    std::vector<ad::Var> xs(static_cast<size_t>(T));
    for (int t = 0; t < T; ++t) {
        Tensor frame(Shape{dm.m});
        for (int j = 0; j < dm.m; ++j) frame[j] = x.frame(t)[j];
        xs[static_cast<size_t>(t)] = tape.constant(std::move(frame));
    }

    LstmVars fw = bind_lstm(tape, store, "enc_f");
    LstmVars bw = bind_lstm(tape, store, "enc_b");
    ad::Var zero_e = tape.constant(Tensor(Shape{e}));

    std::vector<ad::Var> fwd(static_cast<size_t>(T)), rev(static_cast<size_t>(T));
    LstmState state{zero_e, zero_e};
    if (carry) state = {tape.constant(carry->h), tape.constant(carry->c)};
    for (int t = 0; t < T; ++t) {
        state = lstm_step(tape, fw, xs[static_cast<size_t>(t)], state, e);
        fwd[static_cast<size_t>(t)] = state.h;
    }
    InferenceGraph graph_partial;
    graph_partial.final_forward_h = tape.val(state.h);
    graph_partial.final_forward_c = tape.val(state.c);
    state = {zero_e, zero_e};
    for (int t = T - 1; t >= 0; --t) {
        state = lstm_step(tape, bw, xs[static_cast<size_t>(t)], state, e);
        rev[static_cast<size_t>(t)] = state.h;
    }

    InferenceGraph graph = std::move(graph_partial);
    graph.hhat.resize(static_cast<size_t>(T));
    for (int t = 0; t < T; ++t)
        graph.hhat[static_cast<size_t>(t)] = tape.concat(fwd[static_cast<size_t>(t)], rev[static_cast<size_t>(t)]);

    GruVars gru{tape.param(store, "sum_Wr"), tape.param(store, "sum_Wz"), tape.param(store, "sum_Wc"),
                tape.param(store, "sum_Ur"), tape.param(store, "sum_Uz"), tape.param(store, "sum_Uc"),
                tape.param(store, "sum_br"), tape.param(store, "sum_bz"), tape.param(store, "sum_bc")};
    ad::Var ones_q = tape.constant(Tensor::full(Shape{q}, 1.0));
    graph.summaries.resize(static_cast<size_t>(T));
    ad::Var I = tape.param(store, "sum_I_term");
    for (int t = T - 1; t >= 0; --t) {
        ad::Var u = tape.concat(xs[static_cast<size_t>(t)], graph.hhat[static_cast<size_t>(t)]);
        I = gru_step(tape, gru, u, I, ones_q);
        graph.summaries[static_cast<size_t>(t)] = I;
    }
    return graph;
}

std::pair<ad::Var, ad::Var> posterior_logit_vars(ad::Tape& tape, ad::Var summary, const InferenceParams& phi) {
    ad::Var wz = tape.param(phi.store(), "head_Wz");
    ad::Var wd = tape.param(phi.store(), "head_Wd");
    return {tape.mat_t_vec(wz, summary), tape.mat_t_vec(wd, summary)};
}

PosteriorTables compute_posterior_tables(const Sequence& x, const InferenceParams& phi) {
    const ModelDims& dm = phi.dims();
    int T = x.length(), K = dm.K, M = dm.M, N = K * M;

    ad::Tape tape;
    InferenceGraph graph = build_inference_graph(tape, x, phi);

    PosteriorTables tables;
    tables.T = T;
    tables.K = K;
    tables.M = M;
    tables.hhat = Tensor(Shape{T, 2 * dm.e});
    tables.summaries = Tensor(Shape{T, dm.q});
    tables.logits_z = Tensor(Shape{T, K});
    tables.logits_d = Tensor(Shape{T, M});
    tables.joint_logits = Tensor(Shape{T, N});
    tables.joint_log_softmax = Tensor(Shape{T, N});

    for (int t = 0; t < T; ++t) {
        const Tensor& hh = tape.val(graph.hhat[static_cast<size_t>(t)]);
        for (int j = 0; j < 2 * dm.e; ++j) tables.hhat.at(t, j) = hh[j];
        const Tensor& su = tape.val(graph.summaries[static_cast<size_t>(t)]);
        for (int j = 0; j < dm.q; ++j) tables.summaries.at(t, j) = su[j];

        auto [lz, ld] = posterior_logit_vars(tape, graph.summaries[static_cast<size_t>(t)], phi);
        const Tensor& lzv = tape.val(lz);
        const Tensor& ldv = tape.val(ld);
        for (int k = 0; k < K; ++k) tables.logits_z.at(t, k) = lzv[k];
        for (int j = 0; j < M; ++j) tables.logits_d.at(t, j) = ldv[j];
        for (int k = 0; k < K; ++k)
            for (int j = 0; j < M; ++j) tables.joint_logits.at(t, k * M + j) = lzv[k] + ldv[j];
        double* row = tables.joint_log_softmax.data() + static_cast<std::int64_t>(t) * N;
        const double* src = tables.joint_logits.data() + static_cast<std::int64_t>(t) * N;
        for (int i = 0; i < N; ++i) row[i] = src[i];
        log_softmax_inplace(row, N);
    }
    return tables;
}

std::pair<Tensor, Tensor> posterior_logits(const Tensor& summary, const InferenceParams& phi) {
    const Tensor& Wz = phi.store().value("head_Wz");
    const Tensor& Wd = phi.store().value("head_Wd");
    int q = phi.dims().q, K = phi.dims().K, M = phi.dims().M;
    if (summary.rank() != 1 || summary.dim(0) != q)
        throw contract_error("posterior_logits: summary shape " + shape_str(summary.shape()));
    Tensor lz(Shape{K}), ld(Shape{M});
    for (int i = 0; i < q; ++i) {
        for (int k = 0; k < K; ++k) lz[k] += Wz.at(i, k) * summary[i];
        for (int j = 0; j < M; ++j) ld[j] += Wd.at(i, j) * summary[i];
    }
    return {std::move(lz), std::move(ld)};
}

Tensor gumbel_softmax(const Tensor& logits, Temperature tau, const Tensor& gumbel_noise) {
    check_same_shape(logits, gumbel_noise, "gumbel_softmax");
    if (!logits.all_finite()) throw contract_error("gumbel_softmax: logits must be finite");
    Tensor y = logits;
    for (std::int64_t i = 0; i < y.numel(); ++i) y[i] = (y[i] + gumbel_noise[i]) / tau.tau;
    softmax_inplace(y.data(), y.numel());
    return y;
}

namespace {

int argmax_perturbed(const double* logits, const double* g, int n) {
    int best = 0;
    for (int i = 1; i < n; ++i)
        if (logits[i] + g[i] > logits[best] + g[best]) best = i;
    return best;
}

// Boundary logits with the previous state masked out under strict
// segment-change semantics; z_prev = 0 means "no previous state".
Tensor masked_boundary_logits(const PosteriorTables& tables, int t, int z_prev, bool no_self) {
    int N = tables.K * tables.M;
    Tensor row(Shape{N});
    const double* src = tables.joint_logits.data() + static_cast<std::int64_t>(t) * N;
    for (int i = 0; i < N; ++i) row[i] = src[i];
    if (no_self && z_prev > 0)
        for (int j = 0; j < tables.M; ++j) row[(z_prev - 1) * tables.M + j] += kStructuralMask;
    return row;
}

}  // namespace

RelaxedPath sample_posterior_path(const PosteriorTables& tables, Temperature tau, Rng& rng,
                                  const SampleOptions& opts) {
    int T = tables.T, K = tables.K, M = tables.M, N = K * M;
    RelaxedPath out;
    out.tau = tau.tau;
    out.hard.z.assign(static_cast<size_t>(T), 0);
    out.hard.d.assign(static_cast<size_t>(T), 0);

    int z = 0, d = 0;
    for (int t = 0; t < T; ++t) {
        bool boundary = (t == 0) || (d == 1);
        if (!boundary) {
            --d;
            out.hard.z[static_cast<size_t>(t)] = z;
            out.hard.d[static_cast<size_t>(t)] = d;
            continue;
        }
        Tensor logit_vec = masked_boundary_logits(tables, t, z, opts.no_self_transitions);
        BoundarySample b;
        b.t = t;
        b.gumbel = opts.zero_noise ? Tensor(Shape{N}) : Tensor::vector(rng.gumbel_vec(N));
        b.y = gumbel_softmax(logit_vec, tau, b.gumbel);
        b.pair = argmax_perturbed(logit_vec.data(), b.gumbel.data(), N);
        log_softmax_inplace(logit_vec.data(), N);
        out.log_q += logit_vec[b.pair];
        z = b.pair / M + 1;
        d = b.pair % M + 1;
        out.hard.z[static_cast<size_t>(t)] = z;
        out.hard.d[static_cast<size_t>(t)] = d;
        out.boundaries.push_back(std::move(b));
    }
    return out;
}

RelaxedPath sample_posterior_path(const Sequence& x, const InferenceParams& phi, Temperature tau, Rng& rng,
                                  const SampleOptions& opts) {
    return sample_posterior_path(compute_posterior_tables(x, phi), tau, rng, opts);
}

double posterior_log_prob(const LatentPath& path, const PosteriorTables& tables, bool no_self_transitions) {
    if (path.length() != tables.T)
        throw contract_error("posterior_log_prob: path length " + std::to_string(path.length()) + " != T " +
                             std::to_string(tables.T));
    if (!path.countdown_valid()) return neg_inf();
    int M = tables.M, N = tables.K * tables.M;
    double lp = 0.0;
    int z_prev = 0;
    for (int t = 0; t < tables.T; ++t) {
        if (!path.is_boundary(t)) {
            z_prev = path.z[static_cast<size_t>(t)];
            continue;
        }
        int pair = (path.z[static_cast<size_t>(t)] - 1) * M + (path.d[static_cast<size_t>(t)] - 1);
        if (no_self_transitions) {
            Tensor row = masked_boundary_logits(tables, t, z_prev, true);
            log_softmax_inplace(row.data(), N);
            lp += row[pair];
        } else {
            lp += tables.joint_log_softmax.at(t, pair);
        }
        z_prev = path.z[static_cast<size_t>(t)];
    }
    return lp;
}

double posterior_log_prob(const LatentPath& path, const Sequence& x, const InferenceParams& phi,
                          bool no_self_transitions) {
    return posterior_log_prob(path, compute_posterior_tables(x, phi), no_self_transitions);
}

}  // namespace ssnn
