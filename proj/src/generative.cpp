#include "ssnn/generative.hpp"

#include <cmath>

namespace ssnn {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112353;

Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.numel(); ++i) t[i] = stddev * rng.normal();
    return t;
}

// log of a probability row: uniform blended with a Dirichlet(1) draw.
std::vector<double> jittered_log_row(int n, Rng& rng) {
    std::vector<double> w(static_cast<size_t>(n));
    double s = 0.0;
    for (double& v : w) {
        double u = rng.uniform();
        v = -std::log(1.0 - u + 1e-300);
        s += v;
    }
    std::vector<double> out(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) out[static_cast<size_t>(i)] = std::log(0.75 / n + 0.25 * w[static_cast<size_t>(i)] / s);
    return out;
}

void check_simplex_weights(const Tensor& w, int K) {
    if (w.rank() != 1 || w.dim(0) != K)
        throw contract_error("state weights must have shape [" + std::to_string(K) + "], got " +
                             shape_str(w.shape()));
}

// Mirrors ad::Tape bank/mix kernels so value math and tape math agree.
void bank_matvec_acc(const Tensor& bank, const Tensor& w, const double* x, double* out) {
    int K = bank.dim(0), r = bank.dim(1), c = bank.dim(2);
    for (int i = 0; i < r; ++i) out[i] = 0.0;
    for (int k = 0; k < K; ++k) {
        double wk = w[k];
        if (wk == 0.0) continue;
        const double* M = bank.data() + static_cast<std::int64_t>(k) * r * c;
        for (int i = 0; i < r; ++i) {
            double s = 0.0;
            const double* row = M + static_cast<std::int64_t>(i) * c;
            for (int j = 0; j < c; ++j) s += row[j] * x[j];
            out[i] += wk * s;
        }
    }
}

void mix_rows_acc(const Tensor& bank, const Tensor& w, double* out) {
    int K = bank.dim(0);
    std::int64_t stride = bank.numel() / K;
    for (std::int64_t i = 0; i < stride; ++i) out[i] = 0.0;
    for (int k = 0; k < K; ++k) {
        double wk = w[k];
        if (wk == 0.0) continue;
        const double* src = bank.data() + k * stride;
        for (std::int64_t i = 0; i < stride; ++i) out[i] += wk * src[i];
    }
}

}  // namespace

GenerativeParams::GenerativeParams(ModelDims dims, ParamStore store, bool no_self_transitions)
    : dims_(dims), store_(std::move(store)), no_self_transitions_(no_self_transitions) {
    slot_pi0_ = store_.require("pi0");
    slot_trans_ = store_.require("trans");
    slot_dur_ = store_.require("dur");
    slot_W_x_ = store_.require("W_x");
    slot_W_h_ = store_.require("W_h");
    slot_b_h_ = store_.require("b_h");
    slot_h0_ = store_.require("h0");
    slot_W_mu_ = store_.require("W_mu");
    slot_b_mu_ = store_.require("b_mu");
    slot_W_sigma_ = store_.require("W_sigma");
    slot_b_sigma_ = store_.require("b_sigma");
    validate();
}

GenerativeParams GenerativeParams::random_init(const ModelDims& dims, Rng& rng, bool no_self_transitions) {
    if (dims.K < 1 || dims.M < 1 || dims.m < 1 || dims.h < 1)
        throw contract_error("model dims must be >= 1");
    if (no_self_transitions && dims.K < 2)
        throw contract_error("no_self_transitions requires K >= 2");
    int K = dims.K, M = dims.M, m = dims.m, h = dims.h;
    ParamStore s;

    s.add("pi0", Tensor::vector(jittered_log_row(K, rng)));
    {
        Tensor trans(Shape{K, K});
        for (int k = 0; k < K; ++k) {
            auto row = jittered_log_row(K, rng);
            for (int j = 0; j < K; ++j) trans.at(k, j) = row[static_cast<size_t>(j)];
        }
        s.add("trans", std::move(trans));
    }
    {
        Tensor dur(Shape{K, M});
        for (int k = 0; k < K; ++k) {
            auto row = jittered_log_row(M, rng);
            for (int j = 0; j < M; ++j) dur.at(k, j) = row[static_cast<size_t>(j)];
        }
        s.add("dur", std::move(dur));
    }
    s.add("W_x", normal_tensor(Shape{K, h, m}, 1.0 / std::sqrt(static_cast<double>(m)), rng));
    s.add("W_h", normal_tensor(Shape{K, h, h}, 1.0 / std::sqrt(static_cast<double>(h)), rng));
    s.add("b_h", Tensor(Shape{K, h}));
    s.add("h0", normal_tensor(Shape{K, h}, 1.0 / std::sqrt(static_cast<double>(h)), rng));
    s.add("W_mu", normal_tensor(Shape{K, m, h}, 1.0 / std::sqrt(static_cast<double>(h)), rng));
    // unit spread: states start with distinct emission means (data is
    // normalized to unit variance), which seeds the state-assignment feedback
    s.add("b_mu", normal_tensor(Shape{K, m}, 1.0, rng));
    s.add("W_sigma", normal_tensor(Shape{K, m, h}, 1.0 / std::sqrt(static_cast<double>(h)), rng));
    s.add("b_sigma", Tensor(Shape{K, m}));

    return GenerativeParams(dims, std::move(s), no_self_transitions);
}

Tensor GenerativeParams::log_init() const {
    Tensor out = pi0();
    log_softmax_inplace(out.data(), out.numel());
    return out;
}

Tensor GenerativeParams::log_trans_rows() const {
    Tensor out = trans();
    if (no_self_transitions_)
        for (int k = 0; k < dims_.K; ++k) out.at(k, k) += kStructuralMask;
    for (int k = 0; k < dims_.K; ++k)
        log_softmax_inplace(out.data() + static_cast<std::int64_t>(k) * dims_.K, dims_.K);
    return out;
}

Tensor GenerativeParams::log_dur_rows() const {
    Tensor out = dur();
    for (int k = 0; k < dims_.K; ++k)
        log_softmax_inplace(out.data() + static_cast<std::int64_t>(k) * dims_.M, dims_.M);
    return out;
}

void GenerativeParams::validate() const {
    int K = dims_.K, M = dims_.M, m = dims_.m, h = dims_.h;
    auto expect = [&](const Tensor& t, Shape shape, const char* name) {
        if (t.shape() != shape)
            throw contract_error(std::string("parameter ") + name + " has shape " + shape_str(t.shape()) +
                                 ", expected " + shape_str(shape));
        if (!t.all_finite()) throw contract_error(std::string("parameter ") + name + " contains non-finite values");
    };
    expect(pi0(), Shape{K}, "pi0");
    expect(trans(), Shape{K, K}, "trans");
    expect(dur(), Shape{K, M}, "dur");
    expect(W_x(), Shape{K, h, m}, "W_x");
    expect(W_h(), Shape{K, h, h}, "W_h");
    expect(b_h(), Shape{K, h}, "b_h");
    expect(h0(), Shape{K, h}, "h0");
    expect(W_mu(), Shape{K, m, h}, "W_mu");
    expect(b_mu(), Shape{K, m}, "b_mu");
    expect(W_sigma(), Shape{K, m, h}, "W_sigma");
    expect(b_sigma(), Shape{K, m}, "b_sigma");
}

Tensor one_hot(int index, int n) {
    if (index < 0 || index >= n)
        throw contract_error("one_hot: index " + std::to_string(index) + " out of [0, " + std::to_string(n) + ")");
    Tensor t(Shape{n});
    t[index] = 1.0;
    return t;
}

Tensor transition_log_probs(int z_prev, int d_prev, const GenerativeParams& params) {
    int K = params.dims().K, M = params.dims().M;
    if (z_prev < 1 || z_prev > K || d_prev < 1 || d_prev > M)
        throw contract_error("transition_log_probs: (z_prev=" + std::to_string(z_prev) + ", d_prev=" +
                             std::to_string(d_prev) + ") out of range for K=" + std::to_string(K) +
                             ", M=" + std::to_string(M));
    Tensor out = Tensor::full(Shape{K * M}, neg_inf());
    if (d_prev > 1) {
        out[(z_prev - 1) * M + (d_prev - 2)] = 0.0;  // log 1
        return out;
    }
    Tensor lt = params.log_trans_rows();
    Tensor ld = params.log_dur_rows();
    for (int z = 0; z < K; ++z)
        for (int d = 0; d < M; ++d) out[z * M + d] = lt.at(z_prev - 1, z) + ld.at(z, d);
    return out;
}

Tensor recurrent_update(const Tensor& h_prev, const Tensor& x_prev, const Tensor& state_weights,
                        const GenerativeParams& params) {
    const ModelDims& d = params.dims();
    check_simplex_weights(state_weights, d.K);
    if (h_prev.rank() != 1 || h_prev.dim(0) != d.h)
        throw contract_error("recurrent_update: h_prev shape " + shape_str(h_prev.shape()));
    if (x_prev.rank() != 1 || x_prev.dim(0) != d.m)
        throw contract_error("recurrent_update: x_prev shape " + shape_str(x_prev.shape()));

    std::vector<double> from_x(static_cast<size_t>(d.h)), from_h(static_cast<size_t>(d.h)),
        bias(static_cast<size_t>(d.h));
    bank_matvec_acc(params.W_x(), state_weights, x_prev.data(), from_x.data());
    bank_matvec_acc(params.W_h(), state_weights, h_prev.data(), from_h.data());
    mix_rows_acc(params.b_h(), state_weights, bias.data());

    Tensor h(Shape{d.h});
    for (int i = 0; i < d.h; ++i) h[i] = std::tanh(from_x[static_cast<size_t>(i)] + from_h[static_cast<size_t>(i)] + bias[static_cast<size_t>(i)]);
    return h;
}

double emission_log_prob(const Tensor& x, const Tensor& h, const Tensor& state_weights,
                         const GenerativeParams& params) {
    const ModelDims& d = params.dims();
    check_simplex_weights(state_weights, d.K);
    std::vector<double> mu(static_cast<size_t>(d.m)), bias(static_cast<size_t>(d.m)), s(static_cast<size_t>(d.m));
    bank_matvec_acc(params.W_mu(), state_weights, h.data(), mu.data());
    mix_rows_acc(params.b_mu(), state_weights, bias.data());
    for (int j = 0; j < d.m; ++j) mu[static_cast<size_t>(j)] += bias[static_cast<size_t>(j)];
    bank_matvec_acc(params.W_sigma(), state_weights, h.data(), s.data());
    mix_rows_acc(params.b_sigma(), state_weights, bias.data());
    for (int j = 0; j < d.m; ++j) s[static_cast<size_t>(j)] += bias[static_cast<size_t>(j)];

    double s_sum = 0.0, quad = 0.0;
    for (int j = 0; j < d.m; ++j) {
        double dx = x[j] - mu[static_cast<size_t>(j)];
        s_sum += s[static_cast<size_t>(j)];
        quad += dx * dx * std::exp(-s[static_cast<size_t>(j)]);
    }
    return -0.5 * d.m * kLog2Pi - 0.5 * s_sum - 0.5 * quad;
}

SegmentScorer::SegmentScorer(const Sequence& x, int start, Tensor state_weights, const GenerativeParams& params)
    : x_(x), params_(params), weights_(std::move(state_weights)), t_(start), start_(start) {
    check_simplex_weights(weights_, params.dims().K);
    std::vector<double> h0(static_cast<size_t>(params.dims().h));
    mix_rows_acc(params.h0(), weights_, h0.data());
    h_ = Tensor(Shape{params.dims().h}, std::move(h0));
}

SegmentScorer::SegmentScorer(const Sequence& x, int start, int state, const GenerativeParams& params)
    : SegmentScorer(x, start, one_hot(state - 1, params.dims().K), params) {}

double SegmentScorer::step() {
    const ModelDims& d = params_.dims();
    if (t_ >= x_.length()) throw contract_error("SegmentScorer: stepped past the end of the sequence");
    Tensor x_prev(Shape{d.m});
    if (t_ > start_)
        for (int j = 0; j < d.m; ++j) x_prev[j] = x_.frame(t_ - 1)[j];
    h_ = recurrent_update(h_, x_prev, weights_, params_);
    Tensor xt(Shape{d.m});
    for (int j = 0; j < d.m; ++j) xt[j] = x_.frame(t_)[j];
    ++t_;
    return emission_log_prob(xt, h_, weights_, params_);
}

double segment_log_prob(const Sequence& x, int start, int dur, const Tensor& state_weights,
                        const GenerativeParams& params) {
    if (start < 0 || dur < 1 || start + dur > x.length())
        throw contract_error("segment_log_prob: segment [" + std::to_string(start) + ", " +
                             std::to_string(start + dur) + ") out of T=" + std::to_string(x.length()));
    SegmentScorer scorer(x, start, state_weights, params);
    double lp = 0.0;
    for (int i = 0; i < dur; ++i) lp += scorer.step();
    return lp;
}

double segment_log_prob(const Sequence& x, int start, int dur, int state, const GenerativeParams& params) {
    return segment_log_prob(x, start, dur, one_hot(state - 1, params.dims().K), params);
}

double joint_log_prob(const Sequence& x, const LatentPath& path, const GenerativeParams& params) {
    const ModelDims& dm = params.dims();
    if (path.length() != x.length())
        throw contract_error("joint_log_prob: path length " + std::to_string(path.length()) + " != T " +
                             std::to_string(x.length()));
    if (x.obs_dim() != dm.m)
        throw contract_error("joint_log_prob: observation dim " + std::to_string(x.obs_dim()) + " != m " +
                             std::to_string(dm.m));
    int T = x.length();
    for (int t = 0; t < T; ++t)
        if (path.z[static_cast<size_t>(t)] < 1 || path.z[static_cast<size_t>(t)] > dm.K ||
            path.d[static_cast<size_t>(t)] < 1 || path.d[static_cast<size_t>(t)] > dm.M)
            throw contract_error("joint_log_prob: path entry out of range at t=" + std::to_string(t));
    if (!path.countdown_valid()) return neg_inf();

    Tensor li = params.log_init();
    Tensor lt = params.log_trans_rows();
    Tensor ld = params.log_dur_rows();

    double lp = li[path.z[0] - 1] + ld.at(path.z[0] - 1, path.d[0] - 1);
    for (int t = 1; t < T; ++t) {
        if (path.d[static_cast<size_t>(t) - 1] > 1) continue;  // deterministic countdown: log 1
        lp += lt.at(path.z[static_cast<size_t>(t) - 1] - 1, path.z[static_cast<size_t>(t)] - 1);
        lp += ld.at(path.z[static_cast<size_t>(t)] - 1, path.d[static_cast<size_t>(t)] - 1);
    }
    for (int s : path.segment_starts()) {
        int observed = std::min(path.d[static_cast<size_t>(s)], T - s);
        lp += segment_log_prob(x, s, observed, path.z[static_cast<size_t>(s)], params);
    }
    return lp;
}

std::pair<Sequence, LatentPath> sample_sequence(const GenerativeParams& params, int T, Rng& rng,
                                                const std::string& id) {
    if (T < 1) throw contract_error("sample_sequence: T must be >= 1");
    const ModelDims& dm = params.dims();
    Tensor li = params.log_init();
    Tensor lt = params.log_trans_rows();
    Tensor ld = params.log_dur_rows();

    LatentPath path;
    path.z.resize(static_cast<size_t>(T));
    path.d.resize(static_cast<size_t>(T));
    Tensor x(Shape{T, dm.m});

    int z = 0, d = 0;
    Tensor h(Shape{dm.h});
    Tensor x_prev(Shape{dm.m});
    for (int t = 0; t < T; ++t) {
        bool boundary = (t == 0) || (d == 1);
        if (boundary) {
            if (t == 0)
                z = rng.categorical_logp(li.data(), dm.K) + 1;
            else
                z = rng.categorical_logp(lt.data() + static_cast<std::int64_t>(z - 1) * dm.K, dm.K) + 1;
            d = rng.categorical_logp(ld.data() + static_cast<std::int64_t>(z - 1) * dm.M, dm.M) + 1;
            for (int i = 0; i < dm.h; ++i) h[i] = params.h0().at(z - 1, i);
            for (int j = 0; j < dm.m; ++j) x_prev[j] = 0.0;
        } else {
            --d;
        }
        path.z[static_cast<size_t>(t)] = z;
        path.d[static_cast<size_t>(t)] = d;

        Tensor w = one_hot(z - 1, dm.K);
        h = recurrent_update(h, x_prev, w, params);
        std::vector<double> mu(static_cast<size_t>(dm.m)), bias(static_cast<size_t>(dm.m)), s(static_cast<size_t>(dm.m));
        bank_matvec_acc(params.W_mu(), w, h.data(), mu.data());
        mix_rows_acc(params.b_mu(), w, bias.data());
        bank_matvec_acc(params.W_sigma(), w, h.data(), s.data());
        for (int j = 0; j < dm.m; ++j) {
            double logvar = s[static_cast<size_t>(j)] + params.b_sigma().at(z - 1, j);
            double xj = mu[static_cast<size_t>(j)] + bias[static_cast<size_t>(j)] +
                        std::exp(0.5 * logvar) * rng.normal();
            x.at(t, j) = xj;
            x_prev[j] = xj;
        }
    }

    Sequence seq;
    seq.id = id;
    seq.x = std::move(x);
    seq.truth = path;
    return {std::move(seq), std::move(path)};
}

}  // namespace ssnn
