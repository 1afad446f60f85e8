#include "ssnn/training.hpp"

#include <chrono>
#include <cmath>

namespace ssnn {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112353;

void copy_values(ParamStore& dst, const ParamStore& src) {
    for (int i = 0; i < dst.size(); ++i) dst.set(i, src.value(i));
}

struct ThetaVars {
    ad::Var LPi, LAn, LDflat;
    ad::Var W_x, W_h, b_h, h0, W_mu, b_mu, W_sigma, b_sigma;
};

ThetaVars bind_theta(ad::Tape& t, const GenerativeParams& theta) {
    const ParamStore& s = theta.store();
    ThetaVars v;
    v.LPi = t.log_softmax(t.param(s, "pi0"));
    v.LAn = t.log_softmax_rows(t.param(s, "trans"));
    v.LDflat = t.reshape(t.log_softmax_rows(t.param(s, "dur")), Shape{theta.dims().K * theta.dims().M});
    v.W_x = t.param(s, "W_x");
    v.W_h = t.param(s, "W_h");
    v.b_h = t.param(s, "b_h");
    v.h0 = t.param(s, "h0");
    v.W_mu = t.param(s, "W_mu");
    v.b_mu = t.param(s, "b_mu");
    v.W_sigma = t.param(s, "W_sigma");
    v.b_sigma = t.param(s, "b_sigma");
    return v;
}

int argmax_perturbed(const Tensor& logits, const Tensor& g) {
    int best = 0;
    for (std::int64_t i = 1; i < logits.numel(); ++i)
        if (logits[i] + g[i] > logits[best] + g[best]) best = static_cast<int>(i);
    return best;
}

}  // namespace

void TrainConfig::validate() const {
    if (batch_size < 1) throw contract_error("train config: batch_size must be >= 1");
    if (iterations < 0) throw contract_error("train config: iterations must be >= 0");
    if (!(learning_rate > 0.0)) throw contract_error("train config: learning_rate must be positive");
    if (!(tau_end > 0.0) || tau_start < tau_end)
        throw contract_error("train config: need tau_start >= tau_end > 0");
    if (anneal != "exponential") throw contract_error("train config: unknown anneal mode '" + anneal + "'");
    if (sample_count < 1) throw contract_error("train config: sample_count must be >= 1");
    if (chunk_len < 0) throw contract_error("train config: chunk_len must be >= 0");
    if (!(clip_norm > 0.0)) throw contract_error("train config: clip_norm must be positive");
    if (!(table_lr_scale > 0.0)) throw contract_error("train config: table_lr_scale must be positive");
}

OptimizerState OptimizerState::for_store(const ParamStore& store) {
    OptimizerState s;
    for (int i = 0; i < store.size(); ++i) {
        s.m.push_back(Tensor(store.value(i).shape()));
        s.v.push_back(Tensor(store.value(i).shape()));
    }
    return s;
}

ElboGraph build_elbo_graph(ad::Tape& tape, const Sequence& x, const GenerativeParams& theta,
                           const InferenceParams& phi, Temperature tau, TrainMode mode, Rng* rng,
                           const RelaxedPath* frozen, CarryState* carry) {
    const ModelDims& dm = theta.dims();
    int T = x.length(), K = dm.K, M = dm.M, N = K * M;
    if (x.obs_dim() != dm.m)
        throw contract_error("build_elbo_graph: observation dim " + std::to_string(x.obs_dim()) + " != m " +
                             std::to_string(dm.m));
    if (frozen == nullptr && rng == nullptr)
        throw contract_error("build_elbo_graph: need either an rng or a frozen path");

    EncoderCarry enc_carry;
    EncoderCarry* enc_carry_ptr = nullptr;
    if (carry && carry->enc_h.numel() == dm.e && carry->enc_h.rank() == 1) {
        enc_carry.h = carry->enc_h;
        enc_carry.c = carry->enc_c;
        enc_carry_ptr = &enc_carry;
    }
    InferenceGraph ig = build_inference_graph(tape, x, phi, enc_carry_ptr);
    ThetaVars tv = bind_theta(tape, theta);
    ad::Var ones_M = tape.constant(Tensor::full(Shape{M}, 1.0));

    std::vector<ad::Var> xs(static_cast<size_t>(T));
    for (int t = 0; t < T; ++t) {
        Tensor frame(Shape{dm.m});
        for (int j = 0; j < dm.m; ++j) frame[j] = x.frame(t)[j];
        xs[static_cast<size_t>(t)] = tape.constant(std::move(frame));
    }

    ElboGraph out;
    out.path.tau = tau.tau;
    out.path.hard.z.assign(static_cast<size_t>(T), 0);
    out.path.hard.d.assign(static_cast<size_t>(T), 0);

    ad::Var logp = tape.scalar(0.0);
    ad::Var logq = tape.scalar(0.0);
    ad::Var wz;  // current segment state weights
    ad::Var h;
    ad::Var x_prev = tape.constant(Tensor(Shape{dm.m}));
    ad::Var logq_value_acc = tape.scalar(0.0);  // hard log q (value bookkeeping)

    bool carried = carry && carry->z > 0;
    int z = 0, d = 0;
    if (carried) {
        // wz doubles as wz_prev for the chunk's first transition term.
        z = carry->z;
        d = carry->d;
        wz = tape.constant(one_hot(z - 1, K));
        if (carry->mid_segment) {
            h = tape.constant(carry->gen_h);
            x_prev = tape.constant(carry->x_prev);
        }
    }

    size_t frozen_idx = 0;
    for (int t = 0; t < T; ++t) {
        bool boundary = (t == 0) ? (carried ? carry->d == 1 : true) : (d == 1);
        if (boundary) {
            ad::Var summary = ig.summaries[static_cast<size_t>(t)];
            auto [lz, ld] = posterior_logit_vars(tape, summary, phi);
            ad::Var joint = tape.outer_add(lz, ld);
            if (theta.no_self_transitions() && z > 0) {
                // strict segment-change: the posterior may not repeat z_prev
                Tensor mask(Shape{N});
                for (int j = 0; j < M; ++j) mask[(z - 1) * M + j] = kStructuralMask;
                joint = tape.add(joint, tape.constant(std::move(mask)));
            }
            ad::Var logq_vec = tape.log_softmax(joint);

            Tensor g;
            int pair;
            if (frozen) {
                if (frozen_idx >= frozen->boundaries.size() || frozen->boundaries[frozen_idx].t != t)
                    throw contract_error("build_elbo_graph: frozen path desynchronized at t=" + std::to_string(t));
                g = frozen->boundaries[frozen_idx].gumbel;
                pair = frozen->boundaries[frozen_idx].pair;
                ++frozen_idx;
            } else {
                g = Tensor::vector(rng->gumbel_vec(N));
                pair = argmax_perturbed(tape.val(joint), g);
            }

            ad::Var y = tape.softmax(tape.scale(tape.add(joint, tape.constant(g)), 1.0 / tau.tau));
            ad::Var y_use = (mode == TrainMode::HardST) ? tape.straight_through(y, pair) : y;

            BoundarySample bs;
            bs.t = t;
            bs.pair = pair;
            bs.gumbel = g;
            bs.y = tape.val(y);
            out.path.boundaries.push_back(std::move(bs));

            ad::Var wz_prev = wz;
            wz = tape.matvec(tape.reshape(y_use, Shape{K, M}), ones_M);

            if (wz_prev.valid())
                logp = tape.add(logp, tape.dot(wz_prev, tape.matvec(tv.LAn, wz)));
            else
                logp = tape.add(logp, tape.dot(wz, tv.LPi));
            logp = tape.add(logp, tape.dot(y_use, tv.LDflat));
            logq = tape.add(logq, tape.dot(y_use, logq_vec));
            logq_value_acc = tape.add(logq_value_acc, tape.pick(logq_vec, pair));

            z = pair / M + 1;
            d = pair % M + 1;
            h = tape.mix_rows(tv.h0, wz);
            x_prev = tape.constant(Tensor(Shape{dm.m}));
        } else {
            d = (t == 0) ? carry->d - 1 : d - 1;
        }
        out.path.hard.z[static_cast<size_t>(t)] = z;
        out.path.hard.d[static_cast<size_t>(t)] = d;

        h = tape.tanh(tape.add(tape.add(tape.bank_matvec(tv.W_x, wz, x_prev), tape.bank_matvec(tv.W_h, wz, h)),
                               tape.mix_rows(tv.b_h, wz)));
        ad::Var mu = tape.add(tape.bank_matvec(tv.W_mu, wz, h), tape.mix_rows(tv.b_mu, wz));
        ad::Var s = tape.add(tape.bank_matvec(tv.W_sigma, wz, h), tape.mix_rows(tv.b_sigma, wz));
        ad::Var dx = tape.sub(xs[static_cast<size_t>(t)], mu);
        ad::Var quad = tape.dot(dx, tape.mul(dx, tape.exp(tape.neg(s))));
        logp = tape.add(logp, tape.add(tape.scale(tape.sum(s), -0.5), tape.scale(quad, -0.5)));
        x_prev = xs[static_cast<size_t>(t)];
    }
    logp = tape.add(logp, tape.scalar(-0.5 * dm.m * kLog2Pi * T));

    out.elbo = tape.sub(logp, logq);
    out.path.log_q = tape.val(logq_value_acc)[0];

    if (carry) {
        carry->enc_h = ig.final_forward_h;
        carry->enc_c = ig.final_forward_c;
        carry->z = z;
        carry->d = d;
        carry->gen_h = tape.val(h);
        Tensor last(Shape{dm.m});
        for (int j = 0; j < dm.m; ++j) last[j] = x.frame(T - 1)[j];
        carry->x_prev = last;
        carry->mid_segment = (d > 1);
    }
    return out;
}

double elbo_term(const Sequence& x, const RelaxedPath& path, const GenerativeParams& theta) {
    double jl = joint_log_prob(x, path.hard, theta);
    if (jl == neg_inf())
        throw std::runtime_error("elbo_term: joint log-prob is -inf for sequence '" + x.id +
                                 "'; the posterior produced a path outside the prior support");
    return jl - path.log_q;
}

double elbo_term(const Sequence& x, const RelaxedPath& path, const GenerativeParams& theta,
                 const InferenceParams& phi) {
    double lq = posterior_log_prob(path.hard, x, phi, theta.no_self_transitions());
    double jl = joint_log_prob(x, path.hard, theta);
    if (jl == neg_inf())
        throw std::runtime_error("elbo_term: joint log-prob is -inf for sequence '" + x.id + "'");
    return jl - lq;
}

namespace {

void accumulate(ad::Gradients& acc, const ad::Gradients& g) {
    for (size_t i = 0; i < acc.tensors.size(); ++i)
        for (std::int64_t j = 0; j < acc.tensors[i].numel(); ++j) acc.tensors[i][j] += g.tensors[i][j];
}

void scale_gradients(ad::Gradients& g, double factor) {
    for (Tensor& t : g.tensors)
        for (std::int64_t j = 0; j < t.numel(); ++j) t[j] *= factor;
}

ad::Gradients zeros_like(const ParamStore& store) {
    ad::Gradients g;
    g.store = &store;
    for (int i = 0; i < store.size(); ++i) g.tensors.push_back(Tensor(store.value(i).shape()));
    return g;
}

// Whole-sequence or chunked evaluation of one posterior sample; adds the
// gradients of the sample's ELBO into the accumulators.
double sample_gradients(const Sequence& seq, const GenerativeParams& theta, const InferenceParams& phi,
                        Temperature tau, TrainMode mode, int chunk_len, Rng& rng, ad::Tape& tape,
                        ad::Gradients& acc_theta, ad::Gradients& acc_phi) {
    int T = seq.length();
    double elbo_value = 0.0;
    if (chunk_len <= 0 || chunk_len >= T) {
        tape.clear();
        ElboGraph g = build_elbo_graph(tape, seq, theta, phi, tau, mode, &rng);
        elbo_value = tape.val(g.elbo)[0];
        tape.backward(g.elbo);
        accumulate(acc_theta, tape.collect(theta.store()));
        accumulate(acc_phi, tape.collect(phi.store()));
        return elbo_value;
    }

    CarryState carry;
    for (int start = 0; start < T; start += chunk_len) {
        int len = std::min(chunk_len, T - start);
        Sequence chunk;
        chunk.id = seq.id;
        chunk.x = Tensor(Shape{len, seq.obs_dim()});
        for (int t = 0; t < len; ++t)
            for (int j = 0; j < seq.obs_dim(); ++j) chunk.x.at(t, j) = seq.x.at(start + t, j);

        tape.clear();
        CarryState* cp = &carry;
        ElboGraph g = build_elbo_graph(tape, chunk, theta, phi, tau, mode, &rng, nullptr, cp);
        elbo_value += tape.val(g.elbo)[0];
        tape.backward(g.elbo);
        accumulate(acc_theta, tape.collect(theta.store()));
        accumulate(acc_phi, tape.collect(phi.store()));
    }
    return elbo_value;
}

}  // namespace

BatchGradients elbo_gradients(const std::vector<const Sequence*>& batch, const GenerativeParams& theta,
                              const InferenceParams& phi, Temperature tau, const TrainConfig& cfg,
                              int iteration) {
    if (batch.empty()) throw contract_error("elbo_gradients: batch is empty");
    BatchGradients out;
    out.theta = zeros_like(theta.store());
    out.phi = zeros_like(phi.store());

    ad::Tape tape;
    int S = cfg.sample_count;
    for (const Sequence* seq : batch) {
        for (int s = 0; s < S; ++s) {
            Rng rng(derive_seed(cfg.seed ^ hash_str(seq->id), static_cast<std::uint64_t>(iteration),
                                static_cast<std::uint64_t>(s)));
            out.mean_elbo += sample_gradients(*seq, theta, phi, tau, cfg.mode, cfg.chunk_len, rng, tape,
                                              out.theta, out.phi);
        }
    }
    double inv = 1.0 / (static_cast<double>(batch.size()) * S);
    out.mean_elbo *= inv;
    scale_gradients(out.theta, inv);
    scale_gradients(out.phi, inv);

    auto check_finite = [&](const ad::Gradients& g, const ParamStore& store, const char* side) {
        for (size_t i = 0; i < g.tensors.size(); ++i)
            if (!g.tensors[i].all_finite())
                throw std::runtime_error(std::string("non-finite gradient for ") + side + " parameter '" +
                                         store.name(static_cast<int>(i)) + "' at iteration " +
                                         std::to_string(iteration));
    };
    check_finite(out.theta, theta.store(), "generative");
    check_finite(out.phi, phi.store(), "inference");
    return out;
}

void adam_step(ParamStore& params, const ad::Gradients& grads, OptimizerState& state, double lr,
               double beta1, double beta2, double eps, const std::vector<double>* lr_scale) {
    if (static_cast<int>(grads.tensors.size()) != params.size())
        throw contract_error("adam_step: gradient count does not match parameter count");
    ++state.step;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (int i = 0; i < params.size(); ++i) {
        Tensor p = params.value(i);
        Tensor& m = state.m[static_cast<size_t>(i)];
        Tensor& v = state.v[static_cast<size_t>(i)];
        const Tensor& g = grads.tensors[static_cast<size_t>(i)];
        check_same_shape(p, g, "adam_step");
        double slot_lr = lr_scale ? lr * (*lr_scale)[static_cast<size_t>(i)] : lr;
        for (std::int64_t j = 0; j < p.numel(); ++j) {
            m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
            v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
            double mhat = m[j] / bc1;
            double vhat = v[j] / bc2;
            p[j] -= slot_lr * mhat / (std::sqrt(vhat) + eps);
        }
        params.set(i, std::move(p));
    }
}

double anneal_temperature(int step, const TrainConfig& cfg) {
    if (step < 0) throw contract_error("anneal_temperature: step must be >= 0");
    if (cfg.tau_start == cfg.tau_end) return cfg.tau_end;
    if (cfg.iterations <= 0 || step >= cfg.iterations) return cfg.tau_end;
    double frac = static_cast<double>(step) / cfg.iterations;
    double tau = cfg.tau_start * std::pow(cfg.tau_end / cfg.tau_start, frac);
    return std::max(tau, cfg.tau_end);
}

double clip_gradients(ad::Gradients& g_theta, ad::Gradients& g_phi, double max_norm) {
    double norm = std::sqrt(g_theta.squared_norm() + g_phi.squared_norm());
    if (norm > max_norm && norm > 0.0) {
        double factor = max_norm / norm;
        scale_gradients(g_theta, factor);
        scale_gradients(g_phi, factor);
    }
    return norm;
}

TrainResult train(const Dataset& dataset, GenerativeParams& theta, InferenceParams& phi,
                  const TrainConfig& cfg, const IterationCallback& on_iteration,
                  const CheckpointWriter& write_checkpoint) {
    cfg.validate();
    if (dataset.empty()) throw contract_error("train: dataset is empty");
    if (dataset.obs_dim() != theta.dims().m)
        throw contract_error("train: dataset obs dim " + std::to_string(dataset.obs_dim()) + " != model m " +
                             std::to_string(theta.dims().m));

    TrainResult result;
    Rng batch_rng(derive_seed(cfg.seed, hash_str("batch"), 0));
    OptimizerState opt_theta = OptimizerState::for_store(theta.store());
    OptimizerState opt_phi = OptimizerState::for_store(phi.store());

    ParamStore good_theta = theta.store();
    ParamStore good_phi = phi.store();

    std::vector<double> theta_lr_scale(static_cast<size_t>(theta.store().size()), 1.0);
    for (const char* table : {"pi0", "trans", "dur"})
        theta_lr_scale[static_cast<size_t>(theta.store().require(table))] = cfg.table_lr_scale;

    for (int iter = 0; iter < cfg.iterations; ++iter) {
        auto started = std::chrono::steady_clock::now();
        double tau = anneal_temperature(iter, cfg);

        std::vector<const Sequence*> batch;
        batch.reserve(static_cast<size_t>(cfg.batch_size));
        for (int b = 0; b < cfg.batch_size; ++b)
            batch.push_back(&dataset.sequences[static_cast<size_t>(batch_rng.uniform_int(dataset.size()))]);

        BatchGradients grads;
        std::string failure;
        try {
            grads = elbo_gradients(batch, theta, phi, Temperature(tau), cfg, iter);
            if (!std::isfinite(grads.mean_elbo)) failure = "non-finite ELBO at iteration " + std::to_string(iter);
        } catch (const std::runtime_error& e) {
            failure = e.what();
        }
        if (!failure.empty()) {
            copy_values(theta.store(), good_theta);
            copy_values(phi.store(), good_phi);
            if (write_checkpoint) write_checkpoint(iter, theta, phi);
            result.aborted = true;
            result.abort_reason = failure;
            return result;
        }

        // ascent on the ELBO = ADAM descent on its negation
        scale_gradients(grads.theta, -1.0);
        scale_gradients(grads.phi, -1.0);
        double norm = clip_gradients(grads.theta, grads.phi, cfg.clip_norm);
        adam_step(theta.store(), grads.theta, opt_theta, cfg.learning_rate, cfg.beta1, cfg.beta2,
                  cfg.adam_eps, &theta_lr_scale);
        adam_step(phi.store(), grads.phi, opt_phi, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);

        good_theta = theta.store();
        good_phi = phi.store();

        IterationRecord rec;
        rec.iteration = iter;
        rec.mean_elbo = grads.mean_elbo;
        rec.tau = tau;
        rec.grad_norm = norm;
        rec.wall_ms =
            std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
        result.history.push_back(rec);
        if (on_iteration) on_iteration(rec);
        if (write_checkpoint && cfg.checkpoint_every > 0 && (iter + 1) % cfg.checkpoint_every == 0)
            write_checkpoint(iter + 1, theta, phi);
    }
    if (write_checkpoint) write_checkpoint(cfg.iterations, theta, phi);
    return result;
}

}  // namespace ssnn
