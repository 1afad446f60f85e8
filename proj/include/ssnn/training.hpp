#pragma once

#include <functional>
#include <string>

#include "ssnn/inference.hpp"

namespace ssnn {

enum class TrainMode { HardST, Relaxed };

inline const char* train_mode_name(TrainMode m) { return m == TrainMode::HardST ? "hard-st" : "relaxed"; }

struct TrainConfig {
    int batch_size = 8;
    int iterations = 200;
    double learning_rate = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double tau_start = 0.15;
    double tau_end = 0.01;
    std::string anneal = "exponential";  // per-step exponential schedule
    TrainMode mode = TrainMode::HardST;
    double clip_norm = 10.0;
    std::uint64_t seed = 0;
    int chunk_len = 0;     // truncated-BPTT chunk length; 0 = whole sequence
    int sample_count = 1;  // posterior samples per sequence per iteration
    int checkpoint_every = 0;
    bool no_self_transitions = false;  // strict segment-change semantics
    // Learning-rate multiplier for the probability tables (pi0, trans, dur).
    // Emission parameters must differentiate before the tables lock in a
    // structural preference, otherwise the states collapse.
    double table_lr_scale = 0.1;
    ModelDims dims;

    void validate() const;
};

struct OptimizerState {
    std::vector<Tensor> m, v;
    long step = 0;

    static OptimizerState for_store(const ParamStore& store);
};

struct IterationRecord {
    int iteration = 0;
    double mean_elbo = 0.0;
    double tau = 0.0;
    double grad_norm = 0.0;  // global norm before clipping
    double wall_ms = 0.0;
};

using TrainHistory = std::vector<IterationRecord>;

// Hidden state carried between truncated-BPTT chunks (values, detached).
struct CarryState {
    Tensor enc_h, enc_c;  // forward encoder cell
    int z = 0, d = 0;     // hard countdown at the last step of the chunk
    Tensor gen_h;         // generative recurrent state
    Tensor x_prev;        // last observation
    bool mid_segment = false;
};

struct ElboGraph {
    ad::Var elbo;
    RelaxedPath path;
};

// Builds F(z,d) (hard-ST) or its relaxation F~(y,g) on the tape. The boundary
// structure always follows the hard argmax path; `frozen` replays a previous
// realization's noise and decisions (for gradient audits), otherwise rng
// draws fresh noise. `carry`, when given, chains chunks.
ElboGraph build_elbo_graph(ad::Tape& tape, const Sequence& x, const GenerativeParams& theta,
                           const InferenceParams& phi, Temperature tau, TrainMode mode, Rng* rng,
                           const RelaxedPath* frozen = nullptr, CarryState* carry = nullptr);

// Hard-path ELBO value: log p(x, z, d) - log q(z, d | x). Throws if the joint
// is -inf (the boundary masking is supposed to make that impossible).
double elbo_term(const Sequence& x, const RelaxedPath& path, const GenerativeParams& theta,
                 const InferenceParams& phi);
double elbo_term(const Sequence& x, const RelaxedPath& path, const GenerativeParams& theta);

struct BatchGradients {
    ad::Gradients theta;
    ad::Gradients phi;
    double mean_elbo = 0.0;
};

// One posterior sample per sequence (times cfg.sample_count); a single tape
// per sample yields both gradient sets. Noise streams are keyed by
// (seed, sequence id, iteration, sample) so duplicates share noise.
BatchGradients elbo_gradients(const std::vector<const Sequence*>& batch, const GenerativeParams& theta,
                              const InferenceParams& phi, Temperature tau, const TrainConfig& cfg,
                              int iteration);

// Bias-corrected ADAM descent step on `grads`; lr_scale, when given, holds a
// per-slot learning-rate multiplier.
void adam_step(ParamStore& params, const ad::Gradients& grads, OptimizerState& state, double lr,
               double beta1, double beta2, double eps, const std::vector<double>* lr_scale = nullptr);

// tau(step) = tau_start * (tau_end / tau_start)^(step / iterations), clamped.
double anneal_temperature(int step, const TrainConfig& cfg);

// Joint global-norm clip across both gradient sets; returns the pre-clip norm.
double clip_gradients(ad::Gradients& g_theta, ad::Gradients& g_phi, double max_norm);

struct TrainResult {
    TrainHistory history;
    bool aborted = false;
    std::string abort_reason;
};

using IterationCallback = std::function<void(const IterationRecord&)>;
using CheckpointWriter = std::function<void(int iteration, const GenerativeParams&, const InferenceParams&)>;

// Algorithm: sample a batch -> posterior samples -> ELBO -> gradients -> ADAM
// -> anneal tau. On a non-finite loss or gradient the last good parameters
// are restored (and checkpointed) before returning with aborted = true.
TrainResult train(const Dataset& dataset, GenerativeParams& theta, InferenceParams& phi,
                  const TrainConfig& cfg, const IterationCallback& on_iteration = nullptr,
                  const CheckpointWriter& write_checkpoint = nullptr);

}  // namespace ssnn
