#pragma once

#include "ssnn/generative.hpp"
#include "ssnn/tape.hpp"

namespace ssnn {

struct Temperature {
    double tau;
    explicit Temperature(double t) : tau(t) {
        if (!(t > 0.0)) throw contract_error("temperature must be positive, got " + std::to_string(t));
    }
};

// Inference parameters phi: a bi-directional LSTM encoder over x, a gated
// backward recurrence producing summaries I_t from (I_{t+1}, [x_t, hhat_t])
// with a learned terminal I_{T+1}, and linear posterior heads for z and d.
//
// Slots: enc_f_W[4e,m], enc_f_U[4e,e], enc_f_b[4e] (forward cell; gate order
// i,f,g,o), enc_b_* (backward cell), sum_{Wr,Wz,Wc}[q,m+2e], sum_{Ur,Uz,Uc}
// [q,q], sum_{br,bz,bc}[q], sum_I_term[q], head_Wz[q,K], head_Wd[q,M].
class InferenceParams {
public:
    InferenceParams(ModelDims dims, ParamStore store);

    // Normal(0, 1/fan_in) weights, zero biases except forget-gate bias = 1.
    static InferenceParams random_init(const ModelDims& dims, Rng& rng);

    const ModelDims& dims() const { return dims_; }
    ParamStore& store() { return store_; }
    const ParamStore& store() const { return store_; }

    void validate() const;

private:
    ModelDims dims_;
    ParamStore store_;
};

// Forward-encoder state handed between truncated-BPTT chunks (detached).
struct EncoderCarry {
    Tensor h, c;
};

// Tape-built inference pass over a sequence.
struct InferenceGraph {
    std::vector<ad::Var> hhat;       // T vars of [2e]
    std::vector<ad::Var> summaries;  // T vars of [q]  (I_t)
    Tensor final_forward_h, final_forward_c;
};

InferenceGraph build_inference_graph(ad::Tape& tape, const Sequence& x, const InferenceParams& phi,
                                     const EncoderCarry* carry = nullptr);

// Boundary posterior logits on the tape: (logits_z [K], logits_d [M]).
std::pair<ad::Var, ad::Var> posterior_logit_vars(ad::Tape& tape, ad::Var summary, const InferenceParams& phi);

// Value-side posterior tables: everything a sampler or scorer needs, computed
// once per sequence (the tape is used internally and discarded).
struct PosteriorTables {
    int T = 0, K = 0, M = 0;
    Tensor hhat;               // [T, 2e]
    Tensor summaries;          // [T, q]
    Tensor logits_z;           // [T, K]
    Tensor logits_d;           // [T, M]
    Tensor joint_logits;       // [T, K*M], pair = (z-1)*M + (d-1)
    Tensor joint_log_softmax;  // [T, K*M]
};

PosteriorTables compute_posterior_tables(const Sequence& x, const InferenceParams& phi);

// Value-side posterior logits for one summary row.
std::pair<Tensor, Tensor> posterior_logits(const Tensor& summary, const InferenceParams& phi);

// y_i = exp((logits_i + g_i)/tau) / sum_j exp(...); argmax(y) = argmax(logits+g).
Tensor gumbel_softmax(const Tensor& logits, Temperature tau, const Tensor& gumbel_noise);

// One Gumbel-Softmax boundary decision of a sampled path.
struct BoundarySample {
    int t = 0;      // boundary time, 0-based
    int pair = 0;   // hard pair index (z-1)*M + (d-1)
    Tensor gumbel;  // frozen noise [K*M]
    Tensor y;       // relaxed sample [K*M]
};

// Gumbel-Softmax relaxation of a sampled (z, d) path: simplex samples at the
// boundary steps plus the argmax-decoded hard path and its posterior log-prob.
struct RelaxedPath {
    std::vector<BoundarySample> boundaries;
    LatentPath hard;
    double log_q = 0.0;
    double tau = 1.0;
};

struct SampleOptions {
    bool zero_noise = false;          // greedy argmax decoding
    bool no_self_transitions = false;  // mask the previous state at boundaries
};

RelaxedPath sample_posterior_path(const PosteriorTables& tables, Temperature tau, Rng& rng,
                                  const SampleOptions& opts = {});
RelaxedPath sample_posterior_path(const Sequence& x, const InferenceParams& phi, Temperature tau, Rng& rng,
                                  const SampleOptions& opts = {});

// Sum over boundary steps of log softmax probability of the path's pair;
// -inf on countdown violations. The masking flag must match the sampler's.
double posterior_log_prob(const LatentPath& path, const PosteriorTables& tables,
                          bool no_self_transitions = false);
double posterior_log_prob(const LatentPath& path, const Sequence& x, const InferenceParams& phi,
                          bool no_self_transitions = false);

}  // namespace ssnn
