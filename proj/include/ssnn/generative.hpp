#pragma once

#include <utility>

#include "ssnn/param_store.hpp"
#include "ssnn/rng.hpp"
#include "ssnn/types.hpp"

namespace ssnn {

struct ModelDims {
    int K = 1;  // state count
    int M = 1;  // maximum duration
    int m = 1;  // observation dim
    int h = 1;  // recurrent dim
    int e = 1;  // encoder state dim (per direction)
    int q = 1;  // backward-summary dim
};

// Generative parameters theta. Probability tables are stored as unconstrained
// logits and normalized on read (log-softmax), so the same container serves
// hand-built models (already-normalized rows) and ADAM-trained ones.
//
// Slots: pi0[K], trans[K,K], dur[K,M], W_x[K,h,m], W_h[K,h,h], b_h[K,h],
// h0[K,h], W_mu[K,m,h], b_mu[K,m], W_sigma[K,m,h], b_sigma[K,m].
class GenerativeParams {
public:
    // no_self_transitions: strict segment-change semantics. The transition
    // diagonal is masked to (effectively) zero probability on read; posterior
    // samplers must then avoid re-picking the previous state at boundaries.
    GenerativeParams(ModelDims dims, ParamStore store, bool no_self_transitions = false);

    // Uniform-plus-Dirichlet(1)-jitter tables, Normal(0, 1/fan_in) weights,
    // zero gate biases, unit-spread emission means.
    static GenerativeParams random_init(const ModelDims& dims, Rng& rng, bool no_self_transitions = false);

    const ModelDims& dims() const { return dims_; }
    bool no_self_transitions() const { return no_self_transitions_; }
    ParamStore& store() { return store_; }
    const ParamStore& store() const { return store_; }

    const Tensor& pi0() const { return store_.value(slot_pi0_); }
    const Tensor& trans() const { return store_.value(slot_trans_); }
    const Tensor& dur() const { return store_.value(slot_dur_); }
    const Tensor& W_x() const { return store_.value(slot_W_x_); }
    const Tensor& W_h() const { return store_.value(slot_W_h_); }
    const Tensor& b_h() const { return store_.value(slot_b_h_); }
    const Tensor& h0() const { return store_.value(slot_h0_); }
    const Tensor& W_mu() const { return store_.value(slot_W_mu_); }
    const Tensor& b_mu() const { return store_.value(slot_b_mu_); }
    const Tensor& W_sigma() const { return store_.value(slot_W_sigma_); }
    const Tensor& b_sigma() const { return store_.value(slot_b_sigma_); }

    // Normalized log-probability views.
    Tensor log_init() const;        // [K]
    Tensor log_trans_rows() const;  // [K,K], row = given z_{t-1}
    Tensor log_dur_rows() const;    // [K,M], row = given z_t

    void validate() const;

private:
    ModelDims dims_;
    ParamStore store_;
    bool no_self_transitions_ = false;
    int slot_pi0_, slot_trans_, slot_dur_, slot_W_x_, slot_W_h_, slot_b_h_, slot_h0_;
    int slot_W_mu_, slot_b_mu_, slot_W_sigma_, slot_b_sigma_;
};

// Log-domain mask for structurally excluded choices: finite (so no NaN from
// 0 * -inf in mixtures) but exp() underflows to exactly 0.
inline constexpr double kStructuralMask = -1e9;

// --- Operations (plain double math; the training module builds the same
// --- computations on a tape for gradients) ---

// Distribution over the next (z, d) pair, as a K*M log-probability vector
// indexed pair = (z-1)*M + (d-1). Deterministic countdown when d_prev > 1.
Tensor transition_log_probs(int z_prev, int d_prev, const GenerativeParams& params);

// h_new = tanh(W_x^(w) x_prev + W_h^(w) h_prev + b_h^(w)) with bank mixture
// weights w on the K-simplex (exact slice selection when one-hot).
Tensor recurrent_update(const Tensor& h_prev, const Tensor& x_prev, const Tensor& state_weights,
                        const GenerativeParams& params);

// Diagonal-Gaussian emission log-density of x given h under mixed state heads.
double emission_log_prob(const Tensor& x, const Tensor& h, const Tensor& state_weights,
                         const GenerativeParams& params);

// Sum of emission log-probs over x[start .. start+dur-1] with the within-
// segment recurrence; h starts from h0^(w) and the first step sees x_prev = 0.
double segment_log_prob(const Sequence& x, int start, int dur, const Tensor& state_weights,
                        const GenerativeParams& params);
double segment_log_prob(const Sequence& x, int start, int dur, int state, const GenerativeParams& params);

// log p(x, z, d); -inf for paths violating the countdown.
double joint_log_prob(const Sequence& x, const LatentPath& path, const GenerativeParams& params);

// Ancestral sampling of T steps. Deterministic under a fixed rng state.
std::pair<Sequence, LatentPath> sample_sequence(const GenerativeParams& params, int T, Rng& rng,
                                                const std::string& id = "sample");

// One-hot helper used wherever a hard state feeds a mixture op.
Tensor one_hot(int index, int n);

// Incremental segment scorer: each step() returns the next emission log-prob
// of a segment starting at `start` under the given state weights. Shared by
// segment_log_prob and the oracle score table so the two agree exactly.
class SegmentScorer {
public:
    SegmentScorer(const Sequence& x, int start, Tensor state_weights, const GenerativeParams& params);
    SegmentScorer(const Sequence& x, int start, int state, const GenerativeParams& params);

    double step();

private:
    const Sequence& x_;
    const GenerativeParams& params_;
    Tensor weights_;
    int t_;  // absolute time of the next emission
    int start_;
    Tensor h_;
};

}  // namespace ssnn
