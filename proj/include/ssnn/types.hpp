#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ssnn/tensor.hpp"

namespace ssnn {

// Hard latent path with countdown semantics: states z_t in 1..K and remaining
// durations d_t in 1..M (d_T may exceed 1 for a right-censored final segment).
// While d_{t-1} > 1 the chain is deterministic: z_t = z_{t-1}, d_t = d_{t-1}-1.
struct LatentPath {
    std::vector<int> z;
    std::vector<int> d;

    int length() const { return static_cast<int>(z.size()); }

    bool countdown_valid() const {
        if (z.size() != d.size() || z.empty()) return false;
        for (size_t t = 0; t < z.size(); ++t)
            if (z[t] < 1 || d[t] < 1) return false;
        for (size_t t = 1; t < z.size(); ++t)
            if (d[t - 1] > 1 && (z[t] != z[t - 1] || d[t] != d[t - 1] - 1)) return false;
        return true;
    }

    // t is a segment start iff t == 0 or the previous countdown just expired.
    bool is_boundary(int t) const { return t == 0 || d[static_cast<size_t>(t) - 1] == 1; }

    std::vector<int> segment_starts() const {
        std::vector<int> starts;
        for (int t = 0; t < length(); ++t)
            if (is_boundary(t)) starts.push_back(t);
        return starts;
    }
};

// Observed sequence: x is T x m. parent_id/offset record chunk provenance.
struct Sequence {
    std::string id;
    Tensor x;
    std::optional<LatentPath> truth;
    std::string parent_id;
    int offset = 0;

    int length() const { return x.dim(0); }
    int obs_dim() const { return x.dim(1); }
    const double* frame(int t) const { return x.data() + static_cast<std::int64_t>(t) * obs_dim(); }

    void validate() const {
        if (x.rank() != 2 || x.dim(0) < 1 || x.dim(1) < 1)
            throw contract_error("sequence '" + id + "' must be T x m with T,m >= 1, got " + shape_str(x.shape()));
        x.require_finite("sequence '" + id + "'");
        if (truth && truth->length() != length())
            throw contract_error("sequence '" + id + "': truth path length " + std::to_string(truth->length()) +
                                 " != T " + std::to_string(length()));
    }
};

// Per-dimension normalization statistics (population mean / std).
struct NormStats {
    std::vector<double> mean;
    std::vector<double> std;
};

struct Dataset {
    std::vector<Sequence> sequences;
    std::optional<NormStats> stats;

    int size() const { return static_cast<int>(sequences.size()); }
    bool empty() const { return sequences.empty(); }
    int obs_dim() const { return sequences.empty() ? 0 : sequences.front().obs_dim(); }
};

}  // namespace ssnn
