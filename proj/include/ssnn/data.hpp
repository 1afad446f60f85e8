#pragma once

#include <string>
#include <vector>

#include "ssnn/generative.hpp"
#include "ssnn/types.hpp"

namespace ssnn {

enum class ObservationMode { TrigFeatures, RenderedImage };

struct PendulumConfig {
    double mass = 1.0;
    double length = 1.0;
    double damping = 0.5;  // mu
    double gravity = 9.81;
    bool torque_enabled = false;       // piecewise-constant random torque
    double torque_limit = 2.0;         // uniform in [-limit, limit]
    double torque_hold_seconds = 0.5;  // resample period
    double dt = 0.01;
    double duration = 10.0;  // simulated seconds
    ObservationMode mode = ObservationMode::TrigFeatures;
    int image_side = 16;
    double noise_std = 0.05;

    void validate() const;
    int steps() const { return static_cast<int>(duration / dt + 0.5); }
    int obs_dim() const { return mode == ObservationMode::TrigFeatures ? 2 : image_side * image_side; }
};

struct PendulumTrajectory {
    std::vector<double> angles;      // phi_t
    std::vector<double> velocities;  // dphi/dt
    Tensor observations;             // T x m
};

// Integrates ml^2 phi'' = -mu phi' + m g l sin(phi) + u(t) with classical RK4
// from (phi0, omega0); emits one observation per step (after stepping).
PendulumTrajectory simulate_pendulum(const PendulumConfig& config, double phi0, double omega0, Rng& rng);

// Random initial conditions: phi0 ~ U(-pi, pi), omega0 ~ U(-2, 2).
PendulumTrajectory simulate_pendulum(const PendulumConfig& config, Rng& rng);

// Undamped, untorqued invariant E = 1/2 w^2 + g cos(phi) (m = l = 1).
double pendulum_energy(double phi, double omega, double gravity);

// `count` sequences of length T sampled from theta, truths attached.
Dataset generate_ssnn_dataset(const GenerativeParams& theta_true, int count, int T, Rng& rng);

// Pendulum dataset: observations plus a probe-target dataset holding
// [sin phi, cos phi, dphi/dt] per frame under the same sequence ids.
struct PendulumDataset {
    Dataset data;
    Dataset probe_targets;
};
PendulumDataset generate_pendulum_dataset(const PendulumConfig& config, int count, Rng& rng);

enum class FileFormat { Csv, RawF32 };

// csv: header seq_id,t,x0..x{m-1}. raw-f32: magic "SSNNDAT1", u32 count,
// per sequence (u32 id length, id bytes, u32 T, u32 m, row-major f32 data),
// all integers little-endian. Writes are atomic (temp file + rename).
void write_dataset(const Dataset& dataset, const std::string& path, FileFormat format);
Dataset read_dataset(const std::string& path, FileFormat format);

// Truth sidecar csv: header seq_id,t,z,d.
void write_truth_sidecar(const Dataset& dataset, const std::string& path);
void read_truth_sidecar(Dataset& dataset, const std::string& path);

// Population mean/std per dimension over all frames.
NormStats compute_norm_stats(const Dataset& dataset);
void apply_normalization(Dataset& dataset, const NormStats& stats);

// Non-overlapping chunks with (parent id, offset) provenance; chunk ids are
// "<parent>@<offset>".
Dataset chunk_sequences(const Dataset& dataset, int chunk_len);

struct Split {
    Dataset train;  // stats computed from this fold's training half
    Dataset test;
};

// One split per sequence; train stats recomputed per split.
std::vector<Split> leave_one_out_splits(const Dataset& dataset);

}  // namespace ssnn
