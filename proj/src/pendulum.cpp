#include <cmath>

#include "ssnn/data.hpp"

namespace ssnn {

void PendulumConfig::validate() const {
    if (!(mass > 0.0) || !(length > 0.0) || !(gravity > 0.0))
        throw contract_error("pendulum config: physical constants must be positive");
    if (!(dt > 0.0)) throw contract_error("pendulum config: dt must be positive");
    if (!(duration > 0.0)) throw contract_error("pendulum config: duration must be positive");
    if (damping < 0.0) throw contract_error("pendulum config: damping must be >= 0");
    if (mode == ObservationMode::RenderedImage && image_side < 2)
        throw contract_error("pendulum config: image_side must be >= 2");
    if (noise_std < 0.0) throw contract_error("pendulum config: noise_std must be >= 0");
}

double pendulum_energy(double phi, double omega, double gravity) {
    return 0.5 * omega * omega + gravity * std::cos(phi);
}

namespace {

struct PendulumState {
    double phi, omega;
};

// ml^2 phi'' = -mu phi' + m g l sin(phi) + u
PendulumState derivative(const PendulumState& s, double torque, const PendulumConfig& c) {
    double ml2 = c.mass * c.length * c.length;
    double accel = (-c.damping * s.omega + c.mass * c.gravity * c.length * std::sin(s.phi) + torque) / ml2;
    return {s.omega, accel};
}

PendulumState rk4_step(const PendulumState& s, double torque, const PendulumConfig& c) {
    double h = c.dt;
    PendulumState k1 = derivative(s, torque, c);
    PendulumState k2 = derivative({s.phi + 0.5 * h * k1.phi, s.omega + 0.5 * h * k1.omega}, torque, c);
    PendulumState k3 = derivative({s.phi + 0.5 * h * k2.phi, s.omega + 0.5 * h * k2.omega}, torque, c);
    PendulumState k4 = derivative({s.phi + h * k3.phi, s.omega + h * k3.omega}, torque, c);
    return {s.phi + h / 6.0 * (k1.phi + 2.0 * k2.phi + 2.0 * k3.phi + k4.phi),
            s.omega + h / 6.0 * (k1.omega + 2.0 * k2.omega + 2.0 * k3.omega + k4.omega)};
}

// Rod endpoint rasterized as a Gaussian blob on an s x s grid.
void render_blob(double phi, int side, double* out) {
    double cx = 0.5 * (side - 1) * (1.0 + 0.8 * std::sin(phi));
    double cy = 0.5 * (side - 1) * (1.0 + 0.8 * std::cos(phi));
    double inv2s2 = 1.0 / (2.0 * 0.08 * (side - 1) * 0.08 * (side - 1));
    for (int r = 0; r < side; ++r)
        for (int c = 0; c < side; ++c) {
            double dr = r - cy, dc = c - cx;
            out[r * side + c] = std::exp(-(dr * dr + dc * dc) * inv2s2);
        }
}

}  // namespace

PendulumTrajectory simulate_pendulum(const PendulumConfig& config, double phi0, double omega0, Rng& rng) {
    config.validate();
    int T = config.steps();
    if (T < 1) throw contract_error("pendulum config: duration shorter than one step");
    int m = config.obs_dim();

    PendulumTrajectory out;
    out.angles.reserve(static_cast<size_t>(T));
    out.velocities.reserve(static_cast<size_t>(T));
    out.observations = Tensor(Shape{T, m});

    PendulumState state{phi0, omega0};
    double torque = 0.0;
    int hold_steps = std::max(1, static_cast<int>(config.torque_hold_seconds / config.dt + 0.5));
    std::vector<double> pixels(static_cast<size_t>(m));
    for (int t = 0; t < T; ++t) {
        if (config.torque_enabled && t % hold_steps == 0)
            torque = rng.uniform(-config.torque_limit, config.torque_limit);
        state = rk4_step(state, torque, config);
        out.angles.push_back(state.phi);
        out.velocities.push_back(state.omega);
        if (config.mode == ObservationMode::TrigFeatures) {
            out.observations.at(t, 0) = std::sin(state.phi) + config.noise_std * rng.normal();
            out.observations.at(t, 1) = std::cos(state.phi) + config.noise_std * rng.normal();
        } else {
            render_blob(state.phi, config.image_side, pixels.data());
            for (int j = 0; j < m; ++j)
                out.observations.at(t, j) = pixels[static_cast<size_t>(j)] + config.noise_std * rng.normal();
        }
    }
    return out;
}

PendulumTrajectory simulate_pendulum(const PendulumConfig& config, Rng& rng) {
    double phi0 = rng.uniform(-M_PI, M_PI);
    double omega0 = rng.uniform(-2.0, 2.0);
    return simulate_pendulum(config, phi0, omega0, rng);
}

PendulumDataset generate_pendulum_dataset(const PendulumConfig& config, int count, Rng& rng) {
    if (count < 0) throw contract_error("generate_pendulum_dataset: count must be >= 0");
    PendulumDataset out;
    for (int i = 0; i < count; ++i) {
        PendulumTrajectory traj = simulate_pendulum(config, rng);
        int T = static_cast<int>(traj.angles.size());
        Sequence seq;
        seq.id = "pend" + std::to_string(i);
        seq.x = std::move(traj.observations);
        out.data.sequences.push_back(std::move(seq));

        Sequence targets;
        targets.id = "pend" + std::to_string(i);
        targets.x = Tensor(Shape{T, 3});
        for (int t = 0; t < T; ++t) {
            targets.x.at(t, 0) = std::sin(traj.angles[static_cast<size_t>(t)]);
            targets.x.at(t, 1) = std::cos(traj.angles[static_cast<size_t>(t)]);
            targets.x.at(t, 2) = traj.velocities[static_cast<size_t>(t)];
        }
        out.probe_targets.sequences.push_back(std::move(targets));
    }
    return out;
}

Dataset generate_ssnn_dataset(const GenerativeParams& theta_true, int count, int T, Rng& rng) {
    if (count < 0) throw contract_error("generate_ssnn_dataset: count must be >= 0");
    Dataset out;
    for (int i = 0; i < count; ++i) {
        auto [seq, path] = sample_sequence(theta_true, T, rng, "ssnn" + std::to_string(i));
        out.sequences.push_back(std::move(seq));
    }
    return out;
}

}  // namespace ssnn
