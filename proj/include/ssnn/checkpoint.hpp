#pragma once

#include <optional>
#include <string>

#include "ssnn/inference.hpp"
#include "ssnn/training.hpp"

namespace ssnn {

// Self-describing parameter container. Layout: 8-byte magic "SSNNCKP1",
// u32 format version, u32 tensor count, per tensor (u32 name length, name
// bytes, u32 rank, dims as u32, 64-bit little-endian floats), then a
// length-prefixed UTF-8 JSON blob with dims, the train config and the
// normalization stats. Theta slots are stored as "theta/<name>", phi slots
// as "phi/<name>".
struct Checkpoint {
    ModelDims dims;
    GenerativeParams theta;
    InferenceParams phi;
    TrainConfig config;
    std::optional<NormStats> stats;

    Checkpoint(ModelDims d, GenerativeParams t, InferenceParams p)
        : dims(d), theta(std::move(t)), phi(std::move(p)) {}
};

constexpr int kCheckpointVersion = 1;

void write_checkpoint_file(const Checkpoint& ckpt, const std::string& path);
Checkpoint read_checkpoint_file(const std::string& path);

}  // namespace ssnn
