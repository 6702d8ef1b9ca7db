#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "modeconn/curve.hpp"
#include "modeconn/model.hpp"

namespace modeconn {

// Binary checkpoint: 8-byte magic "MCONNCK1", little-endian u32 header
// length, JSON header, then the payload as little-endian 64-bit floats.
// Model payload is one weight vector; curve payload is w1, w2, theta
// concatenated. Round trips are bit-identical.

nlohmann::json spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const nlohmann::json& j);

void save_model_checkpoint(const std::string& path, const Model& model,
                           const std::vector<std::uint64_t>& seeds = {});
Model load_model_checkpoint(const std::string& path);

void save_curve_checkpoint(const std::string& path, const CurveSpec& curve,
                           const std::vector<std::uint64_t>& seeds = {});
CurveSpec load_curve_checkpoint(const std::string& path);

// Header of either kind without the payload.
struct CheckpointInfo {
    int version = 0;
    std::string kind;  // "model" or "curve"
    ModelSpec spec;
    std::string curve_kind;  // curve only
    bool endpoints_trainable = false;
    std::vector<std::uint64_t> seeds;
    std::int64_t payload_count = 0;
};

CheckpointInfo read_checkpoint_info(const std::string& path);

}  // namespace modeconn
