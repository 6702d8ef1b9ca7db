#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "modeconn/tensor.hpp"

namespace modeconn {

struct Dense {
    int in = 0;
    int out = 0;
};
struct Conv2D {
    int in_ch = 0;
    int out_ch = 0;
    int kernel = 0;
    int stride = 1;
    int padding = 0;
};
struct ReLU {};
struct Flatten {};
struct MaxPool2D {
    int kernel = 0;
};

using LayerDesc = std::variant<Dense, Conv2D, ReLU, Flatten, MaxPool2D>;

std::string layer_name(const LayerDesc& l);

// Architecture description. Input is (channels, height, width); the layer
// chain must compose, and the final activation must have num_classes values.
struct ModelSpec {
    std::array<int, 3> input_shape{};  // (C,H,W)
    std::vector<LayerDesc> layers;
    int num_classes = 0;

    // Activation shape after each layer; index 0 is the input shape.
    // Throws if adjacent layers do not compose.
    std::vector<std::vector<int>> activation_shapes() const;
    void validate() const;

    bool operator==(const ModelSpec& o) const;
};

struct Segment {
    std::int64_t offset = 0;
    std::int64_t length = 0;

    bool operator==(const Segment& o) const { return offset == o.offset && length == o.length; }
};

// Flat parameter vector. One segment per layer (length 0 for layers
// without parameters); segments are contiguous and cover data exactly.
struct WeightVector {
    std::vector<Segment> layout;
    std::vector<double> data;

    std::int64_t size() const { return static_cast<std::int64_t>(data.size()); }
    bool layout_matches(const WeightVector& o) const { return layout == o.layout; }
};

// Segment lengths are a function of the spec alone.
WeightVector make_weight_vector(const ModelSpec& spec);
std::int64_t weight_count(const ModelSpec& spec);

// Within a layer segment, weights come first and biases last; this returns
// the bias offset relative to the segment start (== weight count).
std::int64_t layer_bias_offset(const LayerDesc& l);

struct Model {
    ModelSpec spec;
    WeightVector weights;
};

Model make_model(const ModelSpec& spec);

// He-uniform initialization per layer, biases zero. Deterministic per seed.
Model init_model(const ModelSpec& spec, std::uint64_t seed);

// Common desk-scale architectures.
ModelSpec mlp_spec(std::array<int, 3> input, int hidden, int num_classes);
ModelSpec cnn_spec(std::array<int, 3> input, int num_classes, int conv_blocks = 3);

}  // namespace modeconn
