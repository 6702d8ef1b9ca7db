#include "modeconn/model.hpp"

#include <cmath>
#include <stdexcept>

#include "modeconn/rng.hpp"

namespace modeconn {

std::string layer_name(const LayerDesc& l) {
    struct V {
        std::string operator()(const Dense& d) const {
            return "dense(" + std::to_string(d.in) + "," + std::to_string(d.out) + ")";
        }
        std::string operator()(const Conv2D& c) const {
            return "conv2d(" + std::to_string(c.in_ch) + "," + std::to_string(c.out_ch) + ",k" +
                   std::to_string(c.kernel) + ",s" + std::to_string(c.stride) + ",p" +
                   std::to_string(c.padding) + ")";
        }
        std::string operator()(const ReLU&) const { return "relu"; }
        std::string operator()(const Flatten&) const { return "flatten"; }
        std::string operator()(const MaxPool2D& m) const {
            return "maxpool2d(" + std::to_string(m.kernel) + ")";
        }
    };
    return std::visit(V{}, l);
}

static std::int64_t product(const std::vector<int>& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

std::vector<std::vector<int>> ModelSpec::activation_shapes() const {
    std::vector<std::vector<int>> shapes;
    shapes.push_back({input_shape[0], input_shape[1], input_shape[2]});
    for (const auto& l : layers) {
        const auto& cur = shapes.back();
        if (std::holds_alternative<Dense>(l)) {
            const auto& d = std::get<Dense>(l);
            if (d.in <= 0 || d.out <= 0) throw std::invalid_argument("dense: non-positive dims");
            if (product(cur) != d.in)
                throw std::invalid_argument("dense expects " + std::to_string(d.in) +
                                            " inputs, got shape " + shape_str(cur));
            shapes.push_back({d.out});
        } else if (std::holds_alternative<Conv2D>(l)) {
            const auto& c = std::get<Conv2D>(l);
            if (cur.size() != 3)
                throw std::invalid_argument("conv2d expects (C,H,W) input, got " + shape_str(cur));
            if (c.kernel <= 0 || c.stride <= 0 || c.padding < 0 || c.in_ch <= 0 || c.out_ch <= 0)
                throw std::invalid_argument("conv2d: invalid parameters");
            if (cur[0] != c.in_ch)
                throw std::invalid_argument("conv2d expects " + std::to_string(c.in_ch) +
                                            " channels, got shape " + shape_str(cur));
            int oh = (cur[1] + 2 * c.padding - c.kernel) / c.stride + 1;
            int ow = (cur[2] + 2 * c.padding - c.kernel) / c.stride + 1;
            if (cur[1] + 2 * c.padding < c.kernel || cur[2] + 2 * c.padding < c.kernel)
                throw std::invalid_argument("conv2d kernel larger than padded input");
            shapes.push_back({c.out_ch, oh, ow});
        } else if (std::holds_alternative<ReLU>(l)) {
            shapes.push_back(cur);
        } else if (std::holds_alternative<Flatten>(l)) {
            shapes.push_back({static_cast<int>(product(cur))});
        } else {
            const auto& m = std::get<MaxPool2D>(l);
            if (cur.size() != 3)
                throw std::invalid_argument("maxpool2d expects (C,H,W) input, got " +
                                            shape_str(cur));
            if (m.kernel <= 0 || cur[1] < m.kernel || cur[2] < m.kernel)
                throw std::invalid_argument("maxpool2d kernel does not fit input " +
                                            shape_str(cur));
            shapes.push_back({cur[0], cur[1] / m.kernel, cur[2] / m.kernel});
        }
    }
    return shapes;
}

void ModelSpec::validate() const {
    if (num_classes <= 0) throw std::invalid_argument("model spec: num_classes must be positive");
    for (int d : input_shape)
        if (d <= 0) throw std::invalid_argument("model spec: non-positive input dimension");
    auto shapes = activation_shapes();
    if (product(shapes.back()) != num_classes)
        throw std::invalid_argument("model spec: final layer produces " +
                                    std::to_string(product(shapes.back())) + " values, expected " +
                                    std::to_string(num_classes) + " classes");
}

bool ModelSpec::operator==(const ModelSpec& o) const {
    if (input_shape != o.input_shape || num_classes != o.num_classes ||
        layers.size() != o.layers.size())
        return false;
    for (std::size_t i = 0; i < layers.size(); ++i)
        if (layer_name(layers[i]) != layer_name(o.layers[i])) return false;
    return true;
}

static std::int64_t layer_param_count(const LayerDesc& l) {
    if (std::holds_alternative<Dense>(l)) {
        const auto& d = std::get<Dense>(l);
        return static_cast<std::int64_t>(d.in) * d.out + d.out;
    }
    if (std::holds_alternative<Conv2D>(l)) {
        const auto& c = std::get<Conv2D>(l);
        return static_cast<std::int64_t>(c.out_ch) * c.in_ch * c.kernel * c.kernel + c.out_ch;
    }
    return 0;
}

std::int64_t layer_bias_offset(const LayerDesc& l) {
    if (std::holds_alternative<Dense>(l)) {
        const auto& d = std::get<Dense>(l);
        return static_cast<std::int64_t>(d.in) * d.out;
    }
    if (std::holds_alternative<Conv2D>(l)) {
        const auto& c = std::get<Conv2D>(l);
        return static_cast<std::int64_t>(c.out_ch) * c.in_ch * c.kernel * c.kernel;
    }
    return 0;
}

WeightVector make_weight_vector(const ModelSpec& spec) {
    WeightVector w;
    std::int64_t offset = 0;
    for (const auto& l : spec.layers) {
        std::int64_t n = layer_param_count(l);
        w.layout.push_back({offset, n});
        offset += n;
    }
    w.data.assign(static_cast<std::size_t>(offset), 0.0);
    return w;
}

std::int64_t weight_count(const ModelSpec& spec) {
    std::int64_t n = 0;
    for (const auto& l : spec.layers) n += layer_param_count(l);
    return n;
}

Model make_model(const ModelSpec& spec) {
    spec.validate();
    return Model{spec, make_weight_vector(spec)};
}

Model init_model(const ModelSpec& spec, std::uint64_t seed) {
    Model m = make_model(spec);
    auto rng = make_rng(seed, /*stream=*/0x1A17);
    for (std::size_t li = 0; li < spec.layers.size(); ++li) {
        const auto& l = spec.layers[li];
        std::int64_t fan_in = 0;
        if (std::holds_alternative<Dense>(l)) fan_in = std::get<Dense>(l).in;
        else if (std::holds_alternative<Conv2D>(l)) {
            const auto& c = std::get<Conv2D>(l);
            fan_in = static_cast<std::int64_t>(c.in_ch) * c.kernel * c.kernel;
        } else
            continue;
        double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
        std::uniform_real_distribution<double> dist(-limit, limit);
        const Segment& seg = m.weights.layout[li];
        std::int64_t nb = layer_bias_offset(l);
        for (std::int64_t i = 0; i < nb; ++i) m.weights.data[seg.offset + i] = dist(rng);
        // biases stay zero
    }
    return m;
}

ModelSpec mlp_spec(std::array<int, 3> input, int hidden, int num_classes) {
    int flat = input[0] * input[1] * input[2];
    ModelSpec s;
    s.input_shape = input;
    s.num_classes = num_classes;
    s.layers = {Flatten{}, Dense{flat, hidden}, ReLU{}, Dense{hidden, num_classes}};
    s.validate();
    return s;
}

ModelSpec cnn_spec(std::array<int, 3> input, int num_classes, int conv_blocks) {
    if (conv_blocks < 2) throw std::invalid_argument("cnn_spec: conv_blocks must be >= 2");
    ModelSpec s;
    s.input_shape = input;
    s.num_classes = num_classes;
    int h = input[1] / 2 / 2;
    int w = input[2] / 2 / 2;
    s.layers = {Conv2D{input[0], 8, 3, 1, 1},
                ReLU{},
                MaxPool2D{2},
                Conv2D{8, 16, 3, 1, 1},
                ReLU{},
                MaxPool2D{2}};
    // extra 16-channel blocks keep the spatial size; depth is a tuning knob
    for (int b = 2; b < conv_blocks; ++b) {
        s.layers.push_back(Conv2D{16, 16, 3, 1, 1});
        s.layers.push_back(ReLU{});
    }
    s.layers.push_back(Flatten{});
    s.layers.push_back(Dense{16 * h * w, num_classes});
    s.validate();
    return s;
}

}  // namespace modeconn
