#include "modeconn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace modeconn {

namespace {

constexpr char kMagic[8] = {'M', 'C', 'O', 'N', 'N', 'C', 'K', '1'};
constexpr int kVersion = 1;

void write_u32le(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32le(std::istream& in) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw std::runtime_error("truncated checkpoint header");
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
           (std::uint32_t(b[3]) << 24);
}

void write_f64le(std::ostream& out, double v) {
    std::uint64_t u = std::bit_cast<std::uint64_t>(v);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) {
        b[i] = static_cast<unsigned char>(u & 0xFF);
        u >>= 8;
    }
    out.write(reinterpret_cast<const char*>(b), 8);
}

double read_f64le(std::istream& in) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8))
        throw std::runtime_error("truncated checkpoint payload");
    std::uint64_t u = 0;
    for (int i = 7; i >= 0; --i) u = (u << 8) | b[i];
    return std::bit_cast<double>(u);
}

void write_checkpoint(const std::string& path, const nlohmann::json& header,
                      const std::vector<const WeightVector*>& payload) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open for writing: " + tmp);
        out.write(kMagic, 8);
        std::string hdr = header.dump();
        write_u32le(out, static_cast<std::uint32_t>(hdr.size()));
        out.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
        for (const WeightVector* wv : payload)
            for (double v : wv->data) write_f64le(out, v);
        if (!out) throw std::runtime_error("write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

nlohmann::json read_header(std::istream& in, const std::string& path) {
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0)
        throw std::runtime_error("bad checkpoint magic in " + path);
    std::uint32_t len = read_u32le(in);
    std::string hdr(len, '\0');
    if (!in.read(hdr.data(), len)) throw std::runtime_error("truncated checkpoint header");
    nlohmann::json j = nlohmann::json::parse(hdr);
    int version = j.at("version").get<int>();
    if (version != kVersion)
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    return j;
}

std::vector<std::uint64_t> seeds_from(const nlohmann::json& j) {
    std::vector<std::uint64_t> seeds;
    for (const auto& s : j.at("seeds")) seeds.push_back(s.get<std::uint64_t>());
    return seeds;
}

}  // namespace

nlohmann::json spec_to_json(const ModelSpec& spec) {
    nlohmann::json j;
    j["input_shape"] = {spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]};
    j["num_classes"] = spec.num_classes;
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : spec.layers) {
        nlohmann::json lj;
        if (const auto* d = std::get_if<Dense>(&l)) {
            lj = {{"type", "dense"}, {"in", d->in}, {"out", d->out}};
        } else if (const auto* c = std::get_if<Conv2D>(&l)) {
            lj = {{"type", "conv2d"}, {"in_ch", c->in_ch},   {"out_ch", c->out_ch},
                  {"kernel", c->kernel}, {"stride", c->stride}, {"padding", c->padding}};
        } else if (std::holds_alternative<ReLU>(l)) {
            lj = {{"type", "relu"}};
        } else if (std::holds_alternative<Flatten>(l)) {
            lj = {{"type", "flatten"}};
        } else {
            lj = {{"type", "maxpool2d"}, {"kernel", std::get<MaxPool2D>(l).kernel}};
        }
        layers.push_back(lj);
    }
    j["layers"] = layers;
    return j;
}

ModelSpec spec_from_json(const nlohmann::json& j) {
    ModelSpec spec;
    auto shape = j.at("input_shape");
    spec.input_shape = {shape.at(0).get<int>(), shape.at(1).get<int>(), shape.at(2).get<int>()};
    spec.num_classes = j.at("num_classes").get<int>();
    for (const auto& lj : j.at("layers")) {
        std::string type = lj.at("type").get<std::string>();
        if (type == "dense")
            spec.layers.push_back(Dense{lj.at("in").get<int>(), lj.at("out").get<int>()});
        else if (type == "conv2d")
            spec.layers.push_back(Conv2D{lj.at("in_ch").get<int>(), lj.at("out_ch").get<int>(),
                                         lj.at("kernel").get<int>(), lj.at("stride").get<int>(),
                                         lj.at("padding").get<int>()});
        else if (type == "relu")
            spec.layers.push_back(ReLU{});
        else if (type == "flatten")
            spec.layers.push_back(Flatten{});
        else if (type == "maxpool2d")
            spec.layers.push_back(MaxPool2D{lj.at("kernel").get<int>()});
        else
            throw std::runtime_error("unknown layer type in checkpoint: " + type);
    }
    spec.validate();
    return spec;
}

void save_model_checkpoint(const std::string& path, const Model& model,
                           const std::vector<std::uint64_t>& seeds) {
    nlohmann::json header;
    header["version"] = kVersion;
    header["kind"] = "model";
    header["spec"] = spec_to_json(model.spec);
    header["seeds"] = seeds;
    header["payload_count"] = model.weights.size();
    write_checkpoint(path, header, {&model.weights});
}

Model load_model_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::invalid_argument("cannot open: " + path);
    nlohmann::json j = read_header(in, path);
    if (j.at("kind").get<std::string>() != "model")
        throw std::runtime_error("checkpoint is not a model: " + path);
    Model m = make_model(spec_from_json(j.at("spec")));
    if (j.at("payload_count").get<std::int64_t>() != m.weights.size())
        throw std::runtime_error("checkpoint payload count does not match spec");
    for (double& v : m.weights.data) v = read_f64le(in);
    return m;
}

void save_curve_checkpoint(const std::string& path, const CurveSpec& curve,
                           const std::vector<std::uint64_t>& seeds) {
    curve.validate();
    nlohmann::json header;
    header["version"] = kVersion;
    header["kind"] = "curve";
    header["spec"] = spec_to_json(curve.spec);
    header["curve_kind"] = curve_kind_name(curve.kind);
    header["endpoints_trainable"] = curve.endpoints_trainable;
    header["seeds"] = seeds;
    header["payload_count"] = 3 * curve.w1.size();
    write_checkpoint(path, header, {&curve.w1, &curve.w2, &curve.theta});
}

CurveSpec load_curve_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::invalid_argument("cannot open: " + path);
    nlohmann::json j = read_header(in, path);
    if (j.at("kind").get<std::string>() != "curve")
        throw std::runtime_error("checkpoint is not a curve: " + path);
    CurveSpec c;
    c.spec = spec_from_json(j.at("spec"));
    c.kind = curve_kind_from(j.at("curve_kind").get<std::string>());
    c.endpoints_trainable = j.at("endpoints_trainable").get<bool>();
    WeightVector ref = make_weight_vector(c.spec);
    if (j.at("payload_count").get<std::int64_t>() != 3 * ref.size())
        throw std::runtime_error("checkpoint payload count does not match spec");
    c.w1 = ref;
    c.w2 = ref;
    c.theta = ref;
    for (WeightVector* wv : {&c.w1, &c.w2, &c.theta})
        for (double& v : wv->data) v = read_f64le(in);
    c.validate();
    return c;
}

CheckpointInfo read_checkpoint_info(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::invalid_argument("cannot open: " + path);
    nlohmann::json j = read_header(in, path);
    CheckpointInfo info;
    info.version = j.at("version").get<int>();
    info.kind = j.at("kind").get<std::string>();
    info.spec = spec_from_json(j.at("spec"));
    if (info.kind == "curve") {
        info.curve_kind = j.at("curve_kind").get<std::string>();
        info.endpoints_trainable = j.at("endpoints_trainable").get<bool>();
    }
    info.seeds = seeds_from(j);
    info.payload_count = j.at("payload_count").get<std::int64_t>();
    return info;
}

}  // namespace modeconn
