#include "modeconn/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "json.hpp"

#include "modeconn/rng.hpp"

namespace modeconn {

namespace {

constexpr std::uint32_t kIdxUbyteImages = 0x00000803;
constexpr std::uint32_t kIdxUbyteLabels = 0x00000801;
constexpr std::uint32_t kIdxDouble4D = 0x00000E04;

std::uint32_t read_u32be(std::istream& in, const std::string& what) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw std::runtime_error("truncated IDX file while reading " + what);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
           std::uint32_t(b[3]);
}

void write_u32be(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

double read_f64be(std::istream& in) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8))
        throw std::runtime_error("truncated IDX file while reading doubles");
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u = (u << 8) | b[i];
    return std::bit_cast<double>(u);
}

void write_f64be(std::ostream& out, double v) {
    std::uint64_t u = std::bit_cast<std::uint64_t>(v);
    unsigned char b[8];
    for (int i = 7; i >= 0; --i) {
        b[i] = static_cast<unsigned char>(u & 0xFF);
        u >>= 8;
    }
    out.write(reinterpret_cast<const char*>(b), 8);
}

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    return out;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::invalid_argument("cannot open: " + path);
    return in;
}

// Writes to a sibling temp file, then renames over the target.
template <typename Fn>
void atomic_write(const std::string& path, Fn&& fn) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream out = open_out(tmp);
        fn(out);
        if (!out) throw std::runtime_error("write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace

void LabeledDataset::validate() const {
    if (images.shape.size() != 4) throw std::invalid_argument("dataset images must be (N,C,H,W)");
    std::size_t n = static_cast<std::size_t>(images.shape[0]);
    if (labels.size() != n || meta.size() != n)
        throw std::invalid_argument("dataset field counts disagree");
    if (num_classes < 2) throw std::invalid_argument("dataset needs at least 2 classes");
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] < 0 || labels[i] >= num_classes)
            throw std::invalid_argument("label out of range at sample " + std::to_string(i));
        if (meta[i].poisoned && meta[i].original_label < 0)
            throw std::invalid_argument("poisoned sample lacks original label");
    }
}

int TargetRule::apply(int original_label) const {
    if (kind == SingleTarget) return target;
    return (original_label + 1) % modulus;
}

void TargetRule::validate(int num_classes) const {
    if (kind == SingleTarget) {
        if (target < 0 || target >= num_classes)
            throw std::invalid_argument("target class outside [0, num_classes)");
    } else {
        if (modulus < 1 || modulus > num_classes)
            throw std::invalid_argument("all-targets modulus outside [1, num_classes]");
    }
}

LabeledDataset gen_synthetic(int num_classes, int samples_per_class, int image_size,
                             double noise_level, std::uint64_t seed) {
    if (num_classes < 2) throw std::invalid_argument("need at least 2 classes");
    if (samples_per_class < 1) throw std::invalid_argument("need at least 1 sample per class");
    // Class c draws two 2-pixel-wide vertical bars whose horizontal gap encodes
    // the class: left bar at columns {x, x+1}, right bar at {x+3+c, x+4+c}.
    // The pair is placed at a random (x, y) per sample, so class identity is
    // translation-invariant while individual samples vary. The widest glyph
    // (c = num_classes-1) must still admit at least two x positions.
    if (num_classes > image_size - 5)
        throw std::invalid_argument("glyph count exceeds available patterns for image size " +
                                    std::to_string(image_size));

    int S = image_size;
    int n = num_classes * samples_per_class;
    LabeledDataset ds;
    ds.num_classes = num_classes;
    ds.images = Tensor({n, 1, S, S});
    ds.labels.resize(static_cast<std::size_t>(n));
    ds.meta.resize(static_cast<std::size_t>(n));

    auto rng = make_rng(seed, 0xDA7A);
    std::normal_distribution<double> noise(0.0, 1.0);
    // Bars span rows [y, y+V-1] with V = S-7, and y <= 3 keeps every bar above
    // row S-5, clear of the bottom-right trigger patch. noise_level = 0 pins
    // the glyph to a centered position so all samples of a class are
    // bit-identical.
    int V = S - 7;
    int ymax = S - 4 - V;
    std::int64_t px = static_cast<std::int64_t>(S) * S;
    std::int64_t idx = 0;
    for (int c = 0; c < num_classes; ++c) {
        int xmax = S - 5 - c;
        std::uniform_int_distribution<int> x_place(0, xmax);
        std::uniform_int_distribution<int> y_place(0, ymax);
        for (int s = 0; s < samples_per_class; ++s, ++idx) {
            double* img = ds.images.data.data() + idx * px;
            int x = noise_level > 0.0 ? x_place(rng) : xmax / 2;
            int y = noise_level > 0.0 ? y_place(rng) : ymax / 2;
            for (std::int64_t k = 0; k < px; ++k) img[k] = 0.1;
            for (int row = y; row < y + V; ++row) {
                img[row * S + x] = 0.9;
                img[row * S + x + 1] = 0.9;
                img[row * S + x + 3 + c] = 0.9;
                img[row * S + x + 4 + c] = 0.9;
            }
            if (noise_level > 0.0)
                for (std::int64_t k = 0; k < px; ++k)
                    img[k] = std::clamp(img[k] + noise_level * noise(rng), 0.0, 1.0);
            ds.labels[static_cast<std::size_t>(idx)] = c;
            ds.meta[static_cast<std::size_t>(idx)] = {false, c};
        }
    }
    return ds;
}

LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path,
                        int num_classes) {
    std::ifstream imgs = open_in(images_path);
    if (read_u32be(imgs, "image magic") != kIdxUbyteImages)
        throw std::runtime_error("bad IDX image magic in " + images_path);
    int n = static_cast<int>(read_u32be(imgs, "image count"));
    int h = static_cast<int>(read_u32be(imgs, "image height"));
    int w = static_cast<int>(read_u32be(imgs, "image width"));

    std::ifstream labs = open_in(labels_path);
    if (read_u32be(labs, "label magic") != kIdxUbyteLabels)
        throw std::runtime_error("bad IDX label magic in " + labels_path);
    int ln = static_cast<int>(read_u32be(labs, "label count"));
    if (ln != n)
        throw std::runtime_error("IDX image/label count mismatch: " + std::to_string(n) + " vs " +
                                 std::to_string(ln));
    if (n <= 0 || h <= 0 || w <= 0) throw std::runtime_error("bad IDX dimensions");

    std::vector<unsigned char> buf(static_cast<std::size_t>(n) * h * w);
    if (!imgs.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
        throw std::runtime_error("truncated IDX image payload in " + images_path);
    std::vector<unsigned char> lbuf(static_cast<std::size_t>(n));
    if (!labs.read(reinterpret_cast<char*>(lbuf.data()), static_cast<std::streamsize>(lbuf.size())))
        throw std::runtime_error("truncated IDX label payload in " + labels_path);

    LabeledDataset ds;
    ds.images = Tensor({n, 1, h, w});
    for (std::size_t i = 0; i < buf.size(); ++i) ds.images.data[i] = buf[i] / 255.0;
    ds.labels.resize(static_cast<std::size_t>(n));
    ds.meta.resize(static_cast<std::size_t>(n));
    int max_label = 0;
    for (int i = 0; i < n; ++i) {
        int y = lbuf[static_cast<std::size_t>(i)];
        ds.labels[static_cast<std::size_t>(i)] = y;
        ds.meta[static_cast<std::size_t>(i)] = {false, y};
        max_label = std::max(max_label, y);
    }
    ds.num_classes = num_classes > 0 ? num_classes : max_label + 1;
    ds.validate();
    return ds;
}

void save_idx_ubyte(const LabeledDataset& ds, const std::string& images_path,
                    const std::string& labels_path) {
    if (ds.images.shape[1] != 1)
        throw std::invalid_argument("ubyte IDX export supports single-channel images only");
    atomic_write(images_path, [&](std::ofstream& out) {
        write_u32be(out, kIdxUbyteImages);
        write_u32be(out, static_cast<std::uint32_t>(ds.size()));
        write_u32be(out, static_cast<std::uint32_t>(ds.images.shape[2]));
        write_u32be(out, static_cast<std::uint32_t>(ds.images.shape[3]));
        for (double v : ds.images.data) {
            unsigned char b =
                static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
            out.put(static_cast<char>(b));
        }
    });
    atomic_write(labels_path, [&](std::ofstream& out) {
        write_u32be(out, kIdxUbyteLabels);
        write_u32be(out, static_cast<std::uint32_t>(ds.size()));
        for (int y : ds.labels) out.put(static_cast<char>(static_cast<unsigned char>(y)));
    });
}

void save_dataset(const std::string& prefix, const LabeledDataset& ds) {
    ds.validate();
    atomic_write(prefix + "-images.idx", [&](std::ofstream& out) {
        write_u32be(out, kIdxDouble4D);
        for (int d : ds.images.shape) write_u32be(out, static_cast<std::uint32_t>(d));
        for (double v : ds.images.data) write_f64be(out, v);
    });
    atomic_write(prefix + "-labels.idx", [&](std::ofstream& out) {
        write_u32be(out, kIdxUbyteLabels);
        write_u32be(out, static_cast<std::uint32_t>(ds.size()));
        for (int y : ds.labels) out.put(static_cast<char>(static_cast<unsigned char>(y)));
    });
    nlohmann::json meta;
    meta["num_classes"] = ds.num_classes;
    std::vector<int> poisoned, original;
    poisoned.reserve(ds.meta.size());
    original.reserve(ds.meta.size());
    for (const auto& m : ds.meta) {
        poisoned.push_back(m.poisoned ? 1 : 0);
        original.push_back(m.original_label);
    }
    meta["poisoned"] = poisoned;
    meta["original_label"] = original;
    atomic_write(prefix + "-meta.json", [&](std::ofstream& out) { out << meta.dump(2) << "\n"; });
}

LabeledDataset load_dataset(const std::string& prefix) {
    std::ifstream imgs = open_in(prefix + "-images.idx");
    if (read_u32be(imgs, "image magic") != kIdxDouble4D)
        throw std::runtime_error("bad dataset image magic in " + prefix + "-images.idx");
    std::vector<int> shape(4);
    for (int i = 0; i < 4; ++i) shape[i] = static_cast<int>(read_u32be(imgs, "image dims"));
    LabeledDataset ds;
    ds.images = Tensor(shape);
    for (double& v : ds.images.data) v = read_f64be(imgs);

    std::ifstream labs = open_in(prefix + "-labels.idx");
    if (read_u32be(labs, "label magic") != kIdxUbyteLabels)
        throw std::runtime_error("bad dataset label magic in " + prefix + "-labels.idx");
    int n = static_cast<int>(read_u32be(labs, "label count"));
    if (n != shape[0]) throw std::runtime_error("dataset image/label count mismatch");
    ds.labels.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        int ch = labs.get();
        if (ch == EOF) throw std::runtime_error("truncated dataset label payload");
        ds.labels[static_cast<std::size_t>(i)] = ch;
    }

    std::ifstream mf = open_in(prefix + "-meta.json");
    nlohmann::json meta = nlohmann::json::parse(mf);
    ds.num_classes = meta.at("num_classes").get<int>();
    auto poisoned = meta.at("poisoned").get<std::vector<int>>();
    auto original = meta.at("original_label").get<std::vector<int>>();
    if (static_cast<int>(poisoned.size()) != n || static_cast<int>(original.size()) != n)
        throw std::runtime_error("dataset meta count mismatch");
    ds.meta.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i)
        ds.meta[static_cast<std::size_t>(i)] = {poisoned[static_cast<std::size_t>(i)] != 0,
                                                original[static_cast<std::size_t>(i)]};
    ds.validate();
    return ds;
}

Tensor stamp_trigger(const Tensor& image, const TriggerSpec& trig) {
    if (image.shape.size() < 2) throw std::invalid_argument("image must have (H,W) trailing dims");
    int h = image.shape[image.shape.size() - 2];
    int w = image.shape[image.shape.size() - 1];
    if (trig.height < 1 || trig.width < 1 || trig.height > h || trig.width > w)
        throw std::invalid_argument("trigger does not fit inside image");
    Tensor out = image;
    std::int64_t planes = out.numel() / (static_cast<std::int64_t>(h) * w);
    for (std::int64_t p = 0; p < planes; ++p) {
        double* plane = out.data.data() + p * h * w;
        for (int y = h - trig.height; y < h; ++y)
            for (int x = w - trig.width; x < w; ++x) plane[y * w + x] = trig.pixel_value;
    }
    return out;
}

LabeledDataset poison(const LabeledDataset& data, double fraction, const TargetRule& rule,
                      const TriggerSpec& trig, std::uint64_t seed) {
    data.validate();
    rule.validate(data.num_classes);
    if (fraction < 0.0 || fraction > 1.0) throw std::invalid_argument("fraction outside [0,1]");
    int n = data.size();
    int count = static_cast<int>(std::lround(fraction * n));

    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    auto rng = make_rng(seed, 0xB00);
    std::shuffle(order.begin(), order.end(), rng);
    order.resize(static_cast<std::size_t>(count));
    std::sort(order.begin(), order.end());

    LabeledDataset out = data;
    int h = data.images.shape[2], w = data.images.shape[3];
    std::int64_t sample_sz = static_cast<std::int64_t>(data.images.shape[1]) * h * w;
    for (int i : order) {
        double* img = out.images.data.data() + i * sample_sz;
        for (std::int64_t c = 0; c < data.images.shape[1]; ++c) {
            double* plane = img + c * h * w;
            for (int y = h - trig.height; y < h; ++y)
                for (int x = w - trig.width; x < w; ++x) plane[y * w + x] = trig.pixel_value;
        }
        std::size_t si = static_cast<std::size_t>(i);
        out.meta[si].original_label = data.labels[si];
        out.meta[si].poisoned = true;
        out.labels[si] = rule.apply(data.labels[si]);
    }
    out.validate();
    return out;
}

LabeledDataset make_triggered(const LabeledDataset& data, const TriggerSpec& trig,
                              const TargetRule& rule, bool exclude_true_target) {
    data.validate();
    rule.validate(data.num_classes);
    std::vector<int> keep;
    for (int i = 0; i < data.size(); ++i) {
        if (exclude_true_target && rule.kind == TargetRule::SingleTarget &&
            data.labels[static_cast<std::size_t>(i)] == rule.target)
            continue;
        keep.push_back(i);
    }
    if (keep.empty()) throw std::invalid_argument("no samples left after target-class exclusion");
    LabeledDataset out = subset(data, keep);
    out.images = stamp_trigger(out.images, trig);
    for (std::size_t i = 0; i < out.labels.size(); ++i) {
        out.meta[i].original_label = out.labels[i];
        out.meta[i].poisoned = true;
        out.labels[i] = rule.apply(out.labels[i]);
    }
    return out;
}

std::pair<LabeledDataset, LabeledDataset> split_bonafide(const LabeledDataset& test_data, int size,
                                                         std::uint64_t seed) {
    test_data.validate();
    std::vector<int> clean;
    for (int i = 0; i < test_data.size(); ++i)
        if (!test_data.meta[static_cast<std::size_t>(i)].poisoned) clean.push_back(i);
    if (size < 1 || size > static_cast<int>(clean.size()))
        throw std::invalid_argument("bonafide size " + std::to_string(size) +
                                    " exceeds available clean samples (" +
                                    std::to_string(clean.size()) + ")");
    auto rng = make_rng(seed, 0xB0FA);
    std::shuffle(clean.begin(), clean.end(), rng);
    std::vector<int> bona(clean.begin(), clean.begin() + size);
    std::sort(bona.begin(), bona.end());
    std::vector<bool> taken(static_cast<std::size_t>(test_data.size()), false);
    for (int i : bona) taken[static_cast<std::size_t>(i)] = true;
    std::vector<int> rest;
    for (int i = 0; i < test_data.size(); ++i)
        if (!taken[static_cast<std::size_t>(i)]) rest.push_back(i);
    return {subset(test_data, bona), subset(test_data, rest)};
}

LabeledDataset subset(const LabeledDataset& data, const std::vector<int>& indices) {
    LabeledDataset out;
    out.num_classes = data.num_classes;
    std::vector<int> shape = data.images.shape;
    shape[0] = static_cast<int>(indices.size());
    out.images = Tensor(shape);
    out.labels.resize(indices.size());
    out.meta.resize(indices.size());
    std::int64_t sz = data.images.numel() / data.images.shape[0];
    for (std::size_t k = 0; k < indices.size(); ++k) {
        int i = indices[k];
        if (i < 0 || i >= data.size()) throw std::invalid_argument("subset index out of range");
        std::copy_n(data.images.data.begin() + i * sz, sz,
                    out.images.data.begin() + static_cast<std::int64_t>(k) * sz);
        out.labels[k] = data.labels[static_cast<std::size_t>(i)];
        out.meta[k] = data.meta[static_cast<std::size_t>(i)];
    }
    return out;
}

std::pair<Tensor, std::vector<int>> make_batch(const LabeledDataset& data,
                                               const std::vector<int>& order, int begin,
                                               int count) {
    std::vector<int> shape = data.images.shape;
    shape[0] = count;
    Tensor batch(shape);
    std::vector<int> labels(static_cast<std::size_t>(count));
    std::int64_t sz = data.images.numel() / data.images.shape[0];
    for (int k = 0; k < count; ++k) {
        int i = order[static_cast<std::size_t>(begin + k)];
        std::copy_n(data.images.data.begin() + i * sz, sz,
                    batch.data.begin() + static_cast<std::int64_t>(k) * sz);
        labels[static_cast<std::size_t>(k)] = data.labels[static_cast<std::size_t>(i)];
    }
    return {std::move(batch), std::move(labels)};
}

}  // namespace modeconn
