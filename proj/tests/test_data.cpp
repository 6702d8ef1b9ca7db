#include "doctest.h"

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "modeconn/data.hpp"

using namespace modeconn;

namespace {

// Scratch directory for file round-trip tests.
struct TempDir {
    std::filesystem::path dir;
    TempDir() {
        dir = std::filesystem::temp_directory_path() /
              ("modeconn-data-" + std::to_string(::getpid()));
        std::filesystem::create_directories(dir);
    }
    ~TempDir() { std::filesystem::remove_all(dir); }
    std::string path(const std::string& name) const { return (dir / name).string(); }
};

void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
}

void push_u32be(std::vector<unsigned char>& v, std::uint32_t x) {
    v.push_back(static_cast<unsigned char>(x >> 24));
    v.push_back(static_cast<unsigned char>(x >> 16));
    v.push_back(static_cast<unsigned char>(x >> 8));
    v.push_back(static_cast<unsigned char>(x));
}

}  // namespace

TEST_CASE("synthetic generator is deterministic and noise-free samples are identical") {
    LabeledDataset a = gen_synthetic(4, 5, 12, 0.2, 99);
    LabeledDataset b = gen_synthetic(4, 5, 12, 0.2, 99);
    CHECK(a.images.data == b.images.data);
    CHECK(a.labels == b.labels);

    LabeledDataset c = gen_synthetic(4, 5, 12, 0.2, 100);
    CHECK(a.images.data != c.images.data);

    LabeledDataset clean = gen_synthetic(4, 3, 12, 0.0, 7);
    std::int64_t px = 12 * 12;
    for (int cls = 0; cls < 4; ++cls) {
        const double* first = clean.images.data.data() + (cls * 3) * px;
        for (int s = 1; s < 3; ++s) {
            const double* other = clean.images.data.data() + (cls * 3 + s) * px;
            CHECK(std::equal(first, first + px, other));
        }
    }
}

// Locates the two vertical bars of a noise-free glyph and returns the gap
// between the left edges of the bars minus 3, which is the encoded class.
static int decode_gap(const double* img, int S) {
    int left = -1, right = -1;
    for (int col = 0; col < S; ++col) {
        bool lit = false;
        for (int row = 0; row < S; ++row)
            if (img[row * S + col] > 0.5) lit = true;
        if (!lit) continue;
        if (left < 0) left = col;
        else if (col > left + 1) { right = col; break; }
    }
    REQUIRE(left >= 0);
    REQUIRE(right > left);
    return right - left - 3;
}

TEST_CASE("noise-free glyphs encode class in bar gap and leave the trigger corner clear") {
    int S = 16;
    LabeledDataset ds = gen_synthetic(10, 1, S, 0.0, 1);
    for (int c = 0; c < 10; ++c) {
        const double* img = ds.images.data.data() + c * S * S;
        CHECK(decode_gap(img, S) == c);
        // bottom-right 3x3 patch stays background for every class
        for (int r = S - 3; r < S; ++r)
            for (int col = S - 3; col < S; ++col) CHECK(img[r * S + col] == 0.1);
        CHECK(ds.labels[static_cast<std::size_t>(c)] == c);
    }
    // the class stays decodable wherever the glyph lands: strip pixel noise
    // from low-noise samples and the gap code must match the label
    LabeledDataset moved = gen_synthetic(6, 20, S, 0.01, 3);
    for (std::size_t i = 0; i < moved.labels.size(); ++i) {
        std::vector<double> crisp(static_cast<std::size_t>(S) * S);
        const double* img = moved.images.data.data() + static_cast<std::int64_t>(i) * S * S;
        for (int k = 0; k < S * S; ++k) crisp[static_cast<std::size_t>(k)] = img[k] > 0.5 ? 0.9 : 0.1;
        CHECK(decode_gap(crisp.data(), S) == moved.labels[i]);
    }
    CHECK_THROWS_WITH_AS(gen_synthetic(12, 1, 16, 0.0, 1),
                         doctest::Contains("glyph count exceeds"), std::invalid_argument);
    CHECK_THROWS_AS(gen_synthetic(1, 1, 16, 0.0, 1), std::invalid_argument);
}

TEST_CASE("IDX ubyte files load with scaling and fail loudly on format problems") {
    TempDir tmp;
    // two 2x2 images, pixel values chosen to check /255 scaling
    std::vector<unsigned char> imgs;
    push_u32be(imgs, 0x00000803);
    push_u32be(imgs, 2);
    push_u32be(imgs, 2);
    push_u32be(imgs, 2);
    for (unsigned char b : {0, 255, 51, 102, 10, 20, 30, 40}) imgs.push_back(b);
    std::vector<unsigned char> labs;
    push_u32be(labs, 0x00000801);
    push_u32be(labs, 2);
    labs.push_back(1);
    labs.push_back(0);
    write_bytes(tmp.path("i.idx"), imgs);
    write_bytes(tmp.path("l.idx"), labs);

    LabeledDataset ds = load_idx(tmp.path("i.idx"), tmp.path("l.idx"));
    CHECK(ds.size() == 2);
    CHECK(ds.num_classes == 2);
    CHECK(ds.images.shape == std::vector<int>{2, 1, 2, 2});
    CHECK(ds.images.data[0] == 0.0);
    CHECK(ds.images.data[1] == 1.0);
    CHECK(ds.images.data[2] == doctest::Approx(51.0 / 255.0));
    CHECK(ds.labels == std::vector<int>{1, 0});

    // bad image magic
    std::vector<unsigned char> bad = imgs;
    bad[3] = 0x04;
    write_bytes(tmp.path("bad.idx"), bad);
    CHECK_THROWS_WITH_AS(load_idx(tmp.path("bad.idx"), tmp.path("l.idx")),
                         doctest::Contains("magic"), std::runtime_error);

    // count mismatch
    std::vector<unsigned char> labs3 = labs;
    labs3[7] = 3;
    labs3.push_back(1);
    write_bytes(tmp.path("l3.idx"), labs3);
    CHECK_THROWS_WITH_AS(load_idx(tmp.path("i.idx"), tmp.path("l3.idx")),
                         doctest::Contains("mismatch"), std::runtime_error);

    // truncated payload
    imgs.resize(imgs.size() - 3);
    write_bytes(tmp.path("trunc.idx"), imgs);
    CHECK_THROWS_WITH_AS(load_idx(tmp.path("trunc.idx"), tmp.path("l.idx")),
                         doctest::Contains("truncated"), std::runtime_error);
}

TEST_CASE("dataset bundles round-trip exactly, including poisoning metadata") {
    TempDir tmp;
    LabeledDataset ds = gen_synthetic(3, 4, 10, 0.3, 5);
    ds = poison(ds, 0.5, TargetRule{}, TriggerSpec{}, 11);
    save_dataset(tmp.path("bundle"), ds);
    LabeledDataset back = load_dataset(tmp.path("bundle"));
    CHECK(back.images.shape == ds.images.shape);
    CHECK(back.images.data == ds.images.data);  // doubles survive bit-exactly
    CHECK(back.labels == ds.labels);
    CHECK(back.num_classes == ds.num_classes);
    REQUIRE(back.meta.size() == ds.meta.size());
    for (std::size_t i = 0; i < ds.meta.size(); ++i) {
        CHECK(back.meta[i].poisoned == ds.meta[i].poisoned);
        CHECK(back.meta[i].original_label == ds.meta[i].original_label);
    }
    CHECK(!std::filesystem::exists(tmp.path("bundle-images.idx.tmp")));
}

TEST_CASE("ubyte export quantizes and reloads") {
    TempDir tmp;
    LabeledDataset ds = gen_synthetic(2, 3, 8, 0.25, 9);
    save_idx_ubyte(ds, tmp.path("i.idx"), tmp.path("l.idx"));
    LabeledDataset back = load_idx(tmp.path("i.idx"), tmp.path("l.idx"));
    REQUIRE(back.images.data.size() == ds.images.data.size());
    for (std::size_t i = 0; i < ds.images.data.size(); ++i)
        CHECK(back.images.data[i] == doctest::Approx(ds.images.data[i]).epsilon(0.01));
    CHECK(back.labels == ds.labels);
}

TEST_CASE("trigger stamping hits the bottom-right patch on every channel and is idempotent") {
    Tensor img({2, 6, 6});
    for (auto& v : img.data) v = 0.25;
    TriggerSpec trig{2, 3, 1.0};
    Tensor stamped = stamp_trigger(img, trig);
    for (int ch = 0; ch < 2; ++ch)
        for (int r = 0; r < 6; ++r)
            for (int c = 0; c < 6; ++c) {
                double v = stamped.data[static_cast<std::size_t>((ch * 6 + r) * 6 + c)];
                bool inside = r >= 4 && c >= 3;
                CHECK(v == (inside ? 1.0 : 0.25));
            }
    CHECK(stamp_trigger(stamped, trig).data == stamped.data);
    CHECK_THROWS_AS(stamp_trigger(img, TriggerSpec{7, 2, 1.0}), std::invalid_argument);
}

TEST_CASE("poisoning marks the requested fraction and relabels by rule") {
    LabeledDataset ds = gen_synthetic(5, 8, 12, 0.1, 21);  // 40 samples
    TargetRule single;
    single.kind = TargetRule::SingleTarget;
    single.target = 2;
    LabeledDataset p = poison(ds, 0.25, single, TriggerSpec{}, 3);
    int n_poisoned = 0;
    for (std::size_t i = 0; i < p.meta.size(); ++i) {
        if (!p.meta[i].poisoned) {
            CHECK(p.labels[i] == ds.labels[i]);
            continue;
        }
        ++n_poisoned;
        CHECK(p.labels[i] == 2);
        CHECK(p.meta[i].original_label == ds.labels[i]);
        // trigger present
        const double* img = p.images.data.data() + static_cast<std::int64_t>(i) * 12 * 12;
        CHECK(img[12 * 12 - 1] == 1.0);
    }
    CHECK(n_poisoned == 10);  // round(0.25 * 40)

    LabeledDataset none = poison(ds, 0.0, single, TriggerSpec{}, 3);
    CHECK(none.images.data == ds.images.data);
    CHECK(none.labels == ds.labels);

    TargetRule all;
    all.kind = TargetRule::AllTargets;
    all.modulus = 4;
    LabeledDataset pa = poison(ds, 1.0, all, TriggerSpec{}, 3);
    for (std::size_t i = 0; i < pa.meta.size(); ++i) {
        CHECK(pa.meta[i].poisoned);
        CHECK(pa.labels[i] == (ds.labels[i] + 1) % 4);
    }

    // same seed, same picks
    LabeledDataset p2 = poison(ds, 0.25, single, TriggerSpec{}, 3);
    CHECK(p2.images.data == p.images.data);
    CHECK(p2.labels == p.labels);
}

TEST_CASE("triggered evaluation set drops true-target samples and stamps the rest") {
    LabeledDataset ds = gen_synthetic(4, 6, 12, 0.0, 2);
    TargetRule single;
    single.target = 1;
    LabeledDataset trig = make_triggered(ds, TriggerSpec{}, single);
    CHECK(trig.size() == 18);  // class 1's six samples excluded
    for (std::size_t i = 0; i < trig.meta.size(); ++i) {
        CHECK(trig.labels[i] == 1);
        CHECK(trig.meta[i].original_label != 1);
        const double* img = trig.images.data.data() + static_cast<std::int64_t>(i) * 12 * 12;
        CHECK(img[12 * 12 - 1] == 1.0);
    }
    LabeledDataset kept = make_triggered(ds, TriggerSpec{}, single, false);
    CHECK(kept.size() == 24);
}

TEST_CASE("bonafide split is disjoint, unpoisoned, and deterministic") {
    LabeledDataset ds = gen_synthetic(3, 10, 10, 0.2, 77);
    LabeledDataset p = poison(ds, 0.3, TargetRule{}, TriggerSpec{}, 1);
    auto [bona, rest] = split_bonafide(p, 8, 42);
    CHECK(bona.size() == 8);
    CHECK(bona.size() + rest.size() == p.size());
    // bonafide draws only from unpoisoned samples; the rest keep everything
    // else, poisoned included
    for (const auto& m : bona.meta) CHECK(!m.poisoned);
    int poisoned_in_rest = 0;
    for (const auto& m : rest.meta) poisoned_in_rest += m.poisoned ? 1 : 0;
    CHECK(poisoned_in_rest == 9);

    // disjointness via exact image matching (noise makes samples unique)
    std::int64_t px = 10 * 10;
    for (int i = 0; i < bona.size(); ++i)
        for (int j = 0; j < rest.size(); ++j) {
            const double* a = bona.images.data.data() + i * px;
            const double* b = rest.images.data.data() + j * px;
            CHECK(!std::equal(a, a + px, b));
        }

    auto [bona2, rest2] = split_bonafide(p, 8, 42);
    CHECK(bona2.images.data == bona.images.data);
    CHECK(rest2.images.data == rest.images.data);

    CHECK_THROWS_AS(split_bonafide(p, p.size() + 1, 1), std::invalid_argument);
}

TEST_CASE("subset and batching preserve order and shapes") {
    LabeledDataset ds = gen_synthetic(3, 4, 8, 0.1, 5);
    LabeledDataset sub = subset(ds, {11, 0, 5});
    CHECK(sub.size() == 3);
    CHECK(sub.labels[0] == ds.labels[11]);
    CHECK(sub.labels[1] == ds.labels[0]);
    std::int64_t px = 8 * 8;
    CHECK(std::equal(sub.images.data.begin(), sub.images.data.begin() + px,
                     ds.images.data.begin() + 11 * px));

    std::vector<int> order{2, 3, 5, 7};
    auto [batch, labels] = make_batch(ds, order, 1, 2);
    CHECK(batch.shape == std::vector<int>{2, 1, 8, 8});
    CHECK(labels == std::vector<int>{ds.labels[3], ds.labels[5]});
    CHECK_THROWS_AS(subset(ds, {99}), std::invalid_argument);
}
