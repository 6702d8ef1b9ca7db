#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "modeconn/tensor.hpp"

namespace modeconn {

struct SampleMeta {
    bool poisoned = false;
    int original_label = -1;  // label before any tampering

    bool operator==(const SampleMeta& o) const {
        return poisoned == o.poisoned && original_label == o.original_label;
    }
};

// Image classification dataset. Pixel values live in [0,1].
struct LabeledDataset {
    Tensor images;  // (N,C,H,W)
    std::vector<int> labels;
    std::vector<SampleMeta> meta;
    int num_classes = 0;

    int size() const { return images.shape.empty() ? 0 : images.shape[0]; }
    std::array<int, 3> sample_shape() const {
        return {images.shape[1], images.shape[2], images.shape[3]};
    }
    void validate() const;
};

// Bottom-right pixel block stamped onto every channel.
struct TriggerSpec {
    int height = 3;
    int width = 3;
    double pixel_value = 1.0;
};

// How poisoned samples get relabeled.
struct TargetRule {
    enum Kind { SingleTarget, AllTargets };
    Kind kind = SingleTarget;
    int target = 1;   // SingleTarget
    int modulus = 9;  // AllTargets: label -> (label+1) mod modulus

    int apply(int original_label) const;
    void validate(int num_classes) const;
};

// Procedural glyph dataset: class c draws a horizontal bar at rows {c,c+1}
// and a vertical bar at columns {c+1,c+2} on a dim background, plus seeded
// Gaussian pixel noise clipped to [0,1]. Classes are linearly well separated
// and the bottom-right corner stays clear for triggers.
LabeledDataset gen_synthetic(int num_classes, int samples_per_class, int image_size,
                             double noise_level, std::uint64_t seed);

// IDX ingestion (MNIST-style): ubyte images magic 0x00000803, ubyte labels
// magic 0x00000801, big-endian counts. Pixels scaled to [0,1]. num_classes 0
// means deduce as max(label)+1.
LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path,
                        int num_classes = 0);

// Lossy ubyte export (rounds pixels to 0..255) in the same IDX layout.
void save_idx_ubyte(const LabeledDataset& ds, const std::string& images_path,
                    const std::string& labels_path);

// Lossless bundle: <prefix>-images.idx (IDX double, 4-D), <prefix>-labels.idx,
// <prefix>-meta.json (num_classes and per-sample tamper records).
void save_dataset(const std::string& prefix, const LabeledDataset& ds);
LabeledDataset load_dataset(const std::string& prefix);

// Stamp the trigger block on one (C,H,W) image or a (N,C,H,W) batch.
Tensor stamp_trigger(const Tensor& image, const TriggerSpec& trig);

// Exactly round(fraction*N) samples, drawn uniformly without replacement,
// are stamped and relabeled per the rule; meta records the original label.
LabeledDataset poison(const LabeledDataset& data, double fraction, const TargetRule& rule,
                      const TriggerSpec& trig, std::uint64_t seed);

// Stamps every sample and relabels per the rule, for attack-success
// evaluation. For SingleTarget, samples whose true label already equals the
// target are dropped when exclude_true_target is set.
LabeledDataset make_triggered(const LabeledDataset& data, const TriggerSpec& trig,
                              const TargetRule& rule, bool exclude_true_target = true);

// Seeded split of unpoisoned samples into (bonafide, heldout). Heldout keeps
// every sample not selected for bonafide.
std::pair<LabeledDataset, LabeledDataset> split_bonafide(const LabeledDataset& test_data, int size,
                                                         std::uint64_t seed);

LabeledDataset subset(const LabeledDataset& data, const std::vector<int>& indices);

// Gathers samples [begin, begin+count) in index order into a batch tensor.
std::pair<Tensor, std::vector<int>> make_batch(const LabeledDataset& data,
                                               const std::vector<int>& order, int begin, int count);

}  // namespace modeconn
