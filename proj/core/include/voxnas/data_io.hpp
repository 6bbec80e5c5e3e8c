#pragma once

// Case storage (meta.json + little-endian f32 raw volumes), manifest and
// dataset statistics, preprocessing (Z-score, non-zero crop), patch sampling
// with forced-foreground balancing, axial flip augmentation, and a seeded
// synthetic anisotropic task generator.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "voxnas/rng.hpp"
#include "voxnas/search_space.hpp"
#include "voxnas/tensor.hpp"

namespace voxnas {

struct Case {
    std::string id;
    Tensor5<float> image;  // (1, channels, d, h, w)
    Tensor5<float> label;  // (1, classes, d, h, w), values in {0, 1}
    bool all_zero_warning = false;
};

struct CaseInfo {
    std::string dir;  // absolute or manifest-relative case directory
    std::string id;
    Shape5 image_shape;  // (1, c, d, h, w)
    int64_t label_channels = 0;
};

struct DatasetManifest {
    std::string root;
    std::vector<CaseInfo> cases;
    // Median (lower median for even counts) and minimum extents plus channel
    // counts; ConfigError when cases are empty or channel counts disagree.
    TaskStats stats() const;
};

// Case round-trips are bit-exact. Missing files throw IoError; header/raw
// disagreements and unknown dtype tags throw FormatError.
Case load_case(const std::string& dir);
void save_case(const Case& c, const std::string& dir);

DatasetManifest load_manifest(const std::string& root);

// Per-channel Z-score over all voxels; channels with (near-)zero variance
// map to all zeros.
void zscore_normalize(Tensor5<float>& image);

// Crops image and label to the tightest box where any image channel is
// nonzero; an all-zero image is returned unchanged with the warning flag set.
void nonzero_crop(Case& c);

// Axis-extent-preserving symmetric zero pad up to at least `patch` per axis,
// then a random origin: with probability 1/2 (and when foreground exists)
// the origin is anchored so the patch contains at least one foreground
// voxel, otherwise uniform.
std::pair<Tensor5<float>, Tensor5<float>> sample_patch(const Case& c, Axes3 patch, Rng& rng);

// With probability 1/2 reverses the w axis of both tensors.
void axial_hflip(Tensor5<float>& image, Tensor5<float>& label, Rng& rng);

struct SynthSpec {
    int64_t cases = 16;
    int64_t channels = 1;
    int64_t classes = 1;
    int64_t depth_min = 12, depth_max = 16;
    int64_t hw_min = 40, hw_max = 40;
    uint64_t seed = 0;
};

// Writes `cases` case directories plus manifest.json under out_dir; one
// random ellipsoid of class-dependent intensity per class over Gaussian
// background noise. Identical spec -> byte-identical tree.
DatasetManifest synth_generate(const SynthSpec& spec, const std::string& out_dir);

}  // namespace voxnas
