#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "xforge/tensor.hpp"

namespace xforge {

struct ImageRecord {
  Tensor pixels;  // (C,H,W), values in [0,1] before whitening
  int label = 0;
};

struct DatasetSplit {
  std::vector<ImageRecord> train, val, test;
  std::vector<std::string> class_names;
  uint32_t seed = 0;

  size_t total() const { return train.size() + val.size() + test.size(); }
};

struct AugmentConfig {
  float rotation_deg = 0.0f;   // uniform in [-rotation_deg, +rotation_deg]
  float shift_frac = 0.0f;     // max shift as fraction of the axis length
  bool zca = false;
  float zca_epsilon = 1e-2f;
};

struct ShapesConfig {
  int image_size = 32;
  int class_count = 3;
  int per_class = 100;
  float noise = 0.05f;
  uint32_t seed = 0;
};

// --- CIFAR-10 binary format -------------------------------------------------

// One record is 3073 bytes: 1 label byte then three 1024-byte row-major
// planes (R, G, B).
constexpr size_t kCifarRecordBytes = 3073;
constexpr int kCifarClasses = 10;

ImageRecord parse_cifar_record(const uint8_t* bytes);
std::vector<uint8_t> serialize_cifar_record(const ImageRecord& rec);

// Reads the batch files under `directory`, pools all 60,000 records and
// re-splits 60/20/20 with `seed`.
DatasetSplit load_cifar10(const std::string& directory, uint32_t seed);

// --- synthetic shapes -------------------------------------------------------

DatasetSplit generate_shapes(const ShapesConfig& config);
void save_shapes_dataset(const DatasetSplit& split, const std::string& path);
DatasetSplit load_shapes_dataset(const std::string& path);

// Shuffles and splits 60/20/20 (rounded, remainder to test).
DatasetSplit split_records(std::vector<ImageRecord> records,
                           std::vector<std::string> class_names, uint32_t seed);

// --- augmentation -----------------------------------------------------------

ImageRecord augment(const ImageRecord& record, const AugmentConfig& config,
                    std::mt19937& rng);

struct ZcaTransform {
  std::vector<float> mean;    // per-element training mean
  std::vector<float> matrix;  // row-major D x D whitening matrix
  int dim = 0;
};

ZcaTransform zca_fit(const std::vector<ImageRecord>& train, float epsilon);
ImageRecord zca_apply(const ZcaTransform& t, const ImageRecord& record);

}  // namespace xforge
