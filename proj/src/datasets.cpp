#include "xforge/datasets.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "xforge/checkpoint.hpp"

namespace xforge {

namespace fs = std::filesystem;

// --- CIFAR-10 ---------------------------------------------------------------

ImageRecord parse_cifar_record(const uint8_t* bytes) {
  ImageRecord rec;
  rec.label = bytes[0];
  if (rec.label >= kCifarClasses)
    throw std::runtime_error("cifar10: label byte " +
                             std::to_string(rec.label) + " out of range");
  rec.pixels = Tensor({3, 32, 32});
  for (size_t i = 0; i < 3072; ++i)
    rec.pixels.data[i] = static_cast<float>(bytes[1 + i]) / 255.0f;
  return rec;
}

std::vector<uint8_t> serialize_cifar_record(const ImageRecord& rec) {
  std::vector<uint8_t> out(kCifarRecordBytes);
  out[0] = static_cast<uint8_t>(rec.label);
  for (size_t i = 0; i < 3072; ++i)
    out[1 + i] = static_cast<uint8_t>(
        std::lround(std::clamp(rec.pixels.data[i], 0.0f, 1.0f) * 255.0f));
  return out;
}

namespace {

std::vector<ImageRecord> read_cifar_file(const fs::path& path) {
  std::ifstream is(path, std::ios::binary | std::ios::ate);
  if (!is) throw std::runtime_error("cifar10: cannot open " + path.string());
  const auto size = static_cast<size_t>(is.tellg());
  if (size % kCifarRecordBytes != 0)
    throw std::runtime_error(
        "cifar10: " + path.string() + " truncated at byte offset " +
        std::to_string(size - size % kCifarRecordBytes) +
        " (size not a multiple of " + std::to_string(kCifarRecordBytes) + ")");
  std::vector<uint8_t> bytes(size);
  is.seekg(0);
  is.read(reinterpret_cast<char*>(bytes.data()),
          static_cast<std::streamsize>(size));
  std::vector<ImageRecord> records;
  records.reserve(size / kCifarRecordBytes);
  for (size_t off = 0; off < size; off += kCifarRecordBytes)
    records.push_back(parse_cifar_record(bytes.data() + off));
  return records;
}

}  // namespace

DatasetSplit split_records(std::vector<ImageRecord> records,
                           std::vector<std::string> class_names,
                           uint32_t seed) {
  std::mt19937 rng(seed);
  std::shuffle(records.begin(), records.end(), rng);
  const size_t n = records.size();
  const size_t n_train = static_cast<size_t>(std::lround(0.6 * double(n)));
  const size_t n_val = static_cast<size_t>(std::lround(0.2 * double(n)));
  DatasetSplit split;
  split.seed = seed;
  split.class_names = std::move(class_names);
  split.train.assign(records.begin(), records.begin() + n_train);
  split.val.assign(records.begin() + n_train, records.begin() + n_train + n_val);
  split.test.assign(records.begin() + n_train + n_val, records.end());
  return split;
}

DatasetSplit load_cifar10(const std::string& directory, uint32_t seed) {
  static const char* batches[] = {"data_batch_1.bin", "data_batch_2.bin",
                                  "data_batch_3.bin", "data_batch_4.bin",
                                  "data_batch_5.bin", "test_batch.bin"};
  std::vector<ImageRecord> all;
  for (const char* name : batches) {
    const fs::path p = fs::path(directory) / name;
    if (!fs::exists(p))
      throw std::runtime_error("cifar10: missing batch file " + p.string());
    auto recs = read_cifar_file(p);
    all.insert(all.end(), std::make_move_iterator(recs.begin()),
               std::make_move_iterator(recs.end()));
  }
  return split_records(
      std::move(all),
      {"airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse",
       "ship", "truck"},
      seed);
}

// --- synthetic shapes -------------------------------------------------------

namespace {

const std::vector<std::string> kShapeNames = {"square", "disc", "triangle",
                                              "ring"};

void draw_shape(Tensor& img, int kind, float cx, float cy, float r,
                float intensity) {
  const int n = img.shape[1];
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      const float dx = x - cx, dy = y - cy;
      bool inside = false;
      switch (kind) {
        case 0:  // filled square
          inside = std::abs(dx) <= r && std::abs(dy) <= r;
          break;
        case 1:  // disc
          inside = dx * dx + dy * dy <= r * r;
          break;
        case 2: {  // upward triangle
          const float fy = (dy + r) / (2 * r);  // 0 at top, 1 at base
          inside = dy >= -r && dy <= r && std::abs(dx) <= fy * r;
          break;
        }
        case 3: {  // ring
          const float d2 = dx * dx + dy * dy;
          inside = d2 <= r * r && d2 >= 0.45f * r * r;
          break;
        }
      }
      if (inside) img.data[y * n + x] = intensity;
    }
}

}  // namespace

DatasetSplit generate_shapes(const ShapesConfig& config) {
  if (config.class_count < 2)
    throw std::invalid_argument("shapes: class_count must be >= 2");
  if (config.class_count > static_cast<int>(kShapeNames.size()))
    throw std::invalid_argument("shapes: at most " +
                                std::to_string(kShapeNames.size()) +
                                " shape kinds available");
  if (config.image_size < 16)
    throw std::invalid_argument("shapes: image_size must be >= 16");

  std::mt19937 rng(config.seed);
  std::uniform_real_distribution<float> uni(0.0f, 1.0f);
  const float n = static_cast<float>(config.image_size);
  std::vector<ImageRecord> records;
  for (int cls = 0; cls < config.class_count; ++cls)
    for (int i = 0; i < config.per_class; ++i) {
      ImageRecord rec;
      rec.label = cls;
      rec.pixels = Tensor({1, config.image_size, config.image_size});
      for (auto& v : rec.pixels.data) v = config.noise * uni(rng);
      const float r = n * (0.15f + 0.10f * uni(rng));
      const float cx = n / 2 + (uni(rng) - 0.5f) * (n - 2.5f * r) * 0.8f;
      const float cy = n / 2 + (uni(rng) - 0.5f) * (n - 2.5f * r) * 0.8f;
      const float intensity = 0.6f + 0.4f * uni(rng);
      draw_shape(rec.pixels, cls, cx, cy, r, intensity);
      for (auto& v : rec.pixels.data) v = std::clamp(v, 0.0f, 1.0f);
      records.push_back(std::move(rec));
    }
  std::vector<std::string> names(kShapeNames.begin(),
                                 kShapeNames.begin() + config.class_count);
  return split_records(std::move(records), std::move(names), config.seed);
}

void save_shapes_dataset(const DatasetSplit& split, const std::string& path) {
  TensorFile f;
  auto meta = Tensor({2});
  meta.at(0) = static_cast<float>(split.seed);
  meta.at(1) = static_cast<float>(split.class_names.size());
  f.put("meta/info", meta);
  for (size_t c = 0; c < split.class_names.size(); ++c) {
    const auto& name = split.class_names[c];
    Tensor t({static_cast<int>(name.size())});
    for (size_t i = 0; i < name.size(); ++i)
      t.at(static_cast<int64_t>(i)) = static_cast<float>(name[i]);
    f.put("meta/class_name/" + std::to_string(c), std::move(t));
  }
  auto pack = [&](const char* part, const std::vector<ImageRecord>& recs) {
    for (size_t i = 0; i < recs.size(); ++i) {
      f.put(std::string(part) + "/" + std::to_string(i) + "/pixels",
            recs[i].pixels);
      f.put(std::string(part) + "/" + std::to_string(i) + "/label",
            Tensor({1}, {static_cast<float>(recs[i].label)}));
    }
    f.put(std::string(part) + "/count",
          Tensor({1}, {static_cast<float>(recs.size())}));
  };
  pack("train", split.train);
  pack("val", split.val);
  pack("test", split.test);
  save_tensor_file(f, path);
}

DatasetSplit load_shapes_dataset(const std::string& path) {
  const auto f = load_tensor_file(path);
  DatasetSplit split;
  const auto& meta = f.get("meta/info");
  split.seed = static_cast<uint32_t>(meta.at(0));
  const int classes = static_cast<int>(meta.at(1));
  for (int c = 0; c < classes; ++c) {
    const auto& t = f.get("meta/class_name/" + std::to_string(c));
    std::string name;
    for (float v : t.data) name.push_back(static_cast<char>(v));
    split.class_names.push_back(std::move(name));
  }
  auto unpack = [&](const char* part, std::vector<ImageRecord>& out) {
    const int count =
        static_cast<int>(f.get(std::string(part) + "/count").at(0));
    for (int i = 0; i < count; ++i) {
      ImageRecord rec;
      rec.pixels = f.get(std::string(part) + "/" + std::to_string(i) + "/pixels");
      rec.label = static_cast<int>(
          f.get(std::string(part) + "/" + std::to_string(i) + "/label").at(0));
      out.push_back(std::move(rec));
    }
  };
  unpack("train", split.train);
  unpack("val", split.val);
  unpack("test", split.test);
  return split;
}

// --- augmentation -----------------------------------------------------------

ImageRecord augment(const ImageRecord& record, const AugmentConfig& config,
                    std::mt19937& rng) {
  std::uniform_real_distribution<float> uni(-1.0f, 1.0f);
  const float theta = config.rotation_deg * uni(rng) * 3.14159265358979f / 180.0f;
  const int C = record.pixels.shape[0], H = record.pixels.shape[1],
            W = record.pixels.shape[2];
  const float dx = config.shift_frac * W * uni(rng);
  const float dy = config.shift_frac * H * uni(rng);
  if (theta == 0.0f && dx == 0.0f && dy == 0.0f) return record;

  ImageRecord out;
  out.label = record.label;
  out.pixels = Tensor({C, H, W});
  const float cx = (W - 1) / 2.0f, cy = (H - 1) / 2.0f;
  const float ct = std::cos(theta), st = std::sin(theta);
  for (int c = 0; c < C; ++c) {
    const float* src = &record.pixels.data[static_cast<size_t>(c) * H * W];
    float* dst = &out.pixels.data[static_cast<size_t>(c) * H * W];
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        // inverse map: undo the shift, then the rotation
        const float ux = x - dx - cx, uy = y - dy - cy;
        const float sx = ct * ux + st * uy + cx;
        const float sy = -st * ux + ct * uy + cy;
        const int x0 = static_cast<int>(std::floor(sx));
        const int y0 = static_cast<int>(std::floor(sy));
        const float fx = sx - x0, fy = sy - y0;
        float acc = 0.0f;
        for (int dyy = 0; dyy < 2; ++dyy)
          for (int dxx = 0; dxx < 2; ++dxx) {
            const int xx = x0 + dxx, yy = y0 + dyy;
            if (xx < 0 || xx >= W || yy < 0 || yy >= H) continue;  // zero fill
            const float w =
                (dxx ? fx : 1 - fx) * (dyy ? fy : 1 - fy);
            acc += w * src[yy * W + xx];
          }
        dst[y * W + x] = std::clamp(acc, 0.0f, 1.0f);
      }
  }
  return out;
}

// --- ZCA whitening ----------------------------------------------------------

ZcaTransform zca_fit(const std::vector<ImageRecord>& train, float epsilon) {
  if (train.size() < 2)
    throw std::invalid_argument("zca_fit: need at least 2 training records");
  const int D = static_cast<int>(train[0].pixels.size());
  const int N = static_cast<int>(train.size());
  Eigen::MatrixXd X(N, D);
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < D; ++j) X(i, j) = train[i].pixels.at(j);
  const Eigen::RowVectorXd mean = X.colwise().mean();
  X.rowwise() -= mean;
  const Eigen::MatrixXd cov = (X.transpose() * X) / double(N - 1);
  if (!cov.allFinite()) throw std::runtime_error("zca_fit: non-finite covariance");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const Eigen::VectorXd lam = eig.eigenvalues().cwiseMax(0.0);
  const Eigen::MatrixXd W =
      eig.eigenvectors() *
      (lam.array() + double(epsilon)).rsqrt().matrix().asDiagonal() *
      eig.eigenvectors().transpose();

  ZcaTransform t;
  t.dim = D;
  t.mean.resize(D);
  t.matrix.resize(static_cast<size_t>(D) * D);
  for (int j = 0; j < D; ++j) t.mean[j] = static_cast<float>(mean(j));
  for (int i = 0; i < D; ++i)
    for (int j = 0; j < D; ++j)
      t.matrix[static_cast<size_t>(i) * D + j] = static_cast<float>(W(i, j));
  return t;
}

ImageRecord zca_apply(const ZcaTransform& t, const ImageRecord& record) {
  if (static_cast<int>(record.pixels.size()) != t.dim)
    throw std::invalid_argument("zca_apply: record dimension mismatch");
  ImageRecord out;
  out.label = record.label;
  out.pixels = Tensor(record.pixels.shape);
  std::vector<double> centered(t.dim);
  for (int j = 0; j < t.dim; ++j)
    centered[j] = record.pixels.at(j) - t.mean[j];
  for (int i = 0; i < t.dim; ++i) {
    double acc = 0;
    const float* row = &t.matrix[static_cast<size_t>(i) * t.dim];
    for (int j = 0; j < t.dim; ++j) acc += row[j] * centered[j];
    out.pixels.at(i) = static_cast<float>(acc);
  }
  return out;
}

}  // namespace xforge
