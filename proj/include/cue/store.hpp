#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "cue/error.hpp"

namespace cue {

enum class DType { Float32, Int64 };


/// An n-d array in NPY v1.0 layout: C order, little-endian payload.
struct TensorFile {
  std::vector<std::int64_t> shape;
  DType dtype = DType::Float32;
  std::vector<std::uint8_t> data;

  std::size_t element_count() const;
  std::size_t element_size() const { return dtype == DType::Float32 ? 4 : 8; }

  std::vector<float> floats() const;
  std::vector<std::int64_t> ints() const;

  /// 2-d view as a double matrix; 1-d tensors become a single column.
  Eigen::MatrixXd to_matrix() const;
  Eigen::VectorXd to_vector() const;

  static TensorFile from_floats(std::vector<std::int64_t> shape, std::span<const float> values);
  static TensorFile from_ints(std::vector<std::int64_t> shape, std::span<const std::int64_t> values);

  template <typename Derived>
  static TensorFile from_matrix(const Eigen::MatrixBase<Derived>& m) {
    std::vector<float> values;
    values.reserve(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) values.push_back(static_cast<float>(m(r, c)));
    return from_floats({m.rows(), m.cols()}, values);
  }

  template <typename Derived>
  static TensorFile from_vector(const Eigen::MatrixBase<Derived>& v) {
    std::vector<float> values(static_cast<std::size_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) values[static_cast<std::size_t>(i)] = static_cast<float>(v(i));
    return from_floats({v.size()}, values);
  }

  bool operator==(const TensorFile&) const = default;
};

std::vector<std::uint8_t> encode_npy(const TensorFile& t);
TensorFile decode_npy(std::span<const std::uint8_t> bytes);

TensorFile read_tensor(const std::filesystem::path& path);
void write_tensor(const TensorFile& t, const std::filesystem::path& path);

struct ItemRecord {
  std::string id;
  std::int64_t segment_offset = 0;
  std::int64_t segment_count = 0;
  std::optional<std::pair<int, int>> grid;
  // Evaluation-only ground truth; the pipeline itself never reads these.
  std::optional<int> true_label;
  std::optional<bool> is_ood;
  std::optional<bool> is_corrupted;
  std::optional<int> group_attr;
};

struct Manifest {
  int version = 1;
  std::int64_t n_items = 0;
  int n_classes = 0;
  int n_mc_samples = 0;
  int channels = 0;
  double dropout_rate = 0.2;
  std::vector<ItemRecord> items;
  std::map<std::string, std::string> files;
};

nlohmann::json to_json(const Manifest& m);
Manifest manifest_from_json(const nlohmann::json& j);

/// Ragged segment embeddings, one row per segment, items stored contiguously.
struct SegmentSet {
  Eigen::MatrixXd matrix;

  auto item_rows(const ItemRecord& item) const {
    return matrix.middleRows(item.segment_offset, item.segment_count);
  }
};

/// Per item, an N x K matrix of MC predictive probability vectors.
struct PredictionSamples {
  std::vector<Eigen::MatrixXd> items;
};

struct HeadParams {
  Eigen::MatrixXd weights;  // C x K
  Eigen::VectorXd bias;     // K
  double dropout_rate = 0.0;

  Eigen::Index channels() const { return weights.rows(); }
  Eigen::Index classes() const { return weights.cols(); }
};

struct Dataset {
  Manifest manifest;
  SegmentSet segments;
  PredictionSamples predictions;
  HeadParams head;
};

/// Checks every cross-file invariant; throws the matching Error on the first violation.
void validate(const Dataset& ds);

Dataset load_dataset(const std::filesystem::path& dir);
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace cue
