#include "cue/store.hpp"

#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace cue {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint8_t kMagic[] = {0x93, 'N', 'U', 'M', 'P', 'Y'};
constexpr std::size_t kPreamble = 10;  // magic(6) + version(2) + header length(2)

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  const U bits = std::bit_cast<U>(value);
  for (std::size_t b = 0; b < sizeof(T); ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
}

template <typename T>
T get_le(const std::uint8_t* p) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  U bits = 0;
  for (std::size_t b = 0; b < sizeof(T); ++b) bits |= static_cast<U>(p[b]) << (8 * b);
  return std::bit_cast<T>(bits);
}

std::string shape_literal(const std::vector<std::int64_t>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  if (shape.size() == 1) s += ",";
  return s + ")";
}

// Minimal reader for the Python dict literal NumPy writes into the header.
class HeaderParser {
 public:
  explicit HeaderParser(std::string_view text) : s_(text) {}

  void parse(std::string& descr, bool& fortran, std::vector<std::int64_t>& shape) {
    bool have_descr = false, have_fortran = false, have_shape = false;
    expect('{');
    while (true) {
      skip_ws();
      if (peek() == '}') break;
      const std::string key = quoted();
      expect(':');
      skip_ws();
      if (key == "descr") {
        descr = quoted();
        have_descr = true;
      } else if (key == "fortran_order") {
        fortran = boolean();
        have_fortran = true;
      } else if (key == "shape") {
        shape = tuple();
        have_shape = true;
      } else {
        fail("unexpected key '" + key + "'");
      }
      skip_ws();
      if (peek() == ',') {
        ++pos_;
        continue;
      }
      skip_ws();
      if (peek() != '}') fail("expected ',' or '}'");
    }
    if (!have_descr || !have_fortran || !have_shape) fail("missing descr/fortran_order/shape");
  }

 private:
  [[noreturn]] void fail(const std::string& what) const {
    throw Error(ErrorCode::MalformedHeader, "npy header: " + what);
  }
  char peek() const { return pos_ < s_.size() ? s_[pos_] : '\0'; }
  void skip_ws() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }
  void expect(char c) {
    skip_ws();
    if (peek() != c) fail(std::string("expected '") + c + "'");
    ++pos_;
  }
  std::string quoted() {
    skip_ws();
    const char q = peek();
    if (q != '\'' && q != '"') fail("expected quoted string");
    const auto end = s_.find(q, pos_ + 1);
    if (end == std::string_view::npos) fail("unterminated string");
    std::string out(s_.substr(pos_ + 1, end - pos_ - 1));
    pos_ = end + 1;
    return out;
  }
  bool boolean() {
    if (s_.substr(pos_, 4) == "True") {
      pos_ += 4;
      return true;
    }
    if (s_.substr(pos_, 5) == "False") {
      pos_ += 5;
      return false;
    }
    fail("expected True/False");
  }
  std::vector<std::int64_t> tuple() {
    expect('(');
    std::vector<std::int64_t> out;
    while (true) {
      skip_ws();
      if (peek() == ')') {
        ++pos_;
        return out;
      }
      if (!std::isdigit(static_cast<unsigned char>(peek()))) fail("expected non-negative extent");
      std::int64_t v = 0;
      while (std::isdigit(static_cast<unsigned char>(peek()))) {
        v = v * 10 + (s_[pos_] - '0');
        ++pos_;
      }
      out.push_back(v);
      skip_ws();
      if (peek() == ',') ++pos_;
      else if (peek() != ')') fail("expected ',' or ')' in shape");
    }
  }

  std::string_view s_;
  std::size_t pos_ = 0;
};

}  // namespace

std::size_t TensorFile::element_count() const {
  std::size_t n = 1;
  for (auto e : shape) n *= static_cast<std::size_t>(e);
  return n;
}

std::vector<float> TensorFile::floats() const {
  require(dtype == DType::Float32, ErrorCode::UnsupportedDtype, "tensor is not float32");
  std::vector<float> out(element_count());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = get_le<float>(data.data() + 4 * i);
  return out;
}

std::vector<std::int64_t> TensorFile::ints() const {
  require(dtype == DType::Int64, ErrorCode::UnsupportedDtype, "tensor is not int64");
  std::vector<std::int64_t> out(element_count());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = get_le<std::int64_t>(data.data() + 8 * i);
  return out;
}

Eigen::MatrixXd TensorFile::to_matrix() const {
  require(shape.size() == 1 || shape.size() == 2, ErrorCode::InconsistentShapes, "expected a 1-d or 2-d tensor");
  const Eigen::Index rows = shape[0];
  const Eigen::Index cols = shape.size() == 2 ? shape[1] : 1;
  Eigen::MatrixXd m(rows, cols);
  if (dtype == DType::Float32) {
    const auto v = floats();
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = v[static_cast<std::size_t>(r * cols + c)];
  } else {
    const auto v = ints();
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = static_cast<double>(v[static_cast<std::size_t>(r * cols + c)]);
  }
  return m;
}

Eigen::VectorXd TensorFile::to_vector() const {
  require(shape.size() == 1, ErrorCode::InconsistentShapes, "expected a 1-d tensor");
  return to_matrix().col(0);
}

TensorFile TensorFile::from_floats(std::vector<std::int64_t> shape, std::span<const float> values) {
  TensorFile t{std::move(shape), DType::Float32, {}};
  require(t.element_count() == values.size(), ErrorCode::InconsistentShapes, "value count does not match shape");
  t.data.reserve(values.size() * 4);
  for (float v : values) put_le(t.data, v);
  return t;
}

TensorFile TensorFile::from_ints(std::vector<std::int64_t> shape, std::span<const std::int64_t> values) {
  TensorFile t{std::move(shape), DType::Int64, {}};
  require(t.element_count() == values.size(), ErrorCode::InconsistentShapes, "value count does not match shape");
  t.data.reserve(values.size() * 8);
  for (auto v : values) put_le(t.data, v);
  return t;
}

std::vector<std::uint8_t> encode_npy(const TensorFile& t) {
  for (auto e : t.shape) require(e >= 0, ErrorCode::InconsistentShapes, "negative extent");
  require(t.data.size() == t.element_count() * t.element_size(), ErrorCode::InconsistentShapes,
          "payload length does not match shape");

  std::string header = "{'descr': '";
  header += t.dtype == DType::Float32 ? "<f4" : "<i8";
  header += "', 'fortran_order': False, 'shape': " + shape_literal(t.shape) + ", }";
  // Pad with spaces so that the payload starts on a 64-byte boundary; the header ends in '\n'.
  const std::size_t unpadded = kPreamble + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header += '\n';

  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  out.push_back(1);
  out.push_back(0);
  out.push_back(static_cast<std::uint8_t>(header.size() & 0xff));
  out.push_back(static_cast<std::uint8_t>(header.size() >> 8));
  out.insert(out.end(), header.begin(), header.end());
  out.insert(out.end(), t.data.begin(), t.data.end());
  return out;
}

TensorFile decode_npy(std::span<const std::uint8_t> bytes) {
  require(bytes.size() >= kPreamble && std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin()),
          ErrorCode::MalformedHeader, "missing NPY magic");
  require(bytes[6] == 1 && bytes[7] == 0, ErrorCode::MalformedHeader, "only NPY version 1.0 is supported");
  const std::size_t header_len = bytes[8] | (static_cast<std::size_t>(bytes[9]) << 8);
  require(bytes.size() >= kPreamble + header_len, ErrorCode::MalformedHeader, "header extends past end of file");
  const std::string_view header(reinterpret_cast<const char*>(bytes.data() + kPreamble), header_len);

  std::string descr;
  bool fortran = false;
  TensorFile t;
  HeaderParser(header).parse(descr, fortran, t.shape);
  require(!fortran, ErrorCode::MalformedHeader, "fortran-order payloads are not supported");
  if (descr == "<f4") t.dtype = DType::Float32;
  else if (descr == "<i8") t.dtype = DType::Int64;
  else throw Error(ErrorCode::UnsupportedDtype, "descr '" + descr + "'");

  const auto payload = bytes.subspan(kPreamble + header_len);
  const std::size_t expected = t.element_count() * t.element_size();
  require(payload.size() >= expected, ErrorCode::TruncatedPayload,
          "payload has " + std::to_string(payload.size()) + " bytes, shape needs " + std::to_string(expected));
  require(payload.size() == expected, ErrorCode::InconsistentShapes, "trailing bytes after payload");
  t.data.assign(payload.begin(), payload.end());
  return t;
}

TensorFile read_tensor(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::MissingFile, path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_npy(bytes);
}

void write_tensor(const TensorFile& t, const fs::path& path) {
  const auto bytes = encode_npy(t);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorCode::IoFailure, "cannot open " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(out.good(), ErrorCode::IoFailure, "write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::MissingFile, path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorCode::IoFailure, "cannot open " + path.string());
  out << text;
  require(out.good(), ErrorCode::IoFailure, "write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// manifest

json to_json(const Manifest& m) {
  json items = json::array();
  for (const auto& it : m.items) {
    json j = {{"id", it.id}, {"segment_offset", it.segment_offset}, {"segment_count", it.segment_count}};
    if (it.grid) j["grid"] = {it.grid->first, it.grid->second};
    if (it.true_label) j["true_label"] = *it.true_label;
    if (it.is_ood) j["is_ood"] = *it.is_ood;
    if (it.is_corrupted) j["is_corrupted"] = *it.is_corrupted;
    if (it.group_attr) j["group_attr"] = *it.group_attr;
    items.push_back(std::move(j));
  }
  return {{"version", m.version},           {"n_items", m.n_items},
          {"n_classes", m.n_classes},       {"n_mc_samples", m.n_mc_samples},
          {"channels", m.channels},         {"dropout_rate", m.dropout_rate},
          {"items", std::move(items)},      {"files", m.files}};
}

Manifest manifest_from_json(const json& j) {
  Manifest m;
  try {
    m.version = j.at("version").get<int>();
    m.n_items = j.at("n_items").get<std::int64_t>();
    m.n_classes = j.at("n_classes").get<int>();
    m.n_mc_samples = j.at("n_mc_samples").get<int>();
    m.channels = j.at("channels").get<int>();
    m.dropout_rate = j.value("dropout_rate", 0.2);
    for (const auto& ji : j.at("items")) {
      ItemRecord it;
      it.id = ji.at("id").get<std::string>();
      it.segment_offset = ji.at("segment_offset").get<std::int64_t>();
      it.segment_count = ji.at("segment_count").get<std::int64_t>();
      if (ji.contains("grid") && !ji["grid"].is_null())
        it.grid = std::pair{ji["grid"].at(0).get<int>(), ji["grid"].at(1).get<int>()};
      if (ji.contains("true_label") && !ji["true_label"].is_null()) it.true_label = ji["true_label"].get<int>();
      if (ji.contains("is_ood") && !ji["is_ood"].is_null()) it.is_ood = ji["is_ood"].get<bool>();
      if (ji.contains("is_corrupted") && !ji["is_corrupted"].is_null())
        it.is_corrupted = ji["is_corrupted"].get<bool>();
      if (ji.contains("group_attr") && !ji["group_attr"].is_null()) it.group_attr = ji["group_attr"].get<int>();
      m.items.push_back(std::move(it));
    }
    m.files = j.at("files").get<std::map<std::string, std::string>>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InconsistentShapes, std::string("manifest: ") + e.what());
  }
  return m;
}

// ---------------------------------------------------------------------------
// dataset

void validate(const Dataset& ds) {
  const auto& m = ds.manifest;
  require(m.n_classes >= 2, ErrorCode::InconsistentShapes, "n_classes must be >= 2");
  require(m.n_mc_samples >= 1, ErrorCode::InconsistentShapes, "n_mc_samples must be >= 1");
  require(m.channels >= 1, ErrorCode::InconsistentShapes, "channels must be >= 1");
  require(m.dropout_rate >= 0.0 && m.dropout_rate < 1.0, ErrorCode::InconsistentShapes, "dropout_rate outside [0,1)");
  require(static_cast<std::int64_t>(m.items.size()) == m.n_items, ErrorCode::InconsistentShapes,
          "n_items does not match item list");

  std::int64_t next = 0;
  for (const auto& it : m.items) {
    require(it.segment_count >= 1 && it.segment_offset == next, ErrorCode::InconsistentShapes,
            "item '" + it.id + "' segments do not continue the partition at row " + std::to_string(next));
    if (it.grid)
      require(static_cast<std::int64_t>(it.grid->first) * it.grid->second == it.segment_count,
              ErrorCode::InconsistentShapes, "item '" + it.id + "' grid does not match segment_count");
    if (it.true_label)
      require(*it.true_label >= 0 && *it.true_label < m.n_classes, ErrorCode::InconsistentShapes,
              "item '" + it.id + "' true_label out of range");
    if (it.group_attr)
      require(*it.group_attr == 0 || *it.group_attr == 1, ErrorCode::InconsistentShapes,
              "item '" + it.id + "' group_attr must be 0 or 1");
    next += it.segment_count;
  }

  const auto& A = ds.segments.matrix;
  require(A.rows() == next, ErrorCode::InconsistentShapes,
          "activations have " + std::to_string(A.rows()) + " rows, items cover " + std::to_string(next));
  require(A.cols() == m.channels, ErrorCode::InconsistentShapes, "activation channels do not match manifest");
  for (Eigen::Index r = 0; r < A.rows(); ++r)
    for (Eigen::Index c = 0; c < A.cols(); ++c) {
      require(std::isfinite(A(r, c)), ErrorCode::NegativeActivations, "non-finite activation");
      require(A(r, c) >= 0.0, ErrorCode::NegativeActivations,
              "activation row " + std::to_string(r) + " channel " + std::to_string(c) + " is negative");
    }

  require(ds.head.weights.rows() == m.channels && ds.head.weights.cols() == m.n_classes,
          ErrorCode::InconsistentShapes, "head_weights must be channels x n_classes");
  require(ds.head.bias.size() == m.n_classes, ErrorCode::InconsistentShapes, "head_bias must have n_classes entries");
  require(ds.head.weights.allFinite() && ds.head.bias.allFinite(), ErrorCode::InconsistentShapes,
          "head parameters must be finite");

  require(static_cast<std::int64_t>(ds.predictions.items.size()) == m.n_items, ErrorCode::InconsistentShapes,
          "prediction item count does not match manifest");
  for (std::size_t i = 0; i < ds.predictions.items.size(); ++i) {
    const auto& P = ds.predictions.items[i];
    require(P.rows() == m.n_mc_samples && P.cols() == m.n_classes, ErrorCode::InconsistentShapes,
            "predictions must be n_items x n_mc_samples x n_classes");
    for (Eigen::Index r = 0; r < P.rows(); ++r) {
      require((P.row(r).array() >= 0.0).all() && (P.row(r).array() <= 1.0).all(), ErrorCode::InvalidProbabilities,
              "item " + std::to_string(i) + " has probabilities outside [0,1]");
      require(std::abs(P.row(r).sum() - 1.0) <= 1e-5, ErrorCode::InvalidProbabilities,
              "item " + std::to_string(i) + " sample " + std::to_string(r) + " does not sum to 1");
    }
  }
}

Dataset load_dataset(const fs::path& dir) {
  require(fs::is_directory(dir), ErrorCode::MissingFile, "dataset directory " + dir.string());
  Dataset ds;
  ds.manifest = manifest_from_json([&] {
    try {
      return json::parse(read_text(dir / "manifest.json"));
    } catch (const json::parse_error& e) {
      throw Error(ErrorCode::InconsistentShapes, std::string("manifest.json: ") + e.what());
    }
  }());
  const auto& m = ds.manifest;
  auto file = [&](const std::string& role) {
    const auto it = m.files.find(role);
    require(it != m.files.end(), ErrorCode::MissingFile, "manifest names no '" + role + "' file");
    return read_tensor(dir / it->second);
  };

  const auto act = file("activations");
  require(act.shape.size() == 2, ErrorCode::InconsistentShapes, "activations must be 2-d");
  ds.segments.matrix = act.to_matrix();

  const auto pred = file("predictions");
  require(pred.shape.size() == 3 && pred.shape[0] == m.n_items && pred.shape[1] == m.n_mc_samples &&
              pred.shape[2] == m.n_classes,
          ErrorCode::InconsistentShapes, "predictions must be n_items x n_mc_samples x n_classes");
  const auto pv = pred.floats();
  std::size_t k = 0;
  ds.predictions.items.resize(static_cast<std::size_t>(m.n_items));
  for (auto& P : ds.predictions.items) {
    P.resize(m.n_mc_samples, m.n_classes);
    for (Eigen::Index r = 0; r < P.rows(); ++r)
      for (Eigen::Index c = 0; c < P.cols(); ++c) P(r, c) = pv[k++];
  }

  const auto w = file("head_weights");
  require(w.shape.size() == 2, ErrorCode::InconsistentShapes, "head_weights must be 2-d");
  ds.head.weights = w.to_matrix();
  const auto b = file("head_bias");
  require(b.shape.size() == 1, ErrorCode::InconsistentShapes, "head_bias must be 1-d");
  ds.head.bias = b.to_vector();
  ds.head.dropout_rate = m.dropout_rate;

  validate(ds);
  return ds;
}

void save_dataset(const Dataset& ds, const fs::path& dir) {
  fs::create_directories(dir);
  Manifest m = ds.manifest;
  m.files = {{"activations", "activations.npy"},
             {"predictions", "predictions.npy"},
             {"head_weights", "head_weights.npy"},
             {"head_bias", "head_bias.npy"}};
  write_text(dir / "manifest.json", to_json(m).dump(1) + "\n");
  write_tensor(TensorFile::from_matrix(ds.segments.matrix), dir / "activations.npy");

  std::vector<float> pv;
  for (const auto& P : ds.predictions.items)
    for (Eigen::Index r = 0; r < P.rows(); ++r)
      for (Eigen::Index c = 0; c < P.cols(); ++c) pv.push_back(static_cast<float>(P(r, c)));
  write_tensor(TensorFile::from_floats({m.n_items, m.n_mc_samples, m.n_classes}, pv), dir / "predictions.npy");
  write_tensor(TensorFile::from_matrix(ds.head.weights), dir / "head_weights.npy");
  write_tensor(TensorFile::from_vector(ds.head.bias), dir / "head_bias.npy");
}

}  // namespace cue
