#include "villa/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <sstream>

namespace villa {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::string& bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string str(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw Error(ErrorKind::TruncatedFile, "checkpoint ends early");
  }

  const std::string& bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

const Tensor& Checkpoint::tensor(int head, const std::string& name) const {
  for (const auto& t : tensors)
    if (t.head == head && t.name == name) return t;
  throw Error(ErrorKind::MissingArtifact, "checkpoint lacks tensor " + name + " for head " + std::to_string(head));
}

const std::string& Checkpoint::get(const std::string& key) const {
  auto it = config.find(key);
  if (it == config.end()) throw Error(ErrorKind::MissingArtifact, "checkpoint lacks config key " + key);
  return it->second;
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string out = "VLLA";
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, ckpt.encoder_hash);
  std::string block;
  for (const auto& [k, v] : ckpt.config) block += k + "=" + v + "\n";
  put<std::uint32_t>(out, static_cast<std::uint32_t>(block.size()));
  out += block;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    put<std::int32_t>(out, t.head);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    std::size_t count = 1;
    for (auto d : t.shape) {
      put<std::uint32_t>(out, d);
      count *= d;
    }
    if (count != t.data.size()) throw Error(ErrorKind::DimensionMismatch, "tensor " + t.name + " shape/data mismatch");
    out.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * sizeof(float));
  }
  return out;
}

Checkpoint parse_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (r.str(4) != "VLLA") throw Error(ErrorKind::BadMagic, "not a VLLA checkpoint");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw Error(ErrorKind::BadMagic, "unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.encoder_hash = r.get<std::uint64_t>();
  std::istringstream block(r.str(r.get<std::uint32_t>()));
  std::string line;
  while (std::getline(block, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) ckpt.config[line.substr(0, eq)] = line.substr(eq + 1);
  }
  const auto n = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    Tensor t;
    t.head = r.get<std::int32_t>();
    t.name = r.str(r.get<std::uint32_t>());
    const auto ndim = r.get<std::uint32_t>();
    std::size_t count = 1;
    for (std::uint32_t k = 0; k < ndim; ++k) {
      t.shape.push_back(r.get<std::uint32_t>());
      count *= t.shape.back();
    }
    const std::string raw = r.str(count * sizeof(float));
    t.data.resize(count);
    std::memcpy(t.data.data(), raw.data(), raw.size());
    ckpt.tensors.push_back(std::move(t));
  }
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return parse_checkpoint(read_file(path)); }

Tensor to_tensor(int head, const std::string& name, const Mat& m) {
  Tensor t{head, name, {static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())}, {}};
  t.data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) t.data.push_back(static_cast<float>(m(i, j)));
  return t;
}

Tensor to_tensor(int head, const std::string& name, const Vec& v) {
  Tensor t{head, name, {static_cast<std::uint32_t>(v.size())}, {}};
  for (Eigen::Index i = 0; i < v.size(); ++i) t.data.push_back(static_cast<float>(v[i]));
  return t;
}

Mat mat_from(const Tensor& t) {
  if (t.shape.size() != 2) throw Error(ErrorKind::DimensionMismatch, "tensor " + t.name + " is not a matrix");
  Mat m(t.shape[0], t.shape[1]);
  for (std::size_t i = 0; i < t.data.size(); ++i) m.data()[i] = t.data[i];  // row-major both sides
  return m;
}

Vec vec_from(const Tensor& t) {
  if (t.shape.size() != 1) throw Error(ErrorKind::DimensionMismatch, "tensor " + t.name + " is not a vector");
  Vec v(t.shape[0]);
  for (std::size_t i = 0; i < t.data.size(); ++i) v[static_cast<Eigen::Index>(i)] = t.data[i];
  return v;
}

}  // namespace villa
