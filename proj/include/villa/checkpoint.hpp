#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "villa/common.hpp"

namespace villa {

// Binary container shared by mapping-model and VLM checkpoints:
//   "VLLA" | u32 version | u64 encoder_hash | u32 len | config block (key=value lines)
//   | u32 tensor count | per tensor: i32 head, u32 len + name, u32 ndim, u32 dims[ndim],
//     f32 data[prod(dims)]
// All integers and floats little-endian.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Tensor {
  int head = -1;  // -1 for tensors not owned by a projection head
  std::string name;
  std::vector<std::uint32_t> shape;
  std::vector<float> data;
};

struct Checkpoint {
  std::uint64_t encoder_hash = 0;
  std::map<std::string, std::string> config;
  std::vector<Tensor> tensors;

  const Tensor& tensor(int head, const std::string& name) const;
  const std::string& get(const std::string& key) const;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(const std::string& bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Tensor to_tensor(int head, const std::string& name, const Mat& m);
Tensor to_tensor(int head, const std::string& name, const Vec& v);
Mat mat_from(const Tensor& t);
Vec vec_from(const Tensor& t);

}  // namespace villa
