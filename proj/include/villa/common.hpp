#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace villa {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

enum class ErrorKind {
  BadMagic,
  CountMismatch,
  TruncatedFile,
  UnreachableComplexity,
  EmptyDataset,
  ShapeMismatch,
  EmptyText,
  UnknownAttribute,
  DimensionMismatch,
  EmptyBatch,
  NonFiniteGradient,
  EmptyScores,
  DanglingReference,
  VariantInputMismatch,
  EncoderMismatch,
  EmptyIndex,
  KTooLarge,
  InvalidGroundTruth,
  InvalidArgument,
  MissingArtifact,
  ConfigHashMismatch,
  Io,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Process exit code for an error: 2 data error, 3 numerical error.
int exit_code_for(ErrorKind kind);

// 64-bit FNV-1a. Used for config hashes and token seeds, so it must stay stable.
std::uint64_t fnv1a(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::uint64_t splitmix64(std::uint64_t x);
std::string hex64(std::uint64_t v);

// Deterministic random stream. Distributions are implemented here rather than
// through <random> adaptors, whose output is implementation defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // Stream for item `index` under `master`; independent of generation order.
  static Rng stream(std::uint64_t master, std::uint64_t index) {
    return Rng(splitmix64(master ^ splitmix64(index + 0x9e3779b97f4a7c15ULL)));
  }

  std::uint64_t next() { return engine_(); }
  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);
  // Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();

  template <typename T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

// Runs body(i) for i in [0, n) on up to `threads` workers. Each index is
// processed exactly once; callers write results into per-index slots so the
// outcome is independent of scheduling.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& body);

// Thread count from an explicit value, else VILLA_THREADS, else 1.
int resolve_threads(int requested);

// Write-to-temp-then-rename helpers.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

}  // namespace villa
