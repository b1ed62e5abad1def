// Core value types: covariate-label pairs, the four-way data split used by
// every experiment, and the deterministic per-repeat randomness protocol.
//
// Randomness protocol: each repeat owns a private stream. The stream seed is
// derived from (base_seed, repeat_index) by running splitmix64 over
// base_seed and then once more over seed + repeat_index, and feeds a
// std::mt19937_64 engine. Identical SeedSpec values therefore replay
// identical draw sequences within one build; distinct repeat indices give
// statistically independent streams. Normal draws use the Box-Muller
// transform with the paired value cached inside the stream.

#pragma once

#include <cstdint>
#include <span>
#include <random>
#include <vector>

namespace stcp {

struct LabeledSample {
  std::vector<double> x;
  double y = 0.0;
};

// The four-way split: n labeled target, m unlabeled target covariates,
// N labeled source, and held-out test points. All covariates share dim.
struct DataBundle {
  std::vector<LabeledSample> target_labeled;
  std::vector<std::vector<double>> target_unlabeled;
  std::vector<LabeledSample> source_labeled;
  std::vector<LabeledSample> test;
  int dim = 0;

  // Throws EmptyInput / NonFinite on size-zero parts or dimension mismatch.
  void validate() const;
};

struct SeedSpec {
  std::uint64_t base_seed = 0;
  std::uint32_t repeat_index = 0;
};

class RngStream {
public:
  explicit RngStream(SeedSpec spec);

  std::uint64_t next_u64();

  // Uniform on [0, 1) with 53 random bits.
  double uniform();

  // Standard normal draw (Box-Muller, spare cached).
  double normal();

  // Unbiased uniform index in [0, bound) via rejection.
  std::size_t uniform_index(std::size_t bound);

private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

RngStream derive_stream(SeedSpec spec);

double standard_normal(RngStream& stream);

} // namespace stcp
