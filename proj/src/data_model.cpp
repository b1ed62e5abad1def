#include "stcp/data_model.hpp"

#include <cmath>
#include <string>

#include "stcp/errors.hpp"

namespace stcp {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

void check_sample(const LabeledSample& s, int dim, const char* part) {
  if (static_cast<int>(s.x.size()) != dim)
    throw NonFinite(std::string(part) + ": covariate dimension mismatch");
  for (double v : s.x)
    if (!std::isfinite(v))
      throw NonFinite(std::string(part) + ": non-finite covariate");
  if (!std::isfinite(s.y))
    throw NonFinite(std::string(part) + ": non-finite label");
}

} // namespace

void DataBundle::validate() const {
  if (target_labeled.empty()) throw EmptyInput("DataBundle: n must be >= 1");
  if (target_unlabeled.empty()) throw EmptyInput("DataBundle: m must be >= 1");
  if (source_labeled.empty()) throw EmptyInput("DataBundle: N must be >= 1");
  for (const auto& s : target_labeled) check_sample(s, dim, "target_labeled");
  for (const auto& s : source_labeled) check_sample(s, dim, "source_labeled");
  for (const auto& s : test) check_sample(s, dim, "test");
  for (const auto& x : target_unlabeled)
    if (static_cast<int>(x.size()) != dim)
      throw NonFinite("target_unlabeled: covariate dimension mismatch");
}

RngStream::RngStream(SeedSpec spec)
    : engine_(splitmix64(splitmix64(spec.base_seed) + spec.repeat_index)) {}

std::uint64_t RngStream::next_u64() { return engine_(); }

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // u1 in (0,1] so log is finite.
  double u1 = 1.0 - uniform();
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 2.0 * 3.14159265358979323846 * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

std::size_t RngStream::uniform_index(std::size_t bound) {
  if (bound == 0) return 0;
  const std::uint64_t limit =
      std::uint64_t(-1) - std::uint64_t(-1) % bound;
  std::uint64_t v = next_u64();
  while (v >= limit) v = next_u64();
  return static_cast<std::size_t>(v % bound);
}

RngStream derive_stream(SeedSpec spec) { return RngStream(spec); }

double standard_normal(RngStream& stream) { return stream.normal(); }

} // namespace stcp
