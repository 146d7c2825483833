#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace sacbf {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Seeded RNG wrapper. Doubles are derived from raw mt19937_64 output
// instead of std::uniform_real_distribution, whose output is
// implementation-defined; this keeps runs reproducible bit-for-bit.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed), seed_mix_(seed) {}

  // uniform in [0, 1)
  double canonical() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * canonical(); }

  // uniform integer in [0, n)
  uint64_t uniform_index(uint64_t n) {
    // rejection sampling to avoid modulo bias
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t v;
    do {
      v = engine_();
    } while (v >= limit);
    return v % n;
  }

  VectorXd uniform_vector(const VectorXd& lo, const VectorXd& hi) {
    VectorXd v(lo.size());
    for (Eigen::Index i = 0; i < lo.size(); ++i) v(i) = uniform(lo(i), hi(i));
    return v;
  }

  template <class T>
  void shuffle(std::vector<T>& items) {
    for (size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[uniform_index(i)]);
    }
  }

  // independent stream for worker `id`, derived via splitmix64 so that
  // per-worker seeds do not collide with the parent sequence
  Rng derive(uint64_t id) const {
    uint64_t z = seed_mix_ + 0x9e3779b97f4a7c15ULL * (id + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return Rng(z ^ (z >> 31));
  }

 private:
  std::mt19937_64 engine_;
  uint64_t seed_mix_ = 0;
};

inline VectorXd clip_to_box(const VectorXd& v, const VectorXd& lo, const VectorXd& hi) {
  return v.cwiseMax(lo).cwiseMin(hi);
}

// FNV-1a, used to stamp reports with a config fingerprint
uint64_t fnv1a(const std::string& text);
std::string hex64(uint64_t value);

// minimal CSV writing; fields are preformatted strings
void write_csv(const std::string& path, const std::string& header,
               const std::vector<std::string>& rows);

std::string format_double(double v);

bool file_exists(const std::string& path);
void ensure_directory(const std::string& path);

}  // namespace sacbf
