#pragma once

#include <cstdint>
#include <string>

#include "reed/credibility.hpp"
#include "reed/data.hpp"
#include "reed/semi.hpp"
#include "reed/ssrl.hpp"

namespace reed {

/// End-to-end supervised training used by the decoupling regimes and the CE
/// baseline: Adam with a constant learning rate, cross-entropy.
struct SupervisedConfig {
  int epochs = 200;
  double learning_rate = 1e-3;
  int batch_size = 128;

  void validate() const;
};

enum class Regime { full, no_stage3 };

Regime parse_regime(const std::string& name);
std::string to_string(Regime r);

struct ExperimentConfig {
  std::uint64_t seed = 0;
  data::BlobSpec data{};
  double test_fraction = 0.2;
  /// noise.seed is ignored; the noise stream derives from `seed`.
  data::NoiseSpec noise{};
  ssrl::ContrastiveConfig ssrl{};
  cred::Stage2Config stage2{};
  semi::MixMatchConfig stage3{};
  SupervisedConfig supervised{};
  Regime regime = Regime::full;

  void validate() const;
};

/// Independent RNG streams derived from the experiment seed.
namespace streams {
inline constexpr std::uint64_t blobs = 1;
inline constexpr std::uint64_t split = 2;
inline constexpr std::uint64_t noise = 3;
inline constexpr std::uint64_t stage1 = 4;
inline constexpr std::uint64_t stage2 = 5;
inline constexpr std::uint64_t stage3 = 6;
inline constexpr std::uint64_t supervised_init = 7;
inline constexpr std::uint64_t supervised_order = 8;
}  // namespace streams

}  // namespace reed
