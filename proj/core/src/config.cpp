#include "reed/config.hpp"

#include "reed/error.hpp"

namespace reed {

void SupervisedConfig::validate() const {
  if (epochs < 0) throw ConfigError("supervised: epochs must be non-negative");
  if (!(learning_rate > 0.0)) throw ConfigError("supervised: learning_rate must be positive");
  if (batch_size < 1) throw ConfigError("supervised: batch_size must be positive");
}

Regime parse_regime(const std::string& name) {
  if (name == "full") return Regime::full;
  if (name == "no-stage3") return Regime::no_stage3;
  throw ConfigError("unknown regime '" + name + "' (expected full or no-stage3)");
}

std::string to_string(Regime r) { return r == Regime::full ? "full" : "no-stage3"; }

void ExperimentConfig::validate() const {
  if (data.classes < 2 || data.dim < 2 || data.per_class <= 0 || !(data.separation > 0.0) || !(data.sigma >= 0.0))
    throw ConfigError("config: invalid data spec");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) throw ConfigError("config: test_fraction must be in (0, 1)");
  if (!(noise.ratio >= 0.0 && noise.ratio <= 1.0)) throw ConfigError("config: noise ratio must be in [0, 1]");
  if (!noise.pair_map.empty() && noise.pair_map.size() != static_cast<std::size_t>(data.classes))
    throw ConfigError("config: pair_map must have one entry per class");
  ssrl.validate();
  ssrl.augmentation.validate();
  stage2.classifier.validate();
  if (!(stage2.tau_clean >= 0.0 && stage2.tau_clean <= 1.0 && stage2.tau_right >= 0.0 && stage2.tau_right <= 1.0))
    throw ConfigError("config: thresholds must be in [0, 1]");
  stage3.validate();
  supervised.validate();
}

}  // namespace reed
