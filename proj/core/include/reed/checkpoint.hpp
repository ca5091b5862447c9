#pragma once

#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "reed/config.hpp"
#include "reed/credibility.hpp"
#include "reed/mlp.hpp"
#include "reed/optim.hpp"

namespace reed::io {

using Json = nlohmann::json;

inline constexpr int kFormatVersion = 1;

struct ModelCheckpoint {
  nn::MlpParams params;
  std::optional<nn::EmaState> ema;

  friend bool operator==(const ModelCheckpoint& a, const ModelCheckpoint& b) {
    if (a.params != b.params || a.ema.has_value() != b.ema.has_value()) return false;
    return !a.ema || (a.ema->decay == b.ema->decay && a.ema->shadow == b.ema->shadow);
  }
};

struct GmmPair {
  std::optional<cred::Gmm1D> loss;
  std::optional<cred::Gmm1D> confidence;
};

// Every loader throws FormatError naming the first offending field and
// leaves no partial result behind.

Json to_json(const ModelCheckpoint& m);
ModelCheckpoint model_from_json(const Json& j);

Json to_json(const cred::Gmm1D& g);
cred::Gmm1D gmm_from_json(const Json& j);
Json to_json(const GmmPair& g);
GmmPair gmm_pair_from_json(const Json& j);

Json to_json(const cred::TransferredLabels& t);
cred::TransferredLabels transfer_from_json(const Json& j);

/// Every field is written; on load every section except `seed` is optional
/// and falls back to the defaults. Unknown keys are rejected.
Json to_json(const ExperimentConfig& c);
ExperimentConfig config_from_json(const Json& j);

/// Canonical text: two-space indent, sorted keys, trailing newline.
std::string dump(const Json& j);
void save_json(const Json& j, const std::string& path);
Json load_json(const std::string& path);

void save_model(const ModelCheckpoint& m, const std::string& path);
ModelCheckpoint load_model(const std::string& path);
void save_transfer(const cred::TransferredLabels& t, const std::string& path);
cred::TransferredLabels load_transfer(const std::string& path);
void save_config(const ExperimentConfig& c, const std::string& path);
ExperimentConfig load_config(const std::string& path);

}  // namespace reed::io
