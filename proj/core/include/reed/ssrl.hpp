#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "reed/autodiff.hpp"
#include "reed/data.hpp"
#include "reed/matrix.hpp"
#include "reed/mlp.hpp"

namespace reed::ssrl {

using nn::LayerStack;
using nn::Matrix;
using nn::Var;

struct ContrastiveConfig {
  double temperature = 0.5;
  int batch_size = 64;
  int epochs = 200;
  data::AugmentationSpec augmentation{1.0, 0.8, 1.2, 0.1};
  double learning_rate = 1e-3;
  double eta_min = 0.0;
  /// Encoder widths after the input layer; the representation is the last.
  std::vector<std::size_t> hidden = {64, 64};
  std::size_t projection_dim = 32;

  void validate() const;
};

/// NT-Xent over 2B projected rows where rows 2k and 2k+1 are views of one
/// sample. Rows are L2-normalized internally. Throws ConfigError for fewer
/// than 4 rows, an odd row count or a non-positive temperature.
double nt_xent_loss(const Matrix& projected, double temperature);
Var nt_xent_loss(Var projected, double temperature);

struct EpochLoss {
  int epoch = 0;
  double loss = 0.0;
};

struct EncoderResult {
  LayerStack encoder;
  LayerStack projection_head;
  /// Epoch 0 is the untrained model; epochs 1..E are training means.
  std::vector<EpochLoss> log;
};

/// Trains h(.; theta) plus a linear projection head on pairs of augmented
/// views with Adam and a cosine schedule. Only features are read.
EncoderResult train_encoder(const Matrix& x, const ContrastiveConfig& config, std::uint64_t seed);

/// Representation beneath the projection head.
Matrix embed(const LayerStack& encoder, const Matrix& x);

}  // namespace reed::ssrl
