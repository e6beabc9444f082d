#pragma once

// Fully connected autoencoder producing the latent representation H.
//
// Encoder sizes [input, hidden..., latent]; the decoder mirrors them. Hidden
// layers use a rectifier, the latent and output layers are linear. Weights
// are stored input x output so a layer computes X W + b.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <vector>

#include "scdsc/autodiff.hpp"
#include "scdsc/rng.hpp"

namespace scdsc {

/// Hidden widths used by default between the input and the latent layer.
inline const std::vector<std::size_t> kDefaultHiddenSizes{500, 500, 2000};

template <typename T>
struct AutoencoderParams {
  std::vector<std::size_t> encoder_sizes;
  /// Encoder layers followed by decoder layers.
  std::vector<ad::Matrix<T>> weights;
  std::vector<ad::Matrix<T>> biases;  // 1 x out each

  std::size_t input_dim() const { return encoder_sizes.front(); }
  std::size_t latent_dim() const { return encoder_sizes.back(); }
  std::size_t encoder_layers() const { return encoder_sizes.size() - 1; }
  std::size_t layer_count() const { return weights.size(); }

  /// Glorot-uniform weights, zero biases.
  static AutoencoderParams glorot(std::vector<std::size_t> encoder_sizes, Rng& rng);
  static AutoencoderParams zeros(std::vector<std::size_t> encoder_sizes);

  /// Every parameter in declaration order (W0, b0, W1, b1, ...).
  std::vector<ad::Matrix<T>*> parameters();
  std::vector<const ad::Matrix<T>*> parameters() const;

  template <typename U>
  AutoencoderParams<U> cast() const;
};

template <typename T>
template <typename U>
AutoencoderParams<U> AutoencoderParams<T>::cast() const {
  AutoencoderParams<U> out;
  out.encoder_sizes = encoder_sizes;
  for (const auto& w : weights) out.weights.push_back(w.template cast<U>());
  for (const auto& b : biases) out.biases.push_back(b.template cast<U>());
  return out;
}

/// Autoencoder parameters bound as leaves of one tape.
template <typename T>
struct BoundAutoencoder {
  std::vector<std::size_t> encoder_sizes;
  std::vector<ad::Value<T>> weights;
  std::vector<ad::Value<T>> biases;

  std::vector<ad::Value<T>> parameters() const;
};

template <typename T>
BoundAutoencoder<T> bind(ad::Tape<T>& tape, const AutoencoderParams<T>& params, bool requires_grad = true);

template <typename T>
ad::Value<T> encode(const BoundAutoencoder<T>& net, const ad::Value<T>& input);

template <typename T>
ad::Value<T> decode(const BoundAutoencoder<T>& net, const ad::Value<T>& latent);

/// (1 / 2n) * sum_i ||X_i - Xhat_i||^2.
template <typename T>
ad::Value<T> reconstruction_loss(const ad::Value<T>& input, const ad::Value<T>& reconstruction);

/// Gradient-free forward pass through the encoder.
template <typename T>
ad::Matrix<T> encode(const AutoencoderParams<T>& params, const ad::Matrix<T>& input);

struct PretrainOptions {
  int epochs = 200;
  double lr = 1e-3;
  std::uint64_t seed = 7;
  /// Samples per gradient step; 0 means full batch.
  std::size_t batch_size = 256;
};

struct PretrainReport {
  double initial_loss = 0.0;
  /// Sample-weighted mean of the batch losses seen during each epoch.
  std::vector<double> epoch_loss;
  double final_loss = 0.0;
};

/// Minimises the reconstruction loss with Adam. Weights come from the "init"
/// substream and batch order from the "shuffle" substream of `options.seed`.
/// Throws DivergenceError naming the epoch on a non-finite loss.
AutoencoderParams<float> pretrain(const ad::Matrix<float>& patches, const std::vector<std::size_t>& encoder_sizes,
                                  const PretrainOptions& options, PretrainReport* report = nullptr);

/// Mean reconstruction loss over the whole dataset without recording gradients.
double reconstruction_loss(const AutoencoderParams<float>& params, const ad::Matrix<float>& patches);

/// Checkpoint section: "SCDSC-AE 1", a "layers ..." line, then float32
/// little-endian parameters in declaration order.
void write_autoencoder(std::ostream& out, const AutoencoderParams<float>& params);
AutoencoderParams<float> read_autoencoder(std::istream& in);

}  // namespace scdsc
