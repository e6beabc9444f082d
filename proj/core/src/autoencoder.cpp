#include "scdsc/autoencoder.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <string>

#include "scdsc/binary_io.hpp"
#include "scdsc/optim.hpp"

namespace scdsc {

namespace {

/// Layer widths (in, out) of every layer, encoder then mirrored decoder.
std::vector<std::pair<std::size_t, std::size_t>> layer_shapes(const std::vector<std::size_t>& sizes) {
  if (sizes.size() < 2) throw ContractError("autoencoder needs at least an input and a latent size");
  for (std::size_t s : sizes) {
    if (s == 0) throw ContractError("autoencoder layer sizes must be positive");
  }
  std::vector<std::pair<std::size_t, std::size_t>> shapes;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) shapes.emplace_back(sizes[i], sizes[i + 1]);
  for (std::size_t i = sizes.size() - 1; i > 0; --i) shapes.emplace_back(sizes[i], sizes[i - 1]);
  return shapes;
}

}  // namespace

template <typename T>
AutoencoderParams<T> AutoencoderParams<T>::glorot(std::vector<std::size_t> encoder_sizes, Rng& rng) {
  AutoencoderParams params;
  for (const auto& [in, out] : layer_shapes(encoder_sizes)) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    ad::Matrix<T> w(static_cast<ad::Index>(in), static_cast<ad::Index>(out));
    for (ad::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<T>((2.0 * uniform01(rng) - 1.0) * limit);
    params.weights.push_back(std::move(w));
    params.biases.push_back(ad::Matrix<T>::Zero(1, static_cast<ad::Index>(out)));
  }
  params.encoder_sizes = std::move(encoder_sizes);
  return params;
}

template <typename T>
AutoencoderParams<T> AutoencoderParams<T>::zeros(std::vector<std::size_t> encoder_sizes) {
  AutoencoderParams params;
  for (const auto& [in, out] : layer_shapes(encoder_sizes)) {
    params.weights.push_back(ad::Matrix<T>::Zero(static_cast<ad::Index>(in), static_cast<ad::Index>(out)));
    params.biases.push_back(ad::Matrix<T>::Zero(1, static_cast<ad::Index>(out)));
  }
  params.encoder_sizes = std::move(encoder_sizes);
  return params;
}

template <typename T>
std::vector<ad::Matrix<T>*> AutoencoderParams<T>::parameters() {
  std::vector<ad::Matrix<T>*> out;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out.push_back(&weights[i]);
    out.push_back(&biases[i]);
  }
  return out;
}

template <typename T>
std::vector<const ad::Matrix<T>*> AutoencoderParams<T>::parameters() const {
  std::vector<const ad::Matrix<T>*> out;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out.push_back(&weights[i]);
    out.push_back(&biases[i]);
  }
  return out;
}

template <typename T>
std::vector<ad::Value<T>> BoundAutoencoder<T>::parameters() const {
  std::vector<ad::Value<T>> out;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    out.push_back(weights[i]);
    out.push_back(biases[i]);
  }
  return out;
}

template <typename T>
BoundAutoencoder<T> bind(ad::Tape<T>& tape, const AutoencoderParams<T>& params, bool requires_grad) {
  BoundAutoencoder<T> net;
  net.encoder_sizes = params.encoder_sizes;
  for (std::size_t i = 0; i < params.weights.size(); ++i) {
    net.weights.push_back(tape.leaf(params.weights[i], requires_grad));
    net.biases.push_back(tape.leaf(params.biases[i], requires_grad));
  }
  return net;
}

namespace {

template <typename T>
ad::Value<T> run_layers(const BoundAutoencoder<T>& net, ad::Value<T> x, std::size_t first, std::size_t last) {
  for (std::size_t l = first; l < last; ++l) {
    x = ad::add(ad::matmul(x, net.weights[l]), net.biases[l]);
    if (l + 1 < last) x = ad::relu(x);
  }
  return x;
}

}  // namespace

template <typename T>
ad::Value<T> encode(const BoundAutoencoder<T>& net, const ad::Value<T>& input) {
  const std::size_t layers = net.encoder_sizes.size() - 1;
  if (static_cast<std::size_t>(input.cols()) != net.encoder_sizes.front()) {
    throw DimensionError("encode: input has " + std::to_string(input.cols()) + " columns, network expects " +
                         std::to_string(net.encoder_sizes.front()));
  }
  return run_layers(net, input, 0, layers);
}

template <typename T>
ad::Value<T> decode(const BoundAutoencoder<T>& net, const ad::Value<T>& latent) {
  const std::size_t layers = net.encoder_sizes.size() - 1;
  if (static_cast<std::size_t>(latent.cols()) != net.encoder_sizes.back()) {
    throw DimensionError("decode: latent has " + std::to_string(latent.cols()) + " columns, network expects " +
                         std::to_string(net.encoder_sizes.back()));
  }
  return run_layers(net, latent, layers, 2 * layers);
}

template <typename T>
ad::Value<T> reconstruction_loss(const ad::Value<T>& input, const ad::Value<T>& reconstruction) {
  if (input.rows() != reconstruction.rows() || input.cols() != reconstruction.cols()) {
    throw DimensionError("reconstruction_loss: shapes differ");
  }
  const T factor = T(1) / (T(2) * static_cast<T>(input.rows()));
  return ad::scale(ad::frobenius_sq(ad::sub(input, reconstruction)), factor);
}

template <typename T>
ad::Matrix<T> encode(const AutoencoderParams<T>& params, const ad::Matrix<T>& input) {
  ad::Tape<T> tape;
  const BoundAutoencoder<T> net = bind(tape, params, false);
  return encode(net, tape.constant(input)).data();
}

double reconstruction_loss(const AutoencoderParams<float>& params, const ad::Matrix<float>& patches) {
  ad::Tape<float> tape;
  const auto net = bind(tape, params, false);
  const auto x = tape.constant(patches);
  return reconstruction_loss(x, decode(net, encode(net, x))).item();
}

AutoencoderParams<float> pretrain(const ad::Matrix<float>& patches, const std::vector<std::size_t>& encoder_sizes,
                                  const PretrainOptions& options, PretrainReport* report) {
  if (options.epochs < 1) throw ContractError("pretrain: epochs must be >= 1");
  if (encoder_sizes.empty() || static_cast<std::size_t>(patches.cols()) != encoder_sizes.front()) {
    throw DimensionError("pretrain: patch width does not match the network input");
  }
  const std::size_t n = static_cast<std::size_t>(patches.rows());
  if (n == 0) throw ContractError("pretrain: no samples");

  Rng init_rng = substream(options.seed, "init");
  Rng shuffle_rng = substream(options.seed, "shuffle");
  AutoencoderParams<float> params = AutoencoderParams<float>::glorot(encoder_sizes, init_rng);
  Adam<float> adam(options.lr);

  PretrainReport local;
  local.initial_loss = reconstruction_loss(params, patches);

  const std::size_t batch = options.batch_size == 0 ? n : std::min(options.batch_size, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  ad::Matrix<float> chunk;

  for (int epoch = 1; epoch <= options.epochs; ++epoch) {
    if (batch < n) {
      for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[uniform_index(shuffle_rng, i + 1)]);
    }
    double weighted = 0.0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t rows = std::min(batch, n - start);
      if (batch == n) {
        chunk = patches;
      } else {
        chunk.resize(static_cast<ad::Index>(rows), patches.cols());
        for (std::size_t r = 0; r < rows; ++r) chunk.row(static_cast<ad::Index>(r)) = patches.row(static_cast<ad::Index>(order[start + r]));
      }
      ad::Tape<float> tape;
      const auto net = bind(tape, params);
      const auto x = tape.constant(chunk);
      const auto loss = reconstruction_loss(x, decode(net, encode(net, x)));
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw DivergenceError("pretrain: non-finite reconstruction loss at epoch " + std::to_string(epoch), epoch);
      }
      weighted += value * static_cast<double>(rows);
      tape.backward(loss);
      std::vector<const ad::Matrix<float>*> grads;
      for (const auto& v : net.parameters()) grads.push_back(&v.grad());
      auto targets = params.parameters();
      adam.step(targets, grads);
    }
    local.epoch_loss.push_back(weighted / static_cast<double>(n));
  }
  local.final_loss = reconstruction_loss(params, patches);
  if (!std::isfinite(local.final_loss)) {
    throw DivergenceError("pretrain: non-finite reconstruction loss after epoch " + std::to_string(options.epochs),
                          options.epochs);
  }
  if (report != nullptr) *report = std::move(local);
  return params;
}

void write_autoencoder(std::ostream& out, const AutoencoderParams<float>& params) {
  out << "SCDSC-AE 1\nlayers";
  for (std::size_t s : params.encoder_sizes) out << ' ' << s;
  out << '\n';
  for (const auto* p : params.parameters()) {
    io::write_array(out, std::span<const float>(p->data(), static_cast<std::size_t>(p->size())));
  }
}

AutoencoderParams<float> read_autoencoder(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "SCDSC-AE 1") throw IoError("checkpoint: missing SCDSC-AE header");
  if (!std::getline(in, line)) throw IoError("checkpoint: missing layer sizes");
  std::istringstream fields(line);
  std::string key;
  fields >> key;
  if (key != "layers") throw IoError("checkpoint: malformed layer line");
  std::vector<std::size_t> sizes;
  for (std::size_t s; fields >> s;) sizes.push_back(s);
  AutoencoderParams<float> params = AutoencoderParams<float>::zeros(sizes);
  std::vector<float> buffer;
  for (auto* p : params.parameters()) {
    if (!io::read_array(in, static_cast<std::size_t>(p->size()), buffer)) throw IoError("checkpoint: truncated autoencoder payload");
    std::copy(buffer.begin(), buffer.end(), p->data());
  }
  return params;
}

#define SCDSC_AE_INSTANTIATE(T)                                                                   \
  template struct AutoencoderParams<T>;                                                           \
  template struct BoundAutoencoder<T>;                                                            \
  template BoundAutoencoder<T> bind(ad::Tape<T>&, const AutoencoderParams<T>&, bool);            \
  template ad::Value<T> encode(const BoundAutoencoder<T>&, const ad::Value<T>&);                 \
  template ad::Value<T> decode(const BoundAutoencoder<T>&, const ad::Value<T>&);                 \
  template ad::Value<T> reconstruction_loss(const ad::Value<T>&, const ad::Value<T>&);           \
  template ad::Matrix<T> encode(const AutoencoderParams<T>&, const ad::Matrix<T>&);

SCDSC_AE_INSTANTIATE(float)
SCDSC_AE_INSTANTIATE(double)

#undef SCDSC_AE_INSTANTIATE

}  // namespace scdsc
