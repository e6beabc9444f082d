#pragma once

// End-to-end training: mini-cluster generation, autoencoder pretraining,
// K-means + SVD basis initialisation and joint optimisation of
//
//   L = L_R + beta * L_D + beta1 * L_NL + beta2 * L_L.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "scdsc/autoencoder.hpp"
#include "scdsc/finch.hpp"
#include "scdsc/hsi.hpp"
#include "scdsc/metrics.hpp"
#include "scdsc/optim.hpp"
#include "scdsc/subspace.hpp"

namespace scdsc {

enum class BatchMode { full, mini };

struct TrainConfig {
  std::uint64_t seed = 7;
  std::size_t clusters = 0;  // k, required
  double lr = 1e-4;
  double pretrain_lr = 1e-3;
  int epochs = 400;
  int pretrain_epochs = 200;
  std::size_t pretrain_batch = 256;
  double beta = 1e-3;
  double beta1 = 3.0;
  double beta2 = 1.0;
  std::size_t window = 3;
  std::size_t rank = 5;
  double theta = 0.1;
  std::size_t patch = 7;
  std::size_t minicluster_patch = 17;
  int finch_iteration = 2;
  finch::Metric finch_metric = finch::Metric::cosine;
  BatchMode batch_mode = BatchMode::full;
  std::size_t batch_size = 1024;
  std::size_t latent_dim = 0;  // 0 selects k * r
  std::vector<std::size_t> hidden = kDefaultHiddenSizes;
  int kmeans_restarts = 10;
  int checkpoint_every = 50;

  /// Throws ConfigError on out-of-range values.
  void validate() const;
  std::size_t resolved_latent_dim() const { return latent_dim == 0 ? clusters * rank : latent_dim; }
  BasisShape basis_shape() const { return {clusters, rank, theta}; }

  /// Resolved key=value pairs, keys matching the command-line flag names.
  std::vector<std::pair<std::string, std::string>> to_key_values() const;
};

struct LossBreakdown {
  double reconstruction = 0.0;  // L_R
  double dissimilarity = 0.0;   // L_D
  double nonlocal = 0.0;        // L_NL
  double local = 0.0;           // L_L
  double total = 0.0;
};

/// Weighted sum of loss terms on a tape. Missing terms are omitted entirely.
template <typename T>
struct LossTerms {
  ad::Value<T> reconstruction;
  std::optional<ad::Value<T>> dissimilarity;
  std::optional<ad::Value<T>> nonlocal;
  std::optional<ad::Value<T>> local;
};

template <typename T>
ad::Value<T> weighted_total(const LossTerms<T>& terms, double beta, double beta1, double beta2);

struct Model {
  AutoencoderParams<float> autoencoder;
  BasisSet bases;
};

/// Checkpoint file: the SCDSC-AE section followed by the SCDSC-D section.
void save_checkpoint(const std::filesystem::path& path, const Model& model);
Model load_checkpoint(const std::filesystem::path& path);

/// Inputs of the joint phase that stay fixed across epochs.
struct TrainingData {
  MatrixF patches;
  std::shared_ptr<const ad::GroupIndex> partition;
  std::shared_ptr<const ad::RowNeighborhood> neighborhood;
  /// Ground truth per sample, empty when unavailable.
  std::vector<std::size_t> truth;
};

/// Detached targets produced by a gradient-free pass.
struct Targets {
  MatrixD assignments;  // S
  MatrixD refined;      // M~
  MatrixD smoothed;     // F
};

/// Throws DivergenceError when S is non-finite or has a zero entry.
Targets compute_targets(const Model& model, const TrainingData& data);

struct EpochRecord {
  int epoch = 0;
  LossBreakdown losses;
  std::optional<metrics::Evaluation> evaluation;
};

struct RunState {
  int epoch = 0;
  LossBreakdown losses;
  std::vector<std::size_t> labels;
  std::vector<std::filesystem::path> checkpoints;
};

/// Joint optimisation of the autoencoder parameters and the bases.
class JointTrainer {
 public:
  JointTrainer(Model model, const TrainingData& data, const TrainConfig& config);

  const Model& model() const { return model_; }
  const TrainConfig& config() const { return config_; }

  /// Loss values at the current parameters without updating anything.
  LossBreakdown evaluate_losses(const Targets& targets) const;

  /// One pass over the data against fixed targets; returns the losses seen
  /// during the pass. Throws DivergenceError on a non-finite loss or gradient.
  LossBreakdown train_epoch(const Targets& targets, int epoch);

 private:
  LossBreakdown step(const Targets& targets, std::span<const std::size_t> rows, bool apply, int epoch);

  Model model_;
  const TrainingData& data_;
  TrainConfig config_;
  Adam<float> adam_;
  Rng shuffle_;
};

/// Outputs of Steps 1-3, shared by runs that differ only in the joint phase.
struct PreparedRun {
  PatchSet patches;
  std::vector<std::size_t> truth;
  finch::PartitionHierarchy hierarchy;
  int finch_level = 0;
  PretrainReport pretrain_report;
  std::vector<std::size_t> kmeans_labels;
  Model initial;
  TrainingData data;
};

PreparedRun prepare_run(const HsiCube& cube, const TrainConfig& config);

struct RunResult {
  /// Cluster id per masked pixel, in raster order.
  std::vector<std::size_t> labels;
  std::optional<metrics::Evaluation> evaluation;
  std::vector<EpochRecord> history;
  Model model;
  RunState state;
};

using ProgressCallback = std::function<void(const EpochRecord&)>;

struct RunOutput {
  /// Run directory; nothing is written when empty.
  std::optional<std::filesystem::path> dir;
  /// Extra key=value lines for config.txt (input and output paths).
  std::vector<std::pair<std::string, std::string>> extra_config;
  ProgressCallback progress;
};

/// Step 4 from a prepared run. With a run directory, metrics.csv and
/// checkpoints are written there. On divergence the last good parameters are
/// saved as checkpoint_last_good.bin before the error propagates.
RunResult train_joint(const PreparedRun& prepared, const TrainConfig& config, const RunOutput& output = {});

/// Full pipeline. With a run directory it also writes config.txt, the
/// mini-cluster partition, labels.u16, map.ppm and per-class accuracies.
RunResult run_pipeline(const HsiCube& cube, const TrainConfig& config, const RunOutput& output = {});

}  // namespace scdsc
