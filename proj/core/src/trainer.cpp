#include "scdsc/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "scdsc/binary_io.hpp"
#include "scdsc/constraints.hpp"

namespace scdsc {

namespace {

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string join_sizes(const std::vector<std::size_t>& sizes) {
  std::string out;
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    if (i > 0) out += ',';
    out += std::to_string(sizes[i]);
  }
  return out;
}

std::vector<std::size_t> to_size_labels(std::span<const std::uint16_t> labels) {
  return {labels.begin(), labels.end()};
}

bool all_finite(const ad::Matrix<float>& m) { return m.allFinite(); }

std::string checkpoint_name(int epoch) {
  std::ostringstream os;
  os << "checkpoint_epoch_" << std::setw(4) << std::setfill('0') << epoch << ".bin";
  return os.str();
}

void write_metrics_header(std::ostream& out) { out << "epoch,L_R,L_D,L_NL,L_L,total,OA,NMI,Kappa\n"; }

void write_metrics_row(std::ostream& out, const EpochRecord& record) {
  const LossBreakdown& l = record.losses;
  out << record.epoch << ',' << format_double(l.reconstruction) << ',' << format_double(l.dissimilarity) << ','
      << format_double(l.nonlocal) << ',' << format_double(l.local) << ',' << format_double(l.total);
  if (record.evaluation) {
    out << ',' << format_double(record.evaluation->oa) << ',' << format_double(record.evaluation->nmi) << ','
        << format_double(record.evaluation->kappa);
  } else {
    out << ",,,";
  }
  out << '\n';
  out.flush();
}

std::optional<metrics::Evaluation> maybe_evaluate(std::span<const std::size_t> labels,
                                                  const std::vector<std::size_t>& truth) {
  if (truth.empty()) return std::nullopt;
  std::vector<metrics::Label> shifted(labels.begin(), labels.end());
  for (auto& l : shifted) l += 1;
  return metrics::evaluate(shifted, truth);
}

}  // namespace

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError(what); };
  if (clusters < 1) fail("k must be at least 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) fail("lr must be a finite value >= 0");
  if (!(pretrain_lr >= 0.0) || !std::isfinite(pretrain_lr)) fail("pretrain-lr must be a finite value >= 0");
  if (epochs < 1) fail("epochs must be at least 1");
  if (pretrain_epochs < 1) fail("pretrain-epochs must be at least 1");
  if (!(beta >= 0.0) || !(beta1 >= 0.0) || !(beta2 >= 0.0)) fail("beta, beta1 and beta2 must be >= 0");
  if (window == 0 || window % 2 == 0) fail("window must be odd, got " + std::to_string(window));
  if (rank < 1) fail("r must be at least 1");
  if (!(theta > 0.0)) fail("theta must be > 0");
  if (patch == 0 || patch % 2 == 0) fail("patch must be odd, got " + std::to_string(patch));
  if (minicluster_patch == 0 || minicluster_patch % 2 == 0) {
    fail("mc-patch must be odd, got " + std::to_string(minicluster_patch));
  }
  if (finch_iteration < 1) fail("finch-iter must be at least 1");
  if (batch_mode == BatchMode::mini && batch_size < 1) fail("batch-size must be at least 1");
  if (resolved_latent_dim() < rank) fail("latent-dim must be at least r");
  for (std::size_t h : hidden) {
    if (h == 0) fail("hidden layer widths must be positive");
  }
  if (kmeans_restarts < 1) fail("kmeans-restarts must be at least 1");
  if (checkpoint_every < 0) fail("checkpoint-every must be >= 0");
}

std::vector<std::pair<std::string, std::string>> TrainConfig::to_key_values() const {
  return {
      {"seed", std::to_string(seed)},
      {"k", std::to_string(clusters)},
      {"lr", format_double(lr)},
      {"pretrain-lr", format_double(pretrain_lr)},
      {"epochs", std::to_string(epochs)},
      {"pretrain-epochs", std::to_string(pretrain_epochs)},
      {"pretrain-batch", std::to_string(pretrain_batch)},
      {"beta", format_double(beta)},
      {"beta1", format_double(beta1)},
      {"beta2", format_double(beta2)},
      {"window", std::to_string(window)},
      {"r", std::to_string(rank)},
      {"theta", format_double(theta)},
      {"patch", std::to_string(patch)},
      {"mc-patch", std::to_string(minicluster_patch)},
      {"finch-iter", std::to_string(finch_iteration)},
      {"metric", std::string(finch::metric_name(finch_metric))},
      {"batch", batch_mode == BatchMode::full ? "full" : "mini"},
      {"batch-size", std::to_string(batch_size)},
      {"latent-dim", std::to_string(resolved_latent_dim())},
      {"hidden", join_sizes(hidden)},
      {"kmeans-restarts", std::to_string(kmeans_restarts)},
      {"checkpoint-every", std::to_string(checkpoint_every)},
  };
}

template <typename T>
ad::Value<T> weighted_total(const LossTerms<T>& terms, double beta, double beta1, double beta2) {
  ad::Value<T> total = terms.reconstruction;
  if (terms.dissimilarity) total = ad::add(total, ad::scale(*terms.dissimilarity, static_cast<T>(beta)));
  if (terms.nonlocal) total = ad::add(total, ad::scale(*terms.nonlocal, static_cast<T>(beta1)));
  if (terms.local) total = ad::add(total, ad::scale(*terms.local, static_cast<T>(beta2)));
  return total;
}

template ad::Value<float> weighted_total(const LossTerms<float>&, double, double, double);
template ad::Value<double> weighted_total(const LossTerms<double>&, double, double, double);

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_autoencoder(out, model.autoencoder);
  write_bases(out, model.bases);
  if (!out) throw IoError("failed writing " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(LoadError::Kind::open, "cannot open " + path.string());
  Model model;
  model.autoencoder = read_autoencoder(in);
  model.bases = read_bases(in);
  if (model.bases.latent_dim() != model.autoencoder.latent_dim()) {
    throw LoadError(LoadError::Kind::header, path.string() + ": bases and autoencoder disagree on the latent size");
  }
  return model;
}

Targets compute_targets(const Model& model, const TrainingData& data) {
  const MatrixF latent = encode(model.autoencoder, data.patches);
  Targets targets;
  targets.assignments = soft_assign(latent, model.bases);
  if (!targets.assignments.allFinite() || !(targets.assignments.array() > 0.0).all()) {
    throw DivergenceError("soft assignments left the open simplex", 0);
  }
  targets.refined = refine(mini_cluster_mean(targets.assignments, *data.partition));
  targets.smoothed = spatial_smooth(targets.assignments, *data.neighborhood);
  return targets;
}

JointTrainer::JointTrainer(Model model, const TrainingData& data, const TrainConfig& config)
    : model_(std::move(model)), data_(data), config_(config), adam_(config.lr),
      shuffle_(substream(config.seed, "joint-shuffle")) {
  if (model_.autoencoder.input_dim() != static_cast<std::size_t>(data_.patches.cols())) {
    throw DimensionError("JointTrainer: autoencoder expects " + std::to_string(model_.autoencoder.input_dim()) +
                         " features, patches have " + std::to_string(data_.patches.cols()));
  }
  if (model_.bases.latent_dim() != model_.autoencoder.latent_dim()) {
    throw DimensionError("JointTrainer: bases and autoencoder disagree on the latent size");
  }
  if (!data_.partition || data_.partition->size() != static_cast<std::size_t>(data_.patches.rows())) {
    throw DimensionError("JointTrainer: partition does not cover every sample");
  }
  if (!data_.neighborhood || data_.neighborhood->rows() != static_cast<std::size_t>(data_.patches.rows())) {
    throw DimensionError("JointTrainer: neighborhood does not cover every sample");
  }
}

LossBreakdown JointTrainer::evaluate_losses(const Targets& targets) const {
  std::vector<std::size_t> all(static_cast<std::size_t>(data_.patches.rows()));
  std::iota(all.begin(), all.end(), std::size_t{0});
  return const_cast<JointTrainer*>(this)->step(targets, all, false, 0);
}

LossBreakdown JointTrainer::train_epoch(const Targets& targets, int epoch) {
  const auto n = static_cast<std::size_t>(data_.patches.rows());
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (config_.batch_mode == BatchMode::full || config_.batch_size >= n) return step(targets, order, true, epoch);

  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(shuffle_, i)]);
  LossBreakdown mean;
  for (std::size_t start = 0; start < n; start += config_.batch_size) {
    const std::size_t count = std::min(config_.batch_size, n - start);
    std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                  order.begin() + static_cast<std::ptrdiff_t>(start + count));
    std::sort(rows.begin(), rows.end());
    const LossBreakdown part = step(targets, rows, true, epoch);
    const double w = static_cast<double>(count) / static_cast<double>(n);
    mean.reconstruction += w * part.reconstruction;
    mean.dissimilarity += w * part.dissimilarity;
    mean.nonlocal += w * part.nonlocal;
    mean.local += w * part.local;
    mean.total += w * part.total;
  }
  return mean;
}

LossBreakdown JointTrainer::step(const Targets& targets, std::span<const std::size_t> rows, bool apply, int epoch) {
  const auto n = static_cast<std::size_t>(data_.patches.rows());
  const bool full = rows.size() == n;

  ad::Tape<float> tape;
  const BoundAutoencoder<float> net = bind(tape, model_.autoencoder, apply);
  const ad::Value<float> basis = tape.leaf(model_.bases.basis, apply);

  MatrixF batch;
  if (!full) {
    batch.resize(static_cast<ad::Index>(rows.size()), data_.patches.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      batch.row(static_cast<ad::Index>(i)) = data_.patches.row(static_cast<ad::Index>(rows[i]));
    }
  }
  const ad::Value<float> input = tape.constant(full ? data_.patches : batch);
  const ad::Value<float> latent = encode(net, input);
  const ad::Value<float> output = decode(net, latent);

  LossTerms<float> terms;
  terms.reconstruction = reconstruction_loss(input, output);
  terms.dissimilarity = dissimilarity_loss(basis, model_.bases.shape);
  const bool structure = config_.beta1 != 0.0 || config_.beta2 != 0.0;
  if (structure) {
    const ad::Value<float> assignments = soft_assign(latent, basis, model_.bases.shape);
    if (config_.beta1 != 0.0) {
      if (full) {
        terms.nonlocal = nonlocal_loss(mini_cluster_mean(assignments, data_.partition), targets.refined);
      } else {
        // Partial means over the mini-clusters present in the batch.
        std::unordered_map<std::size_t, std::size_t> local_id;
        std::vector<std::size_t> local_index(rows.size());
        std::vector<std::size_t> present;
        for (std::size_t i = 0; i < rows.size(); ++i) {
          const std::size_t global = data_.partition->index[rows[i]];
          auto [it, inserted] = local_id.emplace(global, present.size());
          if (inserted) present.push_back(global);
          local_index[i] = it->second;
        }
        MatrixD target(static_cast<ad::Index>(present.size()), targets.refined.cols());
        for (std::size_t p = 0; p < present.size(); ++p) {
          target.row(static_cast<ad::Index>(p)) = targets.refined.row(static_cast<ad::Index>(present[p]));
        }
        terms.nonlocal =
            nonlocal_loss(mini_cluster_mean(assignments, ad::GroupIndex::make(std::move(local_index))), target);
      }
    }
    if (config_.beta2 != 0.0) {
      if (full) {
        terms.local = local_loss(assignments, targets.smoothed);
      } else {
        MatrixD target(static_cast<ad::Index>(rows.size()), targets.smoothed.cols());
        for (std::size_t i = 0; i < rows.size(); ++i) {
          target.row(static_cast<ad::Index>(i)) = targets.smoothed.row(static_cast<ad::Index>(rows[i]));
        }
        terms.local = local_loss(assignments, target);
      }
    }
  }
  const ad::Value<float> total = weighted_total(terms, config_.beta, config_.beta1, config_.beta2);

  LossBreakdown losses;
  losses.reconstruction = terms.reconstruction.item();
  losses.dissimilarity = terms.dissimilarity->item();
  losses.nonlocal = terms.nonlocal ? terms.nonlocal->item() : 0.0;
  losses.local = terms.local ? terms.local->item() : 0.0;
  losses.total = total.item();
  if (!std::isfinite(losses.total)) {
    throw DivergenceError("non-finite total loss at epoch " + std::to_string(epoch), epoch);
  }
  if (!apply) return losses;

  tape.backward(total);
  std::vector<ad::Matrix<float>*> params = model_.autoencoder.parameters();
  params.push_back(&model_.bases.basis);
  std::vector<ad::Value<float>> bound = net.parameters();
  bound.push_back(basis);
  std::vector<const ad::Matrix<float>*> grads;
  grads.reserve(bound.size());
  for (const auto& v : bound) {
    if (!all_finite(v.grad())) {
      throw DivergenceError("non-finite gradient at epoch " + std::to_string(epoch), epoch);
    }
    grads.push_back(&v.grad());
  }
  adam_.step(params, grads);
  return losses;
}

PreparedRun prepare_run(const HsiCube& cube, const TrainConfig& config) {
  config.validate();
  if (!cube.has_labels()) throw ContractError("clustering requires a labelled cube; the label raster defines the task mask");
  if (cube.masked_count() < config.clusters) {
    throw ContractError("cube has " + std::to_string(cube.masked_count()) + " labelled pixels, fewer than k = " +
                        std::to_string(config.clusters));
  }

  PreparedRun run;
  run.truth = to_size_labels(cube.masked_labels());

  // Step 1: mini-clusters from large patches.
  {
    const PatchSet wide = extract_patches(cube, config.minicluster_patch);
    run.hierarchy = finch_hierarchy(wide.patches.cast<double>(), config.finch_metric, config.finch_iteration);
  }
  run.finch_level = std::min<int>(config.finch_iteration, static_cast<int>(run.hierarchy.depth()));
  const finch::MiniClusterPartition& partition = finch::select_partition(run.hierarchy, run.finch_level);

  // Step 2: autoencoder pretraining.
  run.patches = extract_patches(cube, config.patch);
  std::vector<std::size_t> sizes{run.patches.features()};
  sizes.insert(sizes.end(), config.hidden.begin(), config.hidden.end());
  sizes.push_back(config.resolved_latent_dim());
  PretrainOptions pre;
  pre.epochs = config.pretrain_epochs;
  pre.lr = config.pretrain_lr;
  pre.seed = config.seed;
  pre.batch_size = config.pretrain_batch;
  run.initial.autoencoder = pretrain(run.patches.patches, sizes, pre, &run.pretrain_report);

  // Step 3: K-means on H, then per-cluster SVD bases.
  const MatrixD latent = encode(run.initial.autoencoder, run.patches.patches).cast<double>();
  Rng kmeans_rng = substream(config.seed, "kmeans");
  Rng basis_rng = substream(config.seed, "basis");
  KMeansOptions km;
  km.clusters = config.clusters;
  km.restarts = config.kmeans_restarts;
  constexpr int kInitAttempts = 5;
  for (int attempt = 1;; ++attempt) {
    run.kmeans_labels = kmeans(latent, km, kmeans_rng).labels;
    try {
      run.initial.bases = init_bases(latent, run.kmeans_labels, config.basis_shape(), basis_rng);
      break;
    } catch (const InitializationError&) {
      if (attempt == kInitAttempts) throw;
    }
  }

  run.data.patches = run.patches.patches;
  run.data.partition = ad::GroupIndex::make(partition.index);
  run.data.neighborhood = spatial_neighborhood(run.patches.coords, cube.width(), cube.height(), config.window);
  run.data.truth = run.truth;
  return run;
}

RunResult train_joint(const PreparedRun& prepared, const TrainConfig& config, const RunOutput& output) {
  config.validate();
  const auto& dir = output.dir;
  if (dir) std::filesystem::create_directories(*dir);

  RunResult result;
  JointTrainer trainer(prepared.initial, prepared.data, config);
  std::ofstream csv;
  if (dir) {
    csv.open(*dir / "metrics.csv");
    if (!csv) throw IoError("cannot open " + (*dir / "metrics.csv").string() + " for writing");
    write_metrics_header(csv);
    const auto path = *dir / "checkpoint_init.bin";
    save_checkpoint(path, trainer.model());
    result.state.checkpoints.push_back(path);
  }

  auto record = [&](EpochRecord entry) {
    if (csv.is_open()) write_metrics_row(csv, entry);
    if (output.progress) output.progress(entry);
    result.history.push_back(std::move(entry));
  };

  Targets targets = compute_targets(trainer.model(), prepared.data);
  result.state.labels = argmax_rows(targets.assignments);
  result.state.losses = trainer.evaluate_losses(targets);
  record({0, result.state.losses, maybe_evaluate(result.state.labels, prepared.data.truth)});

  Model last_good = trainer.model();
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    LossBreakdown losses;
    try {
      losses = trainer.train_epoch(targets, epoch);
      if (!trainer.model().bases.basis.allFinite()) {
        throw DivergenceError("non-finite parameters after epoch " + std::to_string(epoch), epoch);
      }
      try {
        targets = compute_targets(trainer.model(), prepared.data);
      } catch (const DivergenceError& e) {
        throw DivergenceError(std::string(e.what()) + " after epoch " + std::to_string(epoch), epoch);
      }
    } catch (const DivergenceError&) {
      if (dir) save_checkpoint(*dir / "checkpoint_last_good.bin", last_good);
      throw;
    }
    last_good = trainer.model();
    result.state.epoch = epoch;
    result.state.losses = losses;
    result.state.labels = argmax_rows(targets.assignments);
    record({epoch, losses, maybe_evaluate(result.state.labels, prepared.data.truth)});
    if (dir && config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0) {
      const auto path = *dir / checkpoint_name(epoch);
      save_checkpoint(path, trainer.model());
      result.state.checkpoints.push_back(path);
    }
  }

  result.model = trainer.model();
  result.labels = result.state.labels;
  result.evaluation = maybe_evaluate(result.labels, prepared.data.truth);
  if (dir) {
    const auto path = *dir / "checkpoint_final.bin";
    save_checkpoint(path, result.model);
    result.state.checkpoints.push_back(path);
  }
  return result;
}

RunResult run_pipeline(const HsiCube& cube, const TrainConfig& config, const RunOutput& output) {
  config.validate();
  const auto& dir = output.dir;
  if (dir) {
    std::filesystem::create_directories(*dir);
    std::ofstream cfg(*dir / "config.txt");
    if (!cfg) throw IoError("cannot open " + (*dir / "config.txt").string() + " for writing");
    for (const auto& [key, value] : config.to_key_values()) cfg << key << '=' << value << '\n';
    for (const auto& [key, value] : output.extra_config) cfg << key << '=' << value << '\n';
  }

  const PreparedRun prepared = prepare_run(cube, config);

  if (dir) {
    std::ofstream finch_txt(*dir / "finch.txt");
    finch_txt << "iteration clusters mean_variance\n";
    for (std::size_t l = 0; l < prepared.hierarchy.depth(); ++l) {
      finch_txt << l + 1 << ' ' << prepared.hierarchy.levels[l].clusters() << ' '
                << format_double(prepared.hierarchy.mean_variance[l]) << '\n';
    }
    finch_txt << "selected " << prepared.finch_level << '\n';
    const auto& index = prepared.data.partition->index;
    std::vector<std::int32_t> column(index.begin(), index.end());
    io::write_column<std::int32_t>(*dir / "partition.i32", column);

    std::ofstream pre(*dir / "pretrain.csv");
    pre << "epoch,L_R\n0," << format_double(prepared.pretrain_report.initial_loss) << '\n';
    for (std::size_t e = 0; e < prepared.pretrain_report.epoch_loss.size(); ++e) {
      pre << e + 1 << ',' << format_double(prepared.pretrain_report.epoch_loss[e]) << '\n';
    }
  }

  RunResult result = train_joint(prepared, config, output);

  if (dir) {
    std::vector<std::uint16_t> ids(result.labels.size());
    std::transform(result.labels.begin(), result.labels.end(), ids.begin(),
                   [](std::size_t l) { return static_cast<std::uint16_t>(l + 1); });
    io::write_column<std::uint16_t>(*dir / "labels.u16", ids);

    std::vector<metrics::Label> shown(ids.begin(), ids.end());
    if (result.evaluation) shown = result.evaluation->matched;
    const auto palette = metrics::default_palette();
    const metrics::Label largest = shown.empty() ? 0 : *std::max_element(shown.begin(), shown.end());
    if (largest <= palette.size()) metrics::export_map(*dir / "map.ppm", shown, cube, palette);

    std::ofstream summary(*dir / "summary.txt");
    summary << "epochs " << result.state.epoch << '\n' << "total " << format_double(result.state.losses.total) << '\n';
    if (result.evaluation) {
      summary << "OA " << format_double(result.evaluation->oa) << '\n'
              << "NMI " << format_double(result.evaluation->nmi) << '\n'
              << "Kappa " << format_double(result.evaluation->kappa) << '\n';
      std::ofstream per_class(*dir / "per_class.txt");
      per_class << "class support accuracy\n";
      for (const auto& c : result.evaluation->per_class) {
        per_class << c.label << ' ' << c.support << ' ' << format_double(c.accuracy) << '\n';
      }
    }
  }
  return result;
}

}  // namespace scdsc
