#include "commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>

#include "scdsc/binary_io.hpp"
#include "scdsc/errors.hpp"
#include "scdsc/hsi.hpp"
#include "scdsc/metrics.hpp"
#include "scdsc/trainer.hpp"

namespace scdsc::cli {

namespace {

struct SynthFlags {
  SceneSpec spec;
  std::filesystem::path out;
};

struct ClusterFlags {
  TrainConfig config;
  std::filesystem::path in;
  std::filesystem::path out;
  std::string metric = "cosine";
  std::string batch = "full";
  bool quiet = false;
};

struct EvalFlags {
  std::filesystem::path in;
  std::filesystem::path labels;
};

struct ConvertFlags {
  std::filesystem::path raw;
  std::filesystem::path labels;
  std::filesystem::path out;
  std::string layout = "bip";
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t bands = 0;
};

void add_synth(CLI::App& app, SynthFlags& f) {
  app.add_option("--w", f.spec.width, "Scene width")->capture_default_str();
  app.add_option("--h", f.spec.height, "Scene height")->capture_default_str();
  app.add_option("--b", f.spec.bands, "Number of bands")->capture_default_str();
  app.add_option("--k", f.spec.classes, "Number of classes")->capture_default_str();
  app.add_option("--q", f.spec.subspace_dim, "Subspace dimension per class")->capture_default_str();
  app.add_option("--sigma", f.spec.noise, "Gaussian noise deviation")->capture_default_str();
  app.add_option("--seed", f.spec.seed, "Random seed")->capture_default_str();
  app.add_option("--out", f.out, "Output HSIC file")->required();
}

void add_cluster(CLI::App& app, ClusterFlags& f) {
  TrainConfig& c = f.config;
  app.set_config("--config", "", "key=value file with flag defaults");
  app.add_option("--in", f.in, "Input HSIC file with labels")->required();
  app.add_option("--out", f.out, "Run directory")->required();
  app.add_option("--k", c.clusters, "Number of clusters")->required();
  app.add_option("--seed", c.seed, "Random seed")->capture_default_str();
  app.add_option("--lr", c.lr, "Joint-phase learning rate")->capture_default_str();
  app.add_option("--pretrain-lr", c.pretrain_lr, "Pretraining learning rate")->capture_default_str();
  app.add_option("--epochs", c.epochs, "Joint-phase epochs")->capture_default_str();
  app.add_option("--pretrain-epochs", c.pretrain_epochs, "Pretraining epochs")->capture_default_str();
  app.add_option("--pretrain-batch", c.pretrain_batch, "Pretraining batch size, 0 for full batch")
      ->capture_default_str();
  app.add_option("--beta", c.beta, "Weight of the basis dissimilarity loss")->capture_default_str();
  app.add_option("--beta1", c.beta1, "Weight of the non-local loss")->capture_default_str();
  app.add_option("--beta2", c.beta2, "Weight of the local loss")->capture_default_str();
  app.add_option("--window", c.window, "Smoothing window edge (odd)")->capture_default_str();
  app.add_option("--r", c.rank, "Basis vectors per subspace")->capture_default_str();
  app.add_option("--theta", c.theta, "Soft-assignment smoothing constant")->capture_default_str();
  app.add_option("--patch", c.patch, "Training patch edge (odd)")->capture_default_str();
  app.add_option("--mc-patch", c.minicluster_patch, "Mini-cluster patch edge (odd)")->capture_default_str();
  app.add_option("--finch-iter", c.finch_iteration, "FINCH partition level")->capture_default_str();
  app.add_option("--metric", f.metric, "FINCH metric")
      ->check(CLI::IsMember({"cosine", "euclidean"}))
      ->capture_default_str();
  app.add_option("--batch", f.batch, "Joint-phase batching")
      ->check(CLI::IsMember({"full", "mini"}))
      ->capture_default_str();
  app.add_option("--batch-size", c.batch_size, "Mini-batch size")->capture_default_str();
  app.add_option("--latent-dim", c.latent_dim, "Latent width, 0 for k*r")->capture_default_str();
  app.add_option("--hidden", c.hidden, "Hidden layer widths")->delimiter(',')->capture_default_str();
  app.add_option("--kmeans-restarts", c.kmeans_restarts, "K-means restarts")->capture_default_str();
  app.add_option("--checkpoint-every", c.checkpoint_every, "Checkpoint period in epochs, 0 disables")
      ->capture_default_str();
  app.add_flag("--quiet", f.quiet, "Only print the final summary");
}

void add_eval(CLI::App& app, EvalFlags& f) {
  app.add_option("--in", f.in, "HSIC file with ground truth")->required();
  app.add_option("--labels", f.labels, "labels.u16 from a run directory")->required();
}

void add_convert(CLI::App& app, ConvertFlags& f) {
  app.add_option("--raw", f.raw, "Raw little-endian float32 cube")->required();
  app.add_option("--layout", f.layout, "Interleave of the raw cube")
      ->check(CLI::IsMember({"bip", "bil", "bsq"}))
      ->capture_default_str();
  app.add_option("--w", f.width, "Width")->required();
  app.add_option("--h", f.height, "Height")->required();
  app.add_option("--b", f.bands, "Bands")->required();
  app.add_option("--labels", f.labels, "Raw little-endian uint16 label raster");
  app.add_option("--out", f.out, "Output HSIC file")->required();
}

void print_evaluation(std::ostream& out, const metrics::Evaluation& eval) {
  out << std::fixed << std::setprecision(6);
  out << "OA " << eval.oa << "\nNMI " << eval.nmi << "\nKappa " << eval.kappa << '\n';
  out << "class support accuracy\n";
  for (const auto& c : eval.per_class) out << c.label << ' ' << c.support << ' ' << c.accuracy << '\n';
  out.unsetf(std::ios::floatfield);
}

int cmd_synth(const SynthFlags& f, std::ostream& out) {
  if (f.spec.subspace_dim == 0 || f.spec.subspace_dim >= f.spec.bands) {
    throw ConfigError("--q must satisfy 0 < q < b (got q = " + std::to_string(f.spec.subspace_dim) +
                      ", b = " + std::to_string(f.spec.bands) + ")");
  }
  const HsiCube cube = synth_scene(f.spec);
  save_cube(cube, f.out);
  std::map<std::uint16_t, std::size_t> sizes;
  for (std::uint16_t l : cube.labels()) ++sizes[l];
  out << "wrote " << f.out.string() << " (" << cube.width() << "x" << cube.height() << "x" << cube.bands() << ")\n";
  for (const auto& [label, count] : sizes) out << "class " << label << ' ' << count << '\n';
  return kSuccess;
}

int cmd_cluster(ClusterFlags& f, std::ostream& out) {
  f.config.finch_metric = finch::parse_metric(f.metric);
  f.config.batch_mode = f.batch == "mini" ? BatchMode::mini : BatchMode::full;
  f.config.validate();
  const HsiCube cube = load_cube(f.in);
  if (!cube.has_labels()) throw ContractError(f.in.string() + " has no label raster; the task mask is required");

  RunOutput output;
  output.dir = f.out;
  output.extra_config = {{"in", f.in.string()}, {"out", f.out.string()}};
  const int period = std::max(1, f.config.checkpoint_every);
  if (!f.quiet) {
    output.progress = [&out, period, last = f.config.epochs](const EpochRecord& r) {
      if (r.epoch % period != 0 && r.epoch != last) return;
      out << "epoch " << r.epoch << " total " << r.losses.total;
      if (r.evaluation) out << " OA " << r.evaluation->oa << " NMI " << r.evaluation->nmi;
      out << '\n' << std::flush;
    };
  }
  const RunResult result = run_pipeline(cube, f.config, output);
  out << "labels written to " << (f.out / "labels.u16").string() << '\n';
  if (result.evaluation) print_evaluation(out, *result.evaluation);
  return kSuccess;
}

int cmd_eval(const EvalFlags& f, std::ostream& out) {
  const HsiCube cube = load_cube(f.in);
  if (!cube.has_labels()) throw ContractError(f.in.string() + " has no ground truth");
  const std::vector<std::uint16_t> labels = io::read_column<std::uint16_t>(f.labels);
  if (labels.size() != cube.masked_count()) {
    throw DimensionError(f.labels.string() + " holds " + std::to_string(labels.size()) + " labels but the mask has " +
                         std::to_string(cube.masked_count()) + " pixels");
  }
  const std::vector<std::uint16_t> truth16 = cube.masked_labels();
  const std::vector<metrics::Label> predicted(labels.begin(), labels.end());
  const std::vector<metrics::Label> truth(truth16.begin(), truth16.end());
  print_evaluation(out, metrics::evaluate(predicted, truth));
  return kSuccess;
}

int cmd_convert(const ConvertFlags& f, std::ostream& out) {
  const std::size_t pixels = f.width * f.height;
  if (pixels == 0 || f.bands == 0) throw ConfigError("--w, --h and --b must be positive");
  const std::vector<float> raw = io::read_column<float>(f.raw);
  if (raw.size() != pixels * f.bands) {
    throw DimensionError(f.raw.string() + " holds " + std::to_string(raw.size()) + " values, expected " +
                         std::to_string(pixels * f.bands));
  }
  std::vector<float> bip(raw.size());
  for (std::size_t y = 0; y < f.height; ++y) {
    for (std::size_t x = 0; x < f.width; ++x) {
      for (std::size_t b = 0; b < f.bands; ++b) {
        std::size_t src = 0;
        if (f.layout == "bip") {
          src = (y * f.width + x) * f.bands + b;
        } else if (f.layout == "bsq") {
          src = b * pixels + y * f.width + x;
        } else {
          src = (y * f.bands + b) * f.width + x;
        }
        bip[(y * f.width + x) * f.bands + b] = raw[src];
      }
    }
  }
  std::vector<std::uint16_t> labels;
  if (!f.labels.empty()) {
    labels = io::read_column<std::uint16_t>(f.labels);
    if (labels.size() != pixels) {
      throw DimensionError(f.labels.string() + " holds " + std::to_string(labels.size()) + " labels, expected " +
                           std::to_string(pixels));
    }
  }
  const HsiCube cube(f.width, f.height, f.bands, std::move(bip), std::move(labels));
  save_cube(cube, f.out);
  out << "wrote " << f.out.string() << " (" << cube.masked_count() << " labelled pixels)\n";
  return kSuccess;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Scalable deep subspace clustering for hyperspectral images", "scdsc"};
  app.require_subcommand(1);
  app.set_help_flag("--help", "Print this help message and exit");

  SynthFlags synth;
  ClusterFlags cluster;
  EvalFlags eval;
  ConvertFlags convert;
  CLI::App* synth_cmd = app.add_subcommand("synth", "Write a synthetic union-of-subspaces scene");
  CLI::App* cluster_cmd = app.add_subcommand("cluster", "Run the clustering pipeline");
  CLI::App* eval_cmd = app.add_subcommand("eval", "Score a label file against ground truth");
  CLI::App* convert_cmd = app.add_subcommand("convert", "Convert a raw cube to HSIC");
  add_synth(*synth_cmd, synth);
  add_cluster(*cluster_cmd, cluster);
  add_eval(*eval_cmd, eval);
  add_convert(*convert_cmd, convert);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    if (!reversed.empty()) reversed.pop_back();
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int status = app.exit(e, out, err);
    return status == 0 ? kSuccess : kUsageError;
  }

  try {
    if (*synth_cmd) return cmd_synth(synth, out);
    if (*cluster_cmd) return cmd_cluster(cluster, out);
    if (*eval_cmd) return cmd_eval(eval, out);
    return cmd_convert(convert, out);
  } catch (const ConfigError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsageError;
  } catch (const ContractError& e) {
    err << "usage error: " << e.what() << '\n';
    return kUsageError;
  } catch (const DivergenceError& e) {
    err << "error: training diverged at epoch " << e.epoch() << ": " << e.what() << '\n';
    return kRuntimeFailure;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntimeFailure;
  }
}

}  // namespace scdsc::cli
