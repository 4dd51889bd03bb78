// Experiment driver: pretrain, train, eval, ablate, analyze.
// Every run is fully determined by (config, seed).

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "dist/trainer.hpp"

using namespace dist;
using Scalar = double;
using json = nlohmann::json;

namespace {

struct CliArgs {
  std::string config;
  std::string out = "out";
  std::string spatial_weights;
  std::string cache;
  uint64_t seed = 0;
  bool seed_set = false;
};

ExperimentConfig load_config(const CliArgs& args) {
  ExperimentConfig xc;
  if (!args.config.empty()) xc = load_experiment_config(args.config);
  if (args.seed_set) xc.run.seed = args.seed;
  if (!args.out.empty()) xc.run.out = args.out;
  if (!args.cache.empty()) xc.run.cache = args.cache;
  return xc;
}

json metrics_json(const std::vector<MetricRow>& rows) {
  json arr = json::array();
  for (const auto& r : rows)
    arr.push_back({{"epoch", r.epoch}, {"split", r.split}, {"loss", r.loss}, {"acc", r.acc}});
  return arr;
}

void write_run_record(const ExperimentConfig& xc, const std::string& weights_sha1,
                      const std::vector<MetricRow>& metrics, double wall_clock_sec, const std::string& path) {
  json rec = {{"seed", xc.run.seed},
              {"weights_sha1", weights_sha1},
              {"wall_clock_sec", wall_clock_sec},
              {"config", config_to_ini(xc)},
              {"metrics", metrics_json(metrics)}};
  std::ofstream f(path);
  if (!f) throw DataError("run record: cannot open " + path);
  f << rec.dump(2) << '\n';
}

int cmd_pretrain(const CliArgs& args) {
  ExperimentConfig xc = load_config(args);
  xc.data.task = TaskKind::kShapeCls;
  const auto t0 = std::chrono::steady_clock::now();
  PretrainResult<Scalar> res = pretrain_spatial<Scalar>(xc);
  std::filesystem::create_directories(xc.run.out);
  TensorArchive a = store_to_archive(res.ps, "spatial.");  // classifier head is discarded
  a.save(xc.run.out + "/spatial_weights.dtn");
  write_metrics_csv(res.metrics, xc.run.out + "/pretrain_metrics.csv");
  const std::string hash = sha1_hex(a.serialize());
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_run_record(xc, hash, res.metrics, wall, xc.run.out + "/pretrain_record.json");
  std::cout << "pretrain: train acc " << res.final_acc << ", weights " << hash << "\n";
  return 0;
}

int cmd_train(const CliArgs& args) {
  ExperimentConfig xc = load_config(args);
  xc.data.task = TaskKind::kMotionParity;
  if (args.spatial_weights.empty()) throw ConfigError("train: --spatial-weights is required");
  TensorArchive spatial = TensorArchive::load(args.spatial_weights);
  TrainResult<Scalar> res = train_dist<Scalar>(xc, spatial);
  std::filesystem::create_directories(xc.run.out);
  store_to_archive(res.model.ps).save(xc.run.out + "/weights.dtn");
  write_metrics_csv(res.metrics, xc.run.out + "/metrics.csv");
  Splits splits = make_parity_splits(xc.data.pairs, xc.data.train_ratio, xc.run.seed);
  save_manifest(splits.train, xc.run.out + "/train.tsv");
  save_manifest(splits.val, xc.run.out + "/val.tsv");
  write_run_record(xc, res.weights_sha1, res.metrics, res.wall_clock_sec, xc.run.out + "/run_record.json");
  std::cout << "train: " << res.epochs_run << " epochs, val acc " << res.final_val_acc << ", weights "
            << res.weights_sha1 << "\n";
  return 0;
}

// Rebuilds the model from the config and loads a full trained archive.
DistModel<Scalar> load_trained(const ExperimentConfig& xc, const std::string& weights_path) {
  if (weights_path.empty()) throw ConfigError("need --spatial-weights pointing at a trained weights archive");
  DistModel<Scalar> m = build_dist_model<Scalar>(xc.model, xc.run.seed);
  load_store_from_archive(m.ps, TensorArchive::load(weights_path));
  freeze_spatial(m);
  return m;
}

int cmd_eval(const CliArgs& args) {
  ExperimentConfig xc = load_config(args);
  xc.data.task = TaskKind::kMotionParity;
  DistModel<Scalar> m = load_trained(xc, args.spatial_weights);
  FeatureCache<Scalar> cache(xc.run.cache, sha1_hex(store_to_archive(m.ps, "spatial.").serialize()).substr(0, 16));
  SyntheticSpec spec = xc.data.to_spec(xc.run.seed);
  Splits splits = make_parity_splits(xc.data.pairs, xc.data.train_ratio, xc.run.seed);
  auto [loss, acc] = eval_split(m, cache, spec, splits.val, xc.run.eval_clips);
  std::filesystem::create_directories(xc.run.out);
  write_metrics_csv({{0, "val", loss, acc}}, xc.run.out + "/eval_metrics.csv");
  std::cout << "eval: val loss " << loss << ", val acc " << acc << "\n";
  return 0;
}

int cmd_ablate(const CliArgs& args) {
  ExperimentConfig xc = load_config(args);
  xc.data.task = TaskKind::kMotionParity;
  if (args.spatial_weights.empty()) throw ConfigError("ablate: --spatial-weights is required");
  std::vector<std::string> variants = split_csv_list(xc.run.ablate);
  if (variants.empty()) throw ConfigError("ablate: empty variant grid (set run.ablate)");
  TensorArchive spatial = TensorArchive::load(args.spatial_weights);
  std::filesystem::create_directories(xc.run.out);
  std::ofstream csv(xc.run.out + "/ablation.csv");
  csv << "variant,acc,macs,trainable_params\n";
  csv.precision(12);
  for (const std::string& name : variants) {
    ExperimentConfig vc = xc;
    vc.model = apply_variant(xc.model, name);
    TrainResult<Scalar> res = train_dist<Scalar>(vc, spatial);
    CostReport rep = cost_report(vc.model);
    csv << name << ',' << res.final_val_acc << ',' << rep.total_macs() << ',' << rep.trainable_params() << '\n';
    std::cout << "ablate " << name << ": val acc " << res.final_val_acc << "\n";
  }
  return 0;
}

int cmd_analyze(const CliArgs& args) {
  ExperimentConfig xc = load_config(args);
  xc.data.task = TaskKind::kMotionParity;
  DistModel<Scalar> m = load_trained(xc, args.spatial_weights);
  FeatureCache<Scalar> cache(xc.run.cache, sha1_hex(store_to_archive(m.ps, "spatial.").serialize()).substr(0, 16));
  SyntheticSpec spec = xc.data.to_spec(xc.run.seed);
  Splits splits = make_parity_splits(xc.data.pairs, xc.data.train_ratio, xc.run.seed);
  Manifest probe = splits.val;
  for (const auto& e : splits.train) {
    if (probe.size() >= 500) break;
    probe.push_back(e);
  }
  AnalysisResult<Scalar> res = analyze_model(m, cache, spec, probe);
  std::filesystem::create_directories(xc.run.out);
  write_cka_csv(res.cka, xc.run.out + "/cka_report.csv");
  write_cost_report_csv(cost_report(xc.model), xc.run.out + "/cost_report.csv");
  write_magnitude_csv(res.temporal_magnitude, xc.run.out + "/magnitude_temporal.csv");
  write_magnitude_csv(res.spatial_magnitude, xc.run.out + "/magnitude_spatial.csv");
  for (const auto& [name, v] : res.cka) std::cout << "cka " << name << " = " << v << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dual-encoder video model experiment driver"};
  app.require_subcommand(1);
  CliArgs args;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", args.config, "INI config file");
    sub->add_option("--seed", args.seed, "seed override")->each([&](const std::string&) { args.seed_set = true; });
    sub->add_option("--out", args.out, "output directory");
    sub->add_option("--spatial-weights", args.spatial_weights, "weights archive path");
    sub->add_option("--cache", args.cache, "spatial feature cache directory");
    return sub;
  };
  auto* pretrain = add_common(app.add_subcommand("pretrain", "pretrain the image encoder"));
  auto* train = add_common(app.add_subcommand("train", "train the video model against frozen image weights"));
  auto* eval = add_common(app.add_subcommand("eval", "evaluate a trained model on the validation split"));
  auto* ablate = add_common(app.add_subcommand("ablate", "train and score ablation variants"));
  auto* analyze = add_common(app.add_subcommand("analyze", "feature similarity and cost reports"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 1;
  }

  try {
    if (pretrain->parsed()) return cmd_pretrain(args);
    if (train->parsed()) return cmd_train(args);
    if (eval->parsed()) return cmd_eval(args);
    if (ablate->parsed()) return cmd_ablate(args);
    if (analyze->parsed()) return cmd_analyze(args);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const ContractError& e) {
    std::cerr << "contract violation: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const ArchiveError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
