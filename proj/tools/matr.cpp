#include <algorithm>
#include <cstdint>
#include <exception>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "matr/matr.hpp"

namespace {

using namespace matr;

struct CommonOptions {
  std::string profile;
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool out_required) {
  cmd->add_option("--profile", o.profile, "Hyperparameter profile")
      ->check(CLI::IsMember({"toy", "thumos-like", "muses-like", "tiny"}));
  cmd->add_option("--config", o.config, "JSON config overlay")->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "Random seed");
  auto* out = cmd->add_option("--out", o.out, "Output directory");
  if (out_required) out->required();
}

/// Profile named on the command line, else in the config file, else toy;
/// then the config file on top.
RunConfig resolve_config(const CommonOptions& o, const std::string& fallback = "toy") {
  nlohmann::json overlay = nlohmann::json::object();
  if (!o.config.empty()) overlay = read_json(o.config);
  std::string profile = o.profile;
  if (profile.empty()) profile = overlay.value("profile", fallback);
  RunConfig c = profile_config(profile);
  merge_config(c, overlay);
  return c;
}

void echo_config(const fs::path& dir, const RunConfig& c) {
  fs::create_directories(dir);
  write_json(dir / "config.json", c);
}

int gen_data(const CommonOptions& o, std::optional<std::size_t> videos) {
  RunConfig c = resolve_config(o);
  if (o.seed) c.synthetic.seed = *o.seed;
  if (videos) c.synthetic.num_videos = *videos;
  const Dataset ds = generate_dataset(c.synthetic);
  save_dataset(o.out, ds);
  echo_config(o.out, c);
  std::size_t instances = 0;
  for (const auto& v : ds.videos) instances += v.instances.size();
  std::cout << "wrote " << ds.videos.size() << " videos, " << instances << " instances to " << o.out << '\n';
  return 0;
}

int train(const CommonOptions& o, const std::string& data_dir) {
  RunConfig c = resolve_config(o);
  if (o.seed) {
    c.train.seed = *o.seed;
    c.model.init_seed = *o.seed;
  }
  const Dataset ds = load_dataset(data_dir);
  if (ds.raw_dim != c.model.raw_dim)
    throw std::invalid_argument("dataset features have width " + std::to_string(ds.raw_dim) +
                                " but model.raw_dim is " + std::to_string(c.model.raw_dim));
  if (ds.num_classes != c.model.num_classes)
    throw std::invalid_argument("dataset has " + std::to_string(ds.num_classes) +
                                " classes but model.num_classes is " + std::to_string(c.model.num_classes));
  const fs::path out = o.out;
  echo_config(out, c);
  MatrModel<float> model(c.model);
  Trainer<float> trainer(model, c.train);
  std::ofstream metrics(out / "metrics.jsonl");
  try {
    trainer.fit(ds, &metrics, [](const EpochReport& e) {
      std::cout << "epoch " << e.epoch << " lr " << e.lr << " loss " << e.losses.mean_json()["total"]
                << " (" << e.seconds << " s)" << std::endl;
    });
  } catch (const TrainingError& e) {
    write_json(out / "diagnostic.json", e.state());
    throw;
  }
  save_checkpoint(out / "checkpoint.json", model, c);
  std::cout << "checkpoint written to " << (out / "checkpoint.json").string() << '\n';
  return 0;
}

std::vector<fs::path> feature_manifests(const fs::path& data) {
  const fs::path dir = fs::is_directory(data / "features") ? data / "features" : data;
  if (!fs::is_directory(dir)) return {data};
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.path().extension() == ".json") out.push_back(entry.path());
  std::sort(out.begin(), out.end());
  return out;
}

int infer(const CommonOptions& o, const std::string& checkpoint, const std::string& data) {
  Checkpoint ck = load_checkpoint(checkpoint);
  RunConfig c = ck.config;
  if (!o.config.empty()) {
    const nlohmann::json overlay = read_json(o.config);
    if (overlay.contains("inference")) from_json(overlay.at("inference"), c.inference);
  }
  const fs::path out = o.out;
  echo_config(out, c);
  std::ofstream os(out / "detections.jsonl");
  std::size_t count = 0, videos = 0;
  for (const auto& manifest : feature_manifests(data)) {
    const FeatureFile f = read_features(manifest);
    std::vector<Detection> dets;
    for (const auto& inst : run_stream(ck.model, f.features, c.inference, f.video_id))
      dets.push_back({f.video_id, inst});
    write_detections(os, dets);
    count += dets.size();
    ++videos;
  }
  std::cout << "wrote " << count << " detections for " << videos << " videos to "
            << (out / "detections.jsonl").string() << '\n';
  return 0;
}

int eval(const CommonOptions& o, const std::string& detections, std::string annotations,
         const std::vector<double>& thresholds) {
  if (fs::is_directory(annotations)) annotations = (fs::path(annotations) / "annotations.json").string();
  const AnnotationFile anns = read_annotations(annotations);
  const auto dets = read_detections(fs::path(detections));
  const EvalReport report = mean_ap(dets, anns.videos, anns.num_classes, thresholds);
  std::cout << report.table();
  if (!o.out.empty()) {
    const fs::path out = o.out;
    fs::create_directories(out);
    write_json(out / "eval_report.json", report.to_json());
    std::ofstream(out / "eval_report.txt") << report.table();
  }
  return 0;
}

int gradcheck(const CommonOptions& o, double eps, double tolerance) {
  const RunConfig c = resolve_config(o, "tiny");
  const ModelGradCheck r = model_gradcheck(c, o.seed.value_or(1), eps);
  const bool pass = r.report.max_relative_error < tolerance;
  const nlohmann::json j = {{"pass", pass},
                            {"max_relative_error", r.report.max_relative_error},
                            {"tolerance", tolerance},
                            {"worst_parameter", r.worst_parameter},
                            {"worst_index", r.report.worst_index},
                            {"analytic", r.report.analytic},
                            {"numeric", r.report.numeric},
                            {"coordinates", r.report.coordinates},
                            {"timestamp", r.t},
                            {"memory_slots", r.memory_slots},
                            {"seconds", r.seconds}};
  std::cout << j.dump(2) << '\n' << (pass ? "PASS" : "FAIL") << '\n';
  if (!o.out.empty()) {
    echo_config(o.out, c);
    write_json(fs::path(o.out) / "gradcheck.json", j);
  }
  return pass ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Online temporal action localisation with a memory-augmented transformer"};
  app.require_subcommand(1);

  CommonOptions gen_opts, train_opts, infer_opts, eval_opts, grad_opts;

  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic feature dataset");
  add_common(gen_cmd, gen_opts, true);
  std::optional<std::size_t> videos;
  gen_cmd->add_option("--videos", videos, "Number of videos (overrides the config)");

  auto* train_cmd = app.add_subcommand("train", "Train a model on a dataset directory");
  add_common(train_cmd, train_opts, true);
  std::string train_data;
  train_cmd->add_option("--data", train_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);

  auto* infer_cmd = app.add_subcommand("infer", "Stream videos through a trained model");
  add_common(infer_cmd, infer_opts, true);
  std::string checkpoint, infer_data;
  infer_cmd->add_option("--checkpoint", checkpoint, "Checkpoint manifest")->required()->check(CLI::ExistingFile);
  infer_cmd->add_option("--data", infer_data, "Dataset directory, features directory or one feature manifest")
      ->required()
      ->check(CLI::ExistingPath);

  auto* eval_cmd = app.add_subcommand("eval", "Score detections against annotations");
  add_common(eval_cmd, eval_opts, false);
  std::string detections, annotations;
  std::vector<double> thresholds = default_thresholds();
  eval_cmd->add_option("--detections", detections, "Detections JSONL")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--annotations", annotations, "Annotation file or dataset directory")
      ->required()
      ->check(CLI::ExistingPath);
  eval_cmd->add_option("--thresholds", thresholds, "tIoU thresholds");

  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of the training loss");
  add_common(grad_cmd, grad_opts, false);
  double eps = 1e-5, tolerance = 1e-4;
  grad_cmd->add_option("--eps", eps, "Finite-difference step");
  grad_cmd->add_option("--tolerance", tolerance, "Maximum relative error");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen_cmd) return gen_data(gen_opts, videos);
    if (*train_cmd) return train(train_opts, train_data);
    if (*infer_cmd) return infer(infer_opts, checkpoint, infer_data);
    if (*eval_cmd) return eval(eval_opts, detections, annotations, thresholds);
    if (*grad_cmd) return gradcheck(grad_opts, eps, tolerance);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
