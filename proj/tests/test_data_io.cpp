#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "matr/matr.hpp"

using namespace matr;
namespace fs = std::filesystem;

namespace {

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() /
            ("matr_test_" + std::to_string(std::random_device{}()) + "_" +
             ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

SyntheticConfig small_synthetic() {
  SyntheticConfig c = toy_profile().synthetic;
  c.num_videos = 6;
  c.frames_per_video = 128;
  return c;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(MATR_CLI_PATH) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Features, RoundTripIsBitExact) {
  TempDir dir;
  Tensor<float> f(5, 3);
  const float special[] = {0.0f, -0.0f, 1e-38f, 3.4e38f, -1.5f, 0.1f};
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = special[i % 6] * static_cast<float>(i + 1);
  write_features(dir.path() / "x.json", "x", f);
  EXPECT_EQ(fs::file_size(dir.path() / "x.bin"), 5u * 3u * 4u);
  const auto back = read_features(dir.path() / "x.json");
  EXPECT_EQ(back.video_id, "x");
  ASSERT_EQ(back.features.rows(), 5u);
  ASSERT_EQ(back.features.cols(), 3u);
  for (std::size_t i = 0; i < f.size(); ++i)
    EXPECT_EQ(std::bit_cast<std::uint32_t>(back.features[i]), std::bit_cast<std::uint32_t>(f[i]));
}

TEST(Features, LittleEndianLayout) {
  TempDir dir;
  write_features(dir.path() / "x.json", "x", Tensor<float>::matrix(1, 2, {1.0f, -2.0f}));
  const std::string bytes = slurp(dir.path() / "x.bin");
  const std::string expected{'\x00', '\x00', '\x80', '\x3f', '\x00', '\x00', '\x00', '\xc0'};
  EXPECT_EQ(bytes, expected);
  const auto manifest = read_json(dir.path() / "x.json");
  EXPECT_EQ(manifest.at("T").get<int>(), 1);
  EXPECT_EQ(manifest.at("D").get<int>(), 2);
  EXPECT_EQ(manifest.at("dtype").get<std::string>(), "f32le");
  EXPECT_EQ(manifest.at("order").get<std::string>(), "row-major");
}

TEST(Features, EmptyVideo) {
  TempDir dir;
  write_features(dir.path() / "e.json", "e", Tensor<float>(0, 4));
  const auto back = read_features(dir.path() / "e.json");
  EXPECT_EQ(back.features.rows(), 0u);
  EXPECT_EQ(back.features.cols(), 4u);
}

TEST(Features, CorruptInputsRejected) {
  TempDir dir;
  const fs::path m = dir.path() / "x.json";
  write_features(m, "x", Tensor<float>(4, 2, 1.0f));
  fs::resize_file(dir.path() / "x.bin", 30);
  EXPECT_THROW(read_features(m), FormatError);

  write_features(m, "x", Tensor<float>(4, 2, 1.0f));
  auto j = read_json(m);
  j["dtype"] = "f16";
  write_json(m, j);
  EXPECT_THROW(read_features(m), FormatError);
  j["dtype"] = "f32le";
  j["order"] = "column-major";
  write_json(m, j);
  EXPECT_THROW(read_features(m), FormatError);
  EXPECT_THROW(read_features(dir.path() / "missing.json"), FormatError);
}

TEST(Annotations, RoundTripAndValidation) {
  const std::vector<VideoAnnotation> v{{"a", 100, {{3, 9, 1}, {20, 40, 0}}}, {"b", 50, {}}};
  const auto back = annotations_from_json(annotations_to_json(v, 2));
  EXPECT_EQ(back.num_classes, 2u);
  ASSERT_EQ(back.videos.size(), 2u);
  EXPECT_EQ(back.videos[0].instances[1].end, 40);
  EXPECT_EQ(back.videos[0].instances[0].label, 1u);
  EXPECT_TRUE(back.videos[1].instances.empty());

  auto j = annotations_to_json(v, 2);
  j["videos"][0]["instances"][0]["class"] = 2;
  EXPECT_THROW(annotations_from_json(j), FormatError);
  j = annotations_to_json(v, 2);
  j["videos"][0]["instances"][0]["end"] = 1;
  EXPECT_THROW(annotations_from_json(j), FormatError);
}

TEST(Dataset, SaveLoadRoundTrip) {
  TempDir dir;
  const Dataset ds = generate_dataset(small_synthetic());
  save_dataset(dir.path(), ds);
  const Dataset back = load_dataset(dir.path());
  ASSERT_EQ(back.videos.size(), ds.videos.size());
  EXPECT_EQ(back.num_classes, ds.num_classes);
  EXPECT_EQ(back.raw_dim, ds.raw_dim);
  for (std::size_t i = 0; i < ds.videos.size(); ++i) {
    EXPECT_EQ(back.videos[i].id, ds.videos[i].id);
    EXPECT_EQ(back.videos[i].features, ds.videos[i].features);
    ASSERT_EQ(back.videos[i].instances.size(), ds.videos[i].instances.size());
    for (std::size_t k = 0; k < ds.videos[i].instances.size(); ++k) {
      EXPECT_EQ(back.videos[i].instances[k].start, ds.videos[i].instances[k].start);
      EXPECT_EQ(back.videos[i].instances[k].label, ds.videos[i].instances[k].label);
    }
  }
}

TEST(Synthetic, SameSeedGivesIdenticalFiles) {
  TempDir a, b;
  save_dataset(a.path(), generate_dataset(small_synthetic()));
  save_dataset(b.path(), generate_dataset(small_synthetic()));
  for (const auto& entry : fs::recursive_directory_iterator(a.path())) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), a.path());
    EXPECT_EQ(slurp(entry.path()), slurp(b.path() / rel)) << rel;
  }
  auto other = small_synthetic();
  other.seed = 1;
  EXPECT_NE(generate_dataset(other).videos[0].features, generate_dataset(small_synthetic()).videos[0].features);
}

TEST(Synthetic, InstancesRespectLayout) {
  auto cfg = small_synthetic();
  cfg.num_videos = 50;
  const Dataset ds = generate_dataset(cfg);
  for (const auto& v : ds.videos) {
    EXPECT_GE(v.instances.size(), cfg.min_instances);
    EXPECT_LE(v.instances.size(), cfg.max_instances);
    for (std::size_t i = 0; i < v.instances.size(); ++i) {
      const auto& a = v.instances[i];
      EXPECT_GE(a.start, static_cast<std::int64_t>(cfg.min_gap));
      EXPECT_LT(a.end, v.length());
      EXPECT_GE(a.end - a.start + 1, static_cast<std::int64_t>(cfg.min_instance_len));
      EXPECT_LE(a.end - a.start + 1, static_cast<std::int64_t>(cfg.max_instance_len));
      EXPECT_LT(a.label, cfg.num_classes);
      if (i > 0) {
        EXPECT_GE(a.start - v.instances[i - 1].end - 1, static_cast<std::int64_t>(cfg.min_gap));
      }
    }
  }
}

TEST(Synthetic, ZeroInstancesGiveEmptyAnnotations) {
  auto cfg = small_synthetic();
  cfg.min_instances = 0;
  cfg.max_instances = 0;
  const Dataset ds = generate_dataset(cfg);
  for (const auto& v : ds.videos) EXPECT_TRUE(v.instances.empty());
}

TEST(Synthetic, SplitsShareClassSignatures) {
  auto train = small_synthetic();
  auto test = train;
  test.seed = 99;
  EXPECT_EQ(class_signatures(train), class_signatures(test));
  test.signature_seed = 5;
  EXPECT_NE(class_signatures(train), class_signatures(test));
}

// Frame-level softmax regression on one split, scored on another split drawn
// with a different video seed. Ramp frames are excluded.
TEST(Synthetic, LinearProbeSeparatesClasses) {
  auto cfg = small_synthetic();
  cfg.num_videos = 20;
  const Dataset train = generate_dataset(cfg);
  cfg.seed = 7;
  const Dataset test = generate_dataset(cfg);
  const std::size_t D = cfg.raw_dim, K = cfg.num_classes + 1;

  auto frames = [&](const Dataset& ds) {
    std::vector<std::pair<const float*, std::size_t>> out;
    for (const auto& v : ds.videos) {
      std::vector<int> label(static_cast<std::size_t>(v.length()), static_cast<int>(cfg.num_classes));
      for (const auto& a : v.instances)
        for (std::int64_t f = a.start; f <= a.end; ++f) label[static_cast<std::size_t>(f)] = -1;
      for (const auto& a : v.instances)
        for (std::int64_t f = a.start + static_cast<std::int64_t>(cfg.ramp_len);
             f <= a.end - static_cast<std::int64_t>(cfg.ramp_len); ++f)
          label[static_cast<std::size_t>(f)] = static_cast<int>(a.label);
      for (std::size_t f = 0; f < label.size(); ++f)
        if (label[f] >= 0) out.push_back({&v.features(f, 0), static_cast<std::size_t>(label[f])});
    }
    return out;
  };
  const auto tr = frames(train), te = frames(test);

  std::vector<double> w(K * (D + 1), 0.0);
  auto logits = [&](const float* x, std::vector<double>& z) {
    for (std::size_t k = 0; k < K; ++k) {
      double s = w[k * (D + 1) + D];
      for (std::size_t d = 0; d < D; ++d) s += w[k * (D + 1) + d] * x[d];
      z[k] = s;
    }
  };
  std::vector<double> z(K), grad(w.size());
  for (int epoch = 0; epoch < 100; ++epoch) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (const auto& [x, y] : tr) {
      logits(x, z);
      const double m = *std::max_element(z.begin(), z.end());
      double total = 0;
      for (auto& v : z) total += (v = std::exp(v - m));
      for (std::size_t k = 0; k < K; ++k) {
        const double r = z[k] / total - (k == y ? 1.0 : 0.0);
        for (std::size_t d = 0; d < D; ++d) grad[k * (D + 1) + d] += r * x[d];
        grad[k * (D + 1) + D] += r;
      }
    }
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= 0.5 * grad[i] / static_cast<double>(tr.size());
  }
  std::size_t correct = 0;
  for (const auto& [x, y] : te) {
    logits(x, z);
    correct += static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin()) == y;
  }
  EXPECT_GT(static_cast<double>(correct) / static_cast<double>(te.size()), 0.95);
}

TEST(Checkpoint, RoundTripPreservesModelAndConfig) {
  TempDir dir;
  RunConfig cfg = tiny_profile();
  cfg.model.init_seed = 3;
  cfg.inference.score_min = 0.25;
  MatrModel<float> model(cfg.model);
  save_checkpoint(dir.path() / "ck.json", model, cfg);
  const Checkpoint back = load_checkpoint(dir.path() / "ck.json");
  EXPECT_EQ(back.config.profile, "tiny");
  EXPECT_EQ(back.config.model.memory_len, cfg.model.memory_len);
  EXPECT_DOUBLE_EQ(back.config.inference.score_min, 0.25);
  const auto& a = model.params();
  const auto& b = back.model.params();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.value(i), b.value(i)) << a.name(i);

  const Tensor<float> feats(20, cfg.model.raw_dim, 0.3f);
  RunConfig loose = cfg;
  loose.inference.score_min = 0.0;
  EXPECT_EQ(run_stream(model, feats, loose.inference), run_stream(back.model, feats, loose.inference));

  fs::resize_file(dir.path() / "ck.bin", fs::file_size(dir.path() / "ck.bin") - 4);
  EXPECT_THROW(load_checkpoint(dir.path() / "ck.json"), FormatError);
}

TEST(Cli, PipelineRunsEndToEnd) {
  TempDir dir;
  const fs::path cfg = dir.path() / "small.json";
  write_json(cfg, {{"synthetic", {{"num_videos", 3}, {"frames_per_video", 96}}},
                   {"train", {{"epochs", 1}, {"max_samples_per_epoch", 48}}}});
  const std::string common = " --profile toy --config " + cfg.string();
  const fs::path data = dir.path() / "data", run = dir.path() / "run", inf = dir.path() / "infer",
                 ev = dir.path() / "eval";
  ASSERT_EQ(run_cli("gen-data" + common + " --seed 4 --out " + data.string()), 0);
  EXPECT_TRUE(fs::exists(data / "annotations.json"));
  EXPECT_TRUE(fs::exists(data / "config.json"));
  EXPECT_EQ(load_dataset(data).videos.size(), 3u);

  ASSERT_EQ(run_cli("train" + common + " --seed 1 --data " + data.string() + " --out " + run.string()), 0);
  EXPECT_TRUE(fs::exists(run / "checkpoint.json"));
  EXPECT_TRUE(fs::exists(run / "checkpoint.bin"));
  std::ifstream metrics(run / "metrics.jsonl");
  std::string line;
  ASSERT_TRUE(std::getline(metrics, line));
  EXPECT_TRUE(nlohmann::json::parse(line).contains("loss"));

  ASSERT_EQ(run_cli("infer --checkpoint " + (run / "checkpoint.json").string() + " --data " + data.string() +
                    " --out " + inf.string()),
            0);
  ASSERT_TRUE(fs::exists(inf / "detections.jsonl"));
  EXPECT_NO_THROW(read_detections(inf / "detections.jsonl"));

  ASSERT_EQ(run_cli("eval --detections " + (inf / "detections.jsonl").string() + " --annotations " +
                    data.string() + " --out " + ev.string()),
            0);
  const auto report = read_json(ev / "eval_report.json");
  EXPECT_EQ(report.at("thresholds").size(), 5u);
  EXPECT_GE(report.at("average_map").get<double>(), 0.0);
}

TEST(Cli, GradcheckAndErrors) {
  EXPECT_EQ(run_cli("gradcheck --profile tiny --seed 2"), 0);
  EXPECT_NE(run_cli("train --data /nonexistent/dir --out /tmp/x"), 0);
  EXPECT_NE(run_cli("gen-data --profile unknown --out /tmp/x"), 0);
  EXPECT_NE(run_cli("frobnicate"), 0);
}
