#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "support.hpp"
#include "zeropur/harness.hpp"

using namespace zp;
namespace fs = std::filesystem;

namespace {

// A few-second experiment: tiny dataset, one epoch, short purification.
ExperimentConfig quick_config() {
  ExperimentConfig c;
  c.seed = 5;
  c.dataset.train_per_class = 8;
  c.dataset.test_per_class = 3;
  c.sample_count = 6;
  c.train.epochs = 1;
  c.train.batch_size = 8;
  c.attack.steps = 2;
  c.gs.iterations = 2;
  c.ap.iterations = 2;
  return c;
}

const Classifier& quick_model() {
  static const Classifier m = acquire_model(quick_config());
  return m;
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("zeropur_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("config text: sections, comments, fractions and errors") {
  const auto m = parse_config_text(
      "# comment\nseed = 3\n[attack]\neps = 8/255  # budget\nsteps=20\n\n[gs]\nblur = median:5\n");
  CHECK(m.at("seed") == "3");
  CHECK(m.at("attack.eps") == "8/255");
  const ExperimentConfig c = make_config(m);
  CHECK(c.seed == 3);
  CHECK(c.attack.eps == doctest::Approx(8.0 / 255.0));
  CHECK(c.attack.steps == 20);
  CHECK(c.gs.blur.kind == BlurKind::median);
  CHECK(c.gs.blur.window == 5);

  CHECK_THROWS_WITH_AS(parse_config_text("seed = 1\nseed = 2\n"), doctest::Contains("line 2"), ConfigError);
  CHECK_THROWS_WITH_AS(parse_config_text("just words\n"), doctest::Contains("line 1"), ConfigError);
  CHECK_THROWS_AS(make_config({{"attack.epsilon", "1"}}), ConfigError);
  CHECK_THROWS_AS(make_config({{"attack.steps", "-1"}}), ConfigError);
  CHECK_THROWS_AS(make_config({{"gs.blur", "median:4"}}), ConfigError);
  CHECK_THROWS_AS(make_config({{"ap.taps", "stage1,stage7"}}), ConfigError);
  CHECK_THROWS_AS(parse_number("1/0"), ConfigError);
  CHECK(parse_blur_op("tvm:0.2:10").tv_iterations == 10);
  CHECK(format_blur_op(parse_blur_op("gaussian:1.8")) == "gaussian:1.8");
}

TEST_CASE("canonical config round-trips and drives the hash") {
  ExperimentConfig c = quick_config();
  c.gs.blur = BlurOp::tvm(0.15, 12);
  c.sweep.presets = {Augmentation::vanilla, Augmentation::strong};
  c.sweep.models["vanilla"] = "/tmp/v.zpwt";
  const std::string text = canonical_config(c);
  const ExperimentConfig back = make_config(parse_config_text(text));
  CHECK(canonical_config(back) == text);
  CHECK(config_hash(back) == config_hash(c));
  CHECK(config_hash(c).size() == 16);
  ExperimentConfig d = c;
  d.attack.eps = 4.0 / 255.0;
  CHECK(config_hash(d) != config_hash(c));
}

TEST_CASE("config validation catches missing files") {
  ExperimentConfig c = quick_config();
  c.model_path = "/nonexistent/model.zpwt";
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = quick_config();
  c.dataset.kind = "cifar10";
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = quick_config();
  c.sample_count = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = quick_config();
  c.sample_count = 1000;
  CHECK_THROWS_AS(run_experiment(c, quick_model()), ConfigError);
}

TEST_CASE("no attack and no defense gives RA = SA") {
  ExperimentConfig c = quick_config();
  c.defense = DefenseMode::none;
  c.attack.eps = 0.0;
  const EvalReport r = run_experiment(c, quick_model());
  CHECK(r.ra == r.sa);
  CHECK(r.sa == r.clean_accuracy);
  CHECK(r.records.size() == c.sample_count);
}

TEST_CASE("reports are reproducible and internally consistent") {
  const ExperimentConfig c = quick_config();
  const EvalReport a = run_experiment(c, quick_model());
  const EvalReport b = run_experiment(c, quick_model());
  CHECK(report_json(a, false) == report_json(b, false));
  CHECK(report_csv(a) == report_csv(b));
  CHECK(records_ra(a.records) == a.ra);
  CHECK(records_sa(a.records) == a.sa);
  CHECK(a.config_hash == config_hash(c));

  const fs::path dir = temp_dir("report");
  write_report(a, dir);
  CHECK(fs::exists(dir / "report.json"));
  std::ifstream csv(dir / "report.csv");
  std::string line;
  std::size_t rows = 0;
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 2 + c.sample_count);
  fs::remove_all(dir);
}

TEST_CASE("bpda experiment runs with the defense as purifier") {
  ExperimentConfig c = quick_config();
  c.attack.kind = AttackKind::bpda_pgd;
  c.attack.steps = 1;
  c.sample_count = 2;
  const EvalReport r = run_experiment(c, quick_model());
  CHECK(r.attack == "bpda");
  CHECK(r.records.size() == 2);
}

TEST_CASE("stage failures name the stage and the sample") {
  // A model whose embedding is identically zero makes Guided Shift degenerate.
  Classifier m = quick_model();
  auto params = m.parameters();
  const auto& names = m.parameter_names();
  for (std::size_t k = 0; k < names.size(); ++k) {
    if (names[k] == "head.scale" || names[k] == "head.bias") params[k] = Tensor::zeros_like(params[k]);
  }
  m.set_parameters(params);
  ExperimentConfig c = quick_config();
  c.attack.eps = 0.0;
  CHECK_THROWS_WITH_AS(run_experiment(c, m), doctest::Contains("stage 'defend-adversarial'"), StageError);
  CHECK_THROWS_WITH_AS(run_experiment(c, m), doctest::Contains("sample 0"), StageError);
}

TEST_CASE("sweep: empty grid, cardinality and missing models") {
  std::ostringstream warn;
  ExperimentConfig c = quick_config();
  CHECK(sweep_csv(run_sweep(c, warn)) == "operator,level,preset,sa,ra\n");

  const fs::path dir = temp_dir("sweep");
  save_weights(quick_model(), dir / "base.zpwt");
  save_weights(quick_model(), dir / "strong.zpwt");
  c.sweep.operators = {BlurOp::median(3), BlurOp::gaussian(1.2)};
  c.sweep.presets = {Augmentation::base, Augmentation::strong};
  c.sweep.models["base"] = dir / "base.zpwt";
  c.sweep.models["strong"] = dir / "strong.zpwt";
  c.sample_count = 2;
  const auto rows = run_sweep(c, warn);
  CHECK(rows.size() == 4);
  const std::string csv = sweep_csv(rows);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
  CHECK(csv.find("median,3,base,") != std::string::npos);

  c.sweep.presets.push_back(Augmentation::vanilla);
  CHECK(run_sweep(c, warn).size() == 4);
  CHECK(warn.str().find("vanilla") != std::string::npos);
  fs::remove_all(dir);
}
