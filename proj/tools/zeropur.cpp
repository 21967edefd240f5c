// Command-line front end: train, attack, purify, eval, sweep, gradcheck, trace-gs.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "zeropur/gradcheck.hpp"
#include "zeropur/harness.hpp"
#include "zeropur/rng.hpp"
#include "zeropur/tensor_io.hpp"

namespace fs = std::filesystem;
using namespace zp;
using Json = nlohmann::ordered_json;

namespace {

struct Globals {
  std::string config;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out = "out";
  std::string format = "csv";
};

ExperimentConfig load(const Globals& g) {
  ConfigMap m = g.config.empty() ? ConfigMap{} : read_config_file(g.config);
  for (const auto& s : g.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    auto key = s.substr(0, eq);
    key.erase(key.find_last_not_of(' ') + 1);
    m[key] = s.substr(eq + 1);
  }
  ExperimentConfig cfg = make_config(m);
  if (g.seed_given) cfg.seed = g.seed;
  cfg.validate();
  return cfg;
}

// One-row summary on stdout in the requested format.
void emit(const Globals& g, const Json& row) {
  if (g.format == "json") {
    std::cout << row.dump(2) << "\n";
    return;
  }
  std::string head, vals;
  for (auto it = row.begin(); it != row.end(); ++it) {
    head += (head.empty() ? "" : ",") + it.key();
    vals += (vals.empty() ? "" : ",") + (it->is_string() ? it->get<std::string>() : it->dump());
  }
  std::cout << head << "\n" << vals << "\n";
}

Tensor labels_tensor(const std::vector<int>& labels) {
  Tensor t({labels.size()}, DType::f32);
  for (std::size_t i = 0; i < labels.size(); ++i) t.set(i, labels[i]);
  return t;
}

std::vector<int> labels_from(const Tensor& t) {
  std::vector<int> out(t.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<int>(t.at(i));
  return out;
}

const Tensor* find(const std::vector<NamedTensor>& ts, const std::string& name) {
  for (const auto& [n, t] : ts) {
    if (n == name) return &t;
  }
  return nullptr;
}

int cmd_train(const Globals& g) {
  ExperimentConfig cfg = load(g);
  fs::create_directories(g.out);
  if (cfg.model_save.empty()) cfg.model_save = fs::path(g.out) / "model.zpwt";
  cfg.model_path.clear();
  std::ostringstream history;
  const Classifier m = acquire_model(cfg, &history);
  {
    std::ofstream(fs::path(g.out) / "train_log.txt") << history.str();
  }
  const LabeledDataset test = evaluation_set(cfg);
  emit(g, {{"command", "train"},
           {"preset", augmentation_name(cfg.train.preset)},
           {"epochs", cfg.train.epochs},
           {"eval_accuracy", accuracy(m.predict(test.images), test.labels)},
           {"weights", cfg.model_save.string()}});
  return 0;
}

int cmd_attack(const Globals& g) {
  const ExperimentConfig cfg = load(g);
  const Classifier m = acquire_model(cfg, &std::cerr);
  const LabeledDataset d = evaluation_set(cfg);
  AttackConfig a = cfg.attack;
  a.seed = derive_seed(cfg.seed, kSeedAttack);
  const Purifier p = make_purifier(m, cfg.defense, cfg.gs, cfg.ap);
  const Tensor adv = run_attack(m, d.images, d.labels, a, &p);
  fs::create_directories(g.out);
  const fs::path file = fs::path(g.out) / "adversarial.zpwt";
  save_tensors(file, {{"images", adv}, {"natural", d.images}, {"labels", labels_tensor(d.labels)}});
  emit(g, {{"command", "attack"},
           {"attack", attack_kind_name(a.kind)},
           {"eps", a.eps},
           {"samples", d.size()},
           {"clean_accuracy", accuracy(m.predict(d.images), d.labels)},
           {"adv_accuracy", accuracy(m.predict(adv), d.labels)},
           {"linf", linf_distance(adv, d.images)},
           {"output", file.string()}});
  return 0;
}

int cmd_purify(const Globals& g, const std::string& input) {
  const ExperimentConfig cfg = load(g);
  const Classifier m = acquire_model(cfg, &std::cerr);
  Tensor x;
  std::vector<int> labels;
  if (input.empty()) {
    const LabeledDataset d = evaluation_set(cfg);
    x = d.images;
    labels = d.labels;
  } else {
    const auto ts = load_tensors(input);
    const Tensor* images = find(ts, "images");
    if (!images) throw FormatError(input + ": no tensor named 'images'");
    x = *images;
    if (const Tensor* l = find(ts, "labels")) labels = labels_from(*l);
  }
  const DefenseMode mode = cfg.defense == DefenseMode::none ? DefenseMode::zeropur : cfg.defense;
  const Tensor out = defend(m, x, mode, cfg.gs, cfg.ap, derive_seed(cfg.seed, kSeedDefendAdv));
  fs::create_directories(g.out);
  const fs::path file = fs::path(g.out) / "purified.zpwt";
  std::vector<NamedTensor> dump{{"images", out}};
  if (!labels.empty()) dump.emplace_back("labels", labels_tensor(labels));
  save_tensors(file, dump);
  Json row{{"command", "purify"}, {"defense", defense_mode_name(mode)}, {"samples", x.dim(0)}};
  if (!labels.empty()) {
    row["accuracy_before"] = accuracy(m.predict(x), labels);
    row["accuracy_after"] = accuracy(m.predict(out), labels);
  }
  row["linf"] = linf_distance(out, x);
  row["output"] = file.string();
  emit(g, row);
  return 0;
}

int cmd_eval(const Globals& g) {
  const ExperimentConfig cfg = load(g);
  const EvalReport r = run_experiment(cfg, &std::cerr);
  write_report(r, g.out);
  emit(g, {{"command", "eval"},
           {"config_hash", r.config_hash},
           {"defense", r.defense},
           {"attack", r.attack},
           {"samples", r.records.size()},
           {"clean_accuracy", r.clean_accuracy},
           {"adv_accuracy", r.adv_accuracy},
           {"sa", r.sa},
           {"ra", r.ra},
           {"wall_clock_seconds", r.wall_clock_seconds}});
  return 0;
}

int cmd_sweep(const Globals& g) {
  const ExperimentConfig cfg = load(g);
  const auto rows = run_sweep(cfg, std::cerr);
  fs::create_directories(g.out);
  const std::string csv = sweep_csv(rows);
  std::ofstream(fs::path(g.out) / "sweep.csv") << csv;
  if (g.format == "json") {
    Json arr = Json::array();
    for (const auto& r : rows) {
      arr.push_back({{"operator", r.op.kind_name()},
                     {"level", r.op.level()},
                     {"preset", augmentation_name(r.preset)},
                     {"sa", r.sa},
                     {"ra", r.ra}});
    }
    std::cout << arr.dump(2) << "\n";
  } else {
    std::cout << csv;
  }
  return 0;
}

int cmd_gradcheck(const Globals& g, std::size_t seeds) {
  load(g);  // rejects bad overrides even though no setting is used
  const DType dtypes[] = {DType::f32, DType::f64};
  const auto results = run_op_checks(seeds, dtypes);
  bool ok = true;
  Json arr = Json::array();
  if (g.format != "json") std::cout << "op,dtype,worst_rel_error,threshold,passed\n";
  for (const auto& r : results) {
    ok = ok && r.passed;
    if (g.format == "json") {
      arr.push_back({{"op", r.name},
                     {"dtype", dtype_name(r.dtype)},
                     {"worst_rel_error", r.worst},
                     {"threshold", gradcheck_threshold(r.dtype)},
                     {"passed", r.passed}});
    } else {
      std::printf("%s,%s,%.3e,%.0e,%s\n", r.name.c_str(), dtype_name(r.dtype), r.worst,
                  gradcheck_threshold(r.dtype), r.passed ? "true" : "false");
    }
  }
  if (g.format == "json") std::cout << arr.dump(2) << "\n";
  return ok ? 0 : 2;
}

int cmd_trace_gs(const Globals& g, std::size_t samples) {
  ExperimentConfig cfg = load(g);
  cfg.sample_count = samples;
  const Classifier m = acquire_model(cfg, &std::cerr);
  const LabeledDataset d = evaluation_set(cfg);
  AttackConfig a = cfg.attack;
  a.seed = derive_seed(cfg.seed, kSeedAttack);
  const Tensor adv = run_attack(m, d.images, d.labels, a);
  GuidedShiftConfig gs = cfg.gs;
  gs.seed = derive_seed(cfg.seed, kSeedDefendAdv);
  const auto r = guided_shift(m, adv, gs, &d.images);
  const GsTrace mean = mean_trace(r.traces);
  fs::create_directories(g.out);
  const fs::path file = fs::path(g.out) / "gs_trace.csv";
  write_trace_csv(file, mean);
  emit(g, {{"command", "trace-gs"},
           {"samples", samples},
           {"rows", mean.size()},
           {"cos_g_nat_first", mean.front().cos_g_nat},
           {"cos_g_nat_last", mean.back().cos_g_nat},
           {"output", file.string()}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ZeroPur adversarial purification laboratory"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("-c,--config", g.config, "Config file (key = value lines)");
  app.add_option("--set", g.sets, "Override a config key, e.g. --set attack.eps=8/255")->take_all();
  app.add_option("--seed", g.seed, "Experiment seed (overrides the config)")->each([&](const std::string&) {
    g.seed_given = true;
  });
  app.add_option("--out", g.out, "Output directory")->capture_default_str();
  app.add_option("--format", g.format, "Summary format on stdout")
      ->check(CLI::IsMember({"csv", "json"}))
      ->capture_default_str();

  auto* train = app.add_subcommand("train", "Train a classifier and write its weights");
  auto* attack = app.add_subcommand("attack", "Attack the evaluation batch and dump it");
  auto* purify = app.add_subcommand("purify", "Purify a dumped batch (or the natural evaluation batch)");
  std::string input;
  purify->add_option("--input", input, "Tensor file with an 'images' tensor")->check(CLI::ExistingFile);
  auto* eval = app.add_subcommand("eval", "Attack, defend and report SA/RA");
  auto* sweep = app.add_subcommand("sweep", "Blur operator x augmentation preset grid");
  auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference check of every autodiff op");
  std::size_t seeds = 10;
  gradcheck->add_option("--seeds", seeds, "Random inputs per op and precision")->capture_default_str();
  auto* trace = app.add_subcommand("trace-gs", "Cosine-similarity trace of Guided Shift");
  std::size_t samples = 1;
  trace->add_option("--samples", samples, "Evaluation samples to trace")->capture_default_str()->check(
      CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return 1;
  }

  try {
    if (*train) return cmd_train(g);
    if (*attack) return cmd_attack(g);
    if (*purify) return cmd_purify(g, input);
    if (*eval) return cmd_eval(g);
    if (*sweep) return cmd_sweep(g);
    if (*gradcheck) return cmd_gradcheck(g, seeds);
    if (*trace) return cmd_trace_gs(g, samples);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
