#include "zeropur/harness.hpp"

#include <chrono>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "zeropur/rng.hpp"

namespace zp {

namespace {

template <class Fn>
auto stage(const char* name, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(std::string("stage '") + name + "' failed: " + e.what());
  }
}

double fraction(std::size_t hits, std::size_t n) { return n == 0 ? 0.0 : static_cast<double>(hits) / n; }

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void write_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write " + p.string());
  out << text;
}

}  // namespace

LabeledDataset training_set(const ExperimentConfig& cfg) {
  if (cfg.dataset.kind == "cifar10") {
    if (cfg.dataset.train_path.empty()) throw ConfigError("training on cifar10 needs dataset.train_path");
    return load_cifar10_bin(cfg.dataset.train_path);
  }
  return gen_shapes_dataset(derive_seed(cfg.seed, kSeedTrainData), cfg.dataset.train_per_class, "train");
}

LabeledDataset evaluation_set(const ExperimentConfig& cfg) {
  LabeledDataset all = cfg.dataset.kind == "cifar10"
                           ? load_cifar10_bin(cfg.dataset.path)
                           : gen_shapes_dataset(derive_seed(cfg.seed, kSeedTestData), cfg.dataset.test_per_class, "test");
  if (cfg.sample_count > all.size()) {
    throw ConfigError("sample_count " + std::to_string(cfg.sample_count) + " exceeds the " +
                      std::to_string(all.size()) + " available evaluation samples");
  }
  return all.slice(0, cfg.sample_count);
}

Classifier acquire_model(const ExperimentConfig& cfg, std::ostream* log) {
  if (!cfg.model_path.empty()) return load_weights(cfg.model_path);
  const LabeledDataset data = training_set(cfg);
  ClassifierSpec spec;
  spec.in_channels = data.images.dim(1);
  spec.height = data.images.dim(2);
  spec.width = data.images.dim(3);
  spec.num_classes = data.num_classes;
  TrainRecipe recipe = cfg.train;
  recipe.seed = derive_seed(cfg.seed, kSeedTrain);
  const Classifier init = Classifier::tiny_resnet(spec, derive_seed(cfg.seed, kSeedModelInit));
  const auto result = stage("train", [&] {
    return train(init, data, recipe, nullptr, [&](const EpochStats& s) {
      if (log) {
        *log << "epoch " << s.epoch << " loss " << fmt(s.loss) << " train_acc " << fmt(s.train_accuracy) << " lr "
             << fmt(s.lr) << "\n";
      }
    });
  });
  if (!cfg.model_save.empty()) save_weights(result.model, cfg.model_save);
  return result.model;
}

EvalReport run_experiment(const ExperimentConfig& cfg, const Classifier& model) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.validate();
  const LabeledDataset data = evaluation_set(cfg);
  const Tensor x = data.images.dtype() == model.dtype() ? data.images : data.images.to(model.dtype());
  const auto& y = data.labels;

  AttackConfig attack = cfg.attack;
  attack.seed = derive_seed(cfg.seed, kSeedAttack);
  const Purifier purifier = make_purifier(model, cfg.defense, cfg.gs, cfg.ap);

  const auto clean = stage("classify-natural", [&] { return model.predict(x); });
  const Tensor x_adv = stage("attack", [&] { return run_attack(model, x, y, attack, &purifier); });
  const auto adv = stage("classify-adversarial", [&] { return model.predict(x_adv); });
  const Tensor x_pa = stage("defend-adversarial", [&] {
    return defend(model, x_adv, cfg.defense, cfg.gs, cfg.ap, derive_seed(cfg.seed, kSeedDefendAdv));
  });
  const Tensor x_pn = stage("defend-natural", [&] {
    return defend(model, x, cfg.defense, cfg.gs, cfg.ap, derive_seed(cfg.seed, kSeedDefendNatural));
  });
  const auto pa = model.predict(x_pa);
  const auto pn = model.predict(x_pn);

  EvalReport r;
  r.config_hash = config_hash(cfg);
  r.seed = cfg.seed;
  r.defense = defense_mode_name(cfg.defense);
  r.attack = attack_kind_name(cfg.attack.kind);
  std::size_t c = 0, a = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    r.records.push_back({i, y[i], clean[i], adv[i], pa[i], pn[i]});
    c += clean[i] == y[i];
    a += adv[i] == y[i];
  }
  r.clean_accuracy = fraction(c, y.size());
  r.adv_accuracy = fraction(a, y.size());
  r.sa = records_sa(r.records);
  r.ra = records_ra(r.records);
  r.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

EvalReport run_experiment(const ExperimentConfig& cfg, std::ostream* log) {
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const Classifier model = acquire_model(cfg, log);
  EvalReport r = run_experiment(cfg, model);
  r.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

double records_sa(const std::vector<SampleRecord>& records) {
  std::size_t hits = 0;
  for (const auto& s : records) hits += s.purified_clean_pred == s.label;
  return fraction(hits, records.size());
}

double records_ra(const std::vector<SampleRecord>& records) {
  std::size_t hits = 0;
  for (const auto& s : records) hits += s.purified_pred == s.label;
  return fraction(hits, records.size());
}

std::string report_json(const EvalReport& r, bool include_wall_clock) {
  nlohmann::ordered_json j;
  j["config_hash"] = r.config_hash;
  j["seed"] = r.seed;
  j["defense"] = r.defense;
  j["attack"] = r.attack;
  j["sample_count"] = r.records.size();
  j["clean_accuracy"] = r.clean_accuracy;
  j["adv_accuracy"] = r.adv_accuracy;
  j["sa"] = r.sa;
  j["ra"] = r.ra;
  if (include_wall_clock) j["wall_clock_seconds"] = r.wall_clock_seconds;
  auto& recs = j["records"] = nlohmann::ordered_json::array();
  for (const auto& s : r.records) {
    recs.push_back({{"index", s.index},
                    {"label", s.label},
                    {"clean_pred", s.clean_pred},
                    {"adv_pred", s.adv_pred},
                    {"purified_pred", s.purified_pred},
                    {"purified_clean_pred", s.purified_clean_pred}});
  }
  return j.dump(2) + "\n";
}

std::string report_csv(const EvalReport& r) {
  std::ostringstream os;
  os << "# config_hash=" << r.config_hash << " seed=" << r.seed << " defense=" << r.defense << " attack=" << r.attack
     << " sa=" << fmt(r.sa) << " ra=" << fmt(r.ra) << "\n";
  os << "index,label,clean_pred,adv_pred,purified_pred,purified_clean_pred\n";
  for (const auto& s : r.records) {
    os << s.index << ',' << s.label << ',' << s.clean_pred << ',' << s.adv_pred << ',' << s.purified_pred << ','
       << s.purified_clean_pred << "\n";
  }
  return os.str();
}

void write_report(const EvalReport& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_file(dir / "report.json", report_json(r));
  write_file(dir / "report.csv", report_csv(r));
}

std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, std::ostream& warn) {
  std::vector<SweepRow> rows;
  if (cfg.sweep.operators.empty() || cfg.sweep.presets.empty()) return rows;
  for (Augmentation preset : cfg.sweep.presets) {
    const std::string name = augmentation_name(preset);
    const auto it = cfg.sweep.models.find(name);
    if (it == cfg.sweep.models.end() || !std::filesystem::exists(it->second)) {
      warn << "warning: no model for preset " << name << "; skipping its sweep rows\n";
      continue;
    }
    Classifier model;
    try {
      model = load_weights(it->second);
    } catch (const Error& e) {
      warn << "warning: cannot load model for preset " << name << " (" << e.what() << "); skipping its sweep rows\n";
      continue;
    }
    for (const BlurOp& op : cfg.sweep.operators) {
      ExperimentConfig c = cfg;
      c.defense = DefenseMode::zeropur;
      c.gs.blur = op;
      const EvalReport r = run_experiment(c, model);
      rows.push_back({op, preset, r.sa, r.ra});
    }
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "operator,level,preset,sa,ra\n";
  for (const auto& r : rows) {
    char level[32];
    std::snprintf(level, sizeof level, "%g", r.op.level());
    os << r.op.kind_name() << ',' << level << ',' << augmentation_name(r.preset) << ',' << fmt(r.sa) << ','
       << fmt(r.ra) << "\n";
  }
  return os.str();
}

}  // namespace zp
