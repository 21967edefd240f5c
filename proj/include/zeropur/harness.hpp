#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "zeropur/config.hpp"
#include "zeropur/dataset.hpp"

namespace zp {

/// A pipeline stage failed; the message names the stage and, where known, the sample.
class StageError : public Error {
 public:
  using Error::Error;
};

/// Stream tags for seeds derived from ExperimentConfig::seed.
enum SeedStream : std::uint64_t {
  kSeedTrainData = 1,
  kSeedTestData = 2,
  kSeedModelInit = 3,
  kSeedTrain = 4,
  kSeedAttack = 5,
  kSeedDefendAdv = 6,
  kSeedDefendNatural = 7,
};

struct SampleRecord {
  std::size_t index = 0;
  int label = 0;
  int clean_pred = 0;            ///< undefended, natural input
  int adv_pred = 0;              ///< undefended, attacked input
  int purified_pred = 0;         ///< defended, attacked input
  int purified_clean_pred = 0;   ///< defended, natural input
};

struct EvalReport {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string defense;
  std::string attack;
  double clean_accuracy = 0.0;   ///< no attack, no defense
  double adv_accuracy = 0.0;     ///< attack, no defense
  double sa = 0.0;               ///< defended natural inputs
  double ra = 0.0;               ///< defended attacked inputs
  std::vector<SampleRecord> records;
  double wall_clock_seconds = 0.0;
};

LabeledDataset training_set(const ExperimentConfig& cfg);
/// The first sample_count examples of the evaluation split.
LabeledDataset evaluation_set(const ExperimentConfig& cfg);

/// Loads model.path, or trains from the recipe (and writes model.save when set).
Classifier acquire_model(const ExperimentConfig& cfg, std::ostream* log = nullptr);

EvalReport run_experiment(const ExperimentConfig& cfg, const Classifier& model);
EvalReport run_experiment(const ExperimentConfig& cfg, std::ostream* log = nullptr);

/// Accuracies recomputed from the per-sample records.
double records_sa(const std::vector<SampleRecord>& records);
double records_ra(const std::vector<SampleRecord>& records);

std::string report_json(const EvalReport& report, bool include_wall_clock = true);
std::string report_csv(const EvalReport& report);
/// Writes report.json and report.csv into `dir`.
void write_report(const EvalReport& report, const std::filesystem::path& dir);

struct SweepRow {
  BlurOp op;
  Augmentation preset = Augmentation::base;
  double sa = 0.0;
  double ra = 0.0;
};

/// Grid over cfg.sweep.operators x cfg.sweep.presets with the ZeroPur defense.
/// Presets without a readable model file are skipped with a warning on `warn`.
std::vector<SweepRow> run_sweep(const ExperimentConfig& cfg, std::ostream& warn);
std::string sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace zp
