#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "metadepth/arch.hpp"
#include "metadepth/dataset.hpp"
#include "metadepth/metaopt.hpp"
#include "metadepth/metrics.hpp"
#include "metadepth/scene.hpp"

namespace metadepth {

enum class Method { meta_init, dsl, wd_pre, grad_accum, fomaml };
const char* method_name(Method m);
Method parse_method(const std::string& name);

/// Declarative description of one experiment: datasets, method, stage
/// configurations and the seed list. Loaded from a JSON file; unknown keys
/// are rejected so typos fail loudly.
struct ExperimentRecipe {
    std::string name;
    Method method = Method::dsl;
    std::string arch = "desk";  // desk | full
    std::filesystem::path train_manifest;
    std::filesystem::path val_manifest;   // empty = no validation / early stop
    std::filesystem::path test_manifest;  // empty = not recorded
    std::vector<std::uint64_t> seeds;
    std::filesystem::path output_dir;
    MetaConfig meta;             // first stage of meta_init / fomaml
    SupervisedConfig pretrain;   // first stage of wd_pre / grad_accum
    SupervisedConfig stage2;     // second stage (all methods)
    bool stage2_enabled = true;
    std::uint64_t recipe_hash = 0;  // FNV-1a 64 of the recipe file bytes
};

ExperimentRecipe load_recipe(const std::filesystem::path& path);
ArchConfig arch_by_name(const std::string& name);

/// Outcome of one stage of one seeded run, as persisted in run.json.
struct StageRecord {
    bool ran = false;
    bool diverged = false;
    long long diverged_at = -1;
    double final_loss = 0.0;
    double seconds = 0.0;
    std::string checkpoint;  // file name inside the run directory
    std::string log;         // csv file name inside the run directory
};

struct RunRecord {
    std::string name;
    Method method = Method::dsl;
    std::uint64_t seed = 0;
    std::string arch;
    std::uint64_t recipe_hash = 0;
    std::string train_manifest;
    std::string train_hash;
    std::string val_manifest;
    std::string test_manifest;
    std::string test_hash;
    double alpha = 0.0;  // stage-1 rates, echoed for grid records
    double beta = 0.0;
    StageRecord stage1;
    StageRecord stage2;
};

std::filesystem::path seed_dir(const std::filesystem::path& output_dir, std::uint64_t seed);
void save_run_record(const RunRecord& record, const std::filesystem::path& run_dir);
RunRecord load_run_record(const std::filesystem::path& run_dir);

/// Runs one seed end to end and persists checkpoints, logs and run.json
/// into seed_dir(recipe.output_dir, seed). On divergence the record is
/// written before the DivergenceError propagates (fomaml records divergence
/// without throwing). Returns the record.
RunRecord run_experiment_seed(const ExperimentRecipe& recipe, const Dataset<float>& train,
                              const Dataset<float>* val, std::uint64_t seed);

/// All seeds of the recipe, up to max_threads at a time (seeds are fully
/// independent). The first failure is rethrown after all workers stop.
std::vector<RunRecord> run_experiment(const ExperimentRecipe& recipe, int max_threads = 1);

/// Parallelism cap from METADEPTH_THREADS (>= 1; unset or invalid -> 1).
int env_thread_cap();

/// Loss column of a TrainLog CSV written by to_csv.
std::vector<double> load_loss_column(const std::filesystem::path& csv);

/// Trailing moving average: mean of the last `window` finite values
/// (the whole series if shorter). NaN when nothing is finite.
double smoothed_tail(const std::vector<double>& losses, int window);

struct LossCurve {
    std::string label;
    std::vector<double> values;
};

/// Self-contained SVG overlay of loss curves (log-scale y), one polyline per
/// curve, moving-average smoothing over `smooth_window` entries.
void write_loss_curves_svg(std::ostream& out, const std::vector<LossCurve>& curves, int smooth_window);

}  // namespace metadepth
