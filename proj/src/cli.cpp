#include "metadepth/cli.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <sstream>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "metadepth/errors.hpp"
#include "metadepth/experiment.hpp"
#include "metadepth/metrics.hpp"
#include "metadepth/scene.hpp"

namespace metadepth {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct GenArgs {
    std::string variety = "low";
    int scenes = 0;
    int views = 0;
    std::uint64_t seed = 0;
    std::string out;
    int height = 64;
    int width = 64;
    std::string name;
};

int run_gen_data(const GenArgs& a) {
    if (a.scenes < 1) throw UsageError("--scenes must be >= 1, got " + std::to_string(a.scenes));
    if (a.views < 1) throw UsageError("--views must be >= 1, got " + std::to_string(a.views));
    if (a.height < 8 || a.width < 8)
        throw UsageError("--height/--width must be >= 8, got " + std::to_string(a.height) + "x" +
                         std::to_string(a.width));
    Variety variety;
    if (a.variety == "low")
        variety = Variety::low;
    else if (a.variety == "high")
        variety = Variety::high;
    else
        throw UsageError("--variety must be low or high, got '" + a.variety + "'");

    const DatasetManifest manifest =
        generate_dataset(variety, a.scenes, a.views, a.seed, a.out, a.height, a.width, a.name);
    std::cout << "wrote " << manifest.samples.size() << " samples to " << a.out << "\n"
              << "manifest " << (fs::path(a.out) / "manifest.json").string() << "\n"
              << "content hash " << manifest.content_hash << "\n";
    return kExitOk;
}

struct TrainArgs {
    std::string recipe;
};

int run_train(const TrainArgs& a) {
    const ExperimentRecipe recipe = load_recipe(a.recipe);
    std::cout << "recipe " << recipe.name << " (" << method_name(recipe.method) << ", "
              << recipe.seeds.size() << " seeds)\n";
    const std::vector<RunRecord> records = run_experiment(recipe, env_thread_cap());
    for (const auto& r : records) {
        std::cout << "seed " << r.seed << ": ";
        if (r.stage1.ran)
            std::cout << "stage1 loss " << r.stage1.final_loss
                      << (r.stage1.diverged ? " (diverged)" : "") << ", ";
        if (r.stage2.ran)
            std::cout << "stage2 loss " << r.stage2.final_loss
                      << (r.stage2.diverged ? " (diverged)" : "") << ", ";
        std::cout << "dir " << seed_dir(recipe.output_dir, r.seed).string() << "\n";
    }
    return kExitOk;
}

struct EvalArgs {
    std::string checkpoint;
    std::string manifest;
    std::string protocol = "intra";
    double cap = 10.0;
    double min_depth = 1e-3;
    std::string arch = "desk";
    std::string out;
};

void write_per_image_csv(const EvalSummary& summary, const fs::path& path) {
    std::ofstream file(path);
    if (!file) throw DataError("cannot write " + path.string());
    file << std::setprecision(17)
         << "image_id,mae,absrel,rmse,silog,delta1,delta2,delta3,valid_pixels,scale_ratio\n";
    for (const auto& rec : summary.per_image) {
        const MetricsReport& m = rec.report;
        file << rec.scene_id << '_' << rec.view_id << ',' << m.mae << ',' << m.absrel << ','
             << m.rmse << ',' << m.silog << ',' << m.delta1 << ',' << m.delta2 << ',' << m.delta3
             << ',' << m.valid_pixels << ',' << m.scale_ratio << '\n';
    }
    if (!file) throw DataError("write failed: " + path.string());
}

json report_to_json(const MetricsReport& m) {
    return json{{"mae", m.mae},       {"absrel", m.absrel}, {"rmse", m.rmse},
                {"silog", m.silog},   {"delta1", m.delta1}, {"delta2", m.delta2},
                {"delta3", m.delta3}, {"valid_pixels", m.valid_pixels},
                {"scale_ratio", m.scale_ratio}};
}

int run_evaluate(const EvalArgs& a) {
    if (!fs::exists(a.checkpoint)) throw DataError("checkpoint not found: " + a.checkpoint);
    const ParamVector<float> theta = load_checkpoint<float>(a.checkpoint);
    const ArchConfig arch = arch_by_name(a.arch);
    const Dataset<float> dataset = Dataset<float>::load(load_manifest(a.manifest));

    EvalConfig cfg;
    cfg.protocol = parse_protocol(a.protocol);
    cfg.depth_cap = a.cap;
    cfg.min_depth = a.min_depth;
    const EvalSummary summary = evaluate_model(theta, arch, dataset, cfg);

    fs::create_directories(a.out);
    write_per_image_csv(summary, fs::path(a.out) / "per_image.csv");

    json j;
    j["checkpoint"] = a.checkpoint;
    j["manifest"] = a.manifest;
    j["manifest_hash"] = dataset.content_hash();
    j["protocol"] = protocol_name(cfg.protocol);
    j["depth_cap"] = cfg.depth_cap;
    j["min_depth"] = cfg.min_depth;
    j["images"] = summary.per_image.size();
    j["skipped"] = summary.skipped_images;
    j["aggregate"] = report_to_json(summary.aggregate);
    const fs::path jpath = fs::path(a.out) / "metrics.json";
    std::ofstream file(jpath);
    if (!file) throw DataError("cannot write " + jpath.string());
    file << j.dump(2) << "\n";
    if (!file) throw DataError("write failed: " + jpath.string());

    const MetricsReport& m = summary.aggregate;
    std::cout << "images " << summary.per_image.size() << " (skipped " << summary.skipped_images
              << ")\n"
              << "mae " << m.mae << "  absrel " << m.absrel << "  rmse " << m.rmse << "  silog "
              << m.silog << "\n"
              << "delta1 " << m.delta1 << "  delta2 " << m.delta2 << "  delta3 " << m.delta3
              << "  ratio " << m.scale_ratio << "\n";
    return kExitOk;
}

struct CompareArgs {
    std::vector<std::string> runs;
    std::string out;
    std::string test;  // optional override
    std::string protocol = "zero_shot";
    double cap = 10.0;
    double min_depth = 1e-3;
    int smooth = 25;
};

struct SeedEval {
    RunRecord record;
    fs::path dir;
    bool diverged = false;
    MetricsReport report;  // valid only when !diverged
};

struct Group {
    std::string label;
    std::vector<SeedEval> seeds;
};

std::vector<fs::path> sorted_seed_dirs(const fs::path& run_dir) {
    std::vector<std::pair<std::uint64_t, fs::path>> found;
    if (!fs::is_directory(run_dir)) throw DataError("run directory not found: " + run_dir.string());
    for (const auto& entry : fs::directory_iterator(run_dir)) {
        if (!entry.is_directory()) continue;
        const std::string stem = entry.path().filename().string();
        if (stem.rfind("seed", 0) != 0) continue;
        if (!fs::exists(entry.path() / "run.json")) continue;
        found.emplace_back(std::stoull(stem.substr(4)), entry.path());
    }
    if (found.empty()) throw DataError("no completed runs under " + run_dir.string());
    std::sort(found.begin(), found.end());
    std::vector<fs::path> dirs;
    for (auto& [seed, p] : found) dirs.push_back(std::move(p));
    return dirs;
}

const double kNan = std::numeric_limits<double>::quiet_NaN();

double metric_field(const MetricsReport& m, int i) {
    switch (i) {
        case 0: return m.mae;
        case 1: return m.absrel;
        case 2: return m.rmse;
        case 3: return m.silog;
        case 4: return m.delta1;
        case 5: return m.delta2;
        default: return m.delta3;
    }
}
const char* kMetricNames[] = {"mae", "absrel", "rmse", "silog", "delta1", "delta2", "delta3"};

int run_compare(const CompareArgs& a) {
    if (a.runs.size() < 2) throw UsageError("compare needs at least two --run directories");
    if (a.smooth < 1) throw UsageError("--smooth must be >= 1");

    std::vector<Group> groups;
    for (const auto& run : a.runs) {
        Group g;
        for (const auto& dir : sorted_seed_dirs(run)) {
            SeedEval se;
            se.record = load_run_record(dir);
            se.dir = dir;
            g.seeds.push_back(std::move(se));
        }
        g.label = g.seeds.front().record.name;
        groups.push_back(std::move(g));
    }

    // Apples-to-apples guard: every run must have been pointed at the same
    // test set, unless --test explicitly overrides.
    std::string test_manifest = a.test;
    if (test_manifest.empty()) {
        std::string hash;
        for (const auto& g : groups)
            for (const auto& se : g.seeds) {
                if (se.record.test_manifest.empty())
                    throw UsageError("run " + se.dir.string() +
                                     " records no test manifest; pass --test explicitly");
                if (test_manifest.empty()) {
                    test_manifest = se.record.test_manifest;
                    hash = se.record.test_hash;
                } else if (se.record.test_hash != hash) {
                    throw UsageError("runs were recorded against different test sets (" +
                                     test_manifest + " vs " + se.record.test_manifest + ")");
                }
            }
    }

    const Dataset<float> test = Dataset<float>::load(load_manifest(test_manifest));
    EvalConfig cfg;
    cfg.protocol = parse_protocol(a.protocol);
    cfg.depth_cap = a.cap;
    cfg.min_depth = a.min_depth;

    for (auto& g : groups)
        for (auto& se : g.seeds) {
            const StageRecord& s2 = se.record.stage2;
            const StageRecord& s1 = se.record.stage1;
            std::string ckpt;
            if (s2.ran && !s2.diverged)
                ckpt = s2.checkpoint;
            else if (s1.ran && !s1.diverged && !s2.ran)
                ckpt = s1.checkpoint;
            if (ckpt.empty()) {
                se.diverged = true;
                continue;
            }
            const ArchConfig arch = arch_by_name(se.record.arch);
            const ParamVector<float> theta = load_checkpoint<float>(se.dir / ckpt);
            se.report = evaluate_model(theta, arch, test, cfg).aggregate;
        }

    fs::create_directories(a.out);

    // per-seed CSV: the machine-readable source for every table number
    {
        std::ofstream csv(fs::path(a.out) / "compare.csv");
        if (!csv) throw DataError("cannot write compare.csv");
        csv << std::setprecision(17)
            << "group,seed,diverged,mae,absrel,rmse,silog,delta1,delta2,delta3,scale_ratio\n";
        for (const auto& g : groups)
            for (const auto& se : g.seeds) {
                csv << g.label << ',' << se.record.seed << ',' << (se.diverged ? 1 : 0);
                for (int i = 0; i < 7; ++i)
                    csv << ',' << (se.diverged ? kNan : metric_field(se.report, i));
                csv << ',' << (se.diverged ? kNan : se.report.scale_ratio) << '\n';
            }
    }

    // group means + improvement vs the first group
    std::vector<std::array<double, 7>> means(groups.size());
    for (std::size_t gi = 0; gi < groups.size(); ++gi)
        for (int mi = 0; mi < 7; ++mi) {
            double sum = 0.0;
            int n = 0;
            for (const auto& se : groups[gi].seeds) {
                if (se.diverged) continue;
                sum += metric_field(se.report, mi);
                ++n;
            }
            means[gi][static_cast<std::size_t>(mi)] = n > 0 ? sum / n : kNan;
        }

    std::ostringstream md;
    md << "# comparison: ";
    for (std::size_t gi = 0; gi < groups.size(); ++gi)
        md << (gi ? " vs " : "") << groups[gi].label;
    md << "\n\ntest manifest: " << test_manifest << "\nprotocol: " << protocol_name(cfg.protocol)
       << ", cap " << cfg.depth_cap << " m\n\n";
    md << "| metric |";
    for (const auto& g : groups) md << ' ' << g.label << " |";
    for (std::size_t gi = 1; gi < groups.size(); ++gi)
        md << " " << groups[gi].label << " vs " << groups[0].label << " |";
    md << "\n|---|";
    for (std::size_t gi = 0; gi < groups.size() * 2 - 1; ++gi) md << "---|";
    md << "\n";
    md << std::setprecision(4);
    for (int mi = 0; mi < 7; ++mi) {
        md << "| " << kMetricNames[mi] << " |";
        for (std::size_t gi = 0; gi < groups.size(); ++gi) md << ' ' << means[gi][mi] << " |";
        for (std::size_t gi = 1; gi < groups.size(); ++gi) {
            if (std::isfinite(means[gi][mi]) && std::isfinite(means[0][mi]) && means[0][mi] != 0.0)
                md << ' ' << improvement_percent(means[gi][mi], means[0][mi]) << "% |";
            else
                md << " n/a |";
        }
        md << "\n";
    }
    md << "\nseeds per group:";
    for (const auto& g : groups) {
        int ok = 0;
        for (const auto& se : g.seeds) ok += se.diverged ? 0 : 1;
        md << ' ' << g.label << ' ' << ok << '/' << g.seeds.size();
    }
    md << "\n";
    {
        std::ofstream file(fs::path(a.out) / "compare.md");
        if (!file) throw DataError("cannot write compare.md");
        file << md.str();
    }
    std::cout << md.str();

    // loss curves (stage 1 when present, else stage 2) + grid record
    std::vector<LossCurve> curves;
    {
        std::ofstream grid(fs::path(a.out) / "grid.csv");
        if (!grid) throw DataError("cannot write grid.csv");
        grid << std::setprecision(17)
             << "group,method,seed,alpha,beta,final_smoothed_loss,diverged\n";
        std::ofstream lcsv(fs::path(a.out) / "loss_curves.csv");
        if (!lcsv) throw DataError("cannot write loss_curves.csv");
        lcsv << std::setprecision(17) << "curve,iteration,loss\n";
        for (const auto& g : groups)
            for (const auto& se : g.seeds) {
                const StageRecord& stage = se.record.stage1.ran ? se.record.stage1 : se.record.stage2;
                if (!stage.ran || stage.log.empty()) continue;
                LossCurve curve;
                curve.label = g.label + "/s" + std::to_string(se.record.seed);
                curve.values = load_loss_column(se.dir / stage.log);
                for (std::size_t i = 0; i < curve.values.size(); ++i)
                    lcsv << curve.label << ',' << i << ',' << curve.values[i] << '\n';
                grid << g.label << ',' << method_name(se.record.method) << ',' << se.record.seed
                     << ',' << se.record.alpha << ',' << se.record.beta << ','
                     << smoothed_tail(curve.values, a.smooth) << ','
                     << (stage.diverged || se.diverged ? 1 : 0) << '\n';
                curves.push_back(std::move(curve));
            }
    }
    {
        std::ofstream svg(fs::path(a.out) / "loss_curves.svg");
        if (!svg) throw DataError("cannot write loss_curves.svg");
        write_loss_curves_svg(svg, curves, a.smooth);
    }
    std::cout << "wrote " << (fs::path(a.out) / "compare.md").string() << ", compare.csv, grid.csv, "
              << "loss_curves.{svg,csv}\n";
    return kExitOk;
}

struct ExportArgs {
    std::string checkpoint;  // empty = export ground truth
    std::string manifest;
    int index = 0;
    std::string out;
    std::string arch = "desk";
    double min_depth = 1e-3;
};

int run_export_pointcloud(const ExportArgs& a) {
    const Dataset<float> dataset = Dataset<float>::load(load_manifest(a.manifest));
    if (a.index < 0 || static_cast<std::size_t>(a.index) >= dataset.size())
        throw UsageError("--index " + std::to_string(a.index) + " out of range for " +
                         std::to_string(dataset.size()) + " samples");
    const RgbdSample<float>& sample = dataset[static_cast<std::size_t>(a.index)];

    Tensor<float> depth_map(Shape{sample.depth.dim(1), sample.depth.dim(2)});
    if (a.checkpoint.empty()) {
        std::copy(sample.depth.data(), sample.depth.data() + sample.depth.numel(), depth_map.data());
    } else {
        if (!fs::exists(a.checkpoint)) throw DataError("checkpoint not found: " + a.checkpoint);
        const ParamVector<float> theta = load_checkpoint<float>(a.checkpoint);
        const ArchConfig arch = arch_by_name(a.arch);
        Tensor<float> input(Shape{1, sample.image.dim(0), sample.image.dim(1), sample.image.dim(2)});
        std::copy(sample.image.data(), sample.image.data() + sample.image.numel(), input.data());
        Tensor<float> pred = forward(input, theta, arch);
        std::copy(pred.data(), pred.data() + pred.numel(), depth_map.data());
    }

    const auto points = backproject(depth_map, sample.image, sample.intrinsics, a.min_depth);
    std::ofstream file(a.out);
    if (!file) throw DataError("cannot write " + a.out);
    write_ply(file, points);
    if (!file) throw DataError("write failed: " + a.out);
    std::cout << "wrote " << points.size() << " vertices to " << a.out << "\n";
    return kExitOk;
}

}  // namespace

int cli_main(int argc, char** argv) {
    CLI::App app{"meta-initialized single-image depth regression toolkit"};
    app.require_subcommand(1);

    GenArgs gen;
    auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic RGB-D dataset");
    gen_cmd->add_option("--variety", gen.variety, "scene variety: low | high")->required();
    gen_cmd->add_option("--scenes", gen.scenes, "number of scenes")->required();
    gen_cmd->add_option("--views", gen.views, "views per scene")->required();
    gen_cmd->add_option("--seed", gen.seed, "generator seed");
    gen_cmd->add_option("--out", gen.out, "output directory")->required();
    gen_cmd->add_option("--height", gen.height, "image height (default 64)");
    gen_cmd->add_option("--width", gen.width, "image width (default 64)");
    gen_cmd->add_option("--name", gen.name, "manifest name (default derived)");

    TrainArgs train;
    auto* train_cmd = app.add_subcommand("train", "Run an experiment recipe (all seeds)");
    train_cmd->add_option("recipe", train.recipe, "recipe JSON path")->required();

    EvalArgs eval;
    auto* eval_cmd = app.add_subcommand("evaluate", "Evaluate a checkpoint on a manifest");
    eval_cmd->add_option("--checkpoint", eval.checkpoint, "model checkpoint")->required();
    eval_cmd->add_option("--manifest", eval.manifest, "dataset manifest.json")->required();
    eval_cmd->add_option("--protocol", eval.protocol, "intra | zero_shot (default intra)");
    eval_cmd->add_option("--cap", eval.cap, "depth cap in meters (default 10)");
    eval_cmd->add_option("--min-depth", eval.min_depth, "validity floor (default 1e-3)");
    eval_cmd->add_option("--arch", eval.arch, "architecture profile (default desk)");
    eval_cmd->add_option("--out", eval.out, "output directory for reports")->required();

    CompareArgs cmp;
    auto* cmp_cmd = app.add_subcommand("compare", "Compare completed runs on a shared test set");
    cmp_cmd->add_option("--run", cmp.runs, "recipe output directory (repeatable)")->required();
    cmp_cmd->add_option("--out", cmp.out, "output directory")->required();
    cmp_cmd->add_option("--test", cmp.test, "test manifest override");
    cmp_cmd->add_option("--protocol", cmp.protocol, "intra | zero_shot (default zero_shot)");
    cmp_cmd->add_option("--cap", cmp.cap, "depth cap in meters (default 10)");
    cmp_cmd->add_option("--min-depth", cmp.min_depth, "validity floor (default 1e-3)");
    cmp_cmd->add_option("--smooth", cmp.smooth, "loss smoothing window (default 25)");

    ExportArgs expt;
    auto* exp_cmd = app.add_subcommand("export-pointcloud", "Back-project one sample to ASCII PLY");
    exp_cmd->add_option("--checkpoint", expt.checkpoint, "checkpoint (omit to export ground truth)");
    exp_cmd->add_option("--manifest", expt.manifest, "dataset manifest.json")->required();
    exp_cmd->add_option("--index", expt.index, "sample index (default 0)");
    exp_cmd->add_option("--out", expt.out, "output .ply path")->required();
    exp_cmd->add_option("--arch", expt.arch, "architecture profile (default desk)");
    exp_cmd->add_option("--min-depth", expt.min_depth, "minimum exported depth (default 1e-3)");

    int rc = kExitOk;
    gen_cmd->callback([&] { rc = run_gen_data(gen); });
    train_cmd->callback([&] { rc = run_train(train); });
    eval_cmd->callback([&] { rc = run_evaluate(eval); });
    cmp_cmd->callback([&] { rc = run_compare(cmp); });
    exp_cmd->callback([&] { rc = run_export_pointcloud(expt); });

    try {
        app.parse(argc, argv);
        return rc;
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const DimensionError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const AlignmentError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const DivergenceError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const EmptyEvaluation& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const ProtocolError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    } catch (const ParseError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kExitIo;
    } catch (const DataError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kExitIo;
    } catch (const GenerationError& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::ios_base::failure& e) {
        std::cerr << "i/o error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace metadepth
