#include "metadepth/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <ostream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "metadepth/errors.hpp"

namespace metadepth {

namespace {

using nlohmann::json;

// Stage-2 streams must not replay stage-1 draws when both stages are
// supervised, so the second stage salts the run seed.
constexpr std::uint64_t kStage2SeedSalt = 0x5742u;

std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
    return s;
}

std::uint64_t parse_hex64(const std::string& s) {
    return std::stoull(s, nullptr, 16);
}

void reject_unknown_keys(const json& j, std::initializer_list<const char*> known,
                         const std::string& where) {
    for (const auto& [key, value] : j.items()) {
        (void)value;
        if (std::find_if(known.begin(), known.end(),
                         [&](const char* k) { return key == k; }) == known.end())
            throw UsageError("recipe: unknown key '" + key + "' in " + where);
    }
}

MetaConfig parse_meta(const json& j) {
    reject_unknown_keys(j,
                        {"epochs", "iters_per_epoch", "inner_steps", "task_size", "alpha", "beta",
                         "online_aug", "mixup", "channel_shuffle", "keep_prob"},
                        "meta");
    MetaConfig m;
    if (j.contains("epochs")) m.epochs = j.at("epochs").get<int>();
    if (j.contains("iters_per_epoch")) m.iters_per_epoch = j.at("iters_per_epoch").get<int>();
    if (j.contains("inner_steps")) m.inner_steps = j.at("inner_steps").get<int>();
    if (j.contains("task_size")) m.task_size = j.at("task_size").get<int>();
    if (j.contains("alpha")) m.alpha = j.at("alpha").get<double>();
    if (j.contains("beta")) m.beta = j.at("beta").get<double>();
    if (j.contains("online_aug")) m.use_online_aug = j.at("online_aug").get<bool>();
    if (j.contains("mixup")) m.use_mixup = j.at("mixup").get<bool>();
    if (j.contains("channel_shuffle")) m.use_channel_shuffle = j.at("channel_shuffle").get<bool>();
    if (j.contains("keep_prob")) m.keep_prob = j.at("keep_prob").get<double>();
    return m;
}

SupervisedConfig parse_supervised(const json& j, const std::string& where) {
    reject_unknown_keys(
        j, {"lr", "batch_size", "max_epochs", "patience", "weight_decay", "flip_aug", "accum_steps"},
        where);
    SupervisedConfig s;
    if (j.contains("lr")) s.lr = j.at("lr").get<double>();
    if (j.contains("batch_size")) s.batch_size = j.at("batch_size").get<int>();
    if (j.contains("max_epochs")) s.max_epochs = j.at("max_epochs").get<int>();
    if (j.contains("patience")) s.patience = j.at("patience").get<int>();
    if (j.contains("weight_decay")) s.weight_decay = j.at("weight_decay").get<double>();
    if (j.contains("flip_aug")) s.flip_aug = j.at("flip_aug").get<bool>();
    if (j.contains("accum_steps")) s.accum_steps = j.at("accum_steps").get<int>();
    return s;
}

json stage_to_json(const StageRecord& s) {
    json j;
    j["ran"] = s.ran;
    j["diverged"] = s.diverged;
    j["diverged_at"] = s.diverged_at;
    if (std::isfinite(s.final_loss))
        j["final_loss"] = s.final_loss;
    else
        j["final_loss"] = nullptr;
    j["seconds"] = s.seconds;
    j["checkpoint"] = s.checkpoint;
    j["log"] = s.log;
    return j;
}

StageRecord stage_from_json(const json& j) {
    StageRecord s;
    s.ran = j.at("ran").get<bool>();
    s.diverged = j.at("diverged").get<bool>();
    s.diverged_at = j.at("diverged_at").get<long long>();
    s.final_loss = j.at("final_loss").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                                : j.at("final_loss").get<double>();
    s.seconds = j.at("seconds").get<double>();
    s.checkpoint = j.at("checkpoint").get<std::string>();
    s.log = j.at("log").get<std::string>();
    return s;
}

double last_loss(const TrainLog& log) {
    return log.entries.empty() ? std::numeric_limits<double>::quiet_NaN() : log.entries.back().loss;
}

double total_seconds(const TrainLog& log) {
    double s = 0.0;
    for (double e : log.epoch_seconds) s += e;
    return s;
}

void write_log_csv(const TrainLog& log, const std::filesystem::path& path) {
    std::ofstream file(path);
    if (!file) throw DataError("cannot write log: " + path.string());
    log.to_csv(file);
    if (!file) throw DataError("log write failed: " + path.string());
}

}  // namespace

const char* method_name(Method m) {
    switch (m) {
        case Method::meta_init: return "meta_init";
        case Method::dsl: return "dsl";
        case Method::wd_pre: return "wd_pre";
        case Method::grad_accum: return "grad_accum";
        default: return "fomaml";
    }
}

Method parse_method(const std::string& name) {
    if (name == "meta_init") return Method::meta_init;
    if (name == "dsl") return Method::dsl;
    if (name == "wd_pre") return Method::wd_pre;
    if (name == "grad_accum") return Method::grad_accum;
    if (name == "fomaml") return Method::fomaml;
    throw UsageError("unknown method '" + name +
                     "' (expected meta_init, dsl, wd_pre, grad_accum or fomaml)");
}

ArchConfig arch_by_name(const std::string& name) {
    if (name == "desk") return ArchConfig::desk();
    if (name == "full") return ArchConfig::full();
    throw UsageError("unknown arch profile '" + name + "' (expected desk or full)");
}

ExperimentRecipe load_recipe(const std::filesystem::path& path) {
    std::ifstream file(path, std::ios::binary);
    if (!file) throw DataError("cannot open recipe: " + path.string());
    std::string bytes((std::istreambuf_iterator<char>(file)), std::istreambuf_iterator<char>());

    json j;
    try {
        j = json::parse(bytes);
    } catch (const json::parse_error& e) {
        throw ParseError("recipe " + path.string() + ": " + e.what(), static_cast<long long>(e.byte));
    }

    reject_unknown_keys(j,
                        {"name", "method", "arch", "train_manifest", "val_manifest", "test_manifest",
                         "seeds", "output_dir", "stage2_enabled", "meta", "pretrain", "stage2"},
                        "recipe");
    ExperimentRecipe r;
    try {
        r.name = j.at("name").get<std::string>();
        r.method = parse_method(j.at("method").get<std::string>());
        if (j.contains("arch")) r.arch = j.at("arch").get<std::string>();
        r.train_manifest = j.at("train_manifest").get<std::string>();
        if (j.contains("val_manifest")) r.val_manifest = j.at("val_manifest").get<std::string>();
        if (j.contains("test_manifest")) r.test_manifest = j.at("test_manifest").get<std::string>();
        for (const auto& s : j.at("seeds")) r.seeds.push_back(s.get<std::uint64_t>());
        r.output_dir = j.at("output_dir").get<std::string>();
        if (j.contains("stage2_enabled")) r.stage2_enabled = j.at("stage2_enabled").get<bool>();
        if (j.contains("meta")) r.meta = parse_meta(j.at("meta"));
        if (j.contains("pretrain")) r.pretrain = parse_supervised(j.at("pretrain"), "pretrain");
        if (j.contains("stage2")) r.stage2 = parse_supervised(j.at("stage2"), "stage2");
    } catch (const json::exception& e) {
        throw UsageError("recipe " + path.string() + ": " + e.what());
    }
    if (r.seeds.empty()) throw UsageError("recipe " + path.string() + ": seeds list is empty");

    // Paths are relative to the recipe file, as recipes live next to their data.
    const auto base = path.parent_path();
    auto rebase = [&](std::filesystem::path& p) {
        if (!p.empty() && p.is_relative()) p = base / p;
    };
    rebase(r.train_manifest);
    rebase(r.val_manifest);
    rebase(r.test_manifest);
    rebase(r.output_dir);

    r.recipe_hash = fnv1a64(bytes.data(), bytes.size());
    arch_by_name(r.arch);  // fail early on a bad profile name
    return r;
}

std::filesystem::path seed_dir(const std::filesystem::path& output_dir, std::uint64_t seed) {
    return output_dir / ("seed" + std::to_string(seed));
}

void save_run_record(const RunRecord& record, const std::filesystem::path& run_dir) {
    json j;
    j["name"] = record.name;
    j["method"] = method_name(record.method);
    j["seed"] = record.seed;
    j["arch"] = record.arch;
    j["recipe_hash"] = hex64(record.recipe_hash);
    j["train_manifest"] = record.train_manifest;
    j["train_hash"] = record.train_hash;
    j["val_manifest"] = record.val_manifest;
    j["test_manifest"] = record.test_manifest;
    j["test_hash"] = record.test_hash;
    j["alpha"] = record.alpha;
    j["beta"] = record.beta;
    j["stage1"] = stage_to_json(record.stage1);
    j["stage2"] = stage_to_json(record.stage2);

    const auto path = run_dir / "run.json";
    std::ofstream file(path);
    if (!file) throw DataError("cannot write run record: " + path.string());
    file << j.dump(2) << "\n";
    if (!file) throw DataError("run record write failed: " + path.string());
}

RunRecord load_run_record(const std::filesystem::path& run_dir) {
    const auto path = run_dir / "run.json";
    std::ifstream file(path);
    if (!file) throw DataError("cannot open run record: " + path.string());
    json j;
    try {
        j = json::parse(file);
    } catch (const json::parse_error& e) {
        throw ParseError("run record " + path.string() + ": " + e.what(), static_cast<long long>(e.byte));
    }
    RunRecord r;
    try {
        r.name = j.at("name").get<std::string>();
        r.method = parse_method(j.at("method").get<std::string>());
        r.seed = j.at("seed").get<std::uint64_t>();
        r.arch = j.at("arch").get<std::string>();
        r.recipe_hash = parse_hex64(j.at("recipe_hash").get<std::string>());
        r.train_manifest = j.at("train_manifest").get<std::string>();
        r.train_hash = j.at("train_hash").get<std::string>();
        r.val_manifest = j.at("val_manifest").get<std::string>();
        r.test_manifest = j.at("test_manifest").get<std::string>();
        r.test_hash = j.at("test_hash").get<std::string>();
        r.alpha = j.at("alpha").get<double>();
        r.beta = j.at("beta").get<double>();
        r.stage1 = stage_from_json(j.at("stage1"));
        r.stage2 = stage_from_json(j.at("stage2"));
    } catch (const json::exception& e) {
        throw DataError("run record " + path.string() + ": " + e.what());
    }
    return r;
}

RunRecord run_experiment_seed(const ExperimentRecipe& recipe, const Dataset<float>& train,
                              const Dataset<float>* val, std::uint64_t seed) {
    const ArchConfig arch = arch_by_name(recipe.arch);
    const auto run_dir = seed_dir(recipe.output_dir, seed);
    std::filesystem::create_directories(run_dir);

    RunRecord record;
    record.name = recipe.name;
    record.method = recipe.method;
    record.seed = seed;
    record.arch = recipe.arch;
    record.recipe_hash = recipe.recipe_hash;
    record.train_manifest = recipe.train_manifest.string();
    record.train_hash = train.content_hash();
    record.val_manifest = recipe.val_manifest.string();
    record.test_manifest = recipe.test_manifest.string();
    if (!recipe.test_manifest.empty())
        record.test_hash = load_manifest(recipe.test_manifest).content_hash;
    if (recipe.method == Method::meta_init || recipe.method == Method::fomaml) {
        record.alpha = recipe.meta.alpha;
        record.beta = recipe.meta.beta;
    } else {
        record.alpha = recipe.stage2.lr;
    }

    ParamVector<float> theta_init = init_params<float>(arch, seed);
    save_checkpoint(theta_init, run_dir / "theta_init.ckpt");

    ParamVector<float> stage2_start = theta_init;
    try {
        switch (recipe.method) {
            case Method::meta_init: {
                MetaConfig cfg = recipe.meta;
                cfg.seed = seed;
                TrainResult<float> res = meta_learn(train, cfg, theta_init, arch);
                save_checkpoint(res.params, run_dir / "theta_prior.ckpt");
                write_log_csv(res.log, run_dir / "stage1_log.csv");
                record.stage1 = {true, false, -1, last_loss(res.log), total_seconds(res.log),
                                 "theta_prior.ckpt", "stage1_log.csv"};
                stage2_start = std::move(res.params);
                break;
            }
            case Method::fomaml: {
                MetaConfig cfg = recipe.meta;
                cfg.seed = seed;
                FomamlResult<float> res = fomaml_meta_learn(train, cfg, theta_init, arch);
                save_checkpoint(res.params, run_dir / "theta_prior.ckpt");
                write_log_csv(res.log, run_dir / "stage1_log.csv");
                record.stage1 = {true, res.diverged, res.diverged_at, last_loss(res.log),
                                 total_seconds(res.log), "theta_prior.ckpt", "stage1_log.csv"};
                stage2_start = std::move(res.params);
                break;
            }
            case Method::wd_pre:
            case Method::grad_accum: {
                SupervisedConfig cfg = recipe.pretrain;
                cfg.seed = seed;
                TrainResult<float> res =
                    recipe.method == Method::wd_pre
                        ? baseline_wd_pretrain(train, static_cast<const Dataset<float>*>(nullptr),
                                               theta_init, cfg, arch)
                        : baseline_grad_accum(train, static_cast<const Dataset<float>*>(nullptr),
                                              theta_init, cfg, arch);
                save_checkpoint(res.params, run_dir / "theta_prior.ckpt");
                write_log_csv(res.log, run_dir / "stage1_log.csv");
                record.stage1 = {true, false, -1, last_loss(res.log), total_seconds(res.log),
                                 "theta_prior.ckpt", "stage1_log.csv"};
                stage2_start = std::move(res.params);
                break;
            }
            case Method::dsl: break;  // no first stage
        }
    } catch (const DivergenceError& e) {
        record.stage1.ran = true;
        record.stage1.diverged = true;
        record.stage1.diverged_at = e.iteration;
        save_run_record(record, run_dir);
        throw;
    }

    if (recipe.stage2_enabled) {
        SupervisedConfig cfg = recipe.stage2;
        cfg.seed = seed ^ kStage2SeedSalt;
        try {
            TrainResult<float> res = supervised_train(train, val, stage2_start, cfg, arch);
            save_checkpoint(res.params, run_dir / "theta_star.ckpt");
            write_log_csv(res.log, run_dir / "stage2_log.csv");
            record.stage2 = {true, false, -1, last_loss(res.log), total_seconds(res.log),
                             "theta_star.ckpt", "stage2_log.csv"};
        } catch (const DivergenceError& e) {
            record.stage2.ran = true;
            record.stage2.diverged = true;
            record.stage2.diverged_at = e.iteration;
            save_run_record(record, run_dir);
            throw;
        }
    }

    save_run_record(record, run_dir);
    return record;
}

std::vector<RunRecord> run_experiment(const ExperimentRecipe& recipe, int max_threads) {
    const Dataset<float> train = Dataset<float>::load(load_manifest(recipe.train_manifest));
    Dataset<float> val;
    const bool has_val = !recipe.val_manifest.empty();
    if (has_val) val = Dataset<float>::load(load_manifest(recipe.val_manifest));

    const std::size_t n = recipe.seeds.size();
    std::vector<RunRecord> records(n);
    std::vector<std::exception_ptr> failures(n);

    auto run_one = [&](std::size_t i) {
        try {
            records[i] = run_experiment_seed(recipe, train, has_val ? &val : nullptr, recipe.seeds[i]);
        } catch (...) {
            failures[i] = std::current_exception();
        }
    };

    const int threads = std::clamp(max_threads, 1, static_cast<int>(n));
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) run_one(i);
    } else {
        std::atomic<std::size_t> next{0};
        auto worker = [&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                run_one(i);
            }
        };
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(threads));
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    for (const auto& f : failures)
        if (f) std::rethrow_exception(f);
    return records;
}

int env_thread_cap() {
    const char* env = std::getenv("METADEPTH_THREADS");
    if (env == nullptr) return 1;
    const int v = std::atoi(env);
    return v >= 1 ? v : 1;
}

std::vector<double> load_loss_column(const std::filesystem::path& csv) {
    std::ifstream file(csv);
    if (!file) throw DataError("cannot open log: " + csv.string());
    std::string line;
    if (!std::getline(file, line)) throw DataError("empty log: " + csv.string());
    std::vector<double> losses;
    while (std::getline(file, line)) {
        if (line.empty()) continue;
        std::size_t a = line.find(',');
        std::size_t b = a == std::string::npos ? a : line.find(',', a + 1);
        std::size_t c = b == std::string::npos ? b : line.find(',', b + 1);
        if (b == std::string::npos)
            throw ParseError("log " + csv.string() + ": bad row '" + line + "'", 0);
        const std::string field =
            c == std::string::npos ? line.substr(b + 1) : line.substr(b + 1, c - b - 1);
        losses.push_back(std::strtod(field.c_str(), nullptr));
    }
    return losses;
}

double smoothed_tail(const std::vector<double>& losses, int window) {
    double sum = 0.0;
    int count = 0;
    for (auto it = losses.rbegin(); it != losses.rend() && count < window; ++it) {
        if (!std::isfinite(*it)) continue;
        sum += *it;
        ++count;
    }
    return count == 0 ? std::numeric_limits<double>::quiet_NaN() : sum / count;
}

void write_loss_curves_svg(std::ostream& out, const std::vector<LossCurve>& curves, int smooth_window) {
    static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                    "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};
    const int width = 960, height = 520;
    const int ml = 70, mr = 230, mt = 20, mb = 45;
    const double plot_w = width - ml - mr, plot_h = height - mt - mb;

    // moving-average smoothing over finite entries
    std::vector<std::vector<double>> smoothed;
    std::size_t max_len = 1;
    double ymin = std::numeric_limits<double>::infinity(), ymax = 0.0;
    for (const auto& c : curves) {
        std::vector<double> s(c.values.size(), std::numeric_limits<double>::quiet_NaN());
        for (std::size_t i = 0; i < c.values.size(); ++i) {
            double sum = 0.0;
            int count = 0;
            const std::size_t lo = i + 1 >= static_cast<std::size_t>(smooth_window)
                                       ? i + 1 - static_cast<std::size_t>(smooth_window)
                                       : 0;
            for (std::size_t k = lo; k <= i; ++k) {
                if (!std::isfinite(c.values[k])) continue;
                sum += c.values[k];
                ++count;
            }
            if (count > 0) s[i] = sum / count;
        }
        for (double v : s)
            if (std::isfinite(v) && v > 0.0) {
                ymin = std::min(ymin, v);
                ymax = std::max(ymax, v);
            }
        max_len = std::max(max_len, s.size());
        smoothed.push_back(std::move(s));
    }
    if (!(ymax > 0.0)) {  // nothing plottable; keep the file well-formed
        ymin = 1e-3;
        ymax = 1.0;
    }
    ymin = std::max(ymin / 1.5, 1e-9);
    ymax *= 1.5;
    const double ly0 = std::log10(ymin), ly1 = std::log10(ymax);

    auto x_of = [&](std::size_t i) {
        return ml + (max_len > 1 ? plot_w * static_cast<double>(i) / static_cast<double>(max_len - 1)
                                 : plot_w / 2);
    };
    auto y_of = [&](double v) {
        const double t = (std::log10(std::max(v, 1e-12)) - ly0) / (ly1 - ly0);
        return mt + plot_h * (1.0 - t);
    };

    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
        << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << plot_w << "\" height=\"" << plot_h
        << "\" fill=\"none\" stroke=\"#333\"/>\n";

    // decade gridlines + labels
    for (int d = static_cast<int>(std::ceil(ly0)); d <= static_cast<int>(std::floor(ly1)); ++d) {
        const double y = y_of(std::pow(10.0, d));
        out << "<line x1=\"" << ml << "\" y1=\"" << y << "\" x2=\"" << ml + plot_w << "\" y2=\"" << y
            << "\" stroke=\"#ddd\"/>\n"
            << "<text x=\"" << ml - 8 << "\" y=\"" << y + 4
            << "\" text-anchor=\"end\" font-size=\"12\" font-family=\"sans-serif\">1e" << d
            << "</text>\n";
    }
    for (int t = 0; t <= 4; ++t) {
        const std::size_t i = (max_len - 1) * static_cast<std::size_t>(t) / 4;
        const double x = x_of(i);
        out << "<line x1=\"" << x << "\" y1=\"" << mt + plot_h << "\" x2=\"" << x << "\" y2=\""
            << mt + plot_h + 5 << "\" stroke=\"#333\"/>\n"
            << "<text x=\"" << x << "\" y=\"" << mt + plot_h + 20
            << "\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\">" << i
            << "</text>\n";
    }
    out << "<text x=\"" << ml + plot_w / 2 << "\" y=\"" << height - 8
        << "\" text-anchor=\"middle\" font-size=\"13\" font-family=\"sans-serif\">iteration</text>\n"
        << "<text x=\"16\" y=\"" << mt + plot_h / 2
        << "\" font-size=\"13\" font-family=\"sans-serif\" transform=\"rotate(-90 16 "
        << mt + plot_h / 2 << ")\" text-anchor=\"middle\">smoothed loss</text>\n";

    for (std::size_t c = 0; c < smoothed.size(); ++c) {
        const char* color = palette[c % 8];
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        bool first = true;
        for (std::size_t i = 0; i < smoothed[c].size(); ++i) {
            if (!std::isfinite(smoothed[c][i]) || smoothed[c][i] <= 0.0) continue;
            if (!first) out << ' ';
            out << x_of(i) << ',' << y_of(smoothed[c][i]);
            first = false;
        }
        out << "\"/>\n";
        const double ly = mt + 16 + 18 * static_cast<double>(c);
        out << "<line x1=\"" << ml + plot_w + 12 << "\" y1=\"" << ly << "\" x2=\"" << ml + plot_w + 34
            << "\" y2=\"" << ly << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n"
            << "<text x=\"" << ml + plot_w + 40 << "\" y=\"" << ly + 4
            << "\" font-size=\"12\" font-family=\"sans-serif\">" << curves[c].label << "</text>\n";
    }
    out << "</svg>\n";
}

}  // namespace metadepth
