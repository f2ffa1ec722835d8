#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "metadepth/arch.hpp"
#include "metadepth/cli.hpp"
#include "metadepth/params.hpp"
#include "metadepth/scene.hpp"

using namespace metadepth;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        static int c = 0;
        path = fs::temp_directory_path() /
               ("mdcli-" + std::to_string(::getpid()) + "-" + std::to_string(c++));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

struct CliResult {
    int code;
    std::string out;
};

// In-process invocation with captured stdout, exactly as main() would call it.
CliResult run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "metadepth");
    std::vector<char*> argv;
    argv.reserve(args.size());
    for (auto& a : args) argv.push_back(a.data());

    std::ostringstream captured;
    std::streambuf* old = std::cout.rdbuf(captured.rdbuf());
    const int code = cli_main(static_cast<int>(argv.size()), argv.data());
    std::cout.rdbuf(old);
    return {code, captured.str()};
}

// Everything CLI-driven shares one generated corpus and one ready checkpoint.
struct SharedData {
    TempDir dir;
    fs::path train_manifest, test_manifest, checkpoint;
    SharedData() {
        train_manifest =
            generate_dataset(Variety::low, 2, 3, 91, dir.path / "train", 64, 64).root /
            "manifest.json";
        test_manifest =
            generate_dataset(Variety::high, 1, 2, 92, dir.path / "test", 64, 64).root /
            "manifest.json";
        checkpoint = dir.path / "init.ckpt";
        save_checkpoint(init_params<float>(ArchConfig::desk(), 7), checkpoint);
    }
};

const SharedData& shared() {
    static SharedData d;
    return d;
}

void write_file(const fs::path& p, const std::string& body) {
    std::ofstream f(p, std::ios::binary);
    f << body;
}

std::string tiny_recipe(const std::string& method, const fs::path& out_dir) {
    return std::string("{\n")
        + "  \"name\": \"" + method + "\",\n"
        + "  \"method\": \"" + method + "\",\n"
        + "  \"train_manifest\": \"" + shared().train_manifest.string() + "\",\n"
        + "  \"test_manifest\": \"" + shared().test_manifest.string() + "\",\n"
        + "  \"seeds\": [11],\n"
        + "  \"output_dir\": \"" + out_dir.string() + "\",\n"
        + "  \"meta\": {\"epochs\": 1, \"iters_per_epoch\": 1, \"inner_steps\": 1, \"task_size\": 2,\n"
        + "            \"alpha\": 1e-4, \"beta\": 0.5},\n"
        + "  \"pretrain\": {\"lr\": 1e-4, \"batch_size\": 2, \"max_epochs\": 1, \"patience\": 0},\n"
        + "  \"stage2\": {\"lr\": 1e-4, \"batch_size\": 2, \"max_epochs\": 1, \"patience\": 0}\n"
        + "}\n";
}

}  // namespace

TEST_CASE("help and usage mistakes map to the documented exit codes") {
    CHECK(run_cli({"--help"}).code == 0);
    CHECK(run_cli({"gen-data", "--help"}).code == 0);
    CHECK(run_cli({}).code == 2);                     // a subcommand is required
    CHECK(run_cli({"mystery"}).code == 2);            // unknown subcommand
    CHECK(run_cli({"gen-data"}).code == 2);           // missing required options
    CHECK(run_cli({"train"}).code == 2);              // missing recipe argument
    CHECK(run_cli({"train", "--turbo", "x"}).code == 2);
}

TEST_CASE("gen-data writes a loadable dataset and reports it") {
    TempDir out;
    const CliResult r = run_cli({"gen-data", "--variety", "low", "--scenes", "1", "--views", "2",
                                 "--seed", "5", "--out", (out.path / "ds").string()});
    CHECK(r.code == 0);
    CHECK(r.out.find("manifest") != std::string::npos);

    const DatasetManifest m = load_manifest(out.path / "ds" / "manifest.json");
    CHECK(m.samples.size() == 2);
    CHECK(!m.content_hash.empty());
}

TEST_CASE("gen-data validates its numeric arguments") {
    TempDir out;
    const std::string o = (out.path / "x").string();
    CHECK(run_cli({"gen-data", "--variety", "low", "--scenes", "0", "--views", "2",
                   "--out", o}).code == 2);
    CHECK(run_cli({"gen-data", "--variety", "medium", "--scenes", "1", "--views", "1",
                   "--out", o}).code == 2);
    CHECK(run_cli({"gen-data", "--variety", "low", "--scenes", "1", "--views", "1",
                   "--height", "4", "--out", o}).code == 2);
}

TEST_CASE("train runs a recipe end to end and reports per-seed summaries") {
    TempDir out;
    write_file(out.path / "recipe.json", tiny_recipe("dsl", out.path / "runs"));
    const CliResult r = run_cli({"train", (out.path / "recipe.json").string()});
    CHECK(r.code == 0);
    CHECK(r.out.find("seed 11") != std::string::npos);
    CHECK(fs::exists(out.path / "runs/seed11/run.json"));
    CHECK(fs::exists(out.path / "runs/seed11/theta_star.ckpt"));
}

TEST_CASE("train maps missing inputs to the i/o exit code") {
    TempDir out;
    CHECK(run_cli({"train", (out.path / "absent.json").string()}).code == 3);

    // recipe parses but points at a dataset that is not there
    write_file(out.path / "dangling.json",
               std::string("{\"name\": \"x\", \"method\": \"dsl\","
                           "\"train_manifest\": \"no/manifest.json\","
                           "\"seeds\": [1], \"output_dir\": \"runs\"}\n"));
    CHECK(run_cli({"train", (out.path / "dangling.json").string()}).code == 3);

    // structurally bad json is also an i/o failure, not a crash
    write_file(out.path / "broken.json", "{\"name\": ");
    CHECK(run_cli({"train", (out.path / "broken.json").string()}).code == 3);

    // a recipe that violates the schema is a usage error
    write_file(out.path / "typo.json", tiny_recipe("dsl", out.path / "r2"));
    std::string body = tiny_recipe("dsl", out.path / "r2");
    body.replace(body.find("\"seeds\""), 7, "\"seedz\"");
    write_file(out.path / "typo.json", body);
    CHECK(run_cli({"train", (out.path / "typo.json").string()}).code == 2);
}

TEST_CASE("evaluate writes per-image and aggregate reports") {
    TempDir out;
    const CliResult r = run_cli({"evaluate", "--checkpoint", shared().checkpoint.string(),
                                 "--manifest", shared().test_manifest.string(),
                                 "--out", (out.path / "eval").string()});
    CHECK(r.code == 0);
    CHECK(r.out.find("rmse") != std::string::npos);

    // per-image csv: header + one row per image
    std::ifstream csv(out.path / "eval/per_image.csv");
    REQUIRE(csv.good());
    std::string line;
    std::getline(csv, line);
    CHECK(line ==
          "image_id,mae,absrel,rmse,silog,delta1,delta2,delta3,valid_pixels,scale_ratio");
    std::size_t rows = 0;
    while (std::getline(csv, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 2);

    // aggregate json round-trips through a standard parser
    std::ifstream jf(out.path / "eval/metrics.json");
    REQUIRE(jf.good());
    const nlohmann::json j = nlohmann::json::parse(jf);
    CHECK(j.at("images").get<int>() == 2);
    CHECK(j.at("skipped").get<int>() == 0);
    CHECK(j.at("protocol").get<std::string>() == "intra");
    CHECK(j.at("aggregate").at("rmse").get<double>() > 0.0);
    CHECK(j.at("aggregate").at("delta1").get<double>() >= 0.0);
    CHECK(!j.at("manifest_hash").get<std::string>().empty());
}

TEST_CASE("evaluate surfaces argument and file problems distinctly") {
    TempDir out;
    const std::string o = (out.path / "e").string();
    // unknown protocol name: caller mistake
    CHECK(run_cli({"evaluate", "--checkpoint", shared().checkpoint.string(), "--manifest",
                   shared().test_manifest.string(), "--protocol", "sideways",
                   "--out", o}).code == 2);
    // inverted depth range: caller mistake
    CHECK(run_cli({"evaluate", "--checkpoint", shared().checkpoint.string(), "--manifest",
                   shared().test_manifest.string(), "--cap", "0.5", "--min-depth", "2",
                   "--out", o}).code == 2);
    // absent checkpoint: i/o
    CHECK(run_cli({"evaluate", "--checkpoint", (out.path / "none.ckpt").string(), "--manifest",
                   shared().test_manifest.string(), "--out", o}).code == 3);
    // absent manifest: i/o
    CHECK(run_cli({"evaluate", "--checkpoint", shared().checkpoint.string(), "--manifest",
                   (out.path / "none.json").string(), "--out", o}).code == 3);
}

TEST_CASE("compare scores completed runs against one shared test set") {
    TempDir out;
    write_file(out.path / "dsl.json", tiny_recipe("dsl", out.path / "dsl"));
    write_file(out.path / "meta.json", tiny_recipe("meta_init", out.path / "meta"));
    REQUIRE(run_cli({"train", (out.path / "dsl.json").string()}).code == 0);
    REQUIRE(run_cli({"train", (out.path / "meta.json").string()}).code == 0);

    const CliResult r = run_cli({"compare", "--run", (out.path / "dsl").string(), "--run",
                                 (out.path / "meta").string(), "--out",
                                 (out.path / "cmp").string()});
    CHECK(r.code == 0);
    CHECK(r.out.find("dsl") != std::string::npos);
    CHECK(r.out.find("meta_init") != std::string::npos);

    for (const char* name :
         {"compare.csv", "compare.md", "grid.csv", "loss_curves.csv", "loss_curves.svg"})
        CHECK(fs::exists(out.path / "cmp" / name));

    // one csv row per (group, seed)
    std::ifstream csv(out.path / "cmp/compare.csv");
    std::string line;
    std::getline(csv, line);
    CHECK(line == "group,seed,diverged,mae,absrel,rmse,silog,delta1,delta2,delta3,scale_ratio");
    std::size_t rows = 0;
    while (std::getline(csv, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 2);

    // grid rows echo the stage-1 rates of the meta run
    std::ifstream grid(out.path / "cmp/grid.csv");
    std::getline(grid, line);
    CHECK(line == "group,method,seed,alpha,beta,final_smoothed_loss,diverged");
    bool meta_row = false;
    while (std::getline(grid, line))
        if (line.find("meta_init,meta_init,11,0.0001,0.5,") == 0) meta_row = true;
    CHECK(meta_row);

    SUBCASE("a single run directory is rejected") {
        CHECK(run_cli({"compare", "--run", (out.path / "dsl").string(), "--out",
                       (out.path / "cmp2").string()}).code == 2);
    }
    SUBCASE("an explicit test manifest overrides the recorded one") {
        CHECK(run_cli({"compare", "--run", (out.path / "dsl").string(), "--run",
                       (out.path / "meta").string(), "--test", shared().test_manifest.string(),
                       "--out", (out.path / "cmp3").string()}).code == 0);
    }
    SUBCASE("runs without any seed directories are an i/o problem") {
        fs::create_directories(out.path / "hollow");
        CHECK(run_cli({"compare", "--run", (out.path / "hollow").string(), "--run",
                       (out.path / "meta").string(), "--out",
                       (out.path / "cmp4").string()}).code == 3);
    }
}

TEST_CASE("compare refuses runs recorded against different test sets") {
    TempDir out;
    // second corpus with a different content hash
    const fs::path other =
        generate_dataset(Variety::high, 1, 2, 93, out.path / "other_test", 64, 64).root /
        "manifest.json";

    std::string a = tiny_recipe("dsl", out.path / "a");
    write_file(out.path / "a.json", a);
    std::string b = tiny_recipe("dsl", out.path / "b");
    b.replace(b.find(shared().test_manifest.string()), shared().test_manifest.string().size(),
              other.string());
    write_file(out.path / "b.json", b);

    REQUIRE(run_cli({"train", (out.path / "a.json").string()}).code == 0);
    REQUIRE(run_cli({"train", (out.path / "b.json").string()}).code == 0);

    CHECK(run_cli({"compare", "--run", (out.path / "a").string(), "--run",
                   (out.path / "b").string(), "--out", (out.path / "cmp").string()}).code == 2);
    // the override unblocks the comparison deliberately
    CHECK(run_cli({"compare", "--run", (out.path / "a").string(), "--run",
                   (out.path / "b").string(), "--test", shared().test_manifest.string(),
                   "--out", (out.path / "cmp").string()}).code == 0);
}

TEST_CASE("export-pointcloud emits ascii ply for ground truth and predictions") {
    TempDir out;
    const fs::path gt_ply = out.path / "gt.ply";
    const CliResult gt = run_cli({"export-pointcloud", "--manifest",
                                  shared().test_manifest.string(), "--index", "1", "--out",
                                  gt_ply.string()});
    CHECK(gt.code == 0);
    CHECK(gt.out.find("vertices") != std::string::npos);

    std::ifstream f(gt_ply);
    REQUIRE(f.good());
    std::string line;
    std::getline(f, line);
    CHECK(line == "ply");
    std::getline(f, line);
    CHECK(line == "format ascii 1.0");

    const CliResult pred = run_cli({"export-pointcloud", "--checkpoint",
                                    shared().checkpoint.string(), "--manifest",
                                    shared().test_manifest.string(), "--out",
                                    (out.path / "pred.ply").string()});
    CHECK(pred.code == 0);
    CHECK(fs::exists(out.path / "pred.ply"));

    SUBCASE("out-of-range index is a usage error") {
        CHECK(run_cli({"export-pointcloud", "--manifest", shared().test_manifest.string(),
                       "--index", "99", "--out", (out.path / "x.ply").string()}).code == 2);
    }
}
