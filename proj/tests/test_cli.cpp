#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "vqamoe/synthetic.hpp"
#include "vqamoe/vqa_metric.hpp"

namespace fs = std::filesystem;

namespace {

std::string cli() {
    const char* path = std::getenv("VQAMOE_CLI");
    REQUIRE_MESSAGE(path != nullptr, "VQAMOE_CLI must point at the CLI binary");
    return path;
}

int run(const std::string& args) {
    const std::string cmd = cli() + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

} // namespace

TEST_CASE("usage errors exit non-zero") {
    CHECK(run("") != 0);
    CHECK(run("no-such-subcommand") != 0);
    CHECK(run("train --data /nonexistent-dir --out /tmp/vqamoe_cli_nowhere") != 0);
}

TEST_CASE("gen is deterministic per seed, byte for byte") {
    TempDir a("vqamoe_cli_gen_a"), b("vqamoe_cli_gen_b"), c("vqamoe_cli_gen_c");
    REQUIRE(run("gen --seed 7 --out " + a.str()) == 0);
    REQUIRE(run("gen --seed 7 --out " + b.str()) == 0);
    REQUIRE(run("gen --seed 8 --out " + c.str()) == 0);
    for (const char* file :
         {"annotations.jsonl", "features.jsonl", "ocr.jsonl", "clock.jsonl", "meta.jsonl"}) {
        CHECK(slurp(a.path / file) == slurp(b.path / file));
    }
    CHECK(slurp(a.path / "annotations.jsonl") != slurp(c.path / "annotations.jsonl"));
}

TEST_CASE("gen honors disagreement and the competence mix") {
    TempDir dir("vqamoe_cli_gen_mix");
    REQUIRE(run("gen --seed 3 --out " + dir.str() + " --set count=200 --set disagreement=0") ==
            0);
    auto ds = vqamoe::synthetic::load_dataset(dir.str());
    REQUIRE(ds.annotations.size() == 200);
    for (const auto& ann : ds.annotations) {
        for (const auto& a : ann.answers) CHECK(a == ann.answers.front());
    }
    std::map<std::string, int> counts;
    for (const auto& comp : ds.competence) ++counts[comp];
    CHECK(std::abs(counts["vision"] - 120) <= 1);
    CHECK(std::abs(counts["ocr"] - 50) <= 1);
    CHECK(std::abs(counts["clock"] - 30) <= 1);
}

TEST_CASE("eval scores oracle predictions at exactly 1.0") {
    TempDir data("vqamoe_cli_eval_data"), out("vqamoe_cli_eval_out");
    REQUIRE(run("gen --seed 5 --out " + data.str() + " --set count=100") == 0);
    REQUIRE(run("eval --data " + data.str() + " --out " + out.str()) == 0);
    auto j = nlohmann::json::parse(slurp(out.path / "eval.json"));
    CHECK(j.at("overall").get<double>() == 1.0);
    CHECK(j.at("total_questions").get<int>() == 100);
    CHECK(j.at("missing_predictions").get<int>() == 0);
}

TEST_CASE("train writes a checkpoint and a staged loss curve") {
    TempDir data("vqamoe_cli_train_data"), out("vqamoe_cli_train_out");
    REQUIRE(run("gen --seed 9 --out " + data.str() + " --set count=64") == 0);
    REQUIRE(run("train --data " + data.str() + " --out " + out.str() +
                " --set pretrain_steps=20 --set finetune_steps=20 --set batch_size=4") == 0);
    CHECK(fs::exists(out.path / "model.json"));
    CHECK(fs::exists(out.path / "model.bin"));

    std::ifstream curve(out.path / "loss_curve.csv");
    std::string line;
    std::getline(curve, line);
    CHECK(line == "step,phase,mlm,mop,itm,qa,total");
    bool saw_stage1 = false, saw_stage2 = false, saw_finetune = false;
    while (std::getline(curve, line)) {
        std::vector<std::string> cols;
        std::istringstream is(line);
        std::string col;
        while (std::getline(is, col, ',')) cols.push_back(col);
        REQUIRE(cols.size() == 7);
        if (cols[1] == "pretrain1") {
            saw_stage1 = true;
            CHECK(std::stod(cols[5]) == 0.0); // QA column off in stage 1
        } else if (cols[1] == "pretrain2") {
            saw_stage2 = true;
        } else if (cols[1] == "finetune") {
            saw_finetune = true;
        }
    }
    CHECK(saw_stage1);
    CHECK(saw_stage2);
    CHECK(saw_finetune);

    auto report = nlohmann::json::parse(slurp(out.path / "train_report.json"));
    CHECK(report.contains("finetune_accuracy"));
}

TEST_CASE("mine and route succeed on generated data and write reports") {
    TempDir data("vqamoe_cli_mr_data"), mout("vqamoe_cli_mine_out"), rout("vqamoe_cli_route_out");
    REQUIRE(run("gen --seed 11 --out " + data.str() + " --set count=300") == 0);

    REQUIRE(run("mine --data " + data.str() + " --out " + mout.str()) == 0);
    auto mining = nlohmann::json::parse(slurp(mout.path / "mining.json"));
    CHECK(mining.at("clusters").size() == 3);
    CHECK(mining.at("consistency").at("accuracy").get<double>() >= 0.95);
    CHECK(fs::exists(mout.path / "k_sweep.csv"));

    REQUIRE(run("route --data " + data.str() + " --out " + rout.str()) == 0);
    auto routing = nlohmann::json::parse(slurp(rout.path / "routing.json"));
    const double routed = routing.at("routed_reward").get<double>();
    for (const auto& single : routing.at("single_expert_rewards")) {
        CHECK(routed > single.get<double>());
    }
}

TEST_CASE("grad-check and clock-check pass their in-run assertions") {
    TempDir out("vqamoe_cli_checks_out");
    REQUIRE(run("grad-check --out " + out.str()) == 0);
    auto j = nlohmann::json::parse(slurp(out.path / "grad_check.json"));
    CHECK(j.at("max_relative_error").get<double>() < 1e-4);
    REQUIRE(run("clock-check --out " + out.str()) == 0);
    auto c = nlohmann::json::parse(slurp(out.path / "clock_check.json"));
    CHECK(c.at("decode_accuracy").get<double>() >= 0.8);
}

TEST_CASE("config file keys apply and flags win") {
    TempDir dir("vqamoe_cli_cfg");
    const fs::path cfg = dir.path / "run.cfg";
    std::ofstream(cfg) << "count=40\nseed=21\n# comment\ndisagreement=0.0\n";
    REQUIRE(run("gen --config " + cfg.string() + " --out " + dir.str() + "/a") == 0);
    auto ds = vqamoe::synthetic::load_dataset(dir.str() + "/a");
    CHECK(ds.annotations.size() == 40);

    // --set overrides the file.
    REQUIRE(run("gen --config " + cfg.string() + " --set count=25 --out " + dir.str() + "/b") ==
            0);
    CHECK(vqamoe::synthetic::load_dataset(dir.str() + "/b").annotations.size() == 25);
}
