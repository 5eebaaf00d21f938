#include "doctest.h"

#include "sketchclip/dataset.hpp"
#include "sketchclip/trainer.hpp"
#include "test_support.hpp"

#include "json.hpp"

#include <fstream>
#include <sstream>
#include <sys/wait.h>

namespace fs = std::filesystem;
using namespace sketchclip;

namespace {

struct Run {
    int code = -1;
    std::string out;
};

Run cli(const std::string& args, const fs::path& scratch) {
    const fs::path log = scratch / "last_output.txt";
    const std::string cmd = std::string(SKETCHCLIP_CLI) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// One shared synthetic dataset: three seen categories plus one unseen.
struct Fixture {
    fs::path dir;
    fs::path data;
    Fixture() {
        dir = oracle::temp_dir("cli");
        data = dir / "data";
        Run r = cli("synth-data -o " + (dir / "raw").string() +
                        " --categories circle,square,triangle --unseen star --per-source 6 --seed 2 --side 32",
                    dir);
        REQUIRE_MESSAGE(r.code == 0, r.out);
        r = cli("prepare-data -c " + (dir / "raw" / "prepare_config.json").string() + " -o " + data.string() +
                    " --shots 3",
                dir);
        REQUIRE_MESSAGE(r.code == 0, r.out);
    }
    std::string data_args() const {
        return " --manifest " + (data / "manifest.json").string() + " --split " + (data / "split.json").string();
    }
};

const Fixture& fixture() {
    static const Fixture f;
    return f;
}

const std::string kTrainFlags =
    " --epochs 2 --batch-size 9 --learning-rate 0.01 --decoder-hidden 8 --context-tokens 2";

}  // namespace

TEST_CASE("print-config shows the documented defaults") {
    const auto dir = oracle::temp_dir("cli_config");
    const Run r = cli("train --print-config", dir);
    REQUIRE(r.code == 0);
    const auto j = nlohmann::json::parse(r.out);
    CHECK(j.at("prompt_depth") == 9);
    CHECK(j.at("context_tokens") == 5);
    CHECK(j.at("learning_rate") == 1e-4);
    CHECK(j.at("batch_size") == 64);
    CHECK(j.at("epochs") == 7);
    CHECK(j.at("alpha") == 1.0);
    CHECK(j.at("meta_net") == true);

    const Run o = cli("train --print-config --prompt-depth 1 --no-mixup --beta2 0.5", dir);
    const auto k = nlohmann::json::parse(o.out);
    CHECK(k.at("prompt_depth") == 1);
    CHECK(k.at("mixup") == false);
    CHECK(k.at("beta2") == 0.5);

    // Flags override the config file.
    {
        std::ofstream c(dir / "run.json");
        c << R"({"epochs": 3, "context_tokens": 4})";
    }
    const auto m = nlohmann::json::parse(cli("train --print-config -c " + (dir / "run.json").string() +
                                                 " --context-tokens 2",
                                             dir)
                                             .out);
    CHECK(m.at("epochs") == 3);
    CHECK(m.at("context_tokens") == 2);
}

TEST_CASE("exit codes for usage and input errors") {
    const auto dir = oracle::temp_dir("cli_errors");
    CHECK(cli("--help", dir).code == 0);
    CHECK(cli("train --help", dir).code == 0);
    CHECK(cli("train --no-such-flag", dir).code != 0);
    CHECK(cli("", dir).code != 0);
    const Run missing = cli("train --manifest /nonexistent/manifest.json --split /nonexistent/split.json", dir);
    CHECK(missing.code == 2);
    CHECK(missing.out.find("/nonexistent/") != std::string::npos);
    CHECK(cli("eval --checkpoint /nonexistent.safetensors --split a --manifest b", dir).code == 2);
    CHECK(cli("predict --checkpoint /nonexistent.safetensors --input x.png", dir).code == 2);
    {
        std::ofstream c(dir / "bad.json");
        c << R"({"epoch": 3})";
    }
    const Run bad = cli("train --print-config -c " + (dir / "bad.json").string(), dir);
    CHECK(bad.code == 2);
    CHECK(bad.out.find("epoch") != std::string::npos);
    CHECK(cli("train --print-config --learning-rate -1", dir).code == 2);
}

TEST_CASE("prepare-data writes a byte-identical split on rerun") {
    const Fixture& f = fixture();
    const auto again = f.dir / "data_again";
    const Run r = cli("prepare-data -c " + (f.dir / "raw" / "prepare_config.json").string() + " -o " +
                          again.string() + " --shots 3",
                      f.dir);
    REQUIRE(r.code == 0);
    CHECK(slurp(again / "split.json") == slurp(f.data / "split.json"));
    CHECK(slurp(again / "manifest.json") == slurp(f.data / "manifest.json"));
    const DatasetSplit split = read_split(f.data / "split.json");
    CHECK(split.seen_categories == std::vector<std::string>{"circle", "square", "triangle"});
    CHECK(split.unseen_categories == std::vector<std::string>{"star"});
    CHECK(split.train_samples.size() == 27);
    CHECK(r.out.find("source QD") != std::string::npos);
}

TEST_CASE("train, eval and predict through the command line") {
    const Fixture& f = fixture();
    const fs::path run = f.dir / "run";
    const Run t = cli("train" + f.data_args() + " -o " + run.string() + kTrainFlags + " --prompt-depth 1", f.dir);
    REQUIRE_MESSAGE(t.code == 0, t.out);
    CHECK(t.out.find("final_loss ") != std::string::npos);
    CHECK(t.out.find("J=1") != std::string::npos);
    const LoadedCheckpoint ck = load_checkpoint(run / "checkpoint.safetensors");
    CHECK(ck.model.config.prompt_depth == 1);
    CHECK(ck.model.config.context_tokens == 2);
    CHECK(ck.model.prompts.vision.size() == 1);
    CHECK(ck.model.prompts.vision[0].value.rows() == 2);
    CHECK(ck.epoch == 2);
    CHECK(nlohmann::json::parse(slurp(run / "config.json")).at("prompt_depth") == 1);
    CHECK(fs::exists(run / "train_log.jsonl"));

    const std::string ckpt = " --checkpoint " + (run / "checkpoint.safetensors").string();
    const fs::path seen = f.dir / "eval_seen";
    const Run e = cli("eval" + ckpt + " --manifest " + (f.data / "manifest.json").string() + " --split " +
                          (f.data / "split.json").string() + " --which seen -o " + seen.string(),
                      f.dir);
    REQUIRE_MESSAGE(e.code == 0, e.out);
    CHECK(e.out.find("top1_seen ") != std::string::npos);
    const auto report = nlohmann::json::parse(slurp(seen / "report.json"));
    const DatasetSplit split = read_split(f.data / "split.json");
    CHECK(report.at("samples") == split.eval_seen_samples.size());
    std::size_t hist = 0;
    for (const auto& n : report.at("membership_histogram")) hist += n.get<std::size_t>();
    CHECK(hist == split.eval_seen_samples.size());
    for (const char* png : {"accuracy_vs_abstraction.png", "membership_histogram.png"}) {
        CHECK(fs::exists(seen / png));
        CHECK(fs::file_size(seen / png) > 0);
    }

    const fs::path unseen = f.dir / "eval_unseen";
    const Run u = cli("eval" + ckpt + " --manifest " + (f.data / "manifest.json").string() + " --split " +
                          (f.data / "split.json").string() + " --which unseen -o " + unseen.string(),
                      f.dir);
    REQUIRE_MESSAGE(u.code == 0, u.out);
    const auto ur = nlohmann::json::parse(slurp(unseen / "report.json"));
    CHECK(ur.at("label_space") == std::vector<std::string>{"star"});
    CHECK(ur.at("top1") == 100.0);
    CHECK(cli("eval" + ckpt + " --manifest " + (f.data / "manifest.json").string() + " --split " +
                  (f.data / "split.json").string() + " --which unseen --joint-label-space -o " +
                  (f.dir / "eval_joint").string(),
              f.dir)
              .code == 0);
    CHECK(nlohmann::json::parse(slurp(f.dir / "eval_joint" / "report.json")).at("label_space").size() == 4);
    CHECK(cli("eval" + ckpt + " --manifest m --split s --which both", f.dir).code != 0);

    const Manifest manifest = read_manifest(f.data / "manifest.json");
    const fs::path image = f.data / manifest.entries.front().raster_path;
    const Run p1 = cli("predict" + ckpt + " --input " + image.string() + " --categories circle", f.dir);
    REQUIRE_MESSAGE(p1.code == 0, p1.out);
    CHECK(nlohmann::json::parse(p1.out).at("probabilities").at("circle") == 1.0);
    const Run a = cli("predict" + ckpt + " --input " + image.string(), f.dir);
    const Run b = cli("predict" + ckpt + " --input " + image.string(), f.dir);
    CHECK(a.out == b.out);
    const auto pj = nlohmann::json::parse(a.out);
    double total = 0.0;
    for (const auto& [k, v] : pj.at("probabilities").items()) total += v.get<double>();
    CHECK(std::abs(total - 1.0) < 1e-9);
    const auto& ab = pj.at("abstraction");
    CHECK(std::abs(ab.at("low").get<double>() + ab.at("medium").get<double>() + ab.at("high").get<double>() - 1.0) <
          1e-9);

    // Stroke input with a decoded sequence.
    const Run s = cli("predict" + ckpt + " --input " + std::string(SKETCHCLIP_FIXTURES) +
                          "/square_circle.ndjson --decode --decode-steps 4",
                      f.dir);
    REQUIRE_MESSAGE(s.code == 0, s.out);
    CHECK(nlohmann::json::parse(s.out).at("decoded_stroke5").size() == 4);
    CHECK(cli("predict" + ckpt + " --input " + std::string(SKETCHCLIP_FIXTURES) + "/empty.ndjson", f.dir).code == 2);
}

TEST_CASE("unseen evaluation without unseen categories is an input error") {
    const auto dir = oracle::temp_dir("cli_no_unseen");
    REQUIRE(cli("synth-data -o " + (dir / "raw").string() + " --categories circle,square --per-source 3 --side 16",
                dir)
                .code == 0);
    REQUIRE(cli("prepare-data -c " + (dir / "raw" / "prepare_config.json").string() + " -o " +
                    (dir / "data").string() + " --shots 2",
                dir)
                .code == 0);
    const std::string data =
        " --manifest " + (dir / "data" / "manifest.json").string() + " --split " + (dir / "data" / "split.json").string();
    REQUIRE(cli("train" + data + " -o " + (dir / "run").string() + " --epochs 1 --prompt-depth 1 --context-tokens 1",
                dir)
                .code == 0);
    const Run r = cli("eval --checkpoint " + (dir / "run" / "checkpoint.safetensors").string() + data +
                          " --which unseen -o " + (dir / "eval").string(),
                      dir);
    CHECK(r.code == 2);
    CHECK(r.out.find("unseen") != std::string::npos);
}

TEST_CASE("a training image is classified as its label after an overfit run") {
    const Fixture& f = fixture();
    const fs::path run = f.dir / "overfit";
    const Run t = cli("train" + f.data_args() + " -o " + run.string() +
                          " --epochs 60 --batch-size 9 --learning-rate 0.01 --decoder-hidden 8 --prompt-depth 2"
                          " --context-tokens 2",
                      f.dir);
    REQUIRE_MESSAGE(t.code == 0, t.out);
    const Manifest manifest = read_manifest(f.data / "manifest.json");
    const DatasetSplit split = read_split(f.data / "split.json");
    const std::string id = split.train_samples.front();
    const auto it = std::find_if(manifest.entries.begin(), manifest.entries.end(),
                                 [&](const ManifestEntry& e) { return e.info.id == id; });
    REQUIRE(it != manifest.entries.end());
    const Run p = cli("predict --checkpoint " + (run / "checkpoint.safetensors").string() + " --input " +
                          (f.data / it->raster_path).string(),
                      f.dir);
    REQUIRE_MESSAGE(p.code == 0, p.out);
    CHECK(nlohmann::json::parse(p.out).at("top_k").at(0).at("category") == it->info.category);
}
