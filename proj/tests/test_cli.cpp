#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "support.hpp"
#include "tspnet/cli.hpp"

using namespace tspnet;
using nlohmann::json;
using testing::TempDir;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

void write(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path);
  f << text;
}

std::size_t count_lines(const std::string& text, const std::string& prefix) {
  std::istringstream in(text);
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) n += line.rfind(prefix, 0) == 0;
  return n;
}

// Writes a small corpus and trains a toy model on it; returns the run directory.
struct TrainedRun {
  TempDir dir{"cli-run"};
  Run train;

  TrainedRun() {
    const json cfg{{"seed", 3},
                   {"synth", {{"sentences", 6}, {"gesture_vocab_size", 5}, {"feature_dim", 6}}},
                   {"train",
                    {{"widths", {4, 6, 8}},
                     {"model_dim", 16},
                     {"inter_dim", 16},
                     {"intra_dim", 16},
                     {"decoder_layers", 1},
                     {"decoder_heads", 2},
                     {"decoder_ff_dim", 32},
                     {"epochs", 3},
                     {"batch_size", 3},
                     {"lr", 1e-3},
                     {"beam_width", 3},
                     {"max_decode_length", 8}}},
                   {"corpus", "data/manifest.jsonl"},
                   {"output_dir", "out"}};
    write(dir.path() / "run.json", cfg.dump(2));
    const Run s = cli({"synth", "--config", (dir.path() / "run.json").string(), "--out", (dir.path() / "data").string()});
    REQUIRE(s.code == 0);
    train = cli({"train", "--config", (dir.path() / "run.json").string()});
  }

  std::string ckpt() const { return (dir.path() / "out" / "final.ckpt").string(); }
  std::string manifest() const { return (dir.path() / "data" / "manifest.jsonl").string(); }
  std::string first_features() const {
    return (dir.path() / "data" / read_manifest(manifest()).front().features).string();
  }
};

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("help and unknown commands") {
    CHECK(cli({"--help"}).code == 0);
    CHECK(cli({"--help"}).out.find("translate") != std::string::npos);
    CHECK(cli({"frobnicate"}).code == 1);
    CHECK(cli({}).code == 1);
  }

  TEST_CASE("inspect lists the surrounding neighborhood") {
    TempDir dir("cli-inspect");
    Rng rng(1);
    write_feature_file(dir.path() / "v.tspf", testing::random_features(20, 4, rng));
    const auto path = (dir.path() / "v.tspf").string();
    const Run r = cli({"inspect", "--features", path, "--pivot", "6"});
    CHECK(r.code == 0);
    CHECK(r.out.find("neighborhood: 9 members") != std::string::npos);
    const Run j = cli({"inspect", "--features", path, "--pivot", "6", "--json"});
    REQUIRE(j.code == 0);
    const json parsed = json::parse(j.out);
    CHECK(parsed["neighborhood"].size() == 9);
    CHECK(parsed["layout"]["pivot_count"] == 7);
    CHECK(cli({"inspect", "--features", path, "--pivot", "7"}).code == 1);
    CHECK(cli({"inspect", "--features", path, "--pivot", "0", "--widths", "8,x"}).code == 1);
  }

  TEST_CASE("gradcheck passes and reports json") {
    const Run r = cli({"gradcheck", "--mode", "joint", "--seed", "2", "--json"});
    CHECK(r.code == 0);
    const json j = json::parse(r.out);
    CHECK(j["pass"] == true);
    CHECK(j["mode"] == "joint");
    CHECK(cli({"gradcheck", "--mode", "tree"}).code == 1);
  }

  TEST_CASE("bad configs exit 1 and name the field") {
    TempDir dir("cli-config");
    write(dir.path() / "bad.json", R"({"train": {"stirde": 2}})");
    const Run r = cli({"train", "--config", (dir.path() / "bad.json").string()});
    CHECK(r.code == 1);
    CHECK(r.err.find("train.stirde") != std::string::npos);
    write(dir.path() / "nocorpus.json", R"({"train": {"epochs": 1}})");
    const Run n = cli({"train", "--config", (dir.path() / "nocorpus.json").string()});
    CHECK(n.code == 1);
    CHECK(n.err.find("corpus") != std::string::npos);
    write(dir.path() / "broken.json", "{");
    CHECK(cli({"train", "--config", (dir.path() / "broken.json").string()}).code == 1);
  }

  TEST_CASE("missing files exit 1") {
    CHECK(cli({"translate", "--ckpt", "/nonexistent/a.ckpt", "--features", "/nonexistent/a.tspf"}).code == 1);
    CHECK(cli({"train", "--config", "/nonexistent/run.json"}).code == 1);
    CHECK(cli({"inspect", "--features", "/nonexistent/a.tspf", "--pivot", "0"}).code == 1);
  }

  TEST_CASE("train, translate, evaluate and inspect a checkpoint") {
    TrainedRun run;
    REQUIRE(run.train.code == 0);
    const auto out = run.dir.path() / "out";
    CHECK(std::filesystem::exists(out / "config.json"));
    CHECK(std::filesystem::exists(out / "final.ckpt"));
    CHECK(std::filesystem::exists(out / "epoch-0003.ckpt"));
    CHECK(count_lines(run.train.out, "epoch ") == 3);
    {
      std::ifstream log(out / "log.jsonl");
      std::size_t lines = 0;
      for (std::string line; std::getline(log, line); ++lines) CHECK(json::parse(line).contains("loss"));
      CHECK(lines == 3);
    }

    const Run a = cli({"translate", "--ckpt", run.ckpt(), "--features", run.first_features()});
    const Run b = cli({"translate", "--ckpt", run.ckpt(), "--features", run.first_features()});
    CHECK(a.code == 0);
    CHECK(a.out == b.out);
    const Run tj = cli({"translate", "--ckpt", run.ckpt(), "--features", run.first_features(), "--json", "--beam", "1"});
    REQUIRE(tj.code == 0);
    CHECK(json::parse(tj.out).contains("tokens"));

    const auto report = (run.dir.path() / "report.json").string();
    const Run e = cli({"evaluate", "--ckpt", run.ckpt(), "--manifest", run.manifest(), "--out", report, "--json"});
    REQUIRE(e.code == 0);
    CHECK(json::parse(e.out).contains("rouge_l"));
    std::ifstream rf(report);
    CHECK(json::parse(rf)["sentences"].size() == 6);

    const Run i = cli({"inspect", "--features", run.first_features(), "--pivot", "0", "--ckpt", run.ckpt(), "--json"});
    REQUIRE(i.code == 0);
    const json ij = json::parse(i.out);
    // Joint mode attends over the extended neighborhood of the pivot.
    const auto layout = plan_layout(load_feature_file(run.first_features()).frames, {4, 6, 8}, 2);
    CHECK(ij["mode"] == "joint");
    CHECK(ij["attention"].size() == extended_surrounding_neighborhood(layout, 0).members.size());
    CHECK(ij["neighborhood"].size() == surrounding_neighborhood(layout, 0).members.size());
    CHECK(cli({"inspect", "--features", run.first_features(), "--pivot", "0", "--ckpt", run.ckpt(), "--stride", "3"})
              .code == 1);
  }

  TEST_CASE("diverging training exits 2") {
    TempDir dir("cli-diverge");
    SyntheticConfig s;
    s.feature_dim = 4;
    save_corpus(dir.path() / "data", generate_synthetic_corpus(s, 2));
    write(dir.path() / "run.json", json{{"train",
                                         {{"widths", {4}},
                                          {"model_dim", 8},
                                          {"inter_dim", 8},
                                          {"intra_dim", 8},
                                          {"decoder_layers", 1},
                                          {"decoder_heads", 2},
                                          {"epochs", 3},
                                          {"lr", 1e300}}},
                                        {"corpus", "data/manifest.jsonl"},
                                        {"output_dir", "out"}}
                                       .dump());
    const Run r = cli({"train", "--config", (dir.path() / "run.json").string()});
    CHECK(r.code == 2);
    CHECK(r.err.find("diverged") != std::string::npos);
  }

  TEST_CASE("installed binary reports exit codes") {
    const std::string bin = TSPNET_CLI_PATH;
    auto status = [&](const std::string& args) {
      const int raw = std::system((bin + " " + args + " > /dev/null 2>&1").c_str());
      return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    };
    CHECK(status("gradcheck --mode single --seed 1") == 0);
    CHECK(status("translate --ckpt /nonexistent/a.ckpt --features /nonexistent/a.tspf") == 1);
    CHECK(status("--bogus") == 1);
  }
}
