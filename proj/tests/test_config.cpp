#include <doctest.h>

#include "tspnet/config.hpp"
#include "tspnet/errors.hpp"

using namespace tspnet;
using nlohmann::json;

namespace {

std::string config_path(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const ConfigError& e) {
    return e.path();
  }
  return "";
}

}  // namespace

TEST_SUITE("train config") {
  TEST_CASE("defaults") {
    const TrainConfig c;
    CHECK(c.widths == std::vector<std::size_t>{8, 12, 16});
    CHECK(c.stride == 2);
    CHECK(c.lr == Real(1e-4));
    CHECK(c.weight_decay == Real(1e-4));
    CHECK(c.epochs == 200);
    CHECK(c.mode == EncoderMode::joint);
    CHECK_NOTHROW(c.validate());
  }

  TEST_CASE("json round trip") {
    TrainConfig c;
    c.mode = EncoderMode::pool;
    c.widths = {4, 9};
    c.lr = Real(0.25);
    c.beam_width = 3;
    c.log_wall_time = false;
    const TrainConfig back = train_config_from_json(to_json(c));
    CHECK(to_json(back) == to_json(c));
    CHECK(back.mode == EncoderMode::pool);
  }

  TEST_CASE("unknown keys and wrong types name the field") {
    CHECK(config_path([] { train_config_from_json(json{{"widht", 3}}); }) == "train.widht");
    CHECK(config_path([] { train_config_from_json(json{{"stride", "2"}}); }) == "train.stride");
    CHECK(config_path([] { train_config_from_json(json{{"stride", -2}}); }) == "train.stride");
    CHECK(config_path([] { train_config_from_json(json{{"widths", {8, "x"}}}); }) == "train.widths[1]");
    CHECK(config_path([] { train_config_from_json(json{{"mode", "tree"}}); }) == "train.mode");
    CHECK(config_path([] { train_config_from_json(json{{"log_wall_time", 1}}); }) == "train.log_wall_time");
    CHECK(config_path([] { train_config_from_json(json::array()); }) == "train");
  }

  TEST_CASE("validation names the field") {
    auto failing = [](auto mutate) {
      TrainConfig c;
      mutate(c);
      return config_path([&] { c.validate(); });
    };
    CHECK(failing([](TrainConfig& c) { c.decoder_heads = 3; }) == "train.decoder_heads");
    CHECK(failing([](TrainConfig& c) { c.lr = -1; }) == "train.lr");
    CHECK(failing([](TrainConfig& c) { c.beta2 = 1; }) == "train.beta2");
    CHECK(failing([](TrainConfig& c) { c.batch_size = 0; }) == "train.batch_size");
    CHECK(failing([](TrainConfig& c) { c.encoder_dropout = 1; }) == "train.encoder_dropout");
    CHECK(failing([](TrainConfig& c) { c.precision = "f16"; }) == "train.precision");
    CHECK(failing([](TrainConfig& c) { c.widths = {12, 8}; }).rfind("train.", 0) == 0);
    CHECK(failing([](TrainConfig& c) { c.lr = 0; }).empty());
  }

  TEST_CASE("derived module configs") {
    TrainConfig c;
    c.model_dim = 32;
    c.decoder_ff_dim = 0;
    const auto d = decoder_config(c, 30);
    CHECK(d.vocab_size == 30);
    CHECK(d.inner_dim() == 128);
    const auto e = encoder_config(c, 7);
    CHECK(e.input_dim == 7);
    CHECK(e.widths == c.widths);
  }
}

TEST_SUITE("synthetic config") {
  TEST_CASE("round trip and errors") {
    SyntheticConfig s;
    s.reorder = ReorderRule::identity;
    s.noise_sigma = 0;
    const auto back = synthetic_config_from_json(to_json(s));
    CHECK(back.reorder == ReorderRule::identity);
    CHECK(back.noise_sigma == 0);
    CHECK(config_path([] { synthetic_config_from_json(json{{"reorder", "reverse"}}); }) == "synth.reorder");
    CHECK(config_path([] { synthetic_config_from_json(json{{"min_duration", 0}}); }) == "synth.min_duration");
    CHECK(config_path([] { synthetic_config_from_json(json{{"noise", 1}}); }) == "synth.noise");
  }
}

TEST_SUITE("run config") {
  TEST_CASE("seed propagates to every section") {
    const auto c = run_config_from_json(json{{"seed", 42}, {"synth", {{"sentences", 7}}}, {"train", {{"epochs", 3}}}});
    CHECK(c.seed == 42);
    CHECK(c.synth.seed == 42);
    CHECK(c.train.seed == 42);
    CHECK(c.synth_sentences == 7);
    CHECK(c.train.epochs == 3);
    const auto back = run_config_from_json(to_json(c));
    CHECK(to_json(back) == to_json(c));
  }

  TEST_CASE("errors carry dotted paths") {
    CHECK(config_path([] { run_config_from_json(json{{"train", {{"seed", 1}}}}); }) == "train.seed");
    CHECK(config_path([] { run_config_from_json(json{{"synth", {{"seed", 1}}}}); }) == "synth.seed");
    CHECK(config_path([] { run_config_from_json(json{{"synth", {{"sentences", 0}}}}); }) == "synth.sentences");
    CHECK(config_path([] { run_config_from_json(json{{"train", {{"decoder_heads", 3}}}}); }) ==
          "train.decoder_heads");
    CHECK(config_path([] { run_config_from_json(json{{"outdir", "x"}}); }) == "outdir");
    CHECK(config_path([] { run_config_from_json(json{{"train", {{"optimizer", {{"lr", 1}}}}}}); }) ==
          "train.optimizer");
  }
}
