#include "tspnet/gradcheck.hpp"

#include <cmath>

#include "tspnet/training.hpp"

namespace tspnet {

GradcheckReport check_gradients(const std::function<Tensor()>& loss, const NamedTensors& params, double epsilon,
                                double floor) {
  std::vector<std::vector<Real>> analytic;
  {
    for (const auto& [name, t] : params) {
      Tensor p = t;
      p.zero_grad();
    }
    Tape tape;
    Tensor value;
    {
      TapeScope scope(tape);
      value = loss();
    }
    tape.backward(value);
    for (const auto& [name, t] : params) {
      const auto g = t.grad();
      analytic.emplace_back(g.begin(), g.end());
    }
  }

  GradcheckReport report;
  NoGradScope no_grad;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor t = params[p].second;
    GradientComparison cmp;
    cmp.name = params[p].first;
    cmp.count = t.numel();
    auto data = t.data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const Real saved = data[i];
      data[i] = saved + static_cast<Real>(epsilon);
      const double up = loss().item();
      data[i] = saved - static_cast<Real>(epsilon);
      const double down = loss().item();
      data[i] = saved;
      const double numeric = (up - down) / (2 * epsilon);
      const double a = analytic[p][i];
      const double abs_err = std::abs(a - numeric);
      const double rel_err = abs_err / std::max(std::abs(a) + std::abs(numeric), floor);
      if (rel_err > cmp.max_rel_err || i == 0) {
        cmp.max_rel_err = rel_err;
        cmp.worst_index = i;
      }
      cmp.max_abs_err = std::max(cmp.max_abs_err, abs_err);
    }
    report.checked += cmp.count;
    if (cmp.max_rel_err >= report.max_rel_err) {
      report.max_rel_err = cmp.max_rel_err;
      report.worst_parameter = cmp.name;
    }
    report.parameters.push_back(std::move(cmp));
  }
  return report;
}

GradcheckReport model_gradcheck(EncoderMode mode, std::uint64_t seed, double epsilon) {
  TrainConfig cfg;
  cfg.widths = {4, 6, 8};
  cfg.stride = 2;
  cfg.mode = mode;
  cfg.model_dim = cfg.inter_dim = cfg.intra_dim = 16;
  cfg.max_positions = 12;
  cfg.decoder_layers = 1;
  cfg.decoder_heads = 2;
  cfg.decoder_ff_dim = 32;
  cfg.max_target_length = 8;
  cfg.seed = seed;

  Rng rng(seed);
  constexpr std::size_t kFrames = 20, kDim = 8, kWords = 12 - kNumSpecialTokens;
  std::vector<std::string> words;
  for (std::size_t i = 0; i < kWords; ++i) words.push_back(gesture_word(i, kWords));
  const Model model = Model::create(cfg, kDim, Vocabulary::from_words(words), rng);

  CorpusEntry entry;
  entry.features.video_id = "gradcheck";
  entry.features.frames = kFrames;
  entry.features.dim = kDim;
  for (std::size_t i = 0; i < kFrames * kDim; ++i) entry.features.data.push_back(static_cast<float>(rng.normal()));
  for (std::size_t i = 0; i < 5; ++i) {
    entry.target_tokens.push_back(static_cast<TokenId>(kNumSpecialTokens + rng.uniform_int(kWords)));
  }
  entry.target_tokens.push_back(kEosId);

  const CorpusEntry* ptr = &entry;
  const Batch batch = make_batch(std::span<const CorpusEntry* const>(&ptr, 1), cfg);
  return check_gradients([&] { return batch_loss(model, batch).loss; }, model.named_parameters(), epsilon);
}

nlohmann::json to_json(const GradcheckReport& report) {
  nlohmann::json params = nlohmann::json::array();
  for (const auto& p : report.parameters) {
    params.push_back({{"name", p.name},
                      {"count", p.count},
                      {"max_rel_err", p.max_rel_err},
                      {"max_abs_err", p.max_abs_err},
                      {"worst_index", p.worst_index}});
  }
  return {{"max_rel_err", report.max_rel_err},
          {"worst_parameter", report.worst_parameter},
          {"checked", report.checked},
          {"parameters", params}};
}

}  // namespace tspnet
