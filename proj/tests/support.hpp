#pragma once

#include <unistd.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "tspnet/training.hpp"

namespace tspnet::testing {

inline FeatureSequence random_features(std::size_t frames, std::size_t dim, Rng& rng, std::string id = "v") {
  FeatureSequence seq{std::move(id), frames, dim, {}};
  for (std::size_t i = 0; i < frames * dim; ++i) seq.data.push_back(static_cast<float>(rng.normal()));
  return seq;
}

inline Tensor random_matrix(std::size_t rows, std::size_t cols, Rng& rng, bool requires_grad = false) {
  std::vector<Real> v(rows * cols);
  for (auto& x : v) x = static_cast<Real>(rng.normal());
  return Tensor::from({rows, cols}, std::move(v), requires_grad);
}

/// Small model settings shared by encoder, decoder and training tests.
inline TrainConfig toy_config(EncoderMode mode = EncoderMode::joint) {
  TrainConfig cfg;
  cfg.widths = {4, 6, 8};
  cfg.stride = 2;
  cfg.mode = mode;
  cfg.model_dim = cfg.inter_dim = cfg.intra_dim = 16;
  cfg.max_positions = 64;
  cfg.decoder_layers = 1;
  cfg.decoder_heads = 2;
  cfg.decoder_ff_dim = 32;
  cfg.max_target_length = 12;
  cfg.max_decode_length = 10;
  return cfg;
}

inline Vocabulary toy_vocabulary(std::size_t words) {
  std::vector<std::string> w;
  for (std::size_t i = 0; i < words; ++i) w.push_back(gesture_word(i, words));
  return Vocabulary::from_words(w);
}

inline CorpusEntry random_entry(std::size_t frames, std::size_t dim, std::size_t length, const Vocabulary& vocab,
                                Rng& rng, std::string id = "v") {
  CorpusEntry e;
  e.features = random_features(frames, dim, rng, std::move(id));
  const std::size_t words = vocab.size() - kNumSpecialTokens;
  for (std::size_t i = 0; i < length; ++i) {
    const auto t = static_cast<TokenId>(kNumSpecialTokens + rng.uniform_int(words));
    e.target_tokens.push_back(t);
    e.raw_text += (i ? " " : "") + vocab.word(t);
  }
  e.target_tokens.push_back(kEosId);
  return e;
}

inline bool bit_equal(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (std::memcmp(&x[i], &y[i], sizeof(Real)) != 0) return false;
  }
  return true;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("tspnet-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace tspnet::testing
