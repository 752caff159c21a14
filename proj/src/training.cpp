#include "tspnet/training.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <thread>

#include "tspnet/errors.hpp"

namespace tspnet {

using nlohmann::json;

// ---------------------------------------------------------------- model

Model Model::create(const TrainConfig& config, std::size_t input_dim, Vocabulary vocab, Rng& rng) {
  config.validate();
  Model m;
  m.config = config;
  m.input_dim = input_dim;
  m.vocab = std::move(vocab);
  m.encoder = EncoderParams::create(encoder_config(config, input_dim), rng);
  m.decoder = DecoderParams::create(decoder_config(config, m.vocab.size()), rng);
  return m;
}

NamedTensors Model::named_parameters() const {
  NamedTensors out = encoder.named_parameters();
  for (auto& p : decoder.named_parameters()) out.push_back(std::move(p));
  return out;
}

std::vector<Tensor> Model::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

EncodedVideo Model::encode(const FeatureSequence& seq, const EncodeOptions& options) const {
  return tspnet::encode(seq, plan_layout_for(seq, encoder.config), encoder, options);
}

// ---------------------------------------------------------------- batching

std::size_t Batch::target_length(std::size_t i) const {
  return static_cast<std::size_t>(std::count(target_mask[i].begin(), target_mask[i].end(), 1));
}

Batch make_batch(std::span<const CorpusEntry* const> entries, const TrainConfig& config) {
  if (entries.empty()) throw PreconditionError("make_batch: empty batch");
  Batch b;
  for (const CorpusEntry* e : entries) {
    if (e->target_tokens.empty() || e->target_tokens.back() != kEosId) {
      throw PreconditionError("target of " + e->features.video_id + " must end with <eos>");
    }
    if (e->target_tokens.size() > config.max_target_length) {
      throw CapacityError("target of " + e->features.video_id + " has " + std::to_string(e->target_tokens.size()) +
                          " tokens, max_target_length is " + std::to_string(config.max_target_length));
    }
    b.max_target_length = std::max(b.max_target_length, e->target_tokens.size());
  }
  for (const CorpusEntry* e : entries) {
    b.entries.push_back(e);
    b.layouts.push_back(plan_layout(e->features.frames, config.widths, config.stride));
    const std::size_t n = e->target_tokens.size();
    std::vector<TokenId> inputs(b.max_target_length, kPadId), labels(b.max_target_length, kPadId);
    std::vector<std::uint8_t> mask(b.max_target_length, 0);
    inputs[0] = kBosId;
    for (std::size_t t = 0; t < n; ++t) {
      if (t + 1 < n) inputs[t + 1] = e->target_tokens[t];
      labels[t] = e->target_tokens[t];
      mask[t] = 1;
    }
    b.decoder_inputs.push_back(std::move(inputs));
    b.labels.push_back(std::move(labels));
    b.target_mask.push_back(std::move(mask));
    b.token_count += n;
  }
  return b;
}

BatchLoss batch_loss(const Model& model, const Batch& batch, Real label_smoothing, Rng* dropout_rng) {
  BatchLoss out;
  Tensor total;
  CrossEntropyOptions ce;
  ce.ignore_id = kPadId;
  ce.label_smoothing = label_smoothing;
  ce.sum = true;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const CorpusEntry& entry = *batch.entries[i];
    const std::size_t n = batch.target_length(i);
    EncodeOptions opts;
    opts.dropout_rng = dropout_rng;
    const Tensor memory = encode(entry.features, batch.layouts[i], model.encoder, opts).memory;
    // Padding sits after every real position, so the causal mask makes the
    // trimmed sequence equivalent to the padded one.
    const std::span<const TokenId> inputs(batch.decoder_inputs[i].data(), n);
    const std::span<const TokenId> labels(batch.labels[i].data(), n);
    const Tensor logits = decode_train(memory, inputs, model.decoder, dropout_rng);
    const Tensor sentence = cross_entropy(logits, labels, ce);
    out.sentence_losses.push_back(sentence.item() / static_cast<Real>(n));
    out.sentence_tokens.push_back(n);
    total = total.defined() ? add(total, sentence) : sentence;
    for (std::size_t t = 0; t < n; ++t) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < logits.cols(); ++j) {
        if (logits.at(t, j) > logits.at(t, best)) best = j;
      }
      if (static_cast<TokenId>(best) == labels[t]) ++out.correct;
    }
    out.tokens += n;
  }
  out.loss = scale(total, Real(1) / static_cast<Real>(out.tokens));
  return out;
}

std::vector<std::vector<std::size_t>> plan_epoch(std::span<const MultiScaleLayout> layouts, std::size_t batch_size,
                                                 Rng& rng) {
  if (batch_size == 0) throw PreconditionError("plan_epoch: batch_size must be positive");
  std::vector<std::size_t> order(layouts.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  const std::size_t pool = 4 * batch_size;
  for (std::size_t start = 0; start < order.size(); start += pool) {
    auto first = order.begin() + static_cast<std::ptrdiff_t>(start);
    auto last = order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + pool));
    std::stable_sort(first, last, [&](std::size_t a, std::size_t b) {
      return layouts[a].pivot_count < layouts[b].pivot_count;
    });
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + batch_size)));
  }
  rng.shuffle(batches);
  return batches;
}

std::vector<CorpusEntry> retokenize(const std::vector<CorpusEntry>& corpus, const Vocabulary& vocab) {
  std::vector<CorpusEntry> out = corpus;
  for (auto& e : out) e.target_tokens = vocab.encode(e.raw_text);
  return out;
}

double teacher_forced_accuracy(const Model& model, const std::vector<CorpusEntry>& corpus) {
  NoGradScope no_grad;
  std::size_t correct = 0, total = 0;
  for (const auto& e : corpus) {
    const CorpusEntry* ptr = &e;
    const Batch b = make_batch(std::span<const CorpusEntry* const>(&ptr, 1), model.config);
    const BatchLoss l = batch_loss(model, b);
    correct += l.correct;
    total += l.tokens;
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

// ---------------------------------------------------------------- logs

json to_json(const EpochLog& log, bool with_wall_time) {
  json j{{"epoch", log.epoch}, {"loss", log.loss}, {"lr", log.lr}, {"token_accuracy", log.token_accuracy}};
  if (with_wall_time) j["wall_ms"] = log.wall_ms;
  if (log.validation) {
    j["val"] = {{"bleu4", log.validation->bleu.at(4)}, {"rouge_l", log.validation->rouge_l}};
  }
  return j;
}

// ---------------------------------------------------------------- checkpoints

namespace {

void put_real(std::vector<std::uint8_t>& out, Real v) {
  if constexpr (sizeof(Real) == 8) {
    const auto bits = std::bit_cast<std::uint64_t>(static_cast<double>(v));
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  } else {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
}

Real get_real(std::span<const std::uint8_t> bytes, std::size_t offset, const std::string& dtype) {
  if (dtype == "f64") {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[offset + i]) << (8 * i);
    return static_cast<Real>(std::bit_cast<double>(bits));
  }
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(bytes[offset + i]) << (8 * i);
  return static_cast<Real>(std::bit_cast<float>(bits));
}

struct PayloadEntry {
  std::string name;
  Shape shape;
  std::span<const Real> values;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  const NamedTensors params = ckpt.model.named_parameters();
  if (!ckpt.moments.empty() && ckpt.moments.size() != params.size()) {
    throw PreconditionError("checkpoint optimiser state does not match the parameter list");
  }
  std::vector<PayloadEntry> entries;
  for (const auto& [name, t] : params) entries.push_back({name, t.shape(), t.data()});
  for (std::size_t i = 0; i < ckpt.moments.size(); ++i) {
    entries.push_back({"adam.m/" + params[i].first, params[i].second.shape(), ckpt.moments[i].m});
    entries.push_back({"adam.v/" + params[i].first, params[i].second.shape(), ckpt.moments[i].v});
  }

  json tensors = json::array();
  std::vector<std::uint8_t> payload;
  for (const auto& e : entries) {
    if (e.values.size() != shape_numel(e.shape)) throw PreconditionError("tensor " + e.name + " has the wrong size");
    const std::size_t offset = payload.size();
    for (Real v : e.values) put_real(payload, v);
    tensors.push_back({{"name", e.name},
                       {"shape", e.shape},
                       {"dtype", kRealName},
                       {"offset", offset},
                       {"length", payload.size() - offset}});
  }
  json header{{"format", "tspnet-checkpoint"},
              {"version", kCheckpointVersion},
              {"config", to_json(ckpt.model.config)},
              {"input_dim", ckpt.model.input_dim},
              {"vocabulary", ckpt.model.vocab.entries()},
              {"epoch", ckpt.epoch},
              {"adam_step", ckpt.adam_step},
              {"rng_state", ckpt.rng_state},
              {"tensors", tensors}};
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(text.begin(), text.end());
  out.push_back('\n');
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  const auto newline = std::find(bytes.begin(), bytes.end(), std::uint8_t{'\n'});
  if (newline == bytes.end()) throw FormatError("checkpoint header is not terminated", bytes.size());
  const std::size_t header_len = static_cast<std::size_t>(newline - bytes.begin());
  json header;
  try {
    header = json::parse(bytes.begin(), newline);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what(), e.byte);
  }
  if (!header.is_object() || header.value("format", "") != "tspnet-checkpoint") {
    throw FormatError("not a tspnet checkpoint", 0);
  }
  if (header.value("version", -1) != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version", 0);
  }
  const std::span<const std::uint8_t> payload = bytes.subspan(header_len + 1);

  Checkpoint ckpt;
  try {
    // Weights convert on load, so a checkpoint written at either precision
    // opens in this build.
    json config_json = header.at("config");
    config_json["precision"] = kRealName;
    const TrainConfig config = train_config_from_json(config_json, "config");
    auto words = header.at("vocabulary").get<std::vector<std::string>>();
    if (words.size() < static_cast<std::size_t>(kNumSpecialTokens)) throw FormatError("vocabulary too small", 0);
    Vocabulary vocab = Vocabulary::from_words({words.begin() + kNumSpecialTokens, words.end()});
    Rng scratch(0);
    ckpt.model = Model::create(config, header.at("input_dim").get<std::size_t>(), std::move(vocab), scratch);
    ckpt.epoch = header.at("epoch").get<std::size_t>();
    ckpt.adam_step = header.at("adam_step").get<std::uint64_t>();
    ckpt.rng_state = header.at("rng_state").get<std::string>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what(), 0);
  }

  std::map<std::string, std::vector<Real>> stored;
  std::map<std::string, Shape> shapes;
  for (const auto& t : header.at("tensors")) {
    const auto name = t.at("name").get<std::string>();
    const auto shape = t.at("shape").get<Shape>();
    const auto dtype = t.at("dtype").get<std::string>();
    const auto offset = t.at("offset").get<std::size_t>();
    const auto length = t.at("length").get<std::size_t>();
    const std::size_t width = dtype == "f64" ? 8 : dtype == "f32" ? 4 : 0;
    if (width == 0) throw FormatError("tensor " + name + " has unknown dtype " + dtype, header_len);
    if (length != shape_numel(shape) * width) throw FormatError("tensor " + name + " has inconsistent length", header_len);
    if (offset > payload.size() || length > payload.size() - offset) {
      throw FormatError("tensor " + name + " is truncated", header_len + 1 + payload.size());
    }
    std::vector<Real> values(shape_numel(shape));
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = get_real(payload, offset + i * width, dtype);
    stored[name] = std::move(values);
    shapes[name] = shape;
  }

  const NamedTensors params = ckpt.model.named_parameters();
  auto fetch = [&](const std::string& name, const Shape& shape) -> std::vector<Real>& {
    auto it = stored.find(name);
    if (it == stored.end()) throw FormatError("checkpoint lacks tensor " + name, header_len);
    if (shapes[name] != shape) throw FormatError("tensor " + name + " has shape " + shape_to_string(shapes[name]), header_len);
    return it->second;
  };
  for (const auto& [name, tensor] : params) {
    auto& values = fetch(name, tensor.shape());
    Tensor t = tensor;
    std::copy(values.begin(), values.end(), t.data().begin());
  }
  if (stored.contains("adam.m/" + params.front().first)) {
    for (const auto& [name, tensor] : params) {
      AdamMoments m;
      m.m = fetch("adam.m/" + name, tensor.shape());
      m.v = fetch("adam.v/" + name, tensor.shape());
      ckpt.moments.push_back(std::move(m));
    }
  }
  const std::size_t expected = params.size() * (ckpt.moments.empty() ? 1 : 3);
  if (stored.size() != expected) throw FormatError("checkpoint holds unexpected tensors", header_len);
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_checkpoint(bytes);
}

// ---------------------------------------------------------------- training

TrainResult train(const std::vector<CorpusEntry>& corpus_in, const TrainConfig& config, const TrainHooks& hooks) {
  if (corpus_in.empty()) throw PreconditionError("train: empty corpus");
  config.validate();
  const std::size_t input_dim = corpus_in.front().features.dim;
  std::vector<std::string> texts;
  for (const auto& e : corpus_in) {
    if (e.features.dim != input_dim) throw DimensionError("train: corpus mixes feature dimensions");
    texts.push_back(e.raw_text);
  }
  const std::vector<CorpusEntry> corpus = retokenize(corpus_in, Vocabulary::build(texts));

  Rng rng(config.seed);
  TrainResult result;
  Checkpoint& ckpt = result.checkpoint;
  ckpt.model = Model::create(config, input_dim, Vocabulary::build(texts), rng);
  const Model& model = ckpt.model;

  AdamOptions opts;
  opts.lr = config.lr;
  opts.weight_decay = config.weight_decay;
  opts.beta1 = config.beta1;
  opts.beta2 = config.beta2;
  opts.eps = config.adam_eps;
  Adam adam(model.parameters(), opts);

  std::vector<MultiScaleLayout> layouts;
  for (const auto& e : corpus) layouts.push_back(plan_layout(e.features.frames, config.widths, config.stride));
  const bool use_dropout = config.encoder_dropout > 0 || config.decoder_dropout > 0;

  auto snapshot = [&](std::size_t epoch) {
    ckpt.moments = adam.moments();
    ckpt.adam_step = adam.steps_taken();
    ckpt.epoch = epoch;
    ckpt.rng_state = rng.state();
  };

  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    double loss_sum = 0;
    std::size_t tokens = 0, correct = 0;
    for (const auto& indices : plan_epoch(layouts, config.batch_size, rng)) {
      std::vector<const CorpusEntry*> members;
      for (auto i : indices) members.push_back(&corpus[i]);
      const Batch batch = make_batch(members, config);
      Tape tape;
      BatchLoss bl;
      const std::string where = "epoch " + std::to_string(epoch) + ", step " + std::to_string(adam.steps_taken() + 1);
      try {
        TapeScope scope(tape);
        bl = batch_loss(model, batch, config.label_smoothing, use_dropout ? &rng : nullptr);
      } catch (const NumericError& e) {
        throw DivergenceError("non-finite forward pass at " + where + ": " + e.what());
      }
      const Real loss = bl.loss.item();
      if (!std::isfinite(loss)) throw DivergenceError("non-finite loss at " + where);
      tape.backward(bl.loss);
      adam.step();
      adam.zero_grad();
      loss_sum += static_cast<double>(loss) * static_cast<double>(bl.tokens);
      tokens += bl.tokens;
      correct += bl.correct;
    }

    EpochLog log;
    log.epoch = epoch;
    log.loss = loss_sum / static_cast<double>(tokens);
    log.lr = static_cast<double>(config.lr);
    log.token_accuracy = static_cast<double>(correct) / static_cast<double>(tokens);
    log.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    if (hooks.validation && config.eval_interval && epoch % config.eval_interval == 0) {
      DecodeOptions d{config.beam_width, config.max_decode_length, config.length_penalty};
      log.validation = evaluate(*hooks.validation, model, d, 1).scores;
    }
    result.log.push_back(log);
    if (hooks.on_epoch) hooks.on_epoch(log);

    const bool stop = config.stop_at_accuracy > 0 && log.token_accuracy >= config.stop_at_accuracy;
    const bool last = epoch == config.epochs || stop;
    if (hooks.on_checkpoint && !last && config.checkpoint_interval && epoch % config.checkpoint_interval == 0) {
      snapshot(epoch);
      hooks.on_checkpoint(ckpt);
    }
    if (last) {
      snapshot(epoch);
      if (hooks.on_checkpoint) hooks.on_checkpoint(ckpt);
      break;
    }
  }
  return result;
}

// ---------------------------------------------------------------- inference

DecodeResult translate(const Model& model, const FeatureSequence& seq, const DecodeOptions& options) {
  NoGradScope no_grad;
  if (seq.dim != model.input_dim) {
    throw DimensionError("features have dim " + std::to_string(seq.dim) + ", checkpoint expects " +
                         std::to_string(model.input_dim));
  }
  const Tensor memory = model.encode(seq).memory;
  if (options.beam_width <= 1) return greedy_decode(memory, model.decoder, options.max_len);
  return beam_decode(memory, model.decoder, {options.beam_width, options.max_len, options.length_penalty});
}

json to_json(const EvaluationReport& report) {
  json j = to_json(report.scores);
  json rows = json::array();
  for (const auto& s : report.sentences) {
    rows.push_back({{"id", s.id}, {"hypothesis", s.hypothesis}, {"reference", s.reference}, {"rouge_l", s.rouge_l}});
  }
  j["sentences"] = rows;
  return j;
}

EvaluationReport evaluate(const std::vector<CorpusEntry>& corpus, const Model& model, const DecodeOptions& options,
                          std::size_t threads) {
  if (corpus.empty()) throw PreconditionError("evaluate: no sentences to score");
  for (const auto& e : corpus) {
    if (e.features.dim != model.input_dim) {
      throw DimensionError("features of " + e.features.video_id + " have dim " + std::to_string(e.features.dim) +
                           ", checkpoint expects " + std::to_string(model.input_dim));
    }
  }
  if (threads == 0) {
    if (const char* env = std::getenv("TSP_THREADS")) threads = static_cast<std::size_t>(std::strtoul(env, nullptr, 10));
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  }
  threads = std::min(threads, corpus.size());

  std::vector<Sentence> hypotheses(corpus.size()), references(corpus.size());
  std::vector<std::exception_ptr> errors(threads);
  auto work = [&](std::size_t worker) {
    try {
      for (std::size_t i = worker; i < corpus.size(); i += threads) {
        const DecodeResult r = translate(model, corpus[i].features, options);
        hypotheses[i] = model.vocab.words_of(r.tokens);
        references[i] = split_whitespace(corpus[i].raw_text);
      }
    } catch (...) {
      errors[worker] = std::current_exception();
    }
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  EvaluationReport report;
  report.scores = score_corpus(hypotheses, references);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    SentenceResult s;
    s.id = corpus[i].features.video_id;
    s.reference = corpus[i].raw_text;
    for (const auto& w : hypotheses[i]) s.hypothesis += (s.hypothesis.empty() ? "" : " ") + w;
    s.rouge_l = hypotheses[i].empty() || references[i].empty() ? 0.0 : rouge_l(hypotheses[i], references[i]);
    report.sentences.push_back(std::move(s));
  }
  return report;
}

}  // namespace tspnet
