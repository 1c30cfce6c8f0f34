#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dcbpl/corpus.hpp"
#include "dcbpl/errors.hpp"
#include "dcbpl/rng.hpp"
#include "dcbpl/tensor.hpp"

namespace dcbpl::lcbm {

using ag::Tensor;
using corpus::OrderSetPair;
using corpus::Vocabulary;
using json = nlohmann::json;

struct ModelHyperparams {
  int heads = 4;
  int head_dim = 16;
  int embed_dim = 64;
  int ff_dim = 128;
  int layers = 2;
  int context = 64;
  int vocab_size = 0;

  void validate() const {
    if (heads < 1 || head_dim < 1 || embed_dim < 1 || ff_dim < 1 || layers < 1 ||
        vocab_size < 1)
      throw ConfigError("model hyperparameters must be positive");
    if (context < 2) throw ConfigError("context must be >= 2");
    if (embed_dim != heads * head_dim)
      throw ConfigError("embed_dim " + std::to_string(embed_dim) + " != heads*head_dim " +
                        std::to_string(heads * head_dim));
  }
};

inline void to_json(json& j, const ModelHyperparams& hp) {
  j = json{{"h", hp.heads},   {"m", hp.head_dim}, {"d", hp.embed_dim},    {"r", hp.ff_dim},
           {"layers", hp.layers}, {"context", hp.context}, {"vocab_size", hp.vocab_size}};
}

inline void from_json(const json& j, ModelHyperparams& hp) {
  j.at("h").get_to(hp.heads);
  j.at("m").get_to(hp.head_dim);
  j.at("d").get_to(hp.embed_dim);
  j.at("r").get_to(hp.ff_dim);
  j.at("layers").get_to(hp.layers);
  j.at("context").get_to(hp.context);
  j.at("vocab_size").get_to(hp.vocab_size);
}

struct BlockWeights {
  std::vector<Tensor> wq, wk, wv;  // per head, d x m
  Tensor wo;                       // d x d
  Tensor w1, b1, w2, b2;           // feed-forward
  Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;
};

struct PolicyModel {
  ModelHyperparams hp;
  Tensor tok_embed;  // vocab x d
  std::vector<BlockWeights> blocks;
  Tensor lnf_gain, lnf_bias;
  Tensor out_proj;  // d x vocab
  std::vector<std::vector<double>> pos_enc;  // fixed sinusoidal, context rows of d

  std::vector<std::pair<std::string, Tensor*>> named_parameters() {
    std::vector<std::pair<std::string, Tensor*>> out;
    out.emplace_back("tok_embed", &tok_embed);
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      auto& blk = blocks[b];
      std::string p = "block" + std::to_string(b) + ".";
      for (std::size_t h = 0; h < blk.wq.size(); ++h) {
        out.emplace_back(p + "wq" + std::to_string(h), &blk.wq[h]);
        out.emplace_back(p + "wk" + std::to_string(h), &blk.wk[h]);
        out.emplace_back(p + "wv" + std::to_string(h), &blk.wv[h]);
      }
      out.emplace_back(p + "wo", &blk.wo);
      out.emplace_back(p + "w1", &blk.w1);
      out.emplace_back(p + "b1", &blk.b1);
      out.emplace_back(p + "w2", &blk.w2);
      out.emplace_back(p + "b2", &blk.b2);
      out.emplace_back(p + "ln1_gain", &blk.ln1_gain);
      out.emplace_back(p + "ln1_bias", &blk.ln1_bias);
      out.emplace_back(p + "ln2_gain", &blk.ln2_gain);
      out.emplace_back(p + "ln2_bias", &blk.ln2_bias);
    }
    out.emplace_back("lnf_gain", &lnf_gain);
    out.emplace_back("lnf_bias", &lnf_bias);
    out.emplace_back("out_proj", &out_proj);
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto& [name, t] : named_parameters()) n += t->size();
    return n;
  }

  PolicyModel clone() const {
    PolicyModel copy;
    copy.hp = hp;
    copy.pos_enc = pos_enc;
    auto dup = [](const Tensor& t) {
      return Tensor::from_data(t.rows(), t.cols(), t.value(), t.requires_grad());
    };
    copy.tok_embed = dup(tok_embed);
    copy.lnf_gain = dup(lnf_gain);
    copy.lnf_bias = dup(lnf_bias);
    copy.out_proj = dup(out_proj);
    for (const auto& blk : blocks) {
      BlockWeights b;
      for (const auto& t : blk.wq) b.wq.push_back(dup(t));
      for (const auto& t : blk.wk) b.wk.push_back(dup(t));
      for (const auto& t : blk.wv) b.wv.push_back(dup(t));
      b.wo = dup(blk.wo);
      b.w1 = dup(blk.w1);
      b.b1 = dup(blk.b1);
      b.w2 = dup(blk.w2);
      b.b2 = dup(blk.b2);
      b.ln1_gain = dup(blk.ln1_gain);
      b.ln1_bias = dup(blk.ln1_bias);
      b.ln2_gain = dup(blk.ln2_gain);
      b.ln2_bias = dup(blk.ln2_bias);
      copy.blocks.push_back(std::move(b));
    }
    return copy;
  }
};

namespace detail {

inline std::vector<std::vector<double>> sinusoidal_encoding(int context, int d) {
  std::vector<std::vector<double>> pe(context, std::vector<double>(d, 0.0));
  for (int pos = 0; pos < context; ++pos)
    for (int i = 0; i < d; ++i) {
      double angle = pos / std::pow(10000.0, 2.0 * (i / 2) / d);
      pe[pos][i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  return pe;
}

inline Tensor gaussian(int rows, int cols, double sd, rng::Stream& stream) {
  std::vector<double> v(static_cast<std::size_t>(rows) * cols);
  for (auto& x : v) x = stream.normal(0.0, sd);
  return Tensor::from_data(rows, cols, std::move(v), true);
}

inline Tensor constant(int rows, int cols, double value) {
  return Tensor::from_data(rows, cols,
                           std::vector<double>(static_cast<std::size_t>(rows) * cols, value),
                           true);
}

}  // namespace detail

inline constexpr double kInitScale = 0.02;

inline PolicyModel init_model(const ModelHyperparams& hp, std::uint64_t seed) {
  hp.validate();
  PolicyModel model;
  model.hp = hp;
  model.pos_enc = detail::sinusoidal_encoding(hp.context, hp.embed_dim);
  rng::Stream stream(seed, 0x1cb2);
  model.tok_embed = detail::gaussian(hp.vocab_size, hp.embed_dim, kInitScale, stream);
  for (int b = 0; b < hp.layers; ++b) {
    BlockWeights blk;
    for (int h = 0; h < hp.heads; ++h) {
      blk.wq.push_back(detail::gaussian(hp.embed_dim, hp.head_dim, kInitScale, stream));
      blk.wk.push_back(detail::gaussian(hp.embed_dim, hp.head_dim, kInitScale, stream));
      blk.wv.push_back(detail::gaussian(hp.embed_dim, hp.head_dim, kInitScale, stream));
    }
    blk.wo = detail::gaussian(hp.embed_dim, hp.embed_dim, kInitScale, stream);
    blk.w1 = detail::gaussian(hp.embed_dim, hp.ff_dim, kInitScale, stream);
    blk.b1 = detail::constant(1, hp.ff_dim, 0.0);
    blk.w2 = detail::gaussian(hp.ff_dim, hp.embed_dim, kInitScale, stream);
    blk.b2 = detail::constant(1, hp.embed_dim, 0.0);
    blk.ln1_gain = detail::constant(1, hp.embed_dim, 1.0);
    blk.ln1_bias = detail::constant(1, hp.embed_dim, 0.0);
    blk.ln2_gain = detail::constant(1, hp.embed_dim, 1.0);
    blk.ln2_bias = detail::constant(1, hp.embed_dim, 0.0);
    model.blocks.push_back(std::move(blk));
  }
  model.lnf_gain = detail::constant(1, hp.embed_dim, 1.0);
  model.lnf_bias = detail::constant(1, hp.embed_dim, 0.0);
  model.out_proj = detail::gaussian(hp.embed_dim, hp.vocab_size, kInitScale, stream);
  return model;
}

namespace detail {

inline Tensor causal_mask(int t) {
  std::vector<double> v(static_cast<std::size_t>(t) * t, 0.0);
  for (int i = 0; i < t; ++i)
    for (int j = i + 1; j < t; ++j) v[static_cast<std::size_t>(i) * t + j] = -1e30;
  return Tensor::from_data(t, t, std::move(v));
}

inline Tensor layer_norm_affine(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  return ag::add_rowvec(ag::mul_rowvec(ag::layer_norm_rows(x), gain), bias);
}

}  // namespace detail

// Pre-norm causal decoder stack; returns per-position logits (T x vocab).
inline Tensor forward_logits(const PolicyModel& model, const std::vector<int>& tokens) {
  const auto& hp = model.hp;
  int t = static_cast<int>(tokens.size());
  if (t < 1 || t > hp.context)
    throw UsageError("sequence length " + std::to_string(t) + " outside [1, " +
                     std::to_string(hp.context) + "]");
  for (int tok : tokens)
    if (tok < 0 || tok >= hp.vocab_size)
      throw UsageError("token " + std::to_string(tok) + " outside vocabulary of size " +
                       std::to_string(hp.vocab_size));
  std::vector<double> pos(static_cast<std::size_t>(t) * hp.embed_dim);
  for (int i = 0; i < t; ++i)
    std::copy(model.pos_enc[i].begin(), model.pos_enc[i].end(),
              pos.begin() + static_cast<std::size_t>(i) * hp.embed_dim);
  Tensor x = ag::add(ag::embedding_lookup(model.tok_embed, tokens),
                     Tensor::from_data(t, hp.embed_dim, std::move(pos)));
  Tensor mask = detail::causal_mask(t);
  double inv_sqrt_m = 1.0 / std::sqrt(static_cast<double>(hp.head_dim));
  for (const auto& blk : model.blocks) {
    Tensor a = detail::layer_norm_affine(x, blk.ln1_gain, blk.ln1_bias);
    std::vector<Tensor> heads;
    for (int h = 0; h < hp.heads; ++h) {
      Tensor q = ag::matmul(a, blk.wq[h]);
      Tensor k = ag::matmul(a, blk.wk[h]);
      Tensor v = ag::matmul(a, blk.wv[h]);
      Tensor scores = ag::add(ag::scale(ag::matmul_nt(q, k), inv_sqrt_m), mask);
      heads.push_back(ag::matmul(ag::softmax_rows(scores), v));
    }
    x = ag::add(x, ag::matmul(ag::concat_cols(heads), blk.wo));
    Tensor b = detail::layer_norm_affine(x, blk.ln2_gain, blk.ln2_bias);
    Tensor ff = ag::add_rowvec(
        ag::matmul(ag::gelu(ag::add_rowvec(ag::matmul(b, blk.w1), blk.b1)), blk.w2), blk.b2);
    x = ag::add(x, ff);
  }
  Tensor y = detail::layer_norm_affine(x, model.lnf_gain, model.lnf_bias);
  return ag::matmul(y, model.out_proj);
}

// Distribution over the whole vocabulary at the final position.
inline std::vector<double> forward_next_distribution(const PolicyModel& model,
                                                     const std::vector<int>& prefix) {
  if (prefix.empty()) throw UsageError("prefix must be non-empty");
  Tensor logits = forward_logits(model, prefix);
  int last = logits.rows() - 1;
  int c = logits.cols();
  std::vector<double> out(c);
  double mx = logits.at(last, 0);
  for (int k = 1; k < c; ++k) mx = std::max(mx, logits.at(last, k));
  double total = 0.0;
  for (int k = 0; k < c; ++k) {
    out[k] = std::exp(logits.at(last, k) - mx);
    total += out[k];
  }
  for (auto& p : out) p /= total;
  return out;
}

struct TrainConfig {
  enum class Mode { pretrain, finetune };
  double learning_rate = 0.05;
  int batch_size = 16;
  int epochs = 10;
  std::uint64_t seed = 0;
  Mode mode = Mode::pretrain;

  void validate() const {
    if (learning_rate <= 0.0) throw ConfigError("learning_rate must be > 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
  }
};

inline void to_json(json& j, const TrainConfig& cfg) {
  j = json{{"learning_rate", cfg.learning_rate},
           {"batch_size", cfg.batch_size},
           {"epochs", cfg.epochs},
           {"seed", cfg.seed},
           {"mode", cfg.mode == TrainConfig::Mode::pretrain ? "pretrain" : "finetune"}};
}

inline void from_json(const json& j, TrainConfig& cfg) {
  j.at("learning_rate").get_to(cfg.learning_rate);
  j.at("batch_size").get_to(cfg.batch_size);
  j.at("epochs").get_to(cfg.epochs);
  j.at("seed").get_to(cfg.seed);
  std::string mode = j.value("mode", "pretrain");
  cfg.mode = mode == "finetune" ? TrainConfig::Mode::finetune : TrainConfig::Mode::pretrain;
}

namespace detail {

// Teacher forcing: the target set (canonical order) plus a closing SEP are
// appended to the prefix, and each appended token is scored autoregressively.
struct TeacherForced {
  std::vector<int> input;    // full sequence minus the final token
  std::vector<int> rows;     // logit rows carrying loss
  std::vector<int> targets;  // token expected at each loss row
};

inline TeacherForced teacher_forced(const OrderSetPair& pair, int context) {
  std::vector<int> full = pair.prefix;
  full.insert(full.end(), pair.target.begin(), pair.target.end());
  full.push_back(Vocabulary::kSep);
  int n_scored = static_cast<int>(pair.target.size()) + 1;
  if (static_cast<int>(full.size()) > context + 1)
    full.erase(full.begin(), full.end() - (context + 1));
  TeacherForced tf;
  tf.input.assign(full.begin(), full.end() - 1);
  int len = static_cast<int>(full.size());
  int first_row = std::max(len - 1 - n_scored, 0);
  for (int row = first_row; row < len - 1; ++row) {
    tf.rows.push_back(row);
    tf.targets.push_back(full[row + 1]);
  }
  return tf;
}

}  // namespace detail

// Plain SGD with constant learning rate; per-epoch mean cross-entropy trace.
inline std::vector<double> train(PolicyModel& model, const std::vector<OrderSetPair>& pairs,
                                 const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.epochs == 0) return {};
  if (pairs.empty()) throw UsageError("train: no pairs");
  for (const auto& p : pairs) {
    for (int tok : p.prefix)
      if (tok >= model.hp.vocab_size) throw UsageError("train: prefix token outside vocabulary");
    for (int tok : p.target)
      if (tok >= model.hp.vocab_size) throw UsageError("train: target token outside vocabulary");
  }
  auto params = model.named_parameters();
  std::vector<double> trace;
  std::vector<std::size_t> order(pairs.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::int64_t step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng::Stream shuffle_stream(cfg.seed, 0x5481, static_cast<std::uint64_t>(epoch));
    shuffle_stream.shuffle(order);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::size_t end = std::min(order.size(), start + cfg.batch_size);
      Tensor batch_loss;
      for (std::size_t i = start; i < end; ++i) {
        const auto& pair = pairs[order[i]];
        auto tf = detail::teacher_forced(pair, model.hp.context);
        Tensor logits = forward_logits(model, tf.input);
        Tensor loss = ag::cross_entropy_rows(logits, tf.rows, tf.targets);
        batch_loss = batch_loss.defined() ? ag::add(batch_loss, loss) : loss;
      }
      batch_loss = ag::scale(batch_loss, 1.0 / static_cast<double>(end - start));
      if (!std::isfinite(batch_loss.item())) {
        std::string ids;
        for (std::size_t i = start; i < end; ++i)
          ids += (ids.empty() ? "" : ",") + std::to_string(pairs[order[i]].eid);
        throw TrainError("non-finite loss at step " + std::to_string(step) + " (batch eids " +
                         ids + ")");
      }
      for (auto& [name, t] : params) t->zero_grad();
      ag::backward(batch_loss);
      for (auto& [name, t] : params) {
        auto& v = t->value_mut();
        const auto& g = t->grad();
        for (std::size_t k = 0; k < v.size(); ++k) v[k] -= cfg.learning_rate * g[k];
      }
      epoch_loss += batch_loss.item() * static_cast<double>(end - start);
      ++step;
    }
    trace.push_back(epoch_loss / static_cast<double>(order.size()));
  }
  return trace;
}

// Fine-tune on one provider's pairs; the pre-trained model is left untouched.
inline PolicyModel finetune(const PolicyModel& pretrained, const std::vector<OrderSetPair>& pairs_j,
                            const TrainConfig& cfg, std::vector<double>* trace_out = nullptr) {
  for (const auto& p : pairs_j)
    if (p.provider != pairs_j.front().provider)
      throw UsageError("finetune: pairs mix providers " +
                       std::to_string(pairs_j.front().provider) + " and " +
                       std::to_string(p.provider));
  PolicyModel model = pretrained.clone();
  if (pairs_j.empty() || cfg.epochs == 0) {
    if (trace_out) trace_out->clear();
    return model;
  }
  auto trace = train(model, pairs_j, cfg);
  if (trace_out) *trace_out = std::move(trace);
  return model;
}

enum class DecodeMode { greedy, ancestral };

// Recursive decoding: one token at a time from the learned next-action
// distribution, stopping at SEP or after z tokens.
inline std::vector<int> sample_action_path(const PolicyModel& model, const std::vector<int>& prefix,
                                           int z, DecodeMode mode, std::uint64_t seed = 0) {
  if (z < 1) throw UsageError("sample_action_path: z must be >= 1");
  rng::Stream stream(seed, 0xdec0);
  std::vector<int> cur = prefix;
  std::vector<int> out;
  while (static_cast<int>(out.size()) < z) {
    if (static_cast<int>(cur.size()) > model.hp.context)
      cur.erase(cur.begin(), cur.end() - model.hp.context);
    auto dist = forward_next_distribution(model, cur);
    int token;
    if (mode == DecodeMode::greedy) {
      token = 0;
      for (int k = 1; k < static_cast<int>(dist.size()); ++k)
        if (dist[k] > dist[token]) token = k;  // ties to the lowest token id
    } else {
      token = stream.categorical(dist);
    }
    out.push_back(token);
    cur.push_back(token);
    if (token == Vocabulary::kSep) break;
  }
  return out;
}

// --- checkpoints: manifest.json + little-endian f32 weights.bin ---

inline void save_checkpoint(PolicyModel& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["format"] = "dcbpl-checkpoint-v1";
  manifest["hyperparams"] = model.hp;
  json tensors = json::array();
  std::vector<float> payload;
  for (auto& [name, t] : model.named_parameters()) {
    tensors.push_back(json{{"name", name},
                           {"rows", t->rows()},
                           {"cols", t->cols()},
                           {"dtype", "f32"},
                           {"offset", payload.size() * sizeof(float)}});
    // Quantize in place too, so the live model and a reload agree bit for bit.
    for (double& v : t->value_mut()) {
      float f = static_cast<float>(v);
      v = static_cast<double>(f);
      payload.push_back(f);
    }
  }
  manifest["tensors"] = tensors;
  manifest["total_bytes"] = payload.size() * sizeof(float);
  {
    std::ofstream mf(dir / "manifest.json");
    mf << manifest.dump(2) << "\n";
  }
  std::ofstream wf(dir / "weights.bin", std::ios::binary);
  wf.write(reinterpret_cast<const char*>(payload.data()),
           static_cast<std::streamsize>(payload.size() * sizeof(float)));
  if (!wf) throw CheckpointError("failed writing " + (dir / "weights.bin").string());
}

inline PolicyModel load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw CheckpointError("missing manifest: " + (dir / "manifest.json").string());
  json manifest = json::parse(mf);
  if (manifest.value("format", "") != "dcbpl-checkpoint-v1")
    throw CheckpointError("unknown checkpoint format");
  ModelHyperparams hp = manifest.at("hyperparams").get<ModelHyperparams>();
  PolicyModel model = init_model(hp, 0);

  std::ifstream wf(dir / "weights.bin", std::ios::binary | std::ios::ate);
  if (!wf) throw CheckpointError("missing weights: " + (dir / "weights.bin").string());
  auto file_bytes = static_cast<std::uint64_t>(wf.tellg());
  if (file_bytes != manifest.at("total_bytes").get<std::uint64_t>())
    throw CheckpointError("weights.bin size " + std::to_string(file_bytes) +
                          " does not match manifest total_bytes");
  wf.seekg(0);
  std::vector<float> payload(file_bytes / sizeof(float));
  wf.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(file_bytes));
  if (!wf) throw CheckpointError("truncated weights.bin");

  auto params = model.named_parameters();
  const json& tensors = manifest.at("tensors");
  if (tensors.size() != params.size())
    throw CheckpointError("manifest tensor count does not match architecture");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const json& entry = tensors[i];
    auto& [name, t] = params[i];
    if (entry.at("name").get<std::string>() != name ||
        entry.at("rows").get<int>() != t->rows() || entry.at("cols").get<int>() != t->cols())
      throw CheckpointError("manifest entry '" + entry.at("name").get<std::string>() +
                            "' does not match expected tensor '" + name + "' " + t->shape_str());
    std::uint64_t offset = entry.at("offset").get<std::uint64_t>() / sizeof(float);
    if (offset + t->size() > payload.size()) throw CheckpointError("tensor payload out of range");
    auto& v = t->value_mut();
    for (std::size_t k = 0; k < v.size(); ++k)
      v[k] = static_cast<double>(payload[offset + k]);
  }
  return model;
}

}  // namespace dcbpl::lcbm
