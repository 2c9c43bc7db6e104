#include "promptmix/model.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "promptmix/container.hpp"
#include "promptmix/errors.hpp"
#include "promptmix/ops.hpp"
#include "promptmix/optim.hpp"

namespace promptmix {

void ModelConfig::validate() const {
  if (vocab_size <= 0 || d_emb <= 0 || n_layers <= 0 || n_heads <= 0 || d_ff <= 0 || max_positions <= 0) {
    throw InputError("model config: every size must be positive");
  }
  if (d_emb % n_heads != 0) {
    throw InputError("model config: d_emb " + std::to_string(d_emb) + " is not divisible by n_heads " +
                     std::to_string(n_heads));
  }
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) throw InputError("model config: dropout_rate must lie in [0, 1)");
}

std::size_t ForwardInput::first_text_row() const {
  for (std::size_t i = 0; i < loss_mask.size(); ++i) {
    if (loss_mask[i]) return i;
  }
  return loss_mask.size();
}

void ForwardInput::scored_targets(std::vector<TokenId>& targets, std::vector<bool>& ignore) const {
  const std::size_t n = length();
  targets.assign(n, 0);
  ignore.assign(n, true);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    if (loss_mask[i] && loss_mask[i + 1]) {
      targets[i] = tokens[i + 1];
      ignore[i] = false;
    }
  }
}

Tensor causal_bias(std::size_t length) {
  Tensor bias = Tensor::zeros({length, length});
  auto b = bias.data();
  for (std::size_t i = 0; i < length; ++i)
    for (std::size_t j = i + 1; j < length; ++j) b[i * length + j] = kMaskedBias;
  return bias;
}

namespace {

Tensor normal_tensor(Shape shape, double stddev, std::mt19937_64& rng) {
  Tensor t = Tensor::zeros(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using ConstVectorMap = Eigen::Map<const Eigen::VectorXd>;

ConstMatrixMap matrix_of(const Tensor& t) {
  return ConstMatrixMap(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
ConstVectorMap vector_of(const Tensor& t) {
  return ConstVectorMap(t.data().data(), static_cast<Eigen::Index>(t.numel()));
}

}  // namespace

LanguageModel::LanguageModel(ModelConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const auto d = static_cast<std::size_t>(config_.d_emb);
  const auto ff = static_cast<std::size_t>(config_.d_ff);
  const double residual_std = 0.02 / std::sqrt(2.0 * config_.n_layers);
  token_embedding_ = normal_tensor({static_cast<std::size_t>(config_.vocab_size), d}, 0.02, rng);
  position_embedding_ = normal_tensor({static_cast<std::size_t>(config_.max_positions), d}, 0.01, rng);
  for (int l = 0; l < config_.n_layers; ++l) {
    Layer layer;
    layer.ln1_gain = Tensor::filled({d}, 1.0);
    layer.ln1_shift = Tensor::zeros({d});
    layer.w_qkv = normal_tensor({d, 3 * d}, 0.02, rng);
    layer.b_qkv = Tensor::zeros({3 * d});
    layer.w_out = normal_tensor({d, d}, residual_std, rng);
    layer.b_out = Tensor::zeros({d});
    layer.ln2_gain = Tensor::filled({d}, 1.0);
    layer.ln2_shift = Tensor::zeros({d});
    layer.w_ff1 = normal_tensor({d, ff}, 0.02, rng);
    layer.b_ff1 = Tensor::zeros({ff});
    layer.w_ff2 = normal_tensor({ff, d}, residual_std, rng);
    layer.b_ff2 = Tensor::zeros({d});
    layers_.push_back(std::move(layer));
  }
  final_gain_ = Tensor::filled({d}, 1.0);
  final_shift_ = Tensor::zeros({d});
}

std::vector<NamedParameter> LanguageModel::named_parameters() const {
  std::vector<NamedParameter> out;
  out.push_back({"token_embedding", token_embedding_});
  out.push_back({"position_embedding", position_embedding_});
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& L = layers_[l];
    const std::string p = "layer" + std::to_string(l) + ".";
    out.push_back({p + "ln1.gain", L.ln1_gain});
    out.push_back({p + "ln1.shift", L.ln1_shift});
    out.push_back({p + "attn.w_qkv", L.w_qkv});
    out.push_back({p + "attn.b_qkv", L.b_qkv});
    out.push_back({p + "attn.w_out", L.w_out});
    out.push_back({p + "attn.b_out", L.b_out});
    out.push_back({p + "ln2.gain", L.ln2_gain});
    out.push_back({p + "ln2.shift", L.ln2_shift});
    out.push_back({p + "ff.w1", L.w_ff1});
    out.push_back({p + "ff.b1", L.b_ff1});
    out.push_back({p + "ff.w2", L.w_ff2});
    out.push_back({p + "ff.b2", L.b_ff2});
  }
  out.push_back({"final.gain", final_gain_});
  out.push_back({"final.shift", final_shift_});
  return out;
}

std::vector<Tensor> LanguageModel::parameters() const {
  std::vector<Tensor> out;
  for (auto& np : named_parameters()) out.push_back(np.tensor);
  return out;
}

std::size_t LanguageModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& np : named_parameters()) n += np.tensor.numel();
  return n;
}

void LanguageModel::set_trainable(bool on) {
  for (auto& np : named_parameters()) np.tensor.set_requires_grad(on);
}

namespace {

std::string config_text(const ModelConfig& c) {
  std::ostringstream out;
  out.precision(17);
  out << "vocab_size=" << c.vocab_size << ";d_emb=" << c.d_emb << ";n_layers=" << c.n_layers
      << ";n_heads=" << c.n_heads << ";d_ff=" << c.d_ff << ";max_positions=" << c.max_positions
      << ";dropout_rate=" << c.dropout_rate;
  return out.str();
}

}  // namespace

std::string LanguageModel::digest() const {
  Sha256 sha;
  sha.update(config_text(config_));
  for (const auto& np : named_parameters()) {
    sha.update(np.name);
    sha.update(shape_string(np.tensor.shape()));
    sha.update(np.tensor.data());
  }
  return sha.hex_digest();
}

Tensor LanguageModel::embed_tokens(std::span<const TokenId> ids) const { return gather_rows(token_embedding_, ids); }

void LanguageModel::save(const std::filesystem::path& path) const {
  Container c;
  c.kind = "language-model";
  c.set("vocab_size", std::to_string(config_.vocab_size));
  c.set("d_emb", std::to_string(config_.d_emb));
  c.set("n_layers", std::to_string(config_.n_layers));
  c.set("n_heads", std::to_string(config_.n_heads));
  c.set("d_ff", std::to_string(config_.d_ff));
  c.set("max_positions", std::to_string(config_.max_positions));
  c.set("dropout_rate", format_double(config_.dropout_rate));
  c.set("digest", digest());
  for (const auto& np : named_parameters()) {
    auto values = np.tensor.data();
    c.arrays.push_back({np.name, np.tensor.shape(), std::vector<double>(values.begin(), values.end())});
  }
  write_container(c, path);
}

LanguageModel LanguageModel::load(const std::filesystem::path& path) {
  const Container c = read_container(path, "language-model");
  ModelConfig config;
  try {
    config.vocab_size = std::stoi(c.get("vocab_size"));
    config.d_emb = std::stoi(c.get("d_emb"));
    config.n_layers = std::stoi(c.get("n_layers"));
    config.n_heads = std::stoi(c.get("n_heads"));
    config.d_ff = std::stoi(c.get("d_ff"));
    config.max_positions = std::stoi(c.get("max_positions"));
    config.dropout_rate = std::stod(c.get("dropout_rate"));
  } catch (const std::logic_error& e) {
    throw FormatError(path.string() + ": bad model config header: " + e.what());
  }
  LanguageModel model(config, 0);
  for (auto& np : model.named_parameters()) {
    const NamedArray& a = c.array(np.name);
    if (a.shape != np.tensor.shape()) {
      throw FormatError(path.string() + ": parameter " + np.name + " has shape " + shape_string(a.shape) +
                        ", expected " + shape_string(np.tensor.shape()));
    }
    std::copy(a.values.begin(), a.values.end(), np.tensor.data().begin());
  }
  if (model.digest() != c.get("digest")) {
    throw FormatError(path.string() + ": stored digest does not match parameter contents");
  }
  return model;
}

// Forward-pass implementation shared by training, probing and decode prefill.
class ModelInternals {
 public:
  struct Capture {
    AttentionProbe* probe = nullptr;
    // Per layer [L x 3d] projections (values only) for decode prefill.
    std::vector<Tensor>* qkv = nullptr;
  };

  static void validate(const LanguageModel& model, const ForwardInput& in) {
    const auto& cfg = model.config_;
    const std::size_t L = in.length();
    if (L == 0) throw InputError("forward: empty input");
    if (L > static_cast<std::size_t>(cfg.max_positions)) {
      throw InputError("forward: sequence of " + std::to_string(L) + " rows exceeds model capacity of " +
                       std::to_string(cfg.max_positions) + " positions");
    }
    if (in.input_rows.rank() != 2 || in.input_rows.rows() != L ||
        in.input_rows.cols() != static_cast<std::size_t>(cfg.d_emb)) {
      throw ShapeError("forward: input rows " + shape_string(in.input_rows.shape()) + " do not match " +
                       std::to_string(L) + " positions x d_emb " + std::to_string(cfg.d_emb));
    }
    if (in.attention_bias.shape() != Shape{L, L}) {
      throw ShapeError("forward: attention bias " + shape_string(in.attention_bias.shape()) + " for " +
                       std::to_string(L) + " rows");
    }
    if (in.loss_mask.size() != L || in.tokens.size() != L) {
      throw ShapeError("forward: loss mask / token list length differs from " + std::to_string(L) + " rows");
    }
    for (auto id : in.position_ids) {
      if (id < 0 || id >= cfg.max_positions) {
        throw InputError("forward: position id " + std::to_string(id) + " outside [0, " +
                         std::to_string(cfg.max_positions) + ")");
      }
    }
    auto b = in.attention_bias.data();
    for (std::size_t i = 0; i < L; ++i)
      for (std::size_t j = i + 1; j < L; ++j)
        if (!is_masked(b[i * L + j])) {
          throw InputError("forward: attention bias does not block future position (" + std::to_string(i) + ", " +
                           std::to_string(j) + ")");
        }
  }

  // Final-layer-normalised hidden states for the stacked batch.
  static Tensor hidden(const LanguageModel& model, std::span<const ForwardInput> batch, Capture capture,
                       std::mt19937_64* dropout_rng) {
    const auto& cfg = model.config_;
    const std::size_t heads = static_cast<std::size_t>(cfg.n_heads);
    const double drop = dropout_rng ? cfg.dropout_rate : 0.0;

    std::vector<std::int32_t> positions;
    std::vector<Tensor> parts;
    std::vector<Tensor> biases;
    std::vector<std::size_t> lengths;
    for (const auto& in : batch) {
      validate(model, in);
      biases.push_back(in.attention_bias);
      lengths.push_back(in.length());
      positions.insert(positions.end(), in.position_ids.begin(), in.position_ids.end());
      parts.push_back(in.input_rows);
    }
    Tensor x = parts.size() == 1 ? parts.front() : concat_rows(parts);
    x = add(x, gather_rows(model.position_embedding_, positions));
    if (drop > 0.0) x = dropout(x, drop, *dropout_rng);

    if (capture.probe) capture.probe->probabilities.assign(model.layers_.size(), {});
    if (capture.qkv) capture.qkv->clear();

    for (std::size_t l = 0; l < model.layers_.size(); ++l) {
      const auto& layer = model.layers_[l];
      Tensor h = layer_norm(x, layer.ln1_gain, layer.ln1_shift);
      Tensor qkv = add_bias(matmul(h, layer.w_qkv), layer.b_qkv);
      if (capture.qkv) capture.qkv->push_back(qkv);

      std::vector<Tensor> probs;
      Tensor attn = multi_head_attention(qkv, biases, lengths, heads, capture.probe ? &probs : nullptr);
      if (capture.probe) capture.probe->probabilities[l] = std::move(probs);
      attn = add_bias(matmul(attn, layer.w_out), layer.b_out);
      if (drop > 0.0) attn = dropout(attn, drop, *dropout_rng);
      x = add(x, attn);

      Tensor h2 = layer_norm(x, layer.ln2_gain, layer.ln2_shift);
      Tensor ff = gelu(add_bias(matmul(h2, layer.w_ff1), layer.b_ff1));
      ff = add_bias(matmul(ff, layer.w_ff2), layer.b_ff2);
      if (drop > 0.0) ff = dropout(ff, drop, *dropout_rng);
      x = add(x, ff);
    }
    return layer_norm(x, model.final_gain_, model.final_shift_);
  }

  // Incremental decoding with cached keys/values; no tape.
  class Session {
   public:
    Session(const LanguageModel& model, const ForwardInput& plan) : model_(&model) {
      std::vector<Tensor> qkv;
      Tensor h = hidden(model, std::span(&plan, 1), Capture{nullptr, &qkv}, nullptr);
      const std::size_t L = plan.length();
      const std::size_t d = static_cast<std::size_t>(model.config_.d_emb);
      for (const auto& t : qkv) {
        auto m = matrix_of(t);
        keys_.emplace_back(m.middleCols(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d)));
        values_.emplace_back(m.middleCols(static_cast<Eigen::Index>(2 * d), static_cast<Eigen::Index>(d)));
      }
      length_ = L;
      last_position_ = plan.position_ids.back();
      auto hm = matrix_of(h);
      logits_ = matrix_of(model.token_embedding_) * hm.row(static_cast<Eigen::Index>(L - 1)).transpose();
    }

    const Eigen::VectorXd& logits() const { return logits_; }
    std::int32_t last_position() const { return last_position_; }

    void append(TokenId token) {
      const auto& m = *model_;
      const auto& cfg = m.config_;
      const Eigen::Index d = cfg.d_emb;
      const Eigen::Index heads = cfg.n_heads;
      const Eigen::Index dh = d / heads;
      const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
      const std::int32_t pos = last_position_ + 1;

      Eigen::RowVectorXd x = matrix_of(m.token_embedding_).row(token) + matrix_of(m.position_embedding_).row(pos);
      const Eigen::Index rows = static_cast<Eigen::Index>(length_) + 1;
      for (std::size_t l = 0; l < m.layers_.size(); ++l) {
        const auto& layer = m.layers_[l];
        Eigen::RowVectorXd h = norm(x, layer.ln1_gain, layer.ln1_shift);
        Eigen::RowVectorXd qkv = h * matrix_of(layer.w_qkv) + vector_of(layer.b_qkv).transpose();
        auto& K = keys_[l];
        auto& V = values_[l];
        K.conservativeResize(rows, Eigen::NoChange);
        V.conservativeResize(rows, Eigen::NoChange);
        K.row(rows - 1) = qkv.segment(d, d);
        V.row(rows - 1) = qkv.segment(2 * d, d);
        Eigen::RowVectorXd attended(d);
        for (Eigen::Index hd = 0; hd < heads; ++hd) {
          Eigen::VectorXd scores =
              K.middleCols(hd * dh, dh) * qkv.segment(hd * dh, dh).transpose() * inv_sqrt;
          const double peak = scores.maxCoeff();
          Eigen::VectorXd p = (scores.array() - peak).exp().matrix();
          p /= p.sum();
          attended.segment(hd * dh, dh) = p.transpose() * V.middleCols(hd * dh, dh);
        }
        x += attended * matrix_of(layer.w_out) + vector_of(layer.b_out).transpose();
        Eigen::RowVectorXd h2 = norm(x, layer.ln2_gain, layer.ln2_shift);
        Eigen::RowVectorXd ff = h2 * matrix_of(layer.w_ff1) + vector_of(layer.b_ff1).transpose();
        for (auto& v : ff) {
          const double t = std::tanh(0.7978845608028654 * (v + 0.044715 * v * v * v));
          v = 0.5 * v * (1.0 + t);
        }
        x += ff * matrix_of(layer.w_ff2) + vector_of(layer.b_ff2).transpose();
      }
      Eigen::RowVectorXd out = norm(x, m.final_gain_, m.final_shift_);
      logits_ = matrix_of(m.token_embedding_) * out.transpose();
      ++length_;
      last_position_ = pos;
    }

   private:
    static Eigen::RowVectorXd norm(const Eigen::RowVectorXd& x, const Tensor& gain, const Tensor& shift) {
      const double n = static_cast<double>(x.size());
      double mean = 0.0;
      for (Eigen::Index c = 0; c < x.size(); ++c) mean += x[c];
      mean /= n;
      double var = 0.0;
      for (Eigen::Index c = 0; c < x.size(); ++c) var += (x[c] - mean) * (x[c] - mean);
      var /= n;
      const double inv_std = 1.0 / std::sqrt(var + 1e-5);
      Eigen::RowVectorXd out(x.size());
      auto g = gain.data();
      auto s = shift.data();
      for (Eigen::Index c = 0; c < x.size(); ++c) out[c] = (x[c] - mean) * inv_std * g[c] + s[c];
      return out;
    }

    const LanguageModel* model_;
    std::vector<RowMatrix> keys_;
    std::vector<RowMatrix> values_;
    std::size_t length_ = 0;
    std::int32_t last_position_ = 0;
    Eigen::VectorXd logits_;
  };
};

Tensor forward(const LanguageModel& model, const ForwardInput& input, AttentionProbe* probe) {
  Tensor h = ModelInternals::hidden(model, std::span(&input, 1), {probe, nullptr}, nullptr);
  return matmul_nt(h, model.token_embedding());
}

Tensor batch_loss(const LanguageModel& model, std::span<const ForwardInput> batch, std::mt19937_64* dropout_rng) {
  if (batch.empty()) throw InputError("batch_loss: empty batch");
  Tensor h = ModelInternals::hidden(model, batch, {}, dropout_rng);
  std::vector<std::int32_t> rows;
  std::vector<TokenId> targets;
  std::vector<TokenId> seq_targets;
  std::vector<bool> seq_ignore;
  std::size_t offset = 0;
  for (const auto& in : batch) {
    in.scored_targets(seq_targets, seq_ignore);
    for (std::size_t i = 0; i < in.length(); ++i) {
      if (seq_ignore[i]) continue;
      rows.push_back(static_cast<std::int32_t>(offset + i));
      targets.push_back(seq_targets[i]);
    }
    offset += in.length();
  }
  if (rows.empty()) throw InputError("batch_loss: no scored text positions in batch");
  Tensor scored = gather_rows(h, rows);
  Tensor logits = matmul_nt(scored, model.token_embedding());
  return cross_entropy_next_token(logits, targets, std::vector<bool>(targets.size(), false));
}

ForwardInput text_input(const LanguageModel& model, std::span<const TokenId> ids) {
  if (ids.empty()) throw InputError("text_input: empty token list");
  ForwardInput in;
  in.input_rows = model.embed_tokens(ids);
  in.position_ids.resize(ids.size());
  std::iota(in.position_ids.begin(), in.position_ids.end(), 1);
  in.attention_bias = causal_bias(ids.size());
  in.loss_mask.assign(ids.size(), true);
  in.tokens.assign(ids.begin(), ids.end());
  return in;
}

TrainingLog pretrain_lm(LanguageModel& model, const TokenizedDataset& corpus, const PretrainOptions& options) {
  if (corpus.sequences.empty()) throw InputError("pretrain_lm: empty corpus");
  if (options.batch_size <= 0) throw InputError("pretrain_lm: batch_size must be positive");
  const int vocab = model.config().vocab_size;
  for (std::size_t s = 0; s < corpus.sequences.size(); ++s) {
    const auto& seq = corpus.sequences[s];
    if (seq.size() < 2) throw InputError("pretrain_lm: sequence " + std::to_string(s) + " has fewer than 2 tokens");
    for (auto id : seq) {
      if (id < 0 || id >= vocab) {
        throw InputError("pretrain_lm: token id " + std::to_string(id) + " in sequence " + std::to_string(s) +
                         " is outside the model vocabulary of " + std::to_string(vocab));
      }
    }
  }
  TrainingLog log;
  if (options.epochs <= 0) return log;

  model.set_trainable(true);
  auto params = model.parameters();
  AdamState adam;
  adam.learning_rate = options.learning_rate;
  std::mt19937_64 rng(options.seed);
  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    const auto order = seeded_permutation(corpus.sequences.size(), rng);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(options.batch_size)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(options.batch_size));
      Tape tape;
      TapeScope scope(tape);
      std::vector<ForwardInput> batch;
      for (std::size_t i = start; i < stop; ++i) batch.push_back(text_input(model, corpus.sequences[order[i]]));
      Tensor loss = batch_loss(model, batch, &rng);
      tape.backward(loss);
      adam_step(params, adam);
      total += loss.item();
      ++batches;
    }
    log.epoch_loss.push_back(total / static_cast<double>(batches));
  }
  model.set_trainable(false);
  return log;
}

double perplexity(const LanguageModel& model, std::span<const TokenId> ids) {
  if (ids.size() < 2) throw InputError("perplexity: need at least 2 tokens");
  ForwardInput in = text_input(model, ids);
  Tensor logits = forward(model, in);
  std::vector<TokenId> targets;
  std::vector<bool> ignore;
  in.scored_targets(targets, ignore);
  Tensor nll = cross_entropy_next_token(logits, targets, ignore);
  return std::exp(nll.item());
}

void DecodeConfig::validate(int vocab_size) const {
  if (k <= 0 || k > vocab_size) {
    throw InputError("decode: k=" + std::to_string(k) + " must lie in [1, " + std::to_string(vocab_size) + "]");
  }
  if (!(temperature > 0.0)) throw InputError("decode: temperature must be positive");
  if (max_new_tokens <= 0) throw InputError("decode: max_new_tokens must be positive");
}

TokenId pick_token(std::span<const double> logits, const DecodeConfig& config, std::mt19937_64& rng) {
  if (config.strategy == DecodeStrategy::kGreedy) {
    return static_cast<TokenId>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  }
  std::vector<TokenId> order(logits.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(config.k), logits.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](TokenId a, TokenId b) { return logits[a] > logits[b] || (logits[a] == logits[b] && a < b); });
  std::vector<double> weights(k);
  const double peak = logits[order[0]];
  double total = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    weights[i] = std::exp((logits[order[i]] - peak) / config.temperature);
    total += weights[i];
  }
  // 53 random bits -> [0, 1); independent of the standard library's distributions.
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53 * total;
  double running = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    running += weights[i];
    if (u < running) return order[i];
  }
  return order[k - 1];
}

std::vector<Generation> generate_samples(const LanguageModel& model, const ForwardInput& plan,
                                         const DecodeConfig& config, int count) {
  config.validate(model.config().vocab_size);
  if (plan.length() == 0 || plan.first_text_row() == plan.length()) {
    throw InputError("generate: plan must end with a non-empty text prefix");
  }
  const ModelInternals::Session prefilled(model, plan);
  std::mt19937_64 rng(config.seed);
  std::vector<Generation> out;
  for (int s = 0; s < count; ++s) {
    ModelInternals::Session session = prefilled;
    Generation gen;
    for (int step = 0; step < config.max_new_tokens; ++step) {
      if (session.last_position() + 1 >= model.config().max_positions) {
        gen.truncated = true;
        break;
      }
      const auto& logits = session.logits();
      const TokenId next = pick_token(std::span<const double>(logits.data(), static_cast<std::size_t>(logits.size())),
                                      config, rng);
      if (next == config.eos_id) {
        gen.ended = true;
        break;
      }
      gen.tokens.push_back(next);
      if (step + 1 < config.max_new_tokens) session.append(next);
    }
    out.push_back(std::move(gen));
  }
  return out;
}

Generation generate(const LanguageModel& model, const ForwardInput& plan, const DecodeConfig& config) {
  return generate_samples(model, plan, config, 1).front();
}

}  // namespace promptmix
