#include "rlvr/policy.hpp"

#include "rlvr/rng.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <type_traits>

namespace rlvr {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;

constexpr double kInitStd = 0.02;
constexpr double kLayerNormEps = 1e-5;

Tensor gaussian(Shape shape, Rng& rng) {
  const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; i += 2) {
    // Box-Muller; avoids implementation-defined std::normal_distribution.
    const double u1 = 1.0 - uniform01(rng);
    const double u2 = uniform01(rng);
    const double r = std::sqrt(-2.0 * std::log(u1));
    v[i] = kInitStd * r * std::cos(2.0 * M_PI * u2);
    if (i + 1 < n) v[i + 1] = kInitStd * r * std::sin(2.0 * M_PI * u2);
  }
  return Tensor::from(std::move(shape), std::move(v));
}

Tensor clone_or_empty(const Tensor& t) { return t.defined() ? t.clone() : Tensor(); }

ConstMap as_matrix(const Tensor& t) {
  return ConstMap(t.data().data(), static_cast<Eigen::Index>(t.shape()[0]), static_cast<Eigen::Index>(t.shape()[1]));
}

void check_tokens(const ModelConfig& cfg, std::span<const int> tokens) {
  for (int t : tokens) {
    if (t < 0 || t >= cfg.vocab_size) {
      throw std::invalid_argument("token id " + std::to_string(t) + " outside vocabulary of size " +
                                  std::to_string(cfg.vocab_size));
    }
  }
}

void check_length(const ModelConfig& cfg, std::size_t length) {
  if (length > static_cast<std::size_t>(cfg.max_seq_len)) {
    throw std::invalid_argument("sequence length " + std::to_string(length) + " exceeds context length " +
                                std::to_string(cfg.max_seq_len));
  }
}

// Row-wise log-softmax of z / temperature.
void log_softmax_row(std::span<const double> z, double temperature, std::vector<double>& out) {
  out.resize(z.size());
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : z) mx = std::max(mx, v / temperature);
  double s = 0.0;
  for (double v : z) s += std::exp(v / temperature - mx);
  const double lse = mx + std::log(s);
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] / temperature - lse;
}

double entropy_of(std::span<const double> logp) {
  double h = 0.0;
  for (double lp : logp) h -= std::exp(lp) * lp;
  return std::clamp(h, 0.0, std::log(static_cast<double>(logp.size())));
}

// Nucleus in descending-probability order (ties by token id) and its mass.
std::pair<std::vector<int>, double> nucleus(std::span<const double> logp, double top_p) {
  std::vector<int> order(logp.size());
  std::iota(order.begin(), order.end(), 0);
  if (top_p >= 1.0) return {order, 1.0};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return logp[a] > logp[b]; });
  double mass = 0.0;
  std::size_t keep = 0;
  while (keep < order.size()) {
    mass += std::exp(logp[order[keep]]);
    ++keep;
    if (mass >= top_p) break;
  }
  order.resize(keep);
  return {order, mass};
}

// Log-probability of `token` under the temperature-scaled, top-p renormalized
// distribution; -inf when the token lies outside the nucleus.
double scored_logprob(std::span<const double> logp, int token, double top_p) {
  if (top_p >= 1.0) return logp[token];
  auto [set, mass] = nucleus(logp, top_p);
  if (std::find(set.begin(), set.end(), token) == set.end()) return -std::numeric_limits<double>::infinity();
  return logp[token] - std::log(mass);
}

void layer_norm_rows(const RowMat& x, const Tensor& gain, const Tensor& bias, RowMat& out) {
  const Eigen::Index rows = x.rows(), cols = x.cols();
  out.resize(rows, cols);
  auto g = gain.data();
  auto b = bias.data();
  for (Eigen::Index r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (Eigen::Index c = 0; c < cols; ++c) mu += x(r, c);
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (Eigen::Index c = 0; c < cols; ++c) var += (x(r, c) - mu) * (x(r, c) - mu);
    var /= static_cast<double>(cols);
    const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
    for (Eigen::Index c = 0; c < cols; ++c) out(r, c) = (x(r, c) - mu) * rstd * g[c] + b[c];
  }
}

// Incremental no-grad decoder for one sequence family. Keys/values of every
// processed position are cached per sequence and per layer.
class CachedDecoder {
 public:
  explicit CachedDecoder(const PolicyParams& p) : p_(p), d_(p.config.d_model), heads_(p.config.n_heads) {}

  struct Cache {
    std::vector<RowMat> keys, values;  // per layer, [positions x d]
    std::size_t length = 0;
  };

  Cache empty_cache() const {
    Cache c;
    c.keys.assign(p_.layers.size(), RowMat(0, d_));
    c.values.assign(p_.layers.size(), RowMat(0, d_));
    return c;
  }

  // Feeds one new token per sequence (caches[i] receives tokens[i]) and
  // returns the logits of the last fed position, [B x V].
  RowMat step(std::span<Cache*> caches, std::span<const int> tokens) {
    const Eigen::Index batch = static_cast<Eigen::Index>(tokens.size());
    RowMat x(batch, d_);
    auto tok = p_.token_embedding.data();
    auto pos = p_.position_embedding.data();
    for (Eigen::Index b = 0; b < batch; ++b) {
      const std::size_t position = caches[b]->length;
      for (int c = 0; c < d_; ++c) {
        x(b, c) = tok[static_cast<std::size_t>(tokens[b]) * d_ + c] + pos[position * d_ + c];
      }
    }
    RowMat h, q, k, v, att(batch, d_), hidden;
    const int hd = d_ / heads_;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
    std::vector<double> scores;
    for (std::size_t l = 0; l < p_.layers.size(); ++l) {
      const auto& L = p_.layers[l];
      layer_norm_rows(x, L.ln1_gain, L.ln1_bias, h);
      q.noalias() = h * as_matrix(L.attn_q);
      k.noalias() = h * as_matrix(L.attn_k);
      v.noalias() = h * as_matrix(L.attn_v);
      for (Eigen::Index b = 0; b < batch; ++b) {
        Cache& cache = *caches[b];
        RowMat& K = cache.keys[l];
        RowMat& V = cache.values[l];
        const Eigen::Index n = K.rows() + 1;
        K.conservativeResize(n, Eigen::NoChange);
        V.conservativeResize(n, Eigen::NoChange);
        K.row(n - 1) = k.row(b);
        V.row(n - 1) = v.row(b);
        scores.resize(static_cast<std::size_t>(n));
        for (int hh = 0; hh < heads_; ++hh) {
          const int c0 = hh * hd;
          double mx = -std::numeric_limits<double>::infinity();
          for (Eigen::Index j = 0; j < n; ++j) {
            double s = 0.0;
            for (int c = 0; c < hd; ++c) s += q(b, c0 + c) * K(j, c0 + c);
            s *= inv_sqrt;
            scores[j] = s;
            mx = std::max(mx, s);
          }
          double z = 0.0;
          for (Eigen::Index j = 0; j < n; ++j) {
            scores[j] = std::exp(scores[j] - mx);
            z += scores[j];
          }
          for (int c = 0; c < hd; ++c) att(b, c0 + c) = 0.0;
          for (Eigen::Index j = 0; j < n; ++j) {
            const double w = scores[j] / z;
            for (int c = 0; c < hd; ++c) att(b, c0 + c) += w * V(j, c0 + c);
          }
        }
      }
      x.noalias() += att * as_matrix(L.attn_out);
      layer_norm_rows(x, L.ln2_gain, L.ln2_bias, h);
      hidden.noalias() = h * as_matrix(L.mlp_in);
      hidden = hidden.unaryExpr([](double t) { return gelu_value(t); });
      x.noalias() += hidden * as_matrix(L.mlp_out);
    }
    for (Eigen::Index b = 0; b < batch; ++b) ++caches[b]->length;
    layer_norm_rows(x, p_.final_gain, p_.final_bias, h);
    return h * as_matrix(p_.head);
  }

 private:
  const PolicyParams& p_;
  int d_;
  int heads_;
};

}  // namespace

// ---------------------------------------------------------------------------
// configuration

void ModelConfig::validate() const {
  if (vocab_size < 1) throw std::invalid_argument("model vocab_size must be >= 1");
  if (d_model < 1 || n_layers < 1 || n_heads < 1 || max_seq_len < 1) {
    throw std::invalid_argument("model dimensions must be positive");
  }
  if (d_model % n_heads != 0) throw std::invalid_argument("d_model must be divisible by n_heads");
}

void SamplingConfig::validate() const {
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be > 0");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw std::invalid_argument("top_p must lie in (0, 1]");
  if (max_new_tokens < 1) throw std::invalid_argument("max_new_tokens must be >= 1");
}

// ---------------------------------------------------------------------------
// PolicyParams

PolicyParams::PolicyParams(const PolicyParams& other)
    : config(other.config),
      token_embedding(clone_or_empty(other.token_embedding)),
      position_embedding(clone_or_empty(other.position_embedding)),
      final_gain(clone_or_empty(other.final_gain)),
      final_bias(clone_or_empty(other.final_bias)),
      head(clone_or_empty(other.head)) {
  layers.reserve(other.layers.size());
  for (const auto& L : other.layers) {
    layers.push_back({L.ln1_gain.clone(), L.ln1_bias.clone(), L.attn_q.clone(), L.attn_k.clone(), L.attn_v.clone(),
                      L.attn_out.clone(), L.ln2_gain.clone(), L.ln2_bias.clone(), L.mlp_in.clone(),
                      L.mlp_out.clone()});
  }
}

PolicyParams& PolicyParams::operator=(const PolicyParams& other) {
  if (this != &other) *this = PolicyParams(other);
  return *this;
}

PolicyParams PolicyParams::initialize(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(derive_seed(seed, {0x706f6c696379ULL}));
  const auto V = static_cast<std::size_t>(config.vocab_size);
  const auto d = static_cast<std::size_t>(config.d_model);
  const auto L = static_cast<std::size_t>(config.max_seq_len);
  PolicyParams p;
  p.config = config;
  p.token_embedding = gaussian({V, d}, rng);
  p.position_embedding = gaussian({L, d}, rng);
  for (int i = 0; i < config.n_layers; ++i) {
    LayerParams layer;
    layer.ln1_gain = Tensor::filled({d}, 1.0);
    layer.ln1_bias = Tensor::zeros({d});
    layer.attn_q = gaussian({d, d}, rng);
    layer.attn_k = gaussian({d, d}, rng);
    layer.attn_v = gaussian({d, d}, rng);
    layer.attn_out = gaussian({d, d}, rng);
    layer.ln2_gain = Tensor::filled({d}, 1.0);
    layer.ln2_bias = Tensor::zeros({d});
    layer.mlp_in = gaussian({d, 4 * d}, rng);
    layer.mlp_out = gaussian({4 * d, d}, rng);
    p.layers.push_back(std::move(layer));
  }
  p.final_gain = Tensor::filled({d}, 1.0);
  p.final_bias = Tensor::zeros({d});
  p.head = gaussian({d, V}, rng);
  return p;
}

std::vector<NamedTensor> PolicyParams::named() const {
  std::vector<NamedTensor> out = {{"token_embedding", token_embedding}, {"position_embedding", position_embedding}};
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& L = layers[i];
    const std::string p = "layers." + std::to_string(i) + ".";
    out.push_back({p + "ln1.gain", L.ln1_gain});
    out.push_back({p + "ln1.bias", L.ln1_bias});
    out.push_back({p + "attn.q", L.attn_q});
    out.push_back({p + "attn.k", L.attn_k});
    out.push_back({p + "attn.v", L.attn_v});
    out.push_back({p + "attn.out", L.attn_out});
    out.push_back({p + "ln2.gain", L.ln2_gain});
    out.push_back({p + "ln2.bias", L.ln2_bias});
    out.push_back({p + "mlp.in", L.mlp_in});
    out.push_back({p + "mlp.out", L.mlp_out});
  }
  out.push_back({"final_norm.gain", final_gain});
  out.push_back({"final_norm.bias", final_bias});
  out.push_back({"head", head});
  return out;
}

std::size_t PolicyParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : named()) n += t.tensor.size();
  return n;
}

void PolicyParams::set_requires_grad(bool on) {
  for (auto& t : named()) t.tensor.set_requires_grad(on);
}

void PolicyParams::zero_grad() {
  for (auto& t : named()) t.tensor.zero_grad();
}

bool PolicyParams::bitwise_equal(const PolicyParams& other) const {
  if (!(config == other.config)) return false;
  const auto a = named();
  const auto b = other.named();
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].tensor.shape() != b[i].tensor.shape()) return false;
    auto x = a[i].tensor.data();
    auto y = b[i].tensor.data();
    for (std::size_t j = 0; j < x.size(); ++j) {
      if (std::bit_cast<std::uint64_t>(x[j]) != std::bit_cast<std::uint64_t>(y[j])) return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// forward

Tensor forward_logits_packed(const PolicyParams& params, std::span<const std::vector<int>> sequences) {
  const auto& cfg = params.config;
  std::vector<int> ids, positions;
  std::vector<std::size_t> lengths;
  for (const auto& seq : sequences) {
    if (seq.empty()) throw std::invalid_argument("forward: empty sequence");
    check_length(cfg, seq.size());
    check_tokens(cfg, seq);
    ids.insert(ids.end(), seq.begin(), seq.end());
    for (std::size_t t = 0; t < seq.size(); ++t) positions.push_back(static_cast<int>(t));
    lengths.push_back(seq.size());
  }
  const auto heads = static_cast<std::size_t>(cfg.n_heads);
  Tensor x = add(embedding(params.token_embedding, ids), embedding(params.position_embedding, positions));
  for (const auto& L : params.layers) {
    Tensor h = layer_norm(x, L.ln1_gain, L.ln1_bias, kLayerNormEps);
    Tensor att = causal_attention(matmul(h, L.attn_q), matmul(h, L.attn_k), matmul(h, L.attn_v), lengths, heads);
    x = add(x, matmul(att, L.attn_out));
    Tensor h2 = layer_norm(x, L.ln2_gain, L.ln2_bias, kLayerNormEps);
    x = add(x, matmul(gelu(matmul(h2, L.mlp_in)), L.mlp_out));
  }
  return matmul(layer_norm(x, params.final_gain, params.final_bias, kLayerNormEps), params.head);
}

Tensor forward_logits(const PolicyParams& params, std::span<const int> tokens) {
  std::vector<std::vector<int>> one = {std::vector<int>(tokens.begin(), tokens.end())};
  return forward_logits_packed(params, one);
}

Tensor response_logprobs(const PolicyParams& params, std::span<const ScoredPair> pairs, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be > 0");
  std::vector<std::vector<int>> inputs;
  std::vector<std::size_t> rows;
  std::vector<int> targets;
  std::size_t row0 = 0;
  for (const auto& pr : pairs) {
    if (pr.prompt.empty()) throw std::invalid_argument("scoring requires a non-empty prompt");
    if (pr.response.empty()) throw std::invalid_argument("scoring requires a non-empty response");
    check_length(params.config, pr.prompt.size() + pr.response.size());
    std::vector<int> seq(pr.prompt.begin(), pr.prompt.end());
    seq.insert(seq.end(), pr.response.begin(), pr.response.end() - 1);
    for (std::size_t t = 0; t < pr.response.size(); ++t) {
      rows.push_back(row0 + pr.prompt.size() - 1 + t);
      targets.push_back(pr.response[t]);
    }
    row0 += seq.size();
    inputs.push_back(std::move(seq));
  }
  Tensor logits = forward_logits_packed(params, inputs);
  if (temperature != 1.0) logits = scale(logits, 1.0 / temperature);
  return pick(log_softmax(logits), rows, targets);
}

std::vector<double> response_logprobs_nograd(const PolicyParams& params, std::span<const ScoredPair> pairs,
                                             double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be > 0");
  const int d = params.config.d_model;
  const int heads = params.config.n_heads;
  const int hd = d / heads;
  std::vector<std::vector<int>> seqs;
  std::vector<std::size_t> start;
  std::size_t rows = 0, total = 0;
  for (const auto& pr : pairs) {
    if (pr.prompt.empty()) throw std::invalid_argument("scoring requires a non-empty prompt");
    std::vector<int> seq(pr.prompt.begin(), pr.prompt.end());
    seq.insert(seq.end(), pr.response.begin(), pr.response.end());
    check_tokens(params.config, seq);
    check_length(params.config, seq.size());
    start.push_back(rows);
    rows += seq.size();
    total += pr.response.size();
    seqs.push_back(std::move(seq));
  }
  const auto N = static_cast<Eigen::Index>(rows);
  RowMat x(N, d);
  auto tok = params.token_embedding.data();
  auto pos = params.position_embedding.data();
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    for (std::size_t t = 0; t < seqs[i].size(); ++t) {
      const auto r = static_cast<Eigen::Index>(start[i] + t);
      for (int c = 0; c < d; ++c) x(r, c) = tok[static_cast<std::size_t>(seqs[i][t]) * d + c] + pos[t * d + c];
    }
  }
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  RowMat h, q, k, v, att(N, d), hidden;
  std::vector<double> scores;
  for (const auto& L : params.layers) {
    layer_norm_rows(x, L.ln1_gain, L.ln1_bias, h);
    q.noalias() = h * as_matrix(L.attn_q);
    k.noalias() = h * as_matrix(L.attn_k);
    v.noalias() = h * as_matrix(L.attn_v);
    for (std::size_t i = 0; i < seqs.size(); ++i) {
      const auto s0 = static_cast<Eigen::Index>(start[i]);
      const auto T = static_cast<Eigen::Index>(seqs[i].size());
      for (int hh = 0; hh < heads; ++hh) {
        const int c0 = hh * hd;
        for (Eigen::Index t = 0; t < T; ++t) {
          scores.resize(static_cast<std::size_t>(t + 1));
          double mx = -std::numeric_limits<double>::infinity();
          for (Eigen::Index j = 0; j <= t; ++j) {
            double sc = 0.0;
            for (int c = 0; c < hd; ++c) sc += q(s0 + t, c0 + c) * k(s0 + j, c0 + c);
            sc *= inv_sqrt;
            scores[j] = sc;
            mx = std::max(mx, sc);
          }
          double z = 0.0;
          for (Eigen::Index j = 0; j <= t; ++j) {
            scores[j] = std::exp(scores[j] - mx);
            z += scores[j];
          }
          for (int c = 0; c < hd; ++c) att(s0 + t, c0 + c) = 0.0;
          for (Eigen::Index j = 0; j <= t; ++j) {
            const double w = scores[j] / z;
            for (int c = 0; c < hd; ++c) att(s0 + t, c0 + c) += w * v(s0 + j, c0 + c);
          }
        }
      }
    }
    x.noalias() += att * as_matrix(L.attn_out);
    layer_norm_rows(x, L.ln2_gain, L.ln2_bias, h);
    hidden.noalias() = h * as_matrix(L.mlp_in);
    hidden = hidden.unaryExpr([](double t) { return gelu_value(t); });
    x.noalias() += hidden * as_matrix(L.mlp_out);
  }
  layer_norm_rows(x, params.final_gain, params.final_bias, h);
  const RowMat logits = h * as_matrix(params.head);

  std::vector<double> out;
  out.reserve(total);
  std::vector<double> row_logp;
  for (std::size_t i = 0; i < seqs.size(); ++i) {
    const std::size_t plen = pairs[i].prompt.size();
    for (std::size_t t = plen; t < seqs[i].size(); ++t) {
      const auto row = logits.row(static_cast<Eigen::Index>(start[i] + t - 1));
      log_softmax_row(std::span<const double>(row.data(), static_cast<std::size_t>(row.size())), temperature,
                      row_logp);
      out.push_back(row_logp[static_cast<std::size_t>(seqs[i][t])]);
    }
  }
  return out;
}

std::vector<double> logprobs_under(const PolicyParams& params, std::span<const int> prompt,
                                   std::span<const int> response, const SamplingConfig& cfg) {
  cfg.validate();
  NoGradGuard no_grad;
  const double temperature = cfg.greedy ? 1.0 : cfg.temperature;
  if (cfg.top_p >= 1.0 || cfg.greedy) {
    const ScoredPair pair{prompt, response};
    Tensor lp = response_logprobs(params, std::span(&pair, 1), temperature);
    return {lp.data().begin(), lp.data().end()};
  }
  check_length(params.config, prompt.size() + response.size());
  std::vector<int> seq(prompt.begin(), prompt.end());
  seq.insert(seq.end(), response.begin(), response.end());
  seq.pop_back();
  Tensor logits = forward_logits(params, seq);
  const std::size_t V = logits.cols();
  std::vector<double> row_logp, out;
  for (std::size_t t = 0; t < response.size(); ++t) {
    const std::size_t row = prompt.size() - 1 + t;
    log_softmax_row(logits.data().subspan(row * V, V), temperature, row_logp);
    out.push_back(scored_logprob(row_logp, response[t], cfg.top_p));
  }
  return out;
}

std::vector<double> logprobs_under(const PolicyParams& params, std::span<const int> prompt,
                                   std::span<const int> response) {
  return logprobs_under(params, prompt, response, SamplingConfig{});
}

// ---------------------------------------------------------------------------
// sampling

std::vector<SampledResponse> sample_responses(const PolicyParams& params, std::span<const int> prompt,
                                              const SamplingConfig& cfg, std::span<const std::uint64_t> seeds) {
  cfg.validate();
  if (prompt.empty()) throw std::invalid_argument("sampling requires a non-empty prompt");
  check_tokens(params.config, prompt);
  check_length(params.config, prompt.size() + static_cast<std::size_t>(cfg.max_new_tokens) - 1);
  if (cfg.stop_token < 0 || cfg.stop_token >= params.config.vocab_size) {
    throw std::invalid_argument("stop token outside vocabulary");
  }

  CachedDecoder decoder(params);
  CachedDecoder::Cache prompt_cache = decoder.empty_cache();
  RowMat prompt_logits;
  {
    CachedDecoder::Cache* cp = &prompt_cache;
    for (int tok : prompt) prompt_logits = decoder.step(std::span(&cp, 1), std::span(&tok, 1));
  }

  const std::size_t n = seeds.size();
  std::vector<SampledResponse> out(n);
  std::vector<Rng> rngs;
  rngs.reserve(n);
  for (auto s : seeds) rngs.emplace_back(s);
  std::vector<CachedDecoder::Cache> caches(n, prompt_cache);
  std::vector<std::size_t> active(n);
  std::iota(active.begin(), active.end(), 0);
  const double temperature = cfg.greedy ? 1.0 : cfg.temperature;
  const std::size_t V = static_cast<std::size_t>(params.config.vocab_size);

  RowMat logits = prompt_logits.replicate(static_cast<Eigen::Index>(n), 1);
  std::vector<double> logp;
  for (int t = 0; t < cfg.max_new_tokens && !active.empty(); ++t) {
    std::vector<std::size_t> still;
    std::vector<int> fed;
    std::vector<CachedDecoder::Cache*> fed_caches;
    for (std::size_t a = 0; a < active.size(); ++a) {
      const std::size_t i = active[a];
      const std::span<const double> z(logits.data() + static_cast<std::size_t>(a) * V, V);
      log_softmax_row(z, temperature, logp);
      int token = 0;
      double token_logp = 0.0;
      if (cfg.greedy) {
        token = static_cast<int>(std::max_element(z.begin(), z.end()) - z.begin());
        token_logp = logp[token];
      } else {
        auto [set, mass] = nucleus(logp, cfg.top_p);
        const double u = uniform01(rngs[i]) * mass;
        double cum = 0.0;
        token = set.back();
        for (int id : set) {
          cum += std::exp(logp[id]);
          if (u < cum) {
            token = id;
            break;
          }
        }
        token_logp = cfg.top_p >= 1.0 ? logp[token] : logp[token] - std::log(mass);
      }
      SampledResponse& r = out[i];
      r.tokens.push_back(token);
      r.logprobs.push_back(token_logp);
      r.entropies.push_back(entropy_of(logp));
      if (token == cfg.stop_token) continue;
      if (t + 1 == cfg.max_new_tokens) {
        r.truncated = true;
        continue;
      }
      still.push_back(i);
      fed.push_back(token);
      fed_caches.push_back(&caches[i]);
    }
    active = std::move(still);
    if (!active.empty()) logits = decoder.step(fed_caches, fed);
  }
  return out;
}

SampledResponse sample_response(const PolicyParams& params, std::span<const int> prompt, const SamplingConfig& cfg,
                                std::uint64_t seed) {
  return std::move(sample_responses(params, prompt, cfg, std::span(&seed, 1)).front());
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {

constexpr char kMagic[8] = {'R', 'L', 'V', 'R', 'C', 'K', 'P', 'T'};

template <class T>
void put(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <class T>
T get(std::istream& in) {
  std::array<unsigned char, sizeof(T)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<T>(bytes);
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
  const auto n = get<std::uint32_t>(in);
  if (n > (1u << 20)) throw std::runtime_error("checkpoint string too long");
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw std::runtime_error("checkpoint truncated");
  return s;
}

}  // namespace

void write_checkpoint(std::ostream& out, const PolicyParams& params, const CheckpointMeta& meta) {
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  const auto& c = params.config;
  for (int v : {c.vocab_size, c.d_model, c.n_layers, c.n_heads, c.max_seq_len}) put<std::uint32_t>(out, v);
  put<std::uint64_t>(out, meta.master_seed);
  put<std::uint64_t>(out, meta.step);
  put<std::uint64_t>(out, meta.rng_state);
  put_string(out, meta.vocabulary);
  const auto arrays = params.named();
  put<std::uint32_t>(out, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& a : arrays) {
    put_string(out, a.name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(a.tensor.dim()));
    for (std::size_t d : a.tensor.shape()) put<std::uint64_t>(out, d);
    for (double v : a.tensor.data()) put<double>(out, v);
  }
  if (!out) throw std::runtime_error("failed writing checkpoint");
}

std::pair<PolicyParams, CheckpointMeta> read_checkpoint(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || !std::equal(magic, magic + 8, kMagic)) throw std::runtime_error("not a checkpoint file");
  const auto version = get<std::uint32_t>(in);
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  }
  ModelConfig cfg;
  cfg.vocab_size = static_cast<int>(get<std::uint32_t>(in));
  cfg.d_model = static_cast<int>(get<std::uint32_t>(in));
  cfg.n_layers = static_cast<int>(get<std::uint32_t>(in));
  cfg.n_heads = static_cast<int>(get<std::uint32_t>(in));
  cfg.max_seq_len = static_cast<int>(get<std::uint32_t>(in));
  cfg.validate();
  CheckpointMeta meta;
  meta.master_seed = get<std::uint64_t>(in);
  meta.step = get<std::uint64_t>(in);
  meta.rng_state = get<std::uint64_t>(in);
  meta.vocabulary = get_string(in);

  PolicyParams params = PolicyParams::initialize(cfg, 0);
  auto expected = params.named();
  const auto count = get<std::uint32_t>(in);
  if (count != expected.size()) throw std::runtime_error("checkpoint array count does not match architecture");
  for (auto& slot : expected) {
    const std::string name = get_string(in);
    if (name != slot.name) throw std::runtime_error("checkpoint array '" + name + "' where '" + slot.name + "' expected");
    const auto ndim = get<std::uint32_t>(in);
    Shape shape;
    for (std::uint32_t i = 0; i < ndim; ++i) shape.push_back(static_cast<std::size_t>(get<std::uint64_t>(in)));
    if (shape != slot.tensor.shape()) throw std::runtime_error("checkpoint array '" + name + "' has wrong shape");
    auto data = slot.tensor.mutable_data();
    for (double& v : data) v = get<double>(in);
  }
  return {std::move(params), std::move(meta)};
}

void save_checkpoint(const std::filesystem::path& path, const PolicyParams& params, const CheckpointMeta& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_checkpoint(out, params, meta);
}

std::pair<PolicyParams, CheckpointMeta> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

}  // namespace rlvr
