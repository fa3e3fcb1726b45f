#pragma once

// Tiny pre-norm decoder-only transformer used as the policy, its rollout-time
// copy and the frozen reference.

#include "rlvr/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace rlvr {

struct ModelConfig {
  int vocab_size = 0;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int max_seq_len = 256;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct LayerParams {
  Tensor ln1_gain, ln1_bias;
  Tensor attn_q, attn_k, attn_v, attn_out;  // [d x d]
  Tensor ln2_gain, ln2_bias;
  Tensor mlp_in;   // [d x 4d]
  Tensor mlp_out;  // [4d x d]
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Copies are deep: a copied PolicyParams never shares storage with its source.
struct PolicyParams {
  ModelConfig config;
  Tensor token_embedding;     // [V x d]
  Tensor position_embedding;  // [L_max x d]
  std::vector<LayerParams> layers;
  Tensor final_gain, final_bias;
  Tensor head;  // [d x V], untied from the embedding

  PolicyParams() = default;
  PolicyParams(const PolicyParams& other);
  PolicyParams& operator=(const PolicyParams& other);
  PolicyParams(PolicyParams&&) noexcept = default;
  PolicyParams& operator=(PolicyParams&&) noexcept = default;

  // Gaussian(0, 0.02) weights, unit layer-norm gains, zero biases.
  static PolicyParams initialize(const ModelConfig& config, std::uint64_t seed);

  // Fixed order shared by the optimizer, checkpoints and gradient checks.
  // The tensors are handles onto this object's storage.
  std::vector<NamedTensor> named() const;
  std::size_t parameter_count() const;
  void set_requires_grad(bool on);
  void zero_grad();
  bool bitwise_equal(const PolicyParams& other) const;
};

struct SamplingConfig {
  double temperature = 1.0;
  double top_p = 1.0;
  int max_new_tokens = 8;
  int stop_token = 0;
  bool greedy = false;  // argmax decoding; the temperature -> 0 limit

  void validate() const;
};

struct SampledResponse {
  std::vector<int> tokens;
  std::vector<double> logprobs;   // log-prob of each token under the distribution sampled from
  std::vector<double> entropies;  // entropy of the temperature-scaled distribution before top-p
  bool truncated = false;
};

// Logits for every position of a token sequence: [T x V].
Tensor forward_logits(const PolicyParams& params, std::span<const int> tokens);
// Logits for several sequences packed row-wise: [sum(T_i) x V].
Tensor forward_logits_packed(const PolicyParams& params, std::span<const std::vector<int>> sequences);

struct ScoredPair {
  std::span<const int> prompt;
  std::span<const int> response;
};

// Log-probabilities of every response token given its prompt and preceding
// response tokens, all pairs concatenated in order. Differentiable w.r.t.
// the params when a Tape is active and the params require grad.
Tensor response_logprobs(const PolicyParams& params, std::span<const ScoredPair> pairs, double temperature = 1.0);

// Same values as response_logprobs without gradient support.
std::vector<double> response_logprobs_nograd(const PolicyParams& params, std::span<const ScoredPair> pairs,
                                             double temperature = 1.0);

// Evaluation-only scoring under the given temperature and top-p, matching
// the distribution sample_response draws from.
std::vector<double> logprobs_under(const PolicyParams& params, std::span<const int> prompt,
                                   std::span<const int> response, const SamplingConfig& cfg);
std::vector<double> logprobs_under(const PolicyParams& params, std::span<const int> prompt,
                                   std::span<const int> response);

// One response per seed, decoded together with a per-sequence key/value cache.
std::vector<SampledResponse> sample_responses(const PolicyParams& params, std::span<const int> prompt,
                                              const SamplingConfig& cfg, std::span<const std::uint64_t> seeds);
SampledResponse sample_response(const PolicyParams& params, std::span<const int> prompt, const SamplingConfig& cfg,
                                std::uint64_t seed);

// ---- checkpoints ----------------------------------------------------------
// Little-endian binary: magic, format version, architecture, run metadata,
// vocabulary, then every named array (name, dims, float64 data) in named() order.

struct CheckpointMeta {
  std::uint64_t master_seed = 0;
  std::uint64_t step = 0;
  std::uint64_t rng_state = 0;
  std::string vocabulary;  // Vocabulary::spec()
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& out, const PolicyParams& params, const CheckpointMeta& meta);
std::pair<PolicyParams, CheckpointMeta> read_checkpoint(std::istream& in);
void save_checkpoint(const std::filesystem::path& path, const PolicyParams& params, const CheckpointMeta& meta);
std::pair<PolicyParams, CheckpointMeta> load_checkpoint(const std::filesystem::path& path);

}  // namespace rlvr
