// SPDX-License-Identifier: Apache-2.0
//
// The MI-Gen network: a transformer encoder whose layer outputs are routed
// through position-aware modules (pad the token sequence to a square count,
// reshape to a 2-D grid, run multi-kernel same-convolutions, add the
// residual, flatten back), a causal transformer decoder over report tokens,
// the NLL training loss, and a CLS-token classification head.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "migen/bag.hpp"
#include "migen/tensor.hpp"
#include "migen/vocab.hpp"

namespace migen {

enum class PamMode { kHierarchical, kLastLayerOnly, kOff };

PamMode pam_mode_from_string(const std::string& s);
std::string to_string(PamMode mode);

struct ModelConfig {
  int n_layers = 3;  // encoder and decoder depth
  int n_heads = 4;
  int d_model = 512;
  int d_ff = 2048;
  int input_dim = 512;  // raw bag embedding width; projected when != d_model
  int vocab_size = 0;
  int max_report_len = 64;
  std::vector<int> pam_kernels{3, 7, 13};
  PamMode pam_mode = PamMode::kHierarchical;
  bool pam_depthwise = true;
  double dropout_rate = 0.0;
  int n_classes = 0;  // 0: no classifier head

  void validate() const;
};

struct AttentionParams {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct LayerNormParams {
  Tensor gamma, beta;
};

struct FfnParams {
  Tensor w1, b1, w2, b2;
};

struct EncoderLayerParams {
  AttentionParams attn;
  LayerNormParams ln1;
  FfnParams ffn;
  LayerNormParams ln2;
  std::vector<Tensor> pam_kernels;  // one per configured kernel size, may be empty
};

struct DecoderLayerParams {
  AttentionParams self_attn;
  LayerNormParams ln1;
  AttentionParams cross_attn;
  LayerNormParams ln2;
  FfnParams ffn;
  LayerNormParams ln3;
};

struct ModelParams {
  ModelConfig config;
  Tensor in_proj_w, in_proj_b;  // defined only when input_dim != d_model
  std::vector<EncoderLayerParams> encoder;
  std::vector<DecoderLayerParams> decoder;
  Tensor tok_emb;                   // [vocab, d_model]
  Tensor pos_table;                 // sinusoidal, constant, not a parameter
  Tensor out_proj_w, out_proj_b;    // [d_model, vocab], [vocab]
  Tensor cls_token, cls_w, cls_b;   // defined only when n_classes > 0

  // Visits every learnable tensor in a fixed order with a stable name.
  void for_each_param(const std::function<void(const std::string&, Tensor&)>& fn);
  void for_each_param(const std::function<void(const std::string&, const Tensor&)>& fn) const;
  std::size_t param_count() const;
  void zero_grad();
};

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

// Closed-form parameter count implied by a config.
std::size_t expected_param_count(const ModelConfig& cfg);

struct PadRecord {
  int original_len = 0;  // M
  int padded_len = 0;    // T, smallest square >= M
  int side = 0;          // sqrt(T)
};

// Pads an [M,l] sequence with zero rows to the next square count and
// reshapes it row-major to [side, side, l].
std::pair<Tensor, PadRecord> pad_to_square(const Tensor& e);

// PAM(E) = sum_k Conv_k(E_pad) + E_pad, flattened row-major and truncated
// back to the first M rows.
Tensor pam_forward(const Tensor& e, const std::vector<Tensor>& kernels,
                   bool depthwise);

// Runs the encoder over an already-projected [M,d_model] sequence and
// aggregates the decoder hidden state per pam_mode. When layer_outputs is
// non-null it receives every transformer layer output E_1..E_N.
Tensor encoder_core(const ModelParams& p, const Tensor& x,
                    std::mt19937_64* dropout_rng = nullptr,
                    std::vector<Tensor>* layer_outputs = nullptr);

// Full encoder: input projection (when configured) then encoder_core.
Tensor encoder_forward(const ModelParams& p, const Tensor& e0,
                       std::mt19937_64* dropout_rng = nullptr,
                       std::vector<Tensor>* layer_outputs = nullptr);

// Teacher-forced decoder pass: logits[t] depends only on prefix[0..t] and H.
Tensor decoder_forward(const ModelParams& p, const Tensor& h,
                       const TokenSeq& prefix,
                       std::mt19937_64* dropout_rng = nullptr);

// Mean NLL over non-pad target positions (thin wrapper over cross_entropy).
Tensor nll_loss(const Tensor& logits, const TokenSeq& targets, int pad_id);

// Teacher-forced loss for one bag: decoder input [BOS, y..], target [y.., EOS].
Tensor report_loss(const ModelParams& p, const InstanceBag& bag,
                   const TokenSeq& report_ids,
                   std::mt19937_64* dropout_rng = nullptr);

// CLS token prepended to the projected instance sequence; the encoded CLS
// cell feeds a linear classifier. Returns [1, n_classes] logits.
Tensor classify_logits(const ModelParams& p, const Tensor& e0,
                       std::mt19937_64* dropout_rng = nullptr);
Tensor classify_logits(const ModelParams& p, const InstanceBag& bag,
                       std::mt19937_64* dropout_rng = nullptr);

// Checkpoint: text header (config + vocab fingerprint) followed by named
// little-endian float64 parameter blobs; every shape is validated on load.
void save_checkpoint(const ModelParams& p, std::uint64_t vocab_fp,
                     const std::filesystem::path& file);
struct Checkpoint {
  ModelParams params;
  std::uint64_t vocab_fp = 0;
};
Checkpoint load_checkpoint(const std::filesystem::path& file);

}  // namespace migen
