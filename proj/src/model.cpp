// SPDX-License-Identifier: Apache-2.0

#include "migen/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace migen {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kMaskValue = -1e30;

Tensor xavier(std::vector<int> shape, int fan_in, int fan_out, std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / (fan_in + fan_out));
  Tensor t = Tensor::zeros(std::move(shape), true);
  std::uniform_real_distribution<double> u(-bound, bound);
  for (double& v : t.data()) v = u(rng);
  return t;
}

AttentionParams init_attention(int d, std::mt19937_64& rng) {
  AttentionParams a;
  a.wq = xavier({d, d}, d, d, rng);
  a.bq = Tensor::zeros({d}, true);
  a.wk = xavier({d, d}, d, d, rng);
  a.bk = Tensor::zeros({d}, true);
  a.wv = xavier({d, d}, d, d, rng);
  a.bv = Tensor::zeros({d}, true);
  a.wo = xavier({d, d}, d, d, rng);
  a.bo = Tensor::zeros({d}, true);
  return a;
}

LayerNormParams init_layer_norm(int d) {
  LayerNormParams ln;
  ln.gamma = Tensor::constant({d}, 1.0);
  ln.gamma.node()->requires_grad = true;
  ln.beta = Tensor::zeros({d}, true);
  return ln;
}

FfnParams init_ffn(int d, int d_ff, std::mt19937_64& rng) {
  FfnParams f;
  f.w1 = xavier({d, d_ff}, d, d_ff, rng);
  f.b1 = Tensor::zeros({d_ff}, true);
  f.w2 = xavier({d_ff, d}, d_ff, d, rng);
  f.b2 = Tensor::zeros({d}, true);
  return f;
}

Tensor init_pam_kernel(int k, int channels, bool depthwise, std::mt19937_64& rng) {
  if (depthwise) return xavier({k, k, channels}, k * k, k * k, rng);
  return xavier({k, k, channels, channels}, k * k * channels, k * k * channels, rng);
}

Tensor sinusoid_table(int max_len, int d) {
  Tensor t = Tensor::zeros({max_len, d});
  for (int pos = 0; pos < max_len; ++pos) {
    for (int i = 0; i < d; i += 2) {
      const double angle = pos / std::pow(10000.0, static_cast<double>(i) / d);
      t.data()[static_cast<std::size_t>(pos) * d + i] = std::sin(angle);
      if (i + 1 < d) t.data()[static_cast<std::size_t>(pos) * d + i + 1] = std::cos(angle);
    }
  }
  return t;
}

// Kernels configured for encoder layer `layer` (0-based), given pam_mode.
bool layer_has_pam(const ModelConfig& cfg, int layer) {
  switch (cfg.pam_mode) {
    case PamMode::kHierarchical: return true;
    case PamMode::kLastLayerOnly: return layer == cfg.n_layers - 1;
    case PamMode::kOff: return false;
  }
  return false;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add(matmul(x, w), b);
}

Tensor maybe_dropout(const Tensor& x, double rate, std::mt19937_64* rng) {
  if (rng == nullptr || rate == 0.0) return x;
  return dropout(x, rate, *rng);
}

// Multi-head attention; `mask` (optional) is added to every head's score
// matrix before the softmax.
Tensor attention(const AttentionParams& a, int n_heads, const Tensor& q_in,
                 const Tensor& kv_in, const Tensor* mask) {
  const int d = q_in.dim(1);
  const int d_head = d / n_heads;
  Tensor q = linear(q_in, a.wq, a.bq);
  Tensor k = linear(kv_in, a.wk, a.bk);
  Tensor v = linear(kv_in, a.wv, a.bv);
  std::vector<Tensor> heads;
  heads.reserve(n_heads);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(d_head));
  for (int h = 0; h < n_heads; ++h) {
    Tensor qh = slice_cols(q, h * d_head, d_head);
    Tensor kh = slice_cols(k, h * d_head, d_head);
    Tensor vh = slice_cols(v, h * d_head, d_head);
    Tensor scores = scale(matmul(qh, transpose(kh)), inv_sqrt);
    if (mask != nullptr) scores = add(scores, *mask);
    Tensor weights = softmax(scores, 1);
    heads.push_back(matmul(weights, vh));
  }
  Tensor ctx = n_heads == 1 ? heads[0] : concat_cols(heads);
  return linear(ctx, a.wo, a.bo);
}

Tensor ffn_forward(const FfnParams& f, const Tensor& x) {
  return linear(relu(linear(x, f.w1, f.b1)), f.w2, f.b2);
}

Tensor causal_mask(int len) {
  Tensor m = Tensor::zeros({len, len});
  for (int i = 0; i < len; ++i) {
    for (int j = i + 1; j < len; ++j) {
      m.data()[static_cast<std::size_t>(i) * len + j] = kMaskValue;
    }
  }
  return m;
}

}  // namespace

PamMode pam_mode_from_string(const std::string& s) {
  if (s == "hierarchical") return PamMode::kHierarchical;
  if (s == "last_layer_only") return PamMode::kLastLayerOnly;
  if (s == "off") return PamMode::kOff;
  throw std::invalid_argument("unknown pam_mode '" + s +
                              "' (hierarchical|last_layer_only|off)");
}

std::string to_string(PamMode mode) {
  switch (mode) {
    case PamMode::kHierarchical: return "hierarchical";
    case PamMode::kLastLayerOnly: return "last_layer_only";
    case PamMode::kOff: return "off";
  }
  return "?";
}

void ModelConfig::validate() const {
  if (n_layers < 1) throw std::invalid_argument("config: n_layers must be >= 1");
  if (n_heads < 1 || d_model % n_heads != 0) {
    throw std::invalid_argument("config: d_model " + std::to_string(d_model) +
                                " must be divisible by n_heads " +
                                std::to_string(n_heads));
  }
  if (vocab_size < 4) throw std::invalid_argument("config: vocab_size must cover the specials");
  if (max_report_len < 2) throw std::invalid_argument("config: max_report_len must be >= 2");
  for (int k : pam_kernels) {
    if (k < 1 || k % 2 == 0) {
      throw std::invalid_argument("config: pam kernel sizes must be odd, got " +
                                  std::to_string(k));
    }
  }
  if (pam_mode != PamMode::kOff && pam_kernels.empty()) {
    throw std::invalid_argument("config: pam_mode requires at least one kernel");
  }
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
    throw std::invalid_argument("config: dropout_rate must be in [0,1)");
  }
}

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  ModelParams p;
  p.config = cfg;
  std::mt19937_64 rng(seed);
  const int d = cfg.d_model;
  if (cfg.input_dim != d) {
    p.in_proj_w = xavier({cfg.input_dim, d}, cfg.input_dim, d, rng);
    p.in_proj_b = Tensor::zeros({d}, true);
  }
  for (int i = 0; i < cfg.n_layers; ++i) {
    EncoderLayerParams layer;
    layer.attn = init_attention(d, rng);
    layer.ln1 = init_layer_norm(d);
    layer.ffn = init_ffn(d, cfg.d_ff, rng);
    layer.ln2 = init_layer_norm(d);
    if (layer_has_pam(cfg, i)) {
      for (int k : cfg.pam_kernels) {
        layer.pam_kernels.push_back(init_pam_kernel(k, d, cfg.pam_depthwise, rng));
      }
    }
    p.encoder.push_back(std::move(layer));
  }
  for (int i = 0; i < cfg.n_layers; ++i) {
    DecoderLayerParams layer;
    layer.self_attn = init_attention(d, rng);
    layer.ln1 = init_layer_norm(d);
    layer.cross_attn = init_attention(d, rng);
    layer.ln2 = init_layer_norm(d);
    layer.ffn = init_ffn(d, cfg.d_ff, rng);
    layer.ln3 = init_layer_norm(d);
    p.decoder.push_back(std::move(layer));
  }
  p.tok_emb = xavier({cfg.vocab_size, d}, cfg.vocab_size, d, rng);
  p.pos_table = sinusoid_table(cfg.max_report_len, d);
  p.out_proj_w = xavier({d, cfg.vocab_size}, d, cfg.vocab_size, rng);
  p.out_proj_b = Tensor::zeros({cfg.vocab_size}, true);
  if (cfg.n_classes > 0) {
    p.cls_token = Tensor::randn({1, d}, rng, 0.02, true);
    p.cls_w = xavier({d, cfg.n_classes}, d, cfg.n_classes, rng);
    p.cls_b = Tensor::zeros({cfg.n_classes}, true);
  }
  return p;
}

namespace {

template <typename Params, typename Fn>
void visit_params(Params& p, const Fn& fn) {
  const auto& cfg = p.config;
  auto attn = [&fn](const std::string& prefix, auto& a) {
    fn(prefix + ".wq", a.wq);
    fn(prefix + ".bq", a.bq);
    fn(prefix + ".wk", a.wk);
    fn(prefix + ".bk", a.bk);
    fn(prefix + ".wv", a.wv);
    fn(prefix + ".bv", a.bv);
    fn(prefix + ".wo", a.wo);
    fn(prefix + ".bo", a.bo);
  };
  auto norm = [&fn](const std::string& prefix, auto& ln) {
    fn(prefix + ".gamma", ln.gamma);
    fn(prefix + ".beta", ln.beta);
  };
  auto ffn = [&fn](const std::string& prefix, auto& f) {
    fn(prefix + ".w1", f.w1);
    fn(prefix + ".b1", f.b1);
    fn(prefix + ".w2", f.w2);
    fn(prefix + ".b2", f.b2);
  };
  if (p.in_proj_w.defined()) {
    fn("in_proj.w", p.in_proj_w);
    fn("in_proj.b", p.in_proj_b);
  }
  for (std::size_t i = 0; i < p.encoder.size(); ++i) {
    const std::string base = "enc" + std::to_string(i);
    auto& layer = p.encoder[i];
    attn(base + ".attn", layer.attn);
    norm(base + ".ln1", layer.ln1);
    ffn(base + ".ffn", layer.ffn);
    norm(base + ".ln2", layer.ln2);
    for (std::size_t j = 0; j < layer.pam_kernels.size(); ++j) {
      fn(base + ".pam.k" + std::to_string(cfg.pam_kernels[j]), layer.pam_kernels[j]);
    }
  }
  for (std::size_t i = 0; i < p.decoder.size(); ++i) {
    const std::string base = "dec" + std::to_string(i);
    auto& layer = p.decoder[i];
    attn(base + ".self", layer.self_attn);
    norm(base + ".ln1", layer.ln1);
    attn(base + ".cross", layer.cross_attn);
    norm(base + ".ln2", layer.ln2);
    ffn(base + ".ffn", layer.ffn);
    norm(base + ".ln3", layer.ln3);
  }
  fn("tok_emb", p.tok_emb);
  fn("out_proj.w", p.out_proj_w);
  fn("out_proj.b", p.out_proj_b);
  if (p.cls_token.defined()) {
    fn("cls.token", p.cls_token);
    fn("cls.w", p.cls_w);
    fn("cls.b", p.cls_b);
  }
}

}  // namespace

void ModelParams::for_each_param(
    const std::function<void(const std::string&, Tensor&)>& fn) {
  visit_params(*this, fn);
}

void ModelParams::for_each_param(
    const std::function<void(const std::string&, const Tensor&)>& fn) const {
  visit_params(*this, fn);
}

std::size_t ModelParams::param_count() const {
  std::size_t n = 0;
  for_each_param([&n](const std::string&, const Tensor& t) { n += t.numel(); });
  return n;
}

void ModelParams::zero_grad() {
  for_each_param([](const std::string&, Tensor& t) { t.zero_grad(); });
}

std::size_t expected_param_count(const ModelConfig& cfg) {
  const std::size_t d = cfg.d_model, ff = cfg.d_ff, v = cfg.vocab_size;
  const std::size_t attn = 4 * (d * d + d);
  const std::size_t norm = 2 * d;
  const std::size_t ffn = d * ff + ff + ff * d + d;
  std::size_t pam_layers = 0;
  for (int i = 0; i < cfg.n_layers; ++i) pam_layers += layer_has_pam(cfg, i) ? 1 : 0;
  std::size_t pam = 0;
  for (int k : cfg.pam_kernels) {
    pam += cfg.pam_depthwise ? static_cast<std::size_t>(k) * k * d
                             : static_cast<std::size_t>(k) * k * d * d;
  }
  std::size_t total = 0;
  if (cfg.input_dim != cfg.d_model) total += static_cast<std::size_t>(cfg.input_dim) * d + d;
  total += cfg.n_layers * (attn + 2 * norm + ffn);  // encoder
  total += pam_layers * pam;
  total += cfg.n_layers * (2 * attn + 3 * norm + ffn);  // decoder
  total += v * d;          // token embedding
  total += d * v + v;      // output projection
  if (cfg.n_classes > 0) total += d + d * cfg.n_classes + cfg.n_classes;
  return total;
}

std::pair<Tensor, PadRecord> pad_to_square(const Tensor& e) {
  if (e.rank() != 2) throw std::invalid_argument("pad_to_square: [M,l] tensor expected");
  const int m = e.dim(0), l = e.dim(1);
  int side = static_cast<int>(std::sqrt(static_cast<double>(m)));
  while (side * side < m) ++side;
  while (side > 1 && (side - 1) * (side - 1) >= m) --side;
  PadRecord rec{m, side * side, side};
  Tensor grid = reshape(pad_rows(e, rec.padded_len), {side, side, l});
  return {grid, rec};
}

Tensor pam_forward(const Tensor& e, const std::vector<Tensor>& kernels,
                   bool depthwise) {
  if (kernels.empty()) return e;
  auto [grid, rec] = pad_to_square(e);
  Tensor acc;
  for (const Tensor& k : kernels) {
    Tensor c = conv2d_same(grid, k, depthwise);
    acc = acc.defined() ? add(acc, c) : c;
  }
  Tensor out = add(acc, grid);
  Tensor flat = reshape(out, {rec.padded_len, e.dim(1)});
  return rec.padded_len == rec.original_len ? flat
                                            : slice_rows(flat, 0, rec.original_len);
}

namespace {

Tensor encoder_layer_forward(const EncoderLayerParams& layer, int n_heads,
                             double drop, std::mt19937_64* rng, const Tensor& x) {
  Tensor a = maybe_dropout(attention(layer.attn, n_heads, x, x, nullptr), drop, rng);
  Tensor h = layer_norm(add(x, a), layer.ln1.gamma, layer.ln1.beta, kLnEps);
  Tensor f = maybe_dropout(ffn_forward(layer.ffn, h), drop, rng);
  return layer_norm(add(h, f), layer.ln2.gamma, layer.ln2.beta, kLnEps);
}

}  // namespace

Tensor encoder_core(const ModelParams& p, const Tensor& x0, std::mt19937_64* rng,
                    std::vector<Tensor>* layer_outputs) {
  const auto& cfg = p.config;
  Tensor x = x0;
  Tensor h;
  for (int i = 0; i < cfg.n_layers; ++i) {
    x = encoder_layer_forward(p.encoder[i], cfg.n_heads, cfg.dropout_rate, rng, x);
    if (layer_outputs) layer_outputs->push_back(x);
    Tensor contrib;
    switch (cfg.pam_mode) {
      case PamMode::kHierarchical:
        contrib = pam_forward(x, p.encoder[i].pam_kernels, cfg.pam_depthwise);
        break;
      case PamMode::kLastLayerOnly:
        if (i == cfg.n_layers - 1) {
          contrib = pam_forward(x, p.encoder[i].pam_kernels, cfg.pam_depthwise);
        }
        break;
      case PamMode::kOff:
        if (i == cfg.n_layers - 1) contrib = x;
        break;
    }
    if (contrib.defined()) h = h.defined() ? add(h, contrib) : contrib;
  }
  return h;
}

Tensor encoder_forward(const ModelParams& p, const Tensor& e0, std::mt19937_64* rng,
                       std::vector<Tensor>* layer_outputs) {
  if (e0.rank() != 2 || e0.dim(1) != p.config.input_dim) {
    throw std::invalid_argument("encoder_forward: expected [M," +
                                std::to_string(p.config.input_dim) + "], got " +
                                shape_str(e0.shape()));
  }
  Tensor x = p.in_proj_w.defined() ? linear(e0, p.in_proj_w, p.in_proj_b) : e0;
  return encoder_core(p, x, rng, layer_outputs);
}

Tensor decoder_forward(const ModelParams& p, const Tensor& h,
                       const TokenSeq& prefix, std::mt19937_64* rng) {
  const auto& cfg = p.config;
  const int n = static_cast<int>(prefix.size());
  if (n < 1) throw std::logic_error("decoder_forward: empty prefix");
  if (n > cfg.max_report_len) {
    throw std::logic_error("decoder_forward: prefix length " + std::to_string(n) +
                           " exceeds max_report_len " +
                           std::to_string(cfg.max_report_len));
  }
  Tensor x = scale(embedding(p.tok_emb, prefix), std::sqrt(static_cast<double>(cfg.d_model)));
  x = add(x, slice_rows(p.pos_table, 0, n));
  x = maybe_dropout(x, cfg.dropout_rate, rng);
  Tensor mask = causal_mask(n);
  for (const auto& layer : p.decoder) {
    Tensor a = maybe_dropout(attention(layer.self_attn, cfg.n_heads, x, x, &mask),
                             cfg.dropout_rate, rng);
    x = layer_norm(add(x, a), layer.ln1.gamma, layer.ln1.beta, kLnEps);
    Tensor c = maybe_dropout(attention(layer.cross_attn, cfg.n_heads, x, h, nullptr),
                             cfg.dropout_rate, rng);
    x = layer_norm(add(x, c), layer.ln2.gamma, layer.ln2.beta, kLnEps);
    Tensor f = maybe_dropout(ffn_forward(layer.ffn, x), cfg.dropout_rate, rng);
    x = layer_norm(add(x, f), layer.ln3.gamma, layer.ln3.beta, kLnEps);
  }
  return linear(x, p.out_proj_w, p.out_proj_b);
}

Tensor nll_loss(const Tensor& logits, const TokenSeq& targets, int pad_id) {
  return cross_entropy(logits, targets, pad_id);
}

Tensor report_loss(const ModelParams& p, const InstanceBag& bag,
                   const TokenSeq& report_ids, std::mt19937_64* rng) {
  if (report_ids.size() < 2 || report_ids.front() != Vocab::kBos ||
      report_ids.back() != Vocab::kEos) {
    throw std::invalid_argument("report_loss: encoded report must be BOS..EOS");
  }
  Tensor h = encoder_forward(p, bag_matrix(bag), rng);
  TokenSeq input(report_ids.begin(), report_ids.end() - 1);
  TokenSeq target(report_ids.begin() + 1, report_ids.end());
  Tensor logits = decoder_forward(p, h, input, rng);
  return nll_loss(logits, target, Vocab::kPad);
}

Tensor classify_logits(const ModelParams& p, const Tensor& e0, std::mt19937_64* rng) {
  if (p.config.n_classes <= 0 || !p.cls_token.defined()) {
    throw std::logic_error("classify_logits: model was built without a classifier head");
  }
  Tensor x = p.in_proj_w.defined() ? linear(e0, p.in_proj_w, p.in_proj_b) : e0;
  x = concat_rows({p.cls_token, x});
  Tensor h = encoder_core(p, x, rng);
  return linear(slice_rows(h, 0, 1), p.cls_w, p.cls_b);
}

Tensor classify_logits(const ModelParams& p, const InstanceBag& bag,
                       std::mt19937_64* rng) {
  return classify_logits(p, bag_matrix(bag), rng);
}

// ---- checkpoint I/O ----

static_assert(std::endian::native == std::endian::little,
              "checkpoints are little-endian; big-endian hosts are unsupported");

namespace {

constexpr const char* kCkptMagic = "MIGEN-CKPT-V1";

std::string kernels_to_string(const std::vector<int>& ks) {
  std::string s;
  for (std::size_t i = 0; i < ks.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(ks[i]);
  }
  return s;
}

std::vector<int> kernels_from_string(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoi(item));
  }
  return out;
}

}  // namespace

void save_checkpoint(const ModelParams& p, std::uint64_t vocab_fp,
                     const std::filesystem::path& file) {
  std::ofstream os(file, std::ios::binary);
  if (!os) throw std::runtime_error("save_checkpoint: cannot open " + file.string());
  const auto& c = p.config;
  os << kCkptMagic << '\n';
  os << "n_layers = " << c.n_layers << '\n';
  os << "n_heads = " << c.n_heads << '\n';
  os << "d_model = " << c.d_model << '\n';
  os << "d_ff = " << c.d_ff << '\n';
  os << "input_dim = " << c.input_dim << '\n';
  os << "vocab_size = " << c.vocab_size << '\n';
  os << "max_report_len = " << c.max_report_len << '\n';
  os << "pam_kernels = " << kernels_to_string(c.pam_kernels) << '\n';
  os << "pam_mode = " << to_string(c.pam_mode) << '\n';
  os << "pam_depthwise = " << (c.pam_depthwise ? 1 : 0) << '\n';
  os << "dropout_rate = " << c.dropout_rate << '\n';
  os << "n_classes = " << c.n_classes << '\n';
  os << "vocab_fingerprint = " << vocab_fp << '\n';
  os << "[params]\n";
  p.for_each_param([&os](const std::string& name, const Tensor& t) {
    os << name;
    for (int d : t.shape()) os << ' ' << d;
    os << '\n';
    os.write(reinterpret_cast<const char*>(t.data().data()),
             static_cast<std::streamsize>(t.numel() * sizeof(double)));
  });
  if (!os) throw std::runtime_error("save_checkpoint: write to " + file.string() + " failed");
}

Checkpoint load_checkpoint(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw std::runtime_error("load_checkpoint: cannot open " + file.string());
  std::string line;
  if (!std::getline(is, line) || line != kCkptMagic) {
    throw std::runtime_error("load_checkpoint: " + file.string() + " is not a checkpoint");
  }
  ModelConfig cfg;
  std::uint64_t vocab_fp = 0;
  while (std::getline(is, line)) {
    if (line == "[params]") break;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) {
      throw std::runtime_error("load_checkpoint: malformed header line '" + line + "'");
    }
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 3);
    if (key == "n_layers") cfg.n_layers = std::stoi(value);
    else if (key == "n_heads") cfg.n_heads = std::stoi(value);
    else if (key == "d_model") cfg.d_model = std::stoi(value);
    else if (key == "d_ff") cfg.d_ff = std::stoi(value);
    else if (key == "input_dim") cfg.input_dim = std::stoi(value);
    else if (key == "vocab_size") cfg.vocab_size = std::stoi(value);
    else if (key == "max_report_len") cfg.max_report_len = std::stoi(value);
    else if (key == "pam_kernels") cfg.pam_kernels = kernels_from_string(value);
    else if (key == "pam_mode") cfg.pam_mode = pam_mode_from_string(value);
    else if (key == "pam_depthwise") cfg.pam_depthwise = value != "0";
    else if (key == "dropout_rate") cfg.dropout_rate = std::stod(value);
    else if (key == "n_classes") cfg.n_classes = std::stoi(value);
    else if (key == "vocab_fingerprint") vocab_fp = std::stoull(value);
    else throw std::runtime_error("load_checkpoint: unknown header key '" + key + "'");
  }
  Checkpoint ckpt;
  ckpt.vocab_fp = vocab_fp;
  ckpt.params = init_params(cfg, 0);
  ckpt.params.for_each_param([&is, &file](const std::string& name, Tensor& t) {
    std::string header;
    if (!std::getline(is, header)) {
      throw std::runtime_error("load_checkpoint: " + file.string() +
                               " truncated before parameter " + name);
    }
    std::stringstream ss(header);
    std::string got_name;
    ss >> got_name;
    if (got_name != name) {
      throw std::runtime_error("load_checkpoint: expected parameter " + name +
                               ", found " + got_name);
    }
    std::vector<int> shape;
    int d;
    while (ss >> d) shape.push_back(d);
    if (shape != t.shape()) {
      throw std::runtime_error("load_checkpoint: parameter " + name + " has shape " +
                               shape_str(shape) + ", config implies " +
                               shape_str(t.shape()));
    }
    is.read(reinterpret_cast<char*>(t.data().data()),
            static_cast<std::streamsize>(t.numel() * sizeof(double)));
    if (!is) throw std::runtime_error("load_checkpoint: short read in parameter " + name);
  });
  return ckpt;
}

}  // namespace migen
