// SPDX-License-Identifier: Apache-2.0

#include "migen/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace migen {

void TrainConfig::validate() const {
  if (learning_rate <= 0) throw std::invalid_argument("train: learning_rate must be > 0");
  if (mask_ratio < 0 || mask_ratio >= 1) {
    throw std::invalid_argument("train: mask_ratio must be in [0,1)");
  }
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
  if (max_steps < 0) throw std::invalid_argument("train: max_steps must be >= 0");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1) {
    throw std::invalid_argument("train: betas must be in [0,1)");
  }
}

AdamState init_adam_state(const ModelParams& params) {
  AdamState st;
  params.for_each_param([&st](const std::string&, const Tensor& t) {
    st.m.emplace_back(t.numel(), 0.0);
    st.v.emplace_back(t.numel(), 0.0);
  });
  return st;
}

void adam_step(ModelParams& params, AdamState& state, const TrainConfig& cfg,
               const std::function<bool(const std::string&)>& update_filter) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  std::size_t index = 0;
  params.for_each_param([&](const std::string& name, Tensor& t) {
    auto& m = state.m[index];
    auto& v = state.v[index];
    ++index;
    if (update_filter && !update_filter(name)) return;
    auto& x = t.data();
    auto& g = t.grad();
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!std::isfinite(g[i])) {
        throw std::runtime_error("adam_step: non-finite gradient in parameter " +
                                 name + " at index " + std::to_string(i));
      }
      if (cfg.weight_decay != 0.0) {
        x[i] -= cfg.learning_rate * cfg.weight_decay * x[i];
      }
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      x[i] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
    }
  });
}

InstanceBag apply_mask_augment(const InstanceBag& bag, double ratio,
                               std::mt19937_64& rng) {
  if (ratio < 0 || ratio >= 1) throw std::invalid_argument("mask ratio must be in [0,1)");
  const int m = bag.size();
  int n_remove = static_cast<int>(ratio * m);
  if (n_remove >= m) n_remove = m - 1;
  if (n_remove == 0) return bag;
  std::vector<int> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<char> removed(m, 0);
  for (int i = 0; i < n_remove; ++i) removed[order[i]] = 1;
  InstanceBag out;
  out.bag_id = bag.bag_id;
  out.embed_dim = bag.embed_dim;
  out.report = bag.report;
  out.class_label = bag.class_label;
  out.blob = bag.blob;
  for (int i = 0; i < m; ++i) {
    if (removed[i]) continue;
    out.coords.push_back(bag.coords[i]);
    out.embeddings.insert(out.embeddings.end(),
                          bag.embeddings.begin() + std::size_t(i) * bag.embed_dim,
                          bag.embeddings.begin() + std::size_t(i + 1) * bag.embed_dim);
  }
  return out;
}

InstanceBag apply_shuffle_augment(const InstanceBag& bag, std::mt19937_64& rng) {
  const int m = bag.size();
  std::vector<int> perm(m);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  InstanceBag out = bag;
  for (int i = 0; i < m; ++i) {
    out.coords[i] = bag.coords[perm[i]];
    std::copy_n(&bag.embeddings[std::size_t(perm[i]) * bag.embed_dim], bag.embed_dim,
                &out.embeddings[std::size_t(i) * bag.embed_dim]);
  }
  return out;
}

TrainResult train(ModelParams& params, const std::vector<InstanceBag>& bags,
                  const Vocab& vocab, const TrainConfig& cfg,
                  const CheckpointSink& sink) {
  cfg.validate();
  if (bags.empty()) throw std::invalid_argument("train: no training bags");
  if (params.config.vocab_size != vocab.size()) {
    throw std::invalid_argument("train: model vocab_size " +
                                std::to_string(params.config.vocab_size) +
                                " != dataset vocab size " + std::to_string(vocab.size()));
  }

  // Pre-encode reports once; they are immutable.
  std::vector<TokenSeq> encoded;
  encoded.reserve(bags.size());
  for (const auto& bag : bags) {
    TokenSeq ids = encode(bag.report, vocab);
    if (static_cast<int>(ids.size()) > params.config.max_report_len + 1) {
      throw std::invalid_argument("train: report of bag " + bag.bag_id +
                                  " exceeds max_report_len");
    }
    encoded.push_back(std::move(ids));
  }

  std::mt19937_64 rng(cfg.seed);
  AdamState state = init_adam_state(params);
  TrainResult result;
  std::uniform_int_distribution<std::size_t> pick(0, bags.size() - 1);

  for (int step = 1; step <= cfg.max_steps; ++step) {
    params.zero_grad();
    double batch_loss = 0.0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      const std::size_t idx = pick(rng);
      const InstanceBag* bag = &bags[idx];
      InstanceBag augmented;
      if (cfg.shuffle_instances) {
        augmented = apply_shuffle_augment(*bag, rng);
        bag = &augmented;
      }
      if (cfg.mask_ratio > 0.0) {
        double ratio = cfg.mask_ratio;
        if (cfg.mask_jitter) {
          ratio = std::uniform_real_distribution<double>(0.0, cfg.mask_ratio)(rng);
        }
        augmented = apply_mask_augment(*bag, ratio, rng);
        bag = &augmented;
      }
      std::mt19937_64* drop_rng = params.config.dropout_rate > 0 ? &rng : nullptr;
      Tensor loss = report_loss(params, *bag, encoded[idx], drop_rng);
      batch_loss += loss.value();
      backward(cfg.batch_size == 1 ? loss : scale(loss, 1.0 / cfg.batch_size));
    }
    batch_loss /= cfg.batch_size;
    if (!std::isfinite(batch_loss)) {
      throw TrainingDiverged("training loss became non-finite at step " +
                             std::to_string(step));
    }
    adam_step(params, state, cfg);
    if (step == 1 || step == cfg.max_steps ||
        (cfg.log_interval > 0 && step % cfg.log_interval == 0)) {
      result.loss_trace.emplace_back(step, batch_loss);
    }
    if (sink && cfg.checkpoint_interval > 0 && step % cfg.checkpoint_interval == 0) {
      sink(step, params);
    }
    result.final_loss = batch_loss;
  }
  if (sink) sink(cfg.max_steps, params);
  return result;
}

void write_loss_trace(const TrainResult& result, const std::filesystem::path& csv) {
  std::ofstream os(csv, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write loss trace " + csv.string());
  os << "step,loss\n";
  char buf[64];
  for (const auto& [step, loss] : result.loss_trace) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g\n", step, loss);
    os << buf;
  }
}

}  // namespace migen
