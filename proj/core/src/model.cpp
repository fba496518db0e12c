#include "sla/model.hpp"

#include <algorithm>
#include <cmath>

#include "sla/kernels.hpp"
#include "sla/rng.hpp"

namespace sla {

void ModelConfig::validate() const {
  if (vocab_size < 2) throw ParamError(cat("vocab_size must be >= 2, got ", vocab_size));
  if (d_model < 2 || d_model % 2 != 0) {
    throw ParamError(cat("d_model must be a positive even number, got ", d_model));
  }
  if (n_layers < 1) throw ParamError(cat("n_layers must be >= 1, got ", n_layers));
  if (n_heads < 1 || d_model % n_heads != 0) {
    throw ParamError(cat("n_heads must divide d_model, got ", n_heads, " for d_model ",
                         d_model));
  }
  if (d_ffn < 1) throw ParamError(cat("d_ffn must be >= 1, got ", d_ffn));
  if (d_reward < 1) throw ParamError(cat("d_reward must be >= 1, got ", d_reward));
  if (max_seq_len < 1) throw ParamError(cat("max_seq_len must be >= 1, got ", max_seq_len));
}

namespace {

std::vector<double> sinusoidal_encoding(int max_len, int d) {
  std::vector<double> pe(static_cast<size_t>(max_len) * d);
  for (int pos = 0; pos < max_len; ++pos) {
    for (int i = 0; i < d / 2; ++i) {
      const double angle =
          pos * std::exp(-std::log(10000.0) * (2.0 * i) / static_cast<double>(d));
      pe[static_cast<size_t>(pos) * d + 2 * i] = std::sin(angle);
      pe[static_cast<size_t>(pos) * d + 2 * i + 1] = std::cos(angle);
    }
  }
  return pe;
}

Tensor uniform_tensor(Rng& rng, std::vector<int64_t> shape, double limit) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  std::vector<double> data(static_cast<size_t>(n));
  for (double& v : data) v = rng.uniform(-limit, limit);
  return Tensor::leaf(std::move(shape), std::move(data), true);
}

Tensor gaussian_tensor(Rng& rng, std::vector<int64_t> shape, double scale) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  std::vector<double> data(static_cast<size_t>(n));
  for (double& v : data) v = scale * rng.gaussian();
  return Tensor::leaf(std::move(shape), std::move(data), true);
}

Tensor const_tensor(std::vector<int64_t> shape, double value) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return Tensor::leaf(std::move(shape),
                      std::vector<double>(static_cast<size_t>(n), value), true);
}

}  // namespace

RewardTransformer RewardTransformer::zeros(const ModelConfig& config) {
  config.validate();
  RewardTransformer m;
  m.config = config;
  const int64_t d = config.d_model;
  const int64_t v = config.vocab_size;
  const int64_t f = config.d_ffn;
  const int64_t dr = config.d_reward;
  const int64_t rh = config.d_reward_hidden();

  m.token_embedding = Tensor::zeros({v, d}, true);
  m.reward_proj_w = Tensor::zeros({d, dr}, true);
  m.reward_proj_b = Tensor::zeros({dr}, true);
  m.layers.resize(static_cast<size_t>(config.n_layers));
  for (auto& L : m.layers) {
    L.wq = Tensor::zeros({d, d}, true);
    L.bq = Tensor::zeros({d}, true);
    L.wk = Tensor::zeros({d, d}, true);
    L.bk = Tensor::zeros({d}, true);
    L.wv = Tensor::zeros({d, d}, true);
    L.bv = Tensor::zeros({d}, true);
    L.wo = Tensor::zeros({d, d}, true);
    L.bo = Tensor::zeros({d}, true);
    L.norm1_g = Tensor::zeros({d}, true);
    L.norm1_b = Tensor::zeros({d}, true);
    L.norm2_g = Tensor::zeros({d}, true);
    L.norm2_b = Tensor::zeros({d}, true);
    L.ffn_w1 = Tensor::zeros({d, f}, true);
    L.ffn_b1 = Tensor::zeros({f}, true);
    L.ffn_w2 = Tensor::zeros({f, d}, true);
    L.ffn_b2 = Tensor::zeros({d}, true);
    L.r_w1 = Tensor::zeros({d + dr, rh}, true);
    L.r_b1 = Tensor::zeros({rh}, true);
    L.r_w2 = Tensor::zeros({rh, dr}, true);
    L.r_b2 = Tensor::zeros({dr}, true);
    L.r_norm_g = Tensor::zeros({dr}, true);
    L.r_norm_b = Tensor::zeros({dr}, true);
  }
  m.policy_head_w = Tensor::zeros({d, v}, true);
  m.policy_head_b = Tensor::zeros({v}, true);
  m.reward_head_w = Tensor::zeros({dr, 1}, true);
  m.reward_head_b = Tensor::zeros({1}, true);
  m.pos_encoding = sinusoidal_encoding(config.max_seq_len, config.d_model);
  return m;
}

RewardTransformer RewardTransformer::init(const ModelConfig& config, uint64_t seed) {
  config.validate();
  Rng rng(derive_seed(seed, "model-init"));
  RewardTransformer m;
  m.config = config;
  const int64_t d = config.d_model;
  const int64_t v = config.vocab_size;
  const int64_t f = config.d_ffn;
  const int64_t dr = config.d_reward;
  const int64_t rh = config.d_reward_hidden();
  const double ld = 1.0 / std::sqrt(static_cast<double>(d));
  const double lf = 1.0 / std::sqrt(static_cast<double>(f));
  const double lcat = 1.0 / std::sqrt(static_cast<double>(d + dr));
  const double lrh = 1.0 / std::sqrt(static_cast<double>(rh));

  m.token_embedding = gaussian_tensor(rng, {v, d}, 1.0);
  m.reward_proj_w = uniform_tensor(rng, {d, dr}, ld);
  m.reward_proj_b = Tensor::zeros({dr}, true);
  m.layers.resize(static_cast<size_t>(config.n_layers));
  for (auto& L : m.layers) {
    L.wq = uniform_tensor(rng, {d, d}, ld);
    L.bq = Tensor::zeros({d}, true);
    L.wk = uniform_tensor(rng, {d, d}, ld);
    L.bk = Tensor::zeros({d}, true);
    L.wv = uniform_tensor(rng, {d, d}, ld);
    L.bv = Tensor::zeros({d}, true);
    L.wo = uniform_tensor(rng, {d, d}, ld);
    L.bo = Tensor::zeros({d}, true);
    L.norm1_g = const_tensor({d}, 1.0);
    L.norm1_b = Tensor::zeros({d}, true);
    L.norm2_g = const_tensor({d}, 1.0);
    L.norm2_b = Tensor::zeros({d}, true);
    L.ffn_w1 = uniform_tensor(rng, {d, f}, ld);
    L.ffn_b1 = Tensor::zeros({f}, true);
    L.ffn_w2 = uniform_tensor(rng, {f, d}, lf);
    L.ffn_b2 = Tensor::zeros({d}, true);
    L.r_w1 = uniform_tensor(rng, {d + dr, rh}, lcat);
    L.r_b1 = Tensor::zeros({rh}, true);
    L.r_w2 = uniform_tensor(rng, {rh, dr}, lrh);
    L.r_b2 = Tensor::zeros({dr}, true);
    L.r_norm_g = const_tensor({dr}, 1.0);
    L.r_norm_b = Tensor::zeros({dr}, true);
  }
  m.policy_head_w = gaussian_tensor(rng, {d, v}, 0.02);
  m.policy_head_b = Tensor::zeros({v}, true);
  m.reward_head_w = gaussian_tensor(rng, {dr, 1}, 0.02);
  m.reward_head_b = Tensor::zeros({1}, true);
  m.pos_encoding = sinusoidal_encoding(config.max_seq_len, config.d_model);
  return m;
}

std::vector<std::pair<std::string, Tensor>> RewardTransformer::policy_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("token_embedding", token_embedding);
  for (size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    const std::string p = cat("layers.", l, ".");
    out.emplace_back(p + "wq", L.wq);
    out.emplace_back(p + "bq", L.bq);
    out.emplace_back(p + "wk", L.wk);
    out.emplace_back(p + "bk", L.bk);
    out.emplace_back(p + "wv", L.wv);
    out.emplace_back(p + "bv", L.bv);
    out.emplace_back(p + "wo", L.wo);
    out.emplace_back(p + "bo", L.bo);
    out.emplace_back(p + "norm1_g", L.norm1_g);
    out.emplace_back(p + "norm1_b", L.norm1_b);
    out.emplace_back(p + "norm2_g", L.norm2_g);
    out.emplace_back(p + "norm2_b", L.norm2_b);
    out.emplace_back(p + "ffn_w1", L.ffn_w1);
    out.emplace_back(p + "ffn_b1", L.ffn_b1);
    out.emplace_back(p + "ffn_w2", L.ffn_w2);
    out.emplace_back(p + "ffn_b2", L.ffn_b2);
  }
  out.emplace_back("policy_head_w", policy_head_w);
  out.emplace_back("policy_head_b", policy_head_b);
  return out;
}

std::vector<std::pair<std::string, Tensor>> RewardTransformer::reward_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("reward_proj_w", reward_proj_w);
  out.emplace_back("reward_proj_b", reward_proj_b);
  for (size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    const std::string p = cat("layers.", l, ".");
    out.emplace_back(p + "r_w1", L.r_w1);
    out.emplace_back(p + "r_b1", L.r_b1);
    out.emplace_back(p + "r_w2", L.r_w2);
    out.emplace_back(p + "r_b2", L.r_b2);
    out.emplace_back(p + "r_norm_g", L.r_norm_g);
    out.emplace_back(p + "r_norm_b", L.r_norm_b);
  }
  out.emplace_back("reward_head_w", reward_head_w);
  out.emplace_back("reward_head_b", reward_head_b);
  return out;
}

std::vector<std::pair<std::string, Tensor>> RewardTransformer::parameters() const {
  auto out = policy_parameters();
  auto r = reward_parameters();
  out.insert(out.end(), r.begin(), r.end());
  return out;
}

void RewardTransformer::set_policy_requires_grad(bool v) const {
  for (auto& [name, t] : policy_parameters()) {
    Tensor tt = t;
    tt.set_requires_grad(v);
  }
}

void RewardTransformer::set_reward_requires_grad(bool v) const {
  for (auto& [name, t] : reward_parameters()) {
    Tensor tt = t;
    tt.set_requires_grad(v);
  }
}

RewardTransformer RewardTransformer::clone() const {
  RewardTransformer out = zeros(config);
  auto src = parameters();
  auto dst = out.parameters();
  for (size_t i = 0; i < src.size(); ++i) {
    Tensor d = dst[i].second;
    d.mutable_data() = src[i].second.data();
    d.set_requires_grad(src[i].second.requires_grad());
  }
  return out;
}

ChannelCounts parameter_counts(const ModelConfig& c) {
  const int64_t d = c.d_model, v = c.vocab_size, f = c.d_ffn, dr = c.d_reward;
  const int64_t rh = c.d_reward_hidden();
  ChannelCounts n;
  n.policy = v * d;                                      // embedding
  n.policy += c.n_layers * (4 * (d * d + d)              // attention projections
                            + 4 * d                      // two norm pairs
                            + d * f + f + f * d + d);    // FFN
  n.policy += d * v + v;                                 // policy head
  n.reward = d * dr + dr;                                // reward input projection
  n.reward += c.n_layers * ((d + dr) * rh + rh + rh * dr + dr + 2 * dr);
  n.reward += dr + 1;                                    // reward head
  return n;
}

ChannelCounts flops_per_token(const ModelConfig& c) {
  const int64_t d = c.d_model, v = c.vocab_size, f = c.d_ffn, dr = c.d_reward;
  const int64_t rh = c.d_reward_hidden();
  ChannelCounts n;
  n.policy = c.n_layers * (4 * d * d + 2 * d * f) + d * v;
  n.reward = d * dr + c.n_layers * ((d + dr) * rh + rh * dr) + dr;
  return n;
}

// ---- full-sequence ops ----------------------------------------------------

Tensor embed(const RewardTransformer& m, const std::vector<int>& tokens, int start_pos) {
  const int64_t d = m.config.d_model;
  const int64_t t = static_cast<int64_t>(tokens.size());
  if (start_pos < 0 || start_pos + t > m.config.max_seq_len) {
    throw CapacityError(cat("sequence span [", start_pos, ", ", start_pos + t,
                            ") exceeds max_seq_len ", m.config.max_seq_len));
  }
  Tensor e = embedding_rows(m.token_embedding, tokens);
  std::vector<double> pe(static_cast<size_t>(t) * d);
  std::copy_n(m.pos_encoding.data() + static_cast<size_t>(start_pos) * d, pe.size(),
              pe.data());
  return add(e, Tensor::leaf({t, d}, std::move(pe)));
}

Tensor policy_block(const RewardTransformer& m, const Tensor& h_p, int layer) {
  if (layer < 0 || layer >= m.config.n_layers) {
    throw ParamError(cat("layer ", layer, " out of range for ", m.config.n_layers));
  }
  const auto& L = m.layers[static_cast<size_t>(layer)];
  const int dh = m.config.d_head();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor q = add(matmul(h_p, L.wq), L.bq);
  Tensor k = add(matmul(h_p, L.wk), L.bk);
  Tensor v = add(matmul(h_p, L.wv), L.bv);

  Tensor ctx;
  for (int h = 0; h < m.config.n_heads; ++h) {
    const int64_t c0 = static_cast<int64_t>(h) * dh;
    const int64_t c1 = c0 + dh;
    Tensor qh = slice_cols(q, c0, c1);
    Tensor kh = slice_cols(k, c0, c1);
    Tensor vh = slice_cols(v, c0, c1);
    Tensor attn = causal_softmax(scalar_mul(matmul(qh, transpose(kh)), scale));
    Tensor ch = matmul(attn, vh);
    ctx = h == 0 ? ch : concat_cols(ctx, ch);
  }
  Tensor attn_out = add(matmul(ctx, L.wo), L.bo);
  Tensor h1 = layer_norm(add(h_p, attn_out), L.norm1_g, L.norm1_b);
  Tensor f = add(matmul(gelu(add(matmul(h1, L.ffn_w1), L.ffn_b1)), L.ffn_w2), L.ffn_b2);
  return layer_norm(add(h_p, f), L.norm2_g, L.norm2_b);
}

Tensor reward_block(const RewardTransformer& m, const Tensor& h_p, const Tensor& h_r,
                    int layer) {
  if (layer < 0 || layer >= m.config.n_layers) {
    throw ParamError(cat("layer ", layer, " out of range for ", m.config.n_layers));
  }
  const auto& L = m.layers[static_cast<size_t>(layer)];
  Tensor cat = concat_cols(h_p, h_r);
  Tensor f = add(matmul(gelu(add(matmul(cat, L.r_w1), L.r_b1)), L.r_w2), L.r_b2);
  return layer_norm(add(h_r, f), L.r_norm_g, L.r_norm_b);
}

ForwardOut forward(const RewardTransformer& m, const std::vector<int>& tokens) {
  Tensor x = embed(m, tokens, 0);
  Tensor h_p = x;
  Tensor h_r = add(matmul(x, m.reward_proj_w), m.reward_proj_b);
  for (int l = 0; l < m.config.n_layers; ++l) {
    Tensor h_r_next = reward_block(m, h_p, h_r, l);
    h_p = policy_block(m, h_p, l);
    h_r = h_r_next;
  }
  ForwardOut out;
  out.logits = add(matmul(h_p, m.policy_head_w), m.policy_head_b);
  out.rewards = add(matmul(h_r, m.reward_head_w), m.reward_head_b);
  out.h_p_final = h_p;
  return out;
}

// ---- incremental decoding path ---------------------------------------------

LeafCursor::LeafCursor(const RewardTransformer& m,
                       std::shared_ptr<const KVCacheSegment> parent)
    : model_(&m), parent_(std::move(parent)) {
  for (const KVCacheSegment* s = parent_.get(); s != nullptr; s = s->parent.get()) {
    chain_.push_back(s);
  }
  std::reverse(chain_.begin(), chain_.end());
  base_len_ = parent_ ? parent_->end_pos() : 0;
  if (!chain_.empty() && chain_.front()->start_pos != 0) {
    throw ContractError("cache chain does not start at position 0");
  }
  const size_t layers = static_cast<size_t>(m.config.n_layers);
  k_.resize(layers);
  v_.resize(layers);
}

std::shared_ptr<const KVCacheSegment> LeafCursor::seal() const {
  auto seg = std::make_shared<KVCacheSegment>();
  seg->parent = parent_;
  seg->start_pos = base_len_;
  seg->len = fed_;
  seg->k = k_;
  seg->v = v_;
  return seg;
}

namespace {

// Batched step buffers; one position per leaf per call.
struct StepBuffers {
  std::vector<double> x, h_p, h_r, q, k, v, attn_out, h1, f1, f2, rcat, r1, r2,
      h_r_next, tmp, logits, rewards;
};

}  // namespace

void step_leaves(const RewardTransformer& m, const std::vector<LeafCursor*>& leaves,
                 const std::vector<int>& tokens) {
  if (leaves.size() != tokens.size()) {
    throw ContractError(cat("step_leaves: ", leaves.size(), " leaves but ",
                            tokens.size(), " tokens"));
  }
  const size_t b = leaves.size();
  if (b == 0) return;
  const ModelConfig& c = m.config;
  const size_t d = static_cast<size_t>(c.d_model);
  const size_t dr = static_cast<size_t>(c.d_reward);
  const size_t rh = static_cast<size_t>(c.d_reward_hidden());
  const size_t f = static_cast<size_t>(c.d_ffn);
  const size_t vb = static_cast<size_t>(c.vocab_size);
  const int dh = c.d_head();
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  for (size_t i = 0; i < b; ++i) {
    if (leaves[i]->model_ != &m) throw ContractError("step_leaves: cursor built for a different model");
    if (tokens[i] < 0 || tokens[i] >= c.vocab_size) {
      throw VocabError(cat("token id ", tokens[i], " outside vocabulary of size ",
                           c.vocab_size));
    }
    if (leaves[i]->next_pos() >= c.max_seq_len) {
      throw CapacityError(cat("position ", leaves[i]->next_pos(),
                              " exceeds max_seq_len ", c.max_seq_len));
    }
  }

  StepBuffers s;
  s.x.assign(b * d, 0.0);
  for (size_t i = 0; i < b; ++i) {
    const double* emb =
        m.token_embedding.data().data() + static_cast<size_t>(tokens[i]) * d;
    const double* pe =
        m.pos_encoding.data() + static_cast<size_t>(leaves[i]->next_pos()) * d;
    double* row = s.x.data() + i * d;
    for (size_t j = 0; j < d; ++j) row[j] = emb[j] + pe[j];
  }

  s.h_p = s.x;
  s.h_r.assign(b * dr, 0.0);
  kernels::matmul_accum(s.x.data(), m.reward_proj_w.data().data(), s.h_r.data(), b, d, dr);
  for (size_t i = 0; i < b; ++i)
    for (size_t j = 0; j < dr; ++j) s.h_r[i * dr + j] += m.reward_proj_b.data()[j];

  std::vector<double> scores;
  s.tmp.resize(std::max(d, dr));

  for (int l = 0; l < c.n_layers; ++l) {
    const auto& L = m.layers[static_cast<size_t>(l)];
    const size_t lu = static_cast<size_t>(l);

    s.q.assign(b * d, 0.0);
    s.k.assign(b * d, 0.0);
    s.v.assign(b * d, 0.0);
    kernels::matmul_accum(s.h_p.data(), L.wq.data().data(), s.q.data(), b, d, d);
    kernels::matmul_accum(s.h_p.data(), L.wk.data().data(), s.k.data(), b, d, d);
    kernels::matmul_accum(s.h_p.data(), L.wv.data().data(), s.v.data(), b, d, d);
    for (size_t i = 0; i < b; ++i) {
      for (size_t j = 0; j < d; ++j) {
        s.q[i * d + j] += L.bq.data()[j];
        s.k[i * d + j] += L.bk.data()[j];
        s.v[i * d + j] += L.bv.data()[j];
      }
      leaves[i]->k_[lu].insert(leaves[i]->k_[lu].end(), s.k.begin() + i * d,
                               s.k.begin() + (i + 1) * d);
      leaves[i]->v_[lu].insert(leaves[i]->v_[lu].end(), s.v.begin() + i * d,
                               s.v.begin() + (i + 1) * d);
    }

    // Attention: each leaf row attends over its own chain plus scratch, in
    // global position order, one head at a time.
    std::vector<double> ctx(b * d, 0.0);
    for (size_t i = 0; i < b; ++i) {
      LeafCursor* leaf = leaves[i];
      const size_t ctx_len = static_cast<size_t>(leaf->next_pos()) + 1;
      scores.resize(ctx_len);
      const double* qrow = s.q.data() + i * d;
      for (int h = 0; h < c.n_heads; ++h) {
        const size_t off = static_cast<size_t>(h) * dh;
        size_t pos = 0;
        for (const KVCacheSegment* seg : leaf->chain_) {
          const double* kd = seg->k[lu].data();
          for (int r = 0; r < seg->len; ++r, ++pos) {
            scores[pos] = kernels::dot(qrow + off, kd + static_cast<size_t>(r) * d + off,
                                       static_cast<size_t>(dh)) *
                          scale;
          }
        }
        const double* kd = leaf->k_[lu].data();
        const size_t own = leaf->k_[lu].size() / d;
        for (size_t r = 0; r < own; ++r, ++pos) {
          scores[pos] =
              kernels::dot(qrow + off, kd + r * d + off, static_cast<size_t>(dh)) * scale;
        }
        kernels::softmax_row(scores.data(), ctx_len);

        double* crow = ctx.data() + i * d + off;
        pos = 0;
        for (const KVCacheSegment* seg : leaf->chain_) {
          const double* vd = seg->v[lu].data();
          for (int r = 0; r < seg->len; ++r, ++pos) {
            kernels::axpy(scores[pos], vd + static_cast<size_t>(r) * d + off, crow,
                          static_cast<size_t>(dh));
          }
        }
        const double* vd = leaf->v_[lu].data();
        for (size_t r = 0; r < own; ++r, ++pos) {
          kernels::axpy(scores[pos], vd + r * d + off, crow, static_cast<size_t>(dh));
        }
      }
    }

    s.attn_out.assign(b * d, 0.0);
    kernels::matmul_accum(ctx.data(), L.wo.data().data(), s.attn_out.data(), b, d, d);
    for (size_t i = 0; i < b; ++i)
      for (size_t j = 0; j < d; ++j) s.attn_out[i * d + j] += L.bo.data()[j];

    s.h1.assign(b * d, 0.0);
    for (size_t i = 0; i < b; ++i) {
      for (size_t j = 0; j < d; ++j) s.tmp[j] = s.h_p[i * d + j] + s.attn_out[i * d + j];
      kernels::layer_norm_row(s.tmp.data(), L.norm1_g.data().data(),
                              L.norm1_b.data().data(), s.h1.data() + i * d, d,
                              kLayerNormEps);
    }

    s.f1.assign(b * f, 0.0);
    kernels::matmul_accum(s.h1.data(), L.ffn_w1.data().data(), s.f1.data(), b, d, f);
    for (size_t i = 0; i < b; ++i)
      for (size_t j = 0; j < f; ++j)
        s.f1[i * f + j] = kernels::gelu(s.f1[i * f + j] + L.ffn_b1.data()[j]);
    s.f2.assign(b * d, 0.0);
    kernels::matmul_accum(s.f1.data(), L.ffn_w2.data().data(), s.f2.data(), b, f, d);
    for (size_t i = 0; i < b; ++i)
      for (size_t j = 0; j < d; ++j) s.f2[i * d + j] += L.ffn_b2.data()[j];

    // Reward channel reads this layer's input h_p, before the policy update.
    s.rcat.assign(b * (d + dr), 0.0);
    for (size_t i = 0; i < b; ++i) {
      std::copy_n(s.h_p.data() + i * d, d, s.rcat.data() + i * (d + dr));
      std::copy_n(s.h_r.data() + i * dr, dr, s.rcat.data() + i * (d + dr) + d);
    }
    s.r1.assign(b * rh, 0.0);
    kernels::matmul_accum(s.rcat.data(), L.r_w1.data().data(), s.r1.data(), b, d + dr, rh);
    for (size_t i = 0; i < b; ++i)
      for (size_t j = 0; j < rh; ++j)
        s.r1[i * rh + j] = kernels::gelu(s.r1[i * rh + j] + L.r_b1.data()[j]);
    s.r2.assign(b * dr, 0.0);
    kernels::matmul_accum(s.r1.data(), L.r_w2.data().data(), s.r2.data(), b, rh, dr);
    for (size_t i = 0; i < b; ++i)
      for (size_t j = 0; j < dr; ++j) s.r2[i * dr + j] += L.r_b2.data()[j];

    s.h_r_next.assign(b * dr, 0.0);
    for (size_t i = 0; i < b; ++i) {
      for (size_t j = 0; j < dr; ++j) s.tmp[j] = s.h_r[i * dr + j] + s.r2[i * dr + j];
      kernels::layer_norm_row(s.tmp.data(), L.r_norm_g.data().data(),
                              L.r_norm_b.data().data(), s.h_r_next.data() + i * dr, dr,
                              kLayerNormEps);
    }

    // Policy update: second residual also reads the layer input.
    std::vector<double> h_p_next(b * d, 0.0);
    for (size_t i = 0; i < b; ++i) {
      for (size_t j = 0; j < d; ++j) s.tmp[j] = s.h_p[i * d + j] + s.f2[i * d + j];
      kernels::layer_norm_row(s.tmp.data(), L.norm2_g.data().data(),
                              L.norm2_b.data().data(), h_p_next.data() + i * d, d,
                              kLayerNormEps);
    }
    s.h_p.swap(h_p_next);
    s.h_r.swap(s.h_r_next);
  }

  s.logits.assign(b * vb, 0.0);
  kernels::matmul_accum(s.h_p.data(), m.policy_head_w.data().data(), s.logits.data(), b,
                        d, vb);
  s.rewards.assign(b, 0.0);
  kernels::matmul_accum(s.h_r.data(), m.reward_head_w.data().data(), s.rewards.data(), b,
                        dr, 1);
  for (size_t i = 0; i < b; ++i) {
    for (size_t j = 0; j < vb; ++j) s.logits[i * vb + j] += m.policy_head_b.data()[j];
    s.rewards[i] += m.reward_head_b.data()[0];
    LeafCursor* leaf = leaves[i];
    leaf->last_logits_.assign(s.logits.begin() + i * vb, s.logits.begin() + (i + 1) * vb);
    leaf->last_reward_ = s.rewards[i];
    leaf->tokens_.push_back(tokens[i]);
    leaf->fed_ += 1;
  }
}

IncrementalOut forward_incremental(const RewardTransformer& m,
                                   std::shared_ptr<const KVCacheSegment> cache,
                                   const std::vector<int>& new_tokens) {
  LeafCursor cursor(m, std::move(cache));
  IncrementalOut out;
  out.logits.reserve(new_tokens.size());
  out.rewards.reserve(new_tokens.size());
  std::vector<LeafCursor*> one{&cursor};
  for (int tok : new_tokens) {
    step_leaves(m, one, {tok});
    out.logits.push_back(cursor.last_logits());
    out.rewards.push_back(cursor.last_reward());
  }
  out.segment = cursor.seal();
  return out;
}

std::vector<IncrementalOut> batched_forward_leaves(
    const RewardTransformer& m,
    const std::vector<std::pair<std::shared_ptr<const KVCacheSegment>,
                                std::vector<int>>>& leaves) {
  std::vector<std::unique_ptr<LeafCursor>> cursors;
  cursors.reserve(leaves.size());
  std::vector<IncrementalOut> out(leaves.size());
  size_t max_len = 0;
  for (const auto& [cache, block] : leaves) {
    cursors.push_back(std::make_unique<LeafCursor>(m, cache));
    max_len = std::max(max_len, block.size());
  }
  std::vector<LeafCursor*> active;
  std::vector<int> toks;
  std::vector<size_t> idx;
  for (size_t t = 0; t < max_len; ++t) {
    active.clear();
    toks.clear();
    idx.clear();
    for (size_t i = 0; i < leaves.size(); ++i) {
      if (t < leaves[i].second.size()) {
        active.push_back(cursors[i].get());
        toks.push_back(leaves[i].second[t]);
        idx.push_back(i);
      }
    }
    if (active.empty()) break;
    step_leaves(m, active, toks);
    for (size_t j = 0; j < idx.size(); ++j) {
      out[idx[j]].logits.push_back(active[j]->last_logits());
      out[idx[j]].rewards.push_back(active[j]->last_reward());
    }
  }
  for (size_t i = 0; i < leaves.size(); ++i) out[i].segment = cursors[i]->seal();
  return out;
}

// ---- adapter baseline -------------------------------------------------------

AdapterRewardHead AdapterRewardHead::init(const ModelConfig& config, int depth,
                                          uint64_t seed) {
  if (depth != 1 && depth != 4) {
    throw ParamError(cat("adapter depth must be 1 or 4, got ", depth));
  }
  Rng rng(derive_seed(seed, "adapter-init"));
  const int64_t d = config.d_model;
  AdapterRewardHead a;
  a.depth = depth;
  const double ld = 1.0 / std::sqrt(static_cast<double>(d));
  for (int i = 0; i < depth - 1; ++i) {
    a.weights.push_back(uniform_tensor(rng, {d, d}, ld));
    a.biases.push_back(Tensor::zeros({d}, true));
  }
  a.weights.push_back(gaussian_tensor(rng, {d, 1}, 0.02));
  a.biases.push_back(Tensor::zeros({1}, true));
  return a;
}

std::vector<std::pair<std::string, Tensor>> AdapterRewardHead::parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  for (size_t i = 0; i < weights.size(); ++i) {
    out.emplace_back(cat("adapter.", i, ".w"), weights[i]);
    out.emplace_back(cat("adapter.", i, ".b"), biases[i]);
  }
  return out;
}

int64_t AdapterRewardHead::parameter_count() const {
  int64_t n = 0;
  for (const auto& [name, t] : parameters()) n += t.numel();
  return n;
}

Tensor adapter_rewards(const AdapterRewardHead& a, const Tensor& h_p_final) {
  Tensor x = h_p_final;
  for (size_t i = 0; i + 1 < a.weights.size(); ++i) {
    x = gelu(add(matmul(x, a.weights[i]), a.biases[i]));
  }
  return add(matmul(x, a.weights.back()), a.biases.back());
}

}  // namespace sla
