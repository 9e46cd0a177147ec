#pragma once

#include <string>
#include <utility>
#include <vector>

#include "caformer/numerics/tape.hpp"

namespace caformer {

/// Parameters of one pre-norm transformer block. A single instance serves
/// both modality branches.
struct BlockParams {
  Index heads = 1;
  TokenMatrix ln1_gain, ln1_bias;  // 1×C
  TokenMatrix wq, bq, wk, bk, wv, bv, wo, bo;  // C×C and 1×C
  TokenMatrix ln2_gain, ln2_bias;  // 1×C
  TokenMatrix w1, b1;  // C×4C, 1×4C
  TokenMatrix w2, b2;  // 4C×C, 1×C

  Index channels() const { return wq.rows(); }
  Index head_dim() const { return channels() / heads; }
};

/// Correlation-modulation parameters of one CAFormer block, shared by every
/// head and both modalities. N is the token count at that block and d_e == n_z.
struct CmeParams {
  TokenMatrix ln1_gain, ln1_bias;  // 1×N
  TokenMatrix w_e;                 // N×d_e
  TokenMatrix ln2_gain, ln2_bias;  // 1×d_e
  TokenMatrix w_q, w_k;            // d_e×d_e
  TokenMatrix w_mod;               // n_z×n_z, applied as (I + w_mod)

  Index template_tokens() const { return w_mod.rows(); }
  Index total_tokens() const { return w_e.rows(); }
};

template <typename P, typename F>
void visit_fields(P& p, F&& f) requires requires { p.wq; } {
  f("ln1.gain", p.ln1_gain);
  f("ln1.bias", p.ln1_bias);
  f("attn.wq", p.wq);
  f("attn.bq", p.bq);
  f("attn.wk", p.wk);
  f("attn.bk", p.bk);
  f("attn.wv", p.wv);
  f("attn.bv", p.bv);
  f("attn.wo", p.wo);
  f("attn.bo", p.bo);
  f("ln2.gain", p.ln2_gain);
  f("ln2.bias", p.ln2_bias);
  f("mlp.w1", p.w1);
  f("mlp.b1", p.b1);
  f("mlp.w2", p.w2);
  f("mlp.b2", p.b2);
}

template <typename P, typename F>
void visit_fields(P& p, F&& f) requires requires { p.w_mod; } {
  f("ln1.gain", p.ln1_gain);
  f("ln1.bias", p.ln1_bias);
  f("w_e", p.w_e);
  f("ln2.gain", p.ln2_gain);
  f("ln2.bias", p.ln2_bias);
  f("w_q", p.w_q);
  f("w_k", p.w_k);
  f("w_mod", p.w_mod);
}

struct BlockVars {
  Index heads = 1;
  Var ln1_gain, ln1_bias, wq, bq, wk, bk, wv, bv, wo, bo, ln2_gain, ln2_bias, w1, b1, w2, b2;

  Index channels() const { return wq.rows(); }
  Index head_dim() const { return channels() / heads; }
};

struct CmeVars {
  Var ln1_gain, ln1_bias, w_e, ln2_gain, ln2_bias, w_q, w_k, w_mod;
};

/// Named leaves registered while binding; used by gradient checks.
using LeafList = std::vector<std::pair<std::string, Var>>;

/// Places parameters on the tape. With `leaves` non-null every tensor becomes
/// a differentiable leaf named prefix + field; otherwise tensors are constants.
BlockVars bind_params(Tape& tape, const BlockParams& p, LeafList* leaves = nullptr,
               const std::string& prefix = {});
CmeVars bind_params(Tape& tape, const CmeParams& p, LeafList* leaves = nullptr,
             const std::string& prefix = {});

/// Pre-softmax, unscaled Q_h·K_hᵀ of one head with its TT/TS/ST/SS views.
class CorrelationMap {
 public:
  CorrelationMap(Var full, Index n_z);

  const Var& full() const { return full_; }
  Index n_z() const { return n_z_; }
  Index n_x() const { return n_x_; }

  Var tt() const;
  Var ts() const;
  Var st() const;
  Var ss() const;

  static Var reassemble(const Var& tt, const Var& ts, const Var& st, const Var& ss);

 private:
  Var full_;
  Index n_z_;
  Index n_x_;
};

/// q, k, v projections (N×C each) of the normalised block input.
struct Projections {
  Var q, k, v;
};

Projections project(const Var& normed, const BlockVars& bp);

/// Correlation of `head`. `normed` is the attention input (after the block's
/// first layernorm).
CorrelationMap correlation(const Projections& qkv, Index head, Index heads, Index n_z);
CorrelationMap correlation(const Var& normed, const BlockVars& bp, Index head, Index n_z);

struct StSsViews {
  Var st;  // n_x × n_z
  Var ss;  // n_x × n_x
};

/// Cross-modal correlation modulation. Returns (st'_rgb, st'_tir).
std::pair<Var, Var> cme(const StSsViews& rgb, const StSsViews& tir, const CmeVars& p);

/// softmax((M' + M)/√c) where M' carries `st_mod` in its ST block and zeros
/// elsewhere.
Var modulated_attention(const CorrelationMap& m, const Var& st_mod, Index c);

/// softmax(M/√c).
Var plain_attention(const CorrelationMap& m, Index c);

struct BlockOutput {
  Var out;
  Projections qkv;
  std::vector<Var> attention;  // per head, N×N row-stochastic
};

BlockOutput standard_block(const Var& f, const BlockVars& bp);
std::pair<BlockOutput, BlockOutput> caformer_block(const Var& f_rgb, const Var& f_tir,
                                                   const BlockVars& bp, const CmeVars& cp,
                                                   Index n_z);

TokenMatrix standard_block(const TokenMatrix& f, const BlockParams& bp);
std::pair<TokenMatrix, TokenMatrix> caformer_block(const TokenMatrix& f_rgb,
                                                   const TokenMatrix& f_tir,
                                                   const BlockParams& bp, const CmeParams& cp,
                                                   Index n_z);

/// CME parameters whose output is identically zero: w_mod = -I.
CmeParams null_modulation(CmeParams p);

}  // namespace caformer
