#include "caformer/attention.hpp"

#include <cmath>

namespace caformer {
namespace {

template <typename Params, typename Vars>
void bind_fields(Tape& tape, const Params& p, Vars& v, LeafList* leaves,
                 const std::string& prefix) {
  std::vector<const TokenMatrix*> sources;
  visit_fields(p, [&](const char*, const TokenMatrix& m) { sources.push_back(&m); });
  std::size_t i = 0;
  visit_fields(v, [&](const char* name, Var& var) {
    const TokenMatrix& m = *sources[i++];
    if (leaves) {
      var = tape.leaf(m, prefix + name);
      leaves->emplace_back(prefix + name, var);
    } else {
      var = tape.constant(m);
    }
  });
}

Var affine(const Var& x, const Var& w, const Var& b) { return add_bias(matmul(x, w), b); }

CostScope<double> category_scope(Tape& tape, CostCategory category) {
  return CostScope<double>(tape, tape.macs().layer(), category);
}

/// Output projection, residual and MLP shared by both block variants.
Var finish_block(const Var& f, const std::vector<Var>& head_outputs, const BlockVars& bp) {
  Tape& tape = f.tape();
  Var f2;
  {
    auto scope = category_scope(tape, CostCategory::kAttention);
    const Var merged = head_outputs.size() == 1 ? head_outputs.front() : hstack(head_outputs);
    f2 = add(f, affine(merged, bp.wo, bp.bo));
  }
  auto scope = category_scope(tape, CostCategory::kMlp);
  const Var hidden = gelu(affine(layernorm(f2, bp.ln2_gain, bp.ln2_bias), bp.w1, bp.b1));
  return add(f2, affine(hidden, bp.w2, bp.b2));
}

Var head_columns(const Var& m, Index head, Index head_dim) {
  return block(m, 0, head * head_dim, m.rows(), head_dim);
}

void check_block_input(const Var& f, const BlockVars& bp) {
  if (f.cols() != bp.channels())
    throw DimensionError("block: input " + shape_string(f.value()) + " for " +
                         std::to_string(bp.channels()) + " channels");
  if (bp.heads < 1 || bp.channels() % bp.heads != 0)
    throw ConfigError("block: " + std::to_string(bp.channels()) + " channels not divisible by " +
                      std::to_string(bp.heads) + " heads");
}

}  // namespace

BlockVars bind_params(Tape& tape, const BlockParams& p, LeafList* leaves, const std::string& prefix) {
  BlockVars v;
  v.heads = p.heads;
  bind_fields(tape, p, v, leaves, prefix);
  return v;
}

CmeVars bind_params(Tape& tape, const CmeParams& p, LeafList* leaves, const std::string& prefix) {
  CmeVars v;
  bind_fields(tape, p, v, leaves, prefix);
  return v;
}

CorrelationMap::CorrelationMap(Var full, Index n_z) : full_(std::move(full)), n_z_(n_z) {
  if (full_.rows() != full_.cols())
    throw DimensionError("CorrelationMap: not square " + shape_string(full_.value()));
  if (n_z < 1 || n_z >= full_.rows())
    throw DimensionError("CorrelationMap: n_z " + std::to_string(n_z) + " for " +
                         shape_string(full_.value()));
  n_x_ = full_.rows() - n_z;
}

Var CorrelationMap::tt() const { return block(full_, 0, 0, n_z_, n_z_); }
Var CorrelationMap::ts() const { return block(full_, 0, n_z_, n_z_, n_x_); }
Var CorrelationMap::st() const { return block(full_, n_z_, 0, n_x_, n_z_); }
Var CorrelationMap::ss() const { return block(full_, n_z_, n_z_, n_x_, n_x_); }

Var CorrelationMap::reassemble(const Var& tt, const Var& ts, const Var& st, const Var& ss) {
  return vstack<double>({hstack<double>({tt, ts}), hstack<double>({st, ss})});
}

Projections project(const Var& normed, const BlockVars& bp) {
  return {affine(normed, bp.wq, bp.bq), affine(normed, bp.wk, bp.bk),
          affine(normed, bp.wv, bp.bv)};
}

CorrelationMap correlation(const Projections& qkv, Index head, Index heads, Index n_z) {
  if (head < 0 || head >= heads)
    throw UsageError("correlation: head " + std::to_string(head) + " out of range [0, " +
                     std::to_string(heads) + ")");
  const Index head_dim = qkv.q.cols() / heads;
  return CorrelationMap(
      matmul_nt(head_columns(qkv.q, head, head_dim), head_columns(qkv.k, head, head_dim)), n_z);
}

CorrelationMap correlation(const Var& normed, const BlockVars& bp, Index head, Index n_z) {
  if (head < 0 || head >= bp.heads)
    throw UsageError("correlation: head " + std::to_string(head) + " out of range [0, " +
                     std::to_string(bp.heads) + ")");
  return correlation(project(normed, bp), head, bp.heads, n_z);
}

std::pair<Var, Var> cme(const StSsViews& rgb, const StSsViews& tir, const CmeVars& p) {
  if (rgb.st.rows() != tir.st.rows() || rgb.st.cols() != tir.st.cols() ||
      rgb.ss.rows() != tir.ss.rows() || rgb.ss.cols() != tir.ss.cols()) {
    throw ContractViolation("cme: modality views differ: rgb ST " + shape_string(rgb.st.value()) +
                            " SS " + shape_string(rgb.ss.value()) + ", tir ST " +
                            shape_string(tir.st.value()) + " SS " + shape_string(tir.ss.value()));
  }
  const Index n_x = rgb.st.rows();
  const Index n_z = rgb.st.cols();
  if (rgb.ss.rows() != n_x || rgb.ss.cols() != n_x)
    throw DimensionError("cme: SS view " + shape_string(rgb.ss.value()) + " for n_x " +
                         std::to_string(n_x));
  if (p.w_e.rows() != n_z + n_x || p.w_e.cols() != n_z || p.w_mod.rows() != n_z)
    throw DimensionError("cme: parameters sized for N=" + std::to_string(p.w_e.rows()) +
                         ", d_e=" + std::to_string(p.w_e.cols()) + " but views have n_z=" +
                         std::to_string(n_z) + ", n_x=" + std::to_string(n_x));

  Tape& tape = rgb.st.tape();
  auto scope = category_scope(tape, CostCategory::kCme);

  // Row-wise stages run once per modality half of the stacked [rgb; tir]
  // rows, so identical modality inputs take identical kernel paths.
  const auto embed_rows = [&](const StSsViews& v) {
    const Var embedded = matmul(layernorm(hstack<double>({v.st, v.ss}), p.ln1_gain, p.ln1_bias), p.w_e);
    return layernorm(embedded, p.ln2_gain, p.ln2_bias);
  };
  const Var u_rgb = embed_rows(rgb);
  const Var u_tir = embed_rows(tir);
  const Var keys = vstack<double>({matmul(u_rgb, p.w_k), matmul(u_tir, p.w_k)});
  const Var values = vstack<double>({rgb.st, tir.st});
  const Var residual = add(tape.constant(TokenMatrix::Identity(n_z, n_z)), p.w_mod);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(n_z));

  const auto modulate = [&](const Var& u) {
    const Var weights = softmax_rows(scale(matmul_nt(matmul(u, p.w_q), keys), inv_sqrt));
    return matmul(matmul(weights, values), residual);
  };
  return {modulate(u_rgb), modulate(u_tir)};
}

Var modulated_attention(const CorrelationMap& m, const Var& st_mod, Index c) {
  if (st_mod.rows() != m.n_x() || st_mod.cols() != m.n_z())
    throw DimensionError("modulated_attention: st' " + shape_string(st_mod.value()) +
                         " does not match ST " + std::to_string(m.n_x()) + "x" +
                         std::to_string(m.n_z()));
  Tape& tape = st_mod.tape();
  const Index n_z = m.n_z();
  const Index n_x = m.n_x();
  const Var modulation = CorrelationMap::reassemble(
      tape.constant(TokenMatrix::Zero(n_z, n_z)), tape.constant(TokenMatrix::Zero(n_z, n_x)),
      st_mod, tape.constant(TokenMatrix::Zero(n_x, n_x)));
  return softmax_rows(
      scale(add(modulation, m.full()), 1.0 / std::sqrt(static_cast<double>(c))));
}

Var plain_attention(const CorrelationMap& m, Index c) {
  return softmax_rows(scale(m.full(), 1.0 / std::sqrt(static_cast<double>(c))));
}

BlockOutput standard_block(const Var& f, const BlockVars& bp) {
  check_block_input(f, bp);
  Tape& tape = f.tape();
  BlockOutput result;
  std::vector<Var> head_outputs;
  {
    auto scope = category_scope(tape, CostCategory::kAttention);
    result.qkv = project(layernorm(f, bp.ln1_gain, bp.ln1_bias), bp);
    const Index dh = bp.head_dim();
    for (Index h = 0; h < bp.heads; ++h) {
      const Var scores = matmul_nt(head_columns(result.qkv.q, h, dh), head_columns(result.qkv.k, h, dh));
      const Var probs = softmax_rows(scale(scores, 1.0 / std::sqrt(static_cast<double>(dh))));
      result.attention.push_back(probs);
      head_outputs.push_back(matmul(probs, head_columns(result.qkv.v, h, dh)));
    }
  }
  result.out = finish_block(f, head_outputs, bp);
  return result;
}

std::pair<BlockOutput, BlockOutput> caformer_block(const Var& f_rgb, const Var& f_tir,
                                                   const BlockVars& bp, const CmeVars& cp,
                                                   Index n_z) {
  check_block_input(f_rgb, bp);
  check_block_input(f_tir, bp);
  if (f_rgb.rows() != f_tir.rows())
    throw ContractViolation("caformer_block: modality token counts differ (" +
                            std::to_string(f_rgb.rows()) + " vs " + std::to_string(f_tir.rows()) +
                            ")");
  Tape& tape = f_rgb.tape();
  BlockOutput rgb, tir;
  std::vector<Var> rgb_heads, tir_heads;
  {
    auto scope = category_scope(tape, CostCategory::kAttention);
    rgb.qkv = project(layernorm(f_rgb, bp.ln1_gain, bp.ln1_bias), bp);
    tir.qkv = project(layernorm(f_tir, bp.ln1_gain, bp.ln1_bias), bp);
    const Index dh = bp.head_dim();
    for (Index h = 0; h < bp.heads; ++h) {
      const CorrelationMap m_rgb = correlation(rgb.qkv, h, bp.heads, n_z);
      const CorrelationMap m_tir = correlation(tir.qkv, h, bp.heads, n_z);
      const auto [st_rgb, st_tir] =
          cme({m_rgb.st(), m_rgb.ss()}, {m_tir.st(), m_tir.ss()}, cp);
      const Var a_rgb = modulated_attention(m_rgb, st_rgb, dh);
      const Var a_tir = modulated_attention(m_tir, st_tir, dh);
      rgb.attention.push_back(a_rgb);
      tir.attention.push_back(a_tir);
      rgb_heads.push_back(matmul(a_rgb, head_columns(rgb.qkv.v, h, dh)));
      tir_heads.push_back(matmul(a_tir, head_columns(tir.qkv.v, h, dh)));
    }
  }
  rgb.out = finish_block(f_rgb, rgb_heads, bp);
  tir.out = finish_block(f_tir, tir_heads, bp);
  return {std::move(rgb), std::move(tir)};
}

TokenMatrix standard_block(const TokenMatrix& f, const BlockParams& bp) {
  Tape tape;
  return standard_block(tape.constant(f), bind_params(tape, bp)).out.value();
}

std::pair<TokenMatrix, TokenMatrix> caformer_block(const TokenMatrix& f_rgb,
                                                   const TokenMatrix& f_tir,
                                                   const BlockParams& bp, const CmeParams& cp,
                                                   Index n_z) {
  Tape tape;
  const auto [rgb, tir] = caformer_block(tape.constant(f_rgb), tape.constant(f_tir),
                                         bind_params(tape, bp), bind_params(tape, cp), n_z);
  return {rgb.out.value(), tir.out.value()};
}

CmeParams null_modulation(CmeParams p) {
  p.w_mod = -TokenMatrix::Identity(p.w_mod.rows(), p.w_mod.cols());
  return p;
}

}  // namespace caformer
