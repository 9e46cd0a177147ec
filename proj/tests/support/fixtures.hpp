#pragma once

#include "caformer/attention.hpp"
#include "support/oracles.hpp"

namespace fixture {

using caformer::Index;

/// Every tensor drawn at random (gains around 1) so no path is degenerate.
inline caformer::BlockParams random_block(Index channels, Index heads, std::mt19937_64& rng) {
  caformer::BlockParams p;
  p.heads = heads;
  const double s = 1.0 / std::sqrt(static_cast<double>(channels));
  const auto gain = [&](Index n) {
    return caformer::TokenMatrix(oracle::random_matrix(1, n, rng, 0.1).array() + 1.0);
  };
  p.ln1_gain = gain(channels);
  p.ln1_bias = oracle::random_matrix(1, channels, rng, 0.1);
  p.wq = oracle::random_matrix(channels, channels, rng, s);
  p.bq = oracle::random_matrix(1, channels, rng, 0.1);
  p.wk = oracle::random_matrix(channels, channels, rng, s);
  p.bk = oracle::random_matrix(1, channels, rng, 0.1);
  p.wv = oracle::random_matrix(channels, channels, rng, s);
  p.bv = oracle::random_matrix(1, channels, rng, 0.1);
  p.wo = oracle::random_matrix(channels, channels, rng, s);
  p.bo = oracle::random_matrix(1, channels, rng, 0.1);
  p.ln2_gain = gain(channels);
  p.ln2_bias = oracle::random_matrix(1, channels, rng, 0.1);
  p.w1 = oracle::random_matrix(channels, 4 * channels, rng, s);
  p.b1 = oracle::random_matrix(1, 4 * channels, rng, 0.1);
  p.w2 = oracle::random_matrix(4 * channels, channels, rng, 0.5 * s);
  p.b2 = oracle::random_matrix(1, channels, rng, 0.1);
  return p;
}

inline caformer::CmeParams random_cme(Index n_z, Index n_x, std::mt19937_64& rng) {
  caformer::CmeParams p;
  const Index n = n_z + n_x;
  p.ln1_gain = caformer::TokenMatrix(oracle::random_matrix(1, n, rng, 0.1).array() + 1.0);
  p.ln1_bias = oracle::random_matrix(1, n, rng, 0.1);
  p.w_e = oracle::random_matrix(n, n_z, rng, 1.0 / std::sqrt(static_cast<double>(n)));
  p.ln2_gain = caformer::TokenMatrix(oracle::random_matrix(1, n_z, rng, 0.1).array() + 1.0);
  p.ln2_bias = oracle::random_matrix(1, n_z, rng, 0.1);
  const double s = 1.0 / std::sqrt(static_cast<double>(n_z));
  p.w_q = oracle::random_matrix(n_z, n_z, rng, s);
  p.w_k = oracle::random_matrix(n_z, n_z, rng, s);
  p.w_mod = oracle::random_matrix(n_z, n_z, rng, s);
  return p;
}

}  // namespace fixture
