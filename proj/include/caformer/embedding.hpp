#pragma once

#include <utility>

#include "caformer/numerics/tape.hpp"

namespace caformer {

/// H×W×3 image stored as an H × (W·3) matrix; pixel (r, c, ch) lives at
/// data(r, c·3 + ch). This is also the CATM layout for images.
struct ImageTensor {
  static constexpr Index kChannels = 3;

  TokenMatrix data;

  ImageTensor() = default;
  explicit ImageTensor(TokenMatrix pixels);
  ImageTensor(Index height, Index width);

  Index height() const { return data.rows(); }
  Index width() const { return data.cols() / kChannels; }
  double& at(Index r, Index c, Index ch) { return data(r, c * kChannels + ch); }
  double at(Index r, Index c, Index ch) const { return data(r, c * kChannels + ch); }
};

/// Learnable positional encodings, independent for template and search.
struct PositionalEncoding {
  TokenMatrix template_pe;  // N_z × C
  TokenMatrix search_pe;    // N_x × C
};

/// (H·W/P²) × (3P²). Patches are visited row-major over the patch grid;
/// inside a patch the flatten order is (row, col, channel).
TokenMatrix patchify(const ImageTensor& img, Index patch);

/// Inverse of patchify for a known image height/width.
ImageTensor unpatchify(const TokenMatrix& patches, Index patch, Index height, Index width);

/// patches · w0 + pe.
Var embed(const Var& patches, const Var& w0, const Var& pe);
TokenMatrix embed(const TokenMatrix& patches, const TokenMatrix& w0, const TokenMatrix& pe);

/// [z; x] with template rows first.
Var concat_tokens(const Var& z, const Var& x);
TokenMatrix concat_tokens(const TokenMatrix& z, const TokenMatrix& x);

/// Splits rows at n_z into (template, search).
std::pair<TokenMatrix, TokenMatrix> split_tokens(const TokenMatrix& f, Index n_z);

}  // namespace caformer
