#include "caformer/embedding.hpp"

#include <string>

namespace caformer {

ImageTensor::ImageTensor(TokenMatrix pixels) : data(std::move(pixels)) {
  if (data.cols() % kChannels != 0) {
    throw DimensionError("ImageTensor: column count " + std::to_string(data.cols()) +
                         " is not a multiple of 3");
  }
}

ImageTensor::ImageTensor(Index height, Index width)
    : data(TokenMatrix::Zero(height, width * kChannels)) {}

TokenMatrix patchify(const ImageTensor& img, Index patch) {
  if (patch <= 0) throw ConfigError("patchify: patch size must be positive");
  if (img.height() % patch != 0 || img.width() % patch != 0) {
    throw ConfigError("patchify: image " + std::to_string(img.height()) + "x" +
                      std::to_string(img.width()) + " not divisible by patch " +
                      std::to_string(patch));
  }
  const Index grid_rows = img.height() / patch;
  const Index grid_cols = img.width() / patch;
  const Index dim = ImageTensor::kChannels * patch * patch;
  TokenMatrix out(grid_rows * grid_cols, dim);
  for (Index gr = 0; gr < grid_rows; ++gr) {
    for (Index gc = 0; gc < grid_cols; ++gc) {
      const Index token = gr * grid_cols + gc;
      for (Index r = 0; r < patch; ++r) {
        // One patch row is a contiguous run of patch·3 values in the image.
        out.row(token).segment(r * patch * ImageTensor::kChannels, patch * ImageTensor::kChannels) =
            img.data.row(gr * patch + r)
                .segment(gc * patch * ImageTensor::kChannels, patch * ImageTensor::kChannels);
      }
    }
  }
  return out;
}

ImageTensor unpatchify(const TokenMatrix& patches, Index patch, Index height, Index width) {
  if (patch <= 0 || height % patch != 0 || width % patch != 0) {
    throw ConfigError("unpatchify: geometry not divisible by patch size");
  }
  const Index grid_cols = width / patch;
  const Index run = patch * ImageTensor::kChannels;
  if (patches.rows() != (height / patch) * grid_cols || patches.cols() != run * patch) {
    throw DimensionError("unpatchify: " + shape_string(patches) + " does not match " +
                         std::to_string(height) + "x" + std::to_string(width));
  }
  ImageTensor img(height, width);
  for (Index token = 0; token < patches.rows(); ++token) {
    const Index gr = token / grid_cols;
    const Index gc = token % grid_cols;
    for (Index r = 0; r < patch; ++r)
      img.data.row(gr * patch + r).segment(gc * run, run) = patches.row(token).segment(r * run, run);
  }
  return img;
}

Var embed(const Var& patches, const Var& w0, const Var& pe) {
  if (patches.cols() != w0.rows())
    throw DimensionError("embed: patches " + shape_string(patches.value()) + " vs w0 " +
                         shape_string(w0.value()));
  if (pe.rows() != patches.rows() || pe.cols() != w0.cols())
    throw DimensionError("embed: positional encoding " + shape_string(pe.value()) +
                         " vs output " + std::to_string(patches.rows()) + "x" +
                         std::to_string(w0.cols()));
  return add(matmul(patches, w0), pe);
}

TokenMatrix embed(const TokenMatrix& patches, const TokenMatrix& w0, const TokenMatrix& pe) {
  TokenMatrix projected = matmul(patches, w0);
  require_same_shape(projected, pe, "embed");
  projected += pe;
  return projected;
}

Var concat_tokens(const Var& z, const Var& x) {
  if (z.rows() < 1) throw DimensionError("concat_tokens: template must have at least one token");
  if (z.cols() != x.cols())
    throw DimensionError("concat_tokens: channel mismatch " + shape_string(z.value()) + " vs " +
                         shape_string(x.value()));
  return vstack<double>({z, x});
}

TokenMatrix concat_tokens(const TokenMatrix& z, const TokenMatrix& x) {
  if (z.rows() < 1) throw DimensionError("concat_tokens: template must have at least one token");
  if (z.cols() != x.cols())
    throw DimensionError("concat_tokens: channel mismatch " + shape_string(z) + " vs " +
                         shape_string(x));
  TokenMatrix out(z.rows() + x.rows(), z.cols());
  out.topRows(z.rows()) = z;
  out.bottomRows(x.rows()) = x;
  return out;
}

std::pair<TokenMatrix, TokenMatrix> split_tokens(const TokenMatrix& f, Index n_z) {
  if (n_z < 1 || n_z > f.rows())
    throw DimensionError("split_tokens: n_z " + std::to_string(n_z) + " for " + shape_string(f));
  return {f.topRows(n_z), f.bottomRows(f.rows() - n_z)};
}

}  // namespace caformer
