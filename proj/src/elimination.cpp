#include "caformer/elimination.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace caformer {
namespace {

std::vector<Index> search_row_indices(Index n_z, const std::vector<Index>& positions) {
  std::vector<Index> rows(static_cast<std::size_t>(n_z) + positions.size());
  std::iota(rows.begin(), rows.begin() + n_z, Index{0});
  std::transform(positions.begin(), positions.end(), rows.begin() + n_z,
                 [n_z](Index p) { return n_z + p; });
  return rows;
}

Index chain_original_count(const KeepChain& chain, Index current) {
  return chain.empty() ? current : chain.front().original_count;
}

void validate_chain(const KeepChain& chain, Index current_search) {
  for (std::size_t i = 0; i < chain.size(); ++i) {
    chain[i].validate();
    if (i > 0 && chain[i].original_count != chain[i - 1].kept())
      throw ContractViolation("keep chain: stage " + std::to_string(i) + " expects " +
                              std::to_string(chain[i].original_count) + " tokens but stage " +
                              std::to_string(i - 1) + " kept " +
                              std::to_string(chain[i - 1].kept()));
  }
  if (!chain.empty() && chain.back().kept() != current_search)
    throw ContractViolation("keep chain: ends with " + std::to_string(chain.back().kept()) +
                            " tokens but features carry " + std::to_string(current_search));
}

}  // namespace

KeepSet KeepSet::all(Index count) {
  KeepSet ks;
  ks.original_count = count;
  ks.kept_positions.resize(static_cast<std::size_t>(count));
  std::iota(ks.kept_positions.begin(), ks.kept_positions.end(), Index{0});
  return ks;
}

void KeepSet::validate() const {
  for (std::size_t i = 0; i < kept_positions.size(); ++i) {
    const Index p = kept_positions[i];
    if (p < 0 || p >= original_count)
      throw ContractViolation("KeepSet: position " + std::to_string(p) + " outside [0, " +
                              std::to_string(original_count) + ")");
    if (i > 0 && p <= kept_positions[i - 1])
      throw ContractViolation("KeepSet: positions not strictly increasing at " +
                              std::to_string(p));
  }
}

Index center_token(Index template_grid_side) {
  if (template_grid_side < 1) throw ConfigError("center_token: empty template grid");
  return (template_grid_side / 2) * template_grid_side + template_grid_side / 2;
}

Index keep_count(Index count, double keep_ratio) {
  if (!(keep_ratio > 0.0 && keep_ratio <= 1.0))
    throw UsageError("keep ratio must lie in (0, 1], got " + std::to_string(keep_ratio));
  // The slack absorbs representation error in products such as 0.7 * 20.
  const auto k = static_cast<Index>(std::floor(keep_ratio * static_cast<double>(count) + 1e-9));
  return std::clamp<Index>(k, 1, count);
}

Vector cte_scores(const Vector& q_rgb_center, const Vector& q_tir_center,
                  const TokenMatrix& k_rgb_search, const TokenMatrix& k_tir_search) {
  if (q_rgb_center.size() != q_tir_center.size() || k_rgb_search.rows() != k_tir_search.rows() ||
      k_rgb_search.cols() != k_tir_search.cols())
    throw ContractViolation("cte_scores: modality shapes differ: rgb keys " +
                            shape_string(k_rgb_search) + ", tir keys " +
                            shape_string(k_tir_search));
  if (k_rgb_search.cols() != q_rgb_center.size())
    throw DimensionError("cte_scores: query length " + std::to_string(q_rgb_center.size()) +
                         " vs key width " + std::to_string(k_rgb_search.cols()));
  if (k_rgb_search.rows() == 0) throw UsageError("cte_scores: no search tokens");
  const TokenMatrix rgb = softmax_rows(q_rgb_center * k_rgb_search.transpose());
  const TokenMatrix tir = softmax_rows(q_tir_center * k_tir_search.transpose());
  return rgb.row(0) + tir.row(0);
}

KeepSet select_topk(const Vector& h, double keep_ratio) {
  if (h.size() == 0) throw UsageError("select_topk: empty score vector");
  const Index count = h.size();
  const Index k = keep_count(count, keep_ratio);
  std::vector<Index> order(static_cast<std::size_t>(count));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(), [&h](Index a, Index b) { return h[a] > h[b]; });
  KeepSet ks;
  ks.original_count = count;
  ks.kept_positions.assign(order.begin(), order.begin() + k);
  std::sort(ks.kept_positions.begin(), ks.kept_positions.end());
  return ks;
}

TokenMatrix apply_keep(const TokenMatrix& f, Index n_z, const KeepSet& ks) {
  ks.validate();
  if (f.rows() != n_z + ks.original_count)
    throw DimensionError("apply_keep: " + std::to_string(f.rows()) + " rows but n_z + count = " +
                         std::to_string(n_z + ks.original_count));
  TokenMatrix out(n_z + ks.kept(), f.cols());
  out.topRows(n_z) = f.topRows(n_z);
  for (Index i = 0; i < ks.kept(); ++i) out.row(n_z + i) = f.row(n_z + ks.kept_positions[i]);
  return out;
}

Var apply_keep(const Var& f, Index n_z, const KeepSet& ks) {
  ks.validate();
  if (f.rows() != n_z + ks.original_count)
    throw DimensionError("apply_keep: " + std::to_string(f.rows()) + " rows but n_z + count = " +
                         std::to_string(n_z + ks.original_count));
  return gather_rows(f, search_row_indices(n_z, ks.kept_positions));
}

std::vector<Index> surviving_positions(const KeepChain& chain) {
  if (chain.empty()) return {};
  std::vector<Index> positions(static_cast<std::size_t>(chain.front().original_count));
  std::iota(positions.begin(), positions.end(), Index{0});
  for (const KeepSet& ks : chain) {
    if (ks.original_count != static_cast<Index>(positions.size()))
      throw ContractViolation("keep chain: stage expects " + std::to_string(ks.original_count) +
                              " tokens, previous stage left " + std::to_string(positions.size()));
    ks.validate();
    std::vector<Index> next;
    next.reserve(ks.kept_positions.size());
    for (Index p : ks.kept_positions) next.push_back(positions[static_cast<std::size_t>(p)]);
    positions = std::move(next);
  }
  return positions;
}

TokenMatrix restore(const TokenMatrix& f, Index n_z, const KeepChain& chain) {
  validate_chain(chain, f.rows() - n_z);
  if (chain.empty()) return f;
  const std::vector<Index> positions = surviving_positions(chain);
  const Index original = chain_original_count(chain, f.rows() - n_z);
  TokenMatrix out = TokenMatrix::Zero(n_z + original, f.cols());
  out.topRows(n_z) = f.topRows(n_z);
  for (std::size_t i = 0; i < positions.size(); ++i)
    out.row(n_z + positions[i]) = f.row(n_z + static_cast<Index>(i));
  return out;
}

Var restore(const Var& f, Index n_z, const KeepChain& chain) {
  validate_chain(chain, f.rows() - n_z);
  if (chain.empty()) return f;
  const Index original = chain_original_count(chain, f.rows() - n_z);
  return scatter_rows(f, search_row_indices(n_z, surviving_positions(chain)), n_z + original);
}

std::string format_chain(const KeepChain& chain) {
  std::ostringstream os;
  for (const KeepSet& ks : chain) {
    for (std::size_t i = 0; i < ks.kept_positions.size(); ++i) {
      if (i) os << ',';
      os << ks.kept_positions[i];
    }
    os << '\n';
  }
  return os.str();
}

KeepChain parse_chain(const std::string& text, Index original_count) {
  KeepChain chain;
  std::istringstream lines(text);
  std::string line;
  Index count = original_count;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    KeepSet ks;
    ks.original_count = count;
    std::istringstream fields(line);
    std::string field;
    while (std::getline(fields, field, ',')) {
      try {
        std::size_t used = 0;
        const long long v = std::stoll(field, &used);
        if (used != field.size()) throw std::invalid_argument(field);
        ks.kept_positions.push_back(static_cast<Index>(v));
      } catch (const std::exception&) {
        throw FormatError("keep chain: bad index '" + field + "'");
      }
    }
    ks.validate();
    count = ks.kept();
    chain.push_back(std::move(ks));
  }
  return chain;
}

}  // namespace caformer
