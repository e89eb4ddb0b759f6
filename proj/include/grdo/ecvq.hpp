#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "grdo/gaussian.hpp"
#include "grdo/mask.hpp"
#include "grdo/parallel.hpp"
#include "grdo/rng.hpp"

namespace grdo {

// Quantized attribute groups: scale, rotation, and the color split into DC
// plus one codebook per SH degree so masked degrees never leak zeros into a
// codebook.
enum class AttrTag : int { kScale = 0, kRotation, kDc, kSh1, kSh2, kSh3 };
inline constexpr int kNumTags = 6;
inline constexpr int kTagDims[kNumTags] = {3, 4, 3, 9, 15, 21};

inline const char* tag_name(int tag) {
  static const char* names[kNumTags] = {"scale", "rotation", "dc", "sh1", "sh2", "sh3"};
  return names[tag];
}

struct Codebook {
  int dim = 0;
  std::vector<double> data;  // size() * dim, row-major

  size_t size() const { return dim > 0 ? data.size() / dim : 0; }
  double* word(size_t m) { return data.data() + m * dim; }
  const double* word(size_t m) const { return data.data() + m * dim; }
};

// Unconditional entropy model: p_j = softmax(-w)_j.
struct EntropyModel {
  std::vector<double> logits;

  size_t size() const { return logits.size(); }

  // -log p_j = w_j + log sum_m exp(-w_m), computed stably.
  std::vector<double> neg_log_probs() const {
    std::vector<double> out(logits.size());
    if (logits.empty()) return out;
    double wmin = logits[0];
    for (double w : logits) wmin = std::min(wmin, w);
    double acc = 0.0;
    for (double w : logits) acc += std::exp(-(w - wmin));
    const double lse = -wmin + std::log(acc);
    for (size_t j = 0; j < logits.size(); ++j) out[j] = logits[j] + lse;
    return out;
  }

  std::vector<double> probabilities() const {
    std::vector<double> p = neg_log_probs();
    for (double& v : p) v = std::exp(-v);
    return p;
  }
};

struct QuantizerEntry {
  Codebook codebook;
  EntropyModel entropy;
  double lambda = 256.0;
};

inline constexpr double kDefaultLambdaScale = 32768.0;
inline constexpr double kDefaultLambdaOther = 256.0;
inline constexpr size_t kDefaultCodebookSizeMain = 8192;  // scale, rotation, DC
inline constexpr size_t kDefaultCodebookSizeSh = 4096;

struct QuantizerBank {
  std::array<QuantizerEntry, kNumTags> entries;

  QuantizerBank() {
    for (int t = 0; t < kNumTags; ++t) {
      entries[t].codebook.dim = kTagDims[t];
      entries[t].lambda = t == 0 ? kDefaultLambdaScale : kDefaultLambdaOther;
    }
  }

  QuantizerEntry& operator[](int t) { return entries[t]; }
  const QuantizerEntry& operator[](int t) const { return entries[t]; }

  void validate() const {
    for (int t = 0; t < kNumTags; ++t) {
      if (!(entries[t].lambda > 0.0)) throw std::invalid_argument("QuantizerBank: lambda <= 0");
      if (entries[t].codebook.size() != entries[t].entropy.size()) {
        throw std::invalid_argument("QuantizerBank: codebook/logits size mismatch");
      }
    }
  }
};

struct SelectResult {
  uint32_t index = 0;
  double rate_nats = 0.0;
  double vq_dist = 0.0;
};

// RD-optimal codeword: argmin_m of -log(p_m)/lambda + ||x - CB[m]||^2, ties
// to the smallest index. `rate_over_lambda` holds -log(p_m)/lambda.
inline SelectResult select_with_costs(const double* input, const Codebook& cb,
                                      const std::vector<double>& rate_over_lambda,
                                      const std::vector<double>& neg_log_probs) {
  const size_t m_count = cb.size();
  if (m_count == 0) throw std::invalid_argument("select: empty codebook");
  SelectResult best;
  double best_cost = std::numeric_limits<double>::infinity();
  for (size_t m = 0; m < m_count; ++m) {
    const double* w = cb.word(m);
    double dist = 0.0;
    for (int d = 0; d < cb.dim; ++d) {
      const double diff = input[d] - w[d];
      dist += diff * diff;
    }
    const double cost = rate_over_lambda[m] + dist;
    if (cost < best_cost) {
      best_cost = cost;
      best.index = static_cast<uint32_t>(m);
      best.vq_dist = dist;
    }
  }
  best.rate_nats = neg_log_probs[best.index];
  return best;
}

inline SelectResult select(const double* input, const Codebook& cb, const EntropyModel& em,
                           double lambda) {
  if (cb.size() != em.size()) throw std::invalid_argument("select: codebook/logits mismatch");
  const std::vector<double> nlp = em.neg_log_probs();
  std::vector<double> rate_over_lambda(nlp.size());
  for (size_t m = 0; m < nlp.size(); ++m) rate_over_lambda[m] = nlp[m] / lambda;
  return select_with_costs(input, cb, rate_over_lambda, nlp);
}

namespace detail {

// Flattened per-tag input vector of one Gaussian (row-major over SH rows).
inline void extract_tag(const RenderAttributes& attrs, size_t i, int tag, double* out) {
  switch (static_cast<AttrTag>(tag)) {
    case AttrTag::kScale:
      for (int d = 0; d < 3; ++d) out[d] = attrs.scales[i][d];
      break;
    case AttrTag::kRotation:
      for (int d = 0; d < 4; ++d) out[d] = attrs.rotations[i][d];
      break;
    case AttrTag::kDc:
      for (int d = 0; d < 3; ++d) out[d] = attrs.sh[i](0, d);
      break;
    default: {
      const int l = tag - static_cast<int>(AttrTag::kSh1) + 1;
      int k = 0;
      for (int r = kShDegreeStart[l]; r < kShDegreeStart[l] + kShDegreeRows[l]; ++r) {
        for (int c = 0; c < 3; ++c) out[k++] = attrs.sh[i](r, c);
      }
    }
  }
}

inline void insert_tag(RenderAttributes& attrs, size_t i, int tag, const double* in) {
  switch (static_cast<AttrTag>(tag)) {
    case AttrTag::kScale:
      for (int d = 0; d < 3; ++d) attrs.scales[i][d] = in[d];
      break;
    case AttrTag::kRotation:
      for (int d = 0; d < 4; ++d) attrs.rotations[i][d] = in[d];
      break;
    case AttrTag::kDc:
      for (int d = 0; d < 3; ++d) attrs.sh[i](0, d) = in[d];
      break;
    default: {
      const int l = tag - static_cast<int>(AttrTag::kSh1) + 1;
      int k = 0;
      for (int r = kShDegreeStart[l]; r < kShDegreeStart[l] + kShDegreeRows[l]; ++r) {
        for (int c = 0; c < 3; ++c) attrs.sh[i](r, c) = in[k++];
      }
    }
  }
}

// Whether a Gaussian participates in a tag's quantization: pruned Gaussians
// are skipped entirely, masked SH degrees per Gaussian.
inline bool tag_present(const MaskForward& fwd, size_t i, int tag) {
  if (!fwd.gaussian_kept(i)) return false;
  if (tag >= static_cast<int>(AttrTag::kSh1)) {
    return fwd.degree_kept(i, tag - static_cast<int>(AttrTag::kSh1) + 1);
  }
  return true;
}

}  // namespace detail

struct QuantizeResult {
  RenderAttributes quantized;  // masked view with codewords substituted
  // Parallel arrays per tag: which Gaussian, which codeword, and the rate /
  // distortion of that selection.
  std::array<std::vector<uint32_t>, kNumTags> owners;
  std::array<std::vector<uint32_t>, kNumTags> indices;
  std::array<std::vector<double>, kNumTags> rates;
  std::array<std::vector<double>, kNumTags> dists;
  size_t survivors = 0;
  double rate_loss = 0.0;  // Eq. 11 left, averaged over survivors
  double vq_loss = 0.0;    // Eq. 11 right

  size_t total_indices() const {
    size_t n = 0;
    for (const auto& v : indices) n += v.size();
    return n;
  }
};

// ECVQ assignment over the masked view: every surviving Gaussian gets one
// codeword per present tag; positions and opacities pass through untouched.
inline QuantizeResult quantize_cloud(const RenderAttributes& masked, const MaskForward& fwd,
                                     const QuantizerBank& bank) {
  bank.validate();
  if (masked.size() != fwd.size()) throw std::invalid_argument("quantize_cloud: size mismatch");

  QuantizeResult res;
  res.quantized = masked;
  for (size_t i = 0; i < masked.size(); ++i) {
    if (fwd.gaussian_kept(i)) ++res.survivors;
  }

  for (int t = 0; t < kNumTags; ++t) {
    auto& owners = res.owners[t];
    for (uint32_t i = 0; i < masked.size(); ++i) {
      if (detail::tag_present(fwd, i, t)) owners.push_back(i);
    }
    res.indices[t].resize(owners.size());
    res.rates[t].resize(owners.size());
    res.dists[t].resize(owners.size());
    if (owners.empty()) continue;

    const auto& entry = bank[t];
    const std::vector<double> nlp = entry.entropy.neg_log_probs();
    std::vector<double> rate_over_lambda(nlp.size());
    for (size_t m = 0; m < nlp.size(); ++m) rate_over_lambda[m] = nlp[m] / entry.lambda;

    parallel_for(owners.size(), [&](size_t k) {
      double input[32];
      detail::extract_tag(masked, owners[k], t, input);
      const SelectResult sel =
          select_with_costs(input, entry.codebook, rate_over_lambda, nlp);
      res.indices[t][k] = sel.index;
      res.rates[t][k] = sel.rate_nats;
      res.dists[t][k] = sel.vq_dist;
    });
    for (size_t k = 0; k < owners.size(); ++k) {
      detail::insert_tag(res.quantized, owners[k], t, entry.codebook.word(res.indices[t][k]));
    }
  }

  if (res.survivors > 0) {
    const double inv_n = 1.0 / static_cast<double>(res.survivors);
    for (int t = 0; t < kNumTags; ++t) {
      double rate = 0.0, dist = 0.0;
      for (double r : res.rates[t]) rate += r;
      for (double d : res.dists[t]) dist += d;
      res.rate_loss += rate / bank[t].lambda * inv_n;
      res.vq_loss += dist * inv_n;
    }
  }
  return res;
}

// Gradients of the rate and VQ losses. The VQ distortion pulls codewords
// toward their inputs and inputs toward their codewords; the rate loss moves
// logits by (counts - n * p). Index choice itself is detached.
struct EcvqGrads {
  AttributeGrads inputs;  // w.r.t. the masked attribute values
  std::array<std::vector<double>, kNumTags> codebooks;
  std::array<std::vector<double>, kNumTags> logits;
};

inline EcvqGrads ecvq_backward(const RenderAttributes& masked, const QuantizeResult& sel,
                               const QuantizerBank& bank, double upstream_rate = 1.0,
                               double upstream_vq = 1.0) {
  EcvqGrads g;
  g.inputs.resize(masked.size());
  if (sel.survivors == 0) {
    for (int t = 0; t < kNumTags; ++t) {
      g.codebooks[t].assign(bank[t].codebook.data.size(), 0.0);
      g.logits[t].assign(bank[t].entropy.size(), 0.0);
    }
    return g;
  }
  const double inv_n = 1.0 / static_cast<double>(sel.survivors);
  for (int t = 0; t < kNumTags; ++t) {
    const auto& entry = bank[t];
    const int dim = entry.codebook.dim;
    g.codebooks[t].assign(entry.codebook.data.size(), 0.0);
    g.logits[t].assign(entry.entropy.size(), 0.0);

    double input[32];
    for (size_t k = 0; k < sel.owners[t].size(); ++k) {
      const uint32_t i = sel.owners[t][k];
      const uint32_t j = sel.indices[t][k];
      detail::extract_tag(masked, i, t, input);
      const double* w = entry.codebook.word(j);
      double dinput[32];
      for (int d = 0; d < dim; ++d) {
        const double diff = input[d] - w[d];
        dinput[d] = upstream_vq * inv_n * 2.0 * diff;
        g.codebooks[t][j * dim + d] -= dinput[d];
      }
      // Accumulate into the masked-attribute gradient.
      switch (static_cast<AttrTag>(t)) {
        case AttrTag::kScale:
          for (int d = 0; d < 3; ++d) g.inputs.scales[i][d] += dinput[d];
          break;
        case AttrTag::kRotation:
          for (int d = 0; d < 4; ++d) g.inputs.rotations[i][d] += dinput[d];
          break;
        case AttrTag::kDc:
          for (int d = 0; d < 3; ++d) g.inputs.sh[i](0, d) += dinput[d];
          break;
        default: {
          const int l = t - static_cast<int>(AttrTag::kSh1) + 1;
          int kk = 0;
          for (int r = kShDegreeStart[l]; r < kShDegreeStart[l] + kShDegreeRows[l]; ++r) {
            for (int c = 0; c < 3; ++c) g.inputs.sh[i](r, c) += dinput[kk++];
          }
        }
      }
    }

    // Rate gradient: sum over selections of (onehot_j - p).
    if (!sel.indices[t].empty()) {
      const std::vector<double> p = entry.entropy.probabilities();
      const double scale = upstream_rate * inv_n / entry.lambda;
      const double n_sel = static_cast<double>(sel.indices[t].size());
      for (size_t m = 0; m < p.size(); ++m) g.logits[t][m] -= scale * n_sel * p[m];
      for (uint32_t j : sel.indices[t]) g.logits[t][j] += scale;
    }
  }
  return g;
}

struct CompactedCodebook {
  Codebook codebook;
  std::vector<double> probabilities;  // renormalized over survivors
  std::vector<int32_t> remap;         // old index -> new, -1 if unused
};

// Drop codewords unused by any Gaussian; survivors keep ascending order and
// their probabilities are renormalized.
inline CompactedCodebook prune_codebook(const Codebook& cb, const EntropyModel& em,
                                        const std::vector<uint32_t>& used_indices) {
  for (uint32_t j : used_indices) {
    if (j >= cb.size()) throw std::invalid_argument("prune_codebook: index out of range");
  }
  std::vector<bool> used(cb.size(), false);
  for (uint32_t j : used_indices) used[j] = true;

  CompactedCodebook out;
  out.codebook.dim = cb.dim;
  out.remap.assign(cb.size(), -1);
  const std::vector<double> p = em.probabilities();
  double psum = 0.0;
  for (size_t m = 0; m < cb.size(); ++m) {
    if (!used[m]) continue;
    out.remap[m] = static_cast<int32_t>(out.codebook.size());
    out.codebook.data.insert(out.codebook.data.end(), cb.word(m), cb.word(m) + cb.dim);
    out.probabilities.push_back(p[m]);
    psum += p[m];
  }
  if (psum > 0.0) {
    for (double& v : out.probabilities) v /= psum;
  }
  return out;
}

// Populate all six codebooks from the mask-surviving attribute population.
inline void init_bank(QuantizerBank& bank, const RenderAttributes& masked,
                      const MaskForward& fwd, const std::array<size_t, kNumTags>& sizes,
                      Rng& rng);

// Codebook init: sample codewords from the attribute population (distinct
// indices while they last), logits start uniform at zero.
inline void init_entry_from_population(QuantizerEntry& entry,
                                       const std::vector<std::vector<double>>& population,
                                       size_t target_size, Rng& rng) {
  const int dim = entry.codebook.dim;
  entry.codebook.data.clear();
  if (population.empty() || target_size == 0) {
    entry.entropy.logits.clear();
    return;
  }
  std::vector<uint32_t> perm(population.size());
  for (uint32_t i = 0; i < perm.size(); ++i) perm[i] = i;
  for (size_t i = perm.size(); i > 1; --i) {
    std::swap(perm[i - 1], perm[rng.below(i)]);
  }
  entry.codebook.data.reserve(target_size * dim);
  for (size_t m = 0; m < target_size; ++m) {
    const auto& src = population[perm[m % perm.size()]];
    for (int d = 0; d < dim; ++d) {
      double v = src[d];
      if (m >= perm.size()) {
        v += 1e-6 * static_cast<double>(m / perm.size());  // keep codewords distinct
      }
      entry.codebook.data.push_back(v);
    }
  }
  entry.entropy.logits.assign(target_size, 0.0);
}

inline void init_bank(QuantizerBank& bank, const RenderAttributes& masked,
                      const MaskForward& fwd, const std::array<size_t, kNumTags>& sizes,
                      Rng& rng) {
  for (int t = 0; t < kNumTags; ++t) {
    std::vector<std::vector<double>> population;
    for (size_t i = 0; i < masked.size(); ++i) {
      if (!detail::tag_present(fwd, i, t)) continue;
      std::vector<double> v(kTagDims[t]);
      detail::extract_tag(masked, i, t, v.data());
      population.push_back(std::move(v));
    }
    bank[t].codebook.dim = kTagDims[t];
    init_entry_from_population(bank[t], population, std::min(sizes[t], population.size()),
                               rng);
  }
}

}  // namespace grdo
