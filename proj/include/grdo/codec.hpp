#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "grdo/common.hpp"
#include "grdo/ecvq.hpp"
#include "grdo/gaussian.hpp"
#include "grdo/half.hpp"
#include "grdo/mask.hpp"
#include "grdo/range_coder.hpp"

namespace grdo {

// Compressed-scene wire format (all little-endian):
//   magic "GRDO", version u8
//   N' u32, cluster_starts[8] u32, alpha_min f32, alpha_step f32,
//   codebook sizes u32 per tag {scale, rotation, dc, sh1, sh2, sh3}
//   per tag: codebook f32 payload, u16 count table,
//            u32 byte length + arithmetic-coded index stream
//   opacity: 256 x u16 count table, u32 byte length + coded u8 symbols
//   positions: N' x 3 x u16 (IEEE half)
// Section sizes sum to the file size exactly; SH stream lengths are implied
// by the cluster starts.

inline constexpr char kMagic[4] = {'G', 'R', 'D', 'O'};
inline constexpr uint8_t kFormatVersion = 1;
inline constexpr size_t kHeaderBytes = 4 + 1 + 4 + 8 * 4 + 4 + 4 + kNumTags * 4;

struct EncodeOptions {
  double position_warn_tolerance = 0.01;  // world units of f16 error
};

// Byte accounting in the five report categories (header / indexes /
// codebooks / logits / positions) with the per-attribute index split.
struct Composition {
  uint64_t header = 0;
  std::array<uint64_t, kNumTags> codebooks{};
  std::array<uint64_t, kNumTags> tables{};
  std::array<uint64_t, kNumTags> indexes{};  // length prefix included
  uint64_t opacity_table = 0;
  uint64_t opacity_indexes = 0;
  uint64_t positions = 0;

  uint64_t codebooks_total() const {
    uint64_t s = 0;
    for (auto v : codebooks) s += v;
    return s;
  }
  uint64_t logits_total() const {
    uint64_t s = opacity_table;
    for (auto v : tables) s += v;
    return s;
  }
  uint64_t indexes_total() const {
    uint64_t s = opacity_indexes;
    for (auto v : indexes) s += v;
    return s;
  }
  uint64_t total() const {
    return header + codebooks_total() + logits_total() + indexes_total() + positions;
  }
};

// Pruned Gaussians dropped, order preserved.
struct SurvivorSet {
  GaussianCloud cloud;
  std::vector<int> sh_bits;                      // 3-bit SH mask integer per survivor
  std::vector<Eigen::Vector3d> theta_hard;       // per-degree hard masks
};

inline int sh_bits_degree_kept(int bits, int degree) { return (bits >> (3 - degree)) & 1; }

inline SurvivorSet remove_pruned(const GaussianCloud& cloud, const MaskForward& fwd) {
  if (fwd.size() != cloud.size()) throw std::invalid_argument("remove_pruned: size mismatch");
  SurvivorSet out;
  for (size_t i = 0; i < cloud.size(); ++i) {
    if (!fwd.gaussian_kept(i)) continue;
    out.cloud.positions.push_back(cloud.positions[i]);
    out.cloud.log_scales.push_back(cloud.log_scales[i]);
    out.cloud.rotations.push_back(cloud.rotations[i]);
    out.cloud.opacity_logits.push_back(cloud.opacity_logits[i]);
    out.cloud.sh_coeffs.push_back(cloud.sh_coeffs[i]);
    out.sh_bits.push_back(fwd.sh_mask_bits(i));
    out.theta_hard.push_back(fwd.theta_hard[i]);
  }
  if (out.cloud.size() == 0) throw CodecError("encode: empty scene (all Gaussians pruned)");
  return out;
}

// Stable sort by the 3-bit SH mask integer; cluster_starts[v] is the first
// index of cluster v, or the next cluster's start when v is empty.
struct Rearranged {
  SurvivorSet survivors;
  std::array<uint32_t, 8> cluster_starts{};
};

inline Rearranged rearrange(const SurvivorSet& in) {
  const size_t n = in.cloud.size();
  std::vector<uint32_t> order(n);
  for (uint32_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](uint32_t a, uint32_t b) { return in.sh_bits[a] < in.sh_bits[b]; });

  Rearranged out;
  for (uint32_t i : order) {
    out.survivors.cloud.positions.push_back(in.cloud.positions[i]);
    out.survivors.cloud.log_scales.push_back(in.cloud.log_scales[i]);
    out.survivors.cloud.rotations.push_back(in.cloud.rotations[i]);
    out.survivors.cloud.opacity_logits.push_back(in.cloud.opacity_logits[i]);
    out.survivors.cloud.sh_coeffs.push_back(in.cloud.sh_coeffs[i]);
    out.survivors.sh_bits.push_back(in.sh_bits[i]);
    out.survivors.theta_hard.push_back(in.theta_hard[i]);
  }
  uint32_t next = static_cast<uint32_t>(n);
  for (int v = 7; v >= 0; --v) {
    const auto lo = std::lower_bound(out.survivors.sh_bits.begin(),
                                     out.survivors.sh_bits.end(), v);
    const auto hi = std::upper_bound(out.survivors.sh_bits.begin(),
                                     out.survivors.sh_bits.end(), v);
    if (lo == hi) {
      out.cluster_starts[v] = next;
    } else {
      out.cluster_starts[v] =
          static_cast<uint32_t>(lo - out.survivors.sh_bits.begin());
      next = out.cluster_starts[v];
    }
  }
  return out;
}

namespace detail {

struct ByteWriter {
  std::vector<uint8_t> bytes;

  void u8(uint8_t v) { bytes.push_back(v); }
  void u16(uint16_t v) {
    bytes.push_back(static_cast<uint8_t>(v));
    bytes.push_back(static_cast<uint8_t>(v >> 8));
  }
  void u32(uint32_t v) {
    for (int k = 0; k < 4; ++k) bytes.push_back(static_cast<uint8_t>(v >> (8 * k)));
  }
  void f32(float v) {
    uint32_t u;
    std::memcpy(&u, &v, 4);
    u32(u);
  }
  void raw(const std::vector<uint8_t>& v) { bytes.insert(bytes.end(), v.begin(), v.end()); }
};

struct ByteReader {
  std::span<const uint8_t> bytes;
  size_t pos = 0;
  const char* section = "header";

  void need(size_t n) {
    if (pos + n > bytes.size()) {
      throw CodecError(std::string("decode: truncated ") + section + " section");
    }
  }
  uint8_t u8() {
    need(1);
    return bytes[pos++];
  }
  uint16_t u16() {
    need(2);
    const uint16_t v = static_cast<uint16_t>(bytes[pos] | (bytes[pos + 1] << 8));
    pos += 2;
    return v;
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<uint32_t>(bytes[pos + k]) << (8 * k);
    pos += 4;
    return v;
  }
  float f32() {
    const uint32_t u = u32();
    float v;
    std::memcpy(&v, &u, 4);
    return v;
  }
  std::span<const uint8_t> raw(size_t n) {
    need(n);
    auto out = bytes.subspan(pos, n);
    pos += n;
    return out;
  }
};

// Quantize the codebook payload to its stored float32 precision so the
// selection and the committed attributes both see exactly the wire values.
inline QuantizerBank snap_to_f32(const QuantizerBank& bank) {
  QuantizerBank out = bank;
  for (int t = 0; t < kNumTags; ++t) {
    for (double& v : out[t].codebook.data) v = static_cast<double>(static_cast<float>(v));
  }
  return out;
}

}  // namespace detail

struct EncodeResult {
  std::vector<uint8_t> bytes;
  RenderAttributes committed;  // the quantized model the file stores, exactly
  std::array<uint32_t, 8> cluster_starts{};
  std::vector<int> sh_bits;
  Composition composition;
  std::vector<std::string> warnings;
  size_t survivors = 0;
};

// Full encoding pipeline: removal, rearrangement, final ECVQ assignment,
// codeword pruning, opacity scalar quantization, arithmetic coding, f16
// positions.
inline EncodeResult encode(const GaussianCloud& cloud, const MaskSet& masks,
                           const QuantizerBank& bank, const EncodeOptions& opts = {}) {
  cloud.check_consistent();
  masks.check_sized(cloud.size());
  bank.validate();

  const MaskForward fwd_full = evaluate_masks(masks);
  const Rearranged arr = rearrange(remove_pruned(cloud, fwd_full));
  const size_t n = arr.survivors.cloud.size();

  // Mask view of the rearranged survivors (phi all ones).
  MaskForward fwd;
  fwd.phi_soft.assign(n, 1.0);
  fwd.phi_hard.assign(n, 1.0);
  fwd.theta_soft.assign(n, Eigen::Vector3d::Ones());
  fwd.theta_hard = arr.survivors.theta_hard;
  const RenderAttributes masked = apply_masks(arr.survivors.cloud, fwd);

  // Final assignment against the f32-snapped codebooks.
  const QuantizerBank snapped = detail::snap_to_f32(bank);
  const QuantizeResult sel = quantize_cloud(masked, fwd, snapped);

  EncodeResult res;
  res.cluster_starts = arr.cluster_starts;
  res.sh_bits = arr.survivors.sh_bits;
  res.survivors = n;

  // Opacity scalar quantization in float32 arithmetic.
  std::vector<float> alphas(n);
  float a_min = 1.0f, a_max = 0.0f;
  for (size_t i = 0; i < n; ++i) {
    alphas[i] = static_cast<float>(masked.opacities[i]);
    a_min = std::min(a_min, alphas[i]);
    a_max = std::max(a_max, alphas[i]);
  }
  const float step = (a_max - a_min) / 255.0f;
  std::vector<uint32_t> opacity_symbols(n);
  for (size_t i = 0; i < n; ++i) {
    int q = 0;
    if (step > 0.0f) {
      q = static_cast<int>(std::lround((alphas[i] - a_min) / step));
      q = std::clamp(q, 0, 255);
    }
    opacity_symbols[i] = static_cast<uint32_t>(q);
  }

  // Committed model: exactly what decode will rebuild.
  res.committed = masked;
  for (size_t i = 0; i < n; ++i) {
    const Eigen::Vector3d before = res.committed.positions[i];
    for (int a = 0; a < 3; ++a) {
      res.committed.positions[i][a] =
          static_cast<double>(half_round_trip(static_cast<float>(before[a])));
    }
    if ((res.committed.positions[i] - before).lpNorm<Eigen::Infinity>() >
        opts.position_warn_tolerance) {
      res.warnings.push_back("position " + std::to_string(i) +
                             " moved more than the f16 tolerance");
    }
    res.committed.opacities[i] =
        static_cast<double>(a_min + static_cast<float>(opacity_symbols[i]) * step);
  }
  for (int t = 0; t < kNumTags; ++t) {
    for (size_t k = 0; k < sel.owners[t].size(); ++k) {
      detail::insert_tag(res.committed, sel.owners[t][k], t,
                         snapped[t].codebook.word(sel.indices[t][k]));
    }
  }

  // Codeword pruning and stream coding.
  detail::ByteWriter w;
  for (char c : kMagic) w.u8(static_cast<uint8_t>(c));
  w.u8(kFormatVersion);
  w.u32(static_cast<uint32_t>(n));
  for (uint32_t s : arr.cluster_starts) w.u32(s);
  w.f32(a_min);
  w.f32(step);

  std::array<CompactedCodebook, kNumTags> compacted;
  for (int t = 0; t < kNumTags; ++t) {
    compacted[t] = prune_codebook(snapped[t].codebook, snapped[t].entropy, sel.indices[t]);
    w.u32(static_cast<uint32_t>(compacted[t].codebook.size()));
  }
  res.composition.header = w.bytes.size();

  for (int t = 0; t < kNumTags; ++t) {
    const size_t before = w.bytes.size();
    for (double v : compacted[t].codebook.data) w.f32(static_cast<float>(v));
    res.composition.codebooks[t] = w.bytes.size() - before;

    const size_t table_at = w.bytes.size();
    std::vector<uint8_t> coded;
    if (!sel.indices[t].empty()) {
      const FrequencyTable table = FrequencyTable::quantize(compacted[t].probabilities);
      for (uint16_t c : table.counts) w.u16(c);
      std::vector<uint32_t> remapped(sel.indices[t].size());
      for (size_t k = 0; k < remapped.size(); ++k) {
        remapped[k] = static_cast<uint32_t>(compacted[t].remap[sel.indices[t][k]]);
      }
      coded = arithmetic_encode(remapped, table);
    }
    res.composition.tables[t] = w.bytes.size() - table_at;
    const size_t idx_at = w.bytes.size();
    w.u32(static_cast<uint32_t>(coded.size()));
    w.raw(coded);
    res.composition.indexes[t] = w.bytes.size() - idx_at;
  }

  // Opacity table from the empirical histogram.
  {
    const size_t table_at = w.bytes.size();
    std::vector<double> hist(256, 0.0);
    for (uint32_t q : opacity_symbols) hist[q] += 1.0;
    for (double& v : hist) v /= static_cast<double>(n);
    const FrequencyTable table = FrequencyTable::quantize(hist);
    for (uint16_t c : table.counts) w.u16(c);
    res.composition.opacity_table = w.bytes.size() - table_at;

    const size_t idx_at = w.bytes.size();
    const std::vector<uint8_t> coded = arithmetic_encode(opacity_symbols, table);
    w.u32(static_cast<uint32_t>(coded.size()));
    w.raw(coded);
    res.composition.opacity_indexes = w.bytes.size() - idx_at;
  }

  {
    const size_t at = w.bytes.size();
    for (size_t i = 0; i < n; ++i) {
      for (int a = 0; a < 3; ++a) {
        w.u16(float_to_half(std::clamp(
            static_cast<float>(masked.positions[i][a]), -kHalfMax, kHalfMax)));
      }
    }
    res.composition.positions = w.bytes.size() - at;
  }

  res.bytes = std::move(w.bytes);
  if (res.composition.total() != res.bytes.size()) {
    throw CodecError("encode: composition accounting does not tie out");
  }
  return res;
}

struct DecodedScene {
  RenderAttributes attrs;
  std::array<uint32_t, 8> cluster_starts{};
  std::vector<int> sh_bits;
  Composition composition;

  // Wire-level state, kept so a decoded scene re-encodes byte-identically.
  std::array<Codebook, kNumTags> codebooks;
  std::array<std::vector<uint16_t>, kNumTags> count_tables;
  std::array<std::vector<uint32_t>, kNumTags> indices;
  std::vector<uint16_t> opacity_counts;
  std::vector<uint32_t> opacity_symbols;
  float alpha_min = 0.0f;
  float alpha_step = 0.0f;
};

inline DecodedScene decode(std::span<const uint8_t> bytes) {
  detail::ByteReader r{bytes};
  for (char c : kMagic) {
    if (r.u8() != static_cast<uint8_t>(c)) throw CodecError("decode: bad magic");
  }
  const uint8_t version = r.u8();
  if (version != kFormatVersion) {
    throw CodecError("decode: unsupported format version " + std::to_string(version));
  }
  const uint32_t n = r.u32();
  DecodedScene out;
  uint32_t prev = 0;
  for (int v = 0; v < 8; ++v) {
    out.cluster_starts[v] = r.u32();
    if (out.cluster_starts[v] < prev || out.cluster_starts[v] > n) {
      throw CodecError("decode: inconsistent cluster starts");
    }
    prev = out.cluster_starts[v];
  }
  const float a_min = r.f32();
  const float step = r.f32();
  uint32_t cb_sizes[kNumTags];
  for (uint32_t& s : cb_sizes) s = r.u32();
  out.composition.header = r.pos;

  // Per-Gaussian SH bits and per-degree symbol counts from the clusters.
  out.sh_bits.assign(n, 0);
  auto cluster_end = [&](int v) {
    return v < 7 ? out.cluster_starts[v + 1] : n;
  };
  size_t degree_counts[3] = {0, 0, 0};
  for (int v = 0; v < 8; ++v) {
    for (uint32_t i = out.cluster_starts[v]; i < cluster_end(v); ++i) out.sh_bits[i] = v;
    const size_t len = cluster_end(v) - out.cluster_starts[v];
    for (int l = 1; l <= 3; ++l) {
      if (sh_bits_degree_kept(v, l)) degree_counts[l - 1] += len;
    }
  }

  auto& books = out.codebooks;
  auto& indices = out.indices;
  for (int t = 0; t < kNumTags; ++t) {
    r.section = tag_name(t);
    books[t].dim = kTagDims[t];
    const size_t count =
        t < 3 ? n : degree_counts[t - static_cast<int>(AttrTag::kSh1)];
    if (count > 0 && cb_sizes[t] == 0) {
      throw CodecError(std::string("decode: empty codebook for nonempty stream ") +
                       tag_name(t));
    }
    const size_t cb_at = r.pos;
    books[t].data.resize(static_cast<size_t>(cb_sizes[t]) * kTagDims[t]);
    for (double& v : books[t].data) v = static_cast<double>(r.f32());
    out.composition.codebooks[t] = r.pos - cb_at;

    const size_t table_at = r.pos;
    FrequencyTable table;
    if (cb_sizes[t] > 0) {
      out.count_tables[t].resize(cb_sizes[t]);
      for (uint16_t& c : out.count_tables[t]) c = r.u16();
      if (count > 0) table = FrequencyTable::from_counts(out.count_tables[t]);
    }
    out.composition.tables[t] = r.pos - table_at;

    const size_t idx_at = r.pos;
    const uint32_t coded_len = r.u32();
    const auto coded = r.raw(coded_len);
    out.composition.indexes[t] = r.pos - idx_at;
    indices[t] = arithmetic_decode(coded, table, count);
    for (uint32_t j : indices[t]) {
      if (j >= cb_sizes[t]) {
        throw CodecError(std::string("decode: index out of codebook range in ") +
                         tag_name(t));
      }
    }
  }

  r.section = "opacity";
  const size_t op_table_at = r.pos;
  out.opacity_counts.resize(256);
  for (uint16_t& c : out.opacity_counts) c = r.u16();
  out.composition.opacity_table = r.pos - op_table_at;
  const size_t op_idx_at = r.pos;
  const uint32_t op_len = r.u32();
  const auto op_coded = r.raw(op_len);
  out.composition.opacity_indexes = r.pos - op_idx_at;
  out.opacity_symbols =
      n > 0 ? arithmetic_decode(op_coded, FrequencyTable::from_counts(out.opacity_counts), n)
            : std::vector<uint32_t>{};
  out.alpha_min = a_min;
  out.alpha_step = step;

  r.section = "positions";
  const size_t pos_at = r.pos;
  out.attrs.positions.resize(n);
  for (uint32_t i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a) {
      out.attrs.positions[i][a] = static_cast<double>(half_to_float(r.u16()));
    }
  }
  out.composition.positions = r.pos - pos_at;
  if (r.pos != bytes.size()) throw CodecError("decode: trailing bytes after positions");

  // Rebuild the quantized attributes.
  out.attrs.scales.assign(n, Eigen::Vector3d::Zero());
  out.attrs.rotations.assign(n, Eigen::Vector4d(1, 0, 0, 0));
  out.attrs.opacities.assign(n, 0.0);
  out.attrs.sh.assign(n, ShCoeffs::Zero());
  for (uint32_t i = 0; i < n; ++i) {
    detail::insert_tag(out.attrs, i, 0, books[0].word(indices[0][i]));
    detail::insert_tag(out.attrs, i, 1, books[1].word(indices[1][i]));
    detail::insert_tag(out.attrs, i, 2, books[2].word(indices[2][i]));
    out.attrs.opacities[i] = static_cast<double>(
        a_min + static_cast<float>(out.opacity_symbols[i]) * step);
  }
  size_t cursor[3] = {0, 0, 0};
  for (int v = 0; v < 8; ++v) {
    for (uint32_t i = out.cluster_starts[v]; i < cluster_end(v); ++i) {
      for (int l = 1; l <= 3; ++l) {
        if (!sh_bits_degree_kept(v, l)) continue;
        const int t = static_cast<int>(AttrTag::kSh1) + l - 1;
        detail::insert_tag(out.attrs, i, t, books[t].word(indices[t][cursor[l - 1]++]));
      }
    }
  }
  return out;
}

// Composition report of an encoded file (parses, then re-derives sizes).
inline Composition inspect(std::span<const uint8_t> bytes) { return decode(bytes).composition; }

// Serialize a decoded scene back to bytes. Everything on the wire was
// retained through decode, so the result is byte-identical to the original
// file (the coder is deterministic).
inline std::vector<uint8_t> reencode(const DecodedScene& scene) {
  detail::ByteWriter w;
  for (char c : kMagic) w.u8(static_cast<uint8_t>(c));
  w.u8(kFormatVersion);
  const uint32_t n = static_cast<uint32_t>(scene.attrs.size());
  w.u32(n);
  for (uint32_t s : scene.cluster_starts) w.u32(s);
  w.f32(scene.alpha_min);
  w.f32(scene.alpha_step);
  for (int t = 0; t < kNumTags; ++t) {
    w.u32(static_cast<uint32_t>(scene.codebooks[t].size()));
  }
  for (int t = 0; t < kNumTags; ++t) {
    for (double v : scene.codebooks[t].data) w.f32(static_cast<float>(v));
    for (uint16_t c : scene.count_tables[t]) w.u16(c);
    std::vector<uint8_t> coded;
    if (!scene.indices[t].empty()) {
      coded = arithmetic_encode(scene.indices[t],
                                FrequencyTable::from_counts(scene.count_tables[t]));
    }
    w.u32(static_cast<uint32_t>(coded.size()));
    w.raw(coded);
  }
  for (uint16_t c : scene.opacity_counts) w.u16(c);
  const std::vector<uint8_t> coded = arithmetic_encode(
      scene.opacity_symbols, FrequencyTable::from_counts(scene.opacity_counts));
  w.u32(static_cast<uint32_t>(coded.size()));
  w.raw(coded);
  for (uint32_t i = 0; i < n; ++i) {
    for (int a = 0; a < 3; ++a) {
      w.u16(float_to_half(std::clamp(static_cast<float>(scene.attrs.positions[i][a]),
                                     -kHalfMax, kHalfMax)));
    }
  }
  return std::move(w.bytes);
}

// Interop view of a quantized model in the stored-parameter convention.
// Scale signs are folded into |s| (the covariance only sees s^2) and
// opacities are clamped into sigmoid range.
inline GaussianCloud to_cloud(const RenderAttributes& attrs) {
  GaussianCloud cloud;
  const size_t n = attrs.size();
  cloud.resize(n);
  for (size_t i = 0; i < n; ++i) {
    cloud.positions[i] = attrs.positions[i];
    for (int a = 0; a < 3; ++a) {
      cloud.log_scales[i][a] = std::log(std::max(std::abs(attrs.scales[i][a]), 1e-12));
    }
    cloud.rotations[i] = attrs.rotations[i];
    cloud.opacity_logits[i] = inv_sigmoid(std::clamp(attrs.opacities[i], 1e-7, 1.0 - 1e-7));
    cloud.sh_coeffs[i] = attrs.sh[i];
  }
  return cloud;
}

}  // namespace grdo
