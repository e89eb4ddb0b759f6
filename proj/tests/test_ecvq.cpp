#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "grdo/ecvq.hpp"
#include "grdo/rng.hpp"
#include "helpers.hpp"

using grdo::Codebook;
using grdo::EntropyModel;
using grdo::QuantizerBank;
using grdo::select;

namespace {

// Independent naive RD scan: explicit softmax, explicit cost array, first
// minimum wins.
struct NaiveResult {
  uint32_t index;
  double rate;
  double dist;
};

NaiveResult naive_select(const std::vector<double>& input, const Codebook& cb,
                         const std::vector<double>& logits, double lambda) {
  std::vector<double> p(logits.size());
  double z = 0.0;
  for (size_t m = 0; m < logits.size(); ++m) z += std::exp(-logits[m]);
  for (size_t m = 0; m < logits.size(); ++m) p[m] = std::exp(-logits[m]) / z;
  uint32_t best = 0;
  double best_cost = std::numeric_limits<double>::infinity();
  double best_dist = 0.0;
  for (size_t m = 0; m < cb.size(); ++m) {
    double dist = 0.0;
    for (int d = 0; d < cb.dim; ++d) {
      const double diff = input[d] - cb.word(m)[d];
      dist += diff * diff;
    }
    const double cost = -std::log(p[m]) / lambda + dist;
    if (cost < best_cost) {
      best_cost = cost;
      best = static_cast<uint32_t>(m);
      best_dist = dist;
    }
  }
  return {best, -std::log(p[best]), best_dist};
}

}  // namespace

TEST_CASE("select reproduces the worked two-codeword example") {
  Codebook cb;
  cb.dim = 1;
  cb.data = {0.0, 1.0};
  EntropyModel em;
  // logits giving p = (0.9, 0.1)
  em.logits = {-std::log(0.9), -std::log(0.1)};
  const double input = 0.6;
  const auto r = select(&input, cb, em, 1.0);
  REQUIRE(r.index == 0);
  REQUIRE(r.rate_nats == Catch::Approx(-std::log(0.9)).epsilon(1e-12));
  REQUIRE(r.vq_dist == Catch::Approx(0.36).epsilon(1e-12));
  // Both worked costs: 0.4654 vs 2.4626.
  REQUIRE(r.rate_nats + r.vq_dist == Catch::Approx(0.46536).margin(5e-5));
}

TEST_CASE("uniform probabilities reduce selection to nearest neighbor") {
  grdo::Rng rng(1);
  Codebook cb;
  cb.dim = 3;
  for (int m = 0; m < 32; ++m) {
    for (int d = 0; d < 3; ++d) cb.data.push_back(rng.normal());
  }
  EntropyModel em;
  em.logits.assign(32, 1.7);  // any constant
  for (int trial = 0; trial < 100; ++trial) {
    const double input[3] = {rng.normal(), rng.normal(), rng.normal()};
    const auto r = select(input, cb, em, 0.5);
    uint32_t nn = 0;
    double best = std::numeric_limits<double>::infinity();
    for (size_t m = 0; m < cb.size(); ++m) {
      double dist = 0.0;
      for (int d = 0; d < 3; ++d) {
        dist += (input[d] - cb.word(m)[d]) * (input[d] - cb.word(m)[d]);
      }
      if (dist < best) {
        best = dist;
        nn = static_cast<uint32_t>(m);
      }
    }
    REQUIRE(r.index == nn);
  }
}

TEST_CASE("exact input with maximal probability wins") {
  Codebook cb;
  cb.dim = 2;
  cb.data = {0, 0, 1, 1, 2, 2};
  EntropyModel em;
  em.logits = {0.5, -1.0, 0.5};  // index 1 most probable
  const double input[2] = {1.0, 1.0};
  REQUIRE(select(input, cb, em, 1.0).index == 1);
}

TEST_CASE("select agrees with the naive scan on random trials") {
  grdo::Rng rng(42);
  for (int trial = 0; trial < 20000; ++trial) {
    const int dim = 1 + static_cast<int>(rng.below(4));
    const size_t m_count = 1 + rng.below(12);
    Codebook cb;
    cb.dim = dim;
    for (size_t m = 0; m < m_count * dim; ++m) cb.data.push_back(rng.uniform(-2, 2));
    EntropyModel em;
    for (size_t m = 0; m < m_count; ++m) em.logits.push_back(rng.uniform(-3, 3));
    const double lambda = std::exp(rng.uniform(std::log(0.1), std::log(1e5)));
    std::vector<double> input(dim);
    for (int d = 0; d < dim; ++d) input[d] = rng.uniform(-2, 2);

    const auto got = select(input.data(), cb, em, lambda);
    const auto want = naive_select(input, cb, em.logits, lambda);
    REQUIRE(got.index == want.index);
    REQUIRE(got.rate_nats == Catch::Approx(want.rate).epsilon(1e-9));
    REQUIRE(got.vq_dist == Catch::Approx(want.dist).epsilon(1e-9));
  }
}

TEST_CASE("lambda limits: infinity gives nearest neighbor, zero gives argmax p") {
  Codebook cb;
  cb.dim = 1;
  cb.data = {0.0, 0.5, 3.0};
  EntropyModel em;
  em.logits = {5.0, 4.0, -2.0};  // index 2 by far the most probable
  const double input = 0.1;
  REQUIRE(select(&input, cb, em, 1e12).index == 0);  // nearest
  REQUIRE(select(&input, cb, em, 1e-9).index == 2);  // most probable
}

TEST_CASE("entropy model probabilities stay normalized and positive") {
  grdo::Rng rng(3);
  EntropyModel em;
  for (int m = 0; m < 100; ++m) em.logits.push_back(rng.uniform(-20, 20));
  const auto p = em.probabilities();
  double sum = 0.0;
  for (double v : p) {
    REQUIRE(v > 0.0);
    sum += v;
  }
  REQUIRE(sum == Catch::Approx(1.0).margin(1e-9));
}

TEST_CASE("rate gradient matches finite differences of -log softmax") {
  grdo::Rng rng(4);
  EntropyModel em;
  em.logits = {rng.normal(), rng.normal(), rng.normal()};
  const uint32_t j = 1;
  auto rate = [&](const EntropyModel& m) { return m.neg_log_probs()[j]; };
  const auto p = em.probabilities();
  const double h = 1e-6;
  for (int m = 0; m < 3; ++m) {
    // analytic: d(-log p_j)/dw_m = delta_jm - p_m
    const double analytic = (m == static_cast<int>(j) ? 1.0 : 0.0) - p[m];
    EntropyModel up = em, dn = em;
    up.logits[m] += h;
    dn.logits[m] -= h;
    REQUIRE(analytic == Catch::Approx((rate(up) - rate(dn)) / (2 * h)).margin(1e-6));
  }
}

TEST_CASE("single-codeword codebook has zero rate gradient and zero rate") {
  Codebook cb;
  cb.dim = 1;
  cb.data = {0.7};
  EntropyModel em;
  em.logits = {2.0};
  const double input = 0.3;
  const auto r = select(&input, cb, em, 1.0);
  REQUIRE(r.rate_nats == Catch::Approx(0.0).margin(1e-12));
  // Gradient (onehot - p) with p = 1.
  const auto p = em.probabilities();
  REQUIRE(1.0 - p[0] == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("x equal to the selected codeword gives zero VQ gradients") {
  grdo::Rng rng(5);
  grdo::GaussianCloud cloud = testutil::random_cloud(rng, 4);
  grdo::MaskSet masks = grdo::MaskSet::initial(4);
  const auto fwd = grdo::evaluate_masks(masks);
  const auto masked = grdo::apply_masks(cloud, fwd);

  QuantizerBank bank;
  // Codebooks that contain every input exactly.
  for (int t = 0; t < grdo::kNumTags; ++t) {
    auto& e = bank[t];
    for (size_t i = 0; i < 4; ++i) {
      double buf[32];
      grdo::detail::extract_tag(masked, i, t, buf);
      e.codebook.data.insert(e.codebook.data.end(), buf, buf + grdo::kTagDims[t]);
    }
    e.entropy.logits.assign(4, 0.0);
  }
  const auto sel = grdo::quantize_cloud(masked, fwd, bank);
  REQUIRE(sel.vq_loss == Catch::Approx(0.0).margin(1e-18));
  const auto grads = grdo::ecvq_backward(masked, sel, bank);
  for (size_t i = 0; i < 4; ++i) {
    REQUIRE(grads.inputs.scales[i].isZero());
    REQUIRE(grads.inputs.rotations[i].isZero());
    REQUIRE(grads.inputs.sh[i].isZero());
  }
  for (int t = 0; t < grdo::kNumTags; ++t) {
    for (double g : grads.codebooks[t]) REQUIRE(g == 0.0);
  }
}

TEST_CASE("exact codebooks with uniform logits give L_VQ 0 and L_rate sum log(M)/lambda") {
  grdo::Rng rng(6);
  grdo::GaussianCloud cloud = testutil::random_cloud(rng, 8);
  grdo::MaskSet masks = grdo::MaskSet::initial(8);
  const auto fwd = grdo::evaluate_masks(masks);
  const auto masked = grdo::apply_masks(cloud, fwd);

  QuantizerBank bank;
  for (int t = 0; t < grdo::kNumTags; ++t) {
    auto& e = bank[t];
    for (size_t i = 0; i < 8; ++i) {
      double buf[32];
      grdo::detail::extract_tag(masked, i, t, buf);
      e.codebook.data.insert(e.codebook.data.end(), buf, buf + grdo::kTagDims[t]);
    }
    e.entropy.logits.assign(8, 0.0);
  }
  const auto sel = grdo::quantize_cloud(masked, fwd, bank);
  REQUIRE(sel.vq_loss == Catch::Approx(0.0).margin(1e-15));
  double expected_rate = 0.0;
  for (int t = 0; t < grdo::kNumTags; ++t) expected_rate += std::log(8.0) / bank[t].lambda;
  REQUIRE(sel.rate_loss == Catch::Approx(expected_rate).epsilon(1e-12));
}

TEST_CASE("all gaussians pruned: zero losses, empty index arrays") {
  grdo::Rng rng(7);
  grdo::GaussianCloud cloud = testutil::random_cloud(rng, 5);
  grdo::MaskSet masks = grdo::MaskSet::initial(5);
  for (auto& raw : masks.gaussian_mask_raw) raw = grdo::inv_sigmoid(0.01);
  const auto fwd = grdo::evaluate_masks(masks);
  const auto masked = grdo::apply_masks(cloud, fwd);
  QuantizerBank bank;
  for (int t = 0; t < grdo::kNumTags; ++t) {
    bank[t].codebook.data.assign(grdo::kTagDims[t], 0.0);
    bank[t].entropy.logits.assign(1, 0.0);
  }
  const auto sel = grdo::quantize_cloud(masked, fwd, bank);
  REQUIRE(sel.rate_loss == 0.0);
  REQUIRE(sel.vq_loss == 0.0);
  REQUIRE(sel.total_indices() == 0);
}

TEST_CASE("losses match an independent scalar reimplementation") {
  grdo::Rng rng(8);
  grdo::GaussianCloud cloud = testutil::random_cloud(rng, 8);
  grdo::MaskSet masks = grdo::MaskSet::initial(8);
  // Mixed masks: some pruned gaussians, some pruned degrees.
  masks.gaussian_mask_raw[2] = grdo::inv_sigmoid(0.05);
  masks.sh_mask_raw[1] = {-5.0, 5.0, -5.0};
  masks.sh_mask_raw[4] = {5.0, -5.0, 5.0};
  const auto fwd = grdo::evaluate_masks(masks);
  const auto masked = grdo::apply_masks(cloud, fwd);

  QuantizerBank bank;
  grdo::Rng crng(9);
  for (int t = 0; t < grdo::kNumTags; ++t) {
    auto& e = bank[t];
    for (int m = 0; m < 4 * grdo::kTagDims[t]; ++m) e.codebook.data.push_back(crng.normal());
    for (int m = 0; m < 4; ++m) e.entropy.logits.push_back(crng.normal());
  }
  const auto sel = grdo::quantize_cloud(masked, fwd, bank);

  // Scalar recomputation, straight from the formulas.
  double rate = 0.0, vq = 0.0;
  size_t n_surv = 0;
  for (size_t i = 0; i < 8; ++i) {
    if (!fwd.gaussian_kept(i)) continue;
    ++n_surv;
    for (int t = 0; t < grdo::kNumTags; ++t) {
      if (!grdo::detail::tag_present(fwd, i, t)) continue;
      std::vector<double> input(grdo::kTagDims[t]);
      grdo::detail::extract_tag(masked, i, t, input.data());
      const auto naive = naive_select(input, bank[t].codebook, bank[t].entropy.logits,
                                      bank[t].lambda);
      rate += naive.rate / bank[t].lambda;
      vq += naive.dist;
    }
  }
  rate /= static_cast<double>(n_surv);
  vq /= static_cast<double>(n_surv);
  REQUIRE(sel.rate_loss == Catch::Approx(rate).margin(1e-12));
  REQUIRE(sel.vq_loss == Catch::Approx(vq).margin(1e-12));

  // Pruned Gaussians and masked degrees produce no indices.
  for (size_t k = 0; k < sel.owners[0].size(); ++k) REQUIRE(sel.owners[0][k] != 2);
  for (size_t k = 0; k < sel.owners[3].size(); ++k) {
    REQUIRE(sel.owners[3][k] != 1);  // degree 1 masked for gaussian 1
  }
}

TEST_CASE("ecvq input/codebook gradients match finite differences") {
  grdo::Rng rng(10);
  grdo::GaussianCloud cloud = testutil::random_cloud(rng, 3);
  grdo::MaskSet masks = grdo::MaskSet::initial(3);
  const auto fwd = grdo::evaluate_masks(masks);
  auto masked = grdo::apply_masks(cloud, fwd);

  QuantizerBank bank;
  grdo::Rng crng(11);
  for (int t = 0; t < grdo::kNumTags; ++t) {
    auto& e = bank[t];
    for (int m = 0; m < 5 * grdo::kTagDims[t]; ++m) e.codebook.data.push_back(crng.normal());
    for (int m = 0; m < 5; ++m) e.entropy.logits.push_back(0.3 * crng.normal());
  }

  auto vq_of = [&](const grdo::RenderAttributes& attrs) {
    return grdo::quantize_cloud(attrs, fwd, bank).vq_loss;
  };
  const auto sel = grdo::quantize_cloud(masked, fwd, bank);
  const auto grads = grdo::ecvq_backward(masked, sel, bank);

  const double h = 1e-6;
  // Probe the scale input of gaussian 0 (assignments stay fixed for small h).
  for (int d = 0; d < 3; ++d) {
    const double orig = masked.scales[0][d];
    masked.scales[0][d] = orig + h;
    const double up = vq_of(masked);
    masked.scales[0][d] = orig - h;
    const double dn = vq_of(masked);
    masked.scales[0][d] = orig;
    REQUIRE(grads.inputs.scales[0][d] ==
            Catch::Approx((up - dn) / (2 * h)).epsilon(1e-4).margin(1e-8));
  }
  // Probe a selected codeword for rotation.
  const uint32_t j = sel.indices[1][0];
  for (int d = 0; d < 4; ++d) {
    const size_t slot = j * 4 + d;
    const double orig = bank[1].codebook.data[slot];
    bank[1].codebook.data[slot] = orig + h;
    const double up = vq_of(masked);
    bank[1].codebook.data[slot] = orig - h;
    const double dn = vq_of(masked);
    bank[1].codebook.data[slot] = orig;
    REQUIRE(grads.codebooks[1][slot] ==
            Catch::Approx((up - dn) / (2 * h)).epsilon(1e-4).margin(1e-8));
  }
  // Rate gradient against finite differences of the rate loss.
  auto rate_of = [&]() { return grdo::quantize_cloud(masked, fwd, bank).rate_loss; };
  for (int m = 0; m < 5; ++m) {
    const double orig = bank[2].entropy.logits[m];
    bank[2].entropy.logits[m] = orig + h;
    const double up = rate_of();
    bank[2].entropy.logits[m] = orig - h;
    const double dn = rate_of();
    bank[2].entropy.logits[m] = orig;
    REQUIRE(grads.logits[2][m] ==
            Catch::Approx((up - dn) / (2 * h)).epsilon(1e-4).margin(1e-8));
  }
}

TEST_CASE("prune_codebook keeps used entries in order and renormalizes") {
  Codebook cb;
  cb.dim = 2;
  for (int m = 0; m < 8; ++m) {
    cb.data.push_back(m);
    cb.data.push_back(m * 10);
  }
  EntropyModel em;
  em.logits.assign(8, 0.0);

  SECTION("identity when everything is used") {
    std::vector<uint32_t> used = {0, 1, 2, 3, 4, 5, 6, 7, 3, 3};
    const auto out = grdo::prune_codebook(cb, em, used);
    REQUIRE(out.codebook.size() == 8);
    REQUIRE(out.codebook.data == cb.data);
    for (int m = 0; m < 8; ++m) REQUIRE(out.remap[m] == m);
  }
  SECTION("subset keeps ascending order") {
    std::vector<uint32_t> used = {6, 1, 3, 1};
    const auto out = grdo::prune_codebook(cb, em, used);
    REQUIRE(out.codebook.size() == 3);
    REQUIRE(out.remap[1] == 0);
    REQUIRE(out.remap[3] == 1);
    REQUIRE(out.remap[6] == 2);
    REQUIRE(out.remap[0] == -1);
    REQUIRE(out.codebook.word(1)[0] == 3.0);
    double sum = 0.0;
    for (double p : out.probabilities) sum += p;
    REQUIRE(sum == Catch::Approx(1.0).margin(1e-12));
    REQUIRE(out.probabilities[0] == Catch::Approx(1.0 / 3).margin(1e-12));
  }
}

TEST_CASE("decode through the remap reproduces identical quantized attributes") {
  grdo::Rng rng(12);
  Codebook cb;
  cb.dim = 3;
  for (int m = 0; m < 100; ++m) {
    for (int d = 0; d < 3; ++d) cb.data.push_back(rng.normal());
  }
  EntropyModel em;
  em.logits.assign(100, 0.0);
  std::vector<uint32_t> used;
  for (int k = 0; k < 30; ++k) used.push_back(static_cast<uint32_t>(rng.below(100)));
  const auto compact = grdo::prune_codebook(cb, em, used);
  for (uint32_t j : used) {
    const int32_t nj = compact.remap[j];
    REQUIRE(nj >= 0);
    for (int d = 0; d < 3; ++d) {
      REQUIRE(compact.codebook.word(nj)[d] == cb.word(j)[d]);
    }
  }
}

TEST_CASE("empty codebook is rejected") {
  Codebook cb;
  cb.dim = 1;
  EntropyModel em;
  const double x = 0.0;
  REQUIRE_THROWS_AS(select(&x, cb, em, 1.0), std::invalid_argument);
}
