#include <gtest/gtest.h>

#include <random>

#include "ps3/ps3.hpp"
#include "test_util.hpp"

using namespace ps3;

namespace {

double brute_unary(const Scene& s, std::size_t e, const ClassModel& m, double alpha_l) {
  const QuadHistogram& h = s.features.histograms[e];
  double d = 0.0;
  for (std::size_t b = 0; b < h.bins.size(); ++b) d += std::min(h.bins[b], m.fg.bins[b]);
  const auto& el = s.partition.elements[e];
  const Vec2 x{el.sum_x / el.size() / s.dims().width, el.sum_y / el.size() / s.dims().height};
  const auto& c = m.location.cov;
  const double det = c[0] * c[3] - c[1] * c[2];
  const double dx = x.x - m.location.mean.x, dy = x.y - m.location.mean.y;
  const double maha = (c[3] * dx * dx - (c[1] + c[2]) * dx * dy + c[0] * dy * dy) / det;
  return -std::log(std::max(d, 1e-6) / 4.0) + alpha_l * maha;
}

// Potts energy over every labeling of a small element set.
std::vector<std::vector<ClassId>> all_labelings(std::size_t E, const std::vector<ClassId>& classes) {
  std::vector<std::vector<ClassId>> out;
  std::size_t total = 1;
  for (std::size_t e = 0; e < E; ++e) total *= classes.size();
  for (std::size_t code = 0; code < total; ++code) {
    std::vector<ClassId> l(E);
    std::size_t c = code;
    for (std::size_t e = 0; e < E; ++e) {
      l[e] = classes[c % classes.size()];
      c /= classes.size();
    }
    out.push_back(l);
  }
  return out;
}

double brute_potts(const Scene& s, const std::vector<ClassId>& labels, const ClassModels& m, double beta) {
  double h = 0.0;
  for (std::size_t e = 0; e < labels.size(); ++e) {
    h += brute_unary(s, e, m.at(labels[e]), m.weights.location());
    for (std::size_t f = e + 1; f < labels.size(); ++f) {
      const auto& adj = s.partition.adjacency[e];
      if (std::find(adj.begin(), adj.end(), static_cast<ElementId>(f)) != adj.end() && labels[e] != labels[f]) h += beta;
    }
  }
  return h;
}

}  // namespace

TEST(BaselineUnary, MatchesDirectFormula) {
  std::mt19937_64 rng(71);
  const Scene s = fixture::block_scene(4, 3, 3, rng);
  const ClassModels m = fixture::random_models(3, rng);
  for (std::size_t e = 0; e < s.size(); ++e)
    for (ClassId z = 0; z < 3; ++z) {
      EXPECT_NEAR(baseline_unary(s, static_cast<ElementId>(e), m.at(z), 0.7), brute_unary(s, e, m.at(z), 0.7), 1e-9);
      EXPECT_NEAR(baseline_unary(s, static_cast<ElementId>(e), m.at(z), 0.0), brute_unary(s, e, m.at(z), 0.0), 1e-12);
    }
}

TEST(Mle, OneAllowedClassIsUniform) {
  std::mt19937_64 rng(72);
  const Scene s = fixture::block_scene(3, 3, 2, rng);
  const ClassModels m = fixture::random_models(3, rng);
  EXPECT_EQ(mle_label(s, {2}, m), LabelMap(6, 6, 2));
}

TEST(Mle, DominatingLikelihoodWins) {
  std::mt19937_64 rng(73);
  const Scene s = fixture::block_scene(3, 1, 2, rng);
  ClassModels m = fixture::random_models(3, rng);
  // Class 1 copies element 0's histogram and sits at its centroid.
  m.classes[1].fg = s.features.histograms[0];
  m.classes[1].location.mean = normalized_position(s.partition.elements[0].centroid(), s.dims());
  for (ClassId z : {0, 2}) m.classes[z].location.mean = {5.0, 5.0};
  const LabelMap lm = mle_label(s, {0, 1, 2}, m);
  EXPECT_EQ(lm.at(0, 0), 1);
  EXPECT_EQ(lm.at(1, 1), 1);
}

TEST(Mle, MatchesExhaustiveScan) {
  std::mt19937_64 rng(74);
  for (int t = 0; t < 10; ++t) {
    const Scene s = fixture::block_scene(5, 4, 2, rng);
    const ClassModels m = fixture::random_models(5, rng);
    const std::vector<ClassId> allowed{4, 1, 3};
    const LabelMap lm = mle_label(s, allowed, m);
    for (std::size_t e = 0; e < s.size(); ++e) {
      ClassId best = 1;
      for (ClassId z : {1, 3, 4})
        if (brute_unary(s, e, m.at(z), m.weights.location()) < brute_unary(s, e, m.at(best), m.weights.location())) best = z;
      const auto& px = s.partition.elements[e].pixels;
      for (auto p : px) ASSERT_EQ(lm[p], best);
    }
  }
  EXPECT_THROW(mle_label(fixture::block_scene(2, 2, 2, rng), {}, fixture::random_models(2, rng)), Error);
}

TEST(Mle, TiesGoToLowestClass) {
  std::mt19937_64 rng(75);
  const Scene s = fixture::block_scene(2, 2, 2, rng);
  ClassModels m = fixture::random_models(3, rng);
  m.classes[2] = m.classes[0];
  m.classes[1] = m.classes[0];
  EXPECT_EQ(mle_label(s, {2, 1}, m), LabelMap(4, 4, 1));
}

TEST(Mrf, ZeroBetaIsBitIdenticalToMle) {
  std::mt19937_64 rng(76);
  for (int t = 0; t < 20; ++t) {
    const Scene s = fixture::block_scene(6, 5, 2, rng);
    const ClassModels m = fixture::random_models(4, rng);
    PottsParams p;
    p.beta = 0.0;
    EXPECT_EQ(mrf_potts_label(s, {0, 1, 2, 3}, m, p), mle_label(s, {0, 1, 2, 3}, m));
  }
}

TEST(Mrf, HugeBetaSmoothsToBestClass) {
  // 4x4 element grid; class 1 is cheapest in total, while isolated elements
  // prefer classes 0 or 2 individually.
  std::mt19937_64 rng(77);
  const Scene s = fixture::block_scene(4, 4, 2, rng);
  UnaryTable tab{{0, 1, 2}, std::vector<double>(16 * 3)};
  for (std::size_t e = 0; e < 16; ++e) {
    tab.values[e * 3 + 0] = 3.0 + uniform01(rng);
    tab.values[e * 3 + 1] = 1.0 + uniform01(rng);
    tab.values[e * 3 + 2] = 3.0 + uniform01(rng);
  }
  for (std::size_t e : {0u, 6u, 13u}) tab.values[e * 3 + (e % 2 ? 2 : 0)] = 0.0;
  const auto mle = mle_element_labels(tab, 16);
  ASSERT_NE(std::set<ClassId>(mle.begin(), mle.end()).size(), 1u);
  PottsParams p;
  p.beta = 1e6;
  const auto r = icm_potts(tab, s.partition, p);
  EXPECT_EQ(r.labels, std::vector<ClassId>(16, 1));
  // The uniform labeling in the class of least total unary is the global
  // minimum once beta exceeds every unary difference.
  double best = std::numeric_limits<double>::infinity();
  for (ClassId z = 0; z < 3; ++z) best = std::min(best, potts_energy(tab, s.partition, std::vector<ClassId>(16, z), p.beta));
  EXPECT_EQ(potts_energy(tab, s.partition, r.labels, p.beta), best);
}

TEST(Mrf, ChainOfFiveAgainstExhaustiveEnergies) {
  std::mt19937_64 rng(79);
  for (int t = 0; t < 20; ++t) {
    const Scene s = fixture::block_scene(5, 1, 2, rng);
    const ClassModels m = fixture::random_models(3, rng);
    PottsParams p;
    p.beta = 0.5 + 2.0 * uniform01(rng);
    const std::vector<ClassId> classes{0, 1, 2};
    const UnaryTable tab = baseline_unaries(s, classes, m);
    const auto r = icm_potts(tab, s.partition, p);
    const auto init = mle_element_labels(tab, s.size());
    const double h_icm = brute_potts(s, r.labels, m, p.beta);
    EXPECT_NEAR(potts_energy(tab, s.partition, r.labels, p.beta), h_icm, 1e-9);
    EXPECT_LE(h_icm, brute_potts(s, init, m, p.beta) + 1e-12);
    // ICM stops at a labeling no single-element change improves.
    double global = std::numeric_limits<double>::infinity();
    for (const auto& l : all_labelings(5, classes)) {
      const double h = brute_potts(s, l, m, p.beta);
      global = std::min(global, h);
      int diff = 0;
      for (std::size_t e = 0; e < 5; ++e) diff += l[e] != r.labels[e];
      if (diff == 1) EXPECT_GE(h, h_icm - 1e-9);
    }
    EXPECT_GE(h_icm, global - 1e-12);
  }
}

TEST(Mrf, EnergyNonIncreasingAndTerminates) {
  std::mt19937_64 rng(80);
  for (int t = 0; t < 10; ++t) {
    const Scene s = fixture::block_scene(6, 6, 2, rng);
    const ClassModels m = fixture::random_models(4, rng);
    PottsParams p;
    p.beta = 0.3 * (t + 1);
    const auto r = icm_potts(baseline_unaries(s, {0, 1, 2, 3}, m), s.partition, p);
    ASSERT_EQ(r.energy_trace.size(), static_cast<std::size_t>(r.sweeps) + 1);
    for (std::size_t k = 1; k < r.energy_trace.size(); ++k) EXPECT_LE(r.energy_trace[k], r.energy_trace[k - 1] + 1e-12);
    EXPECT_LT(r.sweeps, p.max_sweeps);
  }
  PottsParams bad;
  bad.beta = -1.0;
  const Scene s = fixture::block_scene(2, 2, 2, rng);
  EXPECT_THROW(icm_potts(baseline_unaries(s, {0}, fixture::random_models(1, rng)), s.partition, bad), Error);
}
