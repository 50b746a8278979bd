#include <gtest/gtest.h>

#include <map>
#include <random>
#include <sstream>

#include "ps3/ps3.hpp"
#include "test_util.hpp"

using namespace ps3;

namespace {

using MoveKey = std::tuple<ElementId, int, int>;  // element, from, to

// The proposal distribution enumerated from scratch: part statistics are
// recomputed, candidate sets rebuilt from adjacency and all mixture
// branches summed.
std::map<MoveKey, double> exact_proposal(const Scene& scene, const Configuration& c) {
  const std::size_t n = c.parts();
  const auto sizes = c.part_sizes();
  const auto& adj = scene.partition.adjacency;
  struct Cand {
    ElementId e;
    double w;
    bool inside;
  };
  std::vector<std::vector<Cand>> cands(n);
  std::vector<double> z(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const PartStats st = compute_part_stats(scene, c.part_of, static_cast<int>(i));
    const QuadHistogram fg = normalize(st.fg);
    std::optional<QuadHistogram> band;
    if (st.band.mass > 0.0) band = normalize(st.band);
    for (std::size_t e = 0; e < scene.size(); ++e) {
      const auto& h = scene.features.histograms[e];
      const double dfg = hist_similarity(fg, h), dband = band ? hist_similarity(*band, h) : 0.0;
      bool touches = false;
      if (c.part_of[e] == static_cast<int>(i)) {
        for (ElementId f : adj[e]) touches |= c.part_of[f] != static_cast<int>(i);
        if (touches && sizes[i] > 1) cands[i].push_back({static_cast<ElementId>(e), dband / std::max(dfg, 1e-6), true});
      } else {
        for (ElementId f : adj[e]) touches |= c.part_of[f] == static_cast<int>(i);
        if (touches && sizes[c.part_of[e]] > 1) cands[i].push_back({static_cast<ElementId>(e), dfg / std::max(dband, 1e-6), false});
      }
    }
    for (const auto& k : cands[i]) z[i] += k.w;
  }
  // Part draws: up to n uniform draws, keeping the first live part.
  std::size_t dead = 0;
  for (double v : z) dead += v <= 0.0;
  double pick = 0.0, miss = 1.0;
  for (std::size_t t = 0; t < n; ++t) {
    pick += miss / n;
    miss *= static_cast<double>(dead) / n;
  }
  std::map<MoveKey, double> q;
  for (std::size_t i = 0; i < n; ++i) {
    if (z[i] <= 0.0) continue;
    for (const auto& k : cands[i]) {
      const double p = pick * k.w / z[i];
      if (p == 0.0) continue;
      if (!k.inside) {
        q[{k.e, c.part_of[k.e], static_cast<int>(i)}] += p;
        continue;
      }
      std::set<int> dest;
      for (ElementId f : adj[k.e])
        if (c.part_of[f] != static_cast<int>(i)) dest.insert(c.part_of[f]);
      for (int d : dest) q[{k.e, static_cast<int>(i), d}] += p / dest.size();
    }
  }
  return q;
}

// 3x2 grid of 1-pixel-by-block elements with random features.
Scene six_element_scene(std::mt19937_64& rng) { return fixture::block_scene(3, 2, 3, rng, 1); }

std::vector<Configuration> all_configurations(const SceneGraph& g, std::size_t E) {
  std::vector<Configuration> out;
  std::vector<int> a(E, 0);
  std::size_t total = 1;
  for (std::size_t e = 0; e < E; ++e) total *= g.size();
  for (std::size_t code = 0; code < total; ++code) {
    std::size_t c = code;
    for (std::size_t e = 0; e < E; ++e) {
      a[e] = static_cast<int>(c % g.size());
      c /= g.size();
    }
    Configuration cfg{g, a};
    if (cfg.valid(E)) out.push_back(cfg);
  }
  return out;
}

SceneGraph two_part_graph() { return SceneGraph{{0, 1}, {{0, 1}}}; }

}  // namespace

// ---------------------------------------------------------------------------
// Initialization

TEST(Initialize, SinglePartTakesEverything) {
  std::mt19937_64 rng(51);
  const Scene s = fixture::block_scene(4, 3, 3, rng);
  const ClassModels m = fixture::random_models(2, rng);
  const Configuration c = initialize(s, SceneGraph{{1}, {}}, m);
  EXPECT_EQ(c.part_of, std::vector<int>(s.size(), 0));
}

TEST(Initialize, TwoElementsSplitByAppearance) {
  // Two single-pixel elements whose bins differ in every channel.
  const Dims d{2, 1};
  const HistogramLayout layout{4, 4};
  LabImage lab;
  lab.dims = d;
  lab.L = {10.0, 90.0};
  lab.a = {-100.0, 100.0};
  lab.b = {-100.0, 100.0};
  const TextonMap tex{d, {0, 3}};
  const Scene s = make_scene(partition_from_ids(d, {0, 1}), lab, tex, layout, 1);
  ClassModels m = fixture::random_models(2, *std::make_unique<std::mt19937_64>(52), layout);
  // fg of class z is exactly element z's histogram; both locations equal.
  m.classes[0].fg = s.features.histograms[0];
  m.classes[1].fg = s.features.histograms[1];
  m.classes[1].location = m.classes[0].location;
  // Hand values: D = 4 for the match, D = 0 (floored at 1e-6) otherwise.
  const double loc0 = mahalanobis(Vec2{0.0, 0.0}, m.classes[0].location);
  EXPECT_NEAR(init_score(s, 0, m.classes[0]), 0.0 + loc0, 1e-12);
  EXPECT_NEAR(init_score(s, 0, m.classes[1]), -std::log(1e-6 / 4.0) + loc0, 1e-9);
  // Graph parts in reverse class order.
  const Configuration c = initialize(s, SceneGraph{{1, 0}, {{0, 1}}}, m);
  EXPECT_EQ(c.part_of, (std::vector<int>{1, 0}));
}

TEST(Initialize, AlwaysValidAndForcesNonemptyParts) {
  std::mt19937_64 rng(53);
  for (int t = 0; t < 20; ++t) {
    const Scene s = fixture::block_scene(3, 3, 2, rng);
    const ClassModels m = fixture::random_models(3, rng);
    // More parts of the same class than the argmin would fill.
    SceneGraph g{{0, 0, 0, 1, 2, 2}, {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}}};
    const Configuration c = initialize(s, g, m);
    EXPECT_TRUE(c.valid(s.size()));
  }
  const Scene tiny = fixture::block_scene(1, 1, 2, rng);
  const ClassModels m = fixture::random_models(2, rng);
  EXPECT_THROW(initialize(tiny, two_part_graph(), m), Error);
}

// ---------------------------------------------------------------------------
// Proposal

TEST(Proposal, SingleBoundaryElementByHand) {
  // Elements e0 | e1 | e2 in a row; part 0 = {e0}, part 1 = {e1, e2}. The
  // only legal move is e1 into part 0, reachable from both parts.
  std::mt19937_64 rng(54);
  const Scene s = fixture::block_scene(3, 1, 2, rng);
  const ClassModels m = fixture::random_models(2, rng);
  ChainState st(s, Configuration{two_part_graph(), {0, 1, 1}}, m, m.weights);
  ASSERT_EQ(st.candidates(0).size(), 1u);
  ASSERT_EQ(st.candidates(1).size(), 1u);
  EXPECT_EQ(st.candidates(0)[0].element, 1);
  EXPECT_FALSE(st.candidates(0)[0].inside);
  EXPECT_EQ(st.candidates(1)[0].element, 1);
  EXPECT_TRUE(st.candidates(1)[0].inside);
  const auto h1 = s.features.histograms[1];
  const auto fg0 = normalize(st.stats(0).fg), band0 = normalize(st.stats(0).band);
  EXPECT_NEAR(st.candidates(0)[0].weight, hist_similarity(fg0, h1) / std::max(hist_similarity(band0, h1), 1e-6), 1e-12);
  const auto fg1 = normalize(st.stats(1).fg), band1 = normalize(st.stats(1).band);
  EXPECT_NEAR(st.candidates(1)[0].weight, hist_similarity(band1, h1) / std::max(hist_similarity(fg1, h1), 1e-6), 1e-12);
  EXPECT_NEAR(st.proposal_probability(1, 1, 0), 1.0, 1e-12);
  EXPECT_EQ(st.proposal_probability(2, 1, 0), 0.0);
  EXPECT_EQ(st.proposal_probability(0, 0, 1), 0.0);
}

TEST(Proposal, MatchesExactEnumerationOnRandomStates) {
  std::mt19937_64 rng(55);
  for (int t = 0; t < 15; ++t) {
    const Scene s = fixture::block_scene(4, 4, 2, rng, 1 + t % 3);
    const ClassModels m = fixture::random_models(3, rng);
    SceneGraph g{{0, 1, 2}, {{0, 1}, {1, 2}}};
    ChainState st(s, fixture::random_configuration(g, s.size(), rng), m, m.weights);
    const auto q = exact_proposal(s, st.config());
    double total = 0.0;
    for (const auto& [k, p] : q) {
      const auto [e, from, to] = k;
      EXPECT_NEAR(st.proposal_probability(e, from, to), p, 1e-12);
      total += p;
    }
    if (st.has_moves()) EXPECT_NEAR(total, 1.0, 1e-12);
    // Every other move has zero probability.
    for (std::size_t e = 0; e < s.size(); ++e)
      for (int to = 0; to < 3; ++to) {
        const int from = st.config().part_of[e];
        if (to != from && !q.count({static_cast<ElementId>(e), from, to}))
          EXPECT_EQ(st.proposal_probability(static_cast<ElementId>(e), from, to), 0.0);
      }
  }
}

TEST(Proposal, InteriorElementsAreNeverProposed) {
  std::mt19937_64 rng(56);
  const Scene s = fixture::block_scene(5, 5, 2, rng);
  const ClassModels m = fixture::random_models(2, rng);
  // Part 1 is the central 3x3 block of elements; element 12 is interior.
  std::vector<int> part_of(25, 0);
  for (int y = 1; y < 4; ++y)
    for (int x = 1; x < 4; ++x) part_of[y * 5 + x] = 1;
  ChainState st(s, Configuration{two_part_graph(), part_of}, m, m.weights);
  Rng r(1);
  for (int k = 0; k < 20000; ++k) {
    const auto mv = st.propose(r);
    ASSERT_TRUE(mv);
    ASSERT_NE(mv->element, 12);
    ASSERT_NE(mv->element, 0);  // corner of part 0, not adjacent to part 1
  }
}

TEST(Proposal, EmpiricalFrequenciesMatchExactDistribution) {
  std::mt19937_64 rng(57);
  const Scene s = fixture::block_scene(4, 3, 2, rng);
  const ClassModels m = fixture::random_models(3, rng);
  SceneGraph g{{0, 1, 2}, {{0, 1}, {1, 2}}};
  ChainState st(s, fixture::random_configuration(g, s.size(), rng), m, m.weights);
  const auto q = exact_proposal(s, st.config());
  std::map<MoveKey, double> freq;
  Rng r(7);
  const int N = 100000;
  for (int k = 0; k < N; ++k) {
    const auto mv = st.propose(r);
    ASSERT_TRUE(mv);
    freq[{mv->element, mv->from, mv->to}] += 1.0 / N;
    ASSERT_NEAR(mv->q_f, q.at({mv->element, mv->from, mv->to}), 1e-12);
  }
  double tv = 0.0;
  for (const auto& [k, p] : q) tv += std::abs(p - (freq.count(k) ? freq.at(k) : 0.0));
  for (const auto& [k, f] : freq) EXPECT_TRUE(q.count(k));
  EXPECT_LT(0.5 * tv, 0.01);
}

TEST(Proposal, NoMovesWhenEveryPartIsASingleton) {
  std::mt19937_64 rng(58);
  const Scene s = fixture::block_scene(2, 1, 2, rng);
  const ClassModels m = fixture::random_models(2, rng);
  ChainState st(s, Configuration{two_part_graph(), {0, 1}}, m, m.weights);
  EXPECT_FALSE(st.has_moves());
  Rng r(1);
  EXPECT_FALSE(st.propose(r));
  EXPECT_EQ(st.selection_probability(), 0.0);
}

// ---------------------------------------------------------------------------
// Acceptance and detailed balance

TEST(Acceptance, ClosedForms) {
  EXPECT_EQ(acceptance(-3.0, 0.2, 0.2, 1.0), 1.0);
  EXPECT_NEAR(acceptance(2.0 * std::log(2.0), 0.2, 0.2, 2.0), 0.5, 1e-15);
  EXPECT_NEAR(acceptance(0.0, 0.4, 0.1, 1.0), 0.25, 1e-15);
  EXPECT_EQ(acceptance(50.0, 0.1, 0.2, std::numeric_limits<double>::infinity()), 1.0);
  EXPECT_EQ(acceptance(1.0, 0.1, 0.0, 1.0), 0.0);
  EXPECT_THROW(acceptance(std::nan(""), 0.1, 0.1, 1.0), Error);
  EXPECT_THROW(acceptance(1.0, 0.0, 0.1, 1.0), Error);
  EXPECT_THROW(acceptance(1.0, 0.1, 0.1, 0.0), Error);
}

TEST(Acceptance, DetailedBalanceOnRandomMoves) {
  std::mt19937_64 rng(59);
  int checked = 0;
  for (int t = 0; t < 1000 && checked < 1000; ++t) {
    const Scene s = fixture::block_scene(4, 3, 2, rng);
    const ClassModels m = fixture::random_models(3, rng);
    SceneGraph g{{0, 1, 2}, {{0, 1}, {1, 2}}};
    ChainState st(s, fixture::random_configuration(g, s.size(), rng), m, m.weights);
    Rng r(t);
    for (int k = 0; k < 10 && checked < 1000; ++k) {
      const auto mv = st.propose(r);
      if (!mv) break;
      const double h0 = st.energy();
      const auto undo = st.apply(mv->element, mv->to);
      const double h1 = st.energy();
      const double q_r = st.proposal_probability(mv->element, mv->to, mv->from);
      const auto fwd_q = mv->q_f;
      if (q_r == 0.0) {
        // Irreversible move: must be rejected at every temperature.
        for (double T : {0.5, 1.0, 5.0}) EXPECT_EQ(acceptance(h1 - h0, fwd_q, q_r, T), 0.0);
        st.revert(undo);
        continue;
      }
      for (double T : {0.5, 1.0, 5.0}) {
        // Relative to pi(L) to stay in range: pi(L') / pi(L) = exp(-(h1 - h0) / T).
        const double lhs = fwd_q * acceptance(h1 - h0, fwd_q, q_r, T);
        const double rhs = std::exp(-(h1 - h0) / T) * q_r * acceptance(h0 - h1, q_r, fwd_q, T);
        EXPECT_NEAR(lhs, rhs, 1e-9 * std::max(lhs, rhs));
      }
      ++checked;
      if (k % 2) st.revert(undo);
    }
  }
  EXPECT_EQ(checked, 1000);
}

// ---------------------------------------------------------------------------
// Chain state bookkeeping

TEST(ChainState, IncrementalStateMatchesRecomputation) {
  std::mt19937_64 rng(60);
  for (int t = 0; t < 4; ++t) {
    const Scene s = fixture::block_scene(5, 4, 3, rng, 1 + 2 * t);
    const ClassModels m = fixture::random_models(3, rng);
    SceneGraph g{{0, 1, 2, 1}, {{0, 1}, {1, 2}, {2, 3}, {0, 3}}};
    ChainState st(s, fixture::random_configuration(g, s.size(), rng), m, m.weights);
    Rng r(100 + t);
    for (int step = 0; step < 400; ++step) {
      const auto mv = st.propose(r);
      ASSERT_TRUE(mv);
      const Configuration before = st.config();
      const double e0 = st.energy();
      const double predicted = delta_energy(s, before, ElementMove{mv->element, mv->from, mv->to}, m, m.weights);
      const auto undo = st.apply(mv->element, mv->to);
      ASSERT_NEAR(st.energy() - e0, predicted, 1e-9);
      ASSERT_TRUE(st.config().valid(s.size()));
      if (step % 3 == 0) {
        st.revert(undo);
        ASSERT_EQ(st.config(), before);
        ASSERT_EQ(st.energy(), e0);
      }
      if (step % 25 == 0) {
        ASSERT_NEAR(st.energy(), st.recompute_energy(), 1e-9);
        for (int p = 0; p < 4; ++p) ASSERT_EQ(st.stats(p), compute_part_stats(s, st.config().part_of, p));
        const auto q = exact_proposal(s, st.config());
        for (const auto& [k, p] : q) ASSERT_NEAR(st.proposal_probability(std::get<0>(k), std::get<1>(k), std::get<2>(k)), p, 1e-12);
      }
    }
  }
}

TEST(ChainState, RejectsIllegalApply) {
  std::mt19937_64 rng(61);
  const Scene s = fixture::block_scene(2, 1, 2, rng);
  const ClassModels m = fixture::random_models(2, rng);
  ChainState st(s, Configuration{two_part_graph(), {0, 1}}, m, m.weights);
  EXPECT_THROW(st.apply(0, 1), Error);
  EXPECT_THROW(st.apply(0, 0), Error);
  EXPECT_THROW(ChainState(s, Configuration{two_part_graph(), {0, 0}}, m, m.weights), Error);
}

// ---------------------------------------------------------------------------
// rho and the schedule

TEST(EstimateRho, MedianAndReproducibility) {
  EXPECT_EQ(median({1.0, 2.0, 3.0, 4.0, 100.0}), 3.0);
  EXPECT_EQ(median({2.5, 2.5, 2.5}), 2.5);
  std::mt19937_64 rng(62);
  const Scene s = fixture::block_scene(4, 4, 2, rng);
  const ClassModels m = fixture::random_models(2, rng);
  const ChainState st(s, fixture::random_configuration(two_part_graph(), s.size(), rng), m, m.weights);
  const Configuration before = st.config();
  Rng a(9), b(9);
  const double ra = estimate_rho(st, a), rb = estimate_rho(st, b);
  EXPECT_EQ(ra, rb);
  EXPECT_GT(ra, 0.0);
  EXPECT_EQ(st.config(), before);
  // Oracle: replay the same draws on a copy, collecting |dH|.
  ChainState probe = st;
  Rng c(9);
  std::vector<double> d;
  for (int k = 0; k < 200; ++k) {
    const auto mv = probe.propose(c);
    if (!mv) continue;
    const double h = probe.energy();
    probe.apply(mv->element, mv->to);
    d.push_back(std::abs(probe.energy() - h));
  }
  std::sort(d.begin(), d.end());
  const double med = d.size() % 2 ? d[d.size() / 2] : 0.5 * (d[d.size() / 2 - 1] + d[d.size() / 2]);
  EXPECT_EQ(ra, std::max(med, 1e-9));
}

TEST(Schedule, ClosedForms) {
  EXPECT_NEAR(CoolingSchedule::temperature_for(1.0, std::exp(-1.0)), 1.0, 1e-15);
  EXPECT_NEAR(CoolingSchedule::temperature_for(2.0, 0.9), 18.982, 5e-4);
  EXPECT_NEAR(CoolingSchedule::temperature_for(2.0, 0.9), -2.0 / std::log(0.9), 1e-12);
}

TEST(Schedule, IdentityEndpointsAndMonotone) {
  for (double rho : {1e-9, 0.37, 12.0}) {
    const CoolingSchedule s(rho, 1000);
    EXPECT_EQ(s.gamma(0), 0.9);
    EXPECT_EQ(s.gamma(999), 0.1);
    for (std::size_t t = 0; t < 1000; ++t) {
      ASSERT_NEAR(std::exp(-rho / s.temperature(t)), s.gamma(t), 1e-12);
      if (t) ASSERT_LT(s.temperature(t), s.temperature(t - 1));
    }
  }
  EXPECT_THROW(make_schedule(0.0, 10), Error);
  EXPECT_THROW(make_schedule(1.0, 0), Error);
  EXPECT_THROW(make_schedule(1.0, 10, 1.0, 0.1), Error);
  EXPECT_THROW(make_schedule(1.0, 10, 0.1, 0.9), Error);
  EXPECT_THROW(make_schedule(1.0, 10, 0.9, 0.0), Error);
}

// ---------------------------------------------------------------------------
// Annealing

TEST(Anneal, SinglePartGraphHasNoMoves) {
  std::mt19937_64 rng(63);
  const Scene s = fixture::block_scene(3, 3, 2, rng);
  const ClassModels m = fixture::random_models(1, rng);
  AnnealOptions opt;
  opt.n_iter = 500;
  const AnnealResult r = anneal(s, SceneGraph{{0}, {}}, m, m.weights, opt);
  EXPECT_EQ(r.accepted, 0u);
  EXPECT_EQ(r.best, r.initial);
  EXPECT_EQ(r.best_energy, r.initial_energy);
}

TEST(Anneal, FindsExhaustiveMinimumOnSixElements) {
  std::mt19937_64 rng(64);
  const Scene s = six_element_scene(rng);
  const ClassModels m = fixture::random_models(2, rng);
  const SceneGraph g = two_part_graph();
  double best = std::numeric_limits<double>::infinity();
  for (const auto& c : all_configurations(g, s.size())) best = std::min(best, total_energy(s, c, m, m.weights).total);
  int hits = 0;
  for (int run = 0; run < 100; ++run) {
    AnnealOptions opt;
    opt.seed = 1000 + run;
    opt.keep_trace = false;
    const AnnealResult r = anneal(s, g, m, m.weights, opt);
    EXPECT_LE(r.best_energy, r.initial_energy);
    hits += std::abs(r.best_energy - best) <= 1e-9;
  }
  EXPECT_GE(hits, 95);
}

TEST(Anneal, DeterministicAndBestNotAboveInitial) {
  std::mt19937_64 rng(65);
  const Scene s = fixture::block_scene(5, 4, 3, rng, 2);
  const ClassModels m = fixture::random_models(3, rng);
  SceneGraph g{{0, 1, 2}, {{0, 1}, {1, 2}}};
  AnnealOptions opt;
  opt.seed = 5;
  opt.chains = 3;
  opt.verify_every = 100;
  const AnnealResult a = anneal(s, g, m, m.weights, opt), b = anneal(s, g, m, m.weights, opt);
  EXPECT_EQ(a.best, b.best);
  EXPECT_EQ(a.best_energy, b.best_energy);
  EXPECT_EQ(a.seed, b.seed);
  EXPECT_LE(a.best_energy, a.initial_energy);
  EXPECT_TRUE(a.best.valid(s.size()));
  EXPECT_NEAR(total_energy(s, a.best, m, m.weights).total, a.best_energy, 1e-9);
  EXPECT_EQ(a.trace.size(), 200u * s.size());
  // The best of three chains is at least as good as each chain alone.
  for (int c = 0; c < 3; ++c) EXPECT_LE(a.best_energy, anneal_chain(s, g, m, m.weights, opt, 5 + c).best_energy);
  // Trace temperatures follow the schedule.
  const CoolingSchedule sched(a.rho, a.trace.size());
  for (std::size_t t = 0; t < a.trace.size(); t += 97) EXPECT_EQ(a.trace[t].temperature, sched.temperature(t));
}

TEST(Anneal, TraceCsvFormat) {
  std::ostringstream os;
  write_trace_csv(os, {{0, 2.5, -1.25, true}, {1, 0.5, 3.0, false}});
  EXPECT_EQ(os.str(), "iteration,temperature,energy,accepted\n0,2.5,-1.25,1\n1,0.5,3,0\n");
}

TEST(ConfigurationToLabelmap, DirectLookup) {
  std::mt19937_64 rng(66);
  const Scene s = fixture::block_scene(4, 3, 3, rng);
  const SceneGraph g{{5, 2, 7}, {{0, 1}, {1, 2}}};
  const Configuration c = fixture::random_configuration(g, s.size(), rng);
  const LabelMap lm = configuration_to_labelmap(c, s.partition);
  for (std::size_t p = 0; p < lm.size(); ++p) EXPECT_EQ(lm[p], g.nodes[c.part_of[s.partition.element_of[p]]]);
  const LabelMap one = configuration_to_labelmap(Configuration{SceneGraph{{4}, {}}, std::vector<int>(s.size(), 0)}, s.partition);
  EXPECT_EQ(one, LabelMap(12, 9, 4));
}
