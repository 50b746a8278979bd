#pragma once

// MAP inference over element-to-part assignments: initialization, the
// boundary-element proposal with exact forward / reverse probabilities,
// Metropolis-Hastings acceptance, and the data-adaptive annealing loop.

#include <cstdio>
#include <optional>
#include <ostream>
#include <random>

#include "ps3/common.hpp"
#include "ps3/imaging.hpp"
#include "ps3/model.hpp"

namespace ps3 {

using Rng = std::mt19937_64;

// ---------------------------------------------------------------------------
// Initialization

/// Per-element, per-part initialization score: appearance mismatch plus
/// location Mahalanobis distance.
inline double init_score(const Scene& scene, ElementId e, const ClassModel& m) {
  const double d = hist_similarity(m.fg, scene.features.histograms[e]);
  const Vec2 c = normalized_position(scene.partition.elements[e].centroid(), scene.dims());
  return -std::log(std::max(d, kSimilarityFloor) / 4.0) + mahalanobis(c, m.location);
}

inline Configuration initialize(const Scene& scene, const SceneGraph& graph, const ClassModels& models) {
  graph.validate();
  const std::size_t E = scene.size(), P = graph.size();
  require(P <= E, "initialize: scene graph has more parts than the image has elements");
  std::vector<double> score(E * P);
  for (std::size_t i = 0; i < P; ++i) {
    const ClassModel& m = models.at(graph.nodes[i]);
    for (std::size_t e = 0; e < E; ++e) score[e * P + i] = init_score(scene, static_cast<ElementId>(e), m);
  }
  Configuration c{graph, std::vector<int>(E, 0)};
  for (std::size_t e = 0; e < E; ++e) {
    int best = 0;
    for (std::size_t i = 1; i < P; ++i)
      if (score[e * P + i] < score[e * P + best]) best = static_cast<int>(i);
    c.part_of[e] = best;
  }
  auto sizes = c.part_sizes();
  for (std::size_t i = 0; i < P; ++i) {
    if (sizes[i] > 0) continue;
    std::size_t pick = E;
    for (std::size_t e = 0; e < E; ++e) {
      if (sizes[c.part_of[e]] <= 1) continue;
      if (pick == E || score[e * P + i] < score[pick * P + i]) pick = e;
    }
    --sizes[c.part_of[pick]];
    c.part_of[pick] = static_cast<int>(i);
    sizes[i] = 1;
  }
  return c;
}

// ---------------------------------------------------------------------------
// Chain state

struct Move {
  ElementId element = -1;
  int from = -1;
  int to = -1;
  double q_f = 0.0;
  double q_r = 0.0;
};

/// Current configuration with incrementally maintained part statistics,
/// potentials and proposal normalizers.
class ChainState {
 public:
  struct Candidate {
    ElementId element;
    double weight;
    bool inside;
  };

  ChainState(const Scene& scene, Configuration config, const ClassModels& models, const Weights& weights)
      : scene_(&scene), models_(&models), weights_(weights), config_(std::move(config)) {
    require(config_.valid(scene.size()), "ChainState: invalid configuration");
    const std::size_t P = config_.parts(), E = scene.size();
    members_.assign(P, {});
    for (std::size_t e = 0; e < E; ++e) members_[config_.part_of[e]].push_back(static_cast<ElementId>(e));
    cover_.assign(P, std::vector<int>(E, 0));
    stats_.resize(P);
    for (std::size_t i = 0; i < P; ++i) {
      stats_[i] = compute_part_stats(scene, config_.part_of, static_cast<int>(i));
      for (ElementId e : members_[i])
        for (ElementId f : scene.neighborhoods[e]) ++cover_[i][f];
    }
    incident_.assign(P, {});
    for (std::size_t k = 0; k < config_.graph.edges.size(); ++k) {
      incident_[config_.graph.edges[k].first].push_back(k);
      incident_[config_.graph.edges[k].second].push_back(k);
    }
    unary_.resize(P);
    binary_.resize(config_.graph.edges.size());
    for (std::size_t i = 0; i < P; ++i) refresh_unary(static_cast<int>(i));
    for (std::size_t k = 0; k < binary_.size(); ++k) refresh_binary(k);
    recompute_total();
    candidates_.resize(P);
    z_.assign(P, 0.0);
    for (std::size_t i = 0; i < P; ++i) refresh_candidates(static_cast<int>(i));
  }

  const Configuration& config() const { return config_; }
  const Scene& scene() const { return *scene_; }
  const Weights& weights() const { return weights_; }
  std::size_t parts() const { return config_.parts(); }
  double energy() const { return energy_; }
  const PartStats& stats(int part) const { return stats_[part]; }
  const std::vector<ElementId>& members(int part) const { return members_[part]; }
  const std::vector<Candidate>& candidates(int part) const { return candidates_[part]; }
  double normalizer(int part) const { return z_[part]; }

  EnergyBreakdown breakdown() const {
    EnergyBreakdown b{unary_, binary_, energy_};
    return b;
  }

  /// Full recomputation of the energy from scratch.
  double recompute_energy() const { return total_energy(*scene_, config_, *models_, weights_).total; }

  bool has_moves() const {
    return std::any_of(z_.begin(), z_.end(), [](double z) { return z > 0.0; });
  }

  /// Probability of selecting a given part with positive normalizer: up to n
  /// uniform draws, stopping at the first part that has candidates.
  double selection_probability() const {
    const std::size_t n = parts();
    std::size_t dead = 0;
    for (double z : z_) dead += (z <= 0.0);
    if (dead == n) return 0.0;
    const double f = static_cast<double>(dead) / static_cast<double>(n);
    if (dead == 0) return 1.0 / static_cast<double>(n);
    return (1.0 - std::pow(f, static_cast<double>(n))) / ((1.0 - f) * static_cast<double>(n));
  }

  /// Parts other than `exclude` owning an element adjacent to `e`, ascending.
  std::vector<int> adjacent_parts(ElementId e, int exclude) const {
    std::vector<int> out;
    for (ElementId f : scene_->partition.adjacency[e]) {
      const int p = config_.part_of[f];
      if (p != exclude) out.push_back(p);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  /// Q(e: from -> to) in the current state, summing every way the proposal
  /// can produce this move.
  double proposal_probability(ElementId e, int from, int to) const {
    const double s = selection_probability();
    if (s == 0.0) return 0.0;
    double q = 0.0;
    if (z_[to] > 0.0)
      if (const Candidate* c = find_candidate(to, e); c && !c->inside) q += s * c->weight / z_[to];
    if (z_[from] > 0.0)
      if (const Candidate* c = find_candidate(from, e); c && c->inside) {
        const auto dest = adjacent_parts(e, from);
        if (std::binary_search(dest.begin(), dest.end(), to))
          q += s * c->weight / z_[from] / static_cast<double>(dest.size());
      }
    return q;
  }

  /// Draws a move from the proposal, or nothing when no part has a legal
  /// candidate within n part draws. Fills q_f.
  template <class Engine>
  std::optional<Move> propose(Engine& rng) const {
    const std::size_t n = parts();
    int part = -1;
    for (std::size_t t = 0; t < n; ++t) {
      const int i = static_cast<int>(uniform_index(rng, n));
      if (z_[i] > 0.0) {
        part = i;
        break;
      }
    }
    if (part < 0) return std::nullopt;
    const auto& cands = candidates_[part];
    const double r = uniform01(rng) * z_[part];
    double acc = 0.0;
    const Candidate* pick = nullptr;
    for (const auto& c : cands) {
      if (c.weight <= 0.0) continue;
      pick = &c;
      acc += c.weight;
      if (r < acc) break;
    }
    Move m;
    m.element = pick->element;
    if (pick->inside) {
      m.from = part;
      const auto dest = adjacent_parts(pick->element, part);
      m.to = dest[uniform_index(rng, dest.size())];
    } else {
      m.from = config_.part_of[pick->element];
      m.to = part;
    }
    m.q_f = proposal_probability(m.element, m.from, m.to);
    return m;
  }

  /// Saved terms for reverting one applied move.
  struct Undo {
    ElementId element;
    int from, to;
    double energy;
    UnaryTerms unary_from, unary_to;
    std::vector<std::pair<std::size_t, BinaryTerms>> binary;
    std::vector<double> z;
    std::vector<std::vector<Candidate>> candidates;  // indexed like `touched`
    std::vector<int> touched;
  };

  /// Moves `e` into part `to` and updates every cached quantity.
  Undo apply(ElementId e, int to) {
    const int from = config_.part_of[e];
    require(from != to, "ChainState::apply: element already in destination part");
    require(members_[from].size() > 1, "ChainState::apply: move would empty the source part");
    Undo u{e, from, to, energy_, unary_[from], unary_[to], {}, z_, {}, {}};
    for (int p : {from, to})
      for (std::size_t k : incident_[p]) u.binary.emplace_back(k, binary_[k]);
    const bool global = members_[from].size() == 2 || members_[to].size() == 1;
    if (global) {
      for (std::size_t i = 0; i < parts(); ++i) u.touched.push_back(static_cast<int>(i));
    } else {
      u.touched = {from, to};
    }
    for (int p : u.touched) u.candidates.push_back(candidates_[p]);

    move_stats(e, from, to);
    refresh_unary(from);
    refresh_unary(to);
    for (int p : {from, to})
      for (std::size_t k : incident_[p]) refresh_binary(k);
    recompute_total();
    for (int p : u.touched) refresh_candidates(p);
    return u;
  }

  void revert(const Undo& u) {
    move_stats(u.element, u.to, u.from);
    unary_[u.from] = u.unary_from;
    unary_[u.to] = u.unary_to;
    for (const auto& [k, b] : u.binary) binary_[k] = b;
    energy_ = u.energy;
    z_ = u.z;
    for (std::size_t t = 0; t < u.touched.size(); ++t) candidates_[u.touched[t]] = u.candidates[t];
  }

 private:
  const Candidate* find_candidate(int part, ElementId e) const {
    const auto& c = candidates_[part];
    auto it = std::lower_bound(c.begin(), c.end(), e, [](const Candidate& a, ElementId v) { return a.element < v; });
    return (it != c.end() && it->element == e) ? &*it : nullptr;
  }

  void move_stats(ElementId e, int a, int b) {
    const Scene& sc = *scene_;
    const auto& h = sc.features.counts;
    const Element& el = sc.partition.elements[e];
    const auto& nb = sc.neighborhoods[e];
    auto& ca = cover_[a];
    auto& cb = cover_[b];
    auto& pa = stats_[a];
    auto& pb = stats_[b];
    for (ElementId f : nb)
      if (--ca[f] == 0 && config_.part_of[f] != a) pa.band -= h[f];
    if (ca[e] > 0) pa.band += h[e];
    if (cb[e] > 0) pb.band -= h[e];
    for (ElementId f : nb) {
      if (cb[f] == 0 && config_.part_of[f] != b) pb.band += h[f];
      ++cb[f];
    }
    config_.part_of[e] = b;
    pa.fg -= h[e];
    pb.fg += h[e];
    const double sz = static_cast<double>(el.size());
    pa.mass -= sz;
    pb.mass += sz;
    pa.sum_x -= el.sum_x;
    pa.sum_y -= el.sum_y;
    pb.sum_x += el.sum_x;
    pb.sum_y += el.sum_y;
    auto& ma = members_[a];
    ma.erase(std::lower_bound(ma.begin(), ma.end(), e));
    auto& mb = members_[b];
    mb.insert(std::lower_bound(mb.begin(), mb.end(), e), e);
    pa.bbox = BBox{};
    for (ElementId f : ma) pa.bbox.add(sc.partition.elements[f].bbox);
    pb.bbox.add(el.bbox);
  }

  void refresh_unary(int p) {
    unary_[p] = unary_terms(*scene_, config_.part_of, p, stats_[p], models_->at(config_.graph.nodes[p]));
  }

  void refresh_binary(std::size_t k) {
    const auto [i, j] = config_.graph.edges[k];
    binary_[k] = binary_terms(stats_[i].centroid(), stats_[j].centroid(), config_.graph.nodes[i],
                              config_.graph.nodes[j], *models_, scene_->dims());
  }

  void recompute_total() {
    double t = 0.0;
    for (const auto& u : unary_) t += u.weighted(weights_);
    for (const auto& b : binary_) t += b.weighted(weights_);
    energy_ = t;
  }

  void refresh_candidates(int p) {
    const Scene& sc = *scene_;
    const auto& part_of = config_.part_of;
    auto& out = candidates_[p];
    out.clear();
    std::vector<ElementId> inside, outside;
    const bool can_leave = members_[p].size() > 1;
    for (ElementId e : members_[p]) {
      bool boundary = false;
      for (ElementId f : sc.partition.adjacency[e]) {
        if (part_of[f] == p) continue;
        boundary = true;
        if (members_[part_of[f]].size() > 1) outside.push_back(f);
      }
      if (boundary && can_leave) inside.push_back(e);
    }
    std::sort(outside.begin(), outside.end());
    outside.erase(std::unique(outside.begin(), outside.end()), outside.end());
    const PartStats& st = stats_[p];
    const bool has_band = st.band.mass > 0.0;
    auto d_fg = [&](ElementId e) { return hist_similarity(sc.features.histograms[e], st.fg); };
    auto d_band = [&](ElementId e) { return has_band ? hist_similarity(sc.features.histograms[e], st.band) : 0.0; };
    std::size_t a = 0, b = 0;
    while (a < inside.size() || b < outside.size()) {
      if (b == outside.size() || (a < inside.size() && inside[a] < outside[b])) {
        const ElementId e = inside[a++];
        out.push_back({e, d_band(e) / std::max(d_fg(e), kSimilarityFloor), true});
      } else {
        const ElementId e = outside[b++];
        out.push_back({e, d_fg(e) / std::max(d_band(e), kSimilarityFloor), false});
      }
    }
    double z = 0.0;
    for (const auto& c : out) z += c.weight;
    z_[p] = z;
  }

  const Scene* scene_;
  const ClassModels* models_;
  Weights weights_;
  Configuration config_;
  std::vector<std::vector<ElementId>> members_;
  std::vector<std::vector<int>> cover_;  // cover_[i][f]: elements of part i whose neighborhood holds f
  std::vector<PartStats> stats_;
  std::vector<std::vector<std::size_t>> incident_;
  std::vector<UnaryTerms> unary_;
  std::vector<BinaryTerms> binary_;
  double energy_ = 0.0;
  std::vector<std::vector<Candidate>> candidates_;
  std::vector<double> z_;
};

// ---------------------------------------------------------------------------
// Metropolis-Hastings

/// min{1, exp(-dH / T) * q_r / q_f}; T = infinity drops the energy factor.
inline double acceptance(double delta_h, double q_f, double q_r, double T) {
  require(std::isfinite(delta_h), "acceptance: non-finite energy difference", ErrorKind::Format);
  require(q_f > 0.0, "acceptance: forward proposal probability must be positive");
  require(T > 0.0, "acceptance: temperature must be positive");
  const double log_ratio = (std::isinf(T) ? 0.0 : -delta_h / T) + std::log(q_r) - std::log(q_f);
  return log_ratio >= 0.0 ? 1.0 : std::exp(log_ratio);
}

struct StepResult {
  bool proposed = false;
  bool accepted = false;
  double delta = 0.0;
};

/// One MH step at temperature T.
template <class Engine>
StepResult mh_step(ChainState& state, double T, Engine& rng) {
  StepResult r;
  auto mv = state.propose(rng);
  if (!mv) return r;
  r.proposed = true;
  const double before = state.energy();
  auto undo = state.apply(mv->element, mv->to);
  mv->q_r = state.proposal_probability(mv->element, mv->to, mv->from);
  r.delta = state.energy() - before;
  const double a = acceptance(r.delta, mv->q_f, mv->q_r, T);
  if (uniform01(rng) < a) {
    r.accepted = true;
  } else {
    state.revert(undo);
  }
  return r;
}

/// Median |dH| over K always-accepted proposals from the current state,
/// floored at 1e-9. The state is left unchanged.
template <class Engine>
double estimate_rho(const ChainState& state, Engine& rng, int K = 200) {
  require(K > 0, "estimate_rho: K must be positive");
  ChainState probe = state;
  std::vector<double> deltas;
  for (int k = 0; k < K; ++k) {
    auto mv = probe.propose(rng);
    if (!mv) continue;
    const double before = probe.energy();
    probe.apply(mv->element, mv->to);
    deltas.push_back(std::abs(probe.energy() - before));
  }
  require(!deltas.empty(), "estimate_rho: no legal moves");
  return std::max(median(deltas), 1e-9);
}

// ---------------------------------------------------------------------------
// Annealing

class CoolingSchedule {
 public:
  CoolingSchedule(double rho, std::size_t n_iter, double gamma1 = 0.9, double gamma2 = 0.1)
      : rho_(rho), n_(n_iter), g1_(gamma1), g2_(gamma2) {
    require(rho > 0.0, "make_schedule: rho must be positive");
    require(n_iter >= 1, "make_schedule: need at least one iteration");
    require(gamma1 > 0.0 && gamma1 < 1.0 && gamma2 > 0.0 && gamma2 < 1.0, "make_schedule: gamma endpoints must lie in (0, 1)");
    require(gamma2 < gamma1, "make_schedule: gamma must decrease");
  }

  double rho() const { return rho_; }
  std::size_t iterations() const { return n_; }
  double gamma(std::size_t t) const {
    if (n_ == 1) return g1_;
    // Convex combination so both endpoints are exact.
    const double s = static_cast<double>(t) / static_cast<double>(n_ - 1);
    return (1.0 - s) * g1_ + s * g2_;
  }
  double temperature(std::size_t t) const { return temperature_for(rho_, gamma(t)); }

  static double temperature_for(double rho, double gamma) { return -rho / std::log(gamma); }

 private:
  double rho_;
  std::size_t n_;
  double g1_, g2_;
};

inline CoolingSchedule make_schedule(double rho, std::size_t n_iter, double gamma1 = 0.9, double gamma2 = 0.1) {
  return CoolingSchedule(rho, n_iter, gamma1, gamma2);
}

struct AnnealOptions {
  std::size_t n_iter = 0;  // 0: 200 x number of elements
  double gamma1 = 0.9;
  double gamma2 = 0.1;
  int rho_samples = 200;
  std::uint64_t seed = 1;
  int chains = 1;
  unsigned threads = 1;
  std::size_t verify_every = 10000;  // 0 disables the drift check
  bool keep_trace = true;
};

struct TraceRow {
  std::size_t iteration;
  double temperature;
  double energy;
  bool accepted;
};

struct AnnealResult {
  Configuration best;
  double best_energy = 0.0;
  Configuration initial;
  double initial_energy = 0.0;
  double rho = 0.0;
  std::size_t accepted = 0;
  std::uint64_t seed = 0;
  std::vector<TraceRow> trace;
};

inline AnnealResult anneal_chain(const Scene& scene, const SceneGraph& graph, const ClassModels& models,
                                 const Weights& weights, const AnnealOptions& opt, std::uint64_t seed) {
  Rng rng(seed);
  AnnealResult res;
  res.seed = seed;
  res.initial = initialize(scene, graph, models);
  ChainState state(scene, res.initial, models, weights);
  res.initial_energy = state.energy();
  res.best = res.initial;
  res.best_energy = res.initial_energy;
  const std::size_t n_iter = opt.n_iter ? opt.n_iter : 200 * scene.size();
  res.rho = state.has_moves() ? estimate_rho(state, rng, opt.rho_samples) : 1e-9;
  const CoolingSchedule sched(res.rho, n_iter, opt.gamma1, opt.gamma2);
  if (opt.keep_trace) res.trace.reserve(n_iter);
  for (std::size_t t = 0; t < n_iter; ++t) {
    const double T = sched.temperature(t);
    const StepResult step = mh_step(state, T, rng);
    res.accepted += step.accepted;
    if (step.accepted && state.energy() < res.best_energy) {
      res.best_energy = state.energy();
      res.best.part_of = state.config().part_of;
    }
    if (opt.keep_trace) res.trace.push_back({t, T, state.energy(), step.accepted});
    if (opt.verify_every && (t + 1) % opt.verify_every == 0) {
      const double full = state.recompute_energy();
      require(std::abs(full - state.energy()) <= 1e-6 * std::max(1.0, std::abs(full)),
              "anneal: incremental energy drifted from recomputation", ErrorKind::Format);
    }
  }
  return res;
}

/// Runs `opt.chains` independent chains (seeds seed, seed+1, ...) and keeps
/// the lowest-energy result, ties toward the earliest chain.
inline AnnealResult anneal(const Scene& scene, const SceneGraph& graph, const ClassModels& models,
                           const Weights& weights, const AnnealOptions& opt) {
  require(opt.chains >= 1, "anneal: need at least one chain");
  std::vector<AnnealResult> runs(static_cast<std::size_t>(opt.chains));
  parallel_for(runs.size(), opt.threads, [&](std::size_t c) {
    runs[c] = anneal_chain(scene, graph, models, weights, opt, opt.seed + c);
  });
  std::size_t best = 0;
  for (std::size_t c = 1; c < runs.size(); ++c)
    if (runs[c].best_energy < runs[best].best_energy) best = c;
  return std::move(runs[best]);
}

inline LabelMap configuration_to_labelmap(const Configuration& config, const ElementPartition& partition) {
  require(config.part_of.size() == partition.size(), "configuration_to_labelmap: size mismatch");
  LabelMap out(partition.dims.width, partition.dims.height);
  for (std::size_t p = 0; p < out.size(); ++p) out[p] = config.graph.nodes[config.part_of[partition.element_of[p]]];
  return out;
}

inline void write_trace_csv(std::ostream& os, const std::vector<TraceRow>& trace) {
  os << "iteration,temperature,energy,accepted\n";
  char buf[128];
  for (const auto& r : trace) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%d\n", r.iteration, r.temperature, r.energy, r.accepted ? 1 : 0);
    os << buf;
  }
}

}  // namespace ps3
