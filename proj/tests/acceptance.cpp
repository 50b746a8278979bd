// Acceptance checks C1-C10. Prints one PASS/FAIL line per criterion and
// exits nonzero if any selected criterion fails. `--only N` runs one.

#include <sys/wait.h>

#include <chrono>
#include <cstring>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>

#include "ps3/ps3.hpp"
#include "test_util.hpp"

using namespace ps3;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

SceneGraph two_part_graph() { return SceneGraph{{0, 1}, {{0, 1}}}; }

// ---------------------------------------------------------------------------
// C1: MH chain at T = 1 against exhaustive Gibbs probabilities.

Verdict c1() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(101);
  const Scene s = fixture::block_scene(3, 2, 3, rng, 1);
  const ClassModels m = fixture::random_models(2, rng);
  const SceneGraph g = two_part_graph();
  std::map<std::vector<int>, double> gibbs;
  double z = 0.0, h_min = std::numeric_limits<double>::infinity();
  std::vector<std::pair<std::vector<int>, double>> energies;
  for (int code = 0; code < 64; ++code) {
    std::vector<int> a(6);
    for (int e = 0; e < 6; ++e) a[e] = (code >> e) & 1;
    const Configuration c{g, a};
    if (!c.valid(6)) continue;
    const double h = total_energy(s, c, m, m.weights).total;
    energies.emplace_back(a, h);
    h_min = std::min(h_min, h);
  }
  for (const auto& [a, h] : energies) z += gibbs[a] = std::exp(-(h - h_min));
  for (auto& [a, p] : gibbs) p /= z;

  ChainState st(s, Configuration{g, {0, 0, 0, 1, 1, 1}}, m, m.weights);
  Rng r(7);
  const int steps = 1000000;
  std::map<std::vector<int>, double> freq;
  std::size_t accepted = 0;
  for (int k = 0; k < steps; ++k) {
    accepted += mh_step(st, 1.0, r).accepted;
    freq[st.config().part_of] += 1.0 / steps;
  }
  double tv = 0.0;
  for (const auto& [a, p] : gibbs) tv += std::abs(p - (freq.count(a) ? freq.at(a) : 0.0));
  for (const auto& [a, f] : freq)
    if (!gibbs.count(a)) tv += f;
  tv *= 0.5;

  // States the proposal can reach from the start, by search over moves
  // with positive forward and reverse probability.
  std::set<std::vector<int>> reach{{0, 0, 0, 1, 1, 1}};
  std::vector<std::vector<int>> stack(reach.begin(), reach.end());
  while (!stack.empty()) {
    const std::vector<int> a = stack.back();
    stack.pop_back();
    const ChainState cs(s, Configuration{g, a}, m, m.weights);
    for (int e = 0; e < 6; ++e) {
      std::vector<int> b = a;
      b[e] = 1 - a[e];
      if (cs.proposal_probability(e, a[e], b[e]) <= 0.0 || reach.count(b)) continue;
      if (ChainState(s, Configuration{g, b}, m, m.weights).proposal_probability(e, b[e], a[e]) <= 0.0) continue;
      reach.insert(b);
      stack.push_back(b);
    }
  }
  double z_reach = 0.0, tv_reach = 0.0, unreached_mass = 0.0;
  for (const auto& [a, p] : gibbs) (reach.count(a) ? z_reach : unreached_mass) += p;
  for (const auto& a : reach) tv_reach += std::abs(gibbs.at(a) / z_reach - (freq.count(a) ? freq.at(a) : 0.0));
  tv_reach *= 0.5;
  const double secs = seconds_since(t0);
  return {tv < 0.05 && secs < 60.0,
          fmt("TV=%.4f over all %zu valid states (need <0.05); %zu reachable by boundary moves, unreachable Gibbs mass "
              "%.4f, TV on reachable set %.4f; acceptance %.3f; %.1fs (need <60s)",
              tv, gibbs.size(), reach.size(), unreached_mass, tv_reach, double(accepted) / steps, secs)};
}

// ---------------------------------------------------------------------------
// C2: detailed balance on random (state, move) pairs.

Verdict c2() {
  std::mt19937_64 rng(102);
  int pairs = 0, irreversible = 0;
  double worst = 0.0;
  for (int t = 0; pairs < 1000; ++t) {
    const Scene s = fixture::block_scene(4 + t % 3, 3 + t % 2, 2 + t % 2, rng, 1 + t % 3);
    const ClassModels m = fixture::random_models(3, rng);
    const SceneGraph g{{0, 1, 2}, {{0, 1}, {1, 2}}};
    ChainState st(s, fixture::random_configuration(g, s.size(), rng), m, m.weights);
    Rng r(t);
    const auto mv = st.propose(r);
    if (!mv) continue;
    const double h0 = st.energy();
    st.apply(mv->element, mv->to);
    const double h1 = st.energy();
    const double q_r = st.proposal_probability(mv->element, mv->to, mv->from);
    ++pairs;
    for (double T : {0.5, 1.0, 5.0}) {
      // Both sides divided by pi(L)^(1/T).
      const double lhs = mv->q_f * acceptance(h1 - h0, mv->q_f, q_r, T);
      const double rhs = q_r > 0.0 ? std::exp(-(h1 - h0) / T) * q_r * acceptance(h0 - h1, q_r, mv->q_f, T) : 0.0;
      const double scale = std::max(lhs, rhs);
      worst = std::max(worst, scale > 0.0 ? std::abs(lhs - rhs) / scale : 0.0);
    }
    irreversible += q_r == 0.0;
  }
  return {worst <= 1e-9, fmt("%d pairs x 3 temperatures, max relative error %.3g (%d irreversible, both sides 0)", pairs,
                             worst, irreversible)};
}

// ---------------------------------------------------------------------------
// C3: schedule identity and exact endpoints.

Verdict c3() {
  std::mt19937_64 rng(103);
  double worst = 0.0;
  bool endpoints = true;
  int schedules = 0;
  for (int t = 0; t < 20; ++t) {
    const Scene s = fixture::block_scene(5, 4, 2, rng);
    const ClassModels m = fixture::random_models(3, rng);
    const SceneGraph g{{0, 1, 2}, {{0, 1}, {1, 2}}};
    const ChainState st(s, fixture::random_configuration(g, s.size(), rng), m, m.weights);
    Rng r(t);
    const double rho = estimate_rho(st, r);
    for (std::size_t n : {2ul, 17ul, 200ul * s.size()}) {
      const CoolingSchedule sc = make_schedule(rho, n);
      for (std::size_t i = 0; i < n; ++i) worst = std::max(worst, std::abs(std::exp(-rho / sc.temperature(i)) - sc.gamma(i)));
      endpoints &= sc.gamma(0) == 0.9 && sc.gamma(n - 1) == 0.1;
      ++schedules;
    }
  }
  return {worst <= 1e-12 && endpoints,
          fmt("%d schedules, max |exp(-rho/T)-gamma| = %.3g, endpoints exact: %s", schedules, worst, endpoints ? "yes" : "no")};
}

// ---------------------------------------------------------------------------
// C4: incremental energy against full recomputation.

Verdict c4() {
  std::mt19937_64 rng(104);
  const Scene s = fixture::block_scene(10, 8, 3, rng, 3);
  const ClassModels m = fixture::random_models(4, rng);
  const SceneGraph g{{0, 1, 2, 3}, {{0, 1}, {1, 2}, {2, 3}, {0, 3}}};
  ChainState st(s, fixture::random_configuration(g, s.size(), rng), m, m.weights);
  Rng r(5);
  // Delta check on 1000 sampled moves.
  double worst_delta = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const auto mv = st.propose(r);
    if (!mv) continue;
    const double before = total_energy(s, st.config(), m, m.weights).total;
    const double predicted = delta_energy(s, st.config(), ElementMove{mv->element, mv->from, mv->to}, m, m.weights);
    const double e0 = st.energy();
    const auto undo = st.apply(mv->element, mv->to);
    const double after = total_energy(s, st.config(), m, m.weights).total;
    worst_delta = std::max({worst_delta, std::abs(predicted - (after - before)), std::abs((st.energy() - e0) - (after - before))});
    if (k % 2) st.revert(undo);
  }
  // Drift after 1e5 accepted moves at a hot temperature.
  std::size_t accepted = 0, steps = 0;
  while (accepted < 100000) {
    accepted += mh_step(st, 50.0, r).accepted;
    ++steps;
  }
  const double drift = std::abs(st.energy() - total_energy(s, st.config(), m, m.weights).total);
  return {drift < 1e-6 && worst_delta <= 1e-9,
          fmt("drift %.3g after %zu accepted moves (%zu steps); max delta error %.3g over 1000 moves", drift, accepted,
              steps, worst_delta)};
}

// ---------------------------------------------------------------------------
// C5: controlled experiment on synthetic data.

Verdict c5() {
  const auto t0 = std::chrono::steady_clock::now();
  const unsigned threads = std::max(1u, std::thread::hardware_concurrency());
  double sum[3][2] = {};
  std::string per_seed;
  bool ordered_each = true;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const fs::path root = fixture::temp_dir("c5_" + std::to_string(seed));
    write_synth_dataset(root, 60, 20, seed, {}, threads);
    const Dataset ds = Dataset::open(root, root / "palette.txt");
    RunConfig cfg;
    cfg.seed = seed;
    cfg.threads = threads;
    const KMeansResult km = train_codebook(ds, cfg);
    const ClassModels models = train_models(ds, km.codebook, cfg);
    const ExperimentResult r = run_experiment(ds, models, cfg);
    double acc[3][2];
    for (int k = 0; k < 3; ++k) {
      acc[k][0] = global_accuracy(r.matrices[k].second);
      acc[k][1] = average_accuracy(r.matrices[k].second);
      sum[k][0] += acc[k][0] / 5.0;
      sum[k][1] += acc[k][1] / 5.0;
    }
    ordered_each &= acc[0][0] >= acc[1][0] && acc[1][0] >= acc[2][0] && acc[0][1] >= acc[1][1] && acc[1][1] >= acc[2][1];
    per_seed += fmt(" | seed %d ps3 %.2f/%.2f mrf %.2f/%.2f mle %.2f/%.2f", int(seed), acc[0][0], acc[0][1], acc[1][0],
                    acc[1][1], acc[2][0], acc[2][1]);
    fs::remove_all(root);
  }
  const double secs = seconds_since(t0);
  const bool order = sum[0][0] >= sum[1][0] && sum[1][0] >= sum[2][0] && sum[0][1] >= sum[1][1] && sum[1][1] >= sum[2][1];
  const double gap = sum[0][1] - sum[2][1];
  return {order && gap >= 2.0 && secs < 600.0,
          fmt("mean global/average: ps3 %.2f/%.2f mrf %.2f/%.2f mle %.2f/%.2f; ps3-mle average %+.2fpp (need >= 2); "
              "ordered per seed: %s; %.0fs (need < 600)",
              sum[0][0], sum[0][1], sum[1][0], sum[1][1], sum[2][0], sum[2][1], gap, ordered_each ? "all" : "no", secs) +
              per_seed};
}

// ---------------------------------------------------------------------------
// C6: von Mises density and estimator.

Verdict c6() {
  double worst = 0.0;
  for (double kappa : {0.0, 1.0, 5.0, 50.0}) {
    // Composite Simpson over one period; the integrand is smooth and periodic.
    const int n = 200000;
    const double h = 2.0 * M_PI / n;
    const AngleModel am{0.3, kappa};
    double s = 0.0;
    for (int i = 0; i <= n; ++i) {
      const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
      s += w * std::exp(von_mises_log_density(-M_PI + i * h, am));
    }
    worst = std::max(worst, std::abs(s * h / 3.0 - 1.0));
  }
  // Independent rejection sampler: uniform proposal, accept with
  // probability exp(kappa (cos(r - omega) - 1)).
  std::mt19937_64 rng(106);
  std::uniform_real_distribution<double> ang(-M_PI, M_PI), u01(0.0, 1.0);
  std::vector<double> samples;
  while (samples.size() < 100) {
    const double r = ang(rng);
    if (u01(rng) < std::exp(5.0 * (std::cos(r - 1.0) - 1.0))) samples.push_back(r);
  }
  const AngleModel fit = fit_von_mises(samples);
  const double dw = std::abs(std::remainder(fit.mean_dir - 1.0, 2.0 * M_PI)), dk = std::abs(fit.kappa - 5.0) / 5.0;
  return {worst <= 1e-6 && dw <= 0.2 && dk <= 0.3,
          fmt("max |integral-1| = %.3g over kappa {0,1,5,50}; fit omega=%.4f kappa=%.4f (|d omega|=%.4f, rel d kappa=%.3f)",
              worst, fit.mean_dir, fit.kappa, dw, dk)};
}

// ---------------------------------------------------------------------------
// C7: beta = 0 Potts equals MLE.

Verdict c7() {
  std::mt19937_64 rng(107);
  int same = 0;
  for (int t = 0; t < 20; ++t) {
    const Scene s = fixture::block_scene(4 + t % 5, 3 + t % 4, 2 + t % 3, rng);
    const ClassModels m = fixture::random_models(2 + t % 5, rng);
    std::vector<ClassId> allowed;
    for (ClassId z = 0; z < m.num_classes(); ++z)
      if (z == 0 || uniform01(rng) < 0.7) allowed.push_back(z);
    PottsParams p;
    p.beta = 0.0;
    p.use_location = t % 2 == 0;
    same += mrf_potts_label(s, allowed, m, p) == mle_label(s, allowed, m, p.use_location);
  }
  return {same == 20, fmt("%d/20 instances identical", same)};
}

// ---------------------------------------------------------------------------
// C8: learning independence.

Verdict c8() {
  // Base images may contain any class; extra images never contain the disc.
  SynthOptions opt;
  std::vector<SynthImage> base, extra;
  for (std::uint64_t i = 0; base.size() < 6; ++i) {
    SynthImage s = synth_image(mix_seed(808, i), opt);
    const auto& l = s.gold.labels();
    if (std::find(l.begin(), l.end(), kDisc) != l.end()) base.push_back(std::move(s));
  }
  for (std::uint64_t i = 0; extra.size() < 6; ++i) {
    SynthImage s = synth_image(mix_seed(909, i), opt);
    const auto& l = s.gold.labels();
    if (std::find(l.begin(), l.end(), kDisc) == l.end()) extra.push_back(std::move(s));
  }
  std::vector<ResponseStack> stacks;
  for (const auto& s : base) stacks.push_back(image_features(s.image).responses);
  std::vector<const ResponseStack*> ptrs;
  for (const auto& s : stacks) ptrs.push_back(&s);
  KMeansOptions ko;
  ko.max_samples = 5000;
  ko.max_iterations = 10;
  const TextonCodebook cb = train_textons(ptrs, ko).codebook;
  LearningOptions lo;
  lo.layout = HistogramLayout{32, kNumTextons};
  auto ground_truth = [&](const std::vector<SynthImage>& imgs) {
    std::vector<GroundTruthImage> out;
    for (std::size_t i = 0; i < imgs.size(); ++i) {
      AnnotatedImage a;
      a.name = "img" + std::to_string(i);
      a.gold = imgs[i].gold;
      ImageFeatures f = image_features(imgs[i].image);
      a.textons = assign_textons(f.responses, cb);
      a.lab = std::move(f.lab);
      out.push_back(extract_ground_truth(a, lo));
    }
    return out;
  };
  std::vector<std::string> names;
  for (const auto& c : synth_classes()) names.push_back(c.name);
  std::vector<GroundTruthImage> gt = ground_truth(base);
  const ClassModels before = learn_models(gt, names, cb, lo);
  for (auto& g : ground_truth(extra)) gt.push_back(std::move(g));
  const ClassModels after = learn_models(gt, names, cb, lo);
  const ClassModel &a = before.at(kDisc), &b = after.at(kDisc);
  const bool same = a.fg == b.fg && a.bg == b.bg && a.shape == b.shape && a.location == b.location &&
                    a.part_samples == b.part_samples;
  int others_changed = 0;
  for (ClassId z = 0; z < before.num_classes(); ++z)
    if (z != kDisc && before.classes[z].present && !(before.classes[z].fg == after.classes[z].fg)) ++others_changed;
  return {same, fmt("disc unary parameters %s after adding %zu disc-free images (%d other classes changed, as expected)",
                    same ? "bit-identical" : "CHANGED", extra.size(), others_changed)};
}

// ---------------------------------------------------------------------------
// C9: metric formulas against brute-force tallies.

Verdict c9() {
  std::mt19937_64 rng(109);
  int exact = 0;
  const int trials = 1000;
  const std::vector<std::string> groups{"stuff", "objects", "stuff", "objects"};
  for (int t = 0; t < trials; ++t) {
    LabelMap g(4, 4), p(4, 4);
    for (std::size_t k = 0; k < 16; ++k) {
      g[k] = uniform01(rng) < 0.15 ? kVoid : static_cast<ClassId>(uniform_index(rng, 4));
      p[k] = static_cast<ClassId>(uniform_index(rng, 4));
    }
    ConfusionMatrix cm(4);
    accumulate(g, p, cm);
    std::uint64_t N[4][4] = {};
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x)
        if (g.at(x, y) != kVoid) ++N[g.at(x, y)][p.at(x, y)];
    bool ok = true;
    std::uint64_t diag = 0, total = 0;
    double rec[4];
    bool present[4];
    for (int i = 0; i < 4; ++i) {
      std::uint64_t row = 0;
      for (int j = 0; j < 4; ++j) {
        ok &= cm(i, j) == N[i][j];
        row += N[i][j];
      }
      diag += N[i][i];
      total += row;
      present[i] = row > 0;
      rec[i] = present[i] ? 100.0 * static_cast<double>(N[i][i]) / static_cast<double>(row) : 0.0;
    }
    if (total == 0) {
      ++exact;
      continue;
    }
    double avg = 0.0, gs[2] = {0, 0};
    int np = 0, gn[2] = {0, 0};
    for (int i = 0; i < 4; ++i)
      if (present[i]) {
        avg += rec[i];
        ++np;
        gs[i % 2] += rec[i];
        ++gn[i % 2];
      }
    ok &= global_accuracy(cm) == 100.0 * static_cast<double>(diag) / static_cast<double>(total);
    ok &= average_accuracy(cm) == avg / np;
    const auto grouped = grouped_accuracy(cm, groups);
    if (gn[0]) ok &= grouped.at("stuff") == gs[0] / gn[0];
    if (gn[1]) ok &= grouped.at("objects") == gs[1] / gn[1];
    exact += ok;
  }
  return {exact == trials, fmt("%d/%d random 4x4 pairs exact", exact, trials)};
}

// ---------------------------------------------------------------------------
// C10: every command twice, byte-identical artifacts.

int run_cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(PS3_CLI_PATH) + " " + args + " >>" + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file() && e.path().extension() != ".log") {
      std::ifstream in(e.path(), std::ios::binary);
      out[fs::relative(e.path(), root).string()] = {std::istreambuf_iterator<char>(in), {}};
    }
  return out;
}

Verdict c10() {
  const fs::path base = fixture::temp_dir("c10");
  std::vector<std::map<std::string, std::string>> trees;
  int failures = 0;
  std::vector<std::string> stdout_logs;
  for (int rep = 0; rep < 2; ++rep) {
    const fs::path r = base / ("run" + std::to_string(rep)), data = r / "data", out = r / "out", log = base / ("run" + std::to_string(rep) + ".log");
    const std::string common = "--dataset " + data.string() + " --output " + out.string() +
                               " --seed 4 --texton-samples 6000 --kmeans-iterations 15 --iter-multiplier 40 --chains 2";
    const std::vector<std::string> cmds = {
        "synth --dataset " + data.string() + " --n-train 6 --n-test 2 --seed 4",
        "textons " + common,
        "train " + common,
        "infer " + common,
        "baseline --which mle " + common,
        "baseline --which mrf " + common,
        "eval --method ps3 " + common,
        "eval --method mrf " + common,
        "eval --method mle " + common,
        "render --dataset " + data.string() + " --image " + (data / "images" / "synth_0006.png").string() + " --labels " +
            (out / "ps3" / "synth_0006.png").string() + " --out " + (out / "render.png").string(),
    };
    for (const auto& c : cmds) failures += run_cli(c, log) != 0;
    trees.push_back(tree_bytes(r));
    // Console output with the run directory masked.
    std::ifstream in(log);
    std::string text{std::istreambuf_iterator<char>(in), {}};
    for (std::size_t pos; (pos = text.find(r.string())) != std::string::npos;) text.replace(pos, r.string().size(), "<run>");
    stdout_logs.push_back(text);
  }
  const bool same = trees[0] == trees[1] && stdout_logs[0] == stdout_logs[1];
  std::size_t diff = 0;
  for (const auto& [k, v] : trees[0]) diff += !trees[1].count(k) || trees[1].at(k) != v;
  fs::remove_all(base);
  return {same && failures == 0, fmt("%zu artifacts from 10 commands, %zu differ, console output %s, %d command failures",
                                     trees[0].size(), diff, stdout_logs[0] == stdout_logs[1] ? "identical" : "differs",
                                     failures)};
}

}  // namespace

int main(int argc, char** argv) {
  int only = 0;
  for (int i = 1; i < argc; ++i)
    if (std::strcmp(argv[i], "--only") == 0 && i + 1 < argc) only = std::atoi(argv[++i]);
  const std::vector<std::function<Verdict()>> checks = {c1, c2, c3, c4, c5, c6, c7, c8, c9, c10};
  if (only < 0 || only > static_cast<int>(checks.size())) {
    std::cerr << "usage: acceptance [--only N]\n";
    return 2;
  }
  bool all = true;
  for (std::size_t k = 0; k < checks.size(); ++k) {
    if (only && static_cast<int>(k) + 1 != only) continue;
    Verdict v;
    try {
      v = checks[k]();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    std::cout << 'C' << k + 1 << ' ' << (v.pass ? "PASS" : "FAIL") << ' ' << v.detail << std::endl;
    all &= v.pass;
  }
  return all ? 0 : 1;
}
