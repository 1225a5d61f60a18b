// Acceptance checks. Prints one PASS/FAIL line per criterion followed by
// indented diagnostics, and mirrors everything to acceptance_report.txt in
// the working directory. Exit status is 0 when the harness ran to the end,
// whatever the verdicts; an unexpected exception exits with 2.

#include "support.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

using namespace iclrec;
using namespace iclrec::testing;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances and limits.
constexpr double kFdTol = 1e-4;
constexpr double kFdSeconds = 30.0;
constexpr double kMetricSeconds = 10.0;
constexpr double kFiveLossDrop = 0.5;
constexpr double kFiveNmi = 0.7;
constexpr double kFiveSeconds = 600.0;
constexpr double kFnmTol = 1e-5;

std::ofstream g_report;
int g_failed = 0;

void line(const std::string& s) {
  std::cout << s << std::endl;
  g_report << s << '\n';
}

void note(const std::string& s) { line("    " + s); }

void verdict(int id, bool ok, const std::string& what) {
  if (!ok) ++g_failed;
  line(std::string(ok ? "PASS" : "FAIL") + " criterion " + std::to_string(id) + ": " + what);
}

std::string num(double v, int prec = 6) {
  std::ostringstream o;
  o << std::setprecision(prec) << v;
  return o.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------

void criterion1() {
  const auto t0 = std::chrono::steady_clock::now();
  bool ok = true;
  std::string worst;
  for (auto [which, name] : {std::pair{FdLoss::next_item, "next-item"}, std::pair{FdLoss::seqcl, "seqcl"},
                             std::pair{FdLoss::icl, "icl"}}) {
    const ParamFdResult r = loss_gradient_check(which, 41);
    ok = ok && r.max_rel_error < kFdTol;
    worst += std::string(worst.empty() ? "" : ", ") + name + " " + num(r.max_rel_error, 3) + " over " +
             std::to_string(r.checked) + " params";
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < kFdSeconds;
  verdict(1, ok, "loss gradients through the encoder match central differences");
  note("max relative error: " + worst + " (limit " + num(kFdTol) + ")");
  note("runtime " + num(secs, 3) + " s (limit " + num(kFdSeconds) + " s)");
}

void criterion2() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(2);
  std::size_t mismatches = 0, ties = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const auto vocab = static_cast<std::int32_t>(1 + rng() % 10000);
    const Eigen::Index d = 4;
    // Small integer entries make every score exact and produce many ties.
    Matrix table(vocab + 2, d), h(1, d);
    std::uniform_int_distribution<int> small(-3, 3);
    for (Eigen::Index i = 0; i < table.size(); ++i) table.data()[i] = small(rng);
    for (Eigen::Index i = 0; i < d; ++i) h(0, i) = small(rng);
    const auto target = static_cast<ItemId>(1 + rng() % static_cast<std::uint64_t>(vocab));
    std::set<ItemId> ex;
    std::unordered_set<ItemId> ex2;
    const int n_ex = static_cast<int>(rng() % 30);
    for (int i = 0; i < n_ex && vocab > 1; ++i) {
      const auto e = static_cast<ItemId>(1 + rng() % static_cast<std::uint64_t>(vocab));
      if (e == target) continue;
      ex.insert(e);
      ex2.insert(e);
    }
    std::vector<double> scores(static_cast<std::size_t>(vocab) + 1);
    for (std::size_t i = 0; i < scores.size(); ++i) {
      double s = 0.0;
      for (Eigen::Index c = 0; c < d; ++c) s += table(static_cast<Eigen::Index>(i), c) * h(0, c);
      scores[i] = s;
    }
    const std::size_t want = sort_rank(scores, target, ex);
    for (std::size_t i = 1; i < scores.size(); ++i)
      if (static_cast<ItemId>(i) != target && scores[i] == scores[static_cast<std::size_t>(target)]) ++ties;
    const std::size_t got = rank_target(h, table, vocab, target, ex2);
    bool same = got == want;
    for (int k : {5, 10, 20}) {
      const double hr = want <= static_cast<std::size_t>(k) ? 1.0 : 0.0;
      const double nd = want <= static_cast<std::size_t>(k) ? 1.0 / std::log2(static_cast<double>(want) + 1.0) : 0.0;
      same = same && hr_at_k(got, k) == hr && ndcg_at_k(got, k) == nd;
    }
    if (!same) ++mismatches;
  }
  const double secs = seconds_since(t0);
  verdict(2, mismatches == 0 && secs < kMetricSeconds, "rank/HR/NDCG equal a brute-force sort oracle");
  note("1000 score vectors, |V| up to 10^4, " + std::to_string(ties) + " target ties exercised, " +
       std::to_string(mismatches) + " mismatches");
  note("runtime " + num(secs, 3) + " s (limit " + num(kMetricSeconds) + " s)");
}

void criterion3() {
  std::mt19937_64 rng(3);
  int monotone_violations = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto n = static_cast<Eigen::Index>(20 + rng() % 200);
    const int k = 1 + static_cast<int>(rng() % 10);
    const Matrix p = random_matrix(n, 2 + static_cast<Eigen::Index>(rng() % 6), rng);
    const IntentModel m = kmeans_fit(p, k, rng());
    for (std::size_t i = 1; i < m.distortion_history.size(); ++i)
      if (m.distortion_history[i] > m.distortion_history[i - 1]) ++monotone_violations;
  }

  Matrix four(4, 2);
  four << 0, 0, 0, 1, 10, 0, 10, 1;
  const IntentModel fm = kmeans_fit(four, 2, 2022);
  std::vector<std::pair<double, double>> cs{{fm.centroids(0, 0), fm.centroids(0, 1)},
                                            {fm.centroids(1, 0), fm.centroids(1, 1)}};
  std::sort(cs.begin(), cs.end());
  const bool four_ok = cs[0] == std::pair{0.0, 0.5} && cs[1] == std::pair{10.0, 0.5};

  const int k = 4, per = 60;
  Matrix g(k * per, 16);
  std::vector<int> truth;
  for (int c = 0; c < k; ++c)
    for (int i = 0; i < per; ++i) {
      g.row(c * per + i) = random_matrix(1, 16, rng);
      g(c * per + i, c) += 25.0;
      truth.push_back(c);
    }
  const double nmi = normalized_mutual_information(truth, kmeans_fit(g, k, 2022).assignments);

  verdict(3, monotone_violations == 0 && four_ok && nmi == 1.0, "k-means invariants");
  note("distortion increases across 100 random instances: " + std::to_string(monotone_violations));
  note("4-point centroids (" + num(cs[0].first) + "," + num(cs[0].second) + ") (" + num(cs[1].first) + "," +
       num(cs[1].second) + ")");
  note("separated Gaussians NMI " + num(nmi, 17));
}

void criterion4() {
  std::mt19937_64 rng(4);
  const Matrix c3 = random_matrix(3, 4, rng);
  const double one = icl_loss({random_matrix(1, 4, rng), random_matrix(1, 4, rng)}, {1}, c3);
  const double same = icl_loss({random_matrix(2, 4, rng), random_matrix(2, 4, rng)}, {2, 2}, c3);
  Matrix c(2, 2), h(2, 2);
  c << 1, 0, 0, 1;
  h << 1, 0, 0, 1;
  // One view, two users: the loss sums two per-user terms.
  const double per_term = icl_loss({h}, {0, 1}, c) / 2.0;
  const bool ok = one == 0.0 && same == 0.0 && std::abs(per_term - 0.31326) <= kFnmTol;
  verdict(4, ok, "false-negative mitigation cases");
  note("batch of one " + num(one) + ", same-cluster pair " + num(same) + ", distinct-cluster term " +
       num(per_term, 10) + " (expected 0.31326 +/- " + num(kFnmTol) + ")");
}

// ---------------------------------------------------------------------------
// Synthetic corpus shared by criteria 5 and 7.

struct Synthetic {
  SyntheticCorpus corpus;
  SplitDataset split;
};

Synthetic make_synthetic() {
  SyntheticConfig sc;
  sc.users = 400;
  sc.intents = 4;
  sc.pool_size = 25;
  sc.min_length = 10;
  sc.max_length = 20;
  sc.seed = 2022;
  Synthetic s;
  s.corpus = generate_synthetic(sc);
  s.split = split_leave_one_out(to_dataset(s.corpus));
  return s;
}

EncoderConfig synthetic_encoder() {
  EncoderConfig e;
  e.hidden = 32;
  e.max_len = 20;
  return e;
}

TrainConfig synthetic_train(double lambda, std::uint64_t seed) {
  TrainConfig t;
  t.k = 4;
  t.weights = {lambda, 0.1};
  t.max_epochs = 50;
  t.patience = 50;  // run all 50 epochs; the best-validation model is still kept
  t.batch_size = 16;
  t.adam.lr = 2e-3;
  t.seed = seed;
  return t;
}

/// Highest HR@5 any model can reach: the test item is uniform over the pool
/// items the user has not seen yet, so at most 5 of them can be ranked on top.
double hr5_ceiling(const SplitDataset& split, int pool_size) {
  double s = 0.0;
  for (const auto& u : split.users) {
    const double unseen = static_cast<double>(pool_size) - static_cast<double>(u.test_input().size());
    s += std::min(1.0, 5.0 / unseen);
  }
  return s / static_cast<double>(split.users.size());
}

EncoderParams criterion5(const Synthetic& syn) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<int> labels;
  {
    std::map<std::string, int> by_user;
    for (std::size_t u = 0; u < syn.corpus.user_ids.size(); ++u) by_user[syn.corpus.user_ids[u]] = syn.corpus.labels[u];
    for (const auto& id : syn.split.user_ids) labels.push_back(by_user.at(id));
  }
  const std::uint64_t seeds[] = {1, 2, 3};
  std::vector<double> hr_icl, hr_base;
  bool loss_ok = true, nmi_ok = true;
  EncoderParams keep;
  std::vector<std::string> runs;
  for (double lambda : {0.5, 0.0})
    for (std::uint64_t seed : seeds) {
      const TrainResult r = train(syn.split, synthetic_encoder(), synthetic_train(lambda, seed));
      const double first = r.report.epochs.front().losses.total;
      const double last = r.report.epochs.back().losses.total;
      const double drop = 1.0 - last / first;
      const double nmi = normalized_mutual_information(labels, r.intents.assignments);
      const double hr5 = r.report.test.hr.at(5);
      (lambda > 0 ? hr_icl : hr_base).push_back(hr5);
      if (lambda > 0) {
        loss_ok = loss_ok && drop >= kFiveLossDrop && r.report.epochs.size() == 50;
        nmi_ok = nmi_ok && nmi >= kFiveNmi;
        if (seed == 1) keep = r.params;
      }
      runs.push_back("lambda=" + num(lambda) + " seed=" + std::to_string(seed) + ": loss " + num(first, 5) + " -> " +
           num(last, 5) + " (drop " + num(100 * drop, 4) + "%), NMI " + num(nmi, 4) + ", test HR@5 " + num(hr5, 5) +
           ", best epoch " + std::to_string(r.report.best_epoch));
    }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
  };
  const double m_icl = median(hr_icl), m_base = median(hr_base);
  const bool hr_ok = m_icl > m_base;
  const double secs = seconds_since(t0);
  verdict(5, loss_ok && nmi_ok && hr_ok && secs < kFiveSeconds, "synthetic intent recovery");
  for (const auto& r : runs) note(r);
  note(std::string("(a) loss drop >= 50% in every lambda=0.5 run: ") + (loss_ok ? "yes" : "no"));
  note(std::string("(b) NMI >= 0.7 in every lambda=0.5 run: ") + (nmi_ok ? "yes" : "no"));
  note(std::string("(c) median test HR@5 lambda=0.5 ") + num(m_icl, 5) + " vs lambda=0 " + num(m_base, 5) + ": " +
       (hr_ok ? "strictly higher" : "not higher"));
  note("HR@5 ceiling for this corpus (uniform target over unseen pool items): " + num(hr5_ceiling(syn.split, 25), 5));
  note("runtime " + num(secs, 4) + " s for 6 runs (limit " + num(kFiveSeconds) + " s)");
  return keep;
}

void criterion6(const Synthetic& syn) {
  // (i) λ = β = 0 against the independent next-item trainer, two epochs.
  const TrainingSet data = make_training_set(syn.split, 20);
  TrainConfig cfg = synthetic_train(0.0, 9);
  cfg.weights = {0.0, 0.0};
  EncoderConfig enc = synthetic_encoder();
  enc.vocab_rows = syn.split.vocab_size + 2;
  TrainState st = init_train_state(enc, cfg.seed);
  ReferenceTrainer ref{st.params, st.adam, cfg.adam, cfg.seed};
  std::size_t steps = 0, identical_steps = 0;
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  for (int epoch = 1; epoch <= 2; ++epoch) {
    const auto order = epoch_order(data.size(), cfg.seed, epoch);
    for (std::size_t s = 0; s < order.size(); s += bs) {
      const std::vector<std::size_t> users(order.begin() + static_cast<std::ptrdiff_t>(s),
                                           order.begin() + static_cast<std::ptrdiff_t>(std::min(s + bs, order.size())));
      train_batch(st, data, users, nullptr, cfg, epoch);
      ref.step(data, users, epoch);
      ++steps;
      if (bitwise_equal(st.params, ref.params)) ++identical_steps;
    }
  }

  // (ii) ICL without SeqCL runs end to end.
  TrainConfig only_icl = synthetic_train(0.5, 9);
  only_icl.weights = {0.5, 0.0};
  only_icl.max_epochs = 3;
  bool icl_ok = false;
  std::string icl_note;
  try {
    const TrainResult r = train(syn.split, synthetic_encoder(), only_icl);
    icl_ok = r.report.run_label == "next-item + icl" && r.report.epochs.size() == 3;
    for (const auto& e : r.report.epochs)
      icl_ok = icl_ok && std::isfinite(e.losses.total) && e.losses.icl > 0.0 && e.losses.seqcl == 0.0;
    icl_note = "label '" + r.report.run_label + "', epoch-3 ICL loss " + num(r.report.epochs.back().losses.icl, 5);
  } catch (const std::exception& e) {
    icl_note = std::string("threw: ") + e.what();
  }
  verdict(6, identical_steps == steps && icl_ok, "ablation reductions");
  note("lambda=beta=0 vs next-item-only trainer: " + std::to_string(identical_steps) + "/" + std::to_string(steps) +
       " batch updates bitwise identical");
  note("beta=0, lambda=0.5 run: " + icl_note);
}

std::string render(const RobustnessReport& r) {
  std::ostringstream o;
  o << std::setprecision(17);
  for (const auto& row : r.noise) {
    o << row.ratio << ' ' << row.ndcg5_drop;
    for (const auto& [k, v] : row.result.hr) o << ' ' << v;
    for (const auto& [k, v] : row.result.ndcg) o << ' ' << v;
    o << '\n';
  }
  return o.str();
}

void criterion7(const Synthetic& syn, const EncoderParams& params) {
  const std::vector<double> ratios{0.0, 0.05, 0.1, 0.15, 0.2};
  const RobustnessReport a = robustness_report(params, syn.split, ratios, 3, 2022);
  const RobustnessReport b = robustness_report(params, syn.split, ratios, 3, 2022);
  const bool same = render(a) == render(b);
  bool ordered = a.noise.size() == ratios.size();
  for (std::size_t i = 0; ordered && i < ratios.size(); ++i) ordered = a.noise[i].ratio == ratios[i];
  const bool zero = !a.noise.empty() && a.noise[0].ndcg5_drop == 0.0 && a.noise[0].result.ndcg == a.clean.ndcg;
  verdict(7, same && ordered && zero, "noise sweep is deterministic with zero drop at ratio 0");
  for (const auto& row : a.noise)
    note("ratio " + num(row.ratio) + ": NDCG@5 " + num(row.result.ndcg.at(5), 5) + ", drop " +
         num(100 * row.ndcg5_drop, 4) + "%");
  bool monotone = true;
  for (std::size_t i = 1; i < a.noise.size(); ++i) monotone = monotone && a.noise[i].ndcg5_drop >= a.noise[i - 1].ndcg5_drop;
  note(std::string("repeat run identical: ") + (same ? "yes" : "no") + "; drop non-decreasing in ratio: " +
       (monotone ? "yes" : "no") + " (informational)");
}

void criterion8() {
  const bool pad_ok = pad_truncate({1, 2}, 5).items == std::vector<ItemId>{0, 0, 0, 1, 2} &&
                      pad_truncate({1, 2, 3, 4, 5, 6, 7}, 5).items == std::vector<ItemId>{3, 4, 5, 6, 7} &&
                      pad_truncate({1, 2, 3, 4, 5}, 5).items == std::vector<ItemId>{1, 2, 3, 4, 5};

  std::mt19937_64 rng(8);
  int core_bad = 0;
  for (int trial = 0; trial < 100; ++trial) {
    InteractionDataset ds;
    const int users = 30 + static_cast<int>(rng() % 40);
    const int items = 10 + static_cast<int>(rng() % 30);
    for (int u = 0; u < users; ++u) {
      ds.user_ids.push_back("u" + std::to_string(u));
      ds.sequences.emplace_back();
      const int len = 1 + static_cast<int>(rng() % 15);
      for (int i = 0; i < len; ++i) ds.sequences.back().push_back(static_cast<ItemId>(1 + rng() % items));
    }
    ds.vocab_size = items;
    ds.raw_item_ids.assign(1, "");
    for (int i = 1; i <= items; ++i) ds.raw_item_ids.push_back(std::to_string(i));
    const InteractionDataset f = five_core_filter(ds);
    const auto oracle = brute_force_k_core(ds.sequences, 5);
    std::vector<std::vector<std::string>> want, got;
    for (const auto& s : oracle)
      if (!s.empty()) {
        want.emplace_back();
        for (ItemId i : s) want.back().push_back(std::to_string(i));
      }
    for (const auto& s : f.sequences) {
      got.emplace_back();
      for (ItemId i : s) got.back().push_back(f.raw_item_ids[static_cast<std::size_t>(i)]);
    }
    std::map<ItemId, int> count;
    bool fixed = five_core_filter(f).sequences == f.sequences;
    for (const auto& s : f.sequences) {
      fixed = fixed && s.size() >= 5;
      for (ItemId i : s) ++count[i];
    }
    for (const auto& [i, c] : count) fixed = fixed && c >= 5;
    if (!fixed || got != want) ++core_bad;
  }

  bool beauty_ok = true;
  std::string beauty_note = "Beauty corpus not supplied (set ICLREC_BEAUTY_PATH to check |U|=22363, |V|=12101)";
  if (const char* path = std::getenv("ICLREC_BEAUTY_PATH"); path != nullptr && *path != '\0') {
    try {
      const InteractionDataset ds = load_interactions(path);
      beauty_ok = ds.num_users() == 22363 && ds.vocab_size == 12101;
      beauty_note = std::string("Beauty at ") + path + ": |U|=" + std::to_string(ds.num_users()) +
                    ", |V|=" + std::to_string(ds.vocab_size);
    } catch (const std::exception& e) {
      beauty_ok = false;
      beauty_note = std::string("Beauty load failed: ") + e.what();
    }
  }
  verdict(8, pad_ok && core_bad == 0 && beauty_ok, "data-layer exactness");
  note(std::string("pad_truncate examples: ") + (pad_ok ? "exact" : "wrong"));
  note("5-core on 100 random datasets: " + std::to_string(core_bad) + " disagree with the brute-force fixed point");
  note(beauty_note);
}

int shell(const std::string& cmd) {
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void criterion9() {
  const fs::path dir = fs::temp_directory_path() / ("iclrec_accept_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  const std::string cli = "'" ICLREC_CLI_PATH "'";
  const std::string q = "'" + dir.string() + "/";
  int codes = shell(cli + " gen-synthetic --out " + q + "syn.txt' --users 120 --true-intents 4 2>/dev/null");
  const std::string args = " train --data " + q + "syn.txt' --k 4 --epochs 4 --hidden-size 16 --max-seq-len 20" +
                           " --batch-size 32 --seed 11 >/dev/null 2>&1";
  codes += shell(cli + args + " --out " + q + "run1'");
  codes += shell(cli + args + " --out " + q + "run2'");
  bool ok = codes == 0;
  std::string detail;
  for (const char* f : {"report.jsonl", "checkpoint.bin", "intents.json"}) {
    const std::string a = slurp(dir / "run1" / f), b = slurp(dir / "run2" / f);
    const bool same = !a.empty() && a == b;
    ok = ok && same;
    detail += std::string(detail.empty() ? "" : ", ") + f + (same ? " identical" : " DIFFERENT") + " (" +
              std::to_string(a.size()) + " bytes)";
  }
  verdict(9, ok, "two identical train runs produce identical outputs");
  note(detail);
  if (codes != 0) note("a CLI invocation exited non-zero");
  fs::remove_all(dir);
}

}  // namespace

int main() {
  g_report.open("acceptance_report.txt");
  try {
    criterion1();
    criterion2();
    criterion3();
    criterion4();
    const Synthetic syn = make_synthetic();
    const EncoderParams trained = criterion5(syn);
    criterion6(syn);
    criterion7(syn, trained);
    criterion8();
    criterion9();
  } catch (const std::exception& e) {
    line(std::string("ERROR acceptance harness aborted: ") + e.what());
    return 2;
  }
  line("summary: " + std::to_string(9 - g_failed) + "/9 criteria pass");
  return 0;
}
