// iclrec command-line tool: train, evaluate, inspect-intents, gen-synthetic.
//
// Every option is global and may also be given in a key=value file passed
// with --config (keys are the long option names without dashes). Flags on
// the command line win over the file.

#include "iclrec/iclrec.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace iclrec;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

struct RunConfig {
  std::string data;
  bool five_core = false;
  std::string out;
  std::string checkpoint;
  std::string intents;
  std::uint64_t seed = 2022;

  EncoderConfig encoder;
  TrainConfig train;

  std::string phase = "test";
  double noise_ratio = 0.0;
  std::string noise_ratios = "0.05,0.1,0.15,0.2";
  int n_groups = 0;
  bool no_exclude_seen = false;
  int top_m = 5;

  SyntheticConfig synthetic;
  std::string labels;
};

void bind_options(CLI::App& app, RunConfig& rc) {
  app.add_option("--data", rc.data, "interaction file: '<user> <item> <item> ...' per line");
  app.add_flag("--five-core", rc.five_core, "apply iterative 5-core filtering after loading");
  app.add_option("--out", rc.out, "train: output directory; gen-synthetic: corpus file");
  app.add_option("--checkpoint", rc.checkpoint, "checkpoint file or the directory written by train");
  app.add_option("--intents", rc.intents, "intent model file (default: intents.json next to the checkpoint)");
  app.add_option("--seed", rc.seed, "master seed")->capture_default_str();

  app.add_option("--max-seq-len", rc.encoder.max_len, "T, sequence length after padding/truncation")->capture_default_str();
  app.add_option("--hidden-size", rc.encoder.hidden, "d")->capture_default_str();
  app.add_option("--blocks", rc.encoder.blocks, "transformer blocks")->capture_default_str();
  app.add_option("--heads", rc.encoder.heads, "attention heads")->capture_default_str();
  app.add_option("--dropout", rc.encoder.dropout, "dropout rate")->capture_default_str();

  app.add_option("--crop-ratio", rc.train.augment.crop_ratio)->capture_default_str();
  app.add_option("--mask-ratio", rc.train.augment.mask_ratio)->capture_default_str();
  app.add_option("--reorder-ratio", rc.train.augment.reorder_ratio)->capture_default_str();

  app.add_option("--k", rc.train.k, "number of intent prototypes K")->capture_default_str();
  app.add_option("--lambda", rc.train.weights.lambda, "intent contrastive weight")->capture_default_str();
  app.add_option("--beta", rc.train.weights.beta, "sequence contrastive weight")->capture_default_str();
  app.add_option("--temperature", rc.train.temperature)->capture_default_str();
  app.add_option("--batch-size", rc.train.batch_size)->capture_default_str();
  app.add_option("--lr", rc.train.adam.lr)->capture_default_str();
  app.add_option("--epochs", rc.train.max_epochs)->capture_default_str();
  app.add_option("--patience", rc.train.patience, "early-stop patience on validation NDCG@20")->capture_default_str();

  app.add_option("--phase", rc.phase, "evaluate: valid or test")->check(CLI::IsMember({"valid", "test"}))->capture_default_str();
  app.add_option("--noise-ratio", rc.noise_ratio, "evaluate: noise injected into the test inputs of the headline run")
      ->capture_default_str();
  app.add_option("--noise-ratios", rc.noise_ratios, "evaluate: comma-separated noise sweep, or 'none'")->capture_default_str();
  app.add_option("--n-groups", rc.n_groups, "evaluate: sequence-length groups (0 = none)")->capture_default_str();
  app.add_flag("--no-exclude-seen", rc.no_exclude_seen, "rank against every item, including already-seen ones");
  app.add_option("--top-m", rc.top_m, "inspect-intents: nearest sequences listed per centroid")->capture_default_str();

  app.add_option("--users", rc.synthetic.users)->capture_default_str();
  app.add_option("--true-intents", rc.synthetic.intents, "gen-synthetic: number of item pools")->capture_default_str();
  app.add_option("--pool-size", rc.synthetic.pool_size)->capture_default_str();
  app.add_option("--min-length", rc.synthetic.min_length)->capture_default_str();
  app.add_option("--max-length", rc.synthetic.max_length)->capture_default_str();
  app.add_option("--pool-noise", rc.synthetic.cross_pool_noise, "gen-synthetic: cross-pool replacement probability")
      ->capture_default_str();
  app.add_option("--labels", rc.labels, "gen-synthetic: label file (default: <out>.labels)");
}

std::string echo_config(const RunConfig& rc) {
  std::ostringstream o;
  auto str = [&](const char* k, const std::string& v) { o << k << " = \"" << v << "\"\n"; };
  auto num = [&](const char* k, auto v) {
    if constexpr (std::is_floating_point_v<decltype(v)>) {
      // Shortest text that parses back to the same double.
      char buf[32];
      const auto r = std::to_chars(buf, buf + sizeof buf, v);
      o << k << " = " << std::string_view(buf, static_cast<std::size_t>(r.ptr - buf)) << '\n';
    } else {
      o << k << " = " << v << '\n';
    }
  };
  auto flag = [&](const char* k, bool v) { o << k << " = " << (v ? "true" : "false") << '\n'; };
  str("data", rc.data);
  flag("five-core", rc.five_core);
  num("seed", rc.seed);
  num("max-seq-len", rc.encoder.max_len);
  num("hidden-size", rc.encoder.hidden);
  num("blocks", rc.encoder.blocks);
  num("heads", rc.encoder.heads);
  num("dropout", rc.encoder.dropout);
  num("crop-ratio", rc.train.augment.crop_ratio);
  num("mask-ratio", rc.train.augment.mask_ratio);
  num("reorder-ratio", rc.train.augment.reorder_ratio);
  num("k", rc.train.k);
  num("lambda", rc.train.weights.lambda);
  num("beta", rc.train.weights.beta);
  num("temperature", rc.train.temperature);
  num("batch-size", rc.train.batch_size);
  num("lr", rc.train.adam.lr);
  num("epochs", rc.train.max_epochs);
  num("patience", rc.train.patience);
  flag("no-exclude-seen", rc.no_exclude_seen);
  return o.str();
}

std::vector<double> parse_ratios(const std::string& s) {
  std::vector<double> out;
  if (s.empty() || s == "none") return out;
  std::stringstream ss(s);
  for (std::string tok; std::getline(ss, tok, ',');) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != tok.size() || !(v >= 0.0)) throw ArgumentError("--noise-ratios: bad value '" + tok + "'");
    out.push_back(v);
  }
  return out;
}

SplitDataset load_split(const RunConfig& rc) {
  if (rc.data.empty()) throw ArgumentError("--data is required");
  InteractionDataset ds = load_interactions(rc.data);
  if (rc.five_core) ds = five_core_filter(ds);
  std::cerr << "data: " << ds.num_users() << " users, " << ds.vocab_size << " items, " << ds.num_actions()
            << " actions, avg length " << ds.average_length() << '\n';
  SplitDataset split = split_leave_one_out(ds);
  if (split.users.empty()) throw DataError("no user has the three interactions needed for a leave-one-out split");
  return split;
}

std::string checkpoint_file(const std::string& p) {
  if (p.empty()) throw ArgumentError("--checkpoint is required");
  return fs::is_directory(p) ? (fs::path(p) / "checkpoint.bin").string() : p;
}

std::string intents_file(const RunConfig& rc) {
  if (!rc.intents.empty()) return rc.intents;
  const fs::path ck = checkpoint_file(rc.checkpoint);
  return (ck.parent_path() / "intents.json").string();
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  if (!out) throw DataError("cannot write '" + p.string() + "'");
  out << text;
}

int cmd_train(const RunConfig& rc) {
  if (rc.out.empty()) throw ArgumentError("--out is required");
  TrainConfig cfg = rc.train;
  cfg.seed = rc.seed;
  cfg.exclude_seen = !rc.no_exclude_seen;
  cfg.validate();
  const SplitDataset split = load_split(rc);
  fs::create_directories(rc.out);
  const fs::path dir(rc.out);
  write_text(dir / "config.ini", echo_config(rc));

  std::cerr << "run: " << run_label(cfg.weights) << '\n';
  TrainResult res = train(split, rc.encoder, cfg, [](const EpochRecord& e) {
    std::cout << to_json(e).dump() << std::endl;
  });
  std::cout << summary_json(res.report).dump() << std::endl;

  save_checkpoint((dir / "checkpoint.bin").string(), res.params, res.adam, cfg.adam);
  save_intents((dir / "intents.json").string(), res.intents, split.user_ids);
  std::ofstream report(dir / "report.jsonl");
  write_report(report, res.report);
  std::ofstream timings(dir / "timings.jsonl");
  for (const auto& e : res.report.epochs) timings << timing_json(e).dump() << '\n';
  if (!report || !timings) throw DataError("failed writing reports to '" + rc.out + "'");
  return kOk;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

void print_metrics(std::ostream& o, const std::string& label, const EvalResult& r, const std::string& extra = "") {
  o << std::left << std::setw(14) << label;
  for (const auto& [k, v] : r.hr) o << "  HR@" << k << '=' << fmt(v);
  for (const auto& [k, v] : r.ndcg) o << "  NDCG@" << k << '=' << fmt(v);
  o << "  users=" << r.n_users << extra << '\n';
}

int cmd_evaluate(const RunConfig& rc) {
  const std::string ckpath = checkpoint_file(rc.checkpoint);
  const std::vector<double> ratios = parse_ratios(rc.noise_ratios);
  if (rc.n_groups < 0) throw ArgumentError("--n-groups must be >= 0");
  if (!(rc.noise_ratio >= 0.0)) throw ArgumentError("--noise-ratio must be >= 0");
  const Checkpoint ck = load_checkpoint(ckpath);
  const SplitDataset split = load_split(rc);
  if (ck.params.config.vocab_rows != split.vocab_size + 2)
    throw DataError("checkpoint vocabulary (" + std::to_string(ck.params.config.vocab_rows - 2) +
                    " items) does not match the data (" + std::to_string(split.vocab_size) + " items)");
  const EvalOptions opts{!rc.no_exclude_seen, default_cutoffs()};
  const Phase phase = rc.phase == "valid" ? Phase::valid : Phase::test;

  std::ostream& o = std::cout;
  o << "# checkpoint " << ckpath << "\n";
  if (rc.noise_ratio > 0.0 && phase == Phase::test)
    print_metrics(o, "test+noise", evaluate(ck.params, inject_test_noise(split, rc.noise_ratio, rc.seed), phase, opts),
                  "  noise=" + fmt(rc.noise_ratio));
  else
    print_metrics(o, rc.phase, evaluate(ck.params, split, phase, opts));

  if (phase == Phase::test && (!ratios.empty() || rc.n_groups > 0)) {
    const RobustnessReport rep =
        robustness_report(ck.params, split, ratios, static_cast<std::size_t>(rc.n_groups), rc.seed, opts);
    if (!rep.noise.empty()) {
      o << "# noise sweep (drop rate of NDCG@5 vs clean test)\n";
      for (const auto& row : rep.noise)
        print_metrics(o, "noise " + fmt(row.ratio), row.result, "  drop=" + fmt(row.ndcg5_drop));
    }
    if (!rep.groups.empty()) {
      o << "# length groups (full sequence length)\n";
      for (const auto& g : rep.groups)
        print_metrics(o, "group " + std::to_string(g.group), g.result,
                      "  length=" + std::to_string(g.min_length) + ".." + std::to_string(g.max_length));
    }
  }
  return kOk;
}

int cmd_inspect(const RunConfig& rc) {
  const LoadedIntents li = load_intents(intents_file(rc));
  const IntentModel& m = li.model;
  std::ostream& o = std::cout;
  o << "K=" << m.k() << " dim=" << m.centroids.cols() << " seed=" << m.seed << " distortion=" << fmt(m.distortion)
    << '\n';
  const auto sizes = m.cluster_sizes();
  std::size_t total = 0;
  o << "# cluster sizes\n";
  for (std::size_t c = 0; c < sizes.size(); ++c) {
    o << "cluster " << c << " size=" << sizes[c] << '\n';
    total += sizes[c];
  }
  o << "total " << total << '\n';

  o << "# centroid distances\n";
  for (int a = 0; a < m.k(); ++a) {
    for (int b = 0; b < m.k(); ++b) o << (b ? " " : "") << fmt((m.centroids.row(a) - m.centroids.row(b)).norm());
    o << '\n';
  }

  if (rc.data.empty()) {
    o << "# nearest sequences skipped (no --data)\n";
    return kOk;
  }
  if (rc.top_m < 1) throw ArgumentError("--top-m must be >= 1");
  const Checkpoint ck = load_checkpoint(checkpoint_file(rc.checkpoint));
  const SplitDataset split = load_split(rc);
  if (ck.params.config.vocab_rows != split.vocab_size + 2) throw DataError("checkpoint does not match the data");
  const TrainingSet ts = make_training_set(split, static_cast<std::size_t>(ck.params.config.max_len));
  const Matrix pooled = encode_pooled(ck.params, ts.padded);
  o << "# nearest training sequences per centroid (user distance)\n";
  for (int c = 0; c < m.k(); ++c) {
    o << "cluster " << c << ':';
    for (const auto& [u, d] : nearest_members(pooled, m.centroids.row(c), static_cast<std::size_t>(rc.top_m)))
      o << ' ' << split.user_ids[u] << ' ' << fmt(d);
    o << '\n';
  }
  return kOk;
}

int cmd_gen_synthetic(const RunConfig& rc) {
  if (rc.out.empty()) throw ArgumentError("--out is required");
  SyntheticConfig sc = rc.synthetic;
  sc.seed = rc.seed;
  const SyntheticCorpus corpus = generate_synthetic(sc);
  std::ofstream out(rc.out);
  if (!out) throw DataError("cannot write '" + rc.out + "'");
  write_synthetic(out, corpus);
  const std::string labels = rc.labels.empty() ? rc.out + ".labels" : rc.labels;
  std::ofstream lab(labels);
  if (!lab) throw DataError("cannot write '" + labels + "'");
  write_synthetic_labels(lab, corpus);
  std::cerr << "wrote " << corpus.sequences.size() << " users to " << rc.out << " and labels to " << labels << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Intent contrastive learning for sequential recommendation"};
  app.set_config("--config", "", "key=value file with option defaults");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);
  app.fallthrough();
  RunConfig rc;
  bind_options(app, rc);
  auto* train_cmd = app.add_subcommand("train", "run EM training and write checkpoint, intents and report to --out");
  auto* eval_cmd = app.add_subcommand("evaluate", "full-ranking HR/NDCG of a checkpoint, with noise and length sweeps");
  auto* inspect_cmd = app.add_subcommand("inspect-intents", "cluster sizes, centroid distances, nearest sequences");
  auto* gen_cmd = app.add_subcommand("gen-synthetic", "write a synthetic corpus of disjoint intent pools");
  for (auto* sub : {train_cmd, eval_cmd, inspect_cmd, gen_cmd}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    std::cerr << "# resolved config\n" << echo_config(rc);
    if (train_cmd->parsed()) return cmd_train(rc);
    if (eval_cmd->parsed()) return cmd_evaluate(rc);
    if (inspect_cmd->parsed()) return cmd_inspect(rc);
    return cmd_gen_synthetic(rc);
  } catch (const ArgumentError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return kUsage;
  } catch (const StateError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  }
}
