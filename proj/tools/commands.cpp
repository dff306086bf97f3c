#include "commands.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iostream>
#include <mutex>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "ttc/error.hpp"
#include "ttc/numeric.hpp"

namespace ttc::cli {
namespace fs = std::filesystem;

namespace {

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot open " + path.string() + " for writing");
  return out;
}

void write_json(const fs::path& path, const nlohmann::json& doc) {
  auto out = open_out(path);
  out << doc.dump(2) << '\n';
}

std::pair<double, double> mean_std(const std::vector<double>& xs) {
  if (xs.empty()) return {0.0, 0.0};
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  return {mean, xs.size() > 1 ? std::sqrt(var / static_cast<double>(xs.size() - 1)) : 0.0};
}

std::vector<CorruptionKind> parse_corruption_list(const std::string& list) {
  if (list == "all") {
    auto all = benchmark_corruptions();
    return {all.begin(), all.end()};
  }
  std::vector<CorruptionKind> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_corruption_kind(item));
  if (out.empty()) throw InvalidInput("--corruption: empty list");
  return out;
}

std::vector<std::uint64_t> seed_list(std::uint64_t base, std::size_t count) {
  std::vector<std::uint64_t> seeds(count);
  std::iota(seeds.begin(), seeds.end(), base);
  return seeds;
}

std::vector<SeedContext> prepare_seeds(const std::vector<std::uint64_t>& seeds,
                                       const BenchmarkShape& shape) {
  std::vector<std::optional<SeedContext>> slots(seeds.size());
  std::atomic<std::size_t> next{0};
  std::mutex error_mu;
  std::exception_ptr error;
  const std::size_t workers =
      std::min<std::size_t>(seeds.size(), std::max(1u, std::thread::hardware_concurrency()));
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < seeds.size(); i = next++) {
        try {
          slots[i].emplace(prepare_seed(seeds[i], shape));
        } catch (...) {
          std::lock_guard lock(error_mu);
          if (!error) error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
  std::vector<SeedContext> contexts;
  contexts.reserve(slots.size());
  for (auto& s : slots) contexts.push_back(std::move(*s));
  return contexts;
}

/// Flags shared by every command that runs adaptation.
struct AdaptFlags {
  std::string strategy = "tent";
  std::string config_path;
  double lr = 0.0;
  double tau = 0.0;
  std::size_t q = 0;
  std::string optimizer;
  double filter_threshold = 0.0;
  bool no_rla = false, no_wa = false, no_ga = false;
  bool rla = false, wa = false, ga = false;

  CLI::Option* lr_opt = nullptr;
  CLI::Option* tau_opt = nullptr;
  CLI::Option* q_opt = nullptr;
  CLI::Option* opt_opt = nullptr;
  CLI::Option* filter_opt = nullptr;
  CLI::Option* strategy_opt = nullptr;

  void attach(CLI::App& app, bool with_strategy) {
    if (with_strategy) {
      strategy_opt = app.add_option("--strategy", strategy,
                                    "source | norm | tent | tent-filtered | ttc");
    }
    app.add_option("--config", config_path, "AdaptationConfig JSON; flags override it");
    lr_opt = app.add_option("--lr", lr, "learning rate");
    tau_opt = app.add_option("--tau", tau, "entropy weight exponent");
    q_opt = app.add_option("--q", q, "gradient accumulation window");
    opt_opt = app.add_option("--optimizer", optimizer, "sgd | adam");
    filter_opt = app.add_option("--filter-threshold", filter_threshold,
                                "entropy cutoff for tent-filtered");
    app.add_flag("--no-rla", no_rla, "disable robust label assignment");
    app.add_flag("--no-wa", no_wa, "disable weight adjustment");
    app.add_flag("--no-ga", no_ga, "disable gradient accumulation");
    app.add_flag("--rla", rla, "enable robust label assignment");
    app.add_flag("--wa", wa, "enable weight adjustment");
    app.add_flag("--ga", ga, "enable gradient accumulation");
  }

  AdaptationConfig build(const std::string& strategy_name_override = {}) const {
    AdaptationConfig cfg;
    if (!config_path.empty()) {
      std::ifstream in(config_path, std::ios::binary);
      if (!in) throw InvalidInput("--config: cannot read " + config_path);
      std::ostringstream buf;
      buf << in.rdbuf();
      const std::string text = buf.str();
      cfg = config_from_json(std::string_view(text));
    }
    const bool strategy_given = strategy_opt != nullptr && strategy_opt->count() > 0;
    if (!strategy_name_override.empty()) {
      cfg.strategy = parse_strategy(strategy_name_override);
    } else if (strategy_given || config_path.empty()) {
      cfg.strategy = parse_strategy(strategy);
    }
    if (lr_opt->count() > 0) cfg.lr = lr;
    if (tau_opt->count() > 0) cfg.tau = tau;
    if (q_opt->count() > 0) cfg.accumulation_q = q;
    if (opt_opt->count() > 0) cfg.optimizer = parse_optimizer(optimizer);
    if (filter_opt->count() > 0) cfg.filter_threshold = filter_threshold;
    if (rla) cfg.rla_enabled = true;
    if (wa) cfg.wa_enabled = true;
    if (ga) cfg.ga_enabled = true;
    if (no_rla) cfg.rla_enabled = false;
    if (no_wa) cfg.wa_enabled = false;
    if (no_ga) cfg.ga_enabled = false;
    cfg.validate();
    return cfg;
  }
};

struct ShapeFlags {
  BenchmarkShape shape;
  void attach(CLI::App& app, bool with_train) {
    app.add_option("--k", shape.num_classes, "number of classes")->check(CLI::Range(2, 7));
    app.add_option("--n-test", shape.n_test, "test stream length")->check(CLI::PositiveNumber);
    if (with_train) {
      app.add_option("--n-train", shape.n_train, "training set size")->check(CLI::PositiveNumber);
      app.add_option("--epochs", shape.epochs, "source training epochs");
    }
  }
};

void check_severity(int severity) {
  if (severity < 1 || severity > 5) throw InvalidInput("--severity: must be in 1..5");
}

void check_batch_size(std::size_t n) {
  if (n < 2) throw InvalidInput("--batch-size: must be >= 2 (batch statistics need two samples)");
}

// ---------------------------------------------------------------------------

int cmd_train_source(std::uint64_t seed, const BenchmarkShape& shape, const fs::path& out_dir) {
  if (shape.epochs == 0) std::cerr << "warning: --epochs 0 writes an untrained checkpoint\n";
  const auto ctx = prepare_seed(seed, shape);
  save_checkpoint(ctx.source, out_dir / "source.json");
  auto log = open_out(out_dir / "train_log.csv");
  log << "epoch,mean_loss,train_accuracy\n";
  for (const auto& e : ctx.log) {
    log << e.epoch << ',' << format_real(e.mean_loss) << ',' << format_real(e.train_accuracy)
        << '\n';
  }
  std::cout << "checkpoint " << (out_dir / "source.json").string() << " clean_accuracy "
            << format_real(ctx.clean_accuracy) << '\n';
  return kOk;
}

int cmd_adapt(const fs::path& checkpoint, const AdaptationConfig& cfg, const Corruption& corruption,
              std::size_t batch_size, std::uint64_t seed, const BenchmarkShape& shape,
              const fs::path& out_dir) {
  if (!fs::exists(checkpoint)) {
    std::cerr << "error: checkpoint not found: " << checkpoint.string() << '\n';
    return kInputError;
  }
  const auto net = load_checkpoint(checkpoint);
  const auto test = generate_dataset(net.num_classes(), shape.n_test, derive_seed(seed, 2));
  const auto report = stream_eval(net, test, corruption, protocol_for(seed, batch_size), cfg, seed);
  const auto stem = report_file_stem(report);
  write_json(out_dir / (stem + ".json"), report_to_json(report));
  auto csv = open_out(out_dir / (stem + ".csv"));
  write_per_batch_csv(csv, report);
  std::cout << stem << " accuracy " << format_real(report.accuracy) << '\n';
  return kOk;
}

int cmd_sweep(const std::vector<std::string>& strategies, const AdaptFlags& flags,
              const std::vector<CorruptionKind>& corruptions, int severity, std::size_t batch_size,
              const std::vector<std::uint64_t>& seeds, const BenchmarkShape& shape,
              const fs::path& out_dir) {
  const auto contexts = prepare_seeds(seeds, shape);
  std::vector<Cell> cells;
  for (const auto& s : strategies) {
    const auto cfg = flags.build(s);
    for (auto kind : corruptions) {
      for (std::size_t c = 0; c < contexts.size(); ++c) {
        cells.push_back({cfg, {kind, severity}, batch_size, c});
      }
    }
  }
  const auto reports = run_cells(contexts, cells);
  auto summary = open_out(out_dir / "summary.csv");
  summary << "strategy,corruption,severity,seed,accuracy\n";
  for (const auto& r : reports) {
    write_json(out_dir / "reports" / (report_file_stem(r) + ".json"), report_to_json(r));
    summary << r.strategy << ',' << r.corruption << ',' << r.severity << ',' << r.seed << ','
            << format_real(r.accuracy) << '\n';
  }
  std::cout << reports.size() << " reports written to " << (out_dir / "reports").string() << '\n';
  return kOk;
}

int cmd_sweep_batch_size(const std::vector<std::size_t>& sizes, const AdaptationConfig& base,
                         const std::vector<CorruptionKind>& corruptions, int severity,
                         const std::vector<std::uint64_t>& seeds, const BenchmarkShape& shape,
                         const fs::path& out_dir) {
  const auto contexts = prepare_seeds(seeds, shape);
  const auto rows = sweep_batch_size(contexts, sizes, corruptions, severity, base);
  auto out = open_out(out_dir / "batch_size_sweep.csv");
  out << "strategy,batch_size,ga,accuracy_mean,accuracy_std\n";
  for (const auto& r : rows) {
    out << r.strategy << ',' << r.batch_size << ',' << (r.ga ? 1 : 0) << ','
        << format_real(r.accuracy_mean) << ',' << format_real(r.accuracy_std) << '\n';
  }
  std::cout << rows.size() << " rows written to " << (out_dir / "batch_size_sweep.csv").string()
            << '\n';
  return kOk;
}

int cmd_sweep_tau(const std::vector<double>& taus, const AdaptationConfig& base,
                  const std::vector<CorruptionKind>& corruptions, int severity,
                  std::size_t batch_size, const std::vector<std::uint64_t>& seeds,
                  const BenchmarkShape& shape, const fs::path& out_dir) {
  const auto contexts = prepare_seeds(seeds, shape);
  const auto rows = sweep_tau(contexts, taus, corruptions, severity, batch_size, base);
  auto out = open_out(out_dir / "tau_sweep.csv");
  out << "tau,accuracy_mean,accuracy_std,non_finite\n";
  std::size_t bad = 0;
  for (const auto& r : rows) {
    out << format_real(r.tau) << ',' << format_real(r.accuracy_mean) << ','
        << format_real(r.accuracy_std) << ',' << r.non_finite << '\n';
    bad += r.non_finite;
  }
  std::cout << rows.size() << " rows written to " << (out_dir / "tau_sweep.csv").string() << '\n';
  return bad == 0 ? kOk : kPropertyViolation;
}

int cmd_lemma_check(const std::vector<std::size_t>& ks, std::size_t steps, double lr,
                    std::size_t random_starts, double random_lr, std::uint64_t seed,
                    const fs::path& out_dir) {
  if (!(lr > 0.0)) throw InvalidInput("--lr: must be positive");
  if (!(random_lr > 0.0)) throw InvalidInput("--random-lr: must be positive");
  bool all_ok = true;
  for (std::size_t k : ks) {
    if (k < 2) throw InvalidInput("--k: class counts must be >= 2");
    // Reference start: 0.6 on the first class, the rest shared evenly.
    std::vector<double> p0(k, 0.4 / static_cast<double>(k - 1));
    p0[0] = 0.6;
    const auto traj = simulate_entropy_descent(p0, lr, steps);
    bool monotone = true;
    for (std::size_t s = 1; s < traj.size(); ++s) {
      if (traj[s][0] < traj[s - 1][0]) monotone = false;
    }
    const double final_max = *std::max_element(traj.back().begin(), traj.back().end());
    auto csv = open_out(out_dir / ("lemma_k" + std::to_string(k) + ".csv"));
    write_trajectory_csv(csv, traj);
    std::cout << "k=" << k << " monotone=" << (monotone ? "yes" : "no")
              << " final_max=" << format_real(final_max) << '\n';
    all_ok = all_ok && monotone;
  }

  // Random starts: one step from Dirichlet(1) draws with K in 2..100.
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick_k(2, 100);
  std::exponential_distribution<double> expo(1.0);
  std::size_t violations = 0;
  for (std::size_t r = 0; r < random_starts; ++r) {
    const std::size_t k = pick_k(rng);
    std::vector<double> p(k);
    double total = 0.0;
    for (double& v : p) {
      v = expo(rng) + 1e-12;
      total += v;
    }
    for (double& v : p) v /= total;
    const auto m = argmax(p);
    const auto traj = simulate_entropy_descent(p, random_lr, 1);
    if (traj[1][m] < traj[0][m]) ++violations;
  }
  std::cout << "random_starts=" << random_starts << " violations=" << violations << '\n';
  all_ok = all_ok && violations == 0;
  std::cout << (all_ok ? "PASS" : "FAIL") << '\n';
  return all_ok ? kOk : kPropertyViolation;
}

int cmd_density(const AdaptationConfig& a, const AdaptationConfig& b, const Corruption& corruption,
                std::size_t batch_size, std::uint64_t seed, const BenchmarkShape& shape,
                const fs::path& out_dir) {
  const auto ctx = prepare_seed(seed, shape);
  const auto result = density(ctx, a, b, corruption, batch_size);
  const std::string name_a(strategy_name(a.strategy));
  const std::string name_b(strategy_name(b.strategy));
  auto hist = open_out(out_dir / "density_hist.csv");
  hist << "series,channel,bin,lo,hi,density\n";
  const std::array<std::string, 3> series = {"reference", "a:" + name_a, "b:" + name_b};
  for (std::size_t ch = 0; ch < result.histograms.size(); ++ch) {
    const auto [lo, hi] = result.ranges[ch];
    for (std::size_t s = 0; s < 3; ++s) {
      const auto& h = result.histograms[ch][s];
      const double width = (hi - lo) / static_cast<double>(h.size());
      for (std::size_t bin = 0; bin < h.size(); ++bin) {
        hist << series[s] << ',' << ch << ',' << bin << ','
             << format_real(lo + width * static_cast<double>(bin)) << ','
             << format_real(lo + width * static_cast<double>(bin + 1)) << ',' << format_real(h[bin])
             << '\n';
      }
    }
  }
  auto ov = open_out(out_dir / "density_overlap.csv");
  ov << "channel,a_vs_b,a_vs_reference,b_vs_reference\n";
  std::array<double, 3> mean{};
  for (std::size_t ch = 0; ch < result.overlaps.size(); ++ch) {
    const auto& o = result.overlaps[ch];
    ov << ch << ',' << format_real(o[0]) << ',' << format_real(o[1]) << ',' << format_real(o[2])
       << '\n';
    for (std::size_t i = 0; i < 3; ++i) mean[i] += o[i] / static_cast<double>(result.overlaps.size());
  }
  std::cout << "mean overlap a_vs_b " << format_real(mean[0]) << " a_vs_reference "
            << format_real(mean[1]) << " b_vs_reference " << format_real(mean[2]) << '\n';
  return kOk;
}

}  // namespace

// ---------------------------------------------------------------------------

SeedContext prepare_seed(std::uint64_t seed, const BenchmarkShape& shape) {
  const auto train = generate_dataset(shape.num_classes, shape.n_train, derive_seed(seed, 4));
  TrainOptions opts;
  opts.epochs = shape.epochs;
  auto trained = train_source(train, opts, seed);
  auto test = generate_dataset(shape.num_classes, shape.n_test, derive_seed(seed, 2));
  const double clean = accuracy(predict(trained.net, test.inputs), test.labels);
  return SeedContext{seed, std::move(trained.net), std::move(test), clean, std::move(trained.log)};
}

StreamProtocol protocol_for(std::uint64_t seed, std::size_t batch_size) {
  return StreamProtocol{batch_size, derive_seed(seed, 3)};
}

std::vector<RunReport> run_cells(const std::vector<SeedContext>& contexts,
                                 const std::vector<Cell>& cells, std::size_t workers) {
  std::vector<RunReport> reports(cells.size());
  std::atomic<std::size_t> next{0};
  std::mutex error_mu;
  std::exception_ptr error;
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, std::max<std::size_t>(cells.size(), 1));
  auto work = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      try {
        const auto& cell = cells[i];
        const auto& ctx = contexts.at(cell.context);
        reports[i] = stream_eval(ctx.source, ctx.test, cell.corruption,
                                 protocol_for(ctx.seed, cell.batch_size), cell.config, ctx.seed);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
  return reports;
}

std::vector<BatchSizeRow> sweep_batch_size(const std::vector<SeedContext>& contexts,
                                           const std::vector<std::size_t>& batch_sizes,
                                           const std::vector<CorruptionKind>& corruptions,
                                           int severity, const AdaptationConfig& base) {
  struct Variant {
    Strategy strategy;
    bool ga;
  };
  const std::vector<Variant> variants = {
      {Strategy::Tent, false}, {Strategy::Tent, true}, {Strategy::Ttc, false}, {Strategy::Ttc, true}};
  std::vector<Cell> cells;
  for (std::size_t n : batch_sizes) {
    check_batch_size(n);
    for (const auto& v : variants) {
      AdaptationConfig cfg = base;
      cfg.strategy = v.strategy;
      cfg.ga_enabled = v.ga;
      for (auto kind : corruptions) {
        for (std::size_t c = 0; c < contexts.size(); ++c) {
          cells.push_back({cfg, {kind, severity}, n, c});
        }
      }
    }
  }
  const auto reports = run_cells(contexts, cells);
  std::vector<BatchSizeRow> rows;
  std::size_t pos = 0;
  for (std::size_t n : batch_sizes) {
    for (const auto& v : variants) {
      std::vector<double> per_seed(contexts.size(), 0.0);
      for (std::size_t k = 0; k < corruptions.size(); ++k) {
        for (std::size_t c = 0; c < contexts.size(); ++c) {
          per_seed[c] += reports[pos++].accuracy / static_cast<double>(corruptions.size());
        }
      }
      const auto [mean, sd] = mean_std(per_seed);
      rows.push_back({std::string(strategy_name(v.strategy)), n, v.ga, mean, sd});
    }
  }
  return rows;
}

std::vector<TauRow> sweep_tau(const std::vector<SeedContext>& contexts,
                              const std::vector<double>& taus,
                              const std::vector<CorruptionKind>& corruptions, int severity,
                              std::size_t batch_size, const AdaptationConfig& base) {
  std::vector<Cell> cells;
  for (double tau : taus) {
    AdaptationConfig cfg = base;
    cfg.strategy = Strategy::Ttc;
    cfg.tau = tau;
    cfg.validate();
    for (auto kind : corruptions) {
      for (std::size_t c = 0; c < contexts.size(); ++c) {
        cells.push_back({cfg, {kind, severity}, batch_size, c});
      }
    }
  }
  const auto reports = run_cells(contexts, cells);
  std::vector<TauRow> rows;
  std::size_t pos = 0;
  for (double tau : taus) {
    TauRow row;
    row.tau = tau;
    std::vector<double> per_seed(contexts.size(), 0.0);
    for (std::size_t k = 0; k < corruptions.size(); ++k) {
      for (std::size_t c = 0; c < contexts.size(); ++c) {
        const auto& r = reports[pos++];
        if (!std::isfinite(r.accuracy)) ++row.non_finite;
        per_seed[c] += r.accuracy / static_cast<double>(corruptions.size());
      }
    }
    std::tie(row.accuracy_mean, row.accuracy_std) = mean_std(per_seed);
    rows.push_back(row);
  }
  return rows;
}

DensityResult density(const SeedContext& ctx, const AdaptationConfig& a, const AdaptationConfig& b,
                      const Corruption& corruption, std::size_t batch_size, std::size_t bins) {
  const auto protocol = protocol_for(ctx.seed, batch_size);
  StreamOptions opts;
  opts.collect_features = true;
  AdaptationConfig ref_cfg;
  ref_cfg.strategy = Strategy::Source;
  const auto ref = stream_eval(ctx.source, ctx.test, Corruption{CorruptionKind::None, 0}, protocol,
                               ref_cfg, ctx.seed, opts);
  const auto ra = stream_eval(ctx.source, ctx.test, corruption, protocol, a, ctx.seed, opts);
  const auto rb = stream_eval(ctx.source, ctx.test, corruption, protocol, b, ctx.seed, opts);

  DensityResult out;
  const std::size_t channels = ctx.source.feature_dim();
  const std::size_t n = ref.features.rows();
  for (std::size_t ch = 0; ch < channels; ++ch) {
    std::array<std::vector<double>, 3> cols;
    const std::array<const Matrix*, 3> sources = {&ref.features, &ra.features, &rb.features};
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t s = 0; s < 3; ++s) {
      cols[s].resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        cols[s][i] = (*sources[s])(i, ch);
        lo = std::min(lo, cols[s][i]);
        hi = std::max(hi, cols[s][i]);
      }
    }
    std::array<std::vector<double>, 3> hists;
    for (std::size_t s = 0; s < 3; ++s) hists[s] = histogram(cols[s], lo, hi, bins);
    out.overlaps.push_back({histogram_overlap(hists[1], hists[2]),
                            histogram_overlap(hists[1], hists[0]),
                            histogram_overlap(hists[2], hists[0])});
    out.histograms.push_back(std::move(hists));
    out.ranges.emplace_back(lo, hi);
  }
  return out;
}

std::string report_file_stem(const RunReport& report) {
  return "report_" + report.strategy + "_" + report.corruption + "_s" +
         std::to_string(report.severity) + "_seed" + std::to_string(report.seed);
}

int run(int argc, char** argv) {
  CLI::App app{"Entropy-based test-time adaptation laboratory"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  std::string out_dir = "out";

  // train-source
  auto* train = app.add_subcommand("train-source", "train a source model on clean signals");
  ShapeFlags train_shape;
  train_shape.attach(*train, true);
  train->add_option("--seed", seed, "random seed");
  train->add_option("--out", out_dir, "output directory");

  // adapt
  auto* adapt = app.add_subcommand("adapt", "stream one corrupted test set through a strategy");
  AdaptFlags adapt_flags;
  adapt_flags.attach(*adapt, true);
  ShapeFlags adapt_shape;
  adapt_shape.attach(*adapt, false);
  std::string checkpoint = "out/source.json";
  std::string corruption = "gaussian_noise";
  int severity = 5;
  std::size_t batch_size = 100;
  adapt->add_option("--checkpoint", checkpoint, "source checkpoint");
  adapt->add_option("--corruption", corruption, "corruption kind or 'none'");
  adapt->add_option("--severity", severity, "1..5");
  adapt->add_option("--batch-size", batch_size, "stream batch size");
  adapt->add_option("--seed", seed, "random seed");
  adapt->add_option("--out", out_dir, "output directory");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "strategies x corruptions x seeds grid");
  AdaptFlags sweep_flags;
  sweep_flags.attach(*sweep, false);
  ShapeFlags sweep_shape;
  sweep_shape.attach(*sweep, true);
  std::vector<std::string> strategies = {"source", "norm", "tent", "tent-filtered", "ttc"};
  std::string corruption_list = "all";
  std::size_t seeds = 5;
  sweep->add_option("--strategies", strategies, "strategy names")->delimiter(',');
  sweep->add_option("--corruption", corruption_list, "comma list or 'all'");
  sweep->add_option("--severity", severity, "1..5");
  sweep->add_option("--batch-size", batch_size, "stream batch size");
  sweep->add_option("--seed", seed, "first seed");
  sweep->add_option("--seeds", seeds, "number of consecutive seeds")->check(CLI::PositiveNumber);
  sweep->add_option("--out", out_dir, "output directory");

  // sweep-batch-size
  auto* sweep_bs = app.add_subcommand("sweep-batch-size", "TENT/TTC with and without GA per batch size");
  AdaptFlags bs_flags;
  bs_flags.attach(*sweep_bs, false);
  ShapeFlags bs_shape;
  bs_shape.attach(*sweep_bs, true);
  std::vector<std::size_t> batch_sizes = {2, 10, 50, 100};
  sweep_bs->add_option("--batch-sizes", batch_sizes, "batch sizes (>= 2)")->delimiter(',');
  sweep_bs->add_option("--corruption", corruption_list, "comma list or 'all'");
  sweep_bs->add_option("--severity", severity, "1..5");
  sweep_bs->add_option("--seed", seed, "first seed");
  sweep_bs->add_option("--seeds", seeds, "number of consecutive seeds")->check(CLI::PositiveNumber);
  sweep_bs->add_option("--out", out_dir, "output directory");

  // sweep-tau
  auto* sweep_t = app.add_subcommand("sweep-tau", "TTC accuracy per weight exponent");
  AdaptFlags tau_flags;
  tau_flags.attach(*sweep_t, false);
  ShapeFlags tau_shape;
  tau_shape.attach(*sweep_t, true);
  std::vector<double> taus = {0.05, 0.1, 0.5, 1.0, 5.0, 10.0};
  sweep_t->add_option("--taus", taus, "tau values")->delimiter(',');
  sweep_t->add_option("--corruption", corruption_list, "comma list or 'all'");
  sweep_t->add_option("--severity", severity, "1..5");
  sweep_t->add_option("--batch-size", batch_size, "stream batch size");
  sweep_t->add_option("--seed", seed, "first seed");
  sweep_t->add_option("--seeds", seeds, "number of consecutive seeds")->check(CLI::PositiveNumber);
  sweep_t->add_option("--out", out_dir, "output directory");

  // lemma-check
  auto* lemma = app.add_subcommand("lemma-check", "entropy descent raises the largest probability");
  std::vector<std::size_t> ks = {2, 10, 100};
  std::size_t steps = 5000;
  double lemma_lr = 0.05;
  std::size_t random_starts = 1000;
  double random_lr = 0.01;
  lemma->add_option("--k", ks, "class counts")->delimiter(',');
  lemma->add_option("--steps", steps, "descent steps per trajectory");
  lemma->add_option("--lr", lemma_lr, "logit step size");
  lemma->add_option("--random", random_starts, "random one-step checks");
  lemma->add_option("--random-lr", random_lr, "step size of the random checks");
  lemma->add_option("--seed", seed, "random seed");
  lemma->add_option("--out", out_dir, "output directory");

  // density
  auto* dens = app.add_subcommand("density", "penultimate feature histograms of two strategies");
  AdaptFlags dens_flags;
  dens_flags.attach(*dens, false);
  ShapeFlags dens_shape;
  dens_shape.attach(*dens, true);
  std::string strategy_a = "tent";
  std::string strategy_b = "ttc";
  dens->add_option("--strategy-a", strategy_a, "first strategy");
  dens->add_option("--strategy-b", strategy_b, "second strategy");
  dens->add_option("--corruption", corruption, "corruption kind");
  dens->add_option("--severity", severity, "1..5");
  dens->add_option("--batch-size", batch_size, "stream batch size");
  dens->add_option("--seed", seed, "random seed");
  dens->add_option("--out", out_dir, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInputError;
  }

  try {
    if (train->parsed()) return cmd_train_source(seed, train_shape.shape, out_dir);
    if (adapt->parsed()) {
      check_batch_size(batch_size);
      const Corruption c{parse_corruption_kind(corruption), severity};
      if (c.kind != CorruptionKind::None) check_severity(severity);
      return cmd_adapt(checkpoint, adapt_flags.build(), c, batch_size, seed, adapt_shape.shape,
                       out_dir);
    }
    if (sweep->parsed()) {
      check_batch_size(batch_size);
      check_severity(severity);
      for (const auto& s : strategies) parse_strategy(s);
      return cmd_sweep(strategies, sweep_flags, parse_corruption_list(corruption_list), severity,
                       batch_size, seed_list(seed, seeds), sweep_shape.shape, out_dir);
    }
    if (sweep_bs->parsed()) {
      check_severity(severity);
      for (auto n : batch_sizes) check_batch_size(n);
      return cmd_sweep_batch_size(batch_sizes, bs_flags.build("tent"),
                                  parse_corruption_list(corruption_list), severity,
                                  seed_list(seed, seeds), bs_shape.shape, out_dir);
    }
    if (sweep_t->parsed()) {
      check_severity(severity);
      check_batch_size(batch_size);
      return cmd_sweep_tau(taus, tau_flags.build("ttc"), parse_corruption_list(corruption_list),
                           severity, batch_size, seed_list(seed, seeds), tau_shape.shape, out_dir);
    }
    if (lemma->parsed()) {
      return cmd_lemma_check(ks, steps, lemma_lr, random_starts, random_lr, seed, out_dir);
    }
    if (dens->parsed()) {
      check_batch_size(batch_size);
      check_severity(severity);
      return cmd_density(dens_flags.build(strategy_a), dens_flags.build(strategy_b),
                         {parse_corruption_kind(corruption), severity}, batch_size, seed,
                         dens_shape.shape, out_dir);
    }
  } catch (const TrainingDiverged& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kTrainingFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kInputError;
  }
  return kInputError;
}

}  // namespace ttc::cli
