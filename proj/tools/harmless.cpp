// harmless: ingest, featurize, simulate, report, serve.

#include <algorithm>
#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "harmless/config.hpp"
#include "harmless/corpus.hpp"
#include "harmless/features.hpp"
#include "harmless/service_http.hpp"
#include "harmless/simharness.hpp"
#include "harmless/store.hpp"
#include "harmless/synthetic.hpp"

namespace fs = std::filesystem;
using namespace harmless;

namespace {

std::vector<int> parse_targets(const std::string& s) {
  std::vector<int> out;
  for (const auto& part : text::split(s, ',')) {
    const auto t = text::trim(part);
    if (t.empty()) continue;
    int v = 0;
    try {
      std::size_t used = 0;
      v = std::stoi(t, &used);
      if (used != t.size()) throw std::invalid_argument(t);
    } catch (const std::exception&) {
      throw ArgumentError("--targets: '" + t + "' is not an integer");
    }
    if (v < 1 || v > 100) throw ArgumentError("--targets: values must lie in 1..100");
    out.push_back(v);
  }
  if (out.empty()) throw ArgumentError("--targets: empty list");
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<fs::path> run_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IngestError("not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.rfind("run_", 0) == 0 && e.path().extension() == ".csv") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw IngestError("no run_*.csv files in " + dir.string());
  return out;
}

std::vector<sim::RunMetrics> load_runs(const fs::path& dir, const std::vector<int>& targets) {
  std::vector<sim::RunMetrics> runs;
  for (const auto& p : run_files(dir)) runs.push_back(sim::read_run_csv(p, targets));
  return runs;
}

std::string format_ratio(const sim::Cell& c) {
  std::ostringstream out;
  out << std::lround(c.median * 100.0) << " (" << std::lround(c.iqr * 100.0) << ")";
  return out.str();
}

std::atomic<httplib::Server*> g_server{nullptr};

void on_signal(int) {
  if (auto* s = g_server.load()) s->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HARMLESS: active-learning vulnerability inspection"};
  app.require_subcommand(1);

  // ingest
  auto* ingest = app.add_subcommand("ingest", "load a manifest CSV into a corpus store");
  std::string manifest, store_out;
  ingest->add_option("--manifest", manifest, "manifest CSV")->required();
  ingest->add_option("--out", store_out, "store directory")->required();

  // featurize
  auto* featurize_cmd = app.add_subcommand("featurize", "build a feature matrix from a store");
  std::string f_store, f_mode = "text", f_out;
  std::size_t f_m = kDefaultVocabularySize;
  featurize_cmd->add_option("--store", f_store)->required();
  featurize_cmd->add_option("--mode", f_mode, "text|hybrid|metrics")->capture_default_str();
  featurize_cmd->add_option("--m", f_m, "vocabulary size")->capture_default_str();
  featurize_cmd->add_option("--out", f_out, "feature directory")->required();

  // simulate
  auto* simulate = app.add_subcommand("simulate", "repeated simulations against ground truth");
  std::string s_store, s_features, s_category = "All", s_config, s_out, s_treatment = "engine",
                                   s_targets = "60,70,80,85,90,95,99,100";
  double s_error = 0.0;
  int s_repeats = 30;
  std::uint64_t s_seed = 0;
  unsigned s_threads = 0;
  simulate->add_option("--store", s_store)->required();
  simulate->add_option("--features", s_features, "required for --treatment engine");
  simulate->add_option("--category", s_category)->capture_default_str();
  simulate->add_option("--config", s_config, "key=value session config");
  simulate->add_option("--error-rate", s_error, "false-negative rate E_R")->capture_default_str();
  simulate->add_option("--repeats", s_repeats)->capture_default_str();
  simulate->add_option("--seed", s_seed)->capture_default_str();
  simulate->add_option("--treatment", s_treatment, "engine|random|crash")->capture_default_str();
  simulate->add_option("--targets", s_targets)->capture_default_str();
  simulate->add_option("--threads", s_threads, "0 = all cores")->capture_default_str();
  simulate->add_option("--out", s_out)->required();

  // report
  auto* report = app.add_subcommand("report", "summarize run CSVs");
  std::string r_runs, r_baseline, r_targets = "60,70,80,85,90,95,99,100", r_out;
  std::optional<double> r_error;
  report->add_option("--runs", r_runs)->required();
  report->add_option("--targets", r_targets)->capture_default_str();
  report->add_option("--baseline", r_baseline, "run directory used for relative recall/cost");
  report->add_option("--error-rate", r_error, "E_R of --runs, to report false-negative coverage");
  report->add_option("--out", r_out, "summary CSV path");

  // serve
  auto* serve = app.add_subcommand("serve", "HTTP review service");
  std::string v_store, v_features, v_host = "127.0.0.1", v_data;
  int v_port = 8080;
  serve->add_option("--store", v_store)->required();
  serve->add_option("--features", v_features)->required();
  serve->add_option("--port", v_port)->capture_default_str();
  serve->add_option("--host", v_host)->capture_default_str();
  serve->add_option("--data-dir", v_data, "session logs (default <store>/sessions)");

  // synthesize
  auto* synth = app.add_subcommand("synthesize", "write a seeded synthetic corpus with manifest");
  std::string y_out;
  synthetic::Options y_opt;
  synth->add_option("--out", y_out)->required();
  synth->add_option("--documents", y_opt.documents)->capture_default_str();
  synth->add_option("--positive-rate", y_opt.positive_rate)->capture_default_str();
  synth->add_option("--seed", y_opt.seed)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*ingest) {
      const auto corpus = load_corpus(manifest);
      save_store(corpus, store_out);
      std::cout << "ingested " << corpus.size() << " documents, " << corpus.positives("All").size()
                << " vulnerable\n";
    } else if (*featurize_cmd) {
      if (f_m == 0) throw ArgumentError("--m must be at least 1");
      const auto corpus = load_store(f_store);
      const auto fm = featurize(corpus, parse_feature_mode(f_mode), f_m);
      save_features(fm, f_out);
      std::cout << "features: " << fm.size() << " x " << fm.dim() << " (" << to_string(fm.mode) << ")\n";
    } else if (*simulate) {
      const auto targets = parse_targets(s_targets);
      const auto corpus = load_store(s_store);
      SessionConfig config = s_config.empty() ? SessionConfig{} : load_config_file(s_config);
      config.seed = s_seed;
      OracleConfig oracle{s_error, 0};
      oracle.validate();
      std::vector<sim::RunMetrics> runs;
      if (s_treatment == "engine") {
        if (s_features.empty()) throw ArgumentError("--features is required for --treatment engine");
        const auto fm = load_features(s_features);
        if (fm.size() != corpus.size()) throw ArgumentError("feature matrix does not match the store");
        config.feature_mode = fm.mode;
        if (config.stop_rule == StopRule::known_total) throw ConfigError("stop_rule", "use semi or none");
        runs = sim::run_simulation(corpus, fm, s_category, config, oracle, s_repeats, targets, s_threads);
      } else if (s_treatment == "random" || s_treatment == "crash") {
        const auto mode = s_treatment == "random" ? sim::BaselineMode::random : sim::BaselineMode::crash;
        runs = sim::run_baselines(corpus, s_category, mode, s_repeats, s_seed, config.n1, targets);
      } else {
        throw ArgumentError("--treatment must be engine|random|crash");
      }
      fs::create_directories(s_out);
      for (std::size_t r = 0; r < runs.size(); ++r) {
        std::ostringstream name;
        name << "run_" << std::setw(3) << std::setfill('0') << r << ".csv";
        sim::write_run_csv(runs[r], fs::path(s_out) / name.str());
      }
      const auto summary = sim::summarize(runs);
      sim::write_summary_csv(summary, fs::path(s_out) / "summary.csv");
      if (s_treatment != "crash") sim::write_estimation_svg(runs, fs::path(s_out) / "estimation.svg");
      std::cout << "wrote " << runs.size() << " runs to " << s_out << "\n";
      for (const auto& [t, c] : summary.cost_at) std::cout << "cost@" << t << "%: " << sim::format_cell(c) << "\n";
      std::cout << "final recall: " << sim::format_cell(summary.final_recall)
                << "  final cost: " << sim::format_cell(summary.final_cost) << "\n";
    } else if (*report) {
      const auto targets = parse_targets(r_targets);
      const auto runs = load_runs(r_runs, targets);
      const auto summary = sim::summarize(runs);
      std::optional<sim::Relative> rel;
      if (!r_baseline.empty()) rel = sim::relative_to(runs, load_runs(r_baseline, targets));
      std::cout << "runs: " << runs.size() << "\n";
      std::cout << "target";
      for (int t : targets) std::cout << '\t' << t;
      std::cout << "\ncost";
      for (int t : targets) std::cout << '\t' << sim::format_cell(summary.cost_at.at(t));
      std::cout << "\nfinal recall\t" << sim::format_cell(summary.final_recall) << "\nfinal cost\t"
                << sim::format_cell(summary.final_cost) << "\n";
      if (rel) {
        std::cout << "relative recall\t" << format_ratio(rel->recall) << "\nrelative cost\t"
                  << format_ratio(rel->cost) << "\n";
        if (r_error && *r_error > 0.0 && *r_error < 1.0)
          std::cout << "false-negative coverage\t" << std::fixed << std::setprecision(2)
                    << sim::false_negative_coverage(rel->recall.median, *r_error) << "\n";
      }
      if (!r_out.empty()) sim::write_summary_csv(summary, r_out, rel);
    } else if (*serve) {
      auto corpus = std::make_shared<const Corpus>(load_store(v_store));
      auto fm = std::make_shared<const FeatureMatrix>(load_features(v_features));
      if (fm->size() != corpus->size()) throw ArgumentError("feature matrix does not match the store");
      service::ServiceOptions opts;
      opts.data_dir = v_data.empty() ? fs::path(v_store) / "sessions" : fs::path(v_data);
      service::ReviewService svc(opts);
      const auto corpus_name = fs::path(v_store).lexically_normal().filename().string();
      const auto features_name = fs::path(v_features).lexically_normal().filename().string();
      svc.add_corpus(corpus_name, corpus);
      svc.add_features(features_name, fm);
      const auto recovered = svc.recover();
      httplib::Server server;
      service::bind_routes(server, svc);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cout << "serving corpus '" << corpus_name << "' features '" << features_name << "' on " << v_host << ":"
                << v_port << " (" << recovered << " sessions recovered)" << std::endl;
      if (!server.listen(v_host, v_port)) throw Error("cannot listen on " + v_host + ":" + std::to_string(v_port));
      g_server = nullptr;
    } else if (*synth) {
      const auto corpus = synthetic::generate(y_opt);
      const auto path = synthetic::write_manifest(corpus, y_out);
      std::cout << "wrote " << path.string() << " (" << corpus.size() << " documents)\n";
    }
  } catch (const ArgumentError& e) {
    std::cerr << "argument error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error (" << e.field() << "): " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
