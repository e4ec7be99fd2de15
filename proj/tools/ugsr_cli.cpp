// ugsr: data generation, experiments and report merging.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ugsr/checkpoint.hpp"
#include "ugsr/codebook.hpp"
#include "ugsr/datastream.hpp"
#include "ugsr/errors.hpp"
#include "ugsr/log.hpp"
#include "ugsr/pipeline.hpp"
#include "ugsr/profiles.hpp"
#include "ugsr/report.hpp"

namespace fs = std::filesystem;

namespace {

constexpr const char* kSamplerFile = "sampler.ckpt";
constexpr const char* kDetectorFile = "detector.ckpt";
constexpr const char* kCodebookFile = "codebook.bin";

// Flags that map onto RunConfig. Unset flags leave the profile value.
struct ConfigFlags {
  std::string profile = "paper";
  std::string config_file;
  std::optional<std::size_t> budget, k, theta, hidden, static_epochs, continual_epochs, static_batch,
      continual_batch, n_benign, n_mal;
  std::optional<std::uint32_t> static_months;
  std::optional<double> mu, quota, replay, static_lr, continual_lr, lambda1, lambda2, lambda3,
      temperature, theta1, theta2, theta3;
  std::optional<std::string> static_optimizer, continual_optimizer, freeze;
  std::optional<std::uint64_t> seed;
  bool no_retrieval = false;
  bool no_fmul = false;
  bool no_geometry = false;

  void add_to(CLI::App& app) {
    auto* prof = app.add_option("--profile", profile, "Preset: paper (published settings) or desk")
                     ->check(CLI::IsMember({"paper", "desk"}));
    auto* cfg = app.add_option("--config", config_file, "Resolved config.txt of an earlier run")
                    ->check(CLI::ExistingFile);
    std::vector<CLI::Option*> opts{
        app.add_option("--budget", budget, "Labels per continual month (B)"),
        app.add_option("--mu", mu, "Share of the budget picked by multi-class uncertainty"),
        app.add_option("--quota", quota, "Minimum benign share of the selection"),
        app.add_option("--replay", replay, "Memory bank fraction replayed while fine-tuning"),
        app.add_option("--k", k, "Retrieved neighbours"),
        app.add_option("--theta", theta, "Votes needed to override the classifier"),
        app.add_option("--hidden", hidden, "Hidden width of the encoder trunks"),
        app.add_option("--static-months", static_months, "Months used for static training"),
        app.add_option("--static-epochs", static_epochs),
        app.add_option("--continual-epochs", continual_epochs),
        app.add_option("--static-batch", static_batch),
        app.add_option("--continual-batch", continual_batch),
        app.add_option("--static-lr", static_lr),
        app.add_option("--continual-lr", continual_lr),
        app.add_option("--static-optimizer", static_optimizer)->check(CLI::IsMember({"sgd", "adam"})),
        app.add_option("--continual-optimizer", continual_optimizer)->check(CLI::IsMember({"sgd", "adam"})),
        app.add_option("--freeze", freeze, "Sampler fine-tuning rule")
            ->check(CLI::IsMember({"freeze_bin", "freeze_mul"})),
        app.add_option("--lambda1", lambda1),
        app.add_option("--lambda2", lambda2),
        app.add_option("--lambda3", lambda3),
        app.add_option("--temperature", temperature),
        app.add_option("--n-benign", n_benign),
        app.add_option("--n-mal", n_mal),
        app.add_option("--theta1", theta1),
        app.add_option("--theta2", theta2),
        app.add_option("--theta3", theta3),
        app.add_option("--seed", seed),
        app.add_flag("--no-retrieval", no_retrieval, "Classifier-only evaluation"),
        app.add_flag("--no-fmul", no_fmul, "Disable the multi-class sampler stage"),
        app.add_flag("--no-geometry", no_geometry, "Skip codebook centroid pull and orthogonalization"),
    };
    cfg->excludes(prof);
    for (auto* o : opts) cfg->excludes(o);
  }

  ugsr::RunConfig resolve() const {
    if (!config_file.empty()) {
      std::ifstream in(config_file);
      return ugsr::read_config(in);
    }
    ugsr::RunConfig c = profile == "desk" ? ugsr::desk_profile() : ugsr::paper_profile();
    auto set = [](auto& field, const auto& opt) {
      if (opt) field = static_cast<std::remove_reference_t<decltype(field)>>(*opt);
    };
    set(c.budget, budget);
    set(c.mu, mu);
    set(c.benign_quota, quota);
    set(c.replay_fraction, replay);
    set(c.k, k);
    set(c.theta, theta);
    if (k && !theta) c.theta = *k;
    set(c.hidden_width, hidden);
    set(c.static_months, static_months);
    set(c.static_epochs, static_epochs);
    set(c.continual_epochs, continual_epochs);
    set(c.static_batch, static_batch);
    set(c.continual_batch, continual_batch);
    set(c.static_lr, static_lr);
    set(c.continual_lr, continual_lr);
    if (static_optimizer) c.static_optimizer = *static_optimizer == "sgd" ? ugsr::OptimKind::sgd : ugsr::OptimKind::adam;
    if (continual_optimizer)
      c.continual_optimizer = *continual_optimizer == "sgd" ? ugsr::OptimKind::sgd : ugsr::OptimKind::adam;
    if (freeze) c.sampler_freeze = *freeze == "freeze_bin" ? ugsr::FreezeRule::freeze_bin : ugsr::FreezeRule::freeze_mul;
    set(c.loss.lambda1, lambda1);
    set(c.loss.lambda2, lambda2);
    set(c.loss.lambda3, lambda3);
    set(c.loss.temperature, temperature);
    set(c.capacity.benign, n_benign);
    set(c.capacity.per_family, n_mal);
    set(c.geometry.pull_base, theta1);
    set(c.geometry.pull_confidence, theta2);
    set(c.geometry.orthogonal, theta3);
    set(c.seed, seed);
    if (no_retrieval) c.retrieval_enabled = false;
    if (no_fmul) c.fmul_enabled = false;
    if (no_geometry) c.geometry.enabled = false;
    c.validate();
    return c;
  }
};

void write_config_file(const fs::path& dir, const ugsr::RunConfig& config) {
  std::ofstream out(dir / ugsr::kConfigFile);
  ugsr::write_config(out, config);
  if (!out) throw std::runtime_error("failed writing " + (dir / ugsr::kConfigFile).string());
}

std::vector<ugsr::Sample> static_months_of(const std::vector<ugsr::Sample>& stream, std::uint32_t months) {
  std::vector<ugsr::Sample> out;
  for (const auto& s : stream)
    if (s.month < months) out.push_back(s);
  return out;
}

void print_summary(const ugsr::RunReport& report) {
  std::cout << "month    tpr      tnr      f2       gmean    macc     labels\n";
  for (const auto& m : report.months) {
    std::printf("%-8u %-8s %-8s %-8s %-8s %-8s %zu\n", m.month, ugsr::format_metric(m.metrics.tpr).c_str(),
                ugsr::format_metric(m.metrics.tnr).c_str(), ugsr::format_metric(m.metrics.f2).c_str(),
                ugsr::format_metric(m.metrics.gmean).c_str(), ugsr::format_metric(m.metrics.macc).c_str(),
                m.labels_used);
  }
  const auto& a = report.averages;
  std::printf("average  %-8s %-8s %-8s %-8s %-8s\n", ugsr::format_metric(a.tpr).c_str(),
              ugsr::format_metric(a.tnr).c_str(), ugsr::format_metric(a.f2).c_str(),
              ugsr::format_metric(a.gmean).c_str(), ugsr::format_metric(a.macc).c_str());
  std::fflush(stdout);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Uncertainty-guided sampling and retrieval for continual malware detection"};
  app.require_subcommand(1);
  bool verbose = false;
  bool quiet = false;
  app.add_flag("-v,--verbose", verbose, "Progress messages");
  app.add_flag("-q,--quiet", quiet, "Suppress warnings");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic drifting stream as CSV");
  ugsr::DriftConfig drift;
  std::string gen_out;
  gen->add_option("--dim", drift.dim, "Feature dimension")->check(CLI::PositiveNumber);
  gen->add_option("--families", drift.families, "Malware families (C)")->check(CLI::PositiveNumber);
  gen->add_option("--months", drift.months, "Months in the stream")->check(CLI::Range(2u, 100000u));
  gen->add_option("--static-months", drift.static_months, "Months before late families appear");
  gen->add_option("--ratio", drift.ratio, "Benign samples per malware sample")->check(CLI::PositiveNumber);
  gen->add_option("--per-month", drift.per_month, "Samples per month")->check(CLI::PositiveNumber);
  gen->add_option("--drift", drift.drift_velocity, "Per-month drift of class centers");
  gen->add_option("--amplitude", drift.signature_amplitude, "Family signature strength");
  gen->add_option("--inheritance", drift.inheritance, "Parent signature share kept by late families");
  gen->add_option("--seed", drift.seed, "Random seed");
  gen->add_option("--out", gen_out, "Output CSV")->required();

  // train-static
  auto* train = app.add_subcommand("train-static", "Static phase only; writes checkpoints and codebook");
  ConfigFlags train_flags;
  std::string train_data, train_out;
  train->add_option("--data", train_data, "Stream CSV")->required()->check(CLI::ExistingFile);
  train->add_option("--out", train_out, "Output directory")->required();
  train_flags.add_to(*train);

  // run
  auto* run = app.add_subcommand("run", "Static phase followed by continual months");
  ConfigFlags run_flags;
  std::string run_data, run_out, run_static;
  run->add_option("--data", run_data, "Stream CSV")->required()->check(CLI::ExistingFile);
  run->add_option("--out", run_out, "Output directory")->required();
  run->add_option("--static-dir", run_static, "Start from a train-static output directory")
      ->check(CLI::ExistingDirectory);
  run_flags.add_to(*run);

  // report
  auto* rep = app.add_subcommand("report", "Merge run directories into plot-ready tables");
  std::vector<std::string> rep_runs, rep_ids;
  std::string rep_out;
  rep->add_option("--runs", rep_runs, "Run directories")->required()->check(CLI::ExistingDirectory);
  rep->add_option("--ids", rep_ids, "Run ids (default: directory names)");
  rep->add_option("--out", rep_out, "Output directory")->required();

  CLI11_PARSE(app, argc, argv);
  ugsr::log::set_level(quiet ? ugsr::log::Level::quiet : verbose ? ugsr::log::Level::info : ugsr::log::Level::warn);

  try {
    if (gen->parsed()) {
      try {
        drift.validate();
      } catch (const ugsr::ConfigError& e) {
        std::cerr << "gen-data: " << e.what() << '\n';
        return 2;
      }
      ugsr::save_csv(gen_out, ugsr::generate_stream(drift));
      return 0;
    }

    if (train->parsed()) {
      const auto config = train_flags.resolve();
      const auto stream = ugsr::load_csv(train_data);
      const auto static_data = static_months_of(stream, config.static_months);
      const auto state = ugsr::static_phase(config, static_data, ugsr::resolve_classes(config, stream));
      const fs::path dir(train_out);
      fs::create_directories(dir);
      ugsr::save_checkpoint((dir / kSamplerFile).string(), ugsr::to_checkpoint(state.sampler));
      ugsr::save_checkpoint((dir / kDetectorFile).string(), ugsr::to_checkpoint(state.detector));
      ugsr::save_codebook((dir / kCodebookFile).string(), state.codebook);
      write_config_file(dir, config);
      return 0;
    }

    if (run->parsed()) {
      const auto config = run_flags.resolve();
      const auto stream = ugsr::load_csv(run_data);
      ugsr::RunHooks hooks;
      hooks.on_period = [](const ugsr::PeriodReport& p) {
        ugsr::log::info("month " + std::to_string(p.month) + " macc " + ugsr::format_metric(p.metrics.macc));
      };
      ugsr::RunReport report;
      if (run_static.empty()) {
        report = ugsr::run_experiment(config, stream, hooks);
      } else {
        const fs::path dir(run_static);
        auto sampler = ugsr::sampler_from_checkpoint(ugsr::load_checkpoint((dir / kSamplerFile).string()));
        auto detector = ugsr::detector_from_checkpoint(ugsr::load_checkpoint((dir / kDetectorFile).string()));
        auto codebook = ugsr::load_codebook((dir / kCodebookFile).string(), config.geometry);
        if (codebook.dim() != detector.embedding_dim())
          throw ugsr::ConfigError("codebook dimension does not match the detector");
        ugsr::ModelState state{std::move(sampler), std::move(detector), std::move(codebook), {}, {}};
        report = ugsr::run_continual(std::move(state), config, stream, hooks);
      }
      ugsr::write_run_report(run_out, report);
      print_summary(report);
      return 0;
    }

    if (rep->parsed()) {
      if (!rep_ids.empty() && rep_ids.size() != rep_runs.size()) {
        std::cerr << "report: --ids needs one id per run directory\n";
        return 2;
      }
      std::vector<ugsr::RunDirectory> runs;
      for (std::size_t i = 0; i < rep_runs.size(); ++i) {
        const auto name = rep_ids.empty() ? fs::path(rep_runs[i]).lexically_normal().filename().string() : rep_ids[i];
        runs.push_back({name.empty() ? fs::path(rep_runs[i]).parent_path().filename().string() : name, rep_runs[i]});
      }
      const fs::path dir(rep_out);
      fs::create_directories(dir);
      {
        std::ofstream out(dir / "per_month_long.csv");
        ugsr::write_merged_per_month(out, runs);
        if (!out) throw std::runtime_error("failed writing per_month_long.csv");
      }
      {
        std::ofstream out(dir / "summary.csv");
        ugsr::write_merged_summary(out, runs);
        if (!out) throw std::runtime_error("failed writing summary.csv");
      }
      return 0;
    }
  } catch (const ugsr::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
