#pragma once

#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "guq/config.hpp"
#include "guq/dataset.hpp"
#include "guq/errors.hpp"
#include "guq/model_io.hpp"
#include "guq/report.hpp"
#include "guq/runner.hpp"

namespace guq::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // domain, config or format errors; failed checks
inline constexpr int kExitIo = 2;

struct GlobalOptions {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads;
};

inline RunConfig resolve_config(const std::string& path, const GlobalOptions& g) {
  RunConfig cfg = path.empty() ? RunConfig{} : load_run_config(path);
  if (g.seed) cfg.seed = *g.seed;
  if (g.threads) cfg.threads = *g.threads;
  if (cfg.threads == 0) throw ConfigError("--threads must be >= 1");
  return cfg;
}

inline std::filesystem::path prepare_dir(const std::string& dir) {
  std::filesystem::path p(dir);
  std::error_code ec;
  std::filesystem::create_directories(p, ec);
  if (ec || !std::filesystem::is_directory(p)) {
    throw IoError("cannot create output directory '" + dir + "'");
  }
  return p;
}

inline void write_outputs(const ExperimentOutput& out, const std::filesystem::path& dir,
                          const std::string& stem, std::ostream& log) {
  write_report(out.report, dir / (stem + ".json"));
  write_text(dir / (stem + ".csv"), render_csv(out.rows));
  log << "wrote " << (dir / (stem + ".json")).string() << " and "
      << (dir / (stem + ".csv")).string() << "\n";
}

/// CSV with columns sample_index,method,score.
inline std::string render_scores(const std::vector<double>& scores, Method m) {
  std::ostringstream out;
  out << "sample_index,method,score\n";
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out << i << ',' << to_string(m) << ',' << format_number(scores[i]) << '\n';
  }
  return out.str();
}

/// Parses argv, runs one subcommand and maps errors to exit codes.
inline int dispatch(int argc, const char* const* argv, std::ostream& out = std::cout,
                    std::ostream& err = std::cerr) {
  CLI::App app{"Gradient-based uncertainty scoring toolkit", "guq"};
  app.require_subcommand(1);
  GlobalOptions g;
  std::uint64_t seed_value = 0;
  std::size_t threads_value = 1;
  auto* seed_opt = app.add_option("--seed", seed_value, "Global seed");
  auto* threads_opt =
      app.add_option("--threads", threads_value, "Worker threads (results do not depend on it)");

  std::string config_path, out_path, data_path, val_path, model_path, method_name, id_path,
      ood_path, prop = "all", out_dir;

  auto* train = app.add_subcommand("train", "Train a classifier and save the model file");
  train->add_option("--config", config_path, "Run configuration (JSON)");
  train->add_option("--out", out_path, "Model file to write")->required();
  train->add_option("--data", data_path, "Training CSV (default: generated clusters)");
  train->add_option("--val", val_path, "Validation CSV");

  auto* score_cmd = app.add_subcommand("score", "Score every row of a CSV dataset");
  score_cmd->add_option("--model", model_path, "Model file")->required();
  score_cmd->add_option("--data", data_path, "Input CSV")->required();
  score_cmd->add_option("--method", method_name, "Scoring method")->required();
  score_cmd->add_option("--config", config_path, "Run configuration (scorer settings)");
  score_cmd->add_option("--out", out_path, "Output CSV (default: stdout)");

  auto* ood = app.add_subcommand("eval-ood", "OOD detection: AUROC and AUPR per method");
  ood->add_option("--config", config_path, "Run configuration (JSON)");
  ood->add_option("--model", model_path, "Pre-trained model (with --id and --ood)");
  ood->add_option("--id", id_path, "In-distribution CSV");
  ood->add_option("--ood", ood_path, "Out-of-distribution CSV");
  ood->add_option("--out-dir", out_dir, "Report directory (default: config output_dir)");

  auto* cal = app.add_subcommand("eval-calibration", "rAULC of each method");
  cal->add_option("--config", config_path, "Run configuration (JSON)");
  cal->add_option("--model", model_path, "Pre-trained model (with --data)");
  cal->add_option("--data", data_path, "Labeled test CSV");
  cal->add_option("--out-dir", out_dir, "Report directory");

  auto* al = app.add_subcommand("active-learn", "Active learning curves vs random acquisition");
  al->add_option("--config", config_path, "Run configuration (JSON)");
  al->add_option("--out-dir", out_dir, "Report directory");

  auto* verify = app.add_subcommand("verify", "Numerical checks of the theory");
  verify->add_option("--prop", prop, "all, 1, 3, 4 or 5");
  verify->add_option("--config", config_path, "Run configuration (JSON)");
  verify->add_option("--out-dir", out_dir, "Report directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kExitFailure;
  }
  if (seed_opt->count() > 0) g.seed = seed_value;
  if (threads_opt->count() > 0) g.threads = threads_value;

  try {
    if (*train) {
      RunConfig cfg = resolve_config(config_path, g);
      Dataset train_data, val_data;
      if (!data_path.empty()) {
        train_data = load_csv(data_path);
        if (!val_path.empty()) val_data = load_csv(val_path);
      } else {
        TaskData d = make_two_cluster_data(cfg.data, cfg.seed);
        train_data = std::move(d.train);
        val_data = std::move(d.val);
      }
      const TrainReport r = fit(cfg.model, optimizer_for(cfg, cfg.seed), train_data, val_data);
      save_model(r.model, out_path);
      out << "trained " << r.train_loss.size() << " epochs, selected epoch "
          << r.selected_epoch << ", wrote " << out_path << "\n";
      return kExitOk;
    }
    if (*score_cmd) {
      RunConfig cfg = resolve_config(config_path, g);
      const Model model = load_model(model_path);
      const Dataset data = load_csv(data_path);
      const Method m = parse_method(method_name);
      const NamedScorer s = make_scorer(model, cfg.scorer.for_method(m));
      const std::string csv = render_scores(score_all(s, data.inputs, cfg.seed, 0, cfg.threads), m);
      if (out_path.empty()) {
        out << csv;
      } else {
        write_text(out_path, csv);
      }
      return kExitOk;
    }
    if (*ood) {
      RunConfig cfg = resolve_config(config_path, g);
      const auto dir = prepare_dir(out_dir.empty() ? cfg.output_dir : out_dir);
      if (!model_path.empty()) {
        if (id_path.empty() || ood_path.empty()) {
          throw ConfigError("--model needs both --id and --ood");
        }
        const Model model = load_model(model_path);
        Dataset id = load_csv(id_path), od = load_csv(ood_path);
        const OodReport r =
            run_ood_experiment(model, id, od, make_scorers(model, cfg.scorer_configs()),
                               cfg.seeds, {cfg.accuracy_floor, cfg.threads});
        Json doc = to_json(r);
        doc["config"] = report_config_json(cfg);
        write_outputs({doc, to_csv_rows(r)}, dir, "ood_report", out);
      } else {
        write_outputs(run_ood(cfg), dir, "ood_report", out);
      }
      return kExitOk;
    }
    if (*cal) {
      RunConfig cfg = resolve_config(config_path, g);
      const auto dir = prepare_dir(out_dir.empty() ? cfg.output_dir : out_dir);
      ExperimentOutput result;
      if (!model_path.empty()) {
        if (data_path.empty()) throw ConfigError("--model needs --data");
        const Model model = load_model(model_path);
        const CalibrationReport r = run_calibration_experiment(
            model, load_csv(data_path), make_scorers(model, cfg.scorer_configs()), cfg.seeds,
            cfg.threads);
        result = {to_json(r), to_csv_rows(r)};
        result.report["config"] = report_config_json(cfg);
      } else {
        result = run_calibration(cfg);
      }
      for (const auto& w : result.report.at("warnings")) {
        err << "warning: " << w.get<std::string>() << "\n";
      }
      write_outputs(result, dir, "calibration_report", out);
      return kExitOk;
    }
    if (*al) {
      RunConfig cfg = resolve_config(config_path, g);
      const auto dir = prepare_dir(out_dir.empty() ? cfg.output_dir : out_dir);
      write_outputs(run_active(cfg), dir, "active_learning_report", out);
      return kExitOk;
    }
    if (*verify) {
      RunConfig cfg = resolve_config(config_path, g);
      const auto reports = run_propositions(cfg, prop);
      const auto dir = prepare_dir(out_dir.empty() ? cfg.output_dir : out_dir);
      const Json doc = propositions_to_json(reports, cfg);
      write_report(doc, dir / "propositions.json");
      bool failed = false;
      for (const auto& r : reports) {
        const char* status = r.pass ? "PASS" : (r.inconclusive ? "INCONCLUSIVE" : "FAIL");
        out << status << " " << r.proposition;
        for (const auto& n : r.notes) out << " (" << n << ")";
        out << "\n";
        failed = failed || (!r.pass && !r.inconclusive);
      }
      out << "wrote " << (dir / "propositions.json").string() << "\n";
      return failed ? kExitFailure : kExitOk;
    }
  } catch (const IoError& e) {
    err << "I/O error: " << e.what() << "\n";
    return kExitIo;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  err << app.help();
  return kExitFailure;
}

}  // namespace guq::cli
