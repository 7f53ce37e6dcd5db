// imnd: simulate / ingest / train / adapt / eval / export-embeddings.
// Exit codes: 0 success, 1 runtime failure, 2 config error.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <Eigen/Core>
#include <CLI11.hpp>

#include "imnd/config.hpp"
#include "imnd/dataset.hpp"
#include "imnd/eval.hpp"
#include "imnd/imu_model.hpp"
#include "imnd/meta_trainer.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonFlags {
  std::string config_file;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<int> threads;
  std::optional<std::string> out;
};

void add_common(CLI::App* cmd, CommonFlags& f, bool with_out = true) {
  cmd->add_option("--config", f.config_file, "key=value config file")->required();
  cmd->add_option("--seed", f.seed, "override the config seed");
  cmd->add_option("--mode", f.mode, "override the training mode (fsda_f|fsda|digdl)");
  cmd->add_option("--threads", f.threads, "cap internal worker threads (0 = default)");
  if (with_out) cmd->add_option("--out", f.out, "override the output directory");
}

imnd::RunConfig load_config(const CommonFlags& f) {
  imnd::RunConfig cfg = f.config_file.empty() ? imnd::RunConfig{}
                                              : imnd::parse_run_config(f.config_file);
  if (f.seed) imnd::apply_config_key(cfg, "seed", std::to_string(*f.seed));
  if (f.mode) imnd::apply_config_key(cfg, "mode", *f.mode);
  if (f.threads) imnd::apply_config_key(cfg, "threads", std::to_string(*f.threads));
  if (f.out) imnd::apply_config_key(cfg, "out_dir", *f.out);
  if (cfg.data_dir.empty()) {
    if (const char* env = std::getenv("IMND_DATA_DIR")) cfg.data_dir = env;
  }
  cfg.validate();
  if (cfg.threads > 0) Eigen::setNbThreads(cfg.threads);
  return cfg;
}

imnd::MetaSplitConfig split_config(const imnd::RunConfig& cfg) {
  if (cfg.data_dir.empty())
    throw imnd::ConfigError("no data_dir configured (set data_dir or IMND_DATA_DIR)");
  return {cfg.data_dir, cfg.train_names, cfg.test_names, cfg.train.support_seconds};
}

int cmd_simulate(const CommonFlags& flags) {
  const imnd::RunConfig cfg = load_config(flags);
  if (cfg.domains.empty())
    throw imnd::ConfigError("simulate: no domain.* entries in the config");
  const fs::path dir = flags.out ? fs::path(*flags.out)
                       : cfg.data_dir.empty() ? cfg.out_dir : cfg.data_dir;
  fs::create_directories(dir);
  std::ofstream manifest(dir / "manifest.csv");
  if (!manifest) throw std::runtime_error("cannot write " + (dir / "manifest.csv").string());
  manifest << "domain,profile,seed,samples,rate_hz,duration_s\n";
  for (std::size_t i = 0; i < cfg.domains.size(); ++i) {
    const imnd::DomainSpec& d = cfg.domains[i];
    const std::uint64_t seed = imnd::domain_seed(cfg, i);
    const imnd::SynthDomain synth = imnd::synth_domain(d, seed);
    imnd::write_canonical_csv(synth.sequence, dir / (d.name + ".csv"));
    manifest << d.name << "," << d.profile << "," << seed << ","
             << synth.sequence.size() << "," << d.rate_hz << "," << d.duration_s << "\n";
    std::cout << "wrote " << (dir / (d.name + ".csv")).string() << " ("
              << synth.sequence.size() << " samples)\n";
  }
  std::cout << "wrote " << (dir / "manifest.csv").string() << "\n";
  return 0;
}

int cmd_ingest(const std::string& format, const std::string& input, const std::string& out,
               const std::string& tag) {
  imnd::ImuSequence seq;
  if (format == "euroc") {
    seq = imnd::parse_euroc(input);
  } else if (format == "tumvi") {
    seq = imnd::parse_tumvi(input);
  } else if (format == "canonical") {
    seq = imnd::read_canonical_csv(input);
  } else {
    throw imnd::ConfigError("unknown ingest format '" + format +
                            "' (want euroc|tumvi|canonical)");
  }
  if (!tag.empty()) seq.domain_tag = tag;
  fs::path out_path(out);
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  imnd::write_canonical_csv(seq, out_path);
  std::cout << "wrote " << out << " (" << seq.size() << " samples, "
            << seq.size() * seq.dt << " s)\n";
  return 0;
}

int cmd_train(const CommonFlags& flags, bool dry_run) {
  const imnd::RunConfig cfg = load_config(flags);
  if (dry_run) {
    std::cout << imnd::render_run_config(cfg);
    return 0;
  }
  auto [train_tasks, test_tasks] = imnd::make_meta_splits(split_config(cfg));
  (void)test_tasks;
  imnd::TrainOutput out = imnd::train(cfg.train, train_tasks);
  fs::create_directories(cfg.out_dir);
  const fs::path ckpt_file = cfg.out_dir / "checkpoint.imnd";
  imnd::save_checkpoint(out.checkpoint, ckpt_file);
  imnd::write_train_log(out.log, cfg.out_dir / "train_log.csv");
  std::cout << "wrote " << ckpt_file.string() << "\n"
            << "wrote " << (cfg.out_dir / "train_log.csv").string() << "\n";
  return 0;
}

int cmd_adapt(const CommonFlags& flags, const std::string& ckpt_file,
              const std::string& support_file, const std::string& out_file) {
  const imnd::RunConfig cfg = load_config(flags);
  const imnd::Checkpoint ckpt = imnd::load_checkpoint(ckpt_file);
  const imnd::ImuSequence support = imnd::read_canonical_csv(support_file);
  const imnd::Checkpoint adapted = imnd::few_shot_adapt(ckpt, support, cfg.seed);
  fs::path out_path = out_file.empty() ? cfg.out_dir / "checkpoint_adapted.imnd"
                                       : fs::path(out_file);
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  imnd::save_checkpoint(adapted, out_path);
  std::cout << "wrote " << out_path.string() << " (domain '" << adapted.domain_tag
            << "')\n";
  return 0;
}

std::string series_file_name(const imnd::EvalRow& row) {
  std::string mode = row.mode;
  for (char& c : mode)
    if (c == '+') c = '_';
  return "series_" + row.domain_tag + "_" + mode + ".csv";
}

int cmd_eval(const CommonFlags& flags, const std::string& ckpt_file, bool adapt,
             bool with_raw) {
  const imnd::RunConfig cfg = load_config(flags);
  const imnd::Checkpoint ckpt = imnd::load_checkpoint(ckpt_file);
  auto [train_tasks, test_tasks] = imnd::make_meta_splits(split_config(cfg));
  (void)train_tasks;
  if (test_tasks.empty()) throw imnd::ConfigError("eval: empty test split");
  fs::create_directories(cfg.out_dir);
  std::vector<imnd::EvalRow> rows;
  for (const imnd::MetaTask& task : test_tasks) {
    imnd::EvalResult res = imnd::evaluate(ckpt, task, adapt, cfg.seed);
    imnd::write_time_series_csv(res.series, cfg.out_dir / series_file_name(res.row));
    rows.push_back(res.row);
    if (with_raw) {
      imnd::EvalResult raw = imnd::evaluate_raw(task);
      imnd::write_time_series_csv(raw.series, cfg.out_dir / series_file_name(raw.row));
      rows.push_back(raw.row);
    }
  }
  const std::string table = imnd::report_table(rows);
  imnd::write_report_csv(rows, cfg.out_dir / "report.csv");
  std::ofstream txt(cfg.out_dir / "report.txt");
  txt << table;
  std::cout << table;
  std::cout << "wrote " << (cfg.out_dir / "report.csv").string() << "\n";
  return 0;
}

int cmd_export_embeddings(const CommonFlags& flags, const std::string& ckpt_file,
                          const std::string& out_file) {
  const imnd::RunConfig cfg = load_config(flags);
  const imnd::Checkpoint ckpt = imnd::load_checkpoint(ckpt_file);
  auto [train_tasks, test_tasks] = imnd::make_meta_splits(split_config(cfg));
  std::vector<imnd::ImuSequence> sequences;
  for (const imnd::MetaTask& t : train_tasks) sequences.push_back(t.query);
  for (const imnd::MetaTask& t : test_tasks) sequences.push_back(t.query);
  fs::path out_path = out_file.empty() ? cfg.out_dir / "embeddings.csv"
                                       : fs::path(out_file);
  if (out_path.has_parent_path()) fs::create_directories(out_path.parent_path());
  imnd::export_embeddings(ckpt, sequences, out_path, 2000, cfg.seed);
  std::cout << "wrote " << out_path.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"IMU gyroscope denoising: simulation, training and evaluation"};
  app.require_subcommand(1);

  CommonFlags sim_flags;
  auto* sim = app.add_subcommand("simulate", "generate synthetic domains as canonical CSVs");
  add_common(sim, sim_flags);

  std::string ingest_format = "euroc", ingest_in, ingest_out, ingest_tag;
  auto* ingest = app.add_subcommand("ingest", "convert a raw dataset directory to canonical CSV");
  ingest->add_option("--format", ingest_format, "euroc|tumvi|canonical");
  ingest->add_option("input", ingest_in, "dataset directory (or CSV for canonical)")->required();
  ingest->add_option("--out", ingest_out, "output canonical CSV path")->required();
  ingest->add_option("--tag", ingest_tag, "override the domain tag");

  CommonFlags train_flags;
  bool dry_run = false;
  auto* train = app.add_subcommand("train", "train a denoiser on the configured split");
  add_common(train, train_flags);
  train->add_flag("--dry-run", dry_run, "validate and print the resolved config, then exit");

  CommonFlags adapt_flags;
  std::string adapt_ckpt, adapt_support, adapt_out;
  auto* adapt = app.add_subcommand("adapt", "few-shot adapt a checkpoint to a new domain");
  add_common(adapt, adapt_flags, /*with_out=*/false);
  adapt->add_option("--checkpoint", adapt_ckpt, "trained checkpoint")->required();
  adapt->add_option("--support", adapt_support, "canonical CSV with ground truth")->required();
  adapt->add_option("--out", adapt_out, "adapted checkpoint path");

  CommonFlags eval_flags;
  std::string eval_ckpt;
  bool eval_adapt = false, eval_no_raw = false;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_common(eval, eval_flags);
  eval->add_option("--checkpoint", eval_ckpt, "trained checkpoint")->required();
  eval->add_flag("--adapt", eval_adapt, "run few-shot adaptation per test task first");
  eval->add_flag("--no-raw", eval_no_raw, "skip the raw-integration baseline rows");

  CommonFlags emb_flags;
  std::string emb_ckpt, emb_out;
  auto* emb = app.add_subcommand("export-embeddings", "dump per-timestep embeddings as CSV");
  add_common(emb, emb_flags, /*with_out=*/false);
  emb->add_option("--checkpoint", emb_ckpt, "trained checkpoint")->required();
  emb->add_option("--out", emb_out, "output CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (sim->parsed()) return cmd_simulate(sim_flags);
    if (ingest->parsed()) return cmd_ingest(ingest_format, ingest_in, ingest_out, ingest_tag);
    if (train->parsed()) return cmd_train(train_flags, dry_run);
    if (adapt->parsed()) return cmd_adapt(adapt_flags, adapt_ckpt, adapt_support, adapt_out);
    if (eval->parsed()) return cmd_eval(eval_flags, eval_ckpt, eval_adapt, !eval_no_raw);
    if (emb->parsed()) return cmd_export_embeddings(emb_flags, emb_ckpt, emb_out);
  } catch (const imnd::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
