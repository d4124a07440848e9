// poecf command line: prepare | synth | train | eval | pareto.
//
// Every command validates its inputs before writing anything and fails with
// a machine-readable JSON error on stderr and a nonzero exit code.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "poecf/poecf.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliError : std::runtime_error {
  std::string type;
  std::vector<std::string> violations;
  CliError(std::string t, const std::string& message, std::vector<std::string> v = {})
      : std::runtime_error(message), type(std::move(t)), violations(std::move(v)) {}
};

// ---------------------------------------------------------------------------
// prepare
// ---------------------------------------------------------------------------

std::vector<poecf::RatingRecord> read_tsv(const fs::path& path, int domain_id) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CliError("io", "cannot open input file: " + path.string());
  std::vector<poecf::RatingRecord> records;
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = (t1 == std::string::npos) ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos)
      throw CliError("parse", path.string() + ":" + std::to_string(line_no) +
                                  ": expected user<TAB>item<TAB>rating");
    poecf::RatingRecord r;
    r.user_key = line.substr(0, t1);
    r.item_key = line.substr(t1 + 1, t2 - t1 - 1);
    try {
      std::size_t pos = 0;
      const std::string field = line.substr(t2 + 1);
      r.rating = std::stod(field, &pos);
      if (pos != field.size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw CliError("parse", path.string() + ":" + std::to_string(line_no) + ": bad rating field");
    }
    r.domain_id = domain_id;
    if (r.user_key.empty() || r.item_key.empty())
      throw CliError("parse", path.string() + ":" + std::to_string(line_no) + ": empty key");
    records.push_back(std::move(r));
  }
  return records;
}

void print_dataset_stats(const std::vector<std::string>& names,
                         const std::vector<std::int64_t>& item_thresholds,
                         const poecf::MultiDomainDataset& full,
                         const poecf::MultiDomainDataset& train,
                         const poecf::MultiDomainDataset& test) {
  std::printf("%-16s %-10s %10s %10s %14s %9s\n", "Category", "Item thr", "Users", "Items",
              "Interactions", "Density");
  for (int d = 0; d < full.domain_count(); ++d) {
    const auto& dom = full.domains[static_cast<std::size_t>(d)];
    const double density =
        dom.item_count == 0
            ? 0.0
            : static_cast<double>(dom.total_interactions()) /
                  (static_cast<double>(full.user_count()) * static_cast<double>(dom.item_count));
    std::printf("%-16s %-10s %10d %10d %14lld %8.2f%%\n", names[static_cast<std::size_t>(d)].c_str(),
                item_thresholds.empty() ? "-"
                                        : std::to_string(item_thresholds[static_cast<std::size_t>(d)]).c_str(),
                full.user_count(), dom.item_count,
                static_cast<long long>(dom.total_interactions()), 100.0 * density);
  }
  std::printf("split: %d train users, %d test users\n", train.user_count(), test.user_count());
}

int cmd_prepare(const std::vector<std::string>& inputs, const std::string& outdir,
                double binarize_threshold, std::vector<std::int64_t> item_thresholds,
                std::int64_t min_user_interactions, const std::string& user_filter_scope,
                double train_fraction, double fold_in_fraction, std::uint64_t seed) {
  const int d_count = static_cast<int>(inputs.size());
  if (d_count == 0) throw CliError("usage", "prepare: at least one --input file is required");
  if (!item_thresholds.empty() && static_cast<int>(item_thresholds.size()) != d_count)
    throw CliError("usage", "prepare: --item-threshold must be given once per input file");
  if (user_filter_scope != "global" && user_filter_scope != "per-domain")
    throw CliError("usage", "prepare: --user-filter-scope must be global or per-domain");

  std::vector<poecf::RatingRecord> records;
  std::vector<std::string> names;
  for (int d = 0; d < d_count; ++d) {
    const fs::path p = inputs[static_cast<std::size_t>(d)];
    auto part = read_tsv(p, d);
    records.insert(records.end(), part.begin(), part.end());
    names.push_back(p.stem().string());
  }

  records = poecf::binarize(records, binarize_threshold);
  if (!item_thresholds.empty()) {
    std::map<int, std::int64_t> thr;
    for (int d = 0; d < d_count; ++d) thr[d] = item_thresholds[static_cast<std::size_t>(d)];
    records = poecf::filter_items(records, thr, d_count);
  }
  records = poecf::filter_users(records, min_user_interactions,
                                user_filter_scope == "global"
                                    ? poecf::UserFilterScope::global
                                    : poecf::UserFilterScope::per_domain);
  if (records.empty())
    throw CliError("empty-dataset", "prepare: no records survive binarization and filtering");
  const auto full = poecf::build_multidomain(records, d_count);
  for (int d = 0; d < d_count; ++d)
    if (full.domains[static_cast<std::size_t>(d)].item_count == 0)
      throw CliError("empty-dataset",
                     "prepare: domain " + names[static_cast<std::size_t>(d)] + " has no items left");

  poecf::SplitSpec spec{train_fraction, fold_in_fraction, seed};
  const auto [train, test] = poecf::split_users(full, spec);

  poecf::DatasetMeta meta;
  meta.domain_names = names;
  meta.binarize_threshold = binarize_threshold;
  meta.has_binarize_threshold = true;
  meta.item_thresholds = item_thresholds;
  meta.min_user_interactions = min_user_interactions;
  meta.split = spec;
  meta.source = "prepare";
  poecf::save_dataset_dir(outdir, meta, train, test);
  print_dataset_stats(names, item_thresholds, full, train, test);
  return 0;
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

int cmd_synth(const std::string& outdir, std::int32_t users, std::vector<std::int32_t> items,
              int latent, double mean_interactions, double rho, double missing_fraction,
              double affinity_scale, double popularity_spread, std::uint64_t seed,
              double train_fraction, double fold_in_fraction) {
  poecf::SynthConfig cfg;
  cfg.n_users = users;
  cfg.n_items = std::move(items);
  cfg.latent_dim = latent;
  cfg.poisson_mean = mean_interactions;
  cfg.rho = rho;
  cfg.missing_domain_fraction = missing_fraction;
  cfg.affinity_scale = affinity_scale;
  cfg.popularity_spread = popularity_spread;
  cfg.seed = seed;
  cfg.validate();

  const auto full = poecf::generate(cfg);
  poecf::SplitSpec spec{train_fraction, fold_in_fraction, seed};
  const auto [train, test] = poecf::split_users(full, spec);

  poecf::DatasetMeta meta;
  for (std::size_t d = 0; d < cfg.n_items.size(); ++d)
    meta.domain_names.push_back("domain_" + std::to_string(d));
  meta.split = spec;
  meta.source = "synth";
  poecf::save_dataset_dir(outdir, meta, train, test);
  print_dataset_stats(meta.domain_names, {}, full, train, test);
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainSettings {
  poecf::ModelConfig model;
  poecf::TrainConfig train;
};

// Flat JSON config; unknown keys, wrong types and out-of-range values are all
// reported together.
TrainSettings parse_train_config(const json& j) {
  TrainSettings s;
  std::vector<std::string> violations;

  auto get_int = [&](const char* key, int min_value, int& out) {
    if (!j.contains(key)) return;
    if (!j[key].is_number_integer())
      violations.push_back(std::string(key) + ": expected an integer");
    else if (j[key].get<std::int64_t>() < min_value)
      violations.push_back(std::string(key) + ": must be >= " + std::to_string(min_value));
    else
      out = j[key].get<int>();
  };
  auto get_double = [&](const char* key, double lo, double hi, bool open_hi, double& out) {
    if (!j.contains(key)) return;
    if (!j[key].is_number())
      violations.push_back(std::string(key) + ": expected a number");
    else {
      const double v = j[key].get<double>();
      if (v < lo || v > hi || (open_hi && v >= hi))
        violations.push_back(std::string(key) + ": out of range");
      else
        out = v;
    }
  };
  auto get_bool = [&](const char* key, bool& out) {
    if (!j.contains(key)) return;
    if (!j[key].is_boolean())
      violations.push_back(std::string(key) + ": expected a boolean");
    else
      out = j[key].get<bool>();
  };

  static const std::vector<std::string> known = {
      "k",          "hidden",        "input_dropout", "normalize_input",
      "normalize_at_inference",      "prior_expert",  "lambda",
      "anneal_cap", "anneal_steps",  "batch_size",    "epochs",
      "learning_rate",               "seed",          "objective",
      "threads",    "mc_samples",    "dedupe_single_domain",
      "trace_grad_norms"};
  for (const auto& [key, value] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      violations.push_back(key + ": unknown field");

  get_int("k", 1, s.model.latent_dim);
  get_int("hidden", 1, s.model.hidden_dim);
  get_bool("normalize_input", s.model.normalize_input);
  get_bool("normalize_at_inference", s.model.normalize_at_inference);
  get_bool("prior_expert", s.model.prior_expert);
  get_double("input_dropout", 0.0, 1.0, /*open_hi=*/true, s.train.input_dropout);
  get_double("anneal_cap", 0.0, 1.0, false, s.train.anneal_cap);
  {
    int v = static_cast<int>(s.train.anneal_steps);
    get_int("anneal_steps", 1, v);
    s.train.anneal_steps = v;
  }
  get_int("batch_size", 1, s.train.batch_size);
  get_int("epochs", 1, s.train.epochs);
  get_int("threads", 0, s.train.threads);
  get_int("mc_samples", 1, s.train.mc_samples);
  if (j.contains("learning_rate")) {
    if (!j["learning_rate"].is_number() || !(j["learning_rate"].get<double>() > 0.0))
      violations.push_back("learning_rate: must be a positive number");
    else
      s.train.learning_rate = j["learning_rate"].get<double>();
  }
  if (j.contains("seed")) {
    if (!j["seed"].is_number_integer())
      violations.push_back("seed: expected an integer");
    else
      s.train.seed = j["seed"].get<std::uint64_t>();
  }
  if (j.contains("lambda")) {
    if (!j["lambda"].is_array())
      violations.push_back("lambda: expected an array of numbers");
    else {
      std::vector<double> lam;
      bool ok = true;
      for (const auto& v : j["lambda"]) {
        if (!v.is_number()) {
          violations.push_back("lambda: expected an array of numbers");
          ok = false;
          break;
        }
        lam.push_back(v.get<double>());
      }
      if (ok) s.train.lambda = std::move(lam);
    }
  }
  if (j.contains("objective")) {
    const std::string v = j["objective"].is_string() ? j["objective"].get<std::string>() : "";
    if (v == "subsampled")
      s.train.objective = poecf::Objective::subsampled;
    else if (v == "joint_only")
      s.train.objective = poecf::Objective::joint_only;
    else
      violations.push_back("objective: must be \"subsampled\" or \"joint_only\"");
  }
  get_bool("dedupe_single_domain", s.train.dedupe_single_domain);
  get_bool("trace_grad_norms", s.train.trace_grad_norms);

  if (!violations.empty()) throw CliError("config", "invalid train config", violations);
  return s;
}

int cmd_train(const std::string& data_dir, const std::string& config_path,
              const std::string& outdir, bool concat, const json& overrides) {
  json cfg_json = json::object();
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw CliError("io", "cannot open config file: " + config_path);
    try {
      in >> cfg_json;
    } catch (const json::exception& e) {
      throw CliError("config", std::string("config is not valid JSON: ") + e.what());
    }
    if (!cfg_json.is_object()) throw CliError("config", "config must be a JSON object");
  }
  for (const auto& [key, value] : overrides.items()) cfg_json[key] = value;
  TrainSettings s = parse_train_config(cfg_json);
  if (s.train.epochs < 1)
    throw CliError("config", "invalid train config", {"epochs: required (no default stopping rule)"});

  auto data = poecf::load_dataset_split(data_dir, "train");
  std::optional<poecf::ConcatInfo> concat_info;
  if (concat) {
    auto view = poecf::concat_view(data);
    concat_info = poecf::ConcatInfo{view.source_items, view.offsets};
    data = std::move(view.data);
  }
  std::vector<std::int32_t> item_counts;
  for (const auto& dom : data.domains) item_counts.push_back(dom.item_count);

  poecf::PoeModel model(s.model, item_counts, s.train.seed);
  if (s.train.lambda.empty())
    s.train.lambda.assign(static_cast<std::size_t>(data.domain_count()), 1.0);
  if (static_cast<int>(s.train.lambda.size()) != data.domain_count())
    throw CliError("config", "invalid train config",
                   {"lambda: needs one weight per domain (" + std::to_string(data.domain_count()) + ")"});

  const auto result = poecf::train(model, data, s.train);

  fs::create_directories(outdir);
  poecf::CheckpointMeta meta;
  meta.seed = s.train.seed;
  meta.step = result.steps;
  meta.lambda = s.train.lambda;
  meta.objective = s.train.objective == poecf::Objective::subsampled ? "subsampled" : "joint_only";
  meta.concat = concat_info;
  poecf::save_checkpoint(model, fs::path(outdir) / "checkpoint", meta);
  poecf::write_loss_csv(fs::path(outdir) / "loss.csv", result);
  if (!result.trace.empty())
    std::printf("trained %d epochs, %lld steps, final mean loss %.6f\n", s.train.epochs,
                result.steps, result.trace.back().mean_loss);
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

std::string default_label(const poecf::CheckpointMeta& meta) {
  std::string label = "lambda=";
  for (std::size_t i = 0; i < meta.lambda.size(); ++i) {
    if (i) label += ":";
    std::ostringstream os;
    os << meta.lambda[i];
    label += os.str();
  }
  return label;
}

int cmd_eval(const std::string& checkpoint_dir, const std::string& data_dir,
             const std::string& mode, int source, int target, std::vector<int> ks,
             const std::string& out_prefix, std::string label, const std::string& source_history,
             const std::string& ground_truth) {
  if (ks.empty()) ks = {10, 50};
  auto loaded = poecf::load_checkpoint(checkpoint_dir);
  const auto manifest = poecf::load_dataset_manifest(data_dir);
  const auto spec = poecf::load_split_spec(data_dir);
  const auto test = poecf::load_dataset_split(data_dir, "test");
  const auto [input, held] = poecf::fold_in_split(test, spec);
  const int d_count = test.domain_count();

  if (mode != "baseline-concat") {
    if (loaded.model.domain_count() != d_count)
      throw CliError("shape", "checkpoint has " + std::to_string(loaded.model.domain_count()) +
                                  " domains but the dataset has " + std::to_string(d_count));
    for (int d = 0; d < d_count; ++d)
      if (loaded.model.items(d) != test.domains[static_cast<std::size_t>(d)].item_count)
        throw CliError("shape", "domain " + std::to_string(d) + ": checkpoint expects " +
                                    std::to_string(loaded.model.items(d)) + " items, dataset has " +
                                    std::to_string(test.domains[static_cast<std::size_t>(d)].item_count));
  }
  auto check_domain = [&](int d, const char* what) {
    if (d < 0 || d >= d_count)
      throw CliError("usage", std::string(what) + " domain out of range [0, " +
                                  std::to_string(d_count) + ")");
  };

  poecf::EvalOptions opts;
  opts.ks = ks;
  if (source_history == "input")
    opts.source_history_full = false;
  else if (source_history != "full")
    throw CliError("usage", "--source-history must be full or input");
  if (ground_truth == "full")
    opts.ground_truth_full = true;
  else if (ground_truth != "held_out")
    throw CliError("usage", "--target-ground-truth must be held_out or full");

  poecf::EvalReport report;
  report.label = label.empty() ? default_label(loaded.meta) : label;

  std::vector<int> targets;
  if (target >= 0) {
    check_domain(target, "target");
    targets = {target};
  } else {
    for (int d = 0; d < d_count; ++d) targets.push_back(d);
  }

  if (mode == "single") {
    for (int t : targets)
      poecf::append_entries(report, "single", poecf::eval_single_domain(loaded.model, input, held, t, ks));
  } else if (mode == "cross") {
    if (source < 0 || target < 0)
      throw CliError("usage", "eval --mode cross needs --source and --target");
    check_domain(source, "source");
    const auto ev = poecf::eval_cross_domain(loaded.model, test, input, held, source, target, opts);
    poecf::append_entries(report, "cross(" + std::to_string(source) + "->" + std::to_string(target) + ")", ev);
  } else if (mode == "baseline-popularity") {
    const auto train = poecf::load_dataset_split(data_dir, "train");
    if (source >= 0) check_domain(source, "source");
    for (int t : targets) {
      const auto counts = poecf::domain_interaction_counts(train, t);
      const auto ev = poecf::eval_popularity(counts, test, input, held, t, ks, source);
      poecf::append_entries(report, "baseline-popularity", ev);
    }
  } else if (mode == "baseline-concat") {
    if (!loaded.meta.concat)
      throw CliError("shape", "checkpoint was not trained with --concat");
    for (int t : targets) {
      const auto ev = poecf::eval_concat(loaded.model, *loaded.meta.concat, test, input, held, t, ks);
      poecf::append_entries(report, "baseline-concat", ev);
    }
  } else {
    throw CliError("usage",
                   "--mode must be one of single, cross, baseline-popularity, baseline-concat");
  }

  poecf::write_report_json(fs::path(out_prefix).concat(".json"), report);
  poecf::write_report_csv(fs::path(out_prefix).concat(".csv"), report);
  for (const auto& e : report.entries)
    std::printf("%s domain=%d %s@%d = %.6f (n=%lld)\n", e.setting.c_str(), e.domain,
                e.metric.c_str(), e.k, e.value, e.n_users);
  (void)manifest;
  return 0;
}

// ---------------------------------------------------------------------------
// pareto
// ---------------------------------------------------------------------------

int cmd_pareto(const std::vector<std::string>& report_paths, const std::string& metric, int k,
               const std::string& out_path) {
  if (report_paths.empty()) throw CliError("usage", "pareto: at least one report is required");
  std::vector<poecf::ParetoPoint> points;
  std::vector<int> domains_seen;
  for (const auto& path : report_paths) {
    const auto report = poecf::read_report_json(path);
    std::map<int, double> by_domain;
    for (const auto& e : report.entries) {
      if (e.metric != metric || e.k != k) continue;
      if (by_domain.count(e.domain))
        throw CliError("inconsistent", path + ": several entries for domain " +
                                           std::to_string(e.domain) + " at " + metric + "@" +
                                           std::to_string(k));
      by_domain[e.domain] = e.value;
    }
    if (by_domain.empty())
      throw CliError("inconsistent", path + ": no entries for " + metric + "@" + std::to_string(k));
    std::vector<int> domains;
    poecf::ParetoPoint p;
    p.label = report.label;
    for (const auto& [d, v] : by_domain) {
      domains.push_back(d);
      p.w.push_back(v);
    }
    if (points.empty())
      domains_seen = domains;
    else if (domains != domains_seen)
      throw CliError("inconsistent", path + ": domain set differs from the first report");
    points.push_back(std::move(p));
  }
  const auto mask = poecf::pareto_front_mask(points);
  poecf::write_pareto_csv(out_path, points, mask);
  for (std::size_t i = 0; i < points.size(); ++i)
    std::printf("%s %s\n", points[i].label.c_str(), mask[i] ? "on-front" : "dominated");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Product-of-experts VAE for multi-domain collaborative filtering"};
  app.require_subcommand(1);

  // prepare
  auto* prepare = app.add_subcommand("prepare", "Binarize, filter, index and split raw TSV ratings");
  std::vector<std::string> prepare_inputs;
  std::string prepare_out;
  double binarize_threshold = 3.5;
  std::vector<std::int64_t> item_thresholds;
  std::int64_t min_user_interactions = 5;
  std::string user_filter_scope = "global";
  double train_fraction = 0.95, fold_in_fraction = 0.80;
  std::uint64_t seed = 1;
  prepare->add_option("--input", prepare_inputs, "per-domain TSV: user<TAB>item<TAB>rating")->required();
  prepare->add_option("--outdir", prepare_out, "dataset directory to create")->required();
  prepare->add_option("--binarize-threshold", binarize_threshold, "keep ratings >= threshold");
  prepare->add_option("--item-threshold", item_thresholds, "per-domain minimum reviews per item");
  prepare->add_option("--min-user-interactions", min_user_interactions, "minimum reviews per user");
  prepare->add_option("--user-filter-scope", user_filter_scope, "global or per-domain");
  prepare->add_option("--train-fraction", train_fraction, "user share of the train split");
  prepare->add_option("--fold-in", fold_in_fraction, "visible share of test interactions");
  prepare->add_option("--seed", seed, "split seed");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic multi-domain dataset");
  std::string synth_out;
  std::int32_t synth_users = 1000;
  std::vector<std::int32_t> synth_items;
  int synth_latent = 8;
  double synth_mean = 20.0, synth_rho = 1.0, synth_missing = 0.0;
  double synth_scale = 1.5, synth_pop = 0.5;
  std::uint64_t synth_seed = 1;
  double synth_train_fraction = 0.95, synth_fold_in = 0.80;
  synth->add_option("--outdir", synth_out)->required();
  synth->add_option("--users", synth_users, "number of users");
  synth->add_option("--items", synth_items, "items per domain (repeat per domain)")->required();
  synth->add_option("--latent", synth_latent, "generator latent dimension");
  synth->add_option("--mean-interactions", synth_mean, "Poisson mean per user per domain");
  synth->add_option("--rho", synth_rho, "cross-domain latent correlation in [0,1]");
  synth->add_option("--missing-fraction", synth_missing, "users with non-primary domains erased");
  synth->add_option("--affinity-scale", synth_scale, "softmax sharpness");
  synth->add_option("--popularity-spread", synth_pop, "per-item popularity offset stddev");
  synth->add_option("--seed", synth_seed);
  synth->add_option("--train-fraction", synth_train_fraction);
  synth->add_option("--fold-in", synth_fold_in);

  // train
  auto* train = app.add_subcommand("train", "Train a model on a dataset directory");
  std::string train_data, train_config, train_out;
  bool train_concat = false;
  int ov_epochs = -1, ov_batch = -1, ov_k = -1, ov_hidden = -1, ov_threads = -1;
  double ov_lr = -1.0;
  std::int64_t ov_seed = -1;
  std::vector<double> ov_lambda;
  std::string ov_objective;
  train->add_option("--data", train_data, "dataset directory")->required();
  train->add_option("--config", train_config, "JSON config (flags override fields)");
  train->add_option("--outdir", train_out, "output directory for checkpoint and loss trace")->required();
  train->add_flag("--concat", train_concat, "train on the merged single-domain view");
  train->add_option("--epochs", ov_epochs);
  train->add_option("--batch-size", ov_batch);
  train->add_option("--k", ov_k, "latent dimension");
  train->add_option("--hidden", ov_hidden, "hidden layer width");
  train->add_option("--threads", ov_threads);
  train->add_option("--learning-rate", ov_lr);
  train->add_option("--seed", ov_seed);
  train->add_option("--lambda", ov_lambda, "per-domain loss weights");
  train->add_option("--objective", ov_objective, "subsampled or joint_only");

  // eval
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset directory");
  std::string eval_checkpoint, eval_data, eval_mode = "single", eval_out, eval_label;
  std::string eval_source_history = "full", eval_ground_truth = "held_out";
  int eval_source = -1, eval_target = -1;
  std::vector<int> eval_ks;
  eval->add_option("--checkpoint", eval_checkpoint)->required();
  eval->add_option("--data", eval_data)->required();
  eval->add_option("--mode", eval_mode, "single | cross | baseline-popularity | baseline-concat");
  eval->add_option("--source", eval_source, "source domain (cross mode)");
  eval->add_option("--target", eval_target, "target domain (default: all)");
  eval->add_option("--K", eval_ks, "cutoffs (default 10 and 50)");
  eval->add_option("--out", eval_out, "output prefix for .json and .csv")->required();
  eval->add_option("--label", eval_label, "report label (default from checkpoint lambda)");
  eval->add_option("--source-history", eval_source_history, "full or input (cross mode)");
  eval->add_option("--target-ground-truth", eval_ground_truth, "held_out or full (cross mode)");

  // pareto
  auto* pareto = app.add_subcommand("pareto", "Mark the Pareto front across eval reports");
  std::vector<std::string> pareto_reports;
  std::string pareto_metric = "ndcg", pareto_out;
  int pareto_k = 50;
  pareto->add_option("reports", pareto_reports, "eval report .json files")->required();
  pareto->add_option("--metric", pareto_metric, "recall or ndcg");
  pareto->add_option("--K", pareto_k);
  pareto->add_option("--out", pareto_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    json err;
    err["error"] = {{"type", "usage"}, {"message", e.what()}};
    std::cerr << err.dump() << "\n";
    return e.get_exit_code() == 0 ? 1 : e.get_exit_code();
  }

  try {
    if (prepare->parsed())
      return cmd_prepare(prepare_inputs, prepare_out, binarize_threshold, item_thresholds,
                         min_user_interactions, user_filter_scope, train_fraction,
                         fold_in_fraction, seed);
    if (synth->parsed())
      return cmd_synth(synth_out, synth_users, synth_items, synth_latent, synth_mean, synth_rho,
                       synth_missing, synth_scale, synth_pop, synth_seed, synth_train_fraction,
                       synth_fold_in);
    if (train->parsed()) {
      json overrides = json::object();
      if (ov_epochs >= 0) overrides["epochs"] = ov_epochs;
      if (ov_batch >= 0) overrides["batch_size"] = ov_batch;
      if (ov_k >= 0) overrides["k"] = ov_k;
      if (ov_hidden >= 0) overrides["hidden"] = ov_hidden;
      if (ov_threads >= 0) overrides["threads"] = ov_threads;
      if (ov_lr > 0) overrides["learning_rate"] = ov_lr;
      if (ov_seed >= 0) overrides["seed"] = ov_seed;
      if (!ov_lambda.empty()) overrides["lambda"] = ov_lambda;
      if (!ov_objective.empty()) overrides["objective"] = ov_objective;
      return cmd_train(train_data, train_config, train_out, train_concat, overrides);
    }
    if (eval->parsed())
      return cmd_eval(eval_checkpoint, eval_data, eval_mode, eval_source, eval_target, eval_ks,
                      eval_out, eval_label, eval_source_history, eval_ground_truth);
    if (pareto->parsed()) return cmd_pareto(pareto_reports, pareto_metric, pareto_k, pareto_out);
  } catch (const CliError& e) {
    json err;
    err["error"] = {{"type", e.type}, {"message", e.what()}};
    if (!e.violations.empty()) err["error"]["violations"] = e.violations;
    std::cerr << err.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    json err;
    err["error"] = {{"type", "runtime"}, {"message", e.what()}};
    std::cerr << err.dump() << "\n";
    return 1;
  }
  return 0;
}
