#include "transtailor/cli/commands.hpp"

#include <algorithm>
#include <cmath>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <tuple>

#include "transtailor/baselines.hpp"
#include "transtailor/nn/serialize.hpp"
#include "transtailor/rng.hpp"
#include "transtailor/tailor/tailor.hpp"
#include "transtailor/train.hpp"
#include "transtailor/verify.hpp"

namespace transtailor::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kPretrainModelTag = 1;
constexpr std::uint64_t kPretrainSplitTag = 2;

void write_json(const json& j, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + " is not valid JSON: " + e.what());
  }
}

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

// Splits a labelled pool into a training part and a held-out part, taking
// as many training images per class as the smallest class allows.
data::TargetSplit holdout_split(const data::Dataset& ds, double val_fraction, std::uint64_t seed) {
  const auto counts = class_counts(ds);
  std::int64_t per_class = *std::min_element(counts.begin(), counts.end());
  per_class -= static_cast<std::int64_t>(std::ceil(val_fraction * static_cast<double>(per_class)));
  if (per_class < 1) throw DataError("source dataset too small for a train/validation split");
  return data::sample_target(ds, {static_cast<int>(per_class), val_fraction, seed});
}

// Up to `per_class` examples of each class, drawn under the seed.
data::Dataset per_class_sample(const data::Dataset& ds, int per_class, std::uint64_t seed) {
  if (per_class < 1) throw ConfigError("source_importance_per_class must be >= 1");
  std::vector<std::vector<std::int64_t>> pools(static_cast<std::size_t>(ds.class_count));
  for (std::int64_t i = 0; i < ds.size(); ++i) pools[ds.labels[i]].push_back(i);
  std::vector<std::int64_t> picked;
  for (std::size_t c = 0; c < pools.size(); ++c) {
    Rng rng = Rng::derive(seed, c);
    rng.shuffle(pools[c]);
    const auto take = std::min<std::size_t>(pools[c].size(), static_cast<std::size_t>(per_class));
    picked.insert(picked.end(), pools[c].begin(), pools[c].begin() + static_cast<std::int64_t>(take));
  }
  return data::subset(ds, picked);
}

std::vector<float> means_from_sidecar(const json& sidecar) {
  return sidecar.at("channel_means").get<std::vector<float>>();
}

fs::path sidecar_path(const fs::path& checkpoint) {
  fs::path p = checkpoint;
  return p.replace_extension(".json");
}

}  // namespace

json to_json(const HistoryRecord& r) {
  return {{"method", r.method},
          {"iteration", r.iteration},
          {"flops", r.flops},
          {"flops_reduction", r.flops_reduction},
          {"val_accuracy", r.val_accuracy},
          {"accepted", r.accepted},
          {"wall_seconds", r.wall_seconds},
          {"checkpoint", r.checkpoint}};
}

HistoryRecord history_record_from_json(const json& j) {
  HistoryRecord r;
  r.method = j.at("method").get<std::string>();
  r.iteration = j.at("iteration").get<int>();
  r.flops = j.at("flops").get<std::uint64_t>();
  r.flops_reduction = j.at("flops_reduction").get<double>();
  r.val_accuracy = j.at("val_accuracy").get<double>();
  r.accepted = j.at("accepted").get<bool>();
  r.wall_seconds = j.at("wall_seconds").get<double>();
  r.checkpoint = j.at("checkpoint").get<std::string>();
  return r;
}

std::vector<HistoryRecord> read_history(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open history " + path.string());
  std::vector<HistoryRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      out.push_back(history_record_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw DataError("malformed history line in " + path.string() + ": " + e.what());
    }
  }
  return out;
}

PretrainResult cmd_pretrain(const RunConfig& cfg, std::ostream& log) {
  check_dataset_spec(cfg.source, "source");
  const auto& p = cfg.pretrain;
  if (p.epochs < 1 || p.batch_size < 1 || !(p.lr > 0.0f) || p.val_fraction <= 0.0 ||
      p.val_fraction >= 1.0) {
    throw ConfigError("pretrain: epochs, batch_size, lr > 0 and val_fraction in (0,1) required");
  }
  const data::Dataset source = load_dataset(cfg.source);
  const std::uint64_t split_seed = Rng::derive(cfg.seed, kPretrainSplitTag).next_u64();
  const auto split = holdout_split(source, p.val_fraction, split_seed);
  const auto norm = data::normalize(split.train);
  const auto val = data::apply_normalization(split.val, norm.channel_means);

  nn::ModelGraph model =
      nn::vgg_mini({source.channels(), source.height(), source.width()}, source.class_count,
                   Rng::derive(cfg.seed, kPretrainModelTag).next_u64());
  fs::create_directories(cfg.out);
  save_run_config(cfg, fs::path(cfg.out) / "config.json");
  std::ofstream epochs_log(fs::path(cfg.out) / "pretrain_log.jsonl");

  model.set_trainable(true);
  Sgd sgd;
  sgd.add_group(model.parameters(), {p.lr, p.momentum, p.weight_decay});
  auto logits = [&](const Tensor& images) { return nn::forward(model, images); };
  double val_acc = 0.0;
  for (int epoch = 0; epoch < p.epochs; ++epoch) {
    if (epoch == p.decay_epoch) sgd.scale_learning_rate(p.decay_factor);
    const auto loss =
        fit(sgd, logits, norm.dataset, 1, p.batch_size, 0, Rng::derive(cfg.seed, 100 + epoch).next_u64());
    val_acc = accuracy(model, val);
    epochs_log << json{{"epoch", epoch}, {"train_loss", loss.front()}, {"val_accuracy", val_acc}}.dump()
               << '\n';
    log << "pretrain epoch " << epoch + 1 << "/" << p.epochs << " loss " << fixed(loss.front(), 4)
        << " val " << fixed(val_acc, 2) << "%\n";
  }
  model.set_trainable(false);

  const fs::path checkpoint = fs::path(cfg.out) / "model.ttm";
  nn::save_model(model, checkpoint);
  json sidecar = nn::manifest(model);
  sidecar["channel_means"] = norm.channel_means;
  sidecar["val_accuracy"] = val_acc;
  sidecar["source"] = cfg.source.format == "synthetic" ? cfg.source.task : cfg.source.format;
  sidecar["split"] = {{"seed", split_seed}, {"val_fraction", p.val_fraction}};
  write_json(sidecar, sidecar_path(checkpoint));
  return {checkpoint, val_acc};
}

TailorResult cmd_tailor(const RunConfig& cfg, std::ostream& log) {
  if (cfg.pretrained.empty()) throw ConfigError("tailor: 'pretrained' checkpoint path is required");
  const fs::path checkpoint = cfg.pretrained;
  if (!fs::exists(checkpoint)) {
    throw ConfigError("tailor: pretrained checkpoint " + checkpoint.string() + " does not exist");
  }
  if (!fs::exists(sidecar_path(checkpoint))) {
    throw ConfigError("tailor: checkpoint metadata " + sidecar_path(checkpoint).string() +
                      " does not exist");
  }
  check_dataset_spec(cfg.target, "target");
  if (cfg.method == Method::source_taylor) check_dataset_spec(cfg.source, "source");
  cfg.tailor.validate();

  const nn::ModelGraph pretrained = nn::load_model(checkpoint);
  const json sidecar = read_json(sidecar_path(checkpoint));
  const auto means = means_from_sidecar(sidecar);
  const auto pool = data::apply_normalization(load_dataset(cfg.target), means);
  const auto& in = pretrained.input_shape();
  if (pool.channels() != in.channels || pool.height() != in.height || pool.width() != in.width) {
    throw DataError("target images are " + std::to_string(pool.channels()) + "x" +
                    std::to_string(pool.height()) + "x" + std::to_string(pool.width()) +
                    ", pretrained model expects " + std::to_string(in.channels) + "x" +
                    std::to_string(in.height) + "x" + std::to_string(in.width));
  }
  data::TargetTaskSpec task = cfg.target_task;
  task.seed = cfg.seed;
  const auto split = data::sample_target(pool, task);
  tailor::TailorConfig tcfg = cfg.tailor;
  tcfg.seed = cfg.seed;

  const fs::path out = cfg.out;
  fs::create_directories(out / "checkpoints");
  save_run_config(cfg, out / "config.json");
  std::ofstream history_out(out / "history.jsonl");
  const std::string method = to_string(cfg.method);

  TailorResult result;
  auto emit = [&](const HistoryRecord& r) {
    history_out << to_json(r).dump() << '\n';
    history_out.flush();
    result.history.push_back(r);
    log << method << " iteration " << r.iteration << " flops " << r.flops << " reduction "
        << fixed(100.0 * r.flops_reduction, 1) << "% val " << fixed(r.val_accuracy, 2) << "%"
        << (r.accepted ? "" : " (rejected)") << '\n';
  };
  auto save_checkpoint = [&](int iteration, const nn::ModelGraph& m) {
    char name[32];
    std::snprintf(name, sizeof name, "iter_%03d", iteration);
    const fs::path rel = fs::path("checkpoints") / (std::string(name) + ".ttm");
    nn::save_model(m, out / rel);
    nn::save_manifest(m, out / "checkpoints" / (std::string(name) + ".json"));
    return rel.generic_string();
  };
  auto observer = [&](const tailor::IterationRecord& r, const nn::ModelGraph& m) {
    emit({method, r.iteration, r.flops, r.flops_reduction, r.val_accuracy, r.accepted, r.seconds,
          save_checkpoint(r.iteration, m)});
  };

  nn::ModelGraph final_model;
  std::uint64_t reference_flops = 0;
  if (cfg.method == Method::ft || cfg.method == Method::ft_full) {
    const auto start = std::chrono::steady_clock::now();
    final_model = cfg.method == Method::ft ? baselines::ft_head(pretrained, split, tcfg)
                                           : baselines::ft_full(pretrained, split, tcfg);
    reference_flops = nn::flops(final_model);
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    emit({method, 0, reference_flops, 0.0, accuracy(final_model, split.val), true, seconds,
          save_checkpoint(0, final_model)});
    result.stop_reason = "none";
  } else {
    tailor::SearchState state;
    if (cfg.method == Method::transtailor) {
      const std::string source_name = sidecar.value("source", std::string("source"));
      state = tailor::search_optimal(pretrained, {source_name, pretrained.class_count()}, split, tcfg,
                                     observer)
                  .state;
    } else if (cfg.method == Method::l1) {
      state = baselines::l1_prune_pipeline(pretrained, split, tcfg, observer);
    } else {
      const auto source = load_dataset(cfg.source);
      const auto& s = sidecar.at("split");
      const auto held_out =
          holdout_split(source, s.at("val_fraction").get<double>(), s.at("seed").get<std::uint64_t>())
              .val;
      const auto importance_data = per_class_sample(data::apply_normalization(held_out, means),
                                                    cfg.source_importance_per_class, cfg.seed);
      state = baselines::source_taylor_prune_pipeline(pretrained, importance_data, split, tcfg,
                                                      observer);
    }
    final_model = state.best;
    reference_flops = state.reference_flops;
    result.stop_reason = tailor::to_string(state.stop_reason);
  }

  // The final sub-model is the last accepted record.
  for (const auto& r : result.history) {
    if (r.accepted) result.final = r;
  }
  nn::save_model(final_model, out / "final.ttm");
  nn::save_manifest(final_model, out / "final.json");

  std::ofstream csv(out / "summary.csv");
  csv << "method,iteration,flops,flops_reduction,val_accuracy,accepted,checkpoint\n";
  for (const auto& r : result.history) {
    csv << r.method << ',' << r.iteration << ',' << r.flops << ',' << fixed(r.flops_reduction, 6)
        << ',' << fixed(r.val_accuracy, 4) << ',' << (r.accepted ? 1 : 0) << ',' << r.checkpoint
        << '\n';
  }

  write_json({{"name", cfg.name},
              {"method", method},
              {"target", cfg.target.format == "synthetic" ? cfg.target.task : cfg.target.format},
              {"seed", cfg.seed},
              {"stop_reason", result.stop_reason},
              {"reference_flops", reference_flops},
              {"final_iteration", result.final.iteration},
              {"final_flops", result.final.flops},
              {"final_flops_reduction", result.final.flops_reduction},
              {"final_val_accuracy", result.final.val_accuracy},
              {"original_filters", pretrained.filter_counts()},
              {"final_filters", final_model.filter_counts()}},
             out / "result.json");
  return result;
}

Report cmd_report(const std::vector<fs::path>& run_dirs, const fs::path& out_dir) {
  if (run_dirs.empty()) throw ConfigError("report: no run directories given");
  Report report;
  for (const auto& dir : run_dirs) {
    if (!fs::is_directory(dir)) throw ConfigError("report: " + dir.string() + " is not a directory");
    const json result = read_json(dir / "result.json");
    RunSummary run;
    run.run = fs::path(dir).lexically_normal().filename().string();
    if (run.run.empty()) run.run = fs::path(dir).lexically_normal().parent_path().filename().string();
    run.method = result.at("method").get<std::string>();
    run.target = result.at("target").get<std::string>();
    run.seed = result.at("seed").get<std::uint64_t>();
    run.history = read_history(dir / "history.jsonl");
    const auto original = result.at("original_filters").get<std::vector<int>>();
    const auto final = result.at("final_filters").get<std::vector<int>>();
    if (original.size() != final.size()) {
      throw DataError("report: " + dir.string() + " has mismatched filter tables");
    }
    for (std::size_t c = 0; c < original.size(); ++c) {
      run.layers.push_back({static_cast<int>(c), original[c], final[c]});
    }
    report.runs.push_back(std::move(run));
  }

  fs::create_directories(out_dir);
  std::ofstream series(out_dir / "accuracy_vs_flops.csv");
  series << "run,method,target,seed,iteration,flops,flops_reduction,val_accuracy,accepted\n";
  std::ofstream pruned(out_dir / "pruned_filters.csv");
  pruned << "run,method,target,seed,conv_layer,original,final,pruned\n";
  // (method, target, conv layer) -> (sum of pruned, runs)
  std::map<std::tuple<std::string, std::string, int>, std::pair<double, int>> by_target;
  for (const auto& run : report.runs) {
    for (const auto& r : run.history) {
      series << run.run << ',' << run.method << ',' << run.target << ',' << run.seed << ','
             << r.iteration << ',' << r.flops << ',' << fixed(r.flops_reduction, 6) << ','
             << fixed(r.val_accuracy, 4) << ',' << (r.accepted ? 1 : 0) << '\n';
    }
    for (const auto& l : run.layers) {
      pruned << run.run << ',' << run.method << ',' << run.target << ',' << run.seed << ','
             << l.conv_index << ',' << l.original << ',' << l.final << ',' << l.original - l.final
             << '\n';
      auto& cell = by_target[{run.method, run.target, l.conv_index}];
      cell.first += l.original - l.final;
      cell.second += 1;
    }
  }
  std::ofstream dist(out_dir / "pruned_filters_by_target.csv");
  dist << "method,target,conv_layer,mean_pruned,runs\n";
  for (const auto& [key, cell] : by_target) {
    dist << std::get<0>(key) << ',' << std::get<1>(key) << ',' << std::get<2>(key) << ','
         << fixed(cell.first / cell.second, 4) << ',' << cell.second << '\n';
  }
  return report;
}

bool cmd_verify(const VerifyOptions& options, std::ostream& out) {
  testing::set_gradient_fault(options.fault_op);
  bool ok = true;
  auto verdict = [&](bool pass) {
    ok = ok && pass;
    return pass ? "PASS" : "FAIL";
  };
  std::vector<verify::GradCheck> grads;
  try {
    grads = verify::gradient_checks(options.gradient_trials, options.seed);
  } catch (...) {
    testing::set_gradient_fault("");
    throw;
  }
  testing::set_gradient_fault("");
  for (const auto& g : grads) {
    const bool pass = g.failed_trials == 0;
    out << "gradient " << g.op << ": trials=" << g.trials << " failed=" << g.failed_trials
        << " max_rel_error=" << g.max_rel_error << " " << verdict(pass) << '\n';
  }
  const auto prune = verify::prune_equivalence(options.equivalence_trials, options.seed + 1);
  out << "prune-equivalence: trials=" << prune.trials << " max_abs_diff=" << prune.max_abs_diff
      << " " << verdict(prune.max_abs_diff < verify::kEquivalenceTolerance) << '\n';
  const auto fold = verify::fold_equivalence(options.equivalence_trials, options.seed + 2);
  out << "fold-equivalence: trials=" << fold.trials << " max_abs_diff=" << fold.max_abs_diff << " "
      << verdict(fold.max_abs_diff < verify::kEquivalenceTolerance) << '\n';
  if (!options.oracle_seeds.empty()) {
    const auto oracle = verify::taylor_oracle_check(options.oracle_seeds);
    std::ostringstream seeds;
    for (std::size_t i = 0; i < oracle.rho.size(); ++i) {
      seeds << (i ? "," : "") << fixed(oracle.rho[i], 3);
    }
    out << "oracle-spearman: seeds=" << oracle.rho.size() << " mean=" << fixed(oracle.mean, 4)
        << " per_seed=[" << seeds.str() << "] "
        << verdict(oracle.mean >= verify::kOracleThreshold) << '\n';
  }
  out << "verify: " << (ok ? "PASS" : "FAIL") << '\n';
  return ok;
}

}  // namespace transtailor::cli
