// End-to-end acceptance run: property checks plus the desk transfer recipe.
// Prints one PASS/FAIL line per criterion and exits non-zero if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#include "transtailor/cli/commands.hpp"
#include "transtailor/nn/serialize.hpp"
#include "transtailor/tailor/tailor.hpp"
#include "transtailor/verify.hpp"

using namespace transtailor;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::vector<std::uint64_t> kSeeds{0, 1, 2};
const std::vector<double> kMatchedLevels{0.3, 0.4, 0.5};
constexpr int kMatchedSteps = 5;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

std::string fmt(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

class Acceptance {
 public:
  Acceptance() {
    const char* env = std::getenv("TRANSTAILOR_ACCEPTANCE_DIR");
    work_ = env && *env ? fs::path(env) : fs::temp_directory_path() / "transtailor_acceptance";
    fs::remove_all(work_);
    fs::create_directories(work_);
    log_.open(work_ / "acceptance.log");
  }

  int run() {
    check(1, "gradient soundness", 60, [&] { return gradients(); });
    check(2, "structural prune equivalence", 60, [&] { return prune_equivalence(); });
    check(3, "fold equivalence", 60, [&] { return fold_equivalence(); });
    check(4, "taylor vs leave-one-out oracle", 300, [&] { return oracle(); });
    check(5, "transtailor vs ft", 1800, [&] { return versus_ft(); });
    check(6, "matched-flops comparison", 2700, [&] { return matched_flops(); });
    check(7, "search loop mechanics", 600, [&] { return mechanics(); });
    check(8, "ranking invariance to loss scale", 60, [&] { return ranking_invariance(); });
    check(9, "reproducible history", 0, [&] { return reproducibility(); });
    check(10, "task-dependent pruned-filter distribution", 0, [&] { return distributions(); });
    std::cout << "acceptance: " << passed_ << "/10 passed (artifacts in " << work_.string() << ")\n";
    return passed_ == 10 ? 0 : 1;
  }

 private:
  // Runs one criterion; a positive limit also bounds its wall time in seconds.
  void check(int id, const std::string& name, double limit, const std::function<Outcome()>& body) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = body();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::string timing = "time=" + fmt(seconds, 1) + "s";
    if (limit > 0) {
      timing += " limit=" + fmt(limit, 0) + "s";
      if (seconds > limit) o.pass = false;
    }
    if (o.pass) ++passed_;
    std::cout << "criterion " << id << " " << name << ": " << (o.pass ? "PASS" : "FAIL") << " "
              << o.detail << " " << timing << std::endl;
  }

  Outcome gradients() {
    const auto checks = verify::gradient_checks(100, 0);
    bool ok = !checks.empty();
    double worst = 0.0;
    std::string worst_op;
    int trials = 0;
    for (const auto& g : checks) {
      ok = ok && g.failed_trials == 0 && g.trials >= 100 && g.max_rel_error < verify::kGradTolerance;
      trials += g.trials;
      if (g.max_rel_error >= worst) {
        worst = g.max_rel_error;
        worst_op = g.op;
      }
    }
    return {ok, "ops=" + std::to_string(checks.size()) + " trials=" + std::to_string(trials) +
                    " max_rel_error=" + sci(worst) + " (" + worst_op + ") tolerance=1e-3"};
  }

  Outcome prune_equivalence() {
    const auto r = verify::prune_equivalence(50, 0);
    return {r.trials == 50 && r.max_abs_diff < verify::kEquivalenceTolerance,
            "trials=" + std::to_string(r.trials) + " max_abs_diff=" + sci(r.max_abs_diff) +
                " tolerance=1e-5"};
  }

  Outcome fold_equivalence() {
    const auto r = verify::fold_equivalence(50, 0);
    return {r.trials == 50 && r.max_abs_diff < verify::kEquivalenceTolerance,
            "trials=" + std::to_string(r.trials) + " max_abs_diff=" + sci(r.max_abs_diff) +
                " tolerance=1e-5"};
  }

  Outcome oracle() {
    const auto r = verify::taylor_oracle_check({0, 1, 2, 3, 4});
    std::string per;
    for (double v : r.rho) per += (per.empty() ? "" : ",") + fmt(v, 3);
    return {r.rho.size() == 5 && r.mean >= verify::kOracleThreshold,
            "mean_spearman=" + fmt(r.mean, 4) + " per_seed=[" + per + "] threshold=0.7"};
  }

  // --- desk recipe -------------------------------------------------------

  static fs::path config_dir() { return TRANSTAILOR_CONFIG_DIR; }

  const fs::path& pretrained() {
    if (pretrained_.empty()) {
      auto cfg = cli::load_run_config(config_dir() / "desk-pretrain.json");
      cfg.out = (work_ / "pretrain").string();
      const auto r = cli::cmd_pretrain(cfg, log_);
      log_ << "pretrain source val accuracy " << r.val_accuracy << "\n";
      pretrained_ = r.checkpoint;
    }
    return pretrained_;
  }

  cli::RunConfig desk_config(const std::string& target, const std::string& method,
                             std::uint64_t seed, const std::string& run) {
    auto cfg = cli::load_run_config(config_dir() / ("desk-target-" + target + ".json"));
    cfg.method = cli::parse_method(method);
    cfg.seed = seed;
    cfg.tailor.seed = seed;
    cfg.target_task.seed = seed;
    cfg.pretrained = pretrained().string();
    cfg.out = (work_ / run).string();
    return cfg;
  }

  // Runs once per run name and caches the result.
  const cli::TailorResult& tailor_run(const cli::RunConfig& cfg) {
    const std::string key = fs::path(cfg.out).filename().string();
    auto it = runs_.find(key);
    if (it == runs_.end()) {
      log_ << "== " << key << "\n";
      it = runs_.emplace(key, cli::cmd_tailor(cfg, log_)).first;
    }
    return it->second;
  }

  static std::string run_name(const std::string& target, const std::string& method,
                              std::uint64_t seed, const std::string& tag = "") {
    return target + "-" + method + "-s" + std::to_string(seed) + tag;
  }

  Outcome versus_ft() {
    double tt_sum = 0.0, ft_sum = 0.0, min_reduction = 1.0;
    std::string per;
    for (auto seed : kSeeds) {
      const auto& tt = tailor_run(desk_config("a", "transtailor", seed, run_name("a", "transtailor", seed)));
      const auto& ft = tailor_run(desk_config("a", "ft", seed, run_name("a", "ft", seed)));
      tt_sum += tt.final.val_accuracy;
      ft_sum += ft.final.val_accuracy;
      min_reduction = std::min(min_reduction, tt.final.flops_reduction);
      per += (per.empty() ? "" : ",") + fmt(tt.final.val_accuracy, 1) + "/" +
             fmt(ft.final.val_accuracy, 1) + "@" + fmt(100 * tt.final.flops_reduction, 0) + "%";
    }
    const double n = static_cast<double>(kSeeds.size());
    const double tt_mean = tt_sum / n, ft_mean = ft_sum / n;
    return {tt_mean >= ft_mean && min_reduction >= 0.10,
            "transtailor_mean=" + fmt(tt_mean) + " ft_mean=" + fmt(ft_mean) +
                " min_flops_reduction=" + fmt(100 * min_reduction, 1) + "% per_seed(tt/ft@red)=[" +
                per + "]"};
  }

  // Accuracy at a FLOPs-reduction level, linear between history points.
  static double accuracy_at(const std::vector<cli::HistoryRecord>& history, double level) {
    for (std::size_t i = 1; i < history.size(); ++i) {
      const auto& a = history[i - 1];
      const auto& b = history[i];
      if (a.flops_reduction <= level && level <= b.flops_reduction) {
        const double t = (level - a.flops_reduction) / (b.flops_reduction - a.flops_reduction);
        return a.val_accuracy + t * (b.val_accuracy - a.val_accuracy);
      }
    }
    throw Error("trajectory does not reach " + fmt(100 * level, 0) + "% FLOPs reduction");
  }

  Outcome matched_flops() {
    const std::vector<std::string> methods{"transtailor", "l1", "source-taylor"};
    std::map<std::string, std::vector<double>> means;
    for (const auto& method : methods) {
      std::vector<double> sum(kMatchedLevels.size(), 0.0);
      for (auto seed : kSeeds) {
        auto cfg = desk_config("a", method, seed, run_name("a", method, seed, "-fixed"));
        cfg.tailor.tau = tailor::TailorConfig::kNeverStop;
        cfg.tailor.max_iterations = kMatchedSteps;
        const auto& r = tailor_run(cfg);
        for (std::size_t l = 0; l < kMatchedLevels.size(); ++l) {
          sum[l] += accuracy_at(r.history, kMatchedLevels[l]);
        }
      }
      for (auto& s : sum) s /= static_cast<double>(kSeeds.size());
      means[method] = sum;
    }
    bool ok = true;
    std::string detail;
    for (std::size_t l = 0; l < kMatchedLevels.size(); ++l) {
      const double tt = means["transtailor"][l];
      const double l1 = means["l1"][l];
      const double src = means["source-taylor"][l];
      ok = ok && tt >= l1 && tt >= src;
      detail += (detail.empty() ? "" : " ") + fmt(100 * kMatchedLevels[l], 0) + "%:tt=" + fmt(tt) +
                ",l1=" + fmt(l1) + ",source-taylor=" + fmt(src);
    }
    return {ok, detail};
  }

  // The target split exactly as cmd_tailor builds it.
  data::TargetSplit desk_split(const cli::RunConfig& cfg) {
    const auto sidecar = json::parse(std::ifstream(fs::path(cfg.pretrained).replace_extension(".json")));
    const auto pool = data::apply_normalization(cli::load_dataset(cfg.target),
                                                sidecar.at("channel_means").get<std::vector<float>>());
    return data::sample_target(pool, cfg.target_task);
  }

  Outcome mechanics() {
    auto cfg = desk_config("a", "transtailor", 0, "mechanics");
    const auto split = desk_split(cfg);
    const auto pretrained_model = nn::load_model(cfg.pretrained);
    const double budget = cfg.tailor.budget_fraction;
    const int bound = static_cast<int>(std::ceil(1.0 / budget)) + 1;

    auto strict_decrease = [](const tailor::SearchState& s) {
      for (std::size_t i = 1; i < s.history.size(); ++i) {
        if (!(s.history[i].flops < s.history[i - 1].flops)) return false;
      }
      return true;
    };

    // tau = 0: every accepted step is at least as accurate as the last, and
    // the loop ends at the first drop (or the guard, if none occurs).
    auto zero = cfg.tailor;
    zero.tau = 0.0;
    const auto z = tailor::search_optimal(pretrained_model, {"source", 10}, split, zero).state;
    bool zero_ok = strict_decrease(z) && z.iteration <= bound;
    for (std::size_t i = 1; i < z.history.size(); ++i) {
      const bool last = i + 1 == z.history.size();
      const bool dropped = z.history[i].val_accuracy < z.history[i - 1].val_accuracy;
      if (last && z.stop_reason == tailor::StopReason::accuracy_drop) {
        zero_ok = zero_ok && dropped && !z.history[i].accepted;
      } else {
        zero_ok = zero_ok && !dropped && z.history[i].accepted;
      }
    }
    zero_ok = zero_ok && (z.stop_reason == tailor::StopReason::accuracy_drop ||
                          z.stop_reason == tailor::StopReason::filter_guard);

    // tau = infinity: runs until the filter guard.
    auto never = cfg.tailor;
    never.tau = tailor::TailorConfig::kNeverStop;
    const auto inf = tailor::search_optimal(pretrained_model, {"source", 10}, split, never).state;
    bool inf_ok = inf.stop_reason == tailor::StopReason::filter_guard && strict_decrease(inf) &&
                  inf.iteration <= bound;
    for (const auto& r : inf.history) inf_ok = inf_ok && r.accepted;

    return {zero_ok && inf_ok,
            "tau=0:{stop=" + tailor::to_string(z.stop_reason) + ",iterations=" +
                std::to_string(z.iteration) + "} tau=inf:{stop=" + tailor::to_string(inf.stop_reason) +
                ",iterations=" + std::to_string(inf.iteration) + ",final_reduction=" +
                fmt(100 * inf.history.back().flops_reduction, 1) + "%} bound=" + std::to_string(bound)};
  }

  Outcome ranking_invariance() {
    auto cfg = desk_config("a", "transtailor", 0, "invariance");
    const auto split = desk_split(cfg);
    const auto start = tailor::finetune_head(nn::load_model(cfg.pretrained), split, cfg.tailor);
    const auto alpha = tailor::train_factors(start, tailor::init_factors(start, 1), split.train, cfg.tailor);
    auto plan_for = [&](float scale) {
      return tailor::build_prune_plan(
                 start, tailor::taylor_importance(start, alpha, split.train, cfg.tailor.batch_size, scale),
                 cfg.tailor)
          .filters;
    };
    const auto base = plan_for(1.0f);
    bool ok = !base.empty();
    std::string detail = "plan_size=" + std::to_string(base.size());
    for (float c : {0.5f, 2.0f, 10.0f}) {
      const bool same = plan_for(c) == base;
      ok = ok && same;
      detail += " c=" + fmt(c, 1) + ":" + (same ? "identical" : "differs");
    }
    return {ok, detail};
  }

  static std::vector<std::string> history_without_timing(const fs::path& path) {
    std::vector<std::string> lines;
    std::ifstream in(path);
    std::string line;
    while (std::getline(in, line)) {
      json j = json::parse(line);
      j.erase("wall_seconds");
      lines.push_back(j.dump());
    }
    return lines;
  }

  Outcome reproducibility() {
    const auto first = desk_config("a", "transtailor", 0, run_name("a", "transtailor", 0));
    tailor_run(first);
    const auto second = desk_config("a", "transtailor", 0, run_name("a", "transtailor", 0, "-rerun"));
    tailor_run(second);
    const auto a = history_without_timing(fs::path(first.out) / "history.jsonl");
    const auto b = history_without_timing(fs::path(second.out) / "history.jsonl");
    return {!a.empty() && a == b,
            "records=" + std::to_string(a.size()) + "/" + std::to_string(b.size()) +
                (a == b ? " identical" : " differ")};
  }

  Outcome distributions() {
    std::vector<fs::path> dirs;
    for (const std::string target : {"a", "b"}) {
      for (auto seed : kSeeds) {
        const auto cfg = desk_config(target, "transtailor", seed, run_name(target, "transtailor", seed));
        tailor_run(cfg);
        dirs.emplace_back(cfg.out);
      }
    }
    const auto report = cli::cmd_report(dirs, work_ / "report");
    std::map<std::string, std::vector<double>> mean_pruned;
    for (const auto& run : report.runs) {
      auto& v = mean_pruned[run.target];
      v.resize(run.layers.size(), 0.0);
      for (const auto& l : run.layers) {
        v[static_cast<std::size_t>(l.conv_index)] += (l.original - l.final) / static_cast<double>(kSeeds.size());
      }
    }
    const auto& a = mean_pruned["patterns-target-a"];
    const auto& b = mean_pruned["patterns-target-b"];
    auto show = [](const std::vector<double>& v) {
      std::string s;
      for (double x : v) s += (s.empty() ? "" : ",") + fmt(x, 1);
      return "[" + s + "]";
    };
    const bool written = fs::exists(work_ / "report" / "pruned_filters_by_target.csv");
    return {written && a.size() == 4 && b.size() == 4 && a != b,
            "mean_pruned_per_layer target-a=" + show(a) + " target-b=" + show(b)};
  }

  fs::path work_;
  std::ofstream log_;
  fs::path pretrained_;
  std::map<std::string, cli::TailorResult> runs_;
  int passed_ = 0;
};

}  // namespace

int main() {
  Acceptance acceptance;
  return acceptance.run();
}
