#pragma once

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <future>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "rccr/checkpoint.hpp"
#include "rccr/config.hpp"
#include "rccr/selftest.hpp"
#include "rccr/trainer.hpp"

namespace rccr::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kConfigError = 1, kRuntimeFailure = 2, kSelftestFailure = 3 };

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> device;
};

// Config file, then --set overrides, then --seed / --device.
inline TrainConfig resolve_config(const CommonOptions& o) {
  nlohmann::json patch = o.config_path.empty() ? nlohmann::json::object() : read_json_file(o.config_path);
  for (const auto& s : o.overrides) apply_override(patch, s);
  if (o.seed) patch["train"]["seed"] = *o.seed;
  if (o.device) patch["device"] = *o.device;
  return config_from_json(patch);
}

inline void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

inline std::string utc_now() {
  auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

inline fs::path checkpoint_path(const fs::path& run_dir, long step) {
  std::ostringstream name;
  name << "step_" << std::setw(6) << std::setfill('0') << step << ".ckpt";
  return run_dir / "checkpoints" / name.str();
}

struct RunSummary {
  TrainConfig cfg;
  std::vector<std::pair<long, IouReport>> evals;
  double final_miou = 0.0;
  double seconds = 0.0;
};

// Trains one configuration into `run_dir` (config.json, metadata.json,
// metrics.jsonl, checkpoints/, report.json). `resume` continues a state.
inline RunSummary run_training(const TrainConfig& cfg, const fs::path& run_dir, std::optional<TrainState> resume = {},
                               std::ostream* log = nullptr) {
  const auto t0 = std::chrono::steady_clock::now();
  fs::create_directories(run_dir / "checkpoints");
  write_json(run_dir / "config.json", to_json(cfg));
  write_json(run_dir / "metadata.json", {{"started", utc_now()},
                                         {"resumed_from_step", resume ? resume->step : 0},
                                         {"seed", cfg.train.seed},
                                         {"device", cfg.device},
                                         {"ablation", to_json(cfg)["ablation"]}});
  std::ofstream metrics(run_dir / "metrics.jsonl", resume ? std::ios::app : std::ios::trunc);
  if (!metrics) throw Error("cannot write metrics in " + run_dir.string());

  TrainData data = make_datasets(cfg);
  TrainState st = resume ? std::move(*resume) : init_state(cfg);
  LoopHooks hooks;
  hooks.on_step = [&](const StepReport& r) { metrics << to_json(r).dump() << "\n"; };
  hooks.on_eval = [&](long step, const IouReport& r) {
    metrics << eval_record(step, r).dump() << "\n";
    metrics.flush();
    if (log) *log << "step " << step << "  mIoU " << std::fixed << std::setprecision(2) << 100.0 * r.mean << "\n";
  };
  hooks.on_checkpoint = [&](const TrainState& s) { save_checkpoint(checkpoint_path(run_dir, s.step), s); };
  LoopResult res = train_loop(st, data, hooks);

  RunSummary sum;
  sum.cfg = cfg;
  sum.evals = res.evals;
  sum.final_miou = res.evals.empty() ? 0.0 : res.evals.back().second.mean;
  sum.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  nlohmann::json report = res.evals.empty() ? nlohmann::json::object() : report_to_json(res.evals.back().second);
  report["step"] = st.step;
  report["model"] = "teacher";
  report["seconds"] = sum.seconds;
  write_json(run_dir / "report.json", report);
  return sum;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  CommonOptions common;
  std::string resume;
};

inline int cmd_train(const TrainOptions& o, std::ostream& out, std::ostream& err) {
  TrainConfig cfg;
  try {
    cfg = resolve_config(o.common);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  }
  try {
    std::optional<TrainState> resume;
    if (!o.resume.empty()) {
      resume = load_checkpoint(o.resume);
      if (!(to_json(resume->cfg) == to_json(cfg)))
        err << "note: resuming with the checkpoint's configuration\n";
      cfg = resume->cfg;
    }
    fs::path dir = o.common.out_dir.empty() ? fs::path("runs") / ("seed" + std::to_string(cfg.train.seed))
                                            : fs::path(o.common.out_dir);
    RunSummary s = run_training(cfg, dir, std::move(resume), &out);
    out << "final mIoU " << std::fixed << std::setprecision(2) << 100.0 * s.final_miou << "  (" << dir.string()
        << ")\n";
    return kOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeFailure;
  }
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
  CommonOptions common;
  std::string checkpoint;
  bool compare_student = false;
  std::size_t limit = 0;
  std::string subset;  // "", "synthia16" or "synthia13"
};

inline nlohmann::json evaluate_checkpoint(const TrainState& st, const TargetImages& split, const EvalOptions& o) {
  auto subset = o.subset == "synthia16"   ? std::optional(synthia16_classes())
                : o.subset == "synthia13" ? std::optional(synthia13_classes())
                                          : std::nullopt;
  const auto* names = o.subset.empty() ? nullptr : &synthia16_names();
  auto one = [&](const SegmentationModel& m, const char* label) {
    ConfusionMatrix cm = Evaluator::confusion(m, split, st.cfg.num_classes(), o.limit);
    auto j = report_to_json(miou(cm, subset), names ? *names : std::vector<std::string>{});
    j["model"] = label;
    j["step"] = st.step;
    if (o.subset == "synthia16" || o.subset == "synthia13") {
      j["miou_16"] = miou(cm, synthia16_classes()).mean;
      j["miou_13"] = miou(cm, synthia13_classes()).mean;
    }
    return j;
  };
  nlohmann::json out = nlohmann::json::array();
  out.push_back(one(st.teacher, "teacher"));
  if (o.compare_student) out.push_back(one(st.student, "student"));
  return out;
}

inline int cmd_eval(const EvalOptions& o, std::ostream& out, std::ostream& err) {
  try {
    TrainState st = load_checkpoint(o.checkpoint);
    TrainConfig data_cfg = st.cfg;
    if (!o.common.config_path.empty() || !o.common.overrides.empty()) {
      nlohmann::json patch = to_json(st.cfg);
      if (!o.common.config_path.empty()) detail::merge_strict(patch, read_json_file(o.common.config_path), "");
      for (const auto& s : o.common.overrides) apply_override(patch, s);
      data_cfg = config_from_json(patch);
      require(data_cfg.num_classes() == st.cfg.num_classes(), "eval: dataset class count differs from the model");
    }
    TrainData data = make_datasets(data_cfg);
    nlohmann::json reports = evaluate_checkpoint(st, data.target_val, o);
    if (!o.common.out_dir.empty()) {
      fs::create_directories(o.common.out_dir);
      write_json(fs::path(o.common.out_dir) / "eval.json", reports);
    }
    out << reports.dump(2) << "\n";
    return kOk;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeFailure;
  }
}

// ---------------------------------------------------------------------------
// ablate

struct SweepSpec {
  std::vector<std::string> rows;
  std::vector<std::uint64_t> seeds;
  nlohmann::json overrides = nlohmann::json::object();  // applied to every run
};

inline SweepSpec sweep_from_json(const nlohmann::json& j) {
  SweepSpec s;
  for (auto it = j.begin(); it != j.end(); ++it)
    if (it.key() != "rows" && it.key() != "seeds" && it.key() != "overrides")
      throw ConfigError("unknown sweep key '" + it.key() + "'");
  try {
    s.rows = j.value("rows", std::vector<std::string>{});
    s.seeds = j.value("seeds", std::vector<std::uint64_t>{0});
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("sweep: 'rows' must be a list of names and 'seeds' a list of integers");
  }
  if (j.contains("overrides")) s.overrides = j["overrides"];
  if (s.rows.empty()) {
    for (const auto& r : component_rows()) s.rows.push_back(r.id);
  }
  if (s.seeds.empty()) throw ConfigError("sweep: at least one seed is required");
  for (const auto& r : s.rows) named_row(r);  // validates names
  return s;
}

struct RowStats {
  std::string id;
  std::vector<double> values;  // final mIoU per successful seed
  std::vector<std::string> failures;

  double mean() const {
    double s = 0.0;
    for (double v : values) s += v;
    return values.empty() ? std::nan("") : s / static_cast<double>(values.size());
  }
  // Sample standard deviation; 0 with a single value.
  double spread() const {
    if (values.size() < 2) return 0.0;
    double m = mean(), s = 0.0;
    for (double v : values) s += (v - m) * (v - m);
    return std::sqrt(s / static_cast<double>(values.size() - 1));
  }
};

inline nlohmann::json flags_to_json(const AblationFlags& f) {
  return {{"CONS", f.cons}, {"RWC", f.rwc},         {"NS_R", f.ns_random},        {"NS_C", f.ns_category},
          {"PS", f.positive_sampling}, {"MB", f.memory_bank}, {"use_projector", f.use_projector},
          {"contrast_on_z", f.contrast_on_z}};
}

inline std::string format_table(const std::vector<RowStats>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(14) << "row" << std::setw(6) << "RWC" << std::setw(6) << "NS_R" << std::setw(6)
     << "NS_C" << std::setw(6) << "PS" << std::setw(6) << "MB" << "mIoU (mean +- std, n)\n";
  for (const auto& r : rows) {
    AblationFlags f = named_row(r.id).flags;
    auto mark = [](bool b) { return b ? "x" : ""; };
    os << std::left << std::setw(14) << r.id << std::setw(6) << mark(f.rwc) << std::setw(6) << mark(f.ns_random)
       << std::setw(6) << mark(f.ns_category) << std::setw(6) << mark(f.positive_sampling) << std::setw(6)
       << mark(f.memory_bank);
    if (r.values.empty())
      os << "failed";
    else
      os << std::fixed << std::setprecision(2) << 100.0 * r.mean() << " +- " << 100.0 * r.spread() << "  (n="
         << r.values.size() << ")";
    if (!r.failures.empty()) os << "  [" << r.failures.size() << " failed]";
    os << "\n";
  }
  return os.str();
}

inline nlohmann::json table_to_json(const std::vector<RowStats>& rows) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& r : rows)
    out.push_back({{"row", r.id},
                   {"flags", flags_to_json(named_row(r.id).flags)},
                   {"miou", r.values},
                   {"mean", r.values.empty() ? nlohmann::json(nullptr) : nlohmann::json(r.mean())},
                   {"spread", r.spread()},
                   {"failures", r.failures}});
  return out;
}

struct AblateOptions {
  CommonOptions common;
  std::string sweep_path;
  int jobs = 1;
};

inline TrainConfig config_for_row(const TrainConfig& base, const std::string& row, std::uint64_t seed) {
  TrainConfig c = base;
  c.ablation = named_row(row).flags;
  c.train.seed = seed;
  c.validate();
  return c;
}

// Runs every (row, seed) pair; failed runs are recorded and the table keeps
// whatever completed.
inline std::vector<RowStats> run_sweep(const TrainConfig& base, const SweepSpec& sweep, const fs::path& out_dir,
                                       int jobs, std::ostream& log) {
  std::vector<RowStats> table;
  for (const auto& r : sweep.rows) table.push_back({r, {}, {}});
  struct Job {
    std::size_t row;
    std::uint64_t seed;
  };
  std::vector<Job> queue;
  for (std::size_t i = 0; i < sweep.rows.size(); ++i)
    for (auto seed : sweep.seeds) queue.push_back({i, seed});

  auto run_one = [&](const Job& j) -> std::pair<std::optional<double>, std::string> {
    try {
      TrainConfig c = config_for_row(base, sweep.rows[j.row], j.seed);
      auto dir = out_dir / sweep.rows[j.row] / ("seed" + std::to_string(j.seed));
      return {run_training(c, dir).final_miou, ""};
    } catch (const std::exception& e) {
      return {std::nullopt, e.what()};
    }
  };
  auto record = [&](const Job& j, std::pair<std::optional<double>, std::string> res) {
    auto& row = table[j.row];
    if (res.first) {
      row.values.push_back(*res.first);
      log << row.id << " seed " << j.seed << ": " << std::fixed << std::setprecision(2) << 100.0 * *res.first
          << "\n";
    } else {
      row.failures.push_back("seed " + std::to_string(j.seed) + ": " + res.second);
      log << row.id << " seed " << j.seed << " FAILED: " << res.second << "\n";
    }
    write_json(out_dir / "table.json", table_to_json(table));
  };

  fs::create_directories(out_dir);
  for (std::size_t start = 0; start < queue.size(); start += static_cast<std::size_t>(std::max(1, jobs))) {
    std::size_t end = std::min(queue.size(), start + static_cast<std::size_t>(std::max(1, jobs)));
    if (jobs <= 1) {
      record(queue[start], run_one(queue[start]));
      continue;
    }
    std::vector<std::future<std::pair<std::optional<double>, std::string>>> futs;
    for (std::size_t i = start; i < end; ++i) futs.push_back(std::async(std::launch::async, run_one, queue[i]));
    for (std::size_t i = start; i < end; ++i) record(queue[i], futs[i - start].get());
  }
  std::ofstream(out_dir / "table.txt") << format_table(table);
  return table;
}

inline int cmd_ablate(const AblateOptions& o, std::ostream& out, std::ostream& err) {
  TrainConfig base;
  SweepSpec sweep;
  try {
    base = resolve_config(o.common);
    sweep = o.sweep_path.empty() ? sweep_from_json(nlohmann::json::object()) : sweep_from_json(read_json_file(o.sweep_path));
    if (!sweep.overrides.empty()) {
      nlohmann::json patch = to_json(base);
      detail::merge_strict(patch, sweep.overrides, "");
      base = config_from_json(patch);
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  }
  try {
    fs::path dir = o.common.out_dir.empty() ? fs::path("ablation") : fs::path(o.common.out_dir);
    auto table = run_sweep(base, sweep, dir, o.jobs, out);
    out << "\n" << format_table(table);
    for (const auto& r : table)
      if (!r.failures.empty()) return kRuntimeFailure;
    return kOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeFailure;
  }
}

// ---------------------------------------------------------------------------
// selftest

inline int cmd_selftest(const selftest::Options& opt, std::ostream& out) {
  bool ok = true;
  for (const auto& r : selftest::run_all(opt)) {
    out << (r.passed ? "PASS " : "FAIL ") << std::left << std::setw(12) << r.name << " cases=" << r.cases;
    if (!r.message.empty()) out << "  " << r.message;
    out << "\n";
    ok &= r.passed;
  }
  return ok ? kOk : kSelftestFailure;
}

// ---------------------------------------------------------------------------
// gen-data

struct GenDataOptions {
  CommonOptions common;
  std::size_t count = 16;
  std::string domain = "both";  // source | target | both
};

inline int cmd_gen_data(const GenDataOptions& o, std::ostream& out, std::ostream& err) {
  TrainConfig cfg;
  try {
    cfg = resolve_config(o.common);
    if (o.domain != "source" && o.domain != "target" && o.domain != "both")
      throw ConfigError("gen-data: --domain must be source, target or both");
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  }
  try {
    fs::path dir = o.common.out_dir.empty() ? fs::path("synthetic") : fs::path(o.common.out_dir);
    for (auto [name, domain, stream] : {std::tuple{"source", Domain::Source, 1}, {"target", Domain::Target, 2}}) {
      if (o.domain != "both" && o.domain != name) continue;
      fs::create_directories(dir / name);
      SyntheticDataset ds(cfg.data.scene, cfg.data.seed, stream, domain, o.count);
      nlohmann::json pairs = nlohmann::json::array();
      for (std::size_t i = 0; i < o.count; ++i) {
        Sample s = ds.get(i);
        std::string stem = std::to_string(i);
        write_ppm(dir / name / (stem + ".ppm"), s.image);
        write_pgm(dir / name / (stem + ".pgm"), s.label);
        pairs.push_back({{"image", stem + ".ppm"}, {"label", stem + ".pgm"}});
      }
      write_json(dir / name / "manifest.json", {{"num_classes", cfg.num_classes()}, {"pairs", pairs}});
      out << "wrote " << o.count << " " << name << " samples to " << (dir / name).string() << "\n";
    }
    return kOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeFailure;
  }
}

// ---------------------------------------------------------------------------
// export

struct ExportOptions {
  std::string run_dir;
  std::string out_dir;
};

// Flattens metrics.jsonl into steps.csv and evals.csv.
inline int cmd_export(const ExportOptions& o, std::ostream& out, std::ostream& err) {
  try {
    fs::path run(o.run_dir);
    std::ifstream in(run / "metrics.jsonl");
    if (!in) throw Error("no metrics.jsonl in " + run.string());
    fs::path dst = o.out_dir.empty() ? run : fs::path(o.out_dir);
    fs::create_directories(dst);
    std::ofstream steps(dst / "steps.csv"), evals(dst / "evals.csv");
    steps << "step,l_ce,l_cons,l_cont,total,lr,confidence,anchors,negatives,bank_size\n";
    evals << "step,model,miou\n";
    std::string line;
    std::size_t n_steps = 0, n_evals = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto j = nlohmann::json::parse(line);
      if (j.at("type") == "step") {
        steps << j["step"] << ',' << j["l_ce"] << ',' << j["l_cons"] << ',' << j["l_cont"] << ',' << j["total"]
              << ',' << j["lr"] << ',' << j["confidence"] << ',' << j["anchors"] << ',' << j["negatives"] << ','
              << j["bank_size"] << "\n";
        ++n_steps;
      } else if (j.at("type") == "eval") {
        evals << j["step"] << ',' << j["model"].get<std::string>() << ',' << j["miou"] << "\n";
        ++n_evals;
      }
    }
    out << "exported " << n_steps << " step rows and " << n_evals << " eval rows to " << dst.string() << "\n";
    return kOk;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kRuntimeFailure;
  }
}

}  // namespace rccr::cli
