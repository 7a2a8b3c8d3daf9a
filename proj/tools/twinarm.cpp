// Copyright 2026 The TwinArm Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// twinarm: command-line entry points.
//
// Every subcommand accepts --config FILE, --seed N, --set key=value and one
// flag per configuration leaf (e.g. --policy.epochs 40). Exit codes: 0 ok,
// 1 configuration error, 2 numerical or safety abort, 3 I/O or parse error.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "twinarm/config.hpp"
#include "twinarm/data.hpp"
#include "twinarm/errors.hpp"
#include "twinarm/expert.hpp"
#include "twinarm/policy.hpp"
#include "twinarm/rollout.hpp"
#include "twinarm/service.hpp"

namespace fs = std::filesystem;
using namespace twinarm;

namespace {

struct CommonOptions {
  std::string config_file;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;
  std::map<std::string, std::string> fields;  // dotted path -> raw value
  std::map<std::string, CLI::Option*> field_options;
};

void collect_leaves(const Json& j, const std::string& prefix,
                    std::vector<std::string>& out) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it->is_object()) {
      collect_leaves(*it, path, out);
    } else {
      out.push_back(path);
    }
  }
}

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config_file, "Run configuration (JSON)");
  cmd->add_option("--seed", o.seed, "Overrides the configured seed");
  cmd->add_option("--set", o.sets, "Override, e.g. --set policy.epochs=40")
      ->take_all();
  std::vector<std::string> leaves;
  collect_leaves(default_config_json(), "", leaves);
  for (const std::string& path : leaves) {
    // Subcommand flags win; a shadowed leaf stays reachable through --set.
    if (path == "seed" || cmd->get_option_no_throw("--" + path) != nullptr) continue;
    o.field_options[path] =
        cmd->add_option("--" + path, o.fields[path], "Config field " + path)
            ->group("Config fields");
  }
}

struct Loaded {
  RunConfig config;
  Scene scene;
  std::optional<CalibrationSet> calibration;
  Json doc;  // resolved config plus scene
};

Loaded load(const CommonOptions& o) {
  std::vector<std::string> overrides;
  for (const auto& [path, opt] : o.field_options) {
    if (opt->count() > 0) overrides.push_back(path + "=" + o.fields.at(path));
  }
  overrides.insert(overrides.end(), o.sets.begin(), o.sets.end());
  std::optional<fs::path> file;
  if (!o.config_file.empty()) file = o.config_file;
  Loaded l;
  l.config = load_run_config(file, overrides, o.seed);
  l.scene = load_scene(l.config);
  l.calibration = load_calibration(l.config, l.scene);
  l.doc = resolved_document(l.config, l.scene);
  return l;
}

void ensure_parent(const fs::path& p) {
  if (!p.has_parent_path()) return;
  std::error_code ec;
  fs::create_directories(p.parent_path(), ec);
  if (ec) throw IoError("cannot create " + p.parent_path().string() + ": " + ec.message());
}

void emit(const Json& j, const std::string& out) {
  if (out.empty()) {
    std::cout << j.dump(2) << '\n';
    return;
  }
  ensure_parent(out);
  write_json_file(out, j);
  std::cerr << "wrote " << out << '\n';
}

std::vector<fs::path> episode_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("no .jsonl episodes in " + dir.string());
  return files;
}

std::vector<EpisodeLog> load_demos(const fs::path& dir) {
  std::vector<EpisodeLog> logs;
  for (const fs::path& f : episode_files(dir)) logs.push_back(read_episode(f).log);
  return logs;
}

// --- subcommands -----------------------------------------------------------

struct SimulateArgs {
  std::string out = "episode.jsonl";
  std::string checkpoint;
  int index = 0;
  bool jitter = false;
};

void cmd_simulate(const CommonOptions& o, const SimulateArgs& a) {
  const Loaded l = load(o);
  const Scene scene = a.jitter ? episode_scene(l.scene, l.config.seed, a.index) : l.scene;
  EpisodeLog log;
  Json summary;
  if (a.checkpoint.empty()) {
    ExpertEpisode ep = run_expert_episode(l.config, scene, l.calibration, l.config.seed);
    log = std::move(ep.log);
    summary = summarize_episode(log, SettleCriteria{});
    summary["driver"] = "expert";
    summary["success"] = ep.success;
  } else {
    const Checkpoint c = load_checkpoint(a.checkpoint);
    RolloutResult r =
        rollout(policy_from_params(c.params), l.config, scene, l.calibration, l.config.seed);
    log = std::move(r.log);
    summary = summarize_episode(log, SettleCriteria{});
    summary["driver"] = "policy";
    summary["end"] = rollout_end_name(r.end);
  }
  summary["final_tip_error_mm"] =
      log.records.empty() ? 0.0
                          : 1e3 * needle_tip_error(transform_pose(scene.probe_T_needle,
                                                                  log.records.back().follower.needle),
                                                   scene.tools.needle, scene.phantom);
  summary["scene"] = scene_to_json(scene);
  log.config = l.doc;
  log.config_hash = json_hash(l.doc);
  log.summary = summary;
  ensure_parent(a.out);
  write_episode(a.out, log);
  std::cout << summary.dump(2) << '\n';
}

struct ServeArgs {
  std::string recording_dir = ".";
  std::string out;  // record only
};

void cmd_serve(const CommonOptions& o, const ServeArgs& a, bool record) {
  const Loaded l = load(o);
  ServiceOptions s;
  s.host = l.config.service.host;
  s.port = l.config.service.port;
  s.duration = l.config.service.duration;
  s.recording_dir = a.recording_dir;
  s.config_doc = l.doc;
  if (record) {
    ensure_parent(a.out);
    s.record_path = a.out;
  }
  s.on_listening = [&](int port) {
    std::cout << "listening " << s.host << ":" << port << std::endl;
  };
  const ServiceReport r = run_service(l.config, l.scene, l.calibration, s);
  Json j = service_report_to_json(r);
  j["config"] = l.doc;
  std::cout << j.dump(2) << '\n';
}

struct DriveArgs {
  std::string host = "127.0.0.1";
  int port = 47800;
  double duration = 10.0;
  double rate = 30.0;
};

void cmd_drive(const DriveArgs& a) {
  if (a.duration <= 0.0 || a.rate <= 0.0) throw ConfigError("--duration and --rate must be > 0");
  const ScriptedClientReport r = run_scripted_client(a.host, a.port, a.duration, a.rate);
  Json j{{"states_received", r.states}};
  j["summary"] = r.summary ? *r.summary : Json(nullptr);
  std::cout << j.dump(2) << '\n';
  if (!r.summary) throw IoError("service closed without a summary");
}

struct GenArgs {
  std::string out = "demos";
  std::optional<int> count;
};

void cmd_gen_demos(const CommonOptions& o, const GenArgs& a) {
  const Loaded l = load(o);
  const int count = a.count.value_or(l.config.demos);
  if (count < 1) throw ConfigError("--count must be >= 1");
  const auto paths = generate_demos(l.config, l.scene, l.calibration, a.out, count,
                                    l.config.seed, l.doc);
  int ok = 0;
  for (const fs::path& p : paths) {
    ok += read_episode(p).log.summary.value("success", false) ? 1 : 0;
  }
  Json manifest;
  manifest["demos"] = static_cast<int>(paths.size());
  manifest["successful"] = ok;
  manifest["config"] = l.doc;
  write_json_file(fs::path(a.out) / "manifest.json", manifest);
  std::cout << "wrote " << paths.size() << " demonstrations (" << ok
            << " successful) to " << a.out << '\n';
}

struct TrainArgs {
  std::string demos = "demos";
  std::string out = "policy.json";
  std::string log;
};

void cmd_train(const CommonOptions& o, const TrainArgs& a) {
  const Loaded l = load(o);
  const auto logs = load_demos(a.demos);
  const Dataset data = build_dataset(logs, l.config.policy.horizon, l.config.policy.stride);
  const fs::path log_path = a.log.empty() ? fs::path(a.out).replace_extension(".log.jsonl")
                                          : fs::path(a.log);
  ensure_parent(log_path);
  std::ofstream log(log_path);
  if (!log) throw IoError("cannot write " + log_path.string());
  log << Json{{"kind", "header"}, {"samples", data.samples.size()}, {"config", l.doc}}.dump()
      << '\n';

  TrainOptions t;
  t.policy = l.config.policy;
  t.schedule = l.config.mask;
  t.seed = l.config.seed;
  t.dump_path = fs::path(a.out).replace_extension(".nan-dump.json");
  t.on_epoch = [&](const EpochLog& e) {
    Json j = epoch_log_to_json(e);
    j["kind"] = "epoch";
    log << j.dump() << '\n';
    log.flush();
    std::cerr << "epoch " << e.epoch << " loss " << e.weighted_loss << '\n';
  };
  const TrainResult r = train(data, t);
  ensure_parent(a.out);
  save_checkpoint(a.out, {r.params, l.config.seed, json_hash(l.doc), l.doc});
  std::cout << "wrote " << a.out << " and " << log_path.string() << '\n';
}

struct EvalArgs {
  std::string checkpoint = "policy.json";
  std::optional<int> episodes;
  std::string out;
};

void cmd_eval(const CommonOptions& o, const EvalArgs& a) {
  const Loaded l = load(o);
  const Checkpoint c = load_checkpoint(a.checkpoint);
  const EvalSummary s = evaluate(policy_from_params(c.params), l.config, l.scene,
                                 l.calibration, a.episodes.value_or(l.config.eval.episodes));
  Json j = eval_summary_to_json(s);
  j["checkpoint"] = a.checkpoint;
  j["checkpoint_config_hash"] = c.config_hash;
  j["config"] = l.doc;
  emit(j, a.out);
}

struct MetricsArgs {
  std::vector<std::string> files;
  std::string out;
};

void cmd_metrics(const CommonOptions& o, const MetricsArgs& a) {
  const Loaded l = load(o);
  Json episodes = Json::array();
  for (const std::string& f : a.files) {
    const std::vector<fs::path> paths =
        fs::is_directory(f) ? episode_files(f) : std::vector<fs::path>{f};
    for (const fs::path& p : paths) {
      const LoadedEpisode e = read_episode(p);
      Json s = summarize_episode(e.log, SettleCriteria{});
      s["file"] = p.string();
      s["seed"] = e.log.seed;
      s["config_hash"] = e.log.config_hash;
      episodes.push_back(s);
    }
  }
  emit(Json{{"episodes", episodes}, {"config", l.doc}}, a.out);
}

struct AblateArgs {
  std::string demos = "demos";
  std::string out;
};

void cmd_ablate(const CommonOptions& o, const AblateArgs& a) {
  const Loaded l = load(o);
  const Dataset data =
      build_dataset(load_demos(a.demos), l.config.policy.horizon, l.config.policy.stride);
  AblationOptions opts;
  opts.on_row = [&](const AblationRow& r) {
    const Stat& d = r.eval.durations[phase_index(Phase::kAnatomicalScanning)];
    if (r.failed) {
      std::fprintf(stderr, "w=%-6g failed: %s\n", r.weight, r.error.c_str());
    } else {
      std::fprintf(stderr, "w=%-6g II %.2f +- %.2f s  IV fine %.2f +- %.2f mm  success %.2f\n",
                   r.weight, d.mean, d.std, r.eval.fine_error.mean * 1e3,
                   r.eval.fine_error.std * 1e3, r.eval.success_rate);
    }
  };
  const auto rows = ablate(data, l.config, l.scene, l.calibration, opts);
  Json table = Json::array();
  for (const AblationRow& r : rows) table.push_back(ablation_row_to_json(r));
  emit(Json{{"phase", l.config.ablation.phase}, {"rows", table}, {"config", l.doc}}, a.out);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bimanual teleoperation simulation stack"};
  app.require_subcommand(1);
  std::map<std::string, CommonOptions> common;

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "Run one scripted or policy episode");
  c_sim->add_option("--out", sim.out, "Episode file");
  c_sim->add_option("--checkpoint", sim.checkpoint, "Drive with a trained policy");
  c_sim->add_flag("--jitter", sim.jitter, "Use the jittered scene for --index");
  c_sim->add_option("--index", sim.index, "Scene index with --jitter");

  ServeArgs serve;
  auto* c_serve = app.add_subcommand("serve", "Run the teleoperation service");
  c_serve->add_option("--recording-dir", serve.recording_dir,
                      "Where start_recording without a path writes");

  ServeArgs record;
  auto* c_record = app.add_subcommand("record", "Serve and record the whole session");
  c_record->add_option("--out", record.out, "Episode file")->required();
  c_record->add_option("--recording-dir", record.recording_dir,
                       "Where start_recording without a path writes");

  DriveArgs drive;
  auto* c_drive = app.add_subcommand("drive", "Scripted protocol client for serve/record");
  c_drive->add_option("--host", drive.host, "Service host");
  c_drive->add_option("--port", drive.port, "Service port");
  c_drive->add_option("--duration", drive.duration, "Seconds to stream leader poses");
  c_drive->add_option("--rate", drive.rate, "Leader pose rate (Hz)");

  GenArgs gen;
  auto* c_gen = app.add_subcommand("gen-demos", "Generate scripted demonstrations");
  c_gen->add_option("--out", gen.out, "Output directory");
  c_gen->add_option("--count", gen.count, "Number of demonstrations (default: demos)");

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Train the policy on a demo directory");
  c_train->add_option("--demos", tr.demos, "Demonstration directory");
  c_train->add_option("--out", tr.out, "Checkpoint file");
  c_train->add_option("--log", tr.log, "Training log (default: <out>.log.jsonl)");

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "Roll out a checkpoint over seeded scenes");
  c_eval->add_option("--checkpoint", ev.checkpoint, "Checkpoint file");
  c_eval->add_option("--episodes", ev.episodes, "Number of scenes (default: eval.episodes)");
  c_eval->add_option("--out", ev.out, "Report file (default: stdout)");

  MetricsArgs me;
  auto* c_metrics = app.add_subcommand("metrics", "Recompute metrics from episode files");
  c_metrics->add_option("files", me.files, "Episode files or directories")->required();
  c_metrics->add_option("--out", me.out, "Report file (default: stdout)");

  AblateArgs ab;
  auto* c_ablate = app.add_subcommand("ablate", "Sweep a mask weight");
  c_ablate->add_option("--demos", ab.demos, "Demonstration directory");
  c_ablate->add_option("--out", ab.out, "Table file (default: stdout)");

  for (CLI::App* cmd : app.get_subcommands({})) {
    if (cmd != c_drive) add_common(cmd, common[cmd->get_name()]);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*c_sim) cmd_simulate(common["simulate"], sim);
    if (*c_serve) cmd_serve(common["serve"], serve, false);
    if (*c_record) cmd_serve(common["record"], record, true);
    if (*c_drive) cmd_drive(drive);
    if (*c_gen) cmd_gen_demos(common["gen-demos"], gen);
    if (*c_train) cmd_train(common["train"], tr);
    if (*c_eval) cmd_eval(common["eval"], ev);
    if (*c_metrics) cmd_metrics(common["metrics"], me);
    if (*c_ablate) cmd_ablate(common["ablate"], ab);
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical abort: " << e.what() << '\n';
    return 2;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return 3;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
