#include <atomic>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "afftrack/checkpoint.hpp"
#include "afftrack/interaction.hpp"
#include "afftrack/io.hpp"
#include "afftrack/metrics.hpp"
#include "afftrack/simgen.hpp"
#include "afftrack/tracker.hpp"
#include "afftrack/training.hpp"

namespace fs = std::filesystem;
using namespace afftrack;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::ofstream open_out(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  return out;
}

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. Results are written
/// by index, so output order does not depend on scheduling.
template <class Fn>
void parallel_for(std::size_t n, int jobs, Fn fn) {
  const auto workers = static_cast<std::size_t>(std::max(1, jobs));
  if (workers == 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(n);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, n); ++w)
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::vector<Scenario> load_scenarios(const std::vector<std::string>& manifests) {
  std::vector<Scenario> out;
  for (const auto& m : manifests) out.push_back(load_scenario(m));
  return out;
}

// ---------------------------------------------------------------------------
// Scenario spec files: `key = value` with ScenarioSpec field names.

void apply_scenario_spec(const KeyValues& kv, ScenarioSpec& s) {
  for (const auto& [key, value] : kv) {
    auto num = [&] {
      try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return v;
      } catch (const std::exception&) {
        throw ConfigError("scenario spec: '" + key + "' needs a number, got '" + value + "'");
      }
    };
    auto integer = [&] { return static_cast<int>(std::lround(num())); };
    if (key == "name") s.name = value;
    else if (key == "frames") s.frames = integer();
    else if (key == "dt") s.dt = num();
    else if (key == "clusters") s.clusters = integer();
    else if (key == "objects_per_cluster") s.objects_per_cluster = integer();
    else if (key == "cluster_radius") s.cluster_radius = num();
    else if (key == "cluster_class") s.cluster_class = integer();
    else if (key == "singles") s.singles = integer();
    else if (key == "crossing_pairs") s.crossing_pairs = integer();
    else if (key == "crossing_offset") s.crossing_offset = num();
    else if (key == "weight_car") s.class_weights[0] = num();
    else if (key == "weight_pedestrian") s.class_weights[1] = num();
    else if (key == "weight_cyclist") s.class_weights[2] = num();
    else if (key == "speed_scale") s.speed_scale = num();
    else if (key == "velocity_jitter") s.velocity_jitter = num();
    else if (key == "position_jitter") s.position_jitter = num();
    else if (key == "min_separation") s.min_separation = num();
    else if (key == "allow_overlap") s.allow_overlap = num() != 0.0;
    else if (key == "pos_noise") s.pos_noise = num();
    else if (key == "size_noise") s.size_noise = num();
    else if (key == "yaw_noise") s.yaw_noise = num();
    else if (key == "velocity_noise") s.velocity_noise = num();
    else if (key == "score_spread") s.score_spread = num();
    else if (key == "miss_rate") s.miss_rate = num();
    else if (key == "duplicate_rate") s.duplicate_rate = num();
    else if (key == "clutter_rate") s.clutter_rate = num();
    else if (key == "miss_rate_2d") s.miss_rate_2d = num();
    else if (key == "pixel_noise") s.pixel_noise = num();
    else if (key == "points_per_m2") s.points_per_m2 = num();
    else if (key == "sweeps") s.sweeps = integer();
    else if (key == "sweep_interval") s.sweep_interval = num();
    else if (key == "ground_points") s.ground_points = integer();
    else throw ConfigError("scenario spec: unknown key '" + key + "'");
  }
}

// ---------------------------------------------------------------------------

struct TrackerFlags {
  std::string config;
  std::optional<std::string> affinity, matcher, motion;
  std::optional<double> tau_fuse, tau_2d, tau_3d, tau_rej;
  std::optional<int> max_misses, min_hits;
  bool no_rejection = false;

  void add(CLI::App* app) {
    app->add_option("--config", config, "Tracker config file (key = value)");
    app->add_option("--affinity", affinity, "learned | heuristic | cosine | inner_product");
    app->add_option("--matcher", matcher, "hungarian | greedy");
    app->add_option("--motion", motion, "velocity | kalman");
    app->add_option("--tau-fuse", tau_fuse);
    app->add_option("--tau-2d", tau_2d);
    app->add_option("--tau-3d", tau_3d);
    app->add_option("--tau-rej", tau_rej);
    app->add_option("--max-misses", max_misses);
    app->add_option("--min-hits", min_hits);
    app->add_flag("--no-rejection", no_rejection, "Disable track overlap rejection");
  }

  TrackerConfig resolve() const {
    TrackerConfig cfg;
    if (!config.empty()) {
      const KeyValues kv = load_key_values(config);
      const auto used = apply_tracker_config(kv, cfg);
      for (const auto& [k, v] : kv)
        if (std::find(used.begin(), used.end(), k) == used.end())
          throw ConfigError("tracker config: unknown key '" + k + "'");
    }
    if (affinity) cfg.affinity = parse_affinity(*affinity);
    if (matcher) cfg.matcher = parse_matcher(*matcher);
    if (motion) cfg.motion = parse_motion(*motion);
    if (tau_fuse) cfg.tau_fuse = *tau_fuse;
    if (tau_2d) cfg.tau_2d = *tau_2d;
    if (tau_3d) cfg.tau_3d = *tau_3d;
    if (tau_rej) cfg.tau_rej = *tau_rej;
    if (max_misses) cfg.max_misses = *max_misses;
    if (min_hits) cfg.min_hits = *min_hits;
    if (no_rejection) cfg.rejection = false;
    cfg.validate();
    return cfg;
  }
};

std::optional<AffinityModel> load_model(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return AffinityModel::from_checkpoint(nn::load_checkpoint(path));
}

std::vector<EvalSequence> pair_up(const std::vector<Scenario>& gt, const std::vector<LabeledSequence>& preds) {
  std::vector<EvalSequence> out;
  for (std::size_t i = 0; i < gt.size(); ++i) out.push_back({gt[i].gt, preds[i]});
  return out;
}

// ---------------------------------------------------------------------------

int cmd_simulate(const std::string& preset, const std::string& spec_file, const std::string& out,
                 std::optional<std::uint64_t> seed) {
  ScenarioSpec spec;
  std::uint64_t use_seed = 1;
  if (!preset.empty() && !spec_file.empty()) throw UsageError("give either --preset or --spec");
  if (!preset.empty()) {
    const Preset p = find_preset(preset);
    spec = p.spec;
    use_seed = p.seed;
  } else if (!spec_file.empty()) {
    apply_scenario_spec(load_key_values(spec_file), spec);
  } else {
    throw UsageError("simulate needs --preset or --spec");
  }
  if (seed) use_seed = *seed;
  const Scenario s = generate(spec, use_seed);
  const fs::path manifest = write_scenario(out, s);
  std::cout << "wrote " << manifest.string() << " (" << s.frames() << " frames)\n";
  return 0;
}

struct TrainArgs {
  std::vector<std::string> manifests;
  bool presets = false;
  std::string config, out = "model.ckpt", loss_csv, resume;
  std::optional<int> epochs, batch;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
  std::string mixer = "transformer", head = "ffn", norm = "pre";
  int channels = 16, heads = 4, passes = 4;
};

int cmd_train(const TrainArgs& a, const TrackerFlags& tf) {
  TrainConfig cfg;
  if (!a.config.empty()) {
    const KeyValues kv = load_key_values(a.config);
    const auto used = apply_train_config(kv, cfg);
    for (const auto& [k, v] : kv)
      if (std::find(used.begin(), used.end(), k) == used.end())
        throw ConfigError("train config: unknown key '" + k + "'");
  }
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.batch) cfg.batch_size = *a.batch;
  if (a.lr) cfg.learning_rate = *a.lr;
  if (a.seed) cfg.rng_seed = *a.seed;
  cfg.validate();
  const TrackerConfig tcfg = tf.resolve();

  std::vector<Scenario> scenarios = load_scenarios(a.manifests);
  if (a.presets)
    for (const auto& p : training_presets()) scenarios.push_back(generate(p.spec, p.seed));
  if (scenarios.empty()) throw UsageError("train needs --manifest or --presets");

  std::optional<AffinityModel> model;
  std::optional<nn::Checkpoint> resume;
  if (!a.resume.empty()) {
    resume = nn::load_checkpoint(a.resume);
    model = AffinityModel::from_checkpoint(*resume);
  } else {
    ModelConfig mc;
    mc.channels = a.channels;
    mc.heads = a.heads;
    mc.passes = a.passes;
    mc.mixer = parse_mixer(a.mixer);
    mc.head = parse_head(a.head);
    mc.norm = parse_norm(a.norm);
    mc.seed = cfg.rng_seed;
    model.emplace(mc);
  }
  Trainer trainer(*model, scenarios, cfg, tcfg);
  if (resume) trainer.load_state(*resume);
  trainer.run([](const EpochStats& e) {
    std::cout << "epoch " << e.epoch << " loss " << format_double(e.mean_loss) << " steps " << e.steps
              << std::endl;
  });
  nn::save_checkpoint(a.out, trainer.checkpoint());
  if (!a.loss_csv.empty()) {
    auto out = open_out(a.loss_csv);
    out << "epoch,mean_loss\n";
    const auto& curve = trainer.loss_curve();
    for (std::size_t i = 0; i < curve.size(); ++i) out << i << ',' << format_double(curve[i]) << '\n';
  }
  std::cout << "wrote " << a.out << "\n";
  return 0;
}

struct TrackArgs {
  std::vector<std::string> manifests;
  std::string checkpoint, out, dump_affinity, dump_matches;
  int jobs = 1;
};

int cmd_track(const TrackArgs& a, const TrackerFlags& tf) {
  const TrackerConfig cfg = tf.resolve();
  if (a.manifests.empty()) throw UsageError("track needs --manifest");
  if (a.out.empty()) throw UsageError("track needs --out");
  if (cfg.affinity != AffinityKind::heuristic && a.checkpoint.empty())
    throw UsageError("checkpoint required for affinity '" + to_string(cfg.affinity) + "'");
  const auto model = load_model(a.checkpoint);
  const auto scenarios = load_scenarios(a.manifests);

  std::vector<LabeledSequence> results(scenarios.size());
  std::vector<std::string> aff_dump(scenarios.size()), match_dump(scenarios.size());
  const bool dump_a = !a.dump_affinity.empty(), dump_m = !a.dump_matches.empty();
  parallel_for(scenarios.size(), a.jobs, [&](std::size_t i) {
    std::ostringstream aff, mat;
    auto observer = [&](const Tracker& t, int frame) {
      const FrameTrace& tr = t.last_trace();
      if (dump_a)
        for (Eigen::Index r = 0; r < tr.scores.rows(); ++r)
          for (Eigen::Index c = 0; c < tr.scores.cols(); ++c)
            aff << i << ',' << frame << ',' << tr.track_ids[static_cast<std::size_t>(r)] << ',' << c
                << ',' << format_double(tr.scores(r, c)) << '\n';
      if (dump_m) {
        for (const auto& m : tr.stage1.matches)
          mat << i << ',' << frame << ",stage1," << tr.track_ids[static_cast<std::size_t>(m.track)]
              << ',' << m.detection << ',' << format_double(m.score) << '\n';
        for (const auto& m : tr.stage2.matches) {
          const int row = tr.stage1.unmatched_tracks[static_cast<std::size_t>(m.track)];
          mat << i << ',' << frame << ",stage2," << tr.track_ids[static_cast<std::size_t>(row)] << ','
              << tr.fusion.unfused_2d[static_cast<std::size_t>(m.detection)] << ','
              << format_double(m.score) << '\n';
        }
      }
    };
    results[i] = run_sequence(scenarios[i], cfg, model ? &*model : nullptr, observer);
    aff_dump[i] = aff.str();
    match_dump[i] = mat.str();
  });

  if (scenarios.size() == 1) {
    save_tracks(a.out, results[0]);
    std::cout << "wrote " << a.out << "\n";
  } else {
    fs::create_directories(a.out);
    for (std::size_t i = 0; i < scenarios.size(); ++i) {
      const fs::path p = fs::path(a.out) / (scenarios[i].name + ".txt");
      save_tracks(p, results[i]);
      std::cout << "wrote " << p.string() << "\n";
    }
  }
  if (dump_a) {
    auto out = open_out(a.dump_affinity);
    out << "sequence,frame,track_id,detection,score\n";
    for (const auto& s : aff_dump) out << s;
  }
  if (dump_m) {
    auto out = open_out(a.dump_matches);
    out << "sequence,frame,stage,track_id,detection,score\n";
    for (const auto& s : match_dump) out << s;
  }
  return 0;
}

struct EvalArgs {
  std::vector<std::string> gt, tracks;
  std::string csv, checkpoint, hist_csv;
  bool discrimination = false, ablation = false;
  std::optional<double> ids_at_threshold;
  double match_distance = 2.0;
  int jobs = 1;
};

int cmd_eval(const EvalArgs& a, const TrackerFlags& tf) {
  if (a.gt.empty()) throw UsageError("eval needs --gt");
  const auto scenarios = load_scenarios(a.gt);
  MatchCriterion crit;
  crit.threshold = a.match_distance;
  bool did_something = false;

  if (!a.tracks.empty()) {
    if (a.tracks.size() != a.gt.size()) throw UsageError("give one --tracks file per --gt manifest");
    std::vector<LabeledSequence> preds;
    for (const auto& t : a.tracks) preds.push_back(load_tracks(t));
    const auto seqs = pair_up(scenarios, preds);
    const MetricReport r = evaluate(seqs, crit);
    write_report(std::cout, r);
    if (!a.csv.empty()) {
      auto out = open_out(a.csv);
      write_report_csv(out, r);
    }
    if (a.ids_at_threshold) {
      const ClearMot c = clear_mot(seqs, crit, *a.ids_at_threshold);
      std::cout << "at score >= " << format_double(*a.ids_at_threshold) << ": IDS " << c.ids
                << "  MOTA " << format_double(c.mota()) << "  TP " << c.tp << "  FP " << c.fp
                << "  FN " << c.fn << "\n";
    }
    did_something = true;
  }

  const auto model = load_model(a.checkpoint);
  if (a.discrimination) {
    if (!model) throw UsageError("--discrimination needs --checkpoint");
    const TrackerConfig cfg = tf.resolve();
    const DiscriminationReport d = discrimination_report(*model, scenarios, cfg.tau_gt);
    write_discrimination(std::cout, d);
    if (!a.hist_csv.empty()) {
      auto out = open_out(a.hist_csv);
      write_histograms_csv(out, d);
    }
    did_something = true;
  }

  if (a.ablation) {
    if (!model) throw UsageError("--ablation needs --checkpoint for the learned rows");
    const TrackerConfig base = tf.resolve();
    std::cout << "Exp  MA  Rej  A_t    Pred  AMOTA     AMOTP     HOTA      IDS\n";
    std::ofstream csv;
    if (!a.csv.empty()) {
      csv = open_out(a.csv);
      csv << "exp,matcher,rejection,affinity,motion,amota,amotp,hota,ids\n";
    }
    for (const AblationRow& row : ablation_grid()) {
      const TrackerConfig cfg = row.apply(base);
      std::vector<LabeledSequence> preds(scenarios.size());
      parallel_for(scenarios.size(), a.jobs,
                   [&](std::size_t i) { preds[i] = run_sequence(scenarios[i], cfg, &*model); });
      const MetricReport r = evaluate(pair_up(scenarios, preds), crit);
      std::cout << std::left << std::setw(5) << row.tag << std::setw(4)
                << (row.matcher == MatcherKind::greedy ? "G" : "H") << std::setw(5)
                << (row.rejection ? "x" : "") << std::setw(7)
                << (row.affinity == AffinityKind::learned ? "Learn" : "Heuri") << std::setw(6)
                << (row.motion == MotionKind::kalman ? "KF" : "Vel") << std::fixed
                << std::setprecision(4) << std::setw(10) << r.amota << std::setw(10) << r.amotp
                << std::setw(10) << r.hota << r.ids_at_best << "\n"
                << std::defaultfloat;
      if (csv.is_open())
        csv << row.tag << ',' << to_string(row.matcher) << ',' << row.rejection << ','
            << to_string(row.affinity) << ',' << to_string(row.motion) << ',' << format_double(r.amota)
            << ',' << format_double(r.amotp) << ',' << format_double(r.hota) << ',' << r.ids_at_best
            << '\n';
    }
    did_something = true;
  }
  if (!did_something) throw UsageError("eval needs --tracks, --discrimination or --ablation");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"afftrack: 3D multi-object tracking with learned affinity"};
  app.require_subcommand(1);

  std::optional<std::uint64_t> seed;

  auto* sim = app.add_subcommand("simulate", "Generate a synthetic scenario");
  std::string sim_preset, sim_spec, sim_out;
  sim->add_option("--preset", sim_preset, "Preset name");
  sim->add_option("--spec", sim_spec, "Scenario spec file (key = value)");
  sim->add_option("--out", sim_out, "Output directory")->required();
  sim->add_option("--seed", seed, "Random seed (defaults to the preset's)");
  sim->add_flag_callback("--list", [] {
    for (const auto& p : preset_suite()) std::cout << p.name << "\n";
    std::exit(0);
  }, "List presets and exit");

  auto* train_cmd = app.add_subcommand("train", "Train the affinity network");
  TrainArgs ta;
  TrackerFlags train_tf;
  train_cmd->add_option("--manifest", ta.manifests, "Scenario manifest(s)");
  train_cmd->add_flag("--presets", ta.presets, "Also train on the built-in mixed_train presets");
  train_cmd->add_option("--train-config", ta.config, "Training config file (key = value)");
  train_cmd->add_option("--out", ta.out, "Output checkpoint");
  train_cmd->add_option("--loss-csv", ta.loss_csv, "Write the per-epoch loss curve");
  train_cmd->add_option("--resume", ta.resume, "Continue from a checkpoint written by train");
  train_cmd->add_option("--epochs", ta.epochs);
  train_cmd->add_option("--batch-size", ta.batch);
  train_cmd->add_option("--lr", ta.lr, "Peak learning rate");
  train_cmd->add_option("--seed", ta.seed, "Initialization and sampling seed");
  train_cmd->add_option("--mixer", ta.mixer, "transformer | independent");
  train_cmd->add_option("--head", ta.head, "ffn | cosine | inner_product");
  train_cmd->add_option("--channels", ta.channels);
  train_cmd->add_option("--heads", ta.heads);
  train_cmd->add_option("--passes", ta.passes);
  train_cmd->add_option("--norm", ta.norm, "Attention norm placement: pre | post");
  train_tf.add(train_cmd);

  auto* track = app.add_subcommand("track", "Run the tracker on scenarios");
  TrackArgs tk;
  TrackerFlags track_tf;
  track->add_option("--manifest", tk.manifests, "Scenario manifest(s)")->required();
  track->add_option("--checkpoint", tk.checkpoint, "Model checkpoint");
  track->add_option("--out", tk.out, "Track file, or directory for several manifests")->required();
  track->add_option("--dump-affinity", tk.dump_affinity, "CSV of per-frame affinity scores");
  track->add_option("--dump-matches", tk.dump_matches, "CSV of per-frame matches");
  track->add_option("--jobs", tk.jobs, "Sequences tracked in parallel");
  track->add_option("--seed", seed, "Accepted for uniformity; tracking is deterministic");
  track_tf.add(track);

  auto* eval = app.add_subcommand("eval", "Evaluate tracks and models");
  EvalArgs ea;
  TrackerFlags eval_tf;
  eval->add_option("--gt", ea.gt, "Ground-truth scenario manifest(s)")->required();
  eval->add_option("--tracks", ea.tracks, "Track file(s), one per manifest");
  eval->add_option("--csv", ea.csv, "Write the report as CSV");
  eval->add_option("--checkpoint", ea.checkpoint, "Model checkpoint");
  eval->add_flag("--discrimination", ea.discrimination, "Report same/different-object separation");
  eval->add_option("--hist-csv", ea.hist_csv, "Histogram data for --discrimination");
  eval->add_flag("--ablation", ea.ablation, "Run the tracking ablation grid");
  eval->add_option("--ids-at-threshold", ea.ids_at_threshold, "Report IDS at one score threshold");
  eval->add_option("--match-distance", ea.match_distance, "BEV center distance for a match (m)");
  eval->add_option("--jobs", ea.jobs, "Sequences tracked in parallel for --ablation");
  eval->add_option("--seed", seed, "Accepted for uniformity; evaluation is deterministic");
  eval_tf.add(eval);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*sim) return cmd_simulate(sim_preset, sim_spec, sim_out, seed);
    if (*train_cmd) return cmd_train(ta, train_tf);
    if (*track) return cmd_track(tk, track_tf);
    if (*eval) return cmd_eval(ea, eval_tf);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ValidationError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
