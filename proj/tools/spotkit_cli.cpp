// spotkit: command-line driver for the three-step spotting pipeline.
//
//   spotkit gen-data --spec spec.json --out data/train --matches 20 --seed 0
//   spotkit pretrain-spatial --config s1.json --data data/train --out s1.ckpt
//   spotkit extract-bank --ckpt s1.ckpt --data data/train --stride-s 1 --out bank.bin
//   spotkit pretrain-temporal --config s2.json --data data/train --bank bank.bin --init s1.ckpt --out s2.ckpt
//   spotkit finetune --config s3.json --data data/train --init s2.ckpt --out s3.ckpt
//   spotkit infer --ckpt s3.ckpt --data data/test --out preds.json
//   spotkit eval --pred preds.json --gt data/test

#include <Eigen/Core>
#include <chrono>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "spotkit/spotkit.hpp"

#ifndef SPOTKIT_VERSION
#define SPOTKIT_VERSION "dev"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace spotkit;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitCheckFailed = 3;

struct Manifest {
  std::string subcommand;
  json config = json::object();
  json inputs = json::object();
  json outputs = json::object();
  std::optional<std::uint64_t> seed;
};

class Run {
 public:
  explicit Run(std::string subcommand) : start_(std::chrono::steady_clock::now()) { m_.subcommand = std::move(subcommand); }

  Manifest& manifest() { return m_; }

  // Written atomically next to `artifact` as <artifact>.manifest.json (or
  // manifest.json inside a directory artifact).
  void finish(const fs::path& artifact) const {
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    json j = {{"subcommand", m_.subcommand},
              {"config", m_.config},
              {"inputs", m_.inputs},
              {"outputs", m_.outputs},
              {"seed", m_.seed ? json(*m_.seed) : json(nullptr)},
              {"tool_version", SPOTKIT_VERSION},
              {"wall_clock_s", wall}};
    const fs::path path =
        fs::is_directory(artifact) ? artifact / "manifest.json" : fs::path(artifact.string() + ".manifest.json");
    bin::write_text_atomic(path, j.dump(2) + "\n");
  }

 private:
  Manifest m_;
  std::chrono::steady_clock::time_point start_;
};

json read_config(const std::string& path) {
  if (path.empty()) return json::object();
  json j = parse_json_file(path);
  if (!j.is_object()) throw ConfigError(path + ": config must be a JSON object");
  return j;
}

// Training flags that override config keys of the same name.
struct TrainOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs, batch_size, windows_per_match;
  std::optional<double> base_lr, alpha1, alpha2;

  void add_to(CLI::App* app) {
    app->add_option("--seed", seed, "Overrides config key seed");
    app->add_option("--epochs", epochs, "Overrides config key epochs");
    app->add_option("--batch-size", batch_size, "Overrides config key batch_size");
    app->add_option("--base-lr", base_lr, "Overrides config key base_lr");
    app->add_option("--windows-per-match", windows_per_match, "Overrides config key windows_per_match");
    app->add_option("--alpha1", alpha1, "Overrides config key alpha1 (pretraining mask ratio)");
    app->add_option("--alpha2", alpha2, "Overrides config key alpha2 (fine-tuning mask ratio)");
  }

  void apply(json& j) const {
    if (seed) j["seed"] = *seed;
    if (epochs) j["epochs"] = *epochs;
    if (batch_size) j["batch_size"] = *batch_size;
    if (base_lr) j["base_lr"] = *base_lr;
    if (windows_per_match) j["windows_per_match"] = *windows_per_match;
    if (alpha1) j["alpha1"] = *alpha1;
    if (alpha2) j["alpha2"] = *alpha2;
  }
};

// Fills geometry and class-count keys the config leaves out from the data.
TrainConfig resolve_config(json j, const TrainOverrides& o, const Dataset& ds, int step) {
  o.apply(j);
  const Video& v = ds.matches.front().video;
  if (!j.contains("geometry")) j["geometry"] = json::object();
  if (j["geometry"].is_object()) {
    auto& g = j["geometry"];
    if (!g.contains("fps")) g["fps"] = v.fps;
    if (!g.contains("channels")) g["channels"] = v.channels;
    if (!g.contains("height")) g["height"] = v.height;
    if (!g.contains("width")) g["width"] = v.width;
  }
  if (!j.contains("model")) j["model"] = json::object();
  if (j["model"].is_object() && !j["model"].contains("num_classes")) j["model"]["num_classes"] = ds.num_classes();
  return train_config_from_json(j, step);
}

void write_training_outputs(const TrainResult& r, const fs::path& out, Run& run) {
  r.checkpoint.save(out);
  const fs::path log = out.string() + ".loss.csv";
  bin::write_text_atomic(log, loss_log_csv(r.log));
  run.manifest().outputs = {{"checkpoint", out.string()}, {"loss_log", log.string()}};
  run.finish(out);
}

std::optional<NmsMode> parse_nms(const std::string& s) {
  if (s == "hard") return NmsMode::Hard;
  if (s == "soft") return NmsMode::Soft;
  return std::nullopt;
}

// ---------------------------------------------------------------------------

struct GenData {
  std::string spec, out;
  std::size_t matches = 20, first = 0;
  std::optional<std::uint64_t> seed;

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("gen-data", "Generate synthetic matches with planted events");
    c->add_option("--spec", spec, "Synthetic spec JSON (defaults apply when omitted)")->check(CLI::ExistingFile);
    c->add_option("--out", out, "Output directory")->required();
    c->add_option("--matches", matches, "Number of matches")->capture_default_str()->check(CLI::PositiveNumber);
    c->add_option("--first", first, "Id of the first match (use disjoint ranges for splits)")->capture_default_str();
    c->add_option("--seed", seed, "Overrides spec key seed");
    cmd = c;
  }

  CLI::App* cmd = nullptr;
  int run() {
    Run r("gen-data");
    json j = read_config(spec);
    if (seed) j["seed"] = *seed;
    const SyntheticSpec s = synthetic_spec_from_json(j);
    const auto vocab = synthetic_vocabulary(s.n_classes);
    fs::create_directories(out);
    bin::write_text_atomic(fs::path(out) / "classes.json", to_json(vocab).dump(1) + "\n");
    json written = json::array();
    for (std::size_t i = first; i < first + matches; ++i) {
      write_match(out, generate_match(s, i), vocab);
      written.push_back(match_name(i));
    }
    r.manifest().config = to_json(s);
    r.manifest().seed = s.seed;
    r.manifest().inputs = {{"spec", spec}};
    r.manifest().outputs = {{"directory", out}, {"matches", written}};
    r.finish(out);
    std::cout << "wrote " << matches << " matches to " << out << '\n';
    return kExitOk;
  }
};

struct PretrainSpatial {
  std::string config, data, out;
  TrainOverrides o;
  bool quiet = false;

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("pretrain-spatial", "Step 1: contrastive pretraining of the spatial encoder");
    c->add_option("--config", config, "Step-1 config JSON")->check(CLI::ExistingFile);
    c->add_option("--data", data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    c->add_option("--out", out, "Output checkpoint")->required();
    c->add_flag("--quiet", quiet, "No per-epoch progress");
    o.add_to(c);
    cmd = c;
  }

  CLI::App* cmd = nullptr;
  int run() {
    Run r("pretrain-spatial");
    const Dataset ds = load_dataset(data);
    const TrainConfig cfg = resolve_config(read_config(config), o, ds, 1);
    r.manifest().config = to_json(cfg);
    r.manifest().seed = cfg.seed;
    r.manifest().inputs = {{"config", config}, {"data", data}};
    write_training_outputs(run_step1(cfg, ds, quiet ? nullptr : &std::cerr), out, r);
    return kExitOk;
  }
};

struct ExtractBank {
  std::string ckpt, data, out, source = "spatial";
  double stride_s = 1.0;

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("extract-bank", "Embed every stride of the videos into a feature bank");
    c->add_option("--ckpt", ckpt, "Checkpoint with a spatial encoder")->required()->check(CLI::ExistingFile);
    c->add_option("--data", data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    c->add_option("--stride-s", stride_s, "Seconds between bank rows")->capture_default_str();
    c->add_option("--source", source, "spatial | spatiotemporal")
        ->capture_default_str()
        ->check(CLI::IsMember({"spatial", "spatiotemporal"}));
    c->add_option("--out", out, "Output bank")->required();
    cmd = c;
  }

  CLI::App* cmd = nullptr;
  int run() {
    Run r("extract-bank");
    const Checkpoint ck = Checkpoint::load(ckpt);
    const Dataset ds = load_dataset(data);
    const FeatureBank bank =
        extract_bank(ck, ds, stride_s, source == "spatial" ? BankSource::Spatial : BankSource::SpatioTemporal);
    save_bank(bank, out);
    r.manifest().config = {{"stride_s", stride_s}, {"source", source}};
    r.manifest().inputs = {{"ckpt", ckpt}, {"data", data}};
    r.manifest().outputs = {{"bank", out}, {"rows", bank.size()}, {"dim", bank.dim}};
    r.finish(out);
    std::cout << "bank: " << bank.size() << " rows x " << bank.dim << '\n';
    return kExitOk;
  }
};

struct PcaBank {
  std::string in, out;
  std::size_t dim = 0;

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("pca-bank", "Project a bank onto its leading principal components");
    c->add_option("--in", in, "Input bank")->required()->check(CLI::ExistingFile);
    c->add_option("--dim", dim, "Target dimension")->required()->check(CLI::PositiveNumber);
    c->add_option("--out", out, "Output bank")->required();
    cmd = c;
  }

  CLI::App* cmd = nullptr;
  int run() {
    Run r("pca-bank");
    const FeatureBank reduced = pca_reduce(load_bank(in), dim);
    save_bank(reduced, out);
    r.manifest().config = {{"dim", dim}};
    r.manifest().inputs = {{"bank", in}};
    r.manifest().outputs = {{"bank", out}};
    r.finish(out);
    return kExitOk;
  }
};

struct PretrainTemporal {
  std::string config, data, bank, init, out;
  TrainOverrides o;
  bool quiet = false;

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("pretrain-temporal", "Step 2: distill the bank into the temporal encoder");
    c->add_option("--config", config, "Step-2 config JSON")->check(CLI::ExistingFile);
    c->add_option("--data", data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    c->add_option("--bank", bank, "Feature bank")->required()->check(CLI::ExistingFile);
    c->add_option("--init", init, "Backbone checkpoint to start from")->check(CLI::ExistingFile);
    c->add_option("--out", out, "Output checkpoint")->required();
    c->add_flag("--quiet", quiet, "No per-epoch progress");
    o.add_to(c);
    cmd = c;
  }

  CLI::App* cmd = nullptr;
  int run() {
    Run r("pretrain-temporal");
    const Dataset ds = load_dataset(data);
    const TrainConfig cfg = resolve_config(read_config(config), o, ds, 2);
    const FeatureBank b = load_bank(bank);
    std::optional<Checkpoint> ck;
    if (!init.empty()) ck = Checkpoint::load(init);
    r.manifest().config = to_json(cfg);
    r.manifest().seed = cfg.seed;
    r.manifest().inputs = {{"config", config}, {"data", data}, {"bank", bank}, {"init", init}};
    write_training_outputs(run_step2(cfg, ds, b, ck ? &*ck : nullptr, quiet ? nullptr : &std::cerr), out, r);
    return kExitOk;
  }
};

struct Finetune {
  std::string config, data, init, out;
  TrainOverrides o;
  bool quiet = false;

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("finetune", "Step 3: supervised spotting fine-tuning");
    c->add_option("--config", config, "Step-3 config JSON")->check(CLI::ExistingFile);
    c->add_option("--data", data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    c->add_option("--init", init, "Backbone checkpoint (omit to train from scratch)")->check(CLI::ExistingFile);
    c->add_option("--out", out, "Output checkpoint")->required();
    c->add_flag("--quiet", quiet, "No per-epoch progress");
    o.add_to(c);
    cmd = c;
  }

  CLI::App* cmd = nullptr;
  int run() {
    Run r("finetune");
    const Dataset ds = load_dataset(data);
    const TrainConfig cfg = resolve_config(read_config(config), o, ds, 3);
    std::optional<Checkpoint> ck;
    if (!init.empty()) ck = Checkpoint::load(init);
    r.manifest().config = to_json(cfg);
    r.manifest().seed = cfg.seed;
    r.manifest().inputs = {{"config", config}, {"data", data}, {"init", init}};
    write_training_outputs(run_step3(cfg, ds, ck ? &*ck : nullptr, quiet ? nullptr : &std::cerr), out, r);
    return kExitOk;
  }
};

struct Infer {
  std::string ckpt, data, out, nms = "hard", merge = "max";
  double nms_window = 5.0, ignore = 6.0;
  std::size_t batch = 8;

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("infer", "Spot events in every video of a dataset");
    c->add_option("--ckpt", ckpt, "Fine-tuned checkpoint")->required()->check(CLI::ExistingFile);
    c->add_option("--data", data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    c->add_option("--nms", nms, "hard | soft | none")->capture_default_str()->check(CLI::IsMember({"hard", "soft", "none"}));
    c->add_option("--nms-window", nms_window, "NMS window in seconds")->capture_default_str();
    c->add_option("--ignore", ignore, "Seconds ignored at each interior window edge")->capture_default_str();
    c->add_option("--merge", merge, "max | avg over overlapping windows")
        ->capture_default_str()
        ->check(CLI::IsMember({"max", "avg"}));
    c->add_option("--batch", batch, "Windows per forward pass")->capture_default_str();
    c->add_option("--out", out, "Output predictions JSON")->required();
    cmd = c;
  }

  CLI::App* cmd = nullptr;
  int run() {
    Run r("infer");
    const Checkpoint ck = Checkpoint::load(ckpt);
    if (!ck.has_prefix("classifier.")) throw ConfigError("infer needs a fine-tuned checkpoint with a classifier");
    const SpotModel model = model_from_checkpoint(ck);
    const Dataset ds = load_dataset(data);
    if (ds.num_classes() != model.config.num_classes) {
      throw ConfigError("checkpoint has " + std::to_string(model.config.num_classes) + " classes, dataset has " +
                        std::to_string(ds.num_classes()));
    }
    InferenceOptions opt;
    opt.nms = parse_nms(nms);
    opt.nms_window_s = nms_window;
    opt.ignore_s = ignore;
    opt.merge = merge == "max" ? MergeMode::Max : MergeMode::Average;
    opt.batch_windows = batch;
    validate_inference(opt, model.geometry);
    if (ignore > coverage_ignore_s(model.geometry)) {
      std::cerr << "warning: ignoring more than " << coverage_ignore_s(model.geometry)
                << " s per edge leaves timestamps between windows without predictions\n";
    }
    const auto preds = predict_dataset(model, ds, opt);
    save_predictions(out, preds, ds.vocab);
    r.manifest().config = {{"nms", nms}, {"nms_window_s", nms_window}, {"ignore_s", ignore}, {"merge", merge}};
    r.manifest().inputs = {{"ckpt", ckpt}, {"data", data}};
    r.manifest().outputs = {{"predictions", out}};
    r.finish(out);
    return kExitOk;
  }
};

struct Ensemble {
  std::vector<std::string> in;
  std::string out, classes, nms = "hard";
  double nms_window = 5.0, fps = 2.0;

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("ensemble", "Average raw score tracks from several prediction files");
    c->add_option("--in", in, "Prediction files (raw tracks, i.e. infer --nms none)")->required()->check(CLI::ExistingFile);
    c->add_option("--classes", classes, "Class vocabulary JSON (default: names in order of appearance)")
        ->check(CLI::ExistingFile);
    c->add_option("--nms", nms, "hard | soft | none, applied after averaging")
        ->capture_default_str()
        ->check(CLI::IsMember({"hard", "soft", "none"}));
    c->add_option("--nms-window", nms_window, "NMS window in seconds")->capture_default_str();
    c->add_option("--fps", fps, "Frame rate of the timestamp grid")->capture_default_str();
    c->add_option("--out", out, "Output predictions JSON")->required();
    cmd = c;
  }

  ClassVocabulary vocabulary() const {
    if (!classes.empty()) return vocabulary_from_json(parse_json_file(classes));
    ClassVocabulary v;
    for (const auto& path : in) {
      const json j = parse_json_file(path);
      const json docs = j.is_array() ? j : json::array({j});
      for (const auto& d : docs) {
        if (!d.is_object() || !d.contains("events") || !d["events"].is_array()) {
          throw FormatError(path + ": malformed predictions document");
        }
        for (const auto& e : d["events"]) {
          if (!e.is_object() || !e.contains("class") || !e["class"].is_string()) {
            throw FormatError(path + ": event without a class name");
          }
          const auto name = e["class"].get<std::string>();
          if (std::find(v.names.begin(), v.names.end(), name) == v.names.end()) v.names.push_back(name);
        }
      }
    }
    return v;
  }

  CLI::App* cmd = nullptr;
  int run() {
    Run r("ensemble");
    if (!(fps > 0.0)) throw UsageError("--fps must be positive");
    const ClassVocabulary vocab = vocabulary();
    std::vector<std::map<std::string, VideoEvents>> files;
    std::map<std::string, double> durations;
    for (const auto& path : in) {
      auto& by_id = files.emplace_back();
      for (auto& v : load_predictions(path, vocab)) {
        durations[v.video_id] = std::max(durations[v.video_id], v.duration_s);
        by_id[v.video_id] = std::move(v);
      }
    }
    InferenceOptions opt;
    opt.nms = parse_nms(nms);
    opt.nms_window_s = nms_window;
    std::vector<VideoEvents> merged;
    for (const auto& [id, duration] : durations) {
      std::vector<ScoreTrack> tracks;
      for (const auto& f : files) {
        auto it = f.find(id);
        tracks.push_back(it == f.end() ? ScoreTrack{vocab.size(), {}, {}}
                                       : track_from_events(it->second.events, vocab.size(), fps));
      }
      merged.push_back({id, duration, finalize_events(ensemble_average(tracks, fps), opt)});
    }
    save_predictions(out, merged, vocab);
    r.manifest().config = {{"nms", nms}, {"nms_window_s", nms_window}, {"fps", fps}};
    r.manifest().inputs = {{"predictions", in}, {"classes", classes}};
    r.manifest().outputs = {{"predictions", out}};
    r.finish(out);
    return kExitOk;
  }
};

struct Eval {
  std::string pred, gt, tolerances = "1,2,3,4,5", out;

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("eval", "Tight average-mAP of predictions against annotations");
    c->add_option("--pred", pred, "Predictions JSON")->required()->check(CLI::ExistingFile);
    c->add_option("--gt", gt, "Dataset directory with annotations")->required()->check(CLI::ExistingDirectory);
    c->add_option("--tolerances", tolerances, "Comma-separated tolerances in seconds")->capture_default_str();
    c->add_option("--out", out, "Also write the report to this file");
    cmd = c;
  }

  std::vector<double> parse_tolerances() const {
    std::vector<double> t;
    std::stringstream ss(tolerances);
    std::string item;
    while (std::getline(ss, item, ',')) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(item, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != item.size() || item.empty() || !(v > 0.0)) throw UsageError("invalid tolerance '" + item + "'");
      t.push_back(v);
    }
    if (t.empty()) throw UsageError("at least one tolerance is required");
    return t;
  }

  CLI::App* cmd = nullptr;
  int run() {
    Run r("eval");
    const auto tols = parse_tolerances();
    const ClassVocabulary vocab = load_vocabulary(gt);
    const auto truth = load_annotations(gt, vocab);
    const auto preds = load_predictions(pred, vocab);
    const json report = to_json(tamap(preds, truth, vocab, tols));
    std::cout << report.dump(2) << '\n';
    if (!out.empty()) {
      bin::write_text_atomic(out, report.dump(2) + "\n");
      r.manifest().config = {{"tolerances", tols}};
      r.manifest().inputs = {{"predictions", pred}, {"gt", gt}};
      r.manifest().outputs = {{"report", out}};
      r.finish(out);
    }
    return kExitOk;
  }
};

struct GradCheck {
  std::size_t instances = 100;
  std::uint64_t seed = 0;
  double tolerance = 1e-4;

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("gradcheck", "Finite-difference check of every loss, primitive and encoder");
    c->add_option("--instances", instances, "Random instances per loss and model")->capture_default_str();
    c->add_option("--seed", seed, "Seed for the random instances")->capture_default_str();
    c->add_option("--tolerance", tolerance, "Largest accepted relative error")->capture_default_str();
    cmd = c;
  }

  CLI::App* cmd = nullptr;
  int run() {
    GradSuiteOptions opt;
    opt.instances = instances;
    opt.primitive_instances = std::max<std::size_t>(1, instances / 10);
    opt.seed = seed;
    bool ok = true;
    for (const auto& e : run_gradcheck_suite(opt)) {
      const bool pass = e.max_rel_error < tolerance;
      ok = ok && pass;
      std::printf("%-4s %-22s instances %4zu coords %7zu max_rel %.3e  (%s)\n", pass ? "ok" : "FAIL", e.name.c_str(),
                  e.instances, e.coordinates, e.max_rel_error, e.worst.c_str());
    }
    return ok ? kExitOk : kExitCheckFailed;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"spotkit: self-supervised action spotting on frame streams"};
  app.set_version_flag("--version", SPOTKIT_VERSION);
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Upper bound on internal threads (0 = library default)")->capture_default_str();

  GenData gen;
  PretrainSpatial s1;
  ExtractBank bank;
  PcaBank pca;
  PretrainTemporal s2;
  Finetune s3;
  Infer infer;
  Ensemble ens;
  Eval eval;
  GradCheck gc;
  gen.add(app);
  s1.add(app);
  bank.add(app);
  pca.add(app);
  s2.add(app);
  s3.add(app);
  infer.add(app);
  ens.add(app);
  eval.add(app);
  gc.add(app);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUsage;
  }
  if (threads > 0) Eigen::setNbThreads(threads);

  try {
    if (gen.cmd->parsed()) return gen.run();
    if (s1.cmd->parsed()) return s1.run();
    if (bank.cmd->parsed()) return bank.run();
    if (pca.cmd->parsed()) return pca.run();
    if (s2.cmd->parsed()) return s2.run();
    if (s3.cmd->parsed()) return s3.run();
    if (infer.cmd->parsed()) return infer.run();
    if (ens.cmd->parsed()) return ens.run();
    if (eval.cmd->parsed()) return eval.run();
    if (gc.cmd->parsed()) return gc.run();
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitData;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "format error: " << e.what() << '\n';
    return kExitData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kExitData;
  }
  return kExitUsage;
}
