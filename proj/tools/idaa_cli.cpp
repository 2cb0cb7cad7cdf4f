#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "idaa/bench.hpp"
#include "idaa/weights_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json read_json_file(const std::string &path) {
  std::ifstream in(path);
  if (!in) throw idaa::FormatError(path + ": cannot open");
  json j;
  try {
    in >> j;
  } catch (const json::parse_error &e) {
    throw idaa::FormatError(path + ": " + e.what());
  }
  return j;
}

std::vector<idaa::NamedModel> load_models(const std::vector<std::string> &paths) {
  std::vector<idaa::NamedModel> out;
  for (const std::string &p : paths)
    out.push_back({fs::path(p).stem().string(), idaa::load_weights(p)});
  return out;
}

idaa::Acquisition acquisition_from_json(const json &s) {
  idaa::Acquisition a;
  a.frame_offset = s.value("frame_offset", 0.0);
  a.frame_scale_spread = s.value("frame_scale_spread", 0.0);
  a.sample_offset = s.value("sample_offset", 0.0);
  a.sample_scale = s.value("sample_scale", 0.0);
  a.fixed_pattern_sigma = s.value("fixed_pattern_sigma", 0.0);
  a.neutral_frame = s.value("neutral_frame", false);
  return a;
}

idaa::Dataset dataset_from_json(const json &j) {
  if (!j.is_object())
    throw idaa::FormatError("dataset config: expected a JSON object");
  if (j.contains("synthetic")) {
    const json &s = j["synthetic"];
    return idaa::synth_dataset(s.value("seed", uint64_t(0)), s.value("classes", 10),
                               s.value("per_class", 30), s.value("size", 28),
                               s.value("sigma", 0.05), acquisition_from_json(s));
  }
  if (j.contains("images") && j.contains("labels"))
    return idaa::load_idx(j["images"].get<std::string>(),
                          j["labels"].get<std::string>(), j.value("classes", 10));
  throw idaa::FormatError(
      "dataset config: need either \"synthetic\" or \"images\"+\"labels\"");
}

void write_text(const fs::path &path, const std::string &text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw idaa::FormatError(path.string() + ": cannot open for writing");
  out << text;
  if (!out) throw idaa::FormatError(path.string() + ": write failed");
}

struct RunFlags {
  std::string config_path;
  std::string out_dir;
  std::string precision = "f32";
  uint64_t seed = 0;
  bool seed_given = false;
  int threads = 1;
};

idaa::MetricsReport dispatch_experiment(const idaa::ExperimentConfig &cfg,
                                        const std::vector<idaa::NamedModel> &surr,
                                        const std::vector<idaa::NamedModel> &tgts,
                                        const idaa::Dataset &ds, const RunFlags &fl,
                                        idaa::ExperimentArtifacts *artifacts) {
  if (fl.precision == "f64")
    return idaa::run_experiment<double>(cfg, surr, tgts, ds, fl.threads, artifacts);
  return idaa::run_experiment<float>(cfg, surr, tgts, ds, fl.threads, artifacts);
}

void dump_outcome_sets(const fs::path &dir, const idaa::ExperimentArtifacts &art) {
  for (size_t si = 0; si < art.outcome_sets.size(); ++si) {
    const auto &[set_name, outcomes] = art.outcome_sets[si];
    fs::path set_dir = dir / ("set-" + std::to_string(si));
    fs::create_directories(set_dir);
    json manifest;
    manifest["surrogates"] = set_name;
    manifest["items"] = json::array();
    for (size_t ti = 0; ti < outcomes.size(); ++ti) {
      char name[32];
      std::snprintf(name, sizeof name, "adv_%06zu.advi", ti);
      idaa::dump_advi((set_dir / name).string(), outcomes[ti].x_adv);
      manifest["items"].push_back({{"file", name},
                                   {"y_src", art.tasks[ti].y_src},
                                   {"y_tgt", art.tasks[ti].y_tgt}});
    }
    write_text(set_dir / "outcomes.json", manifest.dump(2) + "\n");
  }
}

int cmd_gen_data(int classes, int per_class, int size, double sigma, uint64_t seed,
                 const idaa::Acquisition &acq, const std::string &out_dir) {
  idaa::Dataset ds = idaa::synth_dataset(seed, classes, per_class, size, sigma, acq);
  fs::create_directories(out_dir);
  fs::path images = fs::path(out_dir) / "images.idx";
  fs::path labels = fs::path(out_dir) / "labels.idx";
  idaa::dump_idx(ds, images.string(), labels.string());
  std::cout << "wrote " << ds.images.size() << " images (" << classes
            << " classes, " << size << "x" << size << ") to " << images.string()
            << " / " << labels.string() << "\n";
  return 0;
}

int cmd_train(const std::string &arch, int classes, int size, int channels,
              const std::string &images, const std::string &labels, bool synthetic,
              int per_class, double sigma, const idaa::Acquisition &acq, int epochs,
              double lr, uint64_t seed, const std::string &out_dir,
              const std::string &name) {
  idaa::ModelSpec spec;
  spec.arch = idaa::arch_from_name(arch);
  spec.classes = classes;
  spec.height = size;
  spec.width = size;
  spec.channels = channels;

  idaa::Dataset ds;
  if (synthetic) {
    ds = idaa::synth_dataset(seed, classes, per_class, size, sigma, acq);
  } else {
    if (images.empty() || labels.empty())
      throw idaa::ValueError("train: pass --images and --labels, or --synthetic");
    ds = idaa::load_idx(images, labels, classes);
  }

  idaa::TrainStats stats;
  idaa::ModelWeights w = idaa::train(spec, ds, epochs, lr, seed, &stats);
  fs::create_directories(out_dir);
  fs::path out_path = fs::path(out_dir) / (name + ".advw");
  idaa::save_weights(w, out_path.string());
  std::cout << "trained " << arch << " on " << ds.images.size() << " images, "
            << epochs << " epochs; train accuracy " << stats.train_accuracy
            << "; saved " << out_path.string() << "\n";
  return 0;
}

int cmd_attack(const RunFlags &fl, bool ablate, const std::string &axis_flag,
               const std::string &values_flag) {
  json j = read_json_file(fl.config_path);
  idaa::ExperimentConfig cfg = idaa::experiment_from_json(j);
  if (fl.seed_given) cfg.seed = fl.seed;
  if (!j.contains("dataset"))
    throw idaa::FormatError(fl.config_path + ": missing \"dataset\"");
  idaa::Dataset ds = dataset_from_json(j["dataset"]);

  std::vector<idaa::NamedModel> surr = load_models(cfg.surrogate_paths);
  std::vector<idaa::NamedModel> tgts = load_models(cfg.target_paths);

  std::string out_dir = !fl.out_dir.empty() ? fl.out_dir : j.value("out", ".");
  fs::create_directories(out_dir);

  if (!ablate) {
    idaa::ExperimentArtifacts art;
    bool dump = j.value("dump_outcomes", false);
    idaa::MetricsReport rep =
        dispatch_experiment(cfg, surr, tgts, ds, fl, dump ? &art : nullptr);
    fs::path csv = fs::path(out_dir) / "report.csv";
    write_text(csv, idaa::to_csv(rep));
    if (dump) dump_outcome_sets(fs::path(out_dir) / "outcomes", art);
    std::cout << idaa::to_csv(rep) << "wrote " << csv.string() << "\n";
    return 0;
  }

  std::string axis = axis_flag;
  json values;
  if (!values_flag.empty()) {
    try {
      values = json::parse(values_flag);
    } catch (const json::parse_error &e) {
      throw idaa::FormatError(std::string("--values: ") + e.what());
    }
  }
  if (j.contains("sweep")) {
    const json &s = j["sweep"];
    if (axis.empty()) axis = s.value("axis", "");
    if (values.is_null() && s.contains("values")) values = s["values"];
  }
  if (axis.empty())
    throw idaa::ValueError("ablate: no sweep axis (use --axis or \"sweep\" in the config)");

  std::vector<idaa::MetricsReport> reports;
  if (fl.precision == "f64")
    reports = idaa::run_ablation<double>(cfg, axis, values, surr, tgts, ds, fl.threads);
  else
    reports = idaa::run_ablation<float>(cfg, axis, values, surr, tgts, ds, fl.threads);
  idaa::MetricsReport merged;
  for (auto &r : reports)
    for (auto &row : r.rows) merged.rows.push_back(std::move(row));
  fs::path csv = fs::path(out_dir) / "ablation.csv";
  write_text(csv, idaa::to_csv(merged));
  std::cout << idaa::to_csv(merged) << "wrote " << csv.string() << "\n";
  return 0;
}

int cmd_eval(const std::string &model_path, const std::string &outcomes_dir,
             const std::string &out_dir) {
  idaa::ModelWeights model = idaa::load_weights(model_path);
  fs::path dir(outcomes_dir);
  json manifest = read_json_file((dir / "outcomes.json").string());
  std::vector<idaa::AttackTask> tasks;
  std::vector<idaa::AttackOutcome> outcomes;
  for (const json &item : manifest.at("items")) {
    idaa::AttackTask t;
    t.y_src = item.at("y_src").get<int>();
    t.y_tgt = item.at("y_tgt").get<int>();
    tasks.push_back(std::move(t));
    idaa::AttackOutcome o;
    o.x_adv = idaa::load_advi((dir / item.at("file").get<std::string>()).string());
    outcomes.push_back(std::move(o));
  }
  idaa::EvalResult r = idaa::evaluate_outcomes(tasks, outcomes, model);
  std::cout << "fsuc=" << idaa::csv_num(r.fsuc) << " tsuc=" << idaa::csv_num(r.tsuc)
            << " n=" << r.n << "\n";
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::string text = "fsuc,tsuc,n\n" + idaa::csv_num(r.fsuc) + "," +
                       idaa::csv_num(r.tsuc) + "," + std::to_string(r.n) + "\n";
    write_text(fs::path(out_dir) / "eval.csv", text);
  }
  return 0;
}

void add_acq_options(CLI::App *sub, idaa::Acquisition &acq) {
  sub->add_option("--frame-offset", acq.frame_offset,
                  "registration offset drawn once per dataset, pixels");
  sub->add_option("--frame-scale-spread", acq.frame_scale_spread,
                  "registration scale drawn from [1-spread, 1]");
  sub->add_option("--sample-offset", acq.sample_offset, "per-image jitter, pixels");
  sub->add_option("--sample-scale", acq.sample_scale, "per-image scale jitter");
  sub->add_option("--fixed-pattern-sigma", acq.fixed_pattern_sigma,
                  "static per-class pixel overlay strength");
  sub->add_flag("--neutral-frame", acq.neutral_frame,
                "pin registration to the centered mid-scale frame");
}

}  // namespace

int main(int argc, char **argv) {
  CLI::App app{"targeted adversarial example benchmark"};
  app.require_subcommand(1);

  RunFlags fl;

  // gen-data
  auto *gen = app.add_subcommand("gen-data", "write a synthetic IDX dataset");
  int g_classes = 10, g_per_class = 30, g_size = 28;
  double g_sigma = 0.05;
  uint64_t g_seed = 0;
  std::string g_out = ".";
  idaa::Acquisition g_acq;
  gen->add_option("--classes", g_classes);
  gen->add_option("--per-class", g_per_class);
  gen->add_option("--size", g_size);
  gen->add_option("--sigma", g_sigma);
  gen->add_option("--seed", g_seed);
  gen->add_option("--out", g_out);
  add_acq_options(gen, g_acq);

  // train
  auto *tr = app.add_subcommand("train", "train a classifier and save ADVW weights");
  std::string t_arch = "cnn-small", t_images, t_labels, t_out = ".", t_name = "model";
  int t_classes = 10, t_size = 28, t_channels = 1, t_per_class = 30, t_epochs = 20;
  double t_sigma = 0.05, t_lr = 0.1;
  uint64_t t_seed = 0;
  bool t_synth = false;
  tr->add_option("--arch", t_arch, "mlp-2 | cnn-small | cnn-wide");
  tr->add_option("--classes", t_classes);
  tr->add_option("--size", t_size);
  tr->add_option("--channels", t_channels);
  tr->add_option("--images", t_images, "IDX image file");
  tr->add_option("--labels", t_labels, "IDX label file");
  tr->add_flag("--synthetic", t_synth, "train on the synthetic dataset");
  tr->add_option("--per-class", t_per_class);
  tr->add_option("--sigma", t_sigma);
  idaa::Acquisition t_acq;
  add_acq_options(tr, t_acq);
  tr->add_option("--epochs", t_epochs);
  tr->add_option("--lr", t_lr);
  tr->add_option("--seed", t_seed);
  tr->add_option("--out", t_out, "output directory");
  tr->add_option("--name", t_name, "weights file basename");

  // attack
  auto *atk = app.add_subcommand("attack", "run an experiment from a JSON config");
  auto *abl = app.add_subcommand("ablate", "sweep one axis of an experiment config");
  std::string axis_flag, values_flag;
  for (CLI::App *sub : {atk, abl}) {
    sub->add_option("--config", fl.config_path, "experiment JSON")->required();
    sub->add_option("--out", fl.out_dir, "output directory");
    sub->add_option("--threads", fl.threads);
    sub->add_option("--precision", fl.precision)
        ->check(CLI::IsMember({"f32", "f64"}));
    sub->add_option("--seed", fl.seed);
  }
  abl->add_option("--axis", axis_flag, "alpha|eps|N|gamma|rho|K|beta|method");
  abl->add_option("--values", values_flag, "JSON array of sweep points");

  // eval
  auto *ev = app.add_subcommand("eval", "score dumped outcomes against a model");
  std::string e_model, e_outcomes, e_out;
  ev->add_option("--model", e_model, "ADVW weights")->required();
  ev->add_option("--outcomes", e_outcomes, "directory with outcomes.json")->required();
  ev->add_option("--out", e_out, "also write eval.csv here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed())
      return cmd_gen_data(g_classes, g_per_class, g_size, g_sigma, g_seed, g_acq,
                          g_out);
    if (tr->parsed())
      return cmd_train(t_arch, t_classes, t_size, t_channels, t_images, t_labels,
                       t_synth, t_per_class, t_sigma, t_acq, t_epochs, t_lr, t_seed,
                       t_out, t_name);
    if (atk->parsed() || abl->parsed()) {
      fl.seed_given = (atk->parsed() ? atk : abl)->count("--seed") > 0;
      return cmd_attack(fl, abl->parsed(), axis_flag, values_flag);
    }
    if (ev->parsed()) return cmd_eval(e_model, e_outcomes, e_out);
  } catch (const std::exception &e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
