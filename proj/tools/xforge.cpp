// xforge: train the compact classifier, run the attribution battery, score
// explanations, fuse them, and train the explanation optimizer.

#include <omp.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "xforge/fusion.hpp"
#include "xforge/io.hpp"
#include "xforge/metrics.hpp"
#include "xforge/optimizer.hpp"

using namespace xforge;
namespace fs = std::filesystem;

namespace {

struct RunConfig {
  // dataset
  std::string dataset_kind = "shapes";
  std::string dataset_path;
  int image_size = 32, classes = 3, per_class = 100;
  double noise = 0.05;
  uint32_t seed = 0;
  // classifier
  ClassifierConfig classifier;
  TrainSchedule schedule;
  AugmentConfig augment;
  // partition + metrics
  int part_rows = 8, part_cols = 8;
  FaithfulnessConfig faith;
  // explain
  int instances = 8;
  int ig_steps = 64;
  int coalitions = 0;  // 0 -> per-method default
  // fusion
  double fusion_l1 = 0.6, fusion_l2 = 0.4;
  int calibration = 10;
  // optimizer
  LossWeights loss;
  OptimizerSchedule opt_schedule;
  int opt_base_width = 8;
  int opt_train_instances = 24, opt_val_instances = 8;
};

RunConfig load_run_config(const std::string& path, int seed_override) {
  ConfigReader cfg = path.empty() ? ConfigReader::from_text("")
                                  : ConfigReader::from_file(path);
  RunConfig rc;
  rc.dataset_kind = cfg.get_string("dataset.kind", rc.dataset_kind);
  rc.dataset_path = cfg.get_string("dataset.path", "");
  rc.image_size = cfg.get_int("dataset.image_size", rc.image_size);
  rc.classes = cfg.get_int("dataset.classes", rc.classes);
  rc.per_class = cfg.get_int("dataset.per_class", rc.per_class);
  rc.noise = cfg.get_double("dataset.noise", rc.noise);
  rc.seed = static_cast<uint32_t>(cfg.get_int("dataset.seed", 0));

  rc.classifier.residual_blocks = cfg.get_int("classifier.blocks", 2);
  rc.classifier.base_width = cfg.get_int("classifier.base_width", 8);

  rc.schedule.initial_lr =
      static_cast<float>(cfg.get_double("schedule.initial_lr", 1e-2));
  rc.schedule.max_epochs = cfg.get_int("schedule.max_epochs", 40);
  rc.schedule.hold_epochs = cfg.get_int("schedule.hold_epochs", 30);
  rc.schedule.decay_every = cfg.get_int("schedule.decay_every", 10);
  rc.schedule.decay_factor =
      static_cast<float>(cfg.get_double("schedule.decay_factor", 0.1));
  rc.schedule.patience = cfg.get_int("schedule.patience", 10);
  rc.schedule.batch_size = cfg.get_int("schedule.batch_size", 32);

  rc.augment.rotation_deg =
      static_cast<float>(cfg.get_double("augment.rotation_deg", 0.0));
  rc.augment.shift_frac =
      static_cast<float>(cfg.get_double("augment.shift_frac", 0.0));
  rc.augment.zca = cfg.get_bool("augment.zca", false);
  rc.augment.zca_epsilon =
      static_cast<float>(cfg.get_double("augment.zca_epsilon", 1e-2));

  rc.part_rows = cfg.get_int("partition.rows", 8);
  rc.part_cols = cfg.get_int("partition.cols", 8);
  rc.faith.draws = cfg.get_int("metrics.draws", 70);
  rc.faith.subset_size = cfg.get_int("metrics.subset_size", 0);
  rc.faith.baseline_value =
      static_cast<float>(cfg.get_double("metrics.baseline", 0.0));

  rc.instances = cfg.get_int("explain.instances", rc.instances);
  rc.ig_steps = cfg.get_int("explain.ig_steps", 64);
  rc.coalitions = cfg.get_int("explain.coalitions", 0);

  rc.fusion_l1 = cfg.get_double("fusion.l1", 0.6);
  rc.fusion_l2 = cfg.get_double("fusion.l2", 0.4);
  rc.calibration = cfg.get_int("fusion.calibration", 10);

  rc.loss.l1 = static_cast<float>(cfg.get_double("loss.l1", 0.5));
  rc.loss.l2 = static_cast<float>(cfg.get_double("loss.l2", 0.3));
  rc.loss.l3 = static_cast<float>(cfg.get_double("loss.l3", 0.2));
  rc.loss.lambda1 = static_cast<float>(cfg.get_double("loss.lambda1", 0.5));
  rc.loss.lambda2 = static_cast<float>(cfg.get_double("loss.lambda2", 0.5));

  rc.opt_base_width = cfg.get_int("optimizer.base_width", 8);
  rc.opt_schedule.initial_lr =
      static_cast<float>(cfg.get_double("optimizer.initial_lr", 5e-3));
  rc.opt_schedule.max_epochs = cfg.get_int("optimizer.max_epochs", 150);
  rc.opt_schedule.patience = cfg.get_int("optimizer.patience", 10);
  rc.opt_schedule.patience_after =
      cfg.get_int("optimizer.patience_after", 90);
  rc.opt_schedule.faith_draws_per_step =
      cfg.get_int("optimizer.faith_draws", 16);
  rc.opt_train_instances = cfg.get_int("optimizer.train_instances", 24);
  rc.opt_val_instances = cfg.get_int("optimizer.val_instances", 8);
  cfg.reject_unknown();

  if (seed_override >= 0) rc.seed = static_cast<uint32_t>(seed_override);
  rc.schedule.seed = rc.seed;
  rc.faith.seed = rc.seed;
  rc.opt_schedule.seed = rc.seed;
  rc.faith.partition = PatchPartition::grid(rc.image_size, rc.image_size,
                                            rc.part_rows, rc.part_cols);
  return rc;
}

DatasetSplit load_dataset(const RunConfig& rc) {
  if (rc.dataset_kind == "shapes") {
    ShapesConfig sc;
    sc.image_size = rc.image_size;
    sc.class_count = rc.classes;
    sc.per_class = rc.per_class;
    sc.noise = static_cast<float>(rc.noise);
    sc.seed = rc.seed;
    return generate_shapes(sc);
  }
  if (rc.dataset_kind == "cifar10") {
    if (rc.dataset_path.empty())
      throw std::runtime_error("dataset.path is required for cifar10");
    return load_cifar10(rc.dataset_path, rc.seed);
  }
  throw std::runtime_error("unknown dataset.kind '" + rc.dataset_kind +
                           "' (expected shapes or cifar10)");
}

ClassifierConfig classifier_config(const RunConfig& rc,
                                   const DatasetSplit& split) {
  ClassifierConfig cc = rc.classifier;
  cc.input_shape = split.train.at(0).pixels.shape;
  cc.classes = static_cast<int>(split.class_names.size());
  return cc;
}

std::vector<Tensor> reference_images(const DatasetSplit& split, size_t count) {
  std::vector<Tensor> refs;
  for (size_t i = 0; i < std::min(count, split.train.size()); ++i)
    refs.push_back(split.train[i].pixels);
  return refs;
}

std::string map_path(const fs::path& dir, int instance,
                     const std::string& method) {
  return (dir / ("inst" + std::to_string(instance) + "_" + method + ".xmap"))
      .string();
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

// maps on disk for one run directory: instance id -> (method -> path)
std::map<int, std::map<std::string, std::string>> scan_maps(
    const fs::path& out_dir) {
  std::map<int, std::map<std::string, std::string>> found;
  for (const char* sub : {"maps", "fused", "optimal"}) {
    const fs::path dir = out_dir / sub;
    if (!fs::exists(dir)) continue;
    for (const auto& entry : fs::directory_iterator(dir)) {
      const std::string name = entry.path().filename().string();
      if (name.size() < 6 || name.substr(0, 4) != "inst" ||
          entry.path().extension() != ".xmap")
        continue;
      const auto us = name.find('_');
      const int inst = std::stoi(name.substr(4, us - 4));
      const std::string method =
          name.substr(us + 1, name.size() - us - 1 - 5);
      found[inst][method] = entry.path().string();
    }
  }
  return found;
}

int cmd_train_classifier(const RunConfig& rc, const fs::path& out_dir) {
  const auto split = load_dataset(rc);
  auto model = Classifier::build(classifier_config(rc, split), rc.seed);
  std::cout << "training classifier (" << model.parameter_count()
            << " parameters) on " << split.train.size() << " instances\n";
  auto ckpt = train_classifier(model, split, rc.schedule, rc.augment);
  ckpt.test_accuracy = evaluate_accuracy(model, split.test);
  fs::create_directories(out_dir);
  save_checkpoint(ckpt, (out_dir / "classifier.xftn").string());
  write_curves_csv(ckpt.curves, (out_dir / "classifier_curves.csv").string());
  std::cout << "test accuracy " << ckpt.test_accuracy << ", best val loss "
            << ckpt.best_val_loss << "\n";
  return 0;
}

int cmd_explain(const RunConfig& rc, const fs::path& out_dir,
                const std::string& methods_arg, int instances_arg) {
  const auto split = load_dataset(rc);
  const auto model =
      load_checkpoint((out_dir / "classifier.xftn").string()).to_classifier();
  std::vector<std::string> methods =
      (methods_arg.empty() || methods_arg == "all") ? baseline_battery()
                                                    : split_csv(methods_arg);
  for (const auto& m : methods)
    if (std::find(method_names().begin(), method_names().end(), m) ==
        method_names().end()) {
      std::string valid;
      for (const auto& n : method_names())
        valid += (valid.empty() ? "" : ", ") + n;
      throw std::runtime_error("unknown method '" + m + "'; valid: " + valid);
    }
  const int count = instances_arg > 0 ? instances_arg : rc.instances;
  if (count > static_cast<int>(split.test.size()))
    throw std::runtime_error("requested more instances than the test split");
  const auto refs = reference_images(split, 8);
  fs::create_directories(out_dir / "maps");
  for (int i = 0; i < count; ++i) {
    const auto& x = split.test[i].pixels;
    const int cls = model.predict_class(x);
    for (const auto& m : methods) {
      const auto map = run_method(m, model, x, cls, rc.faith.partition,
                                  rc.seed, rc.ig_steps, rc.coalitions, &refs);
      save_map(map, map_path(out_dir / "maps", i, m));
      write_heatmap_png(map.scores, rc.faith.partition, HeatmapRender{},
                        map_path(out_dir / "maps", i, m) + ".png", &x);
    }
    std::cout << "instance " << i << ": " << methods.size() << " maps\n";
  }
  return 0;
}

int cmd_evaluate(const RunConfig& rc, const fs::path& out_dir) {
  const auto split = load_dataset(rc);
  const auto model =
      load_checkpoint((out_dir / "classifier.xftn").string()).to_classifier();
  const auto found = scan_maps(out_dir);
  if (found.empty()) throw std::runtime_error("no maps found; run explain");
  std::vector<MetricRow> rows;
  std::map<std::string, std::vector<MetricScore>> faith_by_method;
  std::map<std::string, std::vector<double>> compx_by_method;
  for (const auto& [inst, by_method] : found) {
    const auto& x = split.test.at(inst).pixels;
    const int cls = model.predict_class(x);
    for (const auto& [method, path] : by_method) {
      // high-resolution companions live at 2x and are scored via SSIM only
      if (method.size() > 3 && method.substr(method.size() - 3) == "_hr")
        continue;
      const auto map = load_map(path);
      MetricRow row;
      row.instance_id = inst;
      row.method = method;
      row.faith = faithfulness(model, map, x, cls, rc.faith);
      row.compx = complexity(map.scores, rc.faith.partition);
      rows.push_back(row);
      faith_by_method[method].push_back(row.faith);
      compx_by_method[method].push_back(row.compx);
    }
  }
  write_metric_rows_csv(rows, (out_dir / "metrics.csv").string());
  std::vector<SummaryRow> summary;
  std::vector<std::vector<double>> groups;
  for (const auto& [method, scores] : faith_by_method) {
    summary.push_back(summarize(method, scores));
    std::vector<double> g;
    for (const auto& s : scores)
      if (s.defined) g.push_back(s.value);
    if (g.size() >= 2) groups.push_back(std::move(g));
  }
  write_summary_csv(summary, (out_dir / "summary.csv").string());
  if (groups.size() >= 2) {
    const auto kw = kruskal_wallis(groups);
    std::ofstream os((out_dir / "stats.csv").string());
    os << "test,H,dof,p\nkruskal_wallis," << kw.H << ',' << kw.dof << ','
       << kw.p << '\n';
    std::cout << "kruskal-wallis H=" << kw.H << " p=" << kw.p << "\n";
  }
  std::cout << rows.size() << " metric rows written\n";
  return 0;
}

// per-method metric averages over calibration instances drawn from validation
WeightVector calibrated_weights(const RunConfig& rc, const DatasetSplit& split,
                                const Classifier& model) {
  const auto cal = CalibrationSet::draw(
      static_cast<int>(split.val.size()),
      std::min(rc.calibration, static_cast<int>(split.val.size())), rc.seed);
  const auto refs = reference_images(split, 8);
  const auto& methods = baseline_battery();
  std::vector<double> avg_faith(methods.size(), 0.0),
      avg_compx(methods.size(), 0.0);
  for (size_t mi = 0; mi < methods.size(); ++mi) {
    int defined = 0;
    for (int idx : cal.indices) {
      const auto& x = split.val[idx].pixels;
      const int cls = model.predict_class(x);
      const auto map = run_method(methods[mi], model, x, cls,
                                  rc.faith.partition, rc.seed, rc.ig_steps,
                                  rc.coalitions, &refs);
      const auto f = faithfulness(model, map, x, cls, rc.faith);
      if (f.defined) {
        avg_faith[mi] += f.value;
        ++defined;
      }
      avg_compx[mi] += complexity(map.scores, rc.faith.partition);
    }
    if (defined > 0) avg_faith[mi] /= defined;
    avg_compx[mi] /= static_cast<double>(cal.indices.size());
  }
  return calibrate_weights(methods, avg_faith, avg_compx, rc.fusion_l1,
                           rc.fusion_l2);
}

int cmd_fuse(const RunConfig& rc, const fs::path& out_dir) {
  const auto split = load_dataset(rc);
  const auto model =
      load_checkpoint((out_dir / "classifier.xftn").string()).to_classifier();
  const auto weights = calibrated_weights(rc, split, model);
  write_weights_csv(weights, (out_dir / "weights.csv").string());
  const auto found = scan_maps(out_dir);
  fs::create_directories(out_dir / "fused");
  int fused_count = 0;
  for (const auto& [inst, by_method] : found) {
    std::vector<AttributionMap> maps;
    for (const auto& m : weights.methods) {
      const auto it = by_method.find(m);
      if (it != by_method.end()) maps.push_back(load_map(it->second));
    }
    if (maps.size() != weights.methods.size()) continue;
    const auto fused = weighted_average(maps, weights);
    save_map(fused, map_path(out_dir / "fused", inst, "weighted_average"));
    write_heatmap_png(fused.scores, rc.faith.partition, HeatmapRender{},
                      map_path(out_dir / "fused", inst, "weighted_average") +
                          ".png");
    ++fused_count;
  }
  std::cout << "weights written; " << fused_count << " fused maps\n";
  return 0;
}

TrainInstance build_instance(const RunConfig& rc, const Classifier& model,
                             const Tensor& x, int id,
                             const WeightVector& weights,
                             const std::vector<Tensor>& refs) {
  const int cls = model.predict_class(x);
  std::vector<AttributionMap> maps;
  for (const auto& m : weights.methods)
    maps.push_back(run_method(m, model, x, cls, rc.faith.partition, rc.seed,
                              rc.ig_steps, rc.coalitions, &refs));
  const auto wet = weighted_average(maps, weights);
  return prepare_instance(model, x, cls, maps, wet, rc.faith, id);
}

int cmd_optimize(const RunConfig& rc, const fs::path& out_dir, bool lr_grid) {
  const auto split = load_dataset(rc);
  const auto model =
      load_checkpoint((out_dir / "classifier.xftn").string()).to_classifier();
  const auto weights = calibrated_weights(rc, split, model);
  write_weights_csv(weights, (out_dir / "weights.csv").string());
  const auto refs = reference_images(split, 8);

  const int n_train =
      std::min(rc.opt_train_instances, static_cast<int>(split.train.size()));
  const int n_val =
      std::min(rc.opt_val_instances, static_cast<int>(split.val.size()));
  std::vector<TrainInstance> train, val;
  for (int i = 0; i < n_train; ++i)
    train.push_back(
        build_instance(rc, model, split.train[i].pixels, i, weights, refs));
  for (int i = 0; i < n_val; ++i)
    val.push_back(
        build_instance(rc, model, split.val[i].pixels, i, weights, refs));
  std::cout << "prepared " << train.size() << "+" << val.size()
            << " optimizer instances\n";

  const int K = static_cast<int>(weights.methods.size());
  std::vector<float> grid = lr_grid ? optimizer_lr_grid()
                                    : std::vector<float>{
                                          rc.opt_schedule.initial_lr};
  OptimizerNet best_net;
  OptimizerRun best_run;
  double best = std::numeric_limits<double>::infinity();
  for (float lr : grid) {
    OptimizerNet net = OptimizerNet::build(K + 1, rc.opt_base_width, rc.seed);
    OptimizerSchedule sched = rc.opt_schedule;
    sched.initial_lr = lr;
    const auto run = train_optimizer(net, train, val, rc.faith.partition,
                                     rc.loss, sched);
    std::cout << "lr " << lr << ": best val loss " << run.best_val_loss
              << "\n";
    if (run.best_val_loss < best) {
      best = run.best_val_loss;
      best_net = std::move(net);
      best_run = run;
    }
  }
  save_optimizer_net(best_net, (out_dir / "optimizer.xftn").string());
  write_class_curves_csv(best_run,
                         (out_dir / "optimizer_curves.csv").string());

  // optimal maps for the explained test instances
  const auto found = scan_maps(out_dir);
  fs::create_directories(out_dir / "optimal");
  for (const auto& [inst, by_method] : found) {
    std::vector<AttributionMap> maps;
    for (const auto& m : weights.methods) {
      const auto it = by_method.find(m);
      if (it != by_method.end()) maps.push_back(load_map(it->second));
    }
    if (maps.size() != weights.methods.size()) continue;
    const auto wet = weighted_average(maps, weights);
    const auto pair = explain_optimal(best_net, stack_inputs(maps, wet));
    AttributionMap lr_map;
    lr_map.scores = pair.lr;
    lr_map.method = "optimizer";
    lr_map.target_class = maps[0].target_class;
    save_map(lr_map, map_path(out_dir / "optimal", inst, "optimizer"));
    AttributionMap hr_map;
    hr_map.scores = pair.hr;
    hr_map.method = "optimizer_hr";
    hr_map.target_class = maps[0].target_class;
    save_map(hr_map, map_path(out_dir / "optimal", inst, "optimizer_hr"));
    write_heatmap_png(pair.lr, rc.faith.partition, HeatmapRender{},
                      map_path(out_dir / "optimal", inst, "optimizer") +
                          ".png");
  }
  std::cout << "optimizer saved (best val loss " << best << ")\n";
  return 0;
}

int cmd_report(const fs::path& out_dir) {
  // aggregate the persisted metric rows; no model re-execution
  std::ifstream is((out_dir / "metrics.csv").string());
  if (!is) throw std::runtime_error("metrics.csv not found; run evaluate");
  std::string line;
  std::getline(is, line);  // header
  std::map<std::string, std::vector<MetricScore>> faith;
  std::map<std::string, std::vector<double>> compx;
  while (std::getline(is, line)) {
    std::stringstream ss(line);
    std::string inst, method, fa, cx, undef;
    std::getline(ss, inst, ',');
    std::getline(ss, method, ',');
    std::getline(ss, fa, ',');
    std::getline(ss, cx, ',');
    std::getline(ss, undef, ',');
    faith[method].push_back(
        fa.empty() ? MetricScore{0, false} : MetricScore{std::stod(fa), true});
    compx[method].push_back(std::stod(cx));
  }
  std::ofstream report((out_dir / "report.csv").string());
  std::ofstream box((out_dir / "boxplot.csv").string());
  report << "method,mean_faithfulness,mean_complexity,instances,undefined\n";
  box << "method,min,q1,median,q3,max\n";
  for (const auto& [method, scores] : faith) {
    const auto row = summarize(method, scores);
    double mean_cx = 0;
    for (double v : compx[method]) mean_cx += v;
    mean_cx /= static_cast<double>(compx[method].size());
    report << method << ',' << row.mean << ',' << mean_cx << ',' << row.count
           << ',' << row.undefined_count << '\n';
    box << method << ',' << row.min << ',' << row.q1 << ',' << row.median
        << ',' << row.q3 << ',' << row.max << '\n';
    std::cout << method << ": faith " << row.mean << ", compx " << mean_cx
              << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  if (const char* threads = std::getenv("XFORGE_THREADS")) {
    const int n = std::atoi(threads);
    if (n > 0) omp_set_num_threads(n);
  }

  CLI::App app{"explanation-optimizer workbench"};
  app.require_subcommand(1);
  app.fallthrough();  // accept the global flags after the subcommand too
  std::string config_path, out_dir = "run", methods;
  int seed = -1, instances = 0;
  bool lr_grid = false;
  app.add_option("--config", config_path, "key=value configuration file");
  app.add_option("--seed", seed, "override the run seed");
  app.add_option("--out", out_dir, "run directory");
  auto* train = app.add_subcommand("train-classifier",
                                   "train and checkpoint the classifier");
  auto* explain = app.add_subcommand("explain",
                                     "write attribution maps and heatmaps");
  explain->add_option("--methods", methods,
                      "comma-separated method names, or 'all'");
  explain->add_option("--instances", instances,
                      "number of test instances to explain");
  auto* evaluate = app.add_subcommand("evaluate",
                                      "score persisted maps with the metrics");
  auto* fuse = app.add_subcommand("fuse",
                                  "calibrate weights and fuse the maps");
  auto* optimize = app.add_subcommand("optimize",
                                      "train the explanation optimizer");
  optimize->add_flag("--lr-grid", lr_grid,
                     "search the initial learning-rate grid");
  auto* report = app.add_subcommand("report",
                                    "aggregate persisted metrics into tables");
  CLI11_PARSE(app, argc, argv);

  try {
    const fs::path out(out_dir);
    if (report->parsed()) return cmd_report(out);
    const RunConfig rc = load_run_config(config_path, seed);
    if (train->parsed()) return cmd_train_classifier(rc, out);
    if (explain->parsed()) return cmd_explain(rc, out, methods, instances);
    if (evaluate->parsed()) return cmd_evaluate(rc, out);
    if (fuse->parsed()) return cmd_fuse(rc, out);
    if (optimize->parsed()) return cmd_optimize(rc, out, lr_grid);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
