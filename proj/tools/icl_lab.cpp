// icl_lab: experiment runner for in-context learning of function classes.
//
// Subcommands:
//   train     train a transformer on sampled prompts
//   eval      error curves for a trained run or a classical baseline
//   probe     line visualization, gradient alignment, query-scale sweep
//   memcheck  memorization bound over a finite weight pool
//   plot      results CSV -> SVG
//
// Exit codes: 0 success, 2 configuration error, 3 numeric failure.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "icl/analysis.hpp"
#include "icl/baselines.hpp"
#include "icl/model.hpp"
#include "icl/model_predictor.hpp"
#include "icl/prompts.hpp"
#include "icl/runs.hpp"
#include "icl/svg.hpp"
#include "icl/threads.hpp"
#include "icl/training.hpp"

using namespace icl;
namespace fs = std::filesystem;

namespace {

std::vector<int> parse_ks(const std::string& spec) {
  std::vector<int> ks;
  if (spec.find(':') != std::string::npos) {
    int lo = 0, hi = 0, step = 1;
    const auto c1 = spec.find(':');
    const auto c2 = spec.find(':', c1 + 1);
    lo = std::stoi(spec.substr(0, c1));
    hi = std::stoi(spec.substr(c1 + 1, c2 == std::string::npos ? std::string::npos : c2 - c1 - 1));
    if (c2 != std::string::npos) step = std::stoi(spec.substr(c2 + 1));
    if (step < 1 || hi < lo) throw ConfigError("bad k range: " + spec);
    for (int k = lo; k <= hi; k += step) ks.push_back(k);
  } else {
    std::string token;
    for (std::stringstream ss(spec); std::getline(ss, token, ',');)
      if (!token.empty()) ks.push_back(std::stoi(token));
  }
  if (ks.empty()) throw ConfigError("no prompt lengths in: " + spec);
  return ks;
}

std::vector<double> parse_doubles(const std::string& spec) {
  std::vector<double> out;
  std::string token;
  for (std::stringstream ss(spec); std::getline(ss, token, ',');)
    if (!token.empty()) out.push_back(std::stod(token));
  return out;
}

struct CsvRow {
  std::string experiment, predictor, shift;
  int k;
  double mean, lo, hi;
  int n_prompts;
  uint64_t seed;
};

std::string results_csv(const std::vector<CsvRow>& rows, const std::string& manifest_hash, uint64_t seed) {
  std::string out;
  out += "# manifest " + manifest_hash + "\n";
  out += "# seed " + std::to_string(seed) + "\n";
  out += "experiment,predictor,shift,k,mean,lo,hi,n_prompts,seed\n";
  for (const auto& r : rows) {
    out += r.experiment + "," + r.predictor + "," + r.shift + "," + std::to_string(r.k) + "," +
           format_double(r.mean) + "," + format_double(r.lo) + "," + format_double(r.hi) + "," +
           std::to_string(r.n_prompts) + "," + std::to_string(r.seed) + "\n";
  }
  return out;
}

void write_file(const std::string& path, const std::string& content) {
  fs::create_directories(fs::path(path).parent_path().empty() ? "." : fs::path(path).parent_path().string());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path);
  out << content;
}

// Latest checkpoint path under a run directory (or a specific step).
std::string checkpoint_path(const std::string& run_dir, int64_t step) {
  if (step >= 0) {
    const std::string p = run_dir + "/ckpt_" + std::to_string(step);
    if (!fs::exists(p)) throw ConfigError("no checkpoint at step " + std::to_string(step) + " under " + run_dir);
    return p;
  }
  int64_t best = -1;
  for (const auto& e : fs::directory_iterator(run_dir)) {
    const std::string name = e.path().filename().string();
    if (name.rfind("ckpt_", 0) == 0) best = std::max<int64_t>(best, std::stoll(name.substr(5)));
  }
  if (best < 0) throw ConfigError("no checkpoints under " + run_dir);
  return run_dir + "/ckpt_" + std::to_string(best);
}

struct EvalTarget {
  std::unique_ptr<Predictor> predictor;
  std::unique_ptr<TransformerParams<float>> params;  // kept alive for the predictor
  ClassConfig class_cfg;
  std::string experiment;
  std::string manifest_hash;
};

struct EstimatorFlags {
  int knn_n = 3;
  double lasso_alpha = 1e-2;
  int tree_depth = 2;
  bool sign_transform = false;
  bool coordinate_splits = false;
  int boost_rounds = 50;
  int boost_depth = 4;
  double boost_lr = 0.1;
  int nn_width = 100;
  int64_t nn_steps = 5000;
  int nn_batch = 10;
  double nn_lr = 5e-3;
};

EstimatorConfig estimator_from_name(const std::string& name, const EstimatorFlags& f) {
  if (name == "least_squares") return LeastSquaresCfg{};
  if (name == "averaging") return AveragingCfg{};
  if (name == "knn") return KnnCfg{f.knn_n};
  if (name == "lasso") return LassoCfg{f.lasso_alpha};
  if (name == "greedy_tree") return GreedyTreeCfg{f.tree_depth, f.sign_transform, f.coordinate_splits};
  if (name == "boosted_trees") return BoostedTreesConfig{f.boost_rounds, f.boost_depth, f.boost_lr};
  if (name == "nn_adam") return NNAdamConfig{f.nn_width, f.nn_steps, f.nn_batch, f.nn_lr};
  if (name == "zero") return ZeroCfg{};
  throw ConfigError("unknown baseline: " + name);
}

int run_train(const TrainConfig& cfg_in, const std::string& name_flag) {
  TrainConfig cfg = cfg_in;
  const std::string name = !name_flag.empty()
                               ? name_flag
                               : "run-" + class_name(cfg.class_cfg.cls) + "-d" + std::to_string(cfg.class_cfg.d) +
                                     "-" + cfg.model_preset + "-s" + std::to_string(cfg.seed);
  if (cfg.out_dir.empty()) cfg.out_dir = "runs/" + name;
  cfg.validate();

  RunManifest manifest;
  manifest.name = name;
  manifest.config = cfg.to_json();
  manifest.root_seed = cfg.seed;
  manifest.created = iso8601_now();
  manifest.save(cfg.out_dir);

  std::cout << "training " << name << " -> " << cfg.out_dir << "\n";
  const TrainResult result = train(cfg, [&](const StepRecord& rec) {
    if (rec.step % 1000 == 0 || rec.step == cfg.steps)
      std::cout << "step " << rec.step << "  loss " << rec.loss << "  d_cur " << rec.d_cur << "  k_cur "
                << rec.k_cur << "\n";
  });
  manifest.finished = iso8601_now();
  manifest.checkpoints = result.checkpoint_steps;
  manifest.save(cfg.out_dir);
  std::cout << "done; manifest " << manifest.hash() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  apply_thread_cap();
  CLI::App app{"in-context learning laboratory"};
  app.require_subcommand(1);

  // ----- train -----
  auto* tr = app.add_subcommand("train", "train a transformer on sampled prompts");
  std::string tr_class = "linear", tr_model = "standard", tr_pool = "none", tr_out, tr_name, tr_config,
              tr_curriculum = "on";
  TrainConfig tcfg;
  int tr_dim = 0;
  tr->add_option("--class", tr_class, "function class: linear|sparse|tree|nn");
  tr->add_option("--dim", tr_dim, "input dimension d")->required();
  tr->add_option("--model", tr_model, "preset: tiny|small|standard");
  tr->add_option("--steps", tcfg.steps, "training steps");
  tr->add_option("--batch", tcfg.batch, "batch size");
  tr->add_option("--lr", tcfg.lr, "learning rate");
  tr->add_option("--curriculum", tr_curriculum, "on|off");
  tr->add_option("--pool", tr_pool, "none | prompts:N | functions:N");
  tr->add_option("--seed", tcfg.seed, "root seed");
  tr->add_option("--out", tr_out, "run directory (default runs/<name>)");
  tr->add_option("--name", tr_name, "run name");
  tr->add_option("--sparsity", tcfg.class_cfg.sparsity, "sparse class: nonzero count");
  tr->add_option("--hidden", tcfg.class_cfg.hidden, "nn class: hidden width");
  tr->add_option("--ckpt-every", tcfg.ckpt_every, "checkpoint cadence");
  tr->add_option("--clip-norm", tcfg.clip_norm, "global gradient norm clip (0 = off)");
  tr->add_option("--config", tr_config, "JSON config file (flags override)");

  // ----- eval -----
  auto* ev = app.add_subcommand("eval", "error curves for a run or baseline");
  std::string ev_run, ev_baseline, ev_class = "linear", ev_shift = "standard", ev_ks, ev_out = "eval_out";
  int ev_dim = 0, ev_nprompts = 1280, ev_bootstrap = 1000, ev_sparsity = 3, ev_hidden = 100;
  int64_t ev_ckpt = -1;
  double ev_conf = 0.9;
  uint64_t ev_seed = 0;
  bool ev_logy = false;
  EstimatorFlags ef;
  ev->add_option("--run", ev_run, "run directory with checkpoints");
  ev->add_option("--baseline", ev_baseline,
                 "least_squares|averaging|knn|lasso|greedy_tree|boosted_trees|nn_adam|zero");
  ev->add_option("--class", ev_class, "function class for baseline eval");
  ev->add_option("--dim", ev_dim, "input dimension for baseline eval");
  ev->add_option("--sparsity", ev_sparsity, "sparse class: nonzero count");
  ev->add_option("--hidden", ev_hidden, "nn class: hidden width");
  ev->add_option("--shift", ev_shift, "shift battery: standard, all, or comma list");
  ev->add_option("--ks", ev_ks, "prompt lengths, e.g. 0:40 or 0,10,20");
  ev->add_option("--n-prompts", ev_nprompts, "prompts per point");
  ev->add_option("--bootstrap", ev_bootstrap, "bootstrap resamples");
  ev->add_option("--confidence", ev_conf, "bootstrap confidence");
  ev->add_option("--seed", ev_seed, "evaluation seed");
  ev->add_option("--out", ev_out, "output directory");
  ev->add_option("--ckpt", ev_ckpt, "checkpoint step (default latest)");
  ev->add_flag("--log-y", ev_logy, "log-scale error axis in SVG");
  ev->add_option("--knn-n", ef.knn_n, "");
  ev->add_option("--lasso-alpha", ef.lasso_alpha, "");
  ev->add_option("--tree-depth", ef.tree_depth, "");
  ev->add_flag("--sign-transform", ef.sign_transform, "");
  ev->add_flag("--coordinate-splits", ef.coordinate_splits, "");
  ev->add_option("--boost-rounds", ef.boost_rounds, "");
  ev->add_option("--boost-depth", ef.boost_depth, "");
  ev->add_option("--boost-lr", ef.boost_lr, "");
  ev->add_option("--nn-width", ef.nn_width, "");
  ev->add_option("--nn-steps", ef.nn_steps, "");
  ev->add_option("--nn-batch", ef.nn_batch, "");
  ev->add_option("--nn-lr", ef.nn_lr, "");

  // ----- probe -----
  auto* pr = app.add_subcommand("probe", "model probes: line, alignment, query-scale");
  std::string pr_run, pr_kind = "line", pr_ks, pr_scales = "0.0625,0.125,0.25,0.5,1,2,4", pr_out = "probe_out";
  int pr_k = -1, pr_nprompts = 256;
  uint64_t pr_seed = 0;
  int64_t pr_ckpt = -1;
  pr->add_option("--run", pr_run, "run directory")->required();
  pr->add_option("--kind", pr_kind, "line|alignment|query-scale");
  pr->add_option("--k", pr_k, "in-context examples (default 2d)");
  pr->add_option("--ks", pr_ks, "prompt lengths for alignment");
  pr->add_option("--n-prompts", pr_nprompts, "prompts per point");
  pr->add_option("--scales", pr_scales, "query scales");
  pr->add_option("--seed", pr_seed, "seed");
  pr->add_option("--ckpt", pr_ckpt, "checkpoint step (default latest)");
  pr->add_option("--out", pr_out, "output directory");

  // ----- memcheck -----
  auto* mc = app.add_subcommand("memcheck", "memorization bound over a finite weight pool");
  int64_t mc_nw = 10000, mc_block = 1 << 16;
  int mc_dim = 20, mc_queries = 500, mc_trials = 20;
  uint64_t mc_seed = 0;
  std::string mc_out;
  mc->add_option("--n-w", mc_nw, "pool size");
  mc->add_option("--dim", mc_dim, "dimension");
  mc->add_option("--queries", mc_queries, "query vectors per trial");
  mc->add_option("--trials", mc_trials, "independent trials");
  mc->add_option("--seed", mc_seed, "seed");
  mc->add_option("--block", mc_block, "streaming block size");
  mc->add_option("--out", mc_out, "optional CSV path");

  // ----- plot -----
  auto* pl = app.add_subcommand("plot", "results CSV -> SVG");
  std::string pl_csv, pl_out, pl_title = "error curve";
  bool pl_logy = false;
  pl->add_option("--csv", pl_csv, "input CSV")->required();
  pl->add_option("--out", pl_out, "output SVG")->required();
  pl->add_option("--title", pl_title, "plot title");
  pl->add_flag("--log-y", pl_logy, "log-scale y");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (tr->parsed()) {
      if (!tr_config.empty()) {
        std::ifstream in(tr_config);
        if (!in) throw ConfigError("cannot read config file " + tr_config);
        TrainConfig from_file = TrainConfig::from_json(nlohmann::json::parse(in));
        // flags override file values
        if (tr->count("--steps") == 0) tcfg.steps = from_file.steps;
        if (tr->count("--batch") == 0) tcfg.batch = from_file.batch;
        if (tr->count("--lr") == 0) tcfg.lr = from_file.lr;
        if (tr->count("--seed") == 0) tcfg.seed = from_file.seed;
        if (tr->count("--pool") == 0) tr_pool = from_file.pool.to_string();
        if (tr->count("--model") == 0) tr_model = from_file.model_preset;
        if (tr->count("--class") == 0) tr_class = class_name(from_file.class_cfg.cls);
        if (tr->count("--dim") == 0) tr_dim = from_file.class_cfg.d;
        if (tr->count("--curriculum") == 0) tr_curriculum = from_file.curriculum ? "on" : "off";
        if (tr->count("--sparsity") == 0) tcfg.class_cfg.sparsity = from_file.class_cfg.sparsity;
        if (tr->count("--hidden") == 0) tcfg.class_cfg.hidden = from_file.class_cfg.hidden;
        if (tr->count("--ckpt-every") == 0) tcfg.ckpt_every = from_file.ckpt_every;
        if (tr->count("--clip-norm") == 0) tcfg.clip_norm = from_file.clip_norm;
      }
      tcfg.class_cfg.cls = class_from_name(tr_class);
      tcfg.class_cfg.d = tr_dim;
      tcfg.model_preset = tr_model;
      tcfg.pool = PoolConfig::parse(tr_pool);
      if (tr_curriculum != "on" && tr_curriculum != "off") throw ConfigError("--curriculum must be on or off");
      tcfg.curriculum = tr_curriculum == "on";
      tcfg.out_dir = tr_out;
      return run_train(tcfg, tr_name);
    }

    if (ev->parsed()) {
      EvalTarget target;
      if (!ev_run.empty()) {
        const RunManifest manifest = RunManifest::load(ev_run);
        const TrainConfig run_cfg = TrainConfig::from_json(manifest.config);
        target.class_cfg = run_cfg.class_cfg;
        target.params = std::make_unique<TransformerParams<float>>(
            TransformerParams<float>::load(checkpoint_path(ev_run, ev_ckpt)));
        target.predictor = std::make_unique<ModelPredictor<float>>(target.params.get(), "transformer");
        target.experiment = manifest.name;
        target.manifest_hash = manifest.hash();
      } else if (!ev_baseline.empty()) {
        if (ev_dim < 1) throw ConfigError("baseline eval requires --dim");
        target.class_cfg = ClassConfig{class_from_name(ev_class), ev_dim, ev_sparsity, ev_hidden};
        const EstimatorConfig est = estimator_from_name(ev_baseline, ef);
        target.predictor =
            std::make_unique<EstimatorPredictor>(est, Rng::from_seed(ev_seed).stream("estimator"));
        target.experiment = "baseline";
        RunManifest pseudo;
        pseudo.name = "baseline-" + ev_baseline;
        pseudo.config = {{"baseline", ev_baseline}, {"class", ev_class}, {"dim", ev_dim}};
        pseudo.root_seed = ev_seed;
        target.manifest_hash = pseudo.hash();
      } else {
        throw ConfigError("eval needs --run or --baseline");
      }

      const int d = target.class_cfg.d;
      std::vector<int> ks = ev_ks.empty() ? parse_ks("0:" + std::to_string(2 * d)) : parse_ks(ev_ks);
      std::vector<DistShiftConfig> shifts;
      if (ev_shift == "all") shifts = DistShiftConfig::battery(d);
      else
        for (std::stringstream ss(ev_shift); ss.good();) {
          std::string token;
          std::getline(ss, token, ',');
          if (!token.empty()) shifts.push_back(DistShiftConfig::parse(token));
        }

      std::vector<CsvRow> rows;
      fs::create_directories(ev_out);
      for (const DistShiftConfig& shift : shifts) {
        std::vector<int> ks_ok;
        for (int k : ks) {
          if (shift.variant == Shift::duplicate_query && k < 1) continue;
          if (shift.variant == Shift::orthogonal_query && k >= d) continue;
          ks_ok.push_back(k);
        }
        if (ks_ok.empty()) continue;
        const ErrorCurve curve = error_curve(*target.predictor, target.class_cfg, shift, ks_ok, ev_nprompts,
                                             ev_bootstrap, ev_conf, Rng::from_seed(ev_seed).stream(shift.name()));
        PlotSpec spec;
        spec.title = target.predictor->name() + " / " + shift.name();
        spec.log_y = ev_logy;
        PlotSeries series;
        series.label = target.predictor->name();
        for (size_t i = 0; i < curve.ks.size(); ++i) {
          rows.push_back(CsvRow{target.experiment, target.predictor->name(), shift.name(), curve.ks[i],
                                curve.mean[i], curve.lo[i], curve.hi[i], ev_nprompts, ev_seed});
          series.x.push_back(curve.ks[i]);
          series.y.push_back(curve.mean[i]);
          series.lo.push_back(curve.lo[i]);
          series.hi.push_back(curve.hi[i]);
        }
        spec.series.push_back(std::move(series));
        const std::string csv = results_csv(rows, target.manifest_hash, ev_seed);
        spec.attribution = "manifest:" + target.manifest_hash + " seed:" + std::to_string(ev_seed) +
                           " csv-fnv1a:" + hex64(fnv1a64_bytes(csv));
        write_file(ev_out + "/" + shift.name() + ".svg", render_svg(spec));
        std::cout << shift.name() << ": done (" << ks_ok.size() << " points)\n";
      }
      write_file(ev_out + "/results.csv", results_csv(rows, target.manifest_hash, ev_seed));
      std::cout << "wrote " << ev_out << "/results.csv\n";
      return 0;
    }

    if (pr->parsed()) {
      const RunManifest manifest = RunManifest::load(pr_run);
      const TrainConfig run_cfg = TrainConfig::from_json(manifest.config);
      const ClassConfig ccfg = run_cfg.class_cfg;
      auto params = TransformerParams<float>::load(checkpoint_path(pr_run, pr_ckpt));
      ModelPredictor<float> predictor(&params, "transformer");
      const int d = ccfg.d;
      const int k = pr_k > 0 ? pr_k : 2 * d;
      fs::create_directories(pr_out);
      const std::string attribution = "# manifest " + manifest.hash() + "\n# seed " + std::to_string(pr_seed) + "\n";

      if (pr_kind == "line") {
        Rng rng = Rng::from_seed(pr_seed).stream("line");
        Rng pr_rng = rng.child(0);
        const Prompt prefix = sample_prompt(ccfg, DistShiftConfig{}, k - 1, d, pr_rng);
        Vec dir = gaussian_vec(rng, d);
        dir.normalize();
        const auto pts = line_visualization(predictor, prefix, dir, default_lambda_grid(d));
        std::string csv = attribution + "lambda,model,true,projected_true\n";
        for (const auto& p : pts)
          csv += format_double(p.lambda) + "," + format_double(p.model_value) + "," + format_double(p.true_value) +
                 "," + format_double(p.projected_true) + "\n";
        write_file(pr_out + "/line.csv", csv);
        std::cout << "wrote " << pr_out << "/line.csv\n";
      } else if (pr_kind == "alignment") {
        const std::vector<int> ks = pr_ks.empty() ? std::vector<int>{d / 2, d, 2 * d} : parse_ks(pr_ks);
        QueryGradientFn fn = [&](const Prompt& p) { return predictor.query_gradient(p); };
        const AlignmentReport rep = gradient_alignment(fn, ccfg, ks, pr_nprompts, Rng::from_seed(pr_seed));
        std::string csv = attribution + "k,cos_w,cos_proj,skipped\n";
        for (size_t i = 0; i < rep.ks.size(); ++i)
          csv += std::to_string(rep.ks[i]) + "," + format_double(rep.cos_w[i]) + "," +
                 format_double(rep.cos_proj[i]) + "," + std::to_string(rep.skipped[i]) + "\n";
        write_file(pr_out + "/alignment.csv", csv);
        std::cout << "wrote " << pr_out << "/alignment.csv\n";
      } else if (pr_kind == "query-scale") {
        const std::vector<double> scales = parse_doubles(pr_scales);
        const auto errs = query_scale_sweep(predictor, ccfg, scales, k, pr_nprompts, Rng::from_seed(pr_seed));
        std::string csv = attribution + "scale,mean_error\n";
        for (size_t i = 0; i < scales.size(); ++i)
          csv += format_double(scales[i]) + "," + format_double(errs[i]) + "\n";
        write_file(pr_out + "/query_scale.csv", csv);
        std::cout << "wrote " << pr_out << "/query_scale.csv\n";
      } else {
        throw ConfigError("unknown probe kind: " + pr_kind);
      }
      return 0;
    }

    if (mc->parsed()) {
      const MemorizationResult res =
          memorization_bound(mc_nw, mc_dim, mc_queries, mc_trials, Rng::from_seed(mc_seed), mc_block);
      std::cout << "memorization bound: mean " << res.mean << " sd " << res.sd << " (n_w=" << mc_nw
                << ", d=" << mc_dim << ", queries=" << mc_queries << ", trials=" << mc_trials << ")\n";
      if (!mc_out.empty()) {
        std::string csv = "n_w,d,queries,trials,mean,sd,seed\n";
        csv += std::to_string(mc_nw) + "," + std::to_string(mc_dim) + "," + std::to_string(mc_queries) + "," +
               std::to_string(mc_trials) + "," + format_double(res.mean) + "," + format_double(res.sd) + "," +
               std::to_string(mc_seed) + "\n";
        write_file(mc_out, csv);
      }
      return 0;
    }

    if (pl->parsed()) {
      std::ifstream in(pl_csv);
      if (!in) throw ConfigError("cannot read " + pl_csv);
      std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
      std::stringstream ss(content);
      std::string line, header, manifest_hash = "unknown", seed = "0";
      std::vector<std::vector<std::string>> rows;
      while (std::getline(ss, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
          std::stringstream hs(line.substr(1));
          std::string key, value;
          hs >> key >> value;
          if (key == "manifest") manifest_hash = value;
          if (key == "seed") seed = value;
          continue;
        }
        if (header.empty()) {
          header = line;
          continue;
        }
        std::vector<std::string> fields;
        std::string f;
        for (std::stringstream ls(line); std::getline(ls, f, ',');) fields.push_back(f);
        rows.push_back(std::move(fields));
      }
      PlotSpec spec;
      spec.title = pl_title;
      spec.log_y = pl_logy;
      spec.attribution =
          "manifest:" + manifest_hash + " seed:" + seed + " csv-fnv1a:" + hex64(fnv1a64_bytes(content));
      if (header.rfind("experiment,", 0) == 0) {
        // results schema: one series per (predictor, shift)
        std::map<std::string, PlotSeries> groups;
        static const char* palette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                                        "#8c564b", "#e377c2", "#7f7f7f", "#17becf"};
        for (const auto& r : rows) {
          if (r.size() < 9) continue;
          const std::string key = r[1] + "/" + r[2];
          auto [it, inserted] = groups.try_emplace(key);
          if (inserted) {
            it->second.label = key;
            it->second.color = palette[(groups.size() - 1) % 9];
          }
          it->second.x.push_back(std::stod(r[3]));
          it->second.y.push_back(std::stod(r[4]));
          it->second.lo.push_back(std::stod(r[5]));
          it->second.hi.push_back(std::stod(r[6]));
        }
        for (auto& [key, s] : groups) spec.series.push_back(std::move(s));
      } else if (header.rfind("lambda,", 0) == 0) {
        spec.x_label = "lambda";
        spec.y_label = "value";
        spec.zero_estimator_line = false;
        PlotSeries model, truth, proj;
        model.label = "model";
        truth.label = "true";
        truth.color = "#2ca02c";
        proj.label = "projected";
        proj.color = "#d62728";
        for (const auto& r : rows) {
          if (r.size() < 4) continue;
          model.x.push_back(std::stod(r[0]));
          model.y.push_back(std::stod(r[1]));
          truth.x.push_back(std::stod(r[0]));
          truth.y.push_back(std::stod(r[2]));
          proj.x.push_back(std::stod(r[0]));
          proj.y.push_back(std::stod(r[3]));
        }
        spec.series = {model, truth, proj};
      } else {
        throw ConfigError("unrecognized CSV schema in " + pl_csv);
      }
      write_file(pl_out, render_svg(spec));
      std::cout << "wrote " << pl_out << "\n";
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
