// Command-line front end: run the pipeline, generate scenarios, evaluate.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include <CLI11.hpp>
#include <json.hpp>

#include "citytrack/errors.hpp"
#include "citytrack/losses.hpp"
#include "citytrack/metrics.hpp"
#include "citytrack/pipeline.hpp"
#include "citytrack/reid.hpp"
#include "citytrack/rng.hpp"
#include "citytrack/simkit.hpp"

namespace fs = std::filesystem;
using namespace citytrack;

namespace {

void print_summary(const char* title, const metrics::MotSummary& s) {
  std::printf("%s\n", title);
  std::printf("  %-8s %-8s %-8s %-8s %-6s %-6s %-6s %-6s\n", "IDF1", "IDP", "IDR", "MOTA", "FP", "FN", "IDSW",
              "GT");
  std::printf("  %-8.4f %-8.4f %-8.4f %-8.4f %-6zu %-6zu %-6zu %-6zu\n", s.idf1, s.idp, s.idr, s.mota, s.fp, s.fn,
              s.id_switches, s.num_gt);
  std::printf("%s\n", s.to_json().dump().c_str());
}

int cmd_run(const std::string& config, std::optional<std::uint64_t> seed, const std::string& output) {
  auto cfg = pipeline::PipelineConfig::load(config);
  if (seed) cfg.source.scenario.seed = *seed;
  if (!output.empty()) cfg.output_dir = output;
  const auto source = pipeline::load_source(cfg);
  const auto report = pipeline::run(cfg, source);
  if (!cfg.output_dir.empty() && source.scenario) {
    simkit::write_scenario_files((fs::path(cfg.output_dir) / "scenario").string(), *source.scenario);
  }
  auto j = report.to_json();
  if (source.scenario) {
    const auto gt = pipeline::gt_trajectories(source.scenario->gt);
    j["mct_eval"] = metrics::evaluate(gt, pipeline::identity_trajectories(report.identities)).to_json();
  }
  std::printf("%s\n", j.dump(1).c_str());
  return 0;
}

int cmd_eval(const char* title, const std::string& gt_dir, const std::string& pred, double iou) {
  const auto gt = metrics::read_gt_dir(gt_dir);
  const auto p = metrics::read_prediction_csv(pred);
  print_summary(title, metrics::evaluate(gt, p, iou));
  return 0;
}

int cmd_eval_reid(const std::string& run_dir, const std::string& gt_dir, bool rerank, reid::RerankParams rp) {
  const auto gt = metrics::read_gt_dir(gt_dir);
  const auto pred = metrics::read_prediction_csv((fs::path(run_dir) / "sct.csv").string());
  const auto labels = metrics::majority_labels(pred, gt);
  const auto embs = read_embeddings((fs::path(run_dir) / "tracks.emb").string()).rows;

  std::vector<reid::LabeledTrack> tracks;
  std::vector<Embedding> feats;
  std::ifstream in(fs::path(run_dir) / "tracks.csv");
  if (!in) throw SourceMissing((fs::path(run_dir) / "tracks.csv").string());
  std::string line;
  std::getline(in, line);  // header
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c1 = line.find(',');
    const auto c2 = line.find(',', c1 + 1);
    const std::string cam = line.substr(0, c1);
    const long id = std::stol(line.substr(c1 + 1, c2 - c1 - 1));
    if (row >= embs.size()) throw ParseError("tracks.emb has fewer rows than tracks.csv");
    const auto it = labels.find({cam, id});
    if (it != labels.end()) {
      tracks.push_back({it->second, cam});
      feats.push_back(embs[row]);
    }
    ++row;
  }
  // Queries need a same-identity track in another camera.
  std::vector<reid::LabeledTrack> qs;
  std::vector<Embedding> qf;
  for (std::size_t i = 0; i < tracks.size(); ++i) {
    for (std::size_t j = 0; j < tracks.size(); ++j) {
      if (tracks[j].identity == tracks[i].identity && tracks[j].camera != tracks[i].camera) {
        qs.push_back(tracks[i]);
        qf.push_back(feats[i]);
        break;
      }
    }
  }
  if (qs.empty()) throw NoValidGallery("no identity is seen by two cameras");
  const auto dist = rerank ? reid::k_reciprocal_rerank(qf, feats, rp) : reid::euclidean_distances(qf, feats);
  const auto s = reid::eval_track_reid(qs, tracks, dist);
  std::printf("%-8s %-8s %-8s %-8s\n", "mAP", "CMC1", "CMC5", "queries");
  std::printf("%-8.4f %-8.4f %-8.4f %-8zu\n", s.mAP, s.cmc1, s.cmc5, qs.size());
  std::printf("%s\n",
              nlohmann::json{{"mAP", s.mAP}, {"cmc1", s.cmc1}, {"cmc5", s.cmc5}, {"queries", qs.size()}}.dump().c_str());
  return 0;
}

double rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const double denom = std::max({a.norm(), b.norm(), 1e-12});
  return (a - b).norm() / denom;
}

int cmd_losses_check(std::uint64_t seed, int instances) {
  rng::Stream rs(seed, {rng::hash_string("losses-check")});
  const double h = 1e-6;
  double worst_triplet = 0.0, worst_ce = 0.0;
  for (int n = 0; n < instances; ++n) {
    const int D = 2 + static_cast<int>(rs.below(7));
    const int ids = 2 + static_cast<int>(rs.below(3));
    const int per = 2 + static_cast<int>(rs.below(3));
    losses::LabeledBatch b;
    b.features.resize(ids * per, D);
    for (int i = 0; i < ids * per; ++i) {
      b.ids.push_back(i / per);
      for (int k = 0; k < D; ++k) b.features(i, k) = rs.normal();
    }
    const auto g = losses::batch_hard_triplet_grad(b, 0.3);
    Eigen::MatrixXd num(b.features.rows(), D);
    for (Eigen::Index i = 0; i < num.rows(); ++i) {
      for (Eigen::Index k = 0; k < D; ++k) {
        auto p = b, m = b;
        p.features(i, k) += h;
        m.features(i, k) -= h;
        num(i, k) = (losses::batch_hard_triplet(p, 0.3) - losses::batch_hard_triplet(m, 0.3)) / (2 * h);
      }
    }
    worst_triplet = std::max(worst_triplet, rel_err(g.d_features, num));

    const int C = 2 + static_cast<int>(rs.below(4));
    losses::LinearClassifier clf{Eigen::MatrixXd(C, D), Eigen::VectorXd(C)};
    for (int c = 0; c < C; ++c) {
      clf.b(c) = rs.normal();
      for (int k = 0; k < D; ++k) clf.W(c, k) = rs.normal();
    }
    Eigen::MatrixXd y(b.features.rows(), C);
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      y.row(i) = losses::smooth_targets(static_cast<int>(rs.below(C)), C, 0.1).transpose();
    }
    const auto cg = losses::smoothed_cross_entropy_grad(b.features, y, clf);
    Eigen::MatrixXd nf(b.features.rows(), D);
    for (Eigen::Index i = 0; i < nf.rows(); ++i) {
      for (Eigen::Index k = 0; k < D; ++k) {
        Eigen::MatrixXd p = b.features, m = b.features;
        p(i, k) += h;
        m(i, k) -= h;
        nf(i, k) = (losses::smoothed_cross_entropy(p, y, clf) - losses::smoothed_cross_entropy(m, y, clf)) / (2 * h);
      }
    }
    worst_ce = std::max(worst_ce, rel_err(cg.d_features, nf));
  }
  const bool ok = worst_triplet <= 1e-5 && worst_ce <= 1e-5;
  std::printf("triplet max rel err %.3e\ncross-entropy max rel err %.3e\nexcitation(0,1/2,1) = %g %g %g\n%s\n",
              worst_triplet, worst_ce, losses::excitation_schedule(0, 10), losses::excitation_schedule(5, 10),
              losses::excitation_schedule(10, 10), ok ? "ok" : "FAILED");
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"citytrack: multi-camera vehicle tracking"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Run the tracking pipeline");
  std::string config, output;
  std::optional<std::uint64_t> seed;
  run->add_option("--config", config, "Pipeline config JSON")->required();
  run->add_option("--seed", seed, "Override the scenario seed");
  run->add_option("--output", output, "Override the output directory");

  auto* gen = app.add_subcommand("gen-scenario", "Write a simulated scenario to disk");
  simkit::NoiseProfile noise;
  std::optional<std::uint64_t> g_seed;
  std::optional<int> g_cams, g_vehicles;
  std::optional<double> g_duration, g_fps, g_ramp;
  std::optional<std::string> g_layout;
  std::string gen_out, gen_config;
  int dim = 64;
  gen->add_option("--config", gen_config, "JSON with scenario options (flags override)");
  gen->add_option("--seed", g_seed);
  gen->add_option("--cams", g_cams);
  gen->add_option("--vehicles", g_vehicles);
  gen->add_option("--duration", g_duration);
  gen->add_option("--fps", g_fps);
  gen->add_option("--layout", g_layout, "corridor or grid");
  gen->add_option("--ramp", g_ramp);
  gen->add_option("--jitter", noise.box_jitter_std);
  gen->add_option("--miss", noise.miss_rate);
  gen->add_option("--fp", noise.false_positive_rate);
  gen->add_option("--sigma", noise.embedding_noise_std);
  gen->add_option("--dim", dim);
  gen->add_option("--out", gen_out)->required();

  auto* esct = app.add_subcommand("eval-sct", "Evaluate single-camera tracks");
  auto* emct = app.add_subcommand("eval-mct", "Evaluate multi-camera tracks");
  std::string gt_dir, pred;
  double iou = 0.5;
  for (auto* s : {esct, emct}) {
    s->add_option("--gt", gt_dir, "Directory of <camera>.csv ground truth")->required();
    s->add_option("--pred", pred, "Prediction CSV")->required();
    s->add_option("--iou", iou);
  }

  auto* ereid = app.add_subcommand("eval-reid", "Track re-identification scores of a run");
  std::string run_dir;
  bool rerank = false;
  reid::RerankParams rp;
  ereid->add_option("--run", run_dir, "Run output directory")->required();
  ereid->add_option("--gt", gt_dir, "Ground truth directory")->required();
  ereid->add_flag("--rerank", rerank);
  ereid->add_option("--k1", rp.k1);
  ereid->add_option("--k2", rp.k2);
  ereid->add_option("--lambda", rp.lambda);

  auto* lc = app.add_subcommand("losses-check", "Finite-difference checks of the loss gradients");
  std::uint64_t lc_seed = 1;
  int instances = 50;
  lc->add_option("--seed", lc_seed);
  lc->add_option("--instances", instances);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (run->parsed()) return cmd_run(config, seed, output);
    if (gen->parsed()) {
      simkit::ScenarioOptions so;
      if (!gen_config.empty()) {
        std::ifstream in(gen_config);
        if (!in) throw ConfigError("cannot read " + gen_config);
        try {
          so = simkit::ScenarioOptions::from_json(nlohmann::json::parse(in));
        } catch (const nlohmann::json::exception& e) {
          throw ConfigError(gen_config + ": " + e.what());
        }
      }
      if (g_seed) so.seed = *g_seed;
      if (g_cams) so.n_cams = *g_cams;
      if (g_vehicles) so.n_vehicles = *g_vehicles;
      if (g_duration) so.duration_s = *g_duration;
      if (g_fps) so.fps = *g_fps;
      if (g_ramp) so.ramp_probability = *g_ramp;
      if (g_layout) so.layout = simkit::parse_layout(*g_layout);
      const auto bundle = simkit::gen_scenario(so);
      const auto oracle = simkit::make_oracle(bundle.scenario, dim);
      const auto streams = simkit::render_detections(bundle, oracle, noise, so.seed);
      simkit::write_scenario_files(gen_out, bundle, &streams);
      std::printf("wrote %s: %zu cameras, %zu vehicles, %zu gt boxes\n", gen_out.c_str(),
                  bundle.scenario.viewports.size(), bundle.scenario.vehicles.size(), bundle.gt.box_count());
      return 0;
    }
    if (esct->parsed()) return cmd_eval("single-camera", gt_dir, pred, iou);
    if (emct->parsed()) return cmd_eval("multi-camera", gt_dir, pred, iou);
    if (ereid->parsed()) return cmd_eval_reid(run_dir, gt_dir, rerank, rp);
    if (lc->parsed()) return cmd_losses_check(lc_seed, instances);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 2;
  } catch (const InvalidLayout& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
