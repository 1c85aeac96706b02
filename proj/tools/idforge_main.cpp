// idforge: command-line front end. Each subcommand wraps one module with file
// I/O; `run` executes the whole pipeline from a config file.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "idforge/attrop.hpp"
#include "idforge/bridge.hpp"
#include "idforge/config.hpp"
#include "idforge/corpus.hpp"
#include "idforge/error.hpp"
#include "idforge/genbridge.hpp"
#include "idforge/idsampler.hpp"
#include "idforge/idv.hpp"
#include "idforge/image.hpp"
#include "idforge/pipeline.hpp"
#include "idforge/qa.hpp"

namespace fs = std::filesystem;
using namespace idforge;
using nlohmann::json;

namespace {

std::string id_file(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "id_%05zu.idv", i);
  return buf;
}

struct FitArgs {
  std::string corpus = "synthetic";
  std::size_t corpus_size = 4096;
  std::size_t dim = kDefaultDim;
  std::uint64_t seed = 0;
  std::size_t k = 0;
  std::string out_pca, out_latent;
};

void cmd_fit(const FitArgs& a) {
  ConfigMap m{{"seed", std::to_string(a.seed)},
              {"corpus", a.corpus},
              {"corpus.size", std::to_string(a.corpus_size)},
              {"dim", std::to_string(a.dim)},
              {"pca.k", std::to_string(a.k)}};
  const PipelineConfig cfg = build_config(m, fs::current_path());
  const Matrix corpus = load_corpus(cfg);
  write_pca(a.out_pca, pca_fit(corpus, a.k));
  write_latent(a.out_latent, latent_gaussian_fit(read_pca(a.out_pca), corpus));
}

struct SampleArgs {
  std::size_t n = 0;
  double tau = 0.3;
  std::uint64_t seed = 0;
  std::string pca, latent, out, stats;
  std::size_t dim = kDefaultDim;
  std::size_t corpus_size = 4096;
  std::size_t batch = 4096;
  std::size_t max_candidates = 0;
  bool normalize = false;
};

void cmd_sample(const SampleArgs& a) {
  SamplerConfig sc;
  sc.target_count = a.n;
  sc.tau = a.tau;
  sc.seed = a.seed;
  sc.candidate_batch = a.batch;
  sc.max_candidates = a.max_candidates;
  sc.normalize = a.normalize;
  sc.float32 = true;
  PcaModel model;
  LatentGaussian lg;
  if (a.pca.empty() != a.latent.empty()) {
    fail(ErrorKind::usage, "sample-ids: give both --pca and --latent, or neither");
  }
  if (!a.pca.empty()) {
    model = read_pca(a.pca);
    lg = read_latent(a.latent);
  } else {
    // Self-contained: fit on the synthetic stand-in corpus.
    const RngState root{a.seed, 0};
    const Matrix corpus =
        synthetic_corpus({a.corpus_size, a.dim, 25.0, 0.25, 2.0}, root.derive(streams::corpus));
    model = pca_fit(corpus);
    lg = latent_gaussian_fit(model, corpus);
  }
  const RngState rng = RngState{a.seed, 0}.derive(streams::sample);
  const SampledIdentities s = sample_identity_vectors(sc, model, lg, rng);
  write_idv(a.out, s.pool.to_matrix(),
            json{{"accepted", s.stats.accepted},
                 {"rejected", s.stats.rejected},
                 {"drawn", s.stats.drawn},
                 {"tau", s.stats.tau},
                 {"seed", s.stats.seed}});
  const json stats = sampling_stats_json(s.stats);
  if (!a.stats.empty()) write_file_atomic(a.stats, stats.dump() + "\n");
  std::cerr << "accepted " << s.stats.accepted << ", rejected " << s.stats.rejected
            << " (rate " << s.stats.rejection_rate() << "), " << s.stats.wall_seconds << " s\n";
}

struct PerturbArgs {
  std::string ids, out_dir;
  std::uint64_t seed = 0;
  std::string mixture = "0.3:0.4,0.5:0.4,0.7:0.2";
  std::size_t m = 50;
  double s_min = 0.5;
  bool sigma_is_std = false;
  bool normalize_identity = false;
};

void cmd_perturb(const PerturbArgs& a) {
  PerturbSpec spec;
  spec.mixture = parse_mixture(a.mixture);
  spec.images_per_id = a.m;
  spec.s_min = a.s_min;
  spec.sigma_is_std = a.sigma_is_std;
  spec.normalize_identity = a.normalize_identity;
  spec.validate();
  const Matrix ids = read_idv(a.ids).rows;
  fs::create_directories(a.out_dir);
  const RngState rng = RngState{a.seed, 0}.derive(streams::perturb);
  for (Eigen::Index i = 0; i < ids.rows(); ++i) {
    const auto idx = static_cast<std::size_t>(i);
    const PerturbedSet set = perturb_identity(ids.row(i).transpose(), spec, rng.derive(idx));
    const json sidecar = perturbed_set_json(set);
    const fs::path file = fs::path(a.out_dir) / id_file(idx);
    write_idv(file, set.variants, sidecar);
    write_file_atomic(fs::path(file).replace_extension(".json"), sidecar.dump() + "\n");
  }
}

struct AttrOpArgs {
  std::string ids, in, out, trace;
  std::size_t row = 0;
  AttrOpConfig cfg;
  std::string grad_mode = "analytic";
  ToyGeneratorConfig toy;
  std::uint64_t axis_seed = 0xA115;
};

void cmd_attrop(AttrOpArgs a) {
  if (a.grad_mode == "finite-difference") {
    a.cfg.grad_mode = GradMode::finite_difference;
  } else if (a.grad_mode != "analytic") {
    fail(ErrorKind::usage, "attrop: --grad-mode must be analytic or finite-difference");
  }
  const Matrix ids = read_idv(a.ids).rows;
  if (static_cast<Eigen::Index>(a.row) >= ids.rows()) {
    fail(ErrorKind::index, "attrop: --row beyond identity file");
  }
  IdvFile in = read_idv(a.in);
  const FeatureVector v_id = ids.row(static_cast<Eigen::Index>(a.row)).transpose();
  const ToyGenerator gen(static_cast<std::size_t>(ids.cols()), a.toy);
  SurrogateConfig sc;
  sc.axis_seed = a.axis_seed;
  const Evaluators ev = surrogate_evaluators(gen, sc);
  std::string traces;
  for (Eigen::Index r = 0; r < in.rows.rows(); ++r) {
    const AttrOpResult res = attrop_adjust(v_id, in.rows.row(r).transpose(), gen, ev, a.cfg);
    in.rows.row(r) = res.adjusted.transpose();
    for (const auto& rec : res.trace) {
      json j = trace_record_json(rec);
      j["variant"] = r;
      traces += j.dump() + "\n";
    }
  }
  write_idv(a.out, in.rows, in.metadata);
  if (!a.trace.empty()) write_file_atomic(a.trace, traces);
}

struct GenerateArgs {
  std::string in, out_dir, generator = "toy";
  std::string bridge_command, work_dir;
  std::size_t batch = 64;
  int timeout = 600;
  ToyGeneratorConfig toy;
};

void cmd_generate(const GenerateArgs& a) {
  const Matrix v = read_idv(a.in).rows;
  fs::create_directories(a.out_dir);
  std::vector<Image> images;
  if (a.generator == "toy") {
    const ToyGenerator gen(static_cast<std::size_t>(v.cols()), a.toy);
    for (Eigen::Index r = 0; r < v.rows(); ++r) images.push_back(gen.generate(v.row(r).transpose()));
  } else if (a.generator == "bridge") {
    BridgeConfig bc;
    bc.command = a.bridge_command;
    bc.work_dir = a.work_dir.empty() ? fs::path(a.out_dir) / "bridge" : fs::path(a.work_dir);
    bc.batch_size = a.batch;
    bc.timeout_seconds = a.timeout;
    images = bridge_generate(bc, v).images;
  } else {
    fail(ErrorKind::usage, "generate: --generator must be toy or bridge");
  }
  for (std::size_t k = 0; k < images.size(); ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "img_%03zu.%s", k, images[k].channels == 3 ? "ppm" : "pgm");
    write_pnm(fs::path(a.out_dir) / name, images[k]);
  }
}

struct AuditArgs {
  std::string manifest, ids, reference, json_out, hist_csv;
  QaThresholds thr;
  std::size_t impostor_sample = kDefaultPairCap;
  std::uint64_t seed = 0;
  bool use_id_vectors = false;
};

void cmd_audit(const AuditArgs& a) {
  a.thr.validate();
  std::optional<Matrix> ids, reference;
  if (!a.ids.empty()) ids = read_idv(a.ids).rows;
  if (!a.reference.empty()) reference = read_idv(a.reference).rows;
  if (a.manifest.empty()) {
    if (!ids) fail(ErrorKind::usage, "audit: give --manifest or --ids");
    // Identity vectors only: separability (and leakage when a reference is given).
    json j{{"id_vector_count", ids->rows()},
           {"separability_count", separability_count(*ids, a.thr.separability)},
           {"separability_threshold", a.thr.separability}};
    if (reference) {
      const LeakageResult leak = identity_leakage_rate(*ids, *reference, a.thr.leakage);
      j["leakage_rate"] = leak.rate;
      j["leakage_offending"] = leak.offending;
    }
    std::cout << j.dump() << "\n";
    if (!a.json_out.empty()) write_file_atomic(a.json_out, j.dump() + "\n");
    return;
  }
  const fs::path mpath(a.manifest);
  const DatasetManifest manifest = read_manifest(mpath);
  const fs::path root = mpath.parent_path();
  if (!ids && manifest.records.size() > 0 && manifest.records[0].contains("id_vector")) {
    ids = read_idv(root / manifest.records[0]["id_vector"]["file"].get<std::string>()).rows;
  }
  AuditOptions opts;
  opts.thresholds = a.thr;
  opts.impostor_sample = a.impostor_sample;
  if (a.use_id_vectors) {
    if (!ids) fail(ErrorKind::usage, "audit: --use-id-vectors needs identity vectors");
    opts.identity_features = *ids;
  }
  const std::uint64_t seed = a.seed ? a.seed : manifest.header.value("seed", std::uint64_t{0});
  const QaReport report =
      audit_dataset(manifest_embeddings(manifest, root), opts,
                    RngState{seed, 0}.derive(streams::qa), ids ? &*ids : nullptr,
                    reference ? &*reference : nullptr);
  std::cout << render_report(report);
  if (!a.json_out.empty()) write_file_atomic(a.json_out, to_json(report).dump() + "\n");
  if (!a.hist_csv.empty()) {
    write_file_atomic(a.hist_csv, histogram_csv(report.genuine_hist, report.impostor_hist));
  }
}

struct LeakageArgs {
  std::string synthetic, reference;
  double threshold = 0.7;
};

void cmd_leakage(const LeakageArgs& a) {
  const LeakageResult r =
      identity_leakage_rate(read_idv(a.synthetic).rows, read_idv(a.reference).rows, a.threshold);
  std::cout << json{{"rate", r.rate}, {"offending", r.offending}, {"threshold", a.threshold}}.dump()
            << "\n";
}

struct RunArgs {
  std::string config, out;
  std::vector<std::string> overrides;
  std::string stop_after;
};

void cmd_run(const RunArgs& a) {
  const PipelineConfig cfg = load_config(a.config, a.overrides);
  RunOptions opts;
  if (!a.stop_after.empty()) {
    for (const Stage s : {Stage::fit, Stage::sample, Stage::perturb, Stage::attrop, Stage::generate,
                          Stage::audit}) {
      if (stage_name(s) == a.stop_after) opts.stop_after = s;
    }
    if (!opts.stop_after) fail(ErrorKind::usage, "run: unknown stage '" + a.stop_after + "'");
  }
  const DatasetManifest m = run_pipeline(cfg, a.out, opts);
  if (!m.records.empty()) {
    std::cerr << "wrote " << (fs::path(a.out) / "manifest.jsonl").string() << " ("
              << m.records.size() << " identities)\n";
  }
}

int report_error(ErrorKind kind, const std::string& msg) {
  std::cerr << "idforge: error[" << kind_name(kind) << "]: " << msg << "\n";
  return exit_code_for(kind);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"idforge: synthetic face-identity dataset construction"};
  app.require_subcommand(1);

  FitArgs fit;
  auto* c_fit = app.add_subcommand("fit-pca", "Fit PCA and the latent Gaussian on a feature corpus");
  c_fit->add_option("--corpus", fit.corpus, "IDV feature file, or 'synthetic'");
  c_fit->add_option("--corpus-size", fit.corpus_size);
  c_fit->add_option("--dim", fit.dim);
  c_fit->add_option("--seed", fit.seed)->required();
  c_fit->add_option("--k", fit.k, "PCA rank (0 = full)");
  c_fit->add_option("--out-pca", fit.out_pca)->required();
  c_fit->add_option("--out-latent", fit.out_latent)->required();

  SampleArgs sample;
  auto* c_sample = app.add_subcommand("sample-ids", "Sample mutually dissimilar identity vectors");
  c_sample->add_option("--n", sample.n)->required();
  c_sample->add_option("--tau", sample.tau);
  c_sample->add_option("--seed", sample.seed)->required();
  c_sample->add_option("--pca", sample.pca);
  c_sample->add_option("--latent", sample.latent);
  c_sample->add_option("--dim", sample.dim);
  c_sample->add_option("--corpus-size", sample.corpus_size);
  c_sample->add_option("--batch", sample.batch);
  c_sample->add_option("--max-candidates", sample.max_candidates);
  c_sample->add_flag("--normalize", sample.normalize);
  c_sample->add_option("--out", sample.out)->required();
  c_sample->add_option("--stats", sample.stats, "JSON file for sampling statistics");

  PerturbArgs perturb;
  auto* c_perturb = app.add_subcommand("perturb", "Draw perturbed variants per identity");
  c_perturb->add_option("--ids", perturb.ids)->required();
  c_perturb->add_option("--out-dir", perturb.out_dir)->required();
  c_perturb->add_option("--seed", perturb.seed)->required();
  c_perturb->add_option("--mixture", perturb.mixture, "sigma:fraction,...");
  c_perturb->add_option("--m", perturb.m, "variants per identity");
  c_perturb->add_option("--s-min", perturb.s_min);
  c_perturb->add_flag("--sigma-is-std", perturb.sigma_is_std);
  c_perturb->add_flag("--normalize-identity", perturb.normalize_identity);

  AttrOpArgs attrop;
  auto* c_attrop = app.add_subcommand("attrop", "Adjust variants toward pose/quality targets (toy generator)");
  c_attrop->add_option("--ids", attrop.ids)->required();
  c_attrop->add_option("--row", attrop.row, "identity row in --ids");
  c_attrop->add_option("--in", attrop.in)->required();
  c_attrop->add_option("--out", attrop.out)->required();
  c_attrop->add_option("--trace", attrop.trace);
  c_attrop->add_option("--pose", attrop.cfg.target_pose);
  c_attrop->add_option("--quality", attrop.cfg.target_quality);
  c_attrop->add_option("--iterations", attrop.cfg.iterations);
  c_attrop->add_option("--step", attrop.cfg.step_size);
  c_attrop->add_option("--grad-clip", attrop.cfg.grad_clip);
  c_attrop->add_option("--grad-mode", attrop.grad_mode);
  c_attrop->add_option("--fd-step", attrop.cfg.fd_step);
  c_attrop->add_option("--backtrack", attrop.cfg.backtrack);
  c_attrop->add_flag("--hinge-quality", attrop.cfg.hinge_quality);

  GenerateArgs gen;
  auto* c_gen = app.add_subcommand("generate", "Render feature vectors to images");
  c_gen->add_option("--in", gen.in)->required();
  c_gen->add_option("--out-dir", gen.out_dir)->required();
  c_gen->add_option("--generator", gen.generator, "toy or bridge");
  c_gen->add_option("--bridge-command", gen.bridge_command);
  c_gen->add_option("--work-dir", gen.work_dir);
  c_gen->add_option("--batch", gen.batch);
  c_gen->add_option("--timeout", gen.timeout);

  AuditArgs audit;
  auto* c_audit = app.add_subcommand("audit", "Dataset quality report");
  c_audit->add_option("--manifest", audit.manifest);
  c_audit->add_option("--ids", audit.ids);
  c_audit->add_option("--reference", audit.reference);
  c_audit->add_option("--json", audit.json_out);
  c_audit->add_option("--hist-csv", audit.hist_csv);
  c_audit->add_option("--outlier", audit.thr.outlier);
  c_audit->add_option("--merge", audit.thr.merge);
  c_audit->add_option("--separability", audit.thr.separability);
  c_audit->add_option("--leakage", audit.thr.leakage);
  c_audit->add_option("--impostor-sample", audit.impostor_sample);
  c_audit->add_option("--seed", audit.seed);
  c_audit->add_flag("--use-id-vectors", audit.use_id_vectors);

  LeakageArgs leak;
  auto* c_leak = app.add_subcommand("leakage", "Identity leakage against a reference set");
  c_leak->add_option("--synthetic", leak.synthetic)->required();
  c_leak->add_option("--reference", leak.reference)->required();
  c_leak->add_option("--threshold", leak.threshold);

  RunArgs run;
  auto* c_run = app.add_subcommand("run", "Run the full pipeline from a config file");
  c_run->add_option("--config", run.config)->required();
  c_run->add_option("--out", run.out)->required();
  c_run->add_option("--set", run.overrides, "key=value override (repeatable)");
  c_run->add_option("--stop-after", run.stop_after);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error(ErrorKind::usage, e.what());
  }

  try {
    if (*c_fit) cmd_fit(fit);
    if (*c_sample) cmd_sample(sample);
    if (*c_perturb) cmd_perturb(perturb);
    if (*c_attrop) cmd_attrop(attrop);
    if (*c_gen) cmd_generate(gen);
    if (*c_audit) cmd_audit(audit);
    if (*c_leak) cmd_leakage(leak);
    if (*c_run) cmd_run(run);
  } catch (const Error& e) {
    return report_error(e.kind(), e.what());
  } catch (const fs::filesystem_error& e) {
    return report_error(ErrorKind::io, e.what());
  } catch (const nlohmann::json::exception& e) {
    return report_error(ErrorKind::format, e.what());
  }
  return 0;
}
