#include "idforge/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <cstring>
#include <sstream>

#include "idforge/attrop.hpp"
#include "idforge/error.hpp"
#include "idforge/idv.hpp"
#include "idforge/image.hpp"
#include "idforge/parallel.hpp"

namespace idforge {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view stage_name(Stage stage) noexcept {
  switch (stage) {
    case Stage::fit: return "fit";
    case Stage::sample: return "sample";
    case Stage::perturb: return "perturb";
    case Stage::attrop: return "attrop";
    case Stage::generate: return "generate";
    case Stage::audit: return "audit";
  }
  return "?";
}

// ---- model files ----------------------------------------------------------

void write_pca(const fs::path& path, const PcaModel& model) {
  const auto k = model.components.rows();
  const auto d = model.components.cols();
  Matrix rows(k + 1, d);
  rows.row(0) = model.mean.transpose();
  rows.bottomRows(k) = model.components;
  std::vector<double> ev(model.explained_variance.data(),
                         model.explained_variance.data() + model.explained_variance.size());
  write_idv(path, rows, json{{"section", "PCA1"}, {"explained_variance", ev}});
}

namespace {

const json& require_section(const IdvFile& f, const char* tag, const fs::path& path) {
  if (!f.metadata || !f.metadata->contains("section") || (*f.metadata)["section"] != tag) {
    fail(ErrorKind::format, path.string() + ": not a " + tag + " file");
  }
  return *f.metadata;
}

}  // namespace

PcaModel read_pca(const fs::path& path) {
  const IdvFile f = read_idv(path);
  const json& meta = require_section(f, "PCA1", path);
  if (f.rows.rows() < 2) fail(ErrorKind::format, path.string() + ": PCA1 needs mean + components");
  PcaModel m;
  m.mean = f.rows.row(0).transpose();
  m.components = f.rows.bottomRows(f.rows.rows() - 1);
  const auto ev = meta.at("explained_variance").get<std::vector<double>>();
  if (ev.size() != static_cast<std::size_t>(m.components.rows())) {
    fail(ErrorKind::format, path.string() + ": explained_variance length mismatch");
  }
  m.explained_variance = Eigen::Map<const Vector>(ev.data(), static_cast<Eigen::Index>(ev.size()));
  return m;
}

void write_latent(const fs::path& path, const LatentGaussian& latent) {
  const auto k = latent.gaussian.chol.rows();
  Matrix rows(k + 1, k);
  rows.row(0) = latent.gaussian.mean.transpose();
  rows.bottomRows(k) = latent.gaussian.chol;
  write_idv(path, rows,
            json{{"section", "LGM1"},
                 {"source_count", latent.source_count},
                 {"jitter_used", latent.jitter_used}});
}

LatentGaussian read_latent(const fs::path& path) {
  const IdvFile f = read_idv(path);
  const json& meta = require_section(f, "LGM1", path);
  const auto k = f.rows.cols();
  if (f.rows.rows() != k + 1) fail(ErrorKind::format, path.string() + ": LGM1 must be (k+1) x k");
  LatentGaussian lg;
  lg.gaussian.mean = f.rows.row(0).transpose();
  lg.gaussian.chol = f.rows.bottomRows(k);
  lg.source_count = meta.at("source_count").get<std::size_t>();
  lg.jitter_used = meta.at("jitter_used").get<double>();
  return lg;
}

Matrix load_corpus(const PipelineConfig& cfg) {
  const RngState root{cfg.seed, 0};
  if (cfg.corpus == "synthetic") return synthetic_corpus(cfg.synthetic, root.derive(streams::corpus));
  Matrix data = read_idv(cfg.corpus).rows;
  require_same_length(static_cast<std::size_t>(data.cols()), cfg.dim, "corpus dimension");
  return data;
}

std::vector<std::pair<std::size_t, double>> attrop_assignments(const PipelineConfig& cfg,
                                                               std::size_t identity) {
  const std::size_t m = cfg.images_per_id();
  std::vector<std::size_t> order(m);
  for (std::size_t i = 0; i < m; ++i) order[i] = i;
  RngCursor cur(RngState{cfg.seed, 0}.derive(streams::attrop).derive(identity));
  std::vector<std::pair<std::size_t, double>> out;
  std::size_t picked = 0;
  for (const auto& target : cfg.attrop_targets) {
    for (std::size_t c = 0; c < target.count; ++c, ++picked) {
      const std::size_t j = picked + cur.uniform_index(m - picked);
      std::swap(order[picked], order[j]);
      out.emplace_back(order[picked], target.pose);
    }
  }
  return out;
}

nlohmann::json sampling_stats_json(const SamplingStats& stats) {
  return {{"accepted", stats.accepted}, {"rejected", stats.rejected},
          {"drawn", stats.drawn},       {"rejection_rate", stats.rejection_rate()},
          {"tau", stats.tau},           {"seed", stats.seed},
          {"wall_seconds", stats.wall_seconds}};
}

nlohmann::json perturbed_set_json(const PerturbedSet& set) {
  const auto to_std = [](const Vector& v) { return std::vector<double>(v.begin(), v.end()); };
  return {{"sigmas", to_std(set.sigmas)},
          {"similarities", to_std(set.similarities)},
          {"shrunk", set.shrunk}};
}

// ---- lock -----------------------------------------------------------------

DirectoryLock::DirectoryLock(const fs::path& dir) : path_(dir / ".lock") {
  const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    if (errno == EEXIST) {
      fail(ErrorKind::lock, "another pipeline holds " + path_.string() +
                                " (remove it if no run is active)");
    }
    fail(ErrorKind::io, "cannot create " + path_.string() + ": " + std::strerror(errno));
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] const auto n = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

DirectoryLock::~DirectoryLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

// ---- manifest ---------------------------------------------------------------

std::string encode_manifest(const DatasetManifest& manifest) {
  std::string out = manifest.header.dump() + "\n";
  for (const auto& r : manifest.records) out += r.dump() + "\n";
  return out;
}

DatasetManifest read_manifest(const fs::path& path) {
  std::stringstream ss(read_file(path));
  DatasetManifest m;
  std::string line;
  bool first = true;
  while (std::getline(ss, line)) {
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      fail(ErrorKind::format, path.string() + ": bad manifest line: " + e.what());
    }
    if (first) {
      if (j.value("kind", "") != "header") fail(ErrorKind::format, path.string() + ": missing header");
      m.header = std::move(j);
      first = false;
    } else {
      m.records.push_back(std::move(j));
    }
  }
  if (first) fail(ErrorKind::format, path.string() + ": empty manifest");
  return m;
}

DatasetEmbeddings manifest_embeddings(const DatasetManifest& manifest, const fs::path& root) {
  std::vector<IdentityEmbeddings> ids;
  for (const auto& r : manifest.records) {
    if (!r.contains("embeddings")) {
      fail(ErrorKind::data, "manifest: identity " + r.at("label").dump() + " has no embeddings");
    }
    ids.push_back({r.at("label").get<std::int64_t>(),
                   read_idv(root / r.at("embeddings").get<std::string>()).rows});
  }
  return DatasetEmbeddings(std::move(ids));
}

// ---- stages -----------------------------------------------------------------

namespace {

std::string id_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "id_%05zu", i);
  return buf;
}

std::string img_name(std::size_t k, std::size_t channels = 1) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "img_%03zu.%s", k, channels == 3 ? "ppm" : "pgm");
  return buf;
}

struct Run {
  const PipelineConfig& cfg;
  fs::path out;
  RngState root;

  fs::path ids_file() const { return out / "ids.idv"; }
  fs::path variants_file(std::size_t i) const { return out / "variants" / (id_name(i) + ".idv"); }
  fs::path final_file(std::size_t i) const { return out / "final" / (id_name(i) + ".idv"); }
  fs::path trace_file(std::size_t i) const { return out / "traces" / (id_name(i) + ".jsonl"); }
  fs::path image_dir(std::size_t i) const { return out / "images" / id_name(i); }
  fs::path embed_file(std::size_t i) const { return out / "embeddings" / (id_name(i) + ".idv"); }
  bool attrop_active() const { return cfg.attrop_enabled && cfg.attrop_count() > 0; }
  fs::path source_file(std::size_t i) const {
    return attrop_active() ? final_file(i) : variants_file(i);
  }

  ToyGenerator toy() const { return ToyGenerator(cfg.dim, cfg.toy); }

  void fit() const {
    const Matrix corpus = load_corpus(cfg);
    const PcaModel model = pca_fit(corpus, cfg.pca_k);
    write_pca(out / "models" / "pca.idv", model);
    // Downstream stages see the stored (32-bit) model, so fit the latent
    // Gaussian against exactly that.
    const PcaModel stored = read_pca(out / "models" / "pca.idv");
    write_latent(out / "models" / "latent.idv", latent_gaussian_fit(stored, corpus));
  }

  void sample() const {
    const PcaModel model = read_pca(out / "models" / "pca.idv");
    const LatentGaussian lg = read_latent(out / "models" / "latent.idv");
    require_same_length(model.dim(), cfg.dim, "pca model dimension");
    const SampledIdentities s =
        sample_identity_vectors(cfg.sampler, model, lg, root.derive(streams::sample));
    write_idv(ids_file(), s.pool.to_matrix(),
              json{{"accepted", s.stats.accepted},
                   {"rejected", s.stats.rejected},
                   {"drawn", s.stats.drawn},
                   {"tau", s.stats.tau},
                   {"seed", s.stats.seed}});
    write_file_atomic(out / "ids.stats.json", sampling_stats_json(s.stats).dump() + "\n");
  }

  void perturb() const {
    const Matrix ids = read_idv(ids_file()).rows;
    fs::create_directories(out / "variants");
    for (std::size_t i = 0; i < cfg.identities; ++i) {
      const PerturbedSet set = perturb_identity(ids.row(static_cast<Eigen::Index>(i)).transpose(),
                                                cfg.perturb, root.derive(streams::perturb).derive(i));
      const json sidecar = perturbed_set_json(set);
      write_idv(variants_file(i), set.variants, sidecar);
      write_file_atomic(fs::path(variants_file(i)).replace_extension(".json"), sidecar.dump() + "\n");
    }
  }

  void attrop() const {
    const Matrix ids = read_idv(ids_file()).rows;
    const ToyGenerator gen = toy();
    SurrogateConfig sc;
    sc.axis_seed = cfg.pose_axis_seed;
    sc.quality_offset = cfg.quality_offset;
    sc.quality_scale = cfg.quality_scale;
    const Evaluators ev = surrogate_evaluators(gen, sc);
    fs::create_directories(out / "final");
    fs::create_directories(out / "traces");
    std::vector<std::size_t> per_identity(cfg.identities);
    parallel_for(cfg.identities, [&](std::size_t i) {
      IdvFile variants = read_idv(variants_file(i));
      const FeatureVector v_id = ids.row(static_cast<Eigen::Index>(i)).transpose();
      std::string traces;
      json replaced = json::array();
      for (const auto& [k, pose] : attrop_assignments(cfg, i)) {
        AttrOpConfig ac = cfg.attrop;
        ac.target_pose = pose;
        const auto row = static_cast<Eigen::Index>(k);
        const AttrOpResult r =
            attrop_adjust(v_id, variants.rows.row(row).transpose(), gen, ev, ac);
        variants.rows.row(row) = r.adjusted.transpose();
        for (const auto& rec : r.trace) {
          json j = trace_record_json(rec);
          j["variant"] = k;
          j["target_pose"] = pose;
          traces += j.dump() + "\n";
        }
        replaced.push_back({{"variant", k}, {"target_pose", pose}});
      }
      json meta = variants.metadata.value_or(json::object());
      meta["attrop"] = replaced;
      write_idv(final_file(i), variants.rows, meta);
      write_file_atomic(trace_file(i), traces);
    });
  }

  void generate() const {
    if (cfg.generator == GeneratorKind::toy) {
      const ToyGenerator gen = toy();
      parallel_for(cfg.identities, [&](std::size_t i) {
        const Matrix v = read_idv(source_file(i)).rows;
        fs::create_directories(image_dir(i));
        for (Eigen::Index k = 0; k < v.rows(); ++k) {
          write_pnm(image_dir(i) / img_name(static_cast<std::size_t>(k)),
                    gen.generate(v.row(k).transpose()));
        }
      });
      return;
    }
    BridgeConfig bc = cfg.bridge;
    if (bc.work_dir.empty()) bc.work_dir = out / "bridge";
    for (std::size_t i = 0; i < cfg.identities; ++i) {
      const Matrix v = read_idv(source_file(i)).rows;
      const BridgeOutput res = bridge_generate(bc, v);
      fs::create_directories(image_dir(i));
      for (std::size_t k = 0; k < res.images.size(); ++k) {
        write_pnm(image_dir(i) / img_name(k, res.images[k].channels), res.images[k]);
      }
    }
  }

  void audit() const {
    fs::create_directories(out / "embeddings");
    std::vector<IdentityEmbeddings> ds(cfg.identities);
    if (cfg.generator == GeneratorKind::toy) {
      const ToyGenerator gen = toy();
      parallel_for(cfg.identities, [&](std::size_t i) {
        Matrix e(static_cast<Eigen::Index>(cfg.images_per_id()), static_cast<Eigen::Index>(cfg.dim));
        for (std::size_t k = 0; k < cfg.images_per_id(); ++k) {
          e.row(static_cast<Eigen::Index>(k)) =
              gen.embed(read_pnm(image_dir(i) / img_name(k))).transpose();
        }
        ds[i] = {static_cast<std::int64_t>(i), std::move(e)};
      });
    } else {
      // No face recognizer on this side of the bridge: audit the feature vectors.
      for (std::size_t i = 0; i < cfg.identities; ++i) {
        ds[i] = {static_cast<std::int64_t>(i), read_idv(source_file(i)).rows};
      }
    }
    for (std::size_t i = 0; i < cfg.identities; ++i) write_idv(embed_file(i), ds[i].embeddings);

    const Matrix ids = read_idv(ids_file()).rows;
    AuditOptions opts;
    opts.thresholds = cfg.qa;
    opts.impostor_sample = cfg.qa_impostor_sample;
    opts.genuine_cap = cfg.qa_genuine_cap;
    if (cfg.qa_use_id_vectors) opts.identity_features = ids;
    std::optional<Matrix> reference;
    if (!cfg.qa_reference.empty()) reference = read_idv(cfg.qa_reference).rows;
    const QaReport report =
        audit_dataset(DatasetEmbeddings(std::move(ds)), opts, root.derive(streams::qa), &ids,
                      reference ? &*reference : nullptr);
    write_file_atomic(out / "qa_report.json", to_json(report).dump() + "\n");
    write_file_atomic(out / "qa_report.txt", render_report(report));
    write_file_atomic(out / "qa_hist.csv", histogram_csv(report.genuine_hist, report.impostor_hist));
  }

  DatasetManifest manifest() const {
    DatasetManifest m;
    const IdvFile ids = read_idv(ids_file());
    m.header = {{"kind", "header"},
                {"format", "idforge-manifest-1"},
                {"seed", cfg.seed},
                {"identities", cfg.identities},
                {"images_per_id", cfg.images_per_id()},
                {"dim", cfg.dim},
                {"sampling", *ids.metadata},
                {"config", config_json(cfg)}};
    const auto rel = [&](const fs::path& p) { return fs::relative(p, out).generic_string(); };
    for (std::size_t i = 0; i < cfg.identities; ++i) {
      const json meta = read_idv(source_file(i)).metadata.value_or(json::object());
      json images = json::array();
      for (std::size_t k = 0; k < cfg.images_per_id(); ++k) {
        fs::path p = image_dir(i) / img_name(k, 3);
        if (!fs::exists(p)) p = image_dir(i) / img_name(k);
        images.push_back(rel(p));
      }
      json r = {{"label", i},
                {"id_vector", {{"file", rel(ids_file())}, {"row", i}}},
                {"variants", rel(variants_file(i))},
                {"sigmas", meta.at("sigmas")},
                {"images", images},
                {"embeddings", rel(embed_file(i))}};
      if (attrop_active()) {
        r["final"] = rel(final_file(i));
        r["trace"] = rel(trace_file(i));
        r["attrop"] = meta.at("attrop");
      }
      m.records.push_back(std::move(r));
    }
    return m;
  }
};

struct Checkpoint {
  std::string config_hash;
  std::vector<std::string> completed;

  bool done(Stage s) const {
    return std::find(completed.begin(), completed.end(), stage_name(s)) != completed.end();
  }
};

Checkpoint read_checkpoint(const fs::path& path) {
  Checkpoint c;
  if (!fs::exists(path)) return c;
  const json j = json::parse(read_file(path));
  c.config_hash = j.at("config_hash").get<std::string>();
  c.completed = j.at("completed").get<std::vector<std::string>>();
  return c;
}

void write_checkpoint(const fs::path& path, const Checkpoint& c) {
  write_file_atomic(path, json{{"config_hash", c.config_hash}, {"completed", c.completed}}.dump() + "\n");
}

}  // namespace

DatasetManifest run_pipeline(const PipelineConfig& cfg, const fs::path& out_dir,
                             const RunOptions& options) {
  cfg.validate();
  fs::create_directories(out_dir / "models");
  DirectoryLock lock(out_dir);

  const fs::path cp_path = out_dir / "checkpoint.json";
  Checkpoint cp = read_checkpoint(cp_path);
  const std::string hash = config_hash(cfg);
  if (!cp.config_hash.empty() && cp.config_hash != hash) {
    fail(ErrorKind::config, out_dir.string() + " holds a run with a different config");
  }
  cp.config_hash = hash;

  const Run run{cfg, out_dir, RngState{cfg.seed, 0}};
  const std::pair<Stage, void (Run::*)() const> stages[] = {
      {Stage::fit, &Run::fit},           {Stage::sample, &Run::sample},
      {Stage::perturb, &Run::perturb},   {Stage::attrop, &Run::attrop},
      {Stage::generate, &Run::generate}, {Stage::audit, &Run::audit},
  };
  for (const auto& [stage, fn] : stages) {
    if (stage == Stage::attrop && !run.attrop_active()) continue;
    if (!cp.done(stage)) {
      const std::string last = cp.completed.empty() ? "none" : cp.completed.back();
      const std::string prefix = "stage " + std::string(stage_name(stage)) +
                                 " failed (last completed stage: " + last + "): ";
      try {
        (run.*fn)();
      } catch (const Error& e) {
        throw Error(e.kind(), prefix + e.what());
      } catch (const fs::filesystem_error& e) {
        throw Error(ErrorKind::io, prefix + e.what());
      } catch (const json::exception& e) {
        throw Error(ErrorKind::format, prefix + e.what());
      }
      cp.completed.emplace_back(stage_name(stage));
      write_checkpoint(cp_path, cp);
    }
    if (options.stop_after == stage) return {};
  }
  DatasetManifest m = run.manifest();
  write_file_atomic(out_dir / "manifest.jsonl", encode_manifest(m));
  return m;
}

}  // namespace idforge
