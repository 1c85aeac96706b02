// Acceptance run: one PASS/FAIL line per top-level criterion, each measured
// against an oracle computed here rather than by the library.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <thread>

#include "helpers.hpp"
#include "oracles.hpp"
#include "idforge/attrop.hpp"
#include "idforge/bridge.hpp"
#include "idforge/corpus.hpp"
#include "idforge/error.hpp"
#include "idforge/genbridge.hpp"
#include "idforge/idsampler.hpp"
#include "idforge/idv.hpp"
#include "idforge/image.hpp"
#include "idforge/parallel.hpp"
#include "idforge/pca.hpp"
#include "idforge/perturb.hpp"
#include "idforge/pipeline.hpp"
#include "idforge/qa.hpp"

using namespace idforge;
namespace fs = std::filesystem;

namespace {

constexpr std::uint64_t kSeed = 7;
int failures = 0;

void verdict(const std::string& name, bool pass, const std::string& detail) {
  std::printf("%s %s: %s\n", pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

void guarded(const std::string& name, const std::function<void()>& body) {
  try {
    body();
  } catch (const std::exception& e) {
    verdict(name, false, std::string("threw: ") + e.what());
  }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

template <typename... Args>
std::string fmt(const char* f, Args... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Models {
  Matrix corpus;
  PcaModel pca;
  LatentGaussian lg;
};

const Models& models() {
  static const Models m = [] {
    Models out;
    out.corpus = synthetic_corpus({4096, 512, 25.0, 0.25, 2.0},
                                  RngState{kSeed, 0}.derive(streams::corpus));
    out.pca = pca_fit(out.corpus);
    out.lg = latent_gaussian_fit(out.pca, out.corpus);
    return out;
  }();
  return m;
}

// Independent O(n^2) audit: double GEMM over normalized rows in tiles, with
// every pair near or above tau re-evaluated in extended precision.
std::size_t pairs_above(const Matrix& pool, double tau, double* max_seen) {
  Matrix unit = pool;
  for (Eigen::Index r = 0; r < unit.rows(); ++r) unit.row(r) /= unit.row(r).norm();
  const Eigen::Index n = unit.rows(), tile = 2048;
  const auto d = static_cast<std::size_t>(pool.cols());
  std::size_t violations = 0;
  double best = -1.0;
  for (Eigen::Index i0 = 0; i0 < n; i0 += tile) {
    const Eigen::Index ni = std::min(tile, n - i0);
    for (Eigen::Index j0 = i0; j0 < n; j0 += tile) {
      const Eigen::Index nj = std::min(tile, n - j0);
      const Eigen::MatrixXd g = unit.middleRows(i0, ni) * unit.middleRows(j0, nj).transpose();
      for (Eigen::Index a = 0; a < ni; ++a) {
        for (Eigen::Index b = (i0 == j0 ? a + 1 : 0); b < nj; ++b) {
          double s = g(a, b);
          if (s > tau - 1e-9) {
            s = testutil::ref_cosine(pool.data() + (i0 + a) * pool.cols(),
                                     pool.data() + (j0 + b) * pool.cols(), d);
            if (s > tau) ++violations;
          }
          best = std::max(best, s);
        }
      }
    }
  }
  *max_seen = best;
  return violations;
}

Matrix pool_1k, pool_10k;

void sampler_criteria() {
  const Models& m = models();
  const auto cores = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  // The five-minute bound is stated for 8 cores; scale it to the cores present.
  const double budget = 300.0 * 8.0 / static_cast<double>(std::min<std::size_t>(cores, 8));
  std::string detail;
  bool ok = true;
  SamplingStats stats100k;
  double secs100k = 0.0;
  for (const std::size_t n : {std::size_t{1000}, std::size_t{10000}, std::size_t{100000}}) {
    SamplerConfig cfg;
    cfg.target_count = n;
    cfg.tau = 0.3;
    cfg.float32 = true;
    const auto t0 = std::chrono::steady_clock::now();
    Matrix pool;
    SamplingStats stats;
    {
      const SampledIdentities s = sample_identity_vectors(
          cfg, m.pca, m.lg, RngState{kSeed, 0}.derive(streams::sample));
      pool = s.pool.to_matrix();
      stats = s.stats;
    }
    const double secs = seconds_since(t0);
    double max_seen = 0.0;
    const auto t1 = std::chrono::steady_clock::now();
    const std::size_t bad = pairs_above(pool, 0.3, &max_seen);
    ok = ok && bad == 0 && static_cast<std::size_t>(pool.rows()) == n;
    detail += fmt("n=%zu pairs>tau=%zu max=%.6f sample=%.1fs audit=%.1fs; ", n, bad, max_seen, secs,
                  seconds_since(t1));
    if (n == 1000) pool_1k = pool;
    if (n == 10000) pool_10k = pool;
    if (n == 100000) {
      stats100k = stats;
      secs100k = secs;
    }
  }
  ok = ok && secs100k <= budget;
  detail += fmt("100k time %.1fs <= %.0fs (%zu cores)", secs100k, budget, cores);
  verdict("sampler separation", ok, detail);

  const double rate = stats100k.rejection_rate();
  verdict("rejection rate", rate < 0.05,
          fmt("%zu rejected / %zu drawn = %.4f%% at n=100000, d=512 (< 5%%)", stats100k.rejected,
              stats100k.drawn, 100.0 * rate));
}

void perturbation_criterion() {
  const Matrix ids = pool_10k.topRows(2000);
  const RngState root = RngState{kSeed, 0}.derive(streams::perturb);
  struct Mix {
    const char* label;
    std::vector<SigmaShare> shares;
  };
  const Mix mixes[] = {{"{0.3}", {{0.3, 1.0}}},
                       {"{0.3,0.5}", {{0.3, 0.6}, {0.5, 0.4}}},
                       {"{0.3,0.5,0.7}", {{0.3, 0.4}, {0.5, 0.4}, {0.7, 0.2}}}};
  std::vector<double> sim_min;
  std::size_t variants = 0, below = 0, shrunk = 0;
  for (const Mix& mix : mixes) {
    PerturbSpec spec;
    spec.mixture = mix.shares;
    double lo = 1.0;
    for (Eigen::Index i = 0; i < ids.rows(); ++i) {
      const Vector v = ids.row(i).transpose();
      const PerturbedSet set = perturb_identity(v, spec, root.derive(static_cast<std::uint64_t>(i)));
      for (Eigen::Index k = 0; k < set.variants.rows(); ++k) {
        const double s = testutil::ref_cosine(set.variants.data() + k * set.variants.cols(),
                                              v.data(), static_cast<std::size_t>(v.size()));
        lo = std::min(lo, s);
        if (&mix == &mixes[2]) {
          ++variants;
          below += s < 0.5;
        }
      }
      if (&mix == &mixes[2]) shrunk += set.shrunk;
    }
    sim_min.push_back(lo);
  }
  const bool monotone = sim_min[0] > sim_min[1] && sim_min[1] > sim_min[2];
  verdict("perturbation constraint", variants == 100000 && below == 0 && monotone,
          fmt("default mixture: %zu variants, %zu below 0.5 (%zu shrunk); Sim_min %s=%.4f "
              "%s=%.4f %s=%.4f",
              variants, below, shrunk, mixes[0].label, sim_min[0], mixes[1].label, sim_min[1],
              mixes[2].label, sim_min[2]));
}

void noise_criterion() {
  const Vector base = pool_1k.row(0).transpose();
  const double d = static_cast<double>(base.size());
  std::string detail;
  double worst = 0.0;
  for (const double scale_to : {0.0, 12.0}) {
    const Vector v = scale_to > 0.0 ? Vector(base * (scale_to / base.norm())) : base;
    const double nv = v.norm();
    for (const double sigma : {0.3, 0.5, 0.7}) {
      PerturbSpec spec;
      spec.mixture = {{sigma, 1.0}};
      spec.images_per_id = 100000;
      spec.s_min = 0.0;  // unconstrained draws
      const PerturbedSet set = perturb_identity(v, spec, RngState{kSeed, 31});
      long double sum = 0.0L;
      for (Eigen::Index k = 0; k < set.variants.rows(); ++k) {
        sum += testutil::ref_cosine(set.variants.data() + k * set.variants.cols(), v.data(),
                                    static_cast<std::size_t>(v.size()));
      }
      const double mc = static_cast<double>(sum / set.variants.rows());
      const double closed = nv / std::sqrt(nv * nv + d * sigma);
      const double rel = std::abs(mc - closed) / closed;
      worst = std::max(worst, rel);
      detail += fmt("|v|=%.1f s2=%.1f mc=%.4f closed=%.4f; ", nv, sigma, mc, closed);
    }
  }
  verdict("noise convention", worst <= 0.02,
          detail + fmt("worst relative error %.3f%% (<= 2%%, 1e5 draws each)", 100.0 * worst));
}

void attrop_criterion() {
  const ToyGenerator gen(512);
  SurrogateConfig sc;
  sc.pose_axis = random_unit_vector(512, RngState{kSeed, 0xA71});
  const Vector u = sc.pose_axis;
  const Evaluators ev = surrogate_evaluators(gen, sc);
  AttrOpConfig cfg;
  cfg.target_pose = 60.0;

  double worst_grad = 0.0;
  for (std::uint64_t p = 0; p < 20; ++p) {
    const Vector v_id = random_unit_vector(512, RngState{kSeed, 100 + p});
    const Vector v = v_id + 0.5 * random_unit_vector(512, RngState{kSeed, 200 + p});
    const Vector g = attrop_gradient(v, v_id, gen, ev, cfg);
    const Vector fd = finite_difference_gradient(
        [&](const Vector& w) { return attrop_loss(gen.generate(w), v_id, ev, cfg).total; }, v,
        1e-6);
    worst_grad = std::max(worst_grad, (g - fd).norm() / fd.norm());
  }

  cfg.iterations = 20;
  std::size_t success = 0, noop_ok = 0, redraws = 0;
  double worst_pose = 0.0, worst_id = 1.0;
  for (std::uint64_t t = 0; t < 100; ++t) {
    Vector v_id, v_im;
    double start = 90.0;
    for (std::uint64_t attempt = 0; std::abs(start) > 5.0; ++attempt) {
      const RngState rng{kSeed ^ 0xA770, t * 64 + attempt};
      v_id = random_unit_vector(512, rng.derive(0));
      v_id -= v_id.dot(u) * u;
      v_id.normalize();
      Vector noise = random_unit_vector(512, rng.derive(1));
      noise -= noise.dot(u) * u;
      v_im = v_id + 0.4 * noise;
      start = ev.pose->value(gen.generate(v_im));
      redraws += attempt > 0;
    }
    const AttrOpResult r = attrop_adjust(v_id, v_im, gen, ev, cfg);
    const TraceRecord& last = r.trace.back();
    const double pose_err = std::abs(cfg.target_pose - std::abs(last.pose));
    worst_pose = std::max(worst_pose, pose_err);
    worst_id = std::min(worst_id, last.identity_cosine);
    success += pose_err < 5.0 && last.identity_cosine >= 0.5;

    AttrOpConfig zero = cfg;
    zero.iterations = 0;
    const AttrOpResult z = attrop_adjust(v_id, v_im, gen, ev, zero);
    noop_ok += std::memcmp(z.adjusted.data(), v_im.data(), sizeof(double) * 512) == 0;
  }
  verdict("attrop", worst_grad <= 1e-4 && success >= 95 && noop_ok == 100,
          fmt("gradient vs central differences worst rel err %.2e over 20 probes (<= 1e-4); "
              "P=60 T=20 step=%.2f: %zu/100 trials reach |pose-P|<5 with id cos>=0.5 "
              "(worst pose err %.2f, min id cos %.3f, %zu start redraws); T=0 bitwise no-op %zu/100",
              worst_grad, cfg.step_size, success, worst_pose, worst_id, redraws, noop_ok));
}

void pca_criterion() {
  const Models& m = models();
  const Matrix rec = pca_inverse_rows(m.pca, pca_transform_rows(m.pca, m.corpus));
  double worst_rt = 0.0;
  for (Eigen::Index r = 0; r < rec.rows(); ++r) {
    worst_rt = std::max(worst_rt, (rec.row(r) - m.corpus.row(r)).norm() / m.corpus.row(r).norm());
  }
  const Eigen::MatrixXd gram = m.pca.components * m.pca.components.transpose();
  const double ortho =
      (gram - Eigen::MatrixXd::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff();

  auto covariance = [](const Matrix& x) {
    const Matrix c = x.rowwise() - x.colwise().mean();
    return Eigen::MatrixXd((c.transpose() * c) / static_cast<double>(x.rows() - 1));
  };
  const Matrix draws = sample_feature_vectors(m.pca, m.lg, 50000, RngState{kSeed, 41});
  const Eigen::MatrixXd target = covariance(m.corpus);
  const double cov_rel = (covariance(draws) - target).norm() / target.norm();
  verdict("pca",
          m.pca.rank() == 512 && worst_rt <= 1e-6 && ortho <= 1e-8 && cov_rel <= 0.10,
          fmt("rank %zu; round trip worst rel err %.2e (<= 1e-6); orthonormality %.2e (<= 1e-8); "
              "covariance at 50k draws rel Frobenius %.4f (<= 0.10)",
              m.pca.rank(), worst_rt, ortho, cov_rel));
}

void qa_criterion() {
  std::mt19937_64 gen(kSeed);
  std::size_t eer_match = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t ng = 1 + gen() % 2000, ni = 1 + gen() % 2000;
    std::normal_distribution<double> gd(0.6, 0.15), id(0.05, 0.15);
    const bool grid = trial % 4 == 0;
    std::vector<double> g(ng), im(ni);
    for (auto& x : g) x = grid ? std::round(gd(gen) * 50) / 50 : gd(gen);
    for (auto& x : im) x = grid ? std::round(id(gen) * 50) / 50 : id(gen);
    const EerResult r = equal_error_rate(g, im);
    const auto ref = testutil::brute_force_eer(g, im);
    eer_match += r.eer == ref.eer && r.threshold == ref.threshold && r.far == ref.far &&
                 r.frr == ref.frr;
  }

  // Planted outlier: 99 near-copies of an identity vector plus one vector orthogonal to it.
  const Vector idv = pool_1k.row(0).transpose();
  Matrix emb(100, 512);
  for (Eigen::Index k = 0; k < 99; ++k) {
    emb.row(k) = (idv + 0.05 * testutil::gaussian_vector(512, 900 + k)).transpose();
  }
  Vector orth = pool_1k.row(1).transpose();
  orth -= orth.dot(idv) / idv.squaredNorm() * idv;
  emb.row(99) = orth.transpose();
  const double outlier = intra_class_outlier_rate(DatasetEmbeddings({{0, emb}}), 0.3);

  // Planted duplicates: 5 reference rows copied into 1000 synthetic rows.
  Matrix synthetic = pool_10k.middleRows(0, 1000);
  const Matrix reference = pool_10k.middleRows(1000, 200);
  const std::vector<std::size_t> planted{3, 141, 592, 653, 997};
  for (std::size_t k = 0; k < planted.size(); ++k) {
    synthetic.row(static_cast<Eigen::Index>(planted[k])) = reference.row(static_cast<Eigen::Index>(40 * k));
  }
  const LeakageResult leak = identity_leakage_rate(synthetic, reference, 0.7);

  const std::size_t sep1k = separability_count(pool_1k, 0.4);
  const std::size_t sep10k = separability_count(pool_10k, 0.4);
  verdict("qa oracles",
          eer_match == 100 && outlier == 0.01 && leak.rate == 0.005 && leak.offending == planted &&
              sep1k == 1000 && sep10k == 10000,
          fmt("EER equals brute force on %zu/100 score sets; planted outlier rate %.4f (0.01); "
              "planted leakage rate %.4f with %zu/5 exact indices (0.005); separability at 0.4: "
              "%zu/1000, %zu/10000",
              eer_match, outlier, leak.rate,
              static_cast<std::size_t>(leak.offending == planted ? 5 : 0), sep1k, sep10k));
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    const std::string rel = fs::relative(e.path(), root).string();
    if (rel == "ids.stats.json") continue;  // records wall time
    out[rel] = testutil::slurp(e.path());
  }
  return out;
}

void determinism_criterion() {
  const PipelineConfig cfg = build_config({{"seed", std::to_string(kSeed)},
                                           {"n", "64"},
                                           {"images_per_id", "10"},
                                           {"attrop.targets", "60:4,85:2"}});
  const fs::path a = testutil::temp_dir("accept_run_a"), b = testutil::temp_dir("accept_run_b");
  auto t0 = std::chrono::steady_clock::now();
  run_pipeline(cfg, a);
  const double ta = seconds_since(t0);
  t0 = std::chrono::steady_clock::now();
  run_pipeline(cfg, b);
  const double tb = seconds_since(t0);
  const auto sa = snapshot(a), sb = snapshot(b);
  std::size_t images = 0, vectors = 0, differing = 0;
  for (const auto& [rel, bytes] : sa) {
    images += rel.ends_with(".pgm") || rel.ends_with(".ppm");
    vectors += rel.ends_with(".idv");
    const auto it = sb.find(rel);
    differing += it == sb.end() || it->second != bytes;
  }
  differing += sa.size() != sb.size();
  const bool has_manifest = sa.count("manifest.jsonl") == 1;
  verdict("determinism",
          has_manifest && images == 640 && differing == 0 && ta <= 60.0 && tb <= 60.0,
          fmt("n=64 m=10, 6 attrop variants/identity: %zu files (%zu images, %zu vector files, "
              "manifest %s), %zu differ; runtimes %.1fs and %.1fs (<= 60s)",
              sa.size(), images, vectors, has_manifest ? "present" : "missing", differing, ta, tb));
}

void formats_criterion() {
  const fs::path dir = testutil::temp_dir("accept_formats");
  std::size_t ok = 0, total = 0;
  auto check = [&](bool c) {
    ++total;
    ok += c;
  };

  // IDV1: float-representable data survives bit for bit, and re-encoding is byte-identical.
  for (std::uint64_t s = 0; s < 5; ++s) {
    Matrix m = testutil::gaussian_matrix(static_cast<Eigen::Index>(1 + 37 * s), 512, s, 10.0)
                   .cast<float>()
                   .cast<double>();
    const nlohmann::json meta = {{"seed", s}};
    write_idv(dir / "x.idv", m, s % 2 ? std::optional<nlohmann::json>(meta) : std::nullopt);
    const IdvFile f = read_idv(dir / "x.idv");
    check(f.rows.size() == m.size() &&
          std::memcmp(f.rows.data(), m.data(), sizeof(double) * m.size()) == 0);
    check(encode_idv(f.rows, f.metadata) == testutil::slurp(dir / "x.idv"));
  }
  // PGM/PPM: quantized pixels survive exactly.
  std::mt19937_64 rng(kSeed);
  for (const std::size_t ch : {std::size_t{1}, std::size_t{3}}) {
    Image img(31, 17, ch);
    for (Eigen::Index i = 0; i < img.pixels.size(); ++i) img.pixels[i] = (rng() % 256) / 255.0;
    write_pnm(dir / "x.pnm", img);
    const Image back = read_pnm(dir / "x.pnm");
    check(back.same_shape(img) && back.pixels == img.pixels);
    check(encode_pnm(back) == testutil::slurp(dir / "x.pnm"));
  }

  // Bridge contract against the shell-script fake adapter.
  const std::string fake = "sh " + shell_quote(IDFORGE_FAKES_DIR "/fake_adapter.sh");
  auto bridge = [&](const std::string& behavior, BridgeMode mode = BridgeMode::images) {
    BridgeConfig cfg;
    cfg.command = fake + " " + behavior;
    cfg.work_dir = dir / ("bridge_" + behavior);
    cfg.batch_size = 4;
    cfg.timeout_seconds = behavior == "hang" ? 1 : 30;
    cfg.mode = mode;
    return cfg;
  };
  Matrix tagged = Matrix::Zero(10, 8);
  for (Eigen::Index i = 0; i < 10; ++i) tagged(i, 0) = std::bit_cast<float>(0x3F800000u + static_cast<std::uint32_t>(i));
  const BridgeOutput imgs = bridge_generate(bridge("ok"), tagged);
  bool ordered = imgs.images.size() == 10;
  for (std::size_t i = 0; ordered && i < 10; ++i) ordered = imgs.images[i].pixels[0] == i / 255.0;
  check(ordered);
  const Matrix emb = testutil::gaussian_matrix(9, 16, 3).cast<float>().cast<double>();
  check(bridge_generate(bridge("embed", BridgeMode::embeddings), emb).embeddings == emb);
  auto kind_of = [&](const BridgeConfig& cfg) {
    try {
      bridge_generate(cfg, tagged);
    } catch (const BridgeError& e) {
      return std::pair{e.kind(), e.missing_index()};
    }
    return std::pair{ErrorKind::usage, -1L};
  };
  check(kind_of(bridge("missing")) == std::pair{ErrorKind::bridge_incomplete, 2L});
  check(kind_of(bridge("fail")).first == ErrorKind::bridge_exit);
  check(kind_of(bridge("garbage")).first == ErrorKind::bridge_malformed);
  check(kind_of(bridge("hang")).first == ErrorKind::bridge_timeout);

  verdict("formats", ok == total,
          fmt("%zu/%zu checks: IDV1 and PGM/PPM bitwise round trips; bridge order, embeddings "
              "echo, missing/exit/malformed/timeout errors via fake adapter",
              ok, total));
}

}  // namespace

int main() {
  std::printf("acceptance: %u hardware threads, %zu workers\n", std::thread::hardware_concurrency(),
              worker_count());
  std::fflush(stdout);
  guarded("sampler separation", sampler_criteria);
  const bool pools = pool_10k.rows() > 0;
  if (pools) {
    guarded("perturbation constraint", perturbation_criterion);
    guarded("noise convention", noise_criterion);
  } else {
    verdict("perturbation constraint", false, "no sampled pool available");
    verdict("noise convention", false, "no sampled pool available");
  }
  guarded("attrop", attrop_criterion);
  guarded("pca", pca_criterion);
  if (pools) {
    guarded("qa oracles", qa_criterion);
  } else {
    verdict("qa oracles", false, "no sampled pool available");
  }
  guarded("determinism", determinism_criterion);
  guarded("formats", formats_criterion);
  std::printf("%s\n", failures ? "acceptance: FAILURES" : "acceptance: all criteria met");
  return failures ? 1 : 0;
}
