#include "idforge/qa.hpp"

#include <algorithm>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include "idforge/error.hpp"
#include "idforge/parallel.hpp"

namespace idforge {

DatasetEmbeddings::DatasetEmbeddings(std::vector<IdentityEmbeddings> identities)
    : identities_(std::move(identities)) {
  std::set<std::int64_t> labels;
  for (const auto& id : identities_) {
    if (id.embeddings.rows() < 1) {
      fail(ErrorKind::data, "dataset: identity " + std::to_string(id.label) + " has no embeddings");
    }
    if (!labels.insert(id.label).second) {
      fail(ErrorKind::data, "dataset: duplicate label " + std::to_string(id.label));
    }
    const auto d = static_cast<std::size_t>(id.embeddings.cols());
    if (dim_ == 0) dim_ = d;
    require_same_length(d, dim_, "dataset embeddings");
  }
  centroids_.reserve(identities_.size());
  for (const auto& id : identities_) {
    Vector mean = id.embeddings.colwise().mean().transpose();
    const double n = norm(as_span(mean));
    if (!(n > 0.0)) {
      fail(ErrorKind::domain, "dataset: identity " + std::to_string(id.label) + " has zero mean");
    }
    centroids_.push_back(mean / n);
  }
}

std::size_t DatasetEmbeddings::image_count() const {
  std::size_t n = 0;
  for (const auto& id : identities_) n += static_cast<std::size_t>(id.embeddings.rows());
  return n;
}

void DatasetEmbeddings::set_identity_features(const Matrix& features) {
  if (static_cast<std::size_t>(features.rows()) != identities_.size()) {
    fail(ErrorKind::shape, "dataset: need one identity feature per identity");
  }
  require_same_length(static_cast<std::size_t>(features.cols()), dim_, "identity features");
  for (std::size_t i = 0; i < identities_.size(); ++i) {
    centroids_[i] = features.row(static_cast<Eigen::Index>(i)).transpose();
  }
}

void QaThresholds::validate() const {
  for (const double t : {outlier, merge, separability, leakage}) {
    if (!(t > 0.0 && t < 1.0)) fail(ErrorKind::config, "qa: thresholds must lie in (0, 1)");
  }
}

namespace {

struct FlatEmbeddings {
  std::vector<const double*> rows;
  std::vector<double> norms;
  std::vector<std::size_t> owner;  // identity index per row
};

FlatEmbeddings flatten(const DatasetEmbeddings& ds) {
  FlatEmbeddings flat;
  for (std::size_t i = 0; i < ds.identity_count(); ++i) {
    const Matrix& m = ds.identities()[i].embeddings;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      flat.rows.push_back(m.data() + r * m.cols());
      const double n = norm(row_span(m, r));
      if (!(n > 0.0)) fail(ErrorKind::domain, "dataset: zero embedding");
      flat.norms.push_back(n);
      flat.owner.push_back(i);
    }
  }
  return flat;
}

double pair_score(const FlatEmbeddings& f, std::size_t a, std::size_t b, std::size_t dim) {
  return cosine_from_dot(dot(f.rows[a], f.rows[b], dim), f.norms[a], f.norms[b]);
}

}  // namespace

ScoreSets genuine_impostor_scores(const DatasetEmbeddings& ds, std::size_t impostor_sample,
                                  const RngState& rng, std::size_t genuine_cap) {
  if (ds.identity_count() < 2) fail(ErrorKind::data, "scores: need at least 2 identities");
  const FlatEmbeddings flat = flatten(ds);
  const std::size_t dim = ds.dim();

  // Row offsets and within-identity pair counts.
  std::vector<std::size_t> offset, pair_prefix{0};
  std::size_t row = 0;
  for (const auto& id : ds.identities()) {
    offset.push_back(row);
    const auto m = static_cast<std::size_t>(id.embeddings.rows());
    row += m;
    pair_prefix.push_back(pair_prefix.back() + m * (m - 1) / 2);
  }
  const std::size_t genuine_total = pair_prefix.back();
  if (genuine_total == 0) fail(ErrorKind::data, "scores: no identity has two embeddings");

  ScoreSets out;
  if (genuine_total <= genuine_cap) {
    out.genuine.reserve(genuine_total);
    for (std::size_t i = 0; i < ds.identity_count(); ++i) {
      const auto m = static_cast<std::size_t>(ds.identities()[i].embeddings.rows());
      for (std::size_t a = 0; a < m; ++a) {
        for (std::size_t b = a + 1; b < m; ++b) {
          out.genuine.push_back(pair_score(flat, offset[i] + a, offset[i] + b, dim));
        }
      }
    }
  } else {
    RngCursor cur(rng.derive(1));
    out.genuine.reserve(genuine_cap);
    for (std::size_t s = 0; s < genuine_cap; ++s) {
      std::size_t p = cur.uniform_index(genuine_total);
      const auto it = std::upper_bound(pair_prefix.begin(), pair_prefix.end(), p);
      const auto i = static_cast<std::size_t>(it - pair_prefix.begin()) - 1;
      p -= pair_prefix[i];
      const auto m = static_cast<std::size_t>(ds.identities()[i].embeddings.rows());
      std::size_t a = 0;
      while (p >= m - 1 - a) {
        p -= m - 1 - a;
        ++a;
      }
      out.genuine.push_back(pair_score(flat, offset[i] + a, offset[i] + a + 1 + p, dim));
    }
  }

  RngCursor cur(rng.derive(2));
  const std::size_t n = flat.rows.size();
  out.impostor.reserve(impostor_sample);
  while (out.impostor.size() < impostor_sample) {
    const std::size_t a = cur.uniform_index(n);
    const std::size_t b = cur.uniform_index(n);
    if (flat.owner[a] == flat.owner[b]) continue;
    out.impostor.push_back(pair_score(flat, a, b, dim));
  }
  return out;
}

EerResult equal_error_rate(std::span<const double> genuine_in, std::span<const double> impostor_in) {
  if (genuine_in.empty() || impostor_in.empty()) {
    fail(ErrorKind::data, "equal_error_rate: empty score set");
  }
  std::vector<double> genuine(genuine_in.begin(), genuine_in.end());
  std::vector<double> impostor(impostor_in.begin(), impostor_in.end());
  std::sort(genuine.begin(), genuine.end());
  std::sort(impostor.begin(), impostor.end());
  std::vector<double> values;
  values.reserve(genuine.size() + impostor.size());
  std::merge(genuine.begin(), genuine.end(), impostor.begin(), impostor.end(),
             std::back_inserter(values));
  values.erase(std::unique(values.begin(), values.end()), values.end());

  const auto G = static_cast<__int128>(genuine.size());
  const auto I = static_cast<__int128>(impostor.size());
  // At a threshold t: false rejects = #genuine < t, false accepts = #impostor >= t.
  std::size_t rejected = 0;
  std::size_t accepted = impostor.size();
  std::size_t gi = 0, ii = 0;

  EerResult best;
  __int128 best_gap = -1;
  auto consider = [&](double threshold) {
    const __int128 a = static_cast<__int128>(accepted) * G;
    const __int128 r = static_cast<__int128>(rejected) * I;
    const __int128 gap = a > r ? a - r : r - a;
    if (best_gap < 0 || gap < best_gap) {
      best_gap = gap;
      best.threshold = threshold;
      best.far = static_cast<double>(accepted) / static_cast<double>(impostor.size());
      best.frr = static_cast<double>(rejected) / static_cast<double>(genuine.size());
      best.eer = (best.far + best.frr) / 2.0;
    }
  };

  consider(std::nextafter(values.front(), -std::numeric_limits<double>::infinity()));
  for (std::size_t v = 0; v < values.size(); ++v) {
    while (gi < genuine.size() && genuine[gi] <= values[v]) ++gi, ++rejected;
    while (ii < impostor.size() && impostor[ii] <= values[v]) ++ii, --accepted;
    const double t = v + 1 < values.size()
                         ? std::midpoint(values[v], values[v + 1])
                         : std::nextafter(values[v], std::numeric_limits<double>::infinity());
    consider(t);
  }
  return best;
}

double intra_class_outlier_rate(const DatasetEmbeddings& ds, double outlier_threshold) {
  if (ds.identity_count() == 0) fail(ErrorKind::data, "outlier rate: empty dataset");
  std::size_t outliers = 0;
  for (std::size_t i = 0; i < ds.identity_count(); ++i) {
    const Matrix& m = ds.identities()[i].embeddings;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      if (cosine_similarity(row_span(m, r), as_span(ds.centroid(i))) < outlier_threshold) {
        ++outliers;
      }
    }
  }
  return static_cast<double>(outliers) / static_cast<double>(ds.image_count());
}

std::vector<MergePair> inter_class_merge_pairs(const DatasetEmbeddings& ds,
                                               double merge_threshold) {
  if (ds.identity_count() < 2) fail(ErrorKind::data, "merge pairs: need at least 2 identities");
  const std::size_t n = ds.identity_count();
  std::vector<std::vector<MergePair>> per_row(n);
  parallel_for(n, [&](std::size_t i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double s = cosine_similarity(ds.centroid(i), ds.centroid(j));
      if (s > merge_threshold) {
        per_row[i].push_back({ds.identities()[i].label, ds.identities()[j].label, s});
      }
    }
  });
  std::vector<MergePair> out;
  for (auto& row : per_row) out.insert(out.end(), row.begin(), row.end());
  std::stable_sort(out.begin(), out.end(), [](const MergePair& a, const MergePair& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    if (a.label_a != b.label_a) return a.label_a < b.label_a;
    return a.label_b < b.label_b;
  });
  return out;
}

std::size_t separability_count(const Matrix& id_vectors, double threshold) {
  const auto n = static_cast<std::size_t>(id_vectors.rows());
  if (n == 0) return 0;
  const std::vector<double> norms = row_norms(id_vectors);
  const RowsView view{id_vectors.data(), norms.data(), n, static_cast<std::size_t>(id_vectors.cols())};
  const auto hits = max_similarity_many(view, view, /*exclude_self=*/true);
  std::size_t count = 0;
  for (const auto& h : hits) {
    if (!h.index || h.value < threshold) ++count;
  }
  return count;
}

std::vector<std::size_t> separability_curve(const Matrix& id_vectors, double threshold,
                                            std::span<const std::size_t> checkpoints) {
  const auto n = static_cast<std::size_t>(id_vectors.rows());
  const auto d = static_cast<std::size_t>(id_vectors.cols());
  const std::vector<double> norms = row_norms(id_vectors);
  // Row i drops out of every prefix containing its lowest-index conflict.
  std::vector<std::size_t> first_conflict(n, n);
  parallel_for(n, [&](std::size_t i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double s =
          cosine_from_dot(dot(id_vectors.data() + i * d, id_vectors.data() + j * d, d), norms[i],
                          norms[j]);
      if (s >= threshold) {
        first_conflict[i] = j;
        break;
      }
    }
  });
  std::vector<std::size_t> out;
  out.reserve(checkpoints.size());
  for (const std::size_t t : checkpoints) {
    if (t > n) fail(ErrorKind::index, "separability_curve: checkpoint beyond row count");
    std::size_t c = 0;
    for (std::size_t i = 0; i < t; ++i) {
      if (first_conflict[i] >= t) ++c;
    }
    out.push_back(c);
  }
  return out;
}

LeakageResult identity_leakage_rate(const Matrix& synthetic, const Matrix& reference,
                                    double threshold) {
  if (synthetic.rows() == 0 || reference.rows() == 0) {
    fail(ErrorKind::shape, "leakage: both sets must be non-empty");
  }
  require_same_length(static_cast<std::size_t>(synthetic.cols()),
                      static_cast<std::size_t>(reference.cols()), "leakage");
  const std::vector<double> sn = row_norms(synthetic);
  const std::vector<double> rn = row_norms(reference);
  const auto d = static_cast<std::size_t>(synthetic.cols());
  const auto hits = max_similarity_many({synthetic.data(), sn.data(), sn.size(), d},
                                        {reference.data(), rn.data(), rn.size(), d});
  LeakageResult out;
  for (std::size_t i = 0; i < hits.size(); ++i) {
    if (hits[i].index && hits[i].value > threshold) out.offending.push_back(i);
  }
  out.rate = static_cast<double>(out.offending.size()) / static_cast<double>(hits.size());
  return out;
}

std::uint64_t Histogram::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
}

Histogram make_histogram(std::span<const double> scores, std::size_t bins, double lo, double hi) {
  if (bins == 0 || !(hi > lo)) fail(ErrorKind::config, "histogram: bad binning");
  Histogram h{lo, hi, std::vector<std::uint64_t>(bins, 0)};
  const double width = (hi - lo) / static_cast<double>(bins);
  for (const double s : scores) {
    double pos = std::floor((s - lo) / width);
    pos = std::clamp(pos, 0.0, static_cast<double>(bins - 1));
    ++h.counts[static_cast<std::size_t>(pos)];
  }
  return h;
}

QaReport audit_dataset(const DatasetEmbeddings& ds_in, const AuditOptions& options,
                       const RngState& rng, const Matrix* id_vectors, const Matrix* reference) {
  options.thresholds.validate();
  DatasetEmbeddings ds = ds_in;
  if (options.identity_features) ds.set_identity_features(*options.identity_features);

  QaReport report;
  report.thresholds = options.thresholds;
  report.identities = ds.identity_count();
  report.images = ds.image_count();

  const ScoreSets scores =
      genuine_impostor_scores(ds, options.impostor_sample, rng, options.genuine_cap);
  report.genuine_pairs = scores.genuine.size();
  report.impostor_pairs = scores.impostor.size();
  report.eer = equal_error_rate(scores.genuine, scores.impostor);
  report.genuine_hist = make_histogram(scores.genuine, options.histogram_bins);
  report.impostor_hist = make_histogram(scores.impostor, options.histogram_bins);
  report.outlier_rate = intra_class_outlier_rate(ds, options.thresholds.outlier);
  report.merge_pairs = inter_class_merge_pairs(ds, options.thresholds.merge);

  if (id_vectors) {
    report.id_vector_count = static_cast<std::size_t>(id_vectors->rows());
    report.separability_count = separability_count(*id_vectors, options.thresholds.separability);
  }
  if (reference) {
    Matrix probe;
    if (id_vectors) {
      probe = *id_vectors;
    } else {
      probe.resize(static_cast<Eigen::Index>(ds.identity_count()), static_cast<Eigen::Index>(ds.dim()));
      for (std::size_t i = 0; i < ds.identity_count(); ++i) {
        probe.row(static_cast<Eigen::Index>(i)) = ds.centroid(i).transpose();
      }
    }
    const LeakageResult leak = identity_leakage_rate(probe, *reference, options.thresholds.leakage);
    report.leakage_rate = leak.rate;
    report.leakage_offending = leak.offending;
  }
  return report;
}

namespace {

nlohmann::json hist_json(const Histogram& h) {
  return {{"lo", h.lo}, {"hi", h.hi}, {"counts", h.counts}};
}

Histogram hist_from(const nlohmann::json& j) {
  Histogram h;
  h.lo = j.at("lo").get<double>();
  h.hi = j.at("hi").get<double>();
  h.counts = j.at("counts").get<std::vector<std::uint64_t>>();
  return h;
}

}  // namespace

nlohmann::json to_json(const QaReport& r) {
  nlohmann::json merges = nlohmann::json::array();
  for (const auto& m : r.merge_pairs) {
    merges.push_back({{"label_a", m.label_a}, {"label_b", m.label_b}, {"similarity", m.similarity}});
  }
  nlohmann::json j = {
      {"identities", r.identities},
      {"images", r.images},
      {"genuine_pairs", r.genuine_pairs},
      {"impostor_pairs", r.impostor_pairs},
      {"eer", r.eer.eer},
      {"eer_threshold", r.eer.threshold},
      {"eer_far", r.eer.far},
      {"eer_frr", r.eer.frr},
      {"genuine_histogram", hist_json(r.genuine_hist)},
      {"impostor_histogram", hist_json(r.impostor_hist)},
      {"outlier_rate", r.outlier_rate},
      {"merge_pairs", merges},
      {"thresholds",
       {{"outlier", r.thresholds.outlier},
        {"merge", r.thresholds.merge},
        {"separability", r.thresholds.separability},
        {"leakage", r.thresholds.leakage}}},
  };
  j["separability_count"] = r.separability_count ? nlohmann::json(*r.separability_count) : nullptr;
  j["id_vector_count"] = r.id_vector_count ? nlohmann::json(*r.id_vector_count) : nullptr;
  j["leakage_rate"] = r.leakage_rate ? nlohmann::json(*r.leakage_rate) : nullptr;
  j["leakage_offending"] = r.leakage_offending;
  return j;
}

QaReport report_from_json(const nlohmann::json& j) {
  QaReport r;
  r.identities = j.at("identities").get<std::size_t>();
  r.images = j.at("images").get<std::size_t>();
  r.genuine_pairs = j.at("genuine_pairs").get<std::size_t>();
  r.impostor_pairs = j.at("impostor_pairs").get<std::size_t>();
  r.eer.eer = j.at("eer").get<double>();
  r.eer.threshold = j.at("eer_threshold").get<double>();
  r.eer.far = j.at("eer_far").get<double>();
  r.eer.frr = j.at("eer_frr").get<double>();
  r.genuine_hist = hist_from(j.at("genuine_histogram"));
  r.impostor_hist = hist_from(j.at("impostor_histogram"));
  r.outlier_rate = j.at("outlier_rate").get<double>();
  for (const auto& m : j.at("merge_pairs")) {
    r.merge_pairs.push_back({m.at("label_a").get<std::int64_t>(), m.at("label_b").get<std::int64_t>(),
                             m.at("similarity").get<double>()});
  }
  const auto& t = j.at("thresholds");
  r.thresholds = {t.at("outlier").get<double>(), t.at("merge").get<double>(),
                  t.at("separability").get<double>(), t.at("leakage").get<double>()};
  if (!j.at("separability_count").is_null()) {
    r.separability_count = j.at("separability_count").get<std::size_t>();
  }
  if (!j.at("id_vector_count").is_null()) r.id_vector_count = j.at("id_vector_count").get<std::size_t>();
  if (!j.at("leakage_rate").is_null()) r.leakage_rate = j.at("leakage_rate").get<double>();
  r.leakage_offending = j.at("leakage_offending").get<std::vector<std::size_t>>();
  return r;
}

std::string render_report(const QaReport& r) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << "identities            " << r.identities << "\n"
     << "images                " << r.images << "\n"
     << "genuine pairs         " << r.genuine_pairs << "\n"
     << "impostor pairs        " << r.impostor_pairs << "\n"
     << "EER                   " << r.eer.eer << " (threshold " << r.eer.threshold << ")\n"
     << "intra-class outliers  " << r.outlier_rate << " (cos < " << r.thresholds.outlier << ")\n"
     << "inter-class merges    " << r.merge_pairs.size() << " (cos > " << r.thresholds.merge
     << ")\n";
  if (r.separability_count) {
    os << "separable identities  " << *r.separability_count << " / " << r.id_vector_count.value_or(0)
       << " (max cos < " << r.thresholds.separability << ")\n";
  }
  if (r.leakage_rate) {
    os << "identity leakage      " << *r.leakage_rate << " (" << r.leakage_offending.size()
       << " above " << r.thresholds.leakage << ")\n";
  }
  return os.str();
}

std::string histogram_csv(const Histogram& genuine, const Histogram& impostor) {
  if (genuine.counts.size() != impostor.counts.size()) {
    fail(ErrorKind::shape, "histogram_csv: bin counts differ");
  }
  std::ostringstream os;
  os << std::setprecision(17);
  os << "bin_lo,bin_hi,genuine,impostor\n";
  const double width = (genuine.hi - genuine.lo) / static_cast<double>(genuine.counts.size());
  for (std::size_t b = 0; b < genuine.counts.size(); ++b) {
    os << genuine.lo + width * static_cast<double>(b) << ','
       << genuine.lo + width * static_cast<double>(b + 1) << ',' << genuine.counts[b] << ','
       << impostor.counts[b] << '\n';
  }
  return os.str();
}

}  // namespace idforge
