#include "lpv/diagnostics.hpp"

#include <algorithm>
#include <fstream>

#include "lpv/pgm.hpp"

namespace lpv::inline LPV_NS {

namespace {

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

}  // namespace

std::vector<std::vector<double>> query_grams(const StageOutput& stage) {
  const Tensor& q = stage.pam.query;
  const std::size_t batch = q.dim(0), t = q.dim(1), e = q.dim(2);
  std::vector<std::vector<double>> out(batch, std::vector<double>(t * t));
  auto qd = q.data();
  for (std::size_t b = 0; b < batch; ++b) {
    const Real* qb = qd.data() + b * t * e;
    for (std::size_t i = 0; i < t; ++i) {
      for (std::size_t j = 0; j < t; ++j) {
        double dot = 0;
        for (std::size_t k = 0; k < e; ++k) dot += static_cast<double>(qb[i * e + k]) * static_cast<double>(qb[j * e + k]);
        out[b][i * t + j] = dot;
      }
    }
  }
  return out;
}

SimilarityReport analyze_similarity(const LpvModel& model, const std::vector<Sample>& samples, bool mask_enabled,
                                    std::size_t batch_size) {
  const std::size_t n_stages = model.config().n_stages;
  const std::size_t t = model.config().t_max;
  SimilarityReport report;
  report.t_max = t;
  report.images = samples.size();
  report.mean_gram.assign(n_stages, {});
  report.group_size.assign(n_stages, {});
  report.max_variance.assign(n_stages, 0.0);
  report.diag_max_fraction.assign(n_stages, 0.0);
  if (samples.empty()) return report;

  // grams[stage][image]
  std::vector<std::vector<std::vector<double>>> grams(n_stages);
  NoGradGuard no_grad;
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    std::vector<const Sample*> batch;
    for (std::size_t i = start; i < std::min(samples.size(), start + batch_size); ++i) batch.push_back(&samples[i]);
    const StageTrace trace = model.forward(make_batch(batch), mask_enabled);
    for (std::size_t s = 0; s < n_stages; ++s) {
      auto g = query_grams(trace.stages[s]);
      for (auto& m : g) grams[s].push_back(std::move(m));
    }
  }

  for (std::size_t s = 0; s < n_stages; ++s) {
    const auto& gs = grams[s];
    const std::size_t n = gs.size();
    // Shifted two-pass variance: identical matrices give exactly zero.
    double worst = 0;
    for (std::size_t k = 0; k < t * t; ++k) {
      const double ref = gs[0][k];
      double shift = 0;
      for (const auto& g : gs) shift += g[k] - ref;
      const double mu = shift / static_cast<double>(n);
      double var = 0;
      for (const auto& g : gs) var += (g[k] - ref - mu) * (g[k] - ref - mu);
      worst = std::max(worst, var / static_cast<double>(n));
    }
    report.max_variance[s] = worst;

    double frac_sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t len = std::min(samples[i].text.size(), t);
      auto& acc = report.mean_gram[s][len];
      if (acc.empty()) acc.assign(t * t, 0.0);
      for (std::size_t k = 0; k < t * t; ++k) acc[k] += gs[i][k];
      report.group_size[s][len] += 1;

      std::size_t ok = 0;
      for (std::size_t r = 0; r < len; ++r) {
        const double* row = gs[i].data() + r * t;
        const double mx = *std::max_element(row, row + len);
        if (row[r] >= mx) ++ok;
      }
      frac_sum += len ? static_cast<double>(ok) / static_cast<double>(len) : 0.0;
    }
    report.diag_max_fraction[s] = frac_sum / static_cast<double>(n);
    for (auto& [len, acc] : report.mean_gram[s]) {
      const double count = static_cast<double>(report.group_size[s][len]);
      for (auto& v : acc) v /= count;
    }
  }
  return report;
}

void write_similarity(const SimilarityReport& report, const std::filesystem::path& dir) {
  ensure_dir(dir);
  const std::size_t t = report.t_max;
  constexpr std::size_t kZoom = 16;
  for (std::size_t s = 0; s < report.mean_gram.size(); ++s) {
    for (const auto& [len, gram] : report.mean_gram[s]) {
      const std::string stem = "similarity_stage" + std::to_string(s) + "_len" + std::to_string(len);
      std::ofstream csv(dir / (stem + ".csv"));
      if (!csv) throw IoError("cannot write " + (dir / (stem + ".csv")).string());
      csv.precision(9);
      for (std::size_t i = 0; i < t; ++i) {
        for (std::size_t j = 0; j < t; ++j) csv << (j ? "," : "") << gram[i * t + j];
        csv << '\n';
      }
      std::vector<Real> cells(gram.begin(), gram.end());
      const auto q = quantize_minmax(cells);
      std::vector<std::uint8_t> big(t * kZoom * t * kZoom);
      for (std::size_t y = 0; y < t * kZoom; ++y)
        for (std::size_t x = 0; x < t * kZoom; ++x) big[y * t * kZoom + x] = q[(y / kZoom) * t + x / kZoom];
      write_pgm(dir / (stem + ".pgm"), t * kZoom, t * kZoom, big);
    }
  }
  std::ofstream summary(dir / "similarity_summary.csv");
  if (!summary) throw IoError("cannot write " + (dir / "similarity_summary.csv").string());
  summary.precision(9);
  summary << "stage,images,max_variance,diag_max_fraction\n";
  for (std::size_t s = 0; s < report.max_variance.size(); ++s) {
    summary << s << ',' << report.images << ',' << report.max_variance[s] << ',' << report.diag_max_fraction[s] << '\n';
  }
}

AttentionDump dump_attention(const LpvModel& model, const Sample& sample, const std::filesystem::path& dir,
                             bool mask_enabled) {
  ensure_dir(dir);
  NoGradGuard no_grad;
  const StageTrace trace = model.forward(make_batch({&sample}), mask_enabled);
  const std::size_t gh = model.config().backbone.grid_h(), gw = model.config().backbone.grid_w();
  AttentionDump dump;
  write_pgm(dir / "input.pgm", sample.w, sample.h, quantize_unit(sample.image));
  for (std::size_t s = 0; s < trace.stages.size(); ++s) {
    const auto& pam = trace.stages[s].pam;
    const std::size_t t = pam.attn.dim(1), p = pam.attn.dim(2);
    for (std::size_t j = 0; j < t; ++j) {
      std::span<const Real> row(pam.attn.data().data() + j * p, p);
      write_pgm(dir / ("stage" + std::to_string(s) + "_slot" + std::to_string(j) + ".pgm"), gw, gh, quantize_minmax(row));
      ++dump.files_written;
    }
    dump.predictions.push_back(decode_prediction(pam.logits.data(), t, model.charset()));
  }
  std::ofstream side(dir / "predictions.txt");
  if (!side) throw IoError("cannot write " + (dir / "predictions.txt").string());
  side << "truth\t" << sample.text << '\n';
  for (std::size_t s = 0; s < dump.predictions.size(); ++s) side << "stage" << s << '\t' << dump.predictions[s] << '\n';
  return dump;
}

}  // namespace lpv::inline LPV_NS
