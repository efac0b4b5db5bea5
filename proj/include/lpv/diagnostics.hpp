#pragma once

#include <filesystem>
#include <map>
#include <vector>

#include "lpv/model.hpp"

namespace lpv::inline LPV_NS {

// Per-image T x T dot-product Gram matrices of a stage's queries.
std::vector<std::vector<double>> query_grams(const StageOutput& stage);

struct SimilarityReport {
  std::size_t t_max = 0;
  std::size_t images = 0;
  // mean_gram[stage][text length] = averaged T x T Gram matrix
  std::vector<std::map<std::size_t, std::vector<double>>> mean_gram;
  std::vector<std::map<std::size_t, std::size_t>> group_size;
  // Largest per-entry variance of the Gram matrix across images.
  std::vector<double> max_variance;
  // Fraction of rows (within each image's L x L character block) whose
  // diagonal entry is the row maximum, averaged over images.
  std::vector<double> diag_max_fraction;
};

SimilarityReport analyze_similarity(const LpvModel& model, const std::vector<Sample>& samples, bool mask_enabled = true,
                                    std::size_t batch_size = 64);

// similarity_stage<i>_len<L>.csv and .pgm (heat image, 16x upscaled) per group,
// plus similarity_summary.csv.
void write_similarity(const SimilarityReport& report, const std::filesystem::path& dir);

struct AttentionDump {
  std::vector<std::string> predictions;  // per stage
  std::size_t files_written = 0;
};

// Writes stage<i>_slot<j>.pgm (attention reshaped to the H/4 x W/4 grid,
// min-max scaled to [0, 255]), input.pgm and predictions.txt.
AttentionDump dump_attention(const LpvModel& model, const Sample& sample, const std::filesystem::path& dir,
                             bool mask_enabled = true);

}  // namespace lpv::inline LPV_NS
