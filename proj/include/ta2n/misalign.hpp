// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "ta2n/synthetic.hpp"

namespace ta2n {

// Per-frame probability of the ground-truth class for one video.
struct ClassProbSequence {
  std::string video_id;
  std::size_t class_id = 0;
  std::vector<double> p;
};

// First 1-indexed frame with p >= 0.5, or nothing.
std::optional<std::size_t> action_start_time(const std::vector<double>& p);

struct StartHistogram {
  std::vector<std::size_t> counts;  // counts[t - 1] for onset frame t
  std::size_t none = 0;             // sequences that never reach 0.5
  std::size_t total() const;        // onsets counted in the bars
};

StartHistogram start_time_histogram(const std::vector<ClassProbSequence>& sequences);

enum class AemMode {
  kPairMean,      // mean of 1 - cos over unordered pairs
  kPaperLiteral,  // sum over ordered pairs (i = j included) divided by 2n(n-1)
};

struct AemReport {
  double score = 0.0;
  std::size_t pairs = 0;     // unordered pairs of usable sequences
  std::size_t excluded = 0;  // zero-norm sequences left out
  AemMode mode = AemMode::kPairMean;
};

// On the same corpus the literal score is exactly half the pair mean.
AemReport aem_score(const std::vector<ClassProbSequence>& sequences, AemMode mode = AemMode::kPairMean);

// n×n matrix of 1 - cos between sequences (zero-norm rows give 1 off the diagonal).
std::vector<std::vector<double>> pairwise_cosine_distances(const std::vector<ClassProbSequence>& sequences);

// CSV with header video_id,class_id,p_1..p_T.
std::vector<ClassProbSequence> parse_sequences_csv(const std::string& text);
std::string sequences_csv(const std::vector<ClassProbSequence>& sequences);
std::string histogram_csv(const StartHistogram& histogram);
std::string aem_csv(const AemReport& report);
std::string distance_matrix_csv(const std::vector<ClassProbSequence>& sequences);

const char* to_string(AemMode mode);
AemMode parse_aem_mode(const std::string& name);

// Ground truth of a synthetic dataset: 1 on frames inside the action interval.
std::vector<ClassProbSequence> presence_sequences(const Dataset& dataset);
// Ground truth evolution curve of each video sampled at k/(T-1).
std::vector<ClassProbSequence> evolution_sequences(const Dataset& dataset);

}  // namespace ta2n
