// SPDX-License-Identifier: Apache-2.0
#include "ta2n/misalign.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "ta2n/error.hpp"

namespace ta2n {

std::optional<std::size_t> action_start_time(const std::vector<double>& p) {
  for (std::size_t t = 0; t < p.size(); ++t)
    if (p[t] >= 0.5) return t + 1;
  return std::nullopt;
}

std::size_t StartHistogram::total() const {
  std::size_t n = 0;
  for (std::size_t c : counts) n += c;
  return n;
}

namespace {

std::size_t uniform_length(const std::vector<ClassProbSequence>& seqs) {
  require(!seqs.empty(), ErrorCode::kInsufficientData, "no sequences");
  const std::size_t len = seqs.front().p.size();
  require(len >= 1, ErrorCode::kInvalidArgument, "sequences must have at least one frame");
  for (const auto& s : seqs)
    require(s.p.size() == len, ErrorCode::kShapeMismatch,
            "sequence " + s.video_id + " has " + std::to_string(s.p.size()) + " frames, expected " +
                std::to_string(len));
  return len;
}

double norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

StartHistogram start_time_histogram(const std::vector<ClassProbSequence>& sequences) {
  StartHistogram h;
  h.counts.assign(uniform_length(sequences), 0);
  for (const auto& s : sequences) {
    if (const auto t = action_start_time(s.p))
      ++h.counts[*t - 1];
    else
      ++h.none;
  }
  return h;
}

AemReport aem_score(const std::vector<ClassProbSequence>& sequences, AemMode mode) {
  uniform_length(sequences);
  std::vector<const std::vector<double>*> usable;
  std::vector<double> norms;
  AemReport r;
  r.mode = mode;
  for (const auto& s : sequences) {
    const double n = norm(s.p);
    if (n == 0.0) {
      ++r.excluded;
      continue;
    }
    usable.push_back(&s.p);
    norms.push_back(n);
  }
  require(usable.size() >= 2, ErrorCode::kInsufficientData, "AEM needs at least two non-zero sequences");
  const std::size_t n = usable.size();
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) sum += 1.0 - dot(*usable[i], *usable[j]) / (norms[i] * norms[j]);
  r.pairs = n * (n - 1) / 2;
  const double nn = static_cast<double>(n);
  // Ordered pairs count each unordered pair twice; the diagonal adds nothing.
  r.score = mode == AemMode::kPairMean ? sum / static_cast<double>(r.pairs) : 2.0 * sum / (2.0 * nn * (nn - 1.0));
  return r;
}

std::vector<std::vector<double>> pairwise_cosine_distances(const std::vector<ClassProbSequence>& sequences) {
  uniform_length(sequences);
  const std::size_t n = sequences.size();
  std::vector<std::vector<double>> d(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double den = norm(sequences[i].p) * norm(sequences[j].p);
      d[i][j] = d[j][i] = den == 0.0 ? 1.0 : 1.0 - dot(sequences[i].p, sequences[j].p) / den;
    }
  return d;
}

std::vector<ClassProbSequence> parse_sequences_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorCode::kInvalidArgument, "empty sequence CSV");
  require(line.rfind("video_id,class_id", 0) == 0, ErrorCode::kInvalidArgument,
          "sequence CSV must start with header video_id,class_id,p_1,...");
  std::vector<ClassProbSequence> out;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::istringstream cells(line);
    std::string cell;
    ClassProbSequence s;
    std::size_t col = 0;
    while (std::getline(cells, cell, ',')) {
      try {
        if (col == 0) {
          s.video_id = cell;
        } else if (col == 1) {
          std::size_t used = 0;
          s.class_id = std::stoul(cell, &used);
          require(used == cell.size(), ErrorCode::kInvalidArgument, "bad class id");
        } else {
          std::size_t used = 0;
          const double v = std::stod(cell, &used);
          require(used == cell.size() && v >= 0.0 && v <= 1.0, ErrorCode::kInvalidArgument, "bad probability");
          s.p.push_back(v);
        }
      } catch (const std::logic_error&) {
        fail(ErrorCode::kInvalidArgument, "row " + std::to_string(row) + ": cannot parse '" + cell + "'");
      } catch (const Error&) {
        fail(ErrorCode::kInvalidArgument,
             "row " + std::to_string(row) + ": '" + cell + "' is not a probability in [0, 1]");
      }
      ++col;
    }
    require(col >= 3, ErrorCode::kInvalidArgument, "row " + std::to_string(row) + " has no probabilities");
    out.push_back(std::move(s));
  }
  return out;
}

std::string sequences_csv(const std::vector<ClassProbSequence>& sequences) {
  std::ostringstream os;
  os << "video_id,class_id";
  const std::size_t len = sequences.empty() ? 0 : sequences.front().p.size();
  for (std::size_t t = 1; t <= len; ++t) os << ",p_" << t;
  os << '\n';
  for (const auto& s : sequences) {
    os << s.video_id << ',' << s.class_id;
    for (double v : s.p) os << ',' << fmt(v);
    os << '\n';
  }
  return os.str();
}

std::string histogram_csv(const StartHistogram& h) {
  std::ostringstream os;
  os << "frame,count\n";
  for (std::size_t t = 0; t < h.counts.size(); ++t) os << t + 1 << ',' << h.counts[t] << '\n';
  os << "none," << h.none << '\n';
  return os.str();
}

std::string aem_csv(const AemReport& r) {
  std::ostringstream os;
  os << "score,pairs,mode,excluded\n" << fmt(r.score) << ',' << r.pairs << ',' << to_string(r.mode) << ','
     << r.excluded << '\n';
  return os.str();
}

std::string distance_matrix_csv(const std::vector<ClassProbSequence>& sequences) {
  const auto d = pairwise_cosine_distances(sequences);
  std::ostringstream os;
  os << "video_id";
  for (const auto& s : sequences) os << ',' << s.video_id;
  os << '\n';
  for (std::size_t i = 0; i < d.size(); ++i) {
    os << sequences[i].video_id;
    for (double v : d[i]) os << ',' << fmt(v);
    os << '\n';
  }
  return os.str();
}

const char* to_string(AemMode mode) { return mode == AemMode::kPairMean ? "pair-mean" : "paper-literal"; }

AemMode parse_aem_mode(const std::string& name) {
  if (name == "pair-mean") return AemMode::kPairMean;
  if (name == "paper-literal") return AemMode::kPaperLiteral;
  fail(ErrorCode::kConfig, "unknown AEM mode '" + name + "' (pair-mean or paper-literal)");
}

std::vector<ClassProbSequence> presence_sequences(const Dataset& ds) {
  const auto times = ds.frame_times();
  std::vector<ClassProbSequence> out;
  for (std::size_t i = 0; i < ds.videos.size(); ++i) {
    const auto& v = ds.videos[i];
    ClassProbSequence s{std::to_string(i), v.label, {}};
    for (double u : times) s.p.push_back(u >= v.truth.start && u <= v.truth.end ? 1.0 : 0.0);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<ClassProbSequence> evolution_sequences(const Dataset& ds) {
  std::vector<ClassProbSequence> out;
  for (std::size_t i = 0; i < ds.videos.size(); ++i)
    out.push_back({std::to_string(i), ds.videos[i].label, ds.videos[i].truth.evolution.curve(ds.dims.frames)});
  return out;
}

}  // namespace ta2n
