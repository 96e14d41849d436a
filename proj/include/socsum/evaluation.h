#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "socsum/corpus.h"
#include "socsum/decoding.h"
#include "socsum/model.h"
#include "socsum/tokenizer.h"

namespace socsum::training {
struct TrainState;
}

namespace socsum::evaluation {

// Laplace smoothing added to both distributions before normalization.
inline constexpr double kSmoothing = 1e-3;

struct RougeScore {
  double recall = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
  int n = 1;
};

// Lowercased words with punctuation replaced by spaces.
std::vector<std::string> rouge_tokens(std::string_view text);

// Clipped n-gram overlap. Empty n-gram sets give 0 for the affected side.
RougeScore rouge_n(std::string_view candidate, std::string_view reference, int n);

double entropy(const std::vector<double>& p);
// -sum p_i ln q_i
double cross_entropy(const std::vector<double>& p, const std::vector<double>& q);

// (values_i + eps) / sum_j (values_j + eps)
std::vector<double> smoothed_distribution(const std::vector<double>& values,
                                          double eps = kSmoothing);

struct XentResult {
  double xent = 0.0;
  std::vector<double> per_comment_rouge;  // recall of each comment
  std::vector<double> likes_dist;
  std::vector<double> rouge_dist;
};

XentResult xent_rouge(std::string_view summary, const corpus::CleanThread& thread, int n = 1);
XentResult xent_from_scores(const std::vector<double>& recalls, const std::vector<int64_t>& likes);

// sum recall_i * likes_i / sum likes_i. Throws ArgumentError when no comment
// has likes.
double weighted_recall(std::string_view summary, const corpus::CleanThread& thread, int n = 1);
double weighted_recall(const std::vector<double>& recalls, const std::vector<int64_t>& likes);

double title_rouge(std::string_view summary, std::string_view title, int n = 1);

struct CharacterizationFeatures {
  int thread_length = 0;           // words in title and comments
  int salient_comment_length = 0;  // words in the salient comments
  int n_comments = 0;
  double ld_thread = 0.0;
  double ld_salient = 0.0;
  double likes_std = 0.0;  // population std of likes / max likes
};

// Distinct lowercased words over total words; 0 for empty text.
double lexical_diversity(const std::vector<std::string>& texts);

// salient_indices are 1-based comment indices.
CharacterizationFeatures characterize(const corpus::CleanThread& thread,
                                      const std::vector<int>& salient_indices);

// The `count` most liked comments (ties: earlier first), 1-based, ascending.
std::vector<int> top_liked(const corpus::CleanThread& thread, int count);

struct EvalReport {
  std::string thread_id;
  std::string summary;
  std::vector<double> per_comment_rouge;
  std::vector<double> likes_dist;
  std::vector<double> rouge_dist;
  double xent = 0.0;
  std::optional<double> recall_w;  // absent when the thread has no likes
  double title_rouge = 0.0;
  CharacterizationFeatures features;
};

// All metrics of one summary against its thread.
EvalReport evaluate_summary(std::string_view summary, const corpus::CleanThread& thread,
                            int n_salient, int rouge_order = 1);

struct QuartileRow {
  int count = 0;
  double xent = 0.0;
  double thread_length = 0.0;
  double salient_comment_length = 0.0;
  double n_comments = 0.0;
  double ld_thread = 0.0;
  double ld_salient = 0.0;
  double likes_std = 0.0;
  std::vector<std::string> thread_ids;
};

// Sorted by xent ascending (ties: thread_id); Q1 is the best quartile.
std::array<QuartileRow, 4> quartile_report(const std::vector<EvalReport>& reports);

// Indices (0-based) of the k rows closest in cosine to the mean row,
// ascending. Ties prefer the earlier row.
std::vector<int> centroid_select(const model::Matrix<float>& embeddings, int k);

// Comments embedded as the mean of their token embeddings; the k nearest to
// the thread centroid are joined in thread order.
std::string centroid_baseline(const corpus::CleanThread& thread, const tokenizer::Vocab& vocab,
                              const model::Matrix<float>& embed, int k);

struct FoldEvaluation {
  std::vector<EvalReport> reports;
  int skipped = 0;
  double mean_xent = 0.0;
  double mean_recall_w = 0.0;  // over threads where it is defined
  double mean_title_rouge = 0.0;
};

// Summaries come from `summarize` with likes withheld.
FoldEvaluation evaluate_fold(const training::TrainState& state, const tokenizer::Vocab& vocab,
                             const std::vector<corpus::CleanThread>& fold,
                             const decoding::DecodeConfig& cfg, int rouge_order = 1);

// Same aggregation over externally produced summaries (one per thread).
FoldEvaluation evaluate_summaries(const std::vector<std::string>& summaries,
                                  const std::vector<corpus::CleanThread>& fold, int n_salient,
                                  int rouge_order = 1);

std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(std::string_view line);
std::string reports_jsonl(const std::vector<EvalReport>& reports);
std::vector<EvalReport> parse_reports_jsonl(std::string_view content);

std::string aggregate_csv(const std::string& variant, const FoldEvaluation& eval);
std::string quartile_csv(const std::array<QuartileRow, 4>& quartiles);

}  // namespace socsum::evaluation
