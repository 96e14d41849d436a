#include "socsum/evaluation.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "socsum/training.h"

namespace socsum::evaluation {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

bool is_punct(const std::string& ch) {
  if (ch.size() == 1) return std::ispunct(static_cast<unsigned char>(ch[0])) != 0;
  static const std::set<std::string> kWide = {"¡", "¿", "«", "»", "“", "”", "‘", "’",
                                              "…", "–", "—", "·", "´"};
  return kWide.count(ch) > 0;
}

std::map<std::vector<std::string>, int> ngram_counts(const std::vector<std::string>& words,
                                                     int n) {
  std::map<std::vector<std::string>, int> counts;
  const size_t k = static_cast<size_t>(n);
  for (size_t i = 0; i + k <= words.size(); ++i) {
    ++counts[std::vector<std::string>(words.begin() + i, words.begin() + i + k)];
  }
  return counts;
}

std::vector<double> as_doubles(const std::vector<int64_t>& v) {
  return std::vector<double>(v.begin(), v.end());
}

std::vector<int64_t> likes_of(const corpus::CleanThread& thread) {
  std::vector<int64_t> likes;
  for (const auto& c : thread.comments) likes.push_back(c.likes);
  return likes;
}

std::vector<double> recalls_of(std::string_view summary, const corpus::CleanThread& thread,
                               int n) {
  std::vector<double> out;
  for (const auto& c : thread.comments) out.push_back(rouge_n(summary, c.text, n).recall);
  return out;
}

}  // namespace

std::vector<std::string> rouge_tokens(std::string_view text) {
  std::string cleaned;
  for (const auto& ch : text::utf8_chars(text::lowercase(text))) {
    cleaned += is_punct(ch) ? std::string(" ") : ch;
  }
  return text::split_ws(cleaned);
}

RougeScore rouge_n(std::string_view candidate, std::string_view reference, int n) {
  if (n < 1) throw ArgumentError("rouge_n: n must be >= 1");
  const auto cand = ngram_counts(rouge_tokens(candidate), n);
  const auto ref = ngram_counts(rouge_tokens(reference), n);
  int cand_total = 0, ref_total = 0, matched = 0;
  for (const auto& [g, c] : cand) cand_total += c;
  for (const auto& [g, c] : ref) {
    ref_total += c;
    auto it = cand.find(g);
    if (it != cand.end()) matched += std::min(c, it->second);
  }
  RougeScore s;
  s.n = n;
  if (ref_total > 0) s.recall = static_cast<double>(matched) / ref_total;
  if (cand_total > 0) s.precision = static_cast<double>(matched) / cand_total;
  if (s.recall + s.precision > 0.0) {
    s.f1 = 2.0 * s.recall * s.precision / (s.recall + s.precision);
  }
  return s;
}

double entropy(const std::vector<double>& p) { return cross_entropy(p, p); }

double cross_entropy(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw ArgumentError("cross_entropy: length mismatch");
  double h = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) h -= p[i] * std::log(q[i]);
  }
  return h;
}

std::vector<double> smoothed_distribution(const std::vector<double>& values, double eps) {
  std::vector<double> out(values.size());
  double total = 0.0;
  for (size_t i = 0; i < values.size(); ++i) {
    out[i] = values[i] + eps;
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

XentResult xent_from_scores(const std::vector<double>& recalls,
                            const std::vector<int64_t>& likes) {
  if (recalls.empty()) throw ArgumentError("xent_rouge: thread has no comments");
  if (recalls.size() != likes.size()) throw ArgumentError("xent_rouge: length mismatch");
  XentResult r;
  r.per_comment_rouge = recalls;
  r.likes_dist = smoothed_distribution(as_doubles(likes));
  r.rouge_dist = smoothed_distribution(recalls);
  r.xent = cross_entropy(r.likes_dist, r.rouge_dist);
  return r;
}

XentResult xent_rouge(std::string_view summary, const corpus::CleanThread& thread, int n) {
  return xent_from_scores(recalls_of(summary, thread, n), likes_of(thread));
}

double weighted_recall(const std::vector<double>& recalls, const std::vector<int64_t>& likes) {
  if (recalls.size() != likes.size()) throw ArgumentError("weighted_recall: length mismatch");
  double num = 0.0, den = 0.0;
  for (size_t i = 0; i < recalls.size(); ++i) {
    num += recalls[i] * static_cast<double>(likes[i]);
    den += static_cast<double>(likes[i]);
  }
  if (den <= 0.0) throw ArgumentError("Recall_w undefined for zero total likes");
  return num / den;
}

double weighted_recall(std::string_view summary, const corpus::CleanThread& thread, int n) {
  return weighted_recall(recalls_of(summary, thread, n), likes_of(thread));
}

double title_rouge(std::string_view summary, std::string_view title, int n) {
  return rouge_n(summary, title, n).recall;
}

double lexical_diversity(const std::vector<std::string>& texts) {
  std::set<std::string> distinct;
  size_t total = 0;
  for (const auto& t : texts) {
    for (const auto& w : text::split_ws(text::lowercase(t))) {
      distinct.insert(w);
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(distinct.size()) / total;
}

CharacterizationFeatures characterize(const corpus::CleanThread& thread,
                                      const std::vector<int>& salient_indices) {
  CharacterizationFeatures f;
  std::vector<std::string> all{thread.title};
  std::vector<std::string> salient;
  for (const auto& c : thread.comments) all.push_back(c.text);
  for (int i : salient_indices) {
    if (i < 1 || i > static_cast<int>(thread.comments.size())) {
      throw ArgumentError("characterize: salient index " + std::to_string(i) + " out of range");
    }
    salient.push_back(thread.comments[i - 1].text);
  }
  for (const auto& t : all) f.thread_length += static_cast<int>(corpus::word_count(t));
  for (const auto& t : salient) f.salient_comment_length += static_cast<int>(corpus::word_count(t));
  f.n_comments = static_cast<int>(thread.comments.size());
  f.ld_thread = lexical_diversity(all);
  f.ld_salient = lexical_diversity(salient);

  int64_t max_likes = 0;
  for (const auto& c : thread.comments) max_likes = std::max(max_likes, c.likes);
  if (max_likes > 0 && !thread.comments.empty()) {
    std::vector<double> norm;
    for (const auto& c : thread.comments) norm.push_back(static_cast<double>(c.likes) / max_likes);
    const double mean = std::accumulate(norm.begin(), norm.end(), 0.0) / norm.size();
    double var = 0.0;
    for (double v : norm) var += (v - mean) * (v - mean);
    f.likes_std = std::sqrt(var / norm.size());
  }
  return f;
}

std::vector<int> top_liked(const corpus::CleanThread& thread, int count) {
  std::vector<int> idx(thread.comments.size());
  std::iota(idx.begin(), idx.end(), 1);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return thread.comments[a - 1].likes > thread.comments[b - 1].likes;
  });
  idx.resize(std::min<size_t>(idx.size(), static_cast<size_t>(std::max(count, 0))));
  std::sort(idx.begin(), idx.end());
  return idx;
}

EvalReport evaluate_summary(std::string_view summary, const corpus::CleanThread& thread,
                            int n_salient, int rouge_order) {
  EvalReport r;
  r.thread_id = thread.id;
  r.summary = std::string(summary);
  const auto likes = likes_of(thread);
  const XentResult x = xent_from_scores(recalls_of(summary, thread, rouge_order), likes);
  r.per_comment_rouge = x.per_comment_rouge;
  r.likes_dist = x.likes_dist;
  r.rouge_dist = x.rouge_dist;
  r.xent = x.xent;
  if (std::any_of(likes.begin(), likes.end(), [](int64_t l) { return l > 0; })) {
    r.recall_w = weighted_recall(x.per_comment_rouge, likes);
  }
  r.title_rouge = title_rouge(summary, thread.title, rouge_order);
  r.features = characterize(thread, top_liked(thread, n_salient));
  return r;
}

std::array<QuartileRow, 4> quartile_report(const std::vector<EvalReport>& reports) {
  if (reports.size() < 4) throw ArgumentError("quartile_report: need at least 4 reports");
  std::vector<const EvalReport*> sorted;
  for (const auto& r : reports) sorted.push_back(&r);
  std::sort(sorted.begin(), sorted.end(), [](const EvalReport* a, const EvalReport* b) {
    if (a->xent != b->xent) return a->xent < b->xent;
    return a->thread_id < b->thread_id;
  });
  std::array<QuartileRow, 4> out;
  const size_t n = sorted.size();
  for (size_t q = 0; q < 4; ++q) {
    QuartileRow& row = out[q];
    const size_t lo = q * n / 4, hi = (q + 1) * n / 4;
    for (size_t i = lo; i < hi; ++i) {
      const EvalReport& r = *sorted[i];
      row.thread_ids.push_back(r.thread_id);
      row.xent += r.xent;
      row.thread_length += r.features.thread_length;
      row.salient_comment_length += r.features.salient_comment_length;
      row.n_comments += r.features.n_comments;
      row.ld_thread += r.features.ld_thread;
      row.ld_salient += r.features.ld_salient;
      row.likes_std += r.features.likes_std;
    }
    row.count = static_cast<int>(hi - lo);
    for (double* v : {&row.xent, &row.thread_length, &row.salient_comment_length,
                      &row.n_comments, &row.ld_thread, &row.ld_salient, &row.likes_std}) {
      *v /= row.count;
    }
  }
  return out;
}

std::vector<int> centroid_select(const model::Matrix<float>& embeddings, int k) {
  if (k < 1) throw ArgumentError("centroid_baseline: k must be >= 1");
  const Eigen::Index rows = embeddings.rows();
  if (rows == 0) throw ArgumentError("centroid_baseline: no comments");
  const Eigen::VectorXd centroid = embeddings.cast<double>().colwise().mean().transpose();
  const double cnorm = centroid.norm();
  std::vector<double> sim(rows, 0.0);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const Eigen::VectorXd e = embeddings.row(i).cast<double>().transpose();
    const double denom = e.norm() * cnorm;
    sim[i] = denom > 0.0 ? e.dot(centroid) / denom : 0.0;
  }
  std::vector<int> idx(rows);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return sim[a] > sim[b]; });
  idx.resize(std::min<size_t>(idx.size(), static_cast<size_t>(k)));
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::string centroid_baseline(const corpus::CleanThread& thread, const tokenizer::Vocab& vocab,
                              const model::Matrix<float>& embed, int k) {
  if (thread.comments.empty()) throw ArgumentError("centroid_baseline: no comments");
  model::Matrix<float> rows = model::Matrix<float>::Zero(
      static_cast<Eigen::Index>(thread.comments.size()), embed.cols());
  for (size_t i = 0; i < thread.comments.size(); ++i) {
    const auto ids = tokenizer::tokenize(vocab, thread.comments[i].text);
    for (int id : ids) rows.row(i) += embed.row(id);
    if (!ids.empty()) rows.row(i) /= static_cast<float>(ids.size());
  }
  std::string out;
  for (int i : centroid_select(rows, k)) {
    if (!out.empty()) out += ' ';
    out += thread.comments[i].text;
  }
  return out;
}

namespace {

void aggregate(FoldEvaluation& e) {
  double x = 0.0, t = 0.0, rw = 0.0;
  int defined = 0;
  for (const auto& r : e.reports) {
    x += r.xent;
    t += r.title_rouge;
    if (r.recall_w) {
      rw += *r.recall_w;
      ++defined;
    }
  }
  const double n = static_cast<double>(e.reports.size());
  e.mean_xent = n > 0 ? x / n : std::nan("");
  e.mean_title_rouge = n > 0 ? t / n : std::nan("");
  e.mean_recall_w = defined > 0 ? rw / defined : std::nan("");
}

}  // namespace

FoldEvaluation evaluate_fold(const training::TrainState& state, const tokenizer::Vocab& vocab,
                             const std::vector<corpus::CleanThread>& fold,
                             const decoding::DecodeConfig& cfg, int rouge_order) {
  if (fold.empty()) throw ArgumentError("evaluate_fold: fold is empty");
  FoldEvaluation e;
  for (const auto& thread : fold) {
    std::string summary;
    try {
      summary = decoding::summarize(state, vocab, thread, cfg, false).raw;
    } catch (const Error&) {
      ++e.skipped;
      continue;
    }
    e.reports.push_back(
        evaluate_summary(summary, thread, state.variant.n_comments, rouge_order));
  }
  aggregate(e);
  return e;
}

FoldEvaluation evaluate_summaries(const std::vector<std::string>& summaries,
                                  const std::vector<corpus::CleanThread>& fold, int n_salient,
                                  int rouge_order) {
  if (summaries.size() != fold.size()) {
    throw ArgumentError("evaluate_summaries: one summary per thread required");
  }
  FoldEvaluation e;
  for (size_t i = 0; i < fold.size(); ++i) {
    if (fold[i].comments.empty()) {
      ++e.skipped;
      continue;
    }
    e.reports.push_back(evaluate_summary(summaries[i], fold[i], n_salient, rouge_order));
  }
  aggregate(e);
  return e;
}

std::string report_to_json(const EvalReport& r) {
  ordered_json j;
  j["thread_id"] = r.thread_id;
  j["summary"] = r.summary;
  j["xent"] = r.xent;
  j["recall_w"] = r.recall_w ? ordered_json(*r.recall_w) : ordered_json(nullptr);
  j["title_rouge"] = r.title_rouge;
  j["per_comment_rouge"] = r.per_comment_rouge;
  j["likes_dist"] = r.likes_dist;
  j["rouge_dist"] = r.rouge_dist;
  const auto& f = r.features;
  j["features"] = {{"thread_length", f.thread_length},
                   {"salient_comment_length", f.salient_comment_length},
                   {"n_comments", f.n_comments},
                   {"ld_thread", f.ld_thread},
                   {"ld_salient", f.ld_salient},
                   {"likes_std", f.likes_std}};
  return j.dump();
}

EvalReport report_from_json(std::string_view line) {
  json j;
  try {
    j = json::parse(line);
    EvalReport r;
    r.thread_id = j.at("thread_id").get<std::string>();
    r.summary = j.at("summary").get<std::string>();
    r.xent = j.at("xent").get<double>();
    if (!j.at("recall_w").is_null()) r.recall_w = j.at("recall_w").get<double>();
    r.title_rouge = j.at("title_rouge").get<double>();
    r.per_comment_rouge = j.at("per_comment_rouge").get<std::vector<double>>();
    r.likes_dist = j.at("likes_dist").get<std::vector<double>>();
    r.rouge_dist = j.at("rouge_dist").get<std::vector<double>>();
    const json& f = j.at("features");
    r.features.thread_length = f.at("thread_length").get<int>();
    r.features.salient_comment_length = f.at("salient_comment_length").get<int>();
    r.features.n_comments = f.at("n_comments").get<int>();
    r.features.ld_thread = f.at("ld_thread").get<double>();
    r.features.ld_salient = f.at("ld_salient").get<double>();
    r.features.likes_std = f.at("likes_std").get<double>();
    return r;
  } catch (const json::exception& e) {
    throw FormatError(std::string("eval report: ") + e.what());
  }
}

std::string reports_jsonl(const std::vector<EvalReport>& reports) {
  std::string out;
  for (const auto& r : reports) out += report_to_json(r) + "\n";
  return out;
}

std::vector<EvalReport> parse_reports_jsonl(std::string_view content) {
  std::vector<EvalReport> out;
  std::istringstream in{std::string(content)};
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::normalize_ws(line).empty()) continue;
    try {
      out.push_back(report_from_json(line));
    } catch (const FormatError& e) {
      throw FormatError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

namespace {

std::string fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

std::string aggregate_csv(const std::string& variant, const FoldEvaluation& eval) {
  return "variant,xent,recall_w,title_rouge\n" + variant + "," + fixed(eval.mean_xent) + "," +
         fixed(eval.mean_recall_w) + "," + fixed(eval.mean_title_rouge) + "\n";
}

std::string quartile_csv(const std::array<QuartileRow, 4>& quartiles) {
  std::string out =
      "quartile,count,xent,thread_length,salient_comment_length,n_comments,ld_thread,"
      "ld_salient,likes_std\n";
  for (size_t q = 0; q < 4; ++q) {
    const auto& r = quartiles[q];
    out += "Q" + std::to_string(q + 1) + "," + std::to_string(r.count) + "," + fixed(r.xent) +
           "," + fixed(r.thread_length) + "," + fixed(r.salient_comment_length) + "," +
           fixed(r.n_comments) + "," + fixed(r.ld_thread) + "," + fixed(r.ld_salient) + "," +
           fixed(r.likes_std) + "\n";
  }
  return out;
}

}  // namespace socsum::evaluation
