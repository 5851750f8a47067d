#pragma once

#include <map>
#include <string>
#include <vector>

#include "cropmatch/image.hpp"
#include "cropmatch/llmclient.hpp"

namespace cropmatch {

struct EvaluationConfig {
  double kmr_thresholds[3] = {0.25, 0.5, 1.0};
  double asr_threshold = 0.3;
  std::vector<std::string> vague_vocabulary = {"blurry", "abstract"};
  int retry_limit = 2;        // content retries on unparseable judge replies
  bool kmr_b_strict = false;  // strict > at the 0.5 threshold when true
  std::string prompts_dir = "prompts";
  std::string caption_prompt = "Describe this image.";
};

struct KmrLevels {
  double fraction = 0.0;
  bool a = false, b = false, c = false;
};

/// fraction = n_matched / n_keywords with the three threshold flags
/// (inclusive at 0.25 and 0.5 unless kmr_b_strict, equality at 1.0).
KmrLevels kmr_levels(int n_keywords, int n_matched,
                     const EvaluationConfig& cfg);

/// l1n = sum|delta| / N and l2n = ||delta||_2 / sqrt(N), N = H*W*3.
std::pair<double, double> imperceptibility(const Perturbation& delta);

struct EvaluationRecord {
  std::string image_id;
  std::vector<std::string> keywords;
  std::string adv_caption;
  std::string target_caption;
  std::map<std::string, std::string> matched;
  double kmr_fraction = 0.0;
  bool kmr_a = false, kmr_b = false, kmr_c = false;
  double gpt_score = 0.0;
  bool success = false;
  bool judge_failed = false;
  std::string failure;
};

/// Fraction of records with success == true.
double asr(const std::vector<EvaluationRecord>& records);

/// Fraction of descriptions containing any vocabulary word (case-insensitive
/// whole-word match).
double vague_rate(const std::vector<std::string>& descriptions,
                  const EvaluationConfig& cfg);

/// Replaces every occurrence of each "{key}" token. Unknown placeholders are
/// left alone (the templates contain literal JSON braces).
std::string fill_template(const std::string& tpl,
                          const std::map<std::string, std::string>& values);

/// Loads a template file as raw bytes.
std::string load_template(const std::string& path);

/// Fills the keyword-matching template verbatim, asks the judge, parses the
/// JSON inside <answer> tags. Only keywords from `keywords` survive into the
/// result. Unparseable replies are retried up to cfg.retry_limit times with
/// cache reads skipped.
std::map<std::string, std::string> match_keywords(
    JudgeClient& judge, const std::string& description,
    const std::vector<std::string>& keywords, const EvaluationConfig& cfg);

/// Offline stand-in for match_keywords: exact or synonym-table matching,
/// case-insensitive whole words. Keeps the evaluation pipeline runnable
/// without a judge.
std::map<std::string, std::string> match_keywords_offline(
    const std::string& description, const std::vector<std::string>& keywords,
    const std::map<std::string, std::vector<std::string>>& synonyms = {});

/// Fills the similarity template, asks the judge, parses one float. Values
/// marginally outside [0,1] are clamped with a stderr warning; junk replies
/// retry, then throw.
double gpt_score(JudgeClient& judge, const std::string& text1,
                 const std::string& text2, const EvaluationConfig& cfg);

/// Extracts the substring between <answer> and </answer>.
std::string extract_answer_block(const std::string& reply);

}  // namespace cropmatch
