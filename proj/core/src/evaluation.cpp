#include "cropmatch/evaluation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace cropmatch {

KmrLevels kmr_levels(int n_keywords, int n_matched,
                     const EvaluationConfig& cfg) {
  if (n_keywords < 1) throw std::invalid_argument("zero keywords");
  if (n_matched < 0 || n_matched > n_keywords)
    throw std::invalid_argument("matched count out of range");
  KmrLevels lv;
  lv.fraction = static_cast<double>(n_matched) / n_keywords;
  lv.a = lv.fraction >= cfg.kmr_thresholds[0];
  lv.b = cfg.kmr_b_strict ? lv.fraction > cfg.kmr_thresholds[1]
                          : lv.fraction >= cfg.kmr_thresholds[1];
  lv.c = n_matched == n_keywords;
  return lv;
}

std::pair<double, double> imperceptibility(const Perturbation& delta) {
  if (delta.data.empty()) throw std::invalid_argument("empty perturbation");
  double l1 = 0.0, l2 = 0.0;
  for (double v : delta.data) {
    l1 += std::fabs(v);
    l2 += v * v;
  }
  const double n = static_cast<double>(delta.data.size());
  return {l1 / n, std::sqrt(l2) / std::sqrt(n)};
}

double asr(const std::vector<EvaluationRecord>& records) {
  if (records.empty()) throw std::invalid_argument("no records");
  std::size_t wins = 0;
  for (const auto& r : records) wins += r.success ? 1 : 0;
  return static_cast<double>(wins) / static_cast<double>(records.size());
}

namespace {

std::string lower(const std::string& s) {
  std::string out = s;
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return out;
}

bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '\'';
}

// Case-insensitive whole-word search; returns the matched slice of the
// original text, empty when absent.
std::string find_word(const std::string& text, const std::string& word) {
  if (word.empty()) return {};
  const std::string lt = lower(text), lw = lower(word);
  std::size_t pos = 0;
  while ((pos = lt.find(lw, pos)) != std::string::npos) {
    const bool left_ok = pos == 0 || !is_word_char(lt[pos - 1]);
    const std::size_t end = pos + lw.size();
    const bool right_ok = end >= lt.size() || !is_word_char(lt[end]);
    if (left_ok && right_ok) return text.substr(pos, lw.size());
    pos += 1;
  }
  return {};
}

}  // namespace

double vague_rate(const std::vector<std::string>& descriptions,
                  const EvaluationConfig& cfg) {
  if (descriptions.empty()) throw std::invalid_argument("no descriptions");
  std::size_t hits = 0;
  for (const auto& d : descriptions)
    for (const auto& word : cfg.vague_vocabulary)
      if (!find_word(d, word).empty()) {
        ++hits;
        break;
      }
  return static_cast<double>(hits) / static_cast<double>(descriptions.size());
}

std::string fill_template(const std::string& tpl,
                          const std::map<std::string, std::string>& values) {
  std::string out = tpl;
  for (const auto& [key, value] : values) {
    const std::string token = "{" + key + "}";
    std::size_t pos = 0;
    while ((pos = out.find(token, pos)) != std::string::npos) {
      out.replace(pos, token.size(), value);
      pos += value.size();
    }
  }
  return out;
}

std::string load_template(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open template " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string extract_answer_block(const std::string& reply) {
  const std::string open = "<answer>", close = "</answer>";
  const std::size_t start = reply.find(open);
  if (start == std::string::npos)
    throw std::runtime_error("no <answer> tag in judge reply");
  const std::size_t end = reply.find(close, start + open.size());
  if (end == std::string::npos)
    throw std::runtime_error("unterminated <answer> tag in judge reply");
  return reply.substr(start + open.size(), end - start - open.size());
}

namespace {

std::map<std::string, std::string> parse_match_reply(
    const std::string& reply, const std::vector<std::string>& keywords) {
  const std::string block = extract_answer_block(reply);
  auto parsed = nlohmann::json::parse(block, nullptr, false);
  if (parsed.is_discarded() || !parsed.is_object())
    throw std::runtime_error("judge reply is not a JSON object");
  std::map<std::string, std::string> out;
  for (const auto& [key, value] : parsed.items()) {
    if (!value.is_string()) continue;
    for (const auto& kw : keywords)
      if (lower(kw) == lower(key)) {
        out[kw] = value.get<std::string>();
        break;
      }
  }
  return out;
}

}  // namespace

std::map<std::string, std::string> match_keywords(
    JudgeClient& judge, const std::string& description,
    const std::vector<std::string>& keywords, const EvaluationConfig& cfg) {
  if (description.empty()) throw std::invalid_argument("empty description");
  if (keywords.empty()) throw std::invalid_argument("empty keyword list");
  const std::string tpl =
      load_template(cfg.prompts_dir + "/keyword_match.txt");
  std::string joined;
  for (std::size_t i = 0; i < keywords.size(); ++i) {
    if (i) joined += ", ";
    joined += keywords[i];
  }
  const std::string prompt =
      fill_template(tpl, {{"description", description}, {"keywords", joined}});
  std::string error;
  for (int attempt = 0; attempt <= cfg.retry_limit; ++attempt) {
    const std::string reply = judge.complete(prompt, attempt > 0);
    try {
      return parse_match_reply(reply, keywords);
    } catch (const std::runtime_error& e) {
      error = e.what();
    }
  }
  throw std::runtime_error("keyword matching failed after " +
                           std::to_string(cfg.retry_limit + 1) +
                           " attempts: " + error);
}

std::map<std::string, std::string> match_keywords_offline(
    const std::string& description, const std::vector<std::string>& keywords,
    const std::map<std::string, std::vector<std::string>>& synonyms) {
  if (description.empty()) throw std::invalid_argument("empty description");
  if (keywords.empty()) throw std::invalid_argument("empty keyword list");
  std::map<std::string, std::string> out;
  for (const auto& kw : keywords) {
    std::string hit = find_word(description, kw);
    if (hit.empty()) {
      auto it = synonyms.find(lower(kw));
      if (it != synonyms.end())
        for (const auto& alt : it->second) {
          hit = find_word(description, alt);
          if (!hit.empty()) break;
        }
    }
    if (!hit.empty()) out[kw] = hit;
  }
  return out;
}

double gpt_score(JudgeClient& judge, const std::string& text1,
                 const std::string& text2, const EvaluationConfig& cfg) {
  if (text1.empty() || text2.empty())
    throw std::invalid_argument("empty text");
  const std::string tpl =
      load_template(cfg.prompts_dir + "/semantic_similarity.txt");
  const std::string prompt =
      fill_template(tpl, {{"text1", text1}, {"text2", text2}});
  std::string error;
  for (int attempt = 0; attempt <= cfg.retry_limit; ++attempt) {
    const std::string reply = judge.complete(prompt, attempt > 0);
    std::size_t lo = reply.find_first_not_of(" \t\r\n");
    std::size_t hi = reply.find_last_not_of(" \t\r\n");
    if (lo == std::string::npos) {
      error = "empty reply";
      continue;
    }
    const std::string text = reply.substr(lo, hi - lo + 1);
    char* endp = nullptr;
    const double value = std::strtod(text.c_str(), &endp);
    if (endp == text.c_str() || *endp != '\0') {
      error = "non-numeric reply: " + text;
      continue;
    }
    if (value < 0.0 || value > 1.0)
      std::cerr << "gpt_score: clamping out-of-range judge score " << value
                << "\n";
    return std::clamp(value, 0.0, 1.0);
  }
  throw std::runtime_error("similarity scoring failed after " +
                           std::to_string(cfg.retry_limit + 1) +
                           " attempts: " + error);
}

}  // namespace cropmatch
