#include "cropmatch/runner.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <thread>

#include "cropmatch/analysis.hpp"

namespace fs = std::filesystem;

namespace cropmatch {

namespace {

std::int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".ppm";
}

std::vector<std::string> list_corpus(const std::string& dir) {
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && is_image_file(entry.path()))
      names.push_back(entry.path().filename().string());
  std::sort(names.begin(), names.end());
  return names;
}

// Runs fn(0..n-1) on up to k threads; per-item exceptions land in errors.
void parallel_for(int n, int k, const std::function<void(int)>& fn,
                  std::vector<std::string>& errors) {
  errors.assign(n, "");
  if (n == 0) return;
  k = std::clamp(k, 1, n);
  std::atomic<int> next{0};
  auto worker = [&] {
    for (;;) {
      int i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  if (k == 1) {
    worker();
    return;
  }
  std::vector<std::thread> threads;
  threads.reserve(k);
  for (int t = 0; t < k; ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
}

template <typename T>
T get_or(const nlohmann::json& j, const std::string& key, T fallback,
         std::vector<std::string>& errors) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    errors.push_back("field '" + key + "': " + e.what());
    return fallback;
  }
}

CropConfig parse_crop(const nlohmann::json& j, const std::string& prefix,
                      std::vector<std::string>& errors) {
  CropConfig cfg;
  cfg.scale_lo = get_or(j, "scale_lo", cfg.scale_lo, errors);
  cfg.scale_hi = get_or(j, "scale_hi", cfg.scale_hi, errors);
  cfg.aspect_lo = get_or(j, "aspect_lo", cfg.aspect_lo, errors);
  cfg.aspect_hi = get_or(j, "aspect_hi", cfg.aspect_hi, errors);
  try {
    validate_crop_config(cfg);
  } catch (const std::exception& e) {
    errors.push_back(prefix + ": " + e.what());
  }
  return cfg;
}

}  // namespace

nlohmann::json apply_overrides(nlohmann::json base,
                               const std::vector<std::string>& overrides) {
  for (const std::string& item : overrides) {
    const std::size_t eq = item.find('=');
    if (eq == std::string::npos || eq == 0)
      throw std::invalid_argument("override must look like key.path=value: " +
                                  item);
    const std::string path = item.substr(0, eq);
    const std::string raw = item.substr(eq + 1);
    nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;  // plain string
    nlohmann::json* node = &base;
    std::size_t start = 0;
    for (;;) {
      const std::size_t dot = path.find('.', start);
      const std::string key = path.substr(
          start, dot == std::string::npos ? std::string::npos : dot - start);
      if (key.empty())
        throw std::invalid_argument("bad override path: " + path);
      if (dot == std::string::npos) {
        (*node)[key] = value;
        break;
      }
      node = &(*node)[key];
      start = dot + 1;
    }
  }
  return base;
}

RunConfig parse_run_config(const nlohmann::json& j) {
  std::vector<std::string> errors;
  RunConfig cfg;
  cfg.echo = j;

  cfg.corpus_dir = get_or<std::string>(j, "corpus_dir", "", errors);
  if (cfg.corpus_dir.empty())
    errors.push_back("corpus_dir is required");
  else if (!fs::is_directory(cfg.corpus_dir))
    errors.push_back("corpus_dir does not exist: " + cfg.corpus_dir);
  cfg.output_dir = get_or<std::string>(j, "output_dir", cfg.output_dir, errors);
  cfg.image_side = get_or(j, "image_side", cfg.image_side, errors);
  if (cfg.image_side < 8) errors.push_back("image_side must be >= 8");
  cfg.seed = get_or<std::uint64_t>(j, "seed", cfg.seed, errors);
  cfg.parallelism = get_or(j, "parallelism", cfg.parallelism, errors);
  if (cfg.parallelism < 1) errors.push_back("parallelism must be >= 1");

  if (j.contains("pairs")) {
    try {
      for (const auto& p : j.at("pairs")) {
        auto src = p.at(0).get<std::string>();
        auto dst = p.at(1).get<std::string>();
        if (src == dst)
          errors.push_back("pair maps image to itself: " + src);
        cfg.pairs.emplace_back(std::move(src), std::move(dst));
      }
    } catch (const nlohmann::json::exception& e) {
      errors.push_back(std::string("field 'pairs': ") + e.what());
    }
  }

  if (j.contains("attack")) {
    const auto& a = j.at("attack");
    cfg.attack.epsilon_255 = get_or(a, "epsilon_255", cfg.attack.epsilon_255, errors);
    cfg.attack.steps = get_or(a, "steps", cfg.attack.steps, errors);
    cfg.attack.alpha_255 = get_or(a, "alpha_255", cfg.attack.alpha_255, errors);
    cfg.attack.beta = get_or(a, "beta", cfg.attack.beta, errors);
    cfg.attack.mifgsm_normalize =
        get_or(a, "mifgsm_normalize", cfg.attack.mifgsm_normalize, errors);
    cfg.attack.beta1 = get_or(a, "beta1", cfg.attack.beta1, errors);
    cfg.attack.beta2 = get_or(a, "beta2", cfg.attack.beta2, errors);
    cfg.attack.eps_small = get_or(a, "eps_small", cfg.attack.eps_small, errors);
    cfg.attack.paste_back = get_or(a, "paste_back", cfg.attack.paste_back, errors);
    try {
      cfg.attack.optimizer = parse_optimizer(
          get_or<std::string>(a, "optimizer", "ifgsm", errors));
    } catch (const std::exception& e) {
      errors.push_back(e.what());
    }
    try {
      cfg.attack.mode = parse_matching_mode(
          get_or<std::string>(a, "mode", "local-global", errors));
    } catch (const std::exception& e) {
      errors.push_back(e.what());
    }
    if (a.contains("crop_source"))
      cfg.attack.crop_source = parse_crop(a.at("crop_source"), "crop_source", errors);
    if (a.contains("crop_target"))
      cfg.attack.crop_target = parse_crop(a.at("crop_target"), "crop_target", errors);
    try {
      validate_attack_config(cfg.attack);
    } catch (const std::exception& e) {
      errors.push_back(std::string("attack: ") + e.what());
    }
  }

  if (j.contains("ensemble")) {
    try {
      for (const auto& e : j.at("ensemble")) {
        EncoderSpec spec;
        spec.kind = get_or<std::string>(e, "kind", spec.kind, errors);
        spec.seed = get_or<std::uint64_t>(e, "seed", spec.seed, errors);
        spec.input_side = get_or(e, "input_side", spec.input_side, errors);
        spec.embed_dim = get_or(e, "embed_dim", spec.embed_dim, errors);
        spec.patch_size = get_or(e, "patch_size", spec.patch_size, errors);
        spec.linear = get_or(e, "linear", spec.linear, errors);
        if (spec.kind != "toy")
          errors.push_back("unknown encoder kind: " + spec.kind);
        else if (spec.input_side < 1 || spec.patch_size < 1 ||
                 spec.input_side % spec.patch_size != 0)
          errors.push_back("encoder patch_size must divide input_side");
        cfg.ensemble.push_back(spec);
      }
    } catch (const nlohmann::json::exception& e) {
      errors.push_back(std::string("field 'ensemble': ") + e.what());
    }
  }
  if (cfg.ensemble.empty()) {
    int patches[3] = {8, 16, 32};
    for (int k = 0; k < 3; ++k) {
      EncoderSpec spec;
      spec.seed = cfg.seed + 1000 + static_cast<std::uint64_t>(k);
      spec.input_side = cfg.image_side;
      spec.patch_size = patches[k];
      if (cfg.image_side % spec.patch_size != 0)
        errors.push_back("default ensemble needs image_side divisible by 32");
      cfg.ensemble.push_back(spec);
    }
  }

  if (j.contains("evaluation")) {
    const auto& e = j.at("evaluation");
    cfg.evaluation.asr_threshold =
        get_or(e, "asr_threshold", cfg.evaluation.asr_threshold, errors);
    if (!(cfg.evaluation.asr_threshold > 0.0 &&
          cfg.evaluation.asr_threshold < 1.0))
      errors.push_back("asr_threshold must be in (0,1)");
    cfg.evaluation.retry_limit =
        get_or(e, "retry_limit", cfg.evaluation.retry_limit, errors);
    if (cfg.evaluation.retry_limit < 0)
      errors.push_back("retry_limit must be >= 0");
    cfg.evaluation.kmr_b_strict =
        get_or(e, "kmr_b_strict", cfg.evaluation.kmr_b_strict, errors);
    cfg.evaluation.vague_vocabulary = get_or<std::vector<std::string>>(
        e, "vague_vocabulary", cfg.evaluation.vague_vocabulary, errors);
    cfg.evaluation.prompts_dir =
        get_or(e, "prompts_dir", cfg.evaluation.prompts_dir, errors);
    cfg.evaluation.caption_prompt =
        get_or(e, "caption_prompt", cfg.evaluation.caption_prompt, errors);
    cfg.annotations_path = get_or(e, "annotations", cfg.annotations_path, errors);
    cfg.threshold_sweep = get_or(e, "threshold_sweep", cfg.threshold_sweep, errors);
    cfg.audit_sample_every =
        get_or(e, "audit_sample_every", cfg.audit_sample_every, errors);
    if (cfg.audit_sample_every < 1)
      errors.push_back("audit_sample_every must be >= 1");
  }

  if (j.contains("judge")) {
    const auto& g = j.at("judge");
    try {
      cfg.judge.mode =
          parse_judge_mode(get_or<std::string>(g, "mode", "replay", errors));
    } catch (const std::exception& e) {
      errors.push_back(e.what());
    }
    cfg.judge.model = get_or(g, "model", cfg.judge.model, errors);
    cfg.judge.cache_dir = get_or(g, "cache_dir", cfg.judge.cache_dir, errors);
    cfg.judge.endpoint.base_url =
        get_or(g, "base_url", cfg.judge.endpoint.base_url, errors);
    cfg.judge.endpoint.path = get_or(g, "path", cfg.judge.endpoint.path, errors);
    cfg.judge.endpoint.api_key_env =
        get_or(g, "api_key_env", cfg.judge.endpoint.api_key_env, errors);
    cfg.judge.endpoint.timeout_ms =
        get_or(g, "timeout_ms", cfg.judge.endpoint.timeout_ms, errors);
    cfg.judge.max_attempts =
        get_or(g, "max_attempts", cfg.judge.max_attempts, errors);
    cfg.judge.backoff_ms = get_or(g, "backoff_ms", cfg.judge.backoff_ms, errors);
    cfg.judge.rate_limit_per_minute = get_or(
        g, "rate_limit_per_minute", cfg.judge.rate_limit_per_minute, errors);
    if (cfg.judge.max_attempts < 1)
      errors.push_back("judge.max_attempts must be >= 1");
    if (cfg.judge.rate_limit_per_minute < 1)
      errors.push_back("judge.rate_limit_per_minute must be >= 1");
  }

  if (!errors.empty()) {
    std::string msg = "invalid run config (" + std::to_string(errors.size()) +
                      " problems):";
    for (const auto& e : errors) msg += "\n  - " + e;
    throw std::invalid_argument(msg);
  }
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded())
    throw std::invalid_argument("config is not valid JSON: " + path);
  return parse_run_config(j);
}

std::vector<int> derangement(int n, std::uint64_t seed) {
  if (n < 2)
    throw std::invalid_argument("derangement needs at least 2 items");
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = i;
  Rng rng(seed);
  // Sattolo: one n-cycle, hence no fixed points.
  for (int i = n - 1; i > 0; --i) {
    int jdx = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(i)));
    std::swap(perm[i], perm[jdx]);
  }
  return perm;
}

EncoderEnsemble build_ensemble(const std::vector<EncoderSpec>& specs) {
  EncoderEnsemble ens;
  for (const auto& s : specs) {
    if (s.kind != "toy")
      throw std::invalid_argument("unknown encoder kind: " + s.kind);
    ens.members.push_back(std::make_shared<ToyEncoder>(
        s.seed, s.input_side, s.embed_dim, s.patch_size, s.linear));
  }
  ens.validate();
  return ens;
}

namespace {

std::string trace_name(const std::string& id) {
  return fs::path(id).stem().string() + ".csv";
}

void write_manifest(const RunConfig& cfg, const RunSummary& summary) {
  nlohmann::json m;
  m["tool_version"] = kToolVersion;
  m["config"] = cfg.echo;
  m["total_millis"] = summary.total_millis;
  m["failures"] = nlohmann::json::array();
  m["images"] = nlohmann::json::array();
  for (const auto& img : summary.images) {
    nlohmann::json row = {
        {"id", img.id},
        {"index", img.index},
        {"seed", img.seed},
        {"target", img.target_id},
        {"input_sha256", img.input_sha256},
        {"adv_file", img.adv_file},
        {"adv_sha256", img.adv_sha256},
        {"trace_file", img.trace_file},
        {"crop_fallbacks", img.crop_fallbacks},
        {"millis", img.millis},
        {"clean_similarity", img.clean_similarity},
        {"final_similarity", img.final_similarity},
    };
    if (!img.error.empty()) {
      row["error"] = img.error;
      m["failures"].push_back(img.id);
    }
    m["images"].push_back(row);
  }
  const auto path = fs::path(cfg.output_dir) / "run_manifest.json";
  const auto tmp = fs::path(cfg.output_dir) / "run_manifest.json.tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write manifest");
    out << m.dump(2) << "\n";
  }
  fs::rename(tmp, path);
}

}  // namespace

RunSummary cmd_attack(const RunConfig& cfg) {
  const std::int64_t t0 = now_ms();
  const std::vector<std::string> corpus = list_corpus(cfg.corpus_dir);
  std::vector<std::string> problems;
  if (corpus.empty())
    problems.push_back("corpus has no .png/.ppm images: " + cfg.corpus_dir);

  std::vector<int> target_index(corpus.size(), -1);
  if (!cfg.pairs.empty()) {
    std::map<std::string, int> index;
    for (std::size_t i = 0; i < corpus.size(); ++i)
      index[corpus[i]] = static_cast<int>(i);
    std::map<std::string, std::string> assigned;
    for (const auto& [src, dst] : cfg.pairs) {
      if (!index.count(src)) problems.push_back("pair source not in corpus: " + src);
      if (!index.count(dst)) problems.push_back("pair target not in corpus: " + dst);
      assigned[src] = dst;
    }
    for (const auto& id : corpus)
      if (!assigned.count(id))
        problems.push_back("no pair assigned for corpus image: " + id);
    if (problems.empty())
      for (std::size_t i = 0; i < corpus.size(); ++i)
        target_index[i] = index[assigned[corpus[i]]];
  } else if (corpus.size() == 1) {
    problems.push_back(
        "corpus of one image cannot be deranged; provide explicit pairs");
  } else if (!corpus.empty()) {
    std::vector<int> d = derangement(static_cast<int>(corpus.size()), cfg.seed);
    for (std::size_t i = 0; i < corpus.size(); ++i) target_index[i] = d[i];
  }
  if (!problems.empty()) {
    std::string msg = "cmd_attack validation failed (" +
                      std::to_string(problems.size()) + " problems):";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw std::invalid_argument(msg);
  }

  fs::create_directories(cfg.output_dir);
  fs::create_directories(fs::path(cfg.output_dir) / "traces");
  const EncoderEnsemble ens = build_ensemble(cfg.ensemble);

  RunSummary summary;
  summary.images.resize(corpus.size());
  std::vector<std::string> errors;
  parallel_for(
      static_cast<int>(corpus.size()), cfg.parallelism,
      [&](int i) {
        const std::int64_t start = now_ms();
        ImageOutcome& out = summary.images[i];
        out.id = corpus[i];
        out.index = i;
        out.seed = cfg.seed ^ static_cast<std::uint64_t>(i);
        out.target_id = corpus[target_index[i]];
        const std::string in_path =
            (fs::path(cfg.corpus_dir) / out.id).string();
        out.input_sha256 = file_sha256(in_path);
        ImageTensor clean = load_image(in_path, cfg.image_side);
        ImageTensor target = load_image(
            (fs::path(cfg.corpus_dir) / out.target_id).string(), cfg.image_side);
        AttackConfig ac = cfg.attack;
        ac.seed = out.seed;
        Rng rng(ac.seed);
        out.clean_similarity = ensemble_similarity(ens, clean, target);
        AttackResult result = run_attack(clean, target, ac, ens, rng);
        out.crop_fallbacks = result.crop_fallbacks;
        double final_sim = 0.0;
        for (std::size_t jx = 0; jx < result.final_per_encoder.size(); ++jx)
          final_sim += ens.weight(jx) * result.final_per_encoder[jx];
        out.final_similarity = final_sim;

        const fs::path adv_path = fs::path(cfg.output_dir) / out.id;
        const fs::path adv_tmp =
            fs::path(cfg.output_dir) / ("tmp_" + out.id);
        save_adversarial(clean, result.delta, ac.epsilon_255,
                         adv_tmp.string());
        fs::rename(adv_tmp, adv_path);
        out.adv_file = out.id;
        out.adv_sha256 = file_sha256(adv_path.string());

        const fs::path trace_path =
            fs::path(cfg.output_dir) / "traces" / trace_name(out.id);
        write_trace_csv(result, ens, trace_path.string());
        out.trace_file = ("traces" / fs::path(trace_name(out.id))).string();
        out.millis = now_ms() - start;
      },
      errors);
  for (std::size_t i = 0; i < errors.size(); ++i)
    if (!errors[i].empty()) {
      summary.images[i].id = corpus[i];
      summary.images[i].error = errors[i];
      ++summary.failures;
    }
  summary.total_millis = now_ms() - t0;
  write_manifest(cfg, summary);
  summary.manifest_path =
      (fs::path(cfg.output_dir) / "run_manifest.json").string();
  return summary;
}

EvaluateSummary cmd_evaluate(const RunConfig& cfg, const std::string& adv_dir) {
  std::vector<std::string> problems;
  const fs::path manifest_path = fs::path(adv_dir) / "run_manifest.json";
  nlohmann::json manifest;
  if (!fs::exists(manifest_path)) {
    problems.push_back("no run_manifest.json in " + adv_dir);
  } else {
    std::ifstream in(manifest_path);
    manifest = nlohmann::json::parse(in, nullptr, false);
    if (manifest.is_discarded() || !manifest.contains("images"))
      problems.push_back("corrupt manifest: " + manifest_path.string());
  }
  nlohmann::json annotations;
  if (cfg.annotations_path.empty()) {
    problems.push_back("evaluation.annotations path is required");
  } else {
    std::ifstream in(cfg.annotations_path);
    if (!in) {
      problems.push_back("cannot open annotations: " + cfg.annotations_path);
    } else {
      annotations = nlohmann::json::parse(in, nullptr, false);
      if (annotations.is_discarded() || !annotations.is_object())
        problems.push_back("annotations must be a JSON object");
    }
  }
  if (manifest.contains("images"))
    for (const auto& row : manifest["images"])
      if (row.contains("error"))
        problems.push_back("manifest lists failed image: " +
                           row["id"].get<std::string>());
  if (!problems.empty()) {
    std::string msg = "cmd_evaluate validation failed (" +
                      std::to_string(problems.size()) + " problems):";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw std::invalid_argument(msg);
  }

  std::unique_ptr<Transport> transport;
  if (cfg.judge.mode != JudgeMode::kReplay)
    transport = make_http_transport(cfg.judge.endpoint);
  JudgeClient judge(cfg.judge, std::move(transport));

  EvaluateSummary summary;
  const double eps = cfg.attack.epsilon();
  for (const auto& row : manifest["images"]) {
    EvaluationRecord rec;
    rec.image_id = row["id"].get<std::string>();
    const std::string target_id = row["target"].get<std::string>();
    try {
      if (!annotations.contains(rec.image_id))
        throw std::runtime_error("no annotation entry for " + rec.image_id);
      const auto& ann = annotations.at(rec.image_id);
      rec.keywords = ann.at("keywords").get<std::vector<std::string>>();
      if (rec.keywords.empty())
        throw std::runtime_error("annotation has no keywords");

      const std::string adv_path =
          (fs::path(adv_dir) / row["adv_file"].get<std::string>()).string();
      rec.adv_caption =
          judge.caption(adv_path, cfg.evaluation.caption_prompt);
      if (ann.contains("target_caption")) {
        rec.target_caption = ann.at("target_caption").get<std::string>();
      } else {
        const std::string tgt_path =
            (fs::path(cfg.corpus_dir) / target_id).string();
        rec.target_caption =
            judge.caption(tgt_path, cfg.evaluation.caption_prompt);
      }
      rec.matched =
          match_keywords(judge, rec.adv_caption, rec.keywords, cfg.evaluation);
      KmrLevels lv = kmr_levels(static_cast<int>(rec.keywords.size()),
                                static_cast<int>(rec.matched.size()),
                                cfg.evaluation);
      rec.kmr_fraction = lv.fraction;
      rec.kmr_a = lv.a;
      rec.kmr_b = lv.b;
      rec.kmr_c = lv.c;
      rec.gpt_score =
          gpt_score(judge, rec.adv_caption, rec.target_caption, cfg.evaluation);
      rec.success = rec.gpt_score > cfg.evaluation.asr_threshold;
    } catch (const std::exception& e) {
      rec.judge_failed = true;
      rec.failure = e.what();
      ++summary.judge_failures;
    }
    summary.records.push_back(std::move(rec));
  }

  const double n = static_cast<double>(summary.records.size());
  std::vector<std::string> failed_captions;
  std::vector<ReportRow> rows;
  for (std::size_t i = 0; i < summary.records.size(); ++i) {
    const auto& rec = summary.records[i];
    summary.asr += rec.success;
    summary.kmr_a += rec.kmr_a;
    summary.kmr_b += rec.kmr_b;
    summary.kmr_c += rec.kmr_c;
    if (!rec.success && !rec.adv_caption.empty())
      failed_captions.push_back(rec.adv_caption);
    ReportRow row;
    row.image_id = rec.image_id;
    row.kmr_fraction = rec.kmr_fraction;
    row.kmr_a = rec.kmr_a;
    row.kmr_b = rec.kmr_b;
    row.kmr_c = rec.kmr_c;
    row.gpt_score = rec.gpt_score;
    row.success = rec.success;
    // Norms recomputed from the saved bytes against the clean corpus image.
    try {
      ImageTensor adv = load_image_raw(
          (fs::path(adv_dir) / rec.image_id).string());
      ImageTensor clean = resize_bilinear(
          load_image_raw((fs::path(cfg.corpus_dir) / rec.image_id).string()),
          adv.h, adv.w);
      Perturbation delta(adv.h, adv.w, eps);
      for (std::size_t k = 0; k < delta.data.size(); ++k)
        delta.data[k] = adv.data[k] - clean.data[k];
      auto [l1n, l2n] = imperceptibility(delta);
      row.l1n = l1n;
      row.l2n = l2n;
    } catch (const std::exception&) {
      // keep zeros when the clean image is unavailable
    }
    rows.push_back(row);
  }
  if (n > 0) {
    summary.asr /= n;
    summary.kmr_a /= n;
    summary.kmr_b /= n;
    summary.kmr_c /= n;
  }
  if (!failed_captions.empty())
    summary.vague = vague_rate(failed_captions, cfg.evaluation);

  fs::create_directories(cfg.output_dir);
  export_report(rows, {}, {}, cfg.output_dir);
  nlohmann::json records_json = nlohmann::json::array();
  for (const auto& rec : summary.records) {
    records_json.push_back({{"image_id", rec.image_id},
                            {"keywords", rec.keywords},
                            {"adv_caption", rec.adv_caption},
                            {"target_caption", rec.target_caption},
                            {"matched", rec.matched},
                            {"kmr_fraction", rec.kmr_fraction},
                            {"kmr_a", rec.kmr_a},
                            {"kmr_b", rec.kmr_b},
                            {"kmr_c", rec.kmr_c},
                            {"gpt_score", rec.gpt_score},
                            {"success", rec.success},
                            {"judge_failed", rec.judge_failed},
                            {"failure", rec.failure}});
  }
  {
    std::ofstream out(fs::path(cfg.output_dir) / "records.json",
                      std::ios::trunc);
    out << records_json.dump(2) << "\n";
  }
  {
    // Manual-audit sample: every Nth record.
    nlohmann::json audit = nlohmann::json::array();
    for (std::size_t i = 0; i < records_json.size();
         i += static_cast<std::size_t>(cfg.audit_sample_every))
      audit.push_back(records_json[i]);
    std::ofstream out(fs::path(cfg.output_dir) / "audit_sample.json",
                      std::ios::trunc);
    out << audit.dump(2) << "\n";
  }
  if (cfg.threshold_sweep) {
    std::ofstream out(fs::path(cfg.output_dir) / "asr_sweep.csv",
                      std::ios::trunc);
    out << "threshold,asr\n";
    for (int t = 1; t <= 19; ++t) {
      const double thr = t * 0.05;
      double wins = 0;
      for (const auto& rec : summary.records) wins += rec.gpt_score > thr;
      out << thr << "," << (n > 0 ? wins / n : 0.0) << "\n";
    }
  }
  return summary;
}

AnalyzeSummary cmd_analyze(const RunConfig& cfg, const std::string& adv_dir,
                           const std::string& clean_dir,
                           const std::string& out_dir, int heatmap_cell) {
  std::vector<std::string> adv_files = list_corpus(adv_dir);
  std::vector<std::string> clean_files = list_corpus(clean_dir);
  std::vector<std::string> problems;
  std::vector<std::string> paired;
  for (const auto& f : adv_files)
    if (std::find(clean_files.begin(), clean_files.end(), f) !=
        clean_files.end())
      paired.push_back(f);
    else
      problems.push_back("adversarial image has no clean twin: " + f);
  if (paired.empty()) problems.push_back("no paired images to analyze");
  if (!problems.empty()) {
    std::string msg = "cmd_analyze validation failed (" +
                      std::to_string(problems.size()) + " problems):";
    for (const auto& p : problems) msg += "\n  - " + p;
    throw std::invalid_argument(msg);
  }

  double eps = cfg.attack.epsilon();
  const fs::path manifest_path = fs::path(adv_dir) / "run_manifest.json";
  if (fs::exists(manifest_path)) {
    std::ifstream in(manifest_path);
    auto manifest = nlohmann::json::parse(in, nullptr, false);
    if (!manifest.is_discarded() && manifest.contains("config") &&
        manifest["config"].contains("attack") &&
        manifest["config"]["attack"].contains("epsilon_255"))
      eps = manifest["config"]["attack"]["epsilon_255"].get<int>() / 255.0;
  }

  AnalyzeSummary summary;
  std::vector<std::pair<std::string, ECDFCurve>> curves;
  std::vector<std::pair<std::string, HeatmapGrid>> grids;
  for (const auto& id : paired) {
    ImageTensor adv = load_image_raw((fs::path(adv_dir) / id).string());
    ImageTensor clean = load_image_raw((fs::path(clean_dir) / id).string());
    if (!adv.same_shape(clean))
      throw std::invalid_argument("shape mismatch for " + id);
    Perturbation delta(adv.h, adv.w, eps);
    for (std::size_t k = 0; k < delta.data.size(); ++k)
      delta.data[k] = adv.data[k] - clean.data[k];
    ECDFCurve curve = ecdf(delta);
    summary.mean_ks += curve.ks_to_uniform;

    const int half_h = static_cast<int>(std::lround(adv.h * std::sqrt(0.5)));
    const int half_w = static_cast<int>(std::lround(adv.w * std::sqrt(0.5)));
    const int off_y = (adv.h - half_h) / 2, off_x = (adv.w - half_w) / 2;
    double inner = 0.0, outer = 0.0;
    long n_in = 0, n_out = 0;
    for (int y = 0; y < adv.h; ++y)
      for (int x = 0; x < adv.w; ++x) {
        double mag = 0.0;
        for (int c = 0; c < 3; ++c)
          mag += std::fabs(
              delta.data[(static_cast<std::size_t>(y) * adv.w + x) * 3 + c]);
        const bool in_window = y >= off_y && y < off_y + half_h &&
                               x >= off_x && x < off_x + half_w;
        if (in_window) {
          inner += mag;
          ++n_in;
        } else {
          outer += mag;
          ++n_out;
        }
      }
    if (n_in > 0 && n_out > 0 && inner / n_in > outer / n_out)
      ++summary.central_dominant;

    const std::string stem = fs::path(id).stem().string();
    curves.emplace_back(stem, std::move(curve));
    if (adv.h % heatmap_cell == 0 && adv.w % heatmap_cell == 0)
      grids.emplace_back(stem, heatmap(delta, heatmap_cell));
    ++summary.images;
  }
  summary.mean_ks /= static_cast<double>(summary.images);
  export_report({}, curves, grids, out_dir);
  {
    nlohmann::json s = {{"images", summary.images},
                        {"mean_ks", summary.mean_ks},
                        {"central_dominant", summary.central_dominant}};
    std::ofstream out(fs::path(out_dir) / "analysis_summary.json",
                      std::ios::trunc);
    out << s.dump(2) << "\n";
  }
  return summary;
}

AblateSummary cmd_ablate(const RunConfig& base, const nlohmann::json& grid,
                         int max_cells, const std::string& out_dir) {
  static const std::vector<std::string> known = {
      "epsilon_255", "alpha_255", "steps",      "optimizer",
      "mode",        "crop_scale", "ensemble_subset"};
  std::vector<std::string> axes;
  std::vector<std::vector<nlohmann::json>> values;
  for (const auto& [key, val] : grid.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw std::invalid_argument("unknown ablation axis: " + key);
    if (!val.is_array() || val.empty())
      throw std::invalid_argument("ablation axis must be a nonempty array: " +
                                  key);
    axes.push_back(key);
    values.emplace_back(val.begin(), val.end());
  }
  if (axes.empty()) throw std::invalid_argument("empty ablation grid");
  long cells = 1;
  for (const auto& v : values) cells *= static_cast<long>(v.size());
  if (cells > max_cells)
    throw std::invalid_argument(
        "ablation grid has " + std::to_string(cells) +
        " cells, exceeding the budget of " + std::to_string(max_cells));

  fs::create_directories(out_dir);
  std::ofstream table(fs::path(out_dir) / "ablation.csv", std::ios::trunc);
  if (!table) throw std::runtime_error("cannot write ablation.csv");
  table << "cell";
  for (const auto& a : axes) table << "," << a;
  table << ",mean_final_similarity,mean_gain,failures\n";

  AblateSummary summary;
  std::vector<std::size_t> idx(axes.size(), 0);
  for (long cell = 0; cell < cells; ++cell) {
    RunConfig cfg = base;
    nlohmann::json cell_params;
    for (std::size_t a = 0; a < axes.size(); ++a) {
      const nlohmann::json& v = values[a][idx[a]];
      cell_params[axes[a]] = v;
      if (axes[a] == "epsilon_255") cfg.attack.epsilon_255 = v.get<int>();
      else if (axes[a] == "alpha_255") cfg.attack.alpha_255 = v.get<double>();
      else if (axes[a] == "steps") cfg.attack.steps = v.get<int>();
      else if (axes[a] == "optimizer")
        cfg.attack.optimizer = parse_optimizer(v.get<std::string>());
      else if (axes[a] == "mode")
        cfg.attack.mode = parse_matching_mode(v.get<std::string>());
      else if (axes[a] == "crop_scale") {
        cfg.attack.crop_source.scale_lo = v.at(0).get<double>();
        cfg.attack.crop_source.scale_hi = v.at(1).get<double>();
        cfg.attack.crop_target.scale_lo = v.at(0).get<double>();
        cfg.attack.crop_target.scale_hi = v.at(1).get<double>();
      } else if (axes[a] == "ensemble_subset") {
        std::vector<EncoderSpec> subset;
        for (const auto& member : v) {
          const int m = member.get<int>();
          if (m < 0 || m >= static_cast<int>(base.ensemble.size()))
            throw std::invalid_argument("ensemble_subset index out of range");
          subset.push_back(base.ensemble[static_cast<std::size_t>(m)]);
        }
        if (subset.empty())
          throw std::invalid_argument("empty ensemble_subset cell");
        cfg.ensemble = subset;
      }
    }
    validate_attack_config(cfg.attack);
    cfg.output_dir =
        (fs::path(out_dir) / ("cell_" + std::to_string(cell))).string();
    cfg.echo["ablation_cell"] = cell_params;
    RunSummary run = cmd_attack(cfg);
    double mean_final = 0.0, mean_gain = 0.0;
    int ok = 0;
    for (const auto& img : run.images)
      if (img.error.empty()) {
        mean_final += img.final_similarity;
        mean_gain += img.final_similarity - img.clean_similarity;
        ++ok;
      }
    if (ok > 0) {
      mean_final /= ok;
      mean_gain /= ok;
    }
    table << cell;
    for (std::size_t a = 0; a < axes.size(); ++a) {
      std::string v = values[a][idx[a]].dump();
      std::replace(v.begin(), v.end(), ',', ';');
      table << "," << v;
    }
    table << "," << mean_final << "," << mean_gain << "," << run.failures
          << "\n";
    ++summary.cells;
    for (std::size_t a = axes.size(); a-- > 0;) {
      if (++idx[a] < values[a].size()) break;
      idx[a] = 0;
    }
  }
  summary.table_path = (fs::path(out_dir) / "ablation.csv").string();
  return summary;
}

}  // namespace cropmatch
