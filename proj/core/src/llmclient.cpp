#include "cropmatch/llmclient.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include "cropmatch/image.hpp"
#include "json.hpp"

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include "httplib.h"

namespace cropmatch {

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx, bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx, digest, &len) != 1) {
    if (ctx) EVP_MD_CTX_free(ctx);
    throw std::runtime_error("sha256 failed");
  }
  EVP_MD_CTX_free(ctx);
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xf]);
  }
  return out;
}

std::string file_sha256(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return sha256_hex(ss.str());
}

std::string base64_encode(const std::string& bytes) {
  static const char* alphabet =
      "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  while (i + 3 <= bytes.size()) {
    unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                 (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                 static_cast<unsigned char>(bytes[i + 2]);
    out.push_back(alphabet[(v >> 18) & 63]);
    out.push_back(alphabet[(v >> 12) & 63]);
    out.push_back(alphabet[(v >> 6) & 63]);
    out.push_back(alphabet[v & 63]);
    i += 3;
  }
  if (i + 1 == bytes.size()) {
    unsigned v = static_cast<unsigned char>(bytes[i]) << 16;
    out.push_back(alphabet[(v >> 18) & 63]);
    out.push_back(alphabet[(v >> 12) & 63]);
    out += "==";
  } else if (i + 2 == bytes.size()) {
    unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) |
                 (static_cast<unsigned char>(bytes[i + 1]) << 8);
    out.push_back(alphabet[(v >> 18) & 63]);
    out.push_back(alphabet[(v >> 12) & 63]);
    out.push_back(alphabet[(v >> 6) & 63]);
    out += "=";
  }
  return out;
}

RateLimiter::RateLimiter(int limit_per_minute, Clock clock, Sleeper sleeper)
    : limit_(limit_per_minute),
      clock_(std::move(clock)),
      sleeper_(std::move(sleeper)) {
  if (limit_ < 1) throw std::invalid_argument("rate limit must be >= 1");
}

RateLimiter::RateLimiter(int limit_per_minute)
    : RateLimiter(
          limit_per_minute,
          [] {
            return std::chrono::duration_cast<std::chrono::milliseconds>(
                       std::chrono::steady_clock::now().time_since_epoch())
                .count();
          },
          [](std::int64_t ms) {
            std::this_thread::sleep_for(std::chrono::milliseconds(ms));
          }) {}

void RateLimiter::acquire() {
  std::unique_lock lk(mu_);
  for (;;) {
    const std::int64_t now = clock_();
    while (!stamps_.empty() && now - stamps_.front() >= 60000)
      stamps_.pop_front();
    if (static_cast<int>(stamps_.size()) < limit_) {
      stamps_.push_back(now);
      return;
    }
    const std::int64_t wait = 60000 - (now - stamps_.front());
    lk.unlock();
    sleeper_(wait > 0 ? wait : 1);
    lk.lock();
  }
}

JudgeMode parse_judge_mode(const std::string& name) {
  if (name == "live") return JudgeMode::kLive;
  if (name == "record") return JudgeMode::kRecord;
  if (name == "replay") return JudgeMode::kReplay;
  throw std::invalid_argument("unknown judge mode: " + name);
}

std::string to_string(JudgeMode mode) {
  switch (mode) {
    case JudgeMode::kLive: return "live";
    case JudgeMode::kRecord: return "record";
    case JudgeMode::kReplay: return "replay";
  }
  throw std::logic_error("bad mode");
}

std::string cache_key(const std::string& model, const std::string& prompt,
                      const std::string& image_digest) {
  // 0x1e separators so (model, prompt, digest) cannot collide by
  // concatenation.
  std::string material = model;
  material.push_back('\x1e');
  material += prompt;
  material.push_back('\x1e');
  material += image_digest;
  return sha256_hex(material);
}

namespace {

class HttpTransport : public Transport {
 public:
  explicit HttpTransport(EndpointConfig endpoint) : ep_(std::move(endpoint)) {}

  std::string complete(const TransportRequest& req) override {
    const char* key = std::getenv(ep_.api_key_env.c_str());
    if (!key || !*key)
      throw TransportError("credential env var " + ep_.api_key_env +
                           " is not set");
    nlohmann::json content;
    if (req.image_b64) {
      content = nlohmann::json::array(
          {{{"type", "text"}, {"text", req.prompt}},
           {{"type", "image_url"},
            {"image_url",
             {{"url", "data:image/png;base64," + *req.image_b64}}}}});
    } else {
      content = req.prompt;
    }
    nlohmann::json body = {
        {"model", req.model},
        {"messages",
         nlohmann::json::array({{{"role", "user"}, {"content", content}}})}};

    httplib::Client client(ep_.base_url);
    client.set_connection_timeout(0, ep_.timeout_ms * 1000);
    client.set_read_timeout(ep_.timeout_ms / 1000, (ep_.timeout_ms % 1000) * 1000);
    httplib::Headers headers = {
        {"Authorization", std::string("Bearer ") + key}};
    auto res = client.Post(ep_.path, headers, body.dump(), "application/json");
    if (!res)
      throw TransportError("transport failure: " +
                           httplib::to_string(res.error()));
    if (res->status < 200 || res->status >= 300)
      throw TransportError("endpoint returned HTTP " +
                           std::to_string(res->status) + ": " + res->body);
    auto parsed = nlohmann::json::parse(res->body, nullptr, false);
    if (parsed.is_discarded() || !parsed.contains("choices") ||
        parsed["choices"].empty())
      throw TransportError("malformed endpoint response");
    return parsed["choices"][0]["message"]["content"].get<std::string>();
  }

 private:
  EndpointConfig ep_;
};

std::int64_t default_now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

}  // namespace

std::unique_ptr<Transport> make_http_transport(const EndpointConfig& endpoint) {
  return std::make_unique<HttpTransport>(endpoint);
}

JudgeClient::JudgeClient(JudgeConfig config, std::unique_ptr<Transport> transport)
    : JudgeClient(std::move(config), std::move(transport), default_now_ms,
                  [](std::int64_t ms) {
                    std::this_thread::sleep_for(std::chrono::milliseconds(ms));
                  }) {}

JudgeClient::JudgeClient(JudgeConfig config, std::unique_ptr<Transport> transport,
                         RateLimiter::Clock clock, RateLimiter::Sleeper sleeper)
    : cfg_(std::move(config)),
      transport_(std::move(transport)),
      limiter_(cfg_.rate_limit_per_minute, clock, sleeper),
      clock_(std::move(clock)),
      sleeper_(std::move(sleeper)) {
  if (cfg_.mode != JudgeMode::kReplay && !transport_)
    throw std::invalid_argument("live/record mode requires a transport");
  if (cfg_.max_attempts < 1)
    throw std::invalid_argument("max_attempts must be >= 1");
}

std::string JudgeClient::complete(const std::string& prompt,
                                  bool skip_cache_read) {
  if (prompt.empty()) throw std::invalid_argument("empty prompt");
  return cached_or_fetch(prompt, "", std::nullopt, skip_cache_read);
}

std::string JudgeClient::caption(const std::string& image_path,
                                 const std::string& prompt,
                                 bool skip_cache_read) {
  if (prompt.empty()) throw std::invalid_argument("empty prompt");
  std::ifstream in(image_path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image " + image_path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();
  const std::string digest = sha256_hex(bytes);
  std::optional<std::string> b64;
  if (cfg_.mode != JudgeMode::kReplay) b64 = base64_encode(bytes);
  return cached_or_fetch(prompt, digest, b64, skip_cache_read);
}

std::string JudgeClient::cached_or_fetch(
    const std::string& prompt, const std::string& image_digest,
    const std::optional<std::string>& image_b64, bool skip_cache_read) {
  const std::string key = cache_key(cfg_.model, prompt, image_digest);
  if (cfg_.mode == JudgeMode::kReplay) {
    auto hit = cache_read(key);
    if (!hit)
      throw CacheMissError("replay cache miss for key " + key);
    return *hit;
  }
  const bool cache_first = cfg_.mode == JudgeMode::kLive && !skip_cache_read;
  if (cache_first) {
    auto hit = cache_read(key);
    if (hit) return *hit;
  }
  TransportRequest req{cfg_.model, prompt, image_b64};
  const std::string response = fetch(req);
  cache_write(key, prompt, image_digest, response);
  return response;
}

std::string JudgeClient::fetch(const TransportRequest& req) {
  std::string last_error;
  for (int attempt = 0; attempt < cfg_.max_attempts; ++attempt) {
    if (attempt > 0)
      sleeper_(static_cast<std::int64_t>(cfg_.backoff_ms) * attempt);
    limiter_.acquire();
    try {
      return transport_->complete(req);
    } catch (const TransportError& e) {
      last_error = e.what();
    }
  }
  throw TransportError("exhausted " + std::to_string(cfg_.max_attempts) +
                       " attempts; last error: " + last_error);
}

std::optional<std::string> JudgeClient::cache_read(const std::string& key) const {
  std::lock_guard lk(cache_mu_);
  const auto path = std::filesystem::path(cfg_.cache_dir) / (key + ".json");
  std::ifstream in(path);
  if (!in) return std::nullopt;
  auto envelope = nlohmann::json::parse(in, nullptr, false);
  if (envelope.is_discarded() || !envelope.contains("response"))
    throw std::runtime_error("corrupt cache envelope: " + path.string());
  return envelope["response"].get<std::string>();
}

void JudgeClient::cache_write(const std::string& key, const std::string& prompt,
                              const std::string& image_digest,
                              const std::string& response) const {
  std::lock_guard lk(cache_mu_);
  std::filesystem::create_directories(cfg_.cache_dir);
  nlohmann::json envelope = {
      {"key", key},
      {"model", cfg_.model},
      {"prompt_sha256", sha256_hex(prompt)},
      {"image_sha256", image_digest},
      {"created_unix", clock_() / 1000},
      {"response", response},
  };
  const auto dir = std::filesystem::path(cfg_.cache_dir);
  const auto tmp = dir / (key + ".tmp");
  const auto final_path = dir / (key + ".json");
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write cache " + tmp.string());
    out << envelope.dump(2) << "\n";
  }
  std::filesystem::rename(tmp, final_path);
}

}  // namespace cropmatch
