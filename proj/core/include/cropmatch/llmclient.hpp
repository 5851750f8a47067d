#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

namespace cropmatch {

/// One upstream request: prompt plus an optional base64 image payload.
struct TransportRequest {
  std::string model;
  std::string prompt;
  std::optional<std::string> image_b64;  // PNG bytes, base64
};

struct TransportError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Network seam. Tests inject fakes; live mode uses HttpTransport.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual std::string complete(const TransportRequest& req) = 0;
};

/// OpenAI-style chat-completions endpoint. Credentials come from the
/// environment variable named in api_key_env, never from config values.
struct EndpointConfig {
  std::string base_url = "https://api.openai.com";
  std::string path = "/v1/chat/completions";
  std::string api_key_env = "JUDGE_API_KEY";
  int timeout_ms = 30000;
};

std::unique_ptr<Transport> make_http_transport(const EndpointConfig& endpoint);

/// Sliding-window limiter: at most `limit` acquisitions in any 60 s window.
/// Clock and sleeper are injectable so tests can drive time.
class RateLimiter {
 public:
  using Clock = std::function<std::int64_t()>;             // milliseconds
  using Sleeper = std::function<void(std::int64_t)>;       // milliseconds

  RateLimiter(int limit_per_minute, Clock clock, Sleeper sleeper);
  explicit RateLimiter(int limit_per_minute);

  /// Blocks (via the sleeper) until a slot is free, then records the call.
  void acquire();

 private:
  int limit_;
  Clock clock_;
  Sleeper sleeper_;
  std::mutex mu_;
  std::deque<std::int64_t> stamps_;
};

enum class JudgeMode { kLive, kRecord, kReplay };

JudgeMode parse_judge_mode(const std::string& name);
std::string to_string(JudgeMode mode);

struct JudgeConfig {
  JudgeMode mode = JudgeMode::kReplay;
  std::string model = "gpt-4o";
  std::string cache_dir = "judge_cache";
  EndpointConfig endpoint;
  int max_attempts = 3;     // transport retries
  int backoff_ms = 250;
  int rate_limit_per_minute = 60;
};

struct CacheMissError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Content-addressed cache key over (model, prompt, image digest).
std::string cache_key(const std::string& model, const std::string& prompt,
                      const std::string& image_digest);

/// Judge/victim endpoint client with caching and record/replay. Replay mode
/// never touches the transport; record mode always re-queries and refreshes
/// the cache; live mode is cache-first.
class JudgeClient {
 public:
  JudgeClient(JudgeConfig config, std::unique_ptr<Transport> transport);
  JudgeClient(JudgeConfig config, std::unique_ptr<Transport> transport,
              RateLimiter::Clock clock, RateLimiter::Sleeper sleeper);

  /// Text completion. skip_cache_read forces a fresh upstream call in
  /// live/record mode (content-level retry support); replay mode ignores it.
  std::string complete(const std::string& prompt, bool skip_cache_read = false);

  /// Captioning: the image file's sha256 joins the cache address.
  std::string caption(const std::string& image_path, const std::string& prompt,
                      bool skip_cache_read = false);

  const JudgeConfig& config() const { return cfg_; }

 private:
  std::string cached_or_fetch(const std::string& prompt,
                              const std::string& image_digest,
                              const std::optional<std::string>& image_b64,
                              bool skip_cache_read);
  std::string fetch(const TransportRequest& req);
  std::optional<std::string> cache_read(const std::string& key) const;
  void cache_write(const std::string& key, const std::string& prompt,
                   const std::string& image_digest,
                   const std::string& response) const;

  JudgeConfig cfg_;
  std::unique_ptr<Transport> transport_;
  RateLimiter limiter_;
  RateLimiter::Clock clock_;
  RateLimiter::Sleeper sleeper_;
  mutable std::mutex cache_mu_;
};

std::string base64_encode(const std::string& bytes);

}  // namespace cropmatch
