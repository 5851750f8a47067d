#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <vector>

#include "cropmatch/image.hpp"
#include "cropmatch/llmclient.hpp"
#include "doctest.h"
#include "json.hpp"
#include "support/fakes.hpp"

using namespace cropmatch;
using cropmatch::testing::FlakyTransport;
using cropmatch::testing::ScriptedTransport;
using cropmatch::testing::ThrowingTransport;
using cropmatch::testing::make_transport;

namespace {

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name)
      : path(std::filesystem::temp_directory_path() / name) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

JudgeConfig base_config(const TempDir& dir, JudgeMode mode) {
  JudgeConfig cfg;
  cfg.mode = mode;
  cfg.model = "judge-model";
  cfg.cache_dir = (dir.path / "cache").string();
  return cfg;
}

// Deterministic fake time shared by clock and sleeper so the limiter's
// wait loop terminates.
struct FakeTime {
  std::int64_t now = 0;
  std::vector<std::int64_t> sleeps;

  RateLimiter::Clock clock() {
    return [this] { return now; };
  }
  RateLimiter::Sleeper sleeper() {
    return [this](std::int64_t ms) {
      sleeps.push_back(ms);
      now += ms;
    };
  }
};

std::string write_file(const TempDir& dir, const std::string& name,
                       const std::string& bytes) {
  const auto p = dir.path / name;
  std::ofstream out(p, std::ios::binary);
  out << bytes;
  return p.string();
}

/// Runs f, expecting it to throw E; returns the message (empty if no throw).
template <typename E, typename F>
std::string thrown_message(F&& f) {
  try {
    f();
  } catch (const E& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("base64 matches the reference encoding") {
  CHECK(base64_encode("") == "");
  CHECK(base64_encode("a") == "YQ==");
  CHECK(base64_encode("ab") == "YWI=");
  CHECK(base64_encode("abc") == "YWJj");
  CHECK(base64_encode("abcd") == "YWJjZA==");
  CHECK(base64_encode(std::string("\x00\xff\x10", 3)) == "AP8Q");
}

TEST_CASE("cache_key is the sha256 over 0x1e-separated material") {
  CHECK(cache_key("judge-model", "describe it", "deadbeef") ==
        "216a04444127fe76905c649c57b052c3712967370474b9473e62c64c5db5943e");
  CHECK(cache_key("m", "ab", "") != cache_key("ma", "b", ""));
  CHECK(cache_key("m", "p", "d1") != cache_key("m", "p", "d2"));
}

TEST_CASE("live mode is cache-first, record mode always refetches") {
  TempDir dir("cm_judge_live");
  int serial = 0;
  auto replier = [&serial](const TransportRequest&) {
    return "reply " + std::to_string(serial++);
  };

  {
    auto [t, raw] = make_transport<ScriptedTransport>(replier);
    JudgeClient live(base_config(dir, JudgeMode::kLive), std::move(t));
    CHECK(live.complete("q1") == "reply 0");
    CHECK(live.complete("q1") == "reply 0");  // served from cache
    CHECK(raw->calls() == 1);
    CHECK(live.complete("q1", /*skip_cache_read=*/true) == "reply 1");
    CHECK(raw->calls() == 2);
    // the refetch refreshed the cache in place
    CHECK(live.complete("q1") == "reply 1");
    CHECK(raw->calls() == 2);
  }
  {
    auto [t, raw] = make_transport<ScriptedTransport>(replier);
    JudgeClient record(base_config(dir, JudgeMode::kRecord), std::move(t));
    CHECK(record.complete("q1") == "reply 2");
    CHECK(record.complete("q1") == "reply 3");
    CHECK(raw->calls() == 2);
  }
  {
    JudgeClient replay(base_config(dir, JudgeMode::kReplay), nullptr);
    CHECK(replay.complete("q1") == "reply 3");
    CHECK(replay.complete("q1", /*skip_cache_read=*/true) == "reply 3");
    CHECK_THROWS_AS(replay.complete("never asked"), CacheMissError);
  }
}

TEST_CASE("replay mode never touches the transport") {
  TempDir dir("cm_judge_hermetic");
  {
    auto [t, raw] = make_transport<ScriptedTransport>(
        [](const TransportRequest&) { return "cached"; });
    JudgeClient record(base_config(dir, JudgeMode::kRecord), std::move(t));
    record.complete("the question");
  }
  JudgeClient replay(base_config(dir, JudgeMode::kReplay),
                     std::make_unique<ThrowingTransport>());
  CHECK(replay.complete("the question") == "cached");
}

TEST_CASE("caption keys include the image digest") {
  TempDir dir("cm_judge_caption");
  const std::string img_a = write_file(dir, "a.png", "fake png bytes A");
  const std::string img_b = write_file(dir, "b.png", "fake png bytes B");

  std::vector<std::string> seen_b64;
  auto [t, raw] = make_transport<ScriptedTransport>(
      [&seen_b64](const TransportRequest& req) {
        REQUIRE(req.image_b64.has_value());
        seen_b64.push_back(*req.image_b64);
        return "caption " + std::to_string(seen_b64.size());
      });
  JudgeClient live(base_config(dir, JudgeMode::kLive), std::move(t));
  CHECK(live.caption(img_a, "describe") == "caption 1");
  CHECK(live.caption(img_b, "describe") == "caption 2");  // distinct key
  CHECK(live.caption(img_a, "describe") == "caption 1");  // cache hit
  CHECK(raw->calls() == 2);
  CHECK(seen_b64[0] == base64_encode("fake png bytes A"));
  CHECK_THROWS_AS(live.caption((dir.path / "missing.png").string(), "x"),
                  std::runtime_error);
}

TEST_CASE("cache envelopes carry provenance fields and no tmp litter") {
  TempDir dir("cm_judge_envelope");
  FakeTime ft;
  ft.now = 1234567000;
  auto [t, raw] = make_transport<ScriptedTransport>(
      [](const TransportRequest&) { return "the reply"; });
  JudgeClient live(base_config(dir, JudgeMode::kLive), std::move(t),
                   ft.clock(), ft.sleeper());
  live.complete("hello prompt");

  const std::string key = cache_key("judge-model", "hello prompt", "");
  const auto file = std::filesystem::path(base_config(dir, JudgeMode::kLive)
                                              .cache_dir) /
                    (key + ".json");
  REQUIRE(std::filesystem::exists(file));
  std::ifstream in(file);
  const auto env = nlohmann::json::parse(in);
  CHECK(env["key"] == key);
  CHECK(env["model"] == "judge-model");
  CHECK(env["prompt_sha256"] ==
        "a94eb709fb27abb1097000cbd3a43d5ba95444dcc70a5c670f3a2a8c4808e58c");
  CHECK(env["image_sha256"] == "");
  CHECK(env["created_unix"] == 1234567);
  CHECK(env["response"] == "the reply");

  int tmp_files = 0;
  for (const auto& e : std::filesystem::directory_iterator(file.parent_path()))
    if (e.path().extension() == ".tmp") ++tmp_files;
  CHECK(tmp_files == 0);
}

TEST_CASE("fetch retries transport errors with linear backoff") {
  TempDir dir("cm_judge_retry");
  FakeTime ft;
  JudgeConfig cfg = base_config(dir, JudgeMode::kLive);
  cfg.max_attempts = 3;
  cfg.backoff_ms = 250;
  cfg.rate_limit_per_minute = 1000;

  SUBCASE("success after two failures") {
    auto [t, raw] = make_transport<FlakyTransport>(2, "recovered");
    JudgeClient client(cfg, std::move(t), ft.clock(), ft.sleeper());
    CHECK(client.complete("q") == "recovered");
    CHECK(raw->calls() == 3);
    REQUIRE(ft.sleeps.size() == 2);
    CHECK(ft.sleeps[0] == 250);  // backoff_ms * attempt
    CHECK(ft.sleeps[1] == 500);
  }

  SUBCASE("exhaustion surfaces the attempt count and last error") {
    auto [t, raw] = make_transport<FlakyTransport>(99, "unreachable");
    JudgeClient client(cfg, std::move(t), ft.clock(), ft.sleeper());
    const std::string msg =
        thrown_message<TransportError>([&] { client.complete("q"); });
    CHECK(msg.find("exhausted 3 attempts") != std::string::npos);
    CHECK(msg.find("synthetic outage") != std::string::npos);
    CHECK(raw->calls() == 3);
  }
}

TEST_CASE("rate limiter enforces the sliding 60 s window") {
  FakeTime ft;
  RateLimiter limiter(3, ft.clock(), ft.sleeper());
  limiter.acquire();  // t = 0
  ft.now = 100;
  limiter.acquire();
  ft.now = 200;
  limiter.acquire();
  ft.now = 300;
  limiter.acquire();  // full window: must sleep until t = 60000
  REQUIRE(ft.sleeps.size() == 1);
  CHECK(ft.sleeps[0] == 60000 - 300);
  CHECK(ft.now == 60000);
  // stamps are now 100, 200, 60000; the oldest expires 50 ms later
  ft.now = 60050;
  limiter.acquire();
  REQUIRE(ft.sleeps.size() == 2);
  CHECK(ft.sleeps[1] == 60000 - (60050 - 100));
  CHECK_THROWS_AS(RateLimiter(0, ft.clock(), ft.sleeper()),
                  std::invalid_argument);
}

TEST_CASE("constructor and argument validation") {
  TempDir dir("cm_judge_ctor");
  CHECK_NOTHROW(JudgeClient(base_config(dir, JudgeMode::kReplay), nullptr));
  CHECK_THROWS_AS(JudgeClient(base_config(dir, JudgeMode::kLive), nullptr),
                  std::invalid_argument);
  CHECK_THROWS_AS(JudgeClient(base_config(dir, JudgeMode::kRecord), nullptr),
                  std::invalid_argument);

  JudgeConfig bad = base_config(dir, JudgeMode::kReplay);
  bad.max_attempts = 0;
  CHECK_THROWS_AS(JudgeClient(bad, nullptr), std::invalid_argument);

  JudgeClient replay(base_config(dir, JudgeMode::kReplay), nullptr);
  CHECK_THROWS_AS(replay.complete(""), std::invalid_argument);

  CHECK(parse_judge_mode("live") == JudgeMode::kLive);
  CHECK(parse_judge_mode("record") == JudgeMode::kRecord);
  CHECK(parse_judge_mode("replay") == JudgeMode::kReplay);
  CHECK_THROWS_AS(parse_judge_mode("offline"), std::invalid_argument);
  CHECK(to_string(JudgeMode::kRecord) == "record");
}

TEST_CASE("transport errors mention the missing credential variable") {
  EndpointConfig ep;
  ep.api_key_env = "CROPMATCH_TEST_KEY_THAT_IS_UNSET";
  auto transport = make_http_transport(ep);
  TransportRequest req{"m", "p", std::nullopt};
  const std::string msg =
      thrown_message<TransportError>([&] { transport->complete(req); });
  CHECK(msg.find("CROPMATCH_TEST_KEY_THAT_IS_UNSET") != std::string::npos);
}
