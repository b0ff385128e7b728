#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "kinact/error.hpp"
#include "kinact/runtime.hpp"
#include "kinact/synth.hpp"

using namespace kinact;
using namespace kinact::runtime;

namespace {

const biomech::BiomechModel& model() { return biomech::default_model(); }

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::kIo;
}

/// Frames until a buffer holding only `from` confirms `to` under perfect labels.
std::size_t switch_latency(std::size_t capacity) {
  BufferFilter b(capacity);
  for (std::size_t i = 0; i < capacity; ++i) b.push(1);
  REQUIRE(b.confirmed() == 1);
  for (std::size_t k = 1; k <= capacity; ++k)
    if (b.push(2) == 2) return k;
  return 0;
}

act::LabeledSequence clips(const std::vector<std::pair<int, int>>& pairs, double seconds, std::uint64_t seed) {
  act::LabeledSequence seq;
  for (const auto& [lo, up] : pairs) {
    const auto frames = synth::generate_motion(lo, up, seconds, model(), seed++);
    for (const auto& f : frames) {
      seq.frames.push_back(f);
      seq.lower.push_back(lo);
      seq.upper.push_back(up);
    }
  }
  return seq;
}

act::ActConfig small(act::Head head) {
  auto cfg = act::ActConfig::for_head(head);
  cfg.layers = 1;
  cfg.model_dim = 16;
  cfg.ffn_dim = 32;
  cfg.mlp_dim = 32;
  return cfg;
}

/// Classifier pair trained on a handful of steady label pairs.
std::pair<HeadModel, HeadModel> toy_heads() {
  const auto seq = clips({{1, 11}, {2, 8}, {3, 16}, {1, 16}, {2, 11}, {3, 8}}, 8.0, 40);
  act::TrainConfig tc;
  tc.epochs = 25;
  tc.learning_rate = 3e-3;
  tc.stride = 2;
  tc.seed = 3;
  std::pair<HeadModel, HeadModel> out;
  for (auto head : {act::Head::kLower, act::Head::kUpper}) {
    const auto cfg = small(head);
    const std::vector<act::FeatureSequence> train{act::head_features(seq, model(), head)};
    auto result = act::train(cfg, train, {}, tc);
    (head == act::Head::kLower ? out.first : out.second) = HeadModel{cfg, std::move(result.params)};
  }
  return out;
}

}  // namespace

TEST_CASE("buffer filter arithmetic") {
  CHECK(code_of([] { BufferFilter(0); }) == ErrorCode::kInvalidArgument);
  CHECK(code_of([] { BufferFilter(20, 1.0); }) == ErrorCode::kInvalidArgument);
  CHECK(code_of([] { BufferFilter(20, 0.0); }) == ErrorCode::kInvalidArgument);

  SUBCASE("startup needs a strict majority of the capacity") {
    BufferFilter b(20);
    for (int i = 0; i < 10; ++i) CHECK_FALSE(b.push(4).has_value());
    CHECK(b.push(4) == 4);
  }
  SUBCASE("one outlier among agreeing frames") {
    BufferFilter b(20);
    for (int i = 0; i < 20; ++i) b.push(1);
    CHECK(b.push(9) == 1);
    for (int i = 0; i < 18; ++i) CHECK(b.push(1) == 1);
  }
  SUBCASE("alternating labels never confirm") {
    BufferFilter b(20);
    for (int i = 0; i < 200; ++i) CHECK_FALSE(b.push(i % 2 == 0 ? 3 : 4).has_value());
  }
  SUBCASE("ties at one half never confirm a newcomer") {
    BufferFilter b(20);
    for (int i = 0; i < 20; ++i) b.push(1);
    for (int i = 0; i < 10; ++i) CHECK(b.push(2) == 1);
    CHECK(b.push(2) == 2);
  }
  SUBCASE("switch latency is floor(capacity / 2) + 1") {
    for (std::size_t c = 1; c <= 41; ++c) {
      CHECK(switch_latency(c) == c / 2 + 1);
      CHECK(switch_latency(c) <= c);
      if (c % 2 == 0) CHECK(switch_latency(c) == (c + 1) / 2 + 1);
    }
    CHECK(switch_latency(20) == 11);
  }
  SUBCASE("monotone and sticky") {
    std::mt19937 rng(4);
    BufferFilter b(20);
    for (int i = 0; i < 2000; ++i) {
      const auto before = b.confirmed();
      const int next = before && rng() % 3 == 0 ? *before : static_cast<int>(rng() % 4);
      const auto after = b.push(next);
      if (before && next == *before) CHECK(after == before);
      if (before) CHECK(after.has_value());
    }
  }
}

TEST_CASE("action message encoding") {
  ActionMessage m{42, 4.2, 3, 16, 3, std::nullopt};
  const auto text = encode(m);
  CHECK(text.find('\n') == std::string::npos);
  CHECK(decode(text) == m);
  const auto doc = nlohmann::json::parse(text);
  CHECK(doc.at("cup").is_null());
  CHECK(doc.at("clo") == 3);

  // Longest payloads: extreme integers and doubles with every label width.
  std::size_t longest = 0;
  for (int lo = 1; lo <= 7; ++lo)
    for (int up = 8; up <= 17; ++up)
      for (double t : {-1.2345678901234567e-300, std::numeric_limits<double>::max(), -0.1})
        for (std::int64_t f : {std::numeric_limits<std::int64_t>::min(), std::numeric_limits<std::int64_t>::max()}) {
          const ActionMessage msg{f, t, lo, up, lo, up};
          const auto e = encode(msg);
          longest = std::max(longest, e.size());
          REQUIRE(decode(e) == msg);
        }
  CHECK(longest < kMaxDatagram);

  CHECK(code_of([] { decode("{"); }) == ErrorCode::kParse);
  CHECK(code_of([] { decode(R"({"f":1,"t":0,"lo":1})"); }) == ErrorCode::kParse);
  CHECK(code_of([] { decode(R"({"f":1,"t":0,"lo":9,"up":11,"clo":null,"cup":null})"); }) ==
        ErrorCode::kInvalidArgument);
  CHECK(code_of([] { decode(R"({"f":1,"t":0,"lo":1,"up":11,"clo":null,"cup":3})"); }) ==
        ErrorCode::kInvalidArgument);
}

TEST_CASE("bounded queue drops the oldest entries") {
  BoundedQueue<int> q(64);
  int dropped = 0;
  for (int i = 0; i < 100; ++i) dropped += q.push(i) ? 1 : 0;
  CHECK(dropped == 36);
  CHECK(q.size() == 64);
  q.close();
  CHECK_FALSE(q.push(1000));
  for (int i = 36; i < 100; ++i) CHECK(q.pop() == i);
  CHECK_FALSE(q.pop().has_value());
}

TEST_CASE("endpoints") {
  const auto ep = parse_endpoint("localhost:9870");
  CHECK(ep.host == "localhost");
  CHECK(ep.port == 9870);
  CHECK(code_of([] { parse_endpoint("localhost"); }) == ErrorCode::kInvalidArgument);
  CHECK(code_of([] { parse_endpoint("h:0"); }) == ErrorCode::kInvalidArgument);
  CHECK(code_of([] { parse_endpoint("h:70000"); }) == ErrorCode::kInvalidArgument);
  CHECK(code_of([] { parse_endpoint(":80"); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("UDP loopback") {
  UdpReceiver rx;
  REQUIRE(rx.port() != 0);
  UdpBroadcaster tx(Endpoint{"127.0.0.1", rx.port()});
  std::vector<ActionMessage> sent;
  for (int i = 0; i < 5; ++i) {
    sent.push_back({i, 0.1 * i, 2, 10, i > 2 ? std::optional<int>(2) : std::nullopt, std::nullopt});
    tx.send(sent.back());
  }
  for (const auto& m : sent) {
    const auto payload = rx.receive(std::chrono::milliseconds(2000));
    REQUIRE(payload.has_value());
    CHECK(payload->size() < kMaxDatagram);
    CHECK(decode(*payload) == m);
  }
  tx.stop();
  CHECK(tx.sent() == 5);
  CHECK(tx.failed() == 0);
}

TEST_CASE("closed socket is logged and the caller continues") {
  UdpBroadcaster tx(Endpoint{"127.0.0.1", 9});
  tx.close_socket();
  for (int i = 0; i < 3; ++i) tx.send(ActionMessage{i, 0.0, 1, 11, std::nullopt, std::nullopt});
  tx.stop();
  CHECK(tx.failed() == 3);
  CHECK(tx.sent() == 0);
}

TEST_CASE("pen state machine") {
  SUBCASE("sitting down lowers the pen in place") {
    const auto s = pen_transition(PenState{}, 6, std::nullopt);
    CHECK(s.mode == PenMode::kPenDown);
    CHECK(s.down);
    CHECK(s.position == Eigen::Vector2d(0.5, 0.5));
  }
  SUBCASE("left arm picking moves right on every later frame") {
    auto s = pen_transition(PenState{}, 6, std::nullopt);
    s = pen_transition(s, 6, 10);
    CHECK(s.mode == PenMode::kPenRight);
    double x = s.position.x();
    for (int i = 0; i < 10; ++i) {
      s = pen_transition(s, 6, 10);
      CHECK(s.position.x() > x);
      CHECK(s.position.x() == doctest::Approx(x + 0.02).epsilon(1e-12));
      x = s.position.x();
    }
    CHECK(s.trace.size() == 1);
    CHECK(s.trace.front().size() == 11);
  }
  SUBCASE("walking lifts and clears from any state") {
    for (int start : {6, 10, 9, 8, 15, 16}) {
      PenState s;
      s = pen_transition(s, 6, std::nullopt);
      s = pen_transition(s, 6, start);
      for (int i = 0; i < 5; ++i) s = pen_transition(s, 6, start);
      s = pen_transition(s, 2, start);
      CHECK(s.mode == PenMode::kPenUpClear);
      CHECK(s.trace.empty());
      CHECK_FALSE(s.down);
    }
  }
  SUBCASE("unlisted labels keep the state") {
    auto s = pen_transition(PenState{}, 6, 10);
    const auto mode = s.mode;
    s = pen_transition(s, 3, 11);
    CHECK(s.mode == mode);
    s = pen_transition(s, 1, 17);
    CHECK(s.mode == mode);
  }
  SUBCASE("right, backward, left, forward closes a rectangle") {
    PenState s;
    s = pen_transition(s, 6, std::nullopt);
    for (int up : {10, 8, 9, 15})
      for (int i = 0; i < 11; ++i) s = pen_transition(s, 3, up);
    s = pen_transition(s, 3, 16);
    CHECK(s.mode == PenMode::kPenPause);
    REQUIRE(s.trace.size() == 1);
    CHECK((s.trace.front().back() - s.trace.front().front()).norm() < 1e-12);
    CHECK(s.trace.front().size() == 45);
  }
  SUBCASE("the pen never leaves the board") {
    std::mt19937 rng(2);
    const int labels[] = {2, 6, 3, 1};
    const int uppers[] = {8, 9, 10, 15, 16, 11};
    PenState s;
    for (int i = 0; i < 5000; ++i) {
      s = pen_transition(s, labels[rng() % 4], uppers[rng() % 6], PenOptions{0.05});
      REQUIRE(s.position.minCoeff() >= 0.0);
      REQUIRE(s.position.maxCoeff() <= 1.0);
    }
  }
  const auto doc = pen_trace_json(pen_transition(PenState{}, 6, std::nullopt));
  CHECK(doc.at("mode") == "PEN_DOWN");
  CHECK(doc.at("trace").size() == 1);
}

TEST_CASE("session confirms a trained steady action and is deterministic") {
  auto [lower, upper] = toy_heads();
  Session session(model(), lower.clone(), upper.clone());
  const auto frames = synth::generate_motion(1, 11, 2.0, model(), 999);
  REQUIRE(frames.size() == 20);
  ActionMessage last;
  for (const auto& f : frames) last = session.step(f);
  CHECK(last.frame == 19);
  CHECK(last.confirmed_lower == 1);
  CHECK(last.confirmed_upper == 11);

  auto bad = frames.front();
  bad.q[3] = std::nan("");
  CHECK(code_of([&] { session.step(bad); }) == ErrorCode::kNonFinite);

  const auto seq = clips({{2, 8}, {3, 16}, {1, 11}}, 4.0, 70).frames;
  Session a(model(), lower.clone(), upper.clone()), b(model(), lower.clone(), upper.clone());
  const auto ra = run_session(a, seq);
  const auto rb = run_session(b, seq);
  REQUIRE(ra.messages.size() == seq.size());
  CHECK(ra.messages == rb.messages);
  for (std::size_t i = 0; i < seq.size(); ++i) CHECK(encode(ra.messages[i]) == encode(rb.messages[i]));
}

TEST_CASE("session latency with default-size classifiers") {
  HeadModel lower{act::ActConfig::for_head(act::Head::kLower), {}};
  HeadModel upper{act::ActConfig::for_head(act::Head::kUpper), {}};
  lower.params = act::init_parameters(lower.config, 1);
  upper.params = act::init_parameters(upper.config, 2);
  Session session(model(), std::move(lower), std::move(upper));
  const auto frames = synth::generate_motion(2, 9, 30.0, model(), 5);
  const auto report = run_session(session, frames);
  MESSAGE("step p50 " << report.step.p50_ms << " ms, p95 " << report.step.p95_ms << " ms");
  CHECK(report.frames == 300);
  CHECK(report.step.p95_ms < 20.0);
  CHECK(report.step.p50_ms <= report.step.p95_ms);

  const auto stats = latency_stats({5.0, 1.0, 3.0, 2.0, 4.0});
  CHECK(stats.p50_ms == 3.0);
  CHECK(stats.max_ms == 5.0);
  CHECK(stats.p95_ms == 5.0);
}
