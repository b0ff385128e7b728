#include "kinact/runtime.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstring>
#include <map>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "kinact/error.hpp"

namespace kinact::runtime {

// ---- buffer -------------------------------------------------------------------

BufferFilter::BufferFilter(std::size_t capacity, double threshold) : capacity_(capacity) {
  if (capacity < 1) fail(ErrorCode::kInvalidArgument, "buffer capacity must be >= 1");
  if (!(threshold > 0.0 && threshold < 1.0))
    fail(ErrorCode::kInvalidArgument, "buffer threshold must lie in (0, 1)");
  needed_ = static_cast<std::size_t>(std::floor(threshold * static_cast<double>(capacity))) + 1;
}

std::optional<int> BufferFilter::push(int label) {
  ring_.push_back(label);
  if (ring_.size() > capacity_) ring_.pop_front();
  std::map<int, std::size_t> counts;
  for (int l : ring_) ++counts[l];
  for (const auto& [l, n] : counts)
    if (n >= needed_) confirmed_ = l;
  return confirmed_;
}

void BufferFilter::reset() {
  ring_.clear();
  confirmed_.reset();
}

// ---- messages -----------------------------------------------------------------

std::string encode(const ActionMessage& msg) {
  const auto opt = [](const std::optional<int>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  nlohmann::json doc;
  doc["f"] = msg.frame;
  doc["t"] = msg.timestamp;
  doc["lo"] = msg.lower;
  doc["up"] = msg.upper;
  doc["clo"] = opt(msg.confirmed_lower);
  doc["cup"] = opt(msg.confirmed_upper);
  return doc.dump();
}

ActionMessage decode(std::string_view payload) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(payload);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, fmt::format("action message: {}", e.what()));
  }
  ActionMessage msg;
  try {
    msg.frame = doc.at("f").get<std::int64_t>();
    msg.timestamp = doc.at("t").get<double>();
    msg.lower = doc.at("lo").get<int>();
    msg.upper = doc.at("up").get<int>();
    if (!doc.at("clo").is_null()) msg.confirmed_lower = doc.at("clo").get<int>();
    if (!doc.at("cup").is_null()) msg.confirmed_upper = doc.at("cup").get<int>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, fmt::format("action message: {}", e.what()));
  }
  const bool ok = is_lower_label(msg.lower) && is_upper_label(msg.upper) &&
                  (!msg.confirmed_lower || is_lower_label(*msg.confirmed_lower)) &&
                  (!msg.confirmed_upper || is_upper_label(*msg.confirmed_upper));
  if (!ok) fail(ErrorCode::kInvalidArgument, "action message label outside its head's range");
  return msg;
}

// ---- UDP ------------------------------------------------------------------------

Endpoint parse_endpoint(std::string_view text) {
  const auto colon = text.rfind(':');
  if (colon == std::string_view::npos || colon == 0)
    fail(ErrorCode::kInvalidArgument, fmt::format("expected host:port, got '{}'", text));
  Endpoint ep;
  ep.host = std::string(text.substr(0, colon));
  const auto port = text.substr(colon + 1);
  unsigned value = 0;
  const auto [ptr, ec] = std::from_chars(port.data(), port.data() + port.size(), value);
  if (ec != std::errc() || ptr != port.data() + port.size() || value == 0 || value > 65535)
    fail(ErrorCode::kInvalidArgument, fmt::format("bad port in '{}'", text));
  ep.port = static_cast<std::uint16_t>(value);
  return ep;
}

UdpBroadcaster::UdpBroadcaster(const Endpoint& dest, std::size_t queue_capacity) : queue_(queue_capacity) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_DGRAM;
  addrinfo* found = nullptr;
  const auto port = std::to_string(dest.port);
  if (const int rc = ::getaddrinfo(dest.host.c_str(), port.c_str(), &hints, &found); rc != 0 || !found)
    fail(ErrorCode::kIo, fmt::format("cannot resolve {}: {}", dest.host, ::gai_strerror(rc)));
  const auto* bytes = reinterpret_cast<const unsigned char*>(found->ai_addr);
  address_.assign(bytes, bytes + found->ai_addrlen);
  ::freeaddrinfo(found);
  const int fd = ::socket(AF_INET, SOCK_DGRAM, 0);
  if (fd < 0) fail(ErrorCode::kIo, fmt::format("socket: {}", std::strerror(errno)));
  fd_ = fd;
  worker_ = std::thread([this] { run(); });
}

UdpBroadcaster::~UdpBroadcaster() {
  stop();
  close_socket();
}

void UdpBroadcaster::send(const ActionMessage& msg) { send_encoded(encode(msg)); }

void UdpBroadcaster::send_encoded(std::string payload) {
  if (queue_.push(std::move(payload))) ++dropped_;
}

void UdpBroadcaster::stop() {
  queue_.close();
  if (worker_.joinable()) worker_.join();
}

void UdpBroadcaster::close_socket() {
  const int fd = fd_.exchange(-1);
  if (fd >= 0) ::close(fd);
}

void UdpBroadcaster::run() {
  while (auto payload = queue_.pop()) {
    const int fd = fd_.load();
    const auto rc = fd < 0 ? -1
                           : ::sendto(fd, payload->data(), payload->size(), 0,
                                      reinterpret_cast<const sockaddr*>(address_.data()),
                                      static_cast<socklen_t>(address_.size()));
    if (rc < 0) {
      ++failed_;
      spdlog::warn("udp send failed: {}", fd < 0 ? "socket closed" : std::strerror(errno));
    } else {
      ++sent_;
    }
  }
}

UdpReceiver::UdpReceiver(std::uint16_t port, const std::string& host) {
  fd_ = ::socket(AF_INET, SOCK_DGRAM, 0);
  if (fd_ < 0) fail(ErrorCode::kIo, fmt::format("socket: {}", std::strerror(errno)));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd_);
    fail(ErrorCode::kInvalidArgument, fmt::format("not an IPv4 address: {}", host));
  }
  if (::bind(fd_, reinterpret_cast<const sockaddr*>(&addr), sizeof(addr)) < 0) {
    const int err = errno;
    ::close(fd_);
    fail(ErrorCode::kIo, fmt::format("bind {}:{}: {}", host, port, std::strerror(err)));
  }
  socklen_t len = sizeof(addr);
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

UdpReceiver::~UdpReceiver() {
  if (fd_ >= 0) ::close(fd_);
}

std::optional<std::string> UdpReceiver::receive(std::chrono::milliseconds timeout) {
  pollfd p{fd_, POLLIN, 0};
  if (::poll(&p, 1, static_cast<int>(timeout.count())) <= 0) return std::nullopt;
  char buffer[2048];
  const auto n = ::recv(fd_, buffer, sizeof(buffer), 0);
  if (n < 0) return std::nullopt;
  return std::string(buffer, static_cast<std::size_t>(n));
}

// ---- session --------------------------------------------------------------------

Session::Session(const biomech::BiomechModel& model, HeadModel lower, HeadModel upper, SessionOptions options)
    : lower_{std::move(lower), model.lower_mask(), {}, BufferFilter(options.buffer_capacity, options.threshold)},
      upper_{std::move(upper), model.upper_mask(), {}, BufferFilter(options.buffer_capacity, options.threshold)} {
  for (const Head* h : {&lower_, &upper_}) {
    h->model.config.validate();
    act::check_parameters(h->model.config, h->model.params);
    if (h->model.config.input_dim != h->mask.size())
      fail(ErrorCode::kShapeMismatch,
           fmt::format("classifier expects {} inputs, joint mask has {}", h->model.config.input_dim, h->mask.size()));
  }
}

int Session::infer(Head& head, const biomech::JointAngleFrame& frame) {
  Eigen::VectorXd x(static_cast<Eigen::Index>(head.mask.size()));
  for (std::size_t j = 0; j < head.mask.size(); ++j) x[static_cast<Eigen::Index>(j)] = frame.q[head.mask[j]];
  head.window.push_back(std::move(x));
  if (head.window.size() > head.model.config.window) head.window.pop_front();
  const std::size_t n = head.window.size(), d = head.mask.size();
  ad::Tensor window({n, d});
  for (std::size_t r = 0; r < n; ++r) std::copy_n(head.window[r].data(), d, window.data() + r * d);
  const int label = act::infer(head.model.config, head.model.params, window).final_label;
  head.buffer.push(label);
  return label;
}

ActionMessage Session::step(const biomech::JointAngleFrame& frame) {
  if (!frame.q.allFinite() || !std::isfinite(frame.timestamp))
    fail(ErrorCode::kNonFinite, fmt::format("frame {} has non-finite values", frame_));
  ActionMessage msg;
  msg.frame = frame_++;
  msg.timestamp = frame.timestamp;
  msg.lower = infer(lower_, frame);
  msg.upper = infer(upper_, frame);
  msg.confirmed_lower = lower_.buffer.confirmed();
  msg.confirmed_upper = upper_.buffer.confirmed();
  return msg;
}

void Session::reset() {
  for (Head* h : {&lower_, &upper_}) {
    h->window.clear();
    h->buffer.reset();
  }
  frame_ = 0;
}

LatencyStats latency_stats(std::vector<double> samples) {
  LatencyStats s;
  if (samples.empty()) return s;
  std::sort(samples.begin(), samples.end());
  const auto rank = [&](double p) {
    const auto k = static_cast<std::size_t>(std::ceil(p * static_cast<double>(samples.size())));
    return samples[std::clamp<std::size_t>(k, 1, samples.size()) - 1];
  };
  s.p50_ms = rank(0.50);
  s.p95_ms = rank(0.95);
  s.p99_ms = rank(0.99);
  s.max_ms = samples.back();
  return s;
}

SessionReport run_session(Session& session, std::span<const biomech::JointAngleFrame> frames,
                          const RunOptions& options) {
  using Clock = std::chrono::steady_clock;
  SessionReport report;
  std::vector<double> step_ms, encode_ms;
  const auto start = Clock::now();
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (options.rate_hz > 0.0) {
      std::this_thread::sleep_until(start + std::chrono::duration_cast<Clock::duration>(
                                                std::chrono::duration<double>(static_cast<double>(i) / options.rate_hz)));
    }
    const auto t0 = Clock::now();
    auto msg = session.step(frames[i]);
    const auto t1 = Clock::now();
    const auto payload = encode(msg);
    const auto t2 = Clock::now();
    if (options.broadcaster) options.broadcaster->send_encoded(payload);
    step_ms.push_back(std::chrono::duration<double, std::milli>(t2 - t0).count());
    encode_ms.push_back(std::chrono::duration<double, std::milli>(t2 - t1).count());
    report.messages.push_back(std::move(msg));
  }
  report.frames = frames.size();
  report.step = latency_stats(std::move(step_ms));
  report.encode = latency_stats(std::move(encode_ms));
  return report;
}

// ---- pen ----------------------------------------------------------------------------

std::string_view pen_mode_name(PenMode mode) {
  switch (mode) {
    case PenMode::kInit: return "INIT";
    case PenMode::kPenDown: return "PEN_DOWN";
    case PenMode::kPenRight: return "PEN_RIGHT";
    case PenMode::kPenLeft: return "PEN_LEFT";
    case PenMode::kPenBackward: return "PEN_BACKWARD";
    case PenMode::kPenForward: return "PEN_FORWARD";
    case PenMode::kPenPause: return "PEN_PAUSE";
    case PenMode::kPenUpClear: return "PEN_UP_CLEAR";
  }
  return "UNKNOWN";
}

std::optional<PenMode> pen_command(int id) {
  switch (id) {
    case label::kSittingDown: return PenMode::kPenDown;
    case label::kLeftArmPicking: return PenMode::kPenRight;
    case label::kRightArmPicking: return PenMode::kPenLeft;
    case label::kTwoArmsPicking: return PenMode::kPenBackward;
    case label::kComeSignTwoArms: return PenMode::kPenForward;
    case label::kStopSign: return PenMode::kPenPause;
    case label::kWalking: return PenMode::kPenUpClear;
    default: return std::nullopt;
  }
}

namespace {

Eigen::Vector2d direction(PenMode mode) {
  switch (mode) {
    case PenMode::kPenRight: return {1.0, 0.0};
    case PenMode::kPenLeft: return {-1.0, 0.0};
    case PenMode::kPenForward: return {0.0, 1.0};
    case PenMode::kPenBackward: return {0.0, -1.0};
    default: return Eigen::Vector2d::Zero();
  }
}

void apply(PenState& s, PenMode mode) {
  s.mode = mode;
  if (mode == PenMode::kPenDown) {
    if (!s.down) s.trace.push_back({s.position});
    s.down = true;
  } else if (mode == PenMode::kPenUpClear) {
    s.down = false;
    s.trace.clear();
  }
}

}  // namespace

PenState pen_transition(PenState s, std::optional<int> confirmed_lower, std::optional<int> confirmed_upper,
                        const PenOptions& options) {
  const Eigen::Vector2d step = options.speed * direction(s.mode);
  if (!step.isZero()) {
    const Eigen::Vector2d next = (s.position + step).cwiseMax(0.0).cwiseMin(1.0);
    if (next != s.position) {
      s.position = next;
      if (s.down) s.trace.back().push_back(next);
    }
  }
  const auto fresh = [](std::optional<int>& last, const std::optional<int>& now) {
    const bool changed = now && now != last;
    last = now;
    return changed;
  };
  if (fresh(s.last_lower, confirmed_lower))
    if (const auto mode = pen_command(*confirmed_lower)) apply(s, *mode);
  if (fresh(s.last_upper, confirmed_upper))
    if (const auto mode = pen_command(*confirmed_upper)) apply(s, *mode);
  return s;
}

nlohmann::json pen_trace_json(const PenState& state) {
  nlohmann::json lines = nlohmann::json::array();
  for (const auto& line : state.trace) {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : line) pts.push_back({p.x(), p.y()});
    lines.push_back(std::move(pts));
  }
  return {{"mode", std::string(pen_mode_name(state.mode))},
          {"position", {state.position.x(), state.position.y()}},
          {"pen_down", state.down},
          {"trace", std::move(lines)}};
}

}  // namespace kinact::runtime
