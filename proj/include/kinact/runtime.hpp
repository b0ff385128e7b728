#pragma once

// Online recognition loop: per-frame inference for both heads, majority
// buffer confirmation, UDP telemetry and the virtual pen subscriber.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "kinact/act.hpp"
#include "kinact/biomech.hpp"
#include "kinact/labels.hpp"

namespace kinact::runtime {

// ---- buffer confirmation -----------------------------------------------------

class BufferFilter {
 public:
  /// Throws kInvalidArgument unless capacity >= 1 and 0 < threshold < 1.
  explicit BufferFilter(std::size_t capacity = 20, double threshold = 0.5);

  /// Adds one per-frame label and returns the confirmed label, if any. A
  /// label is confirmed once its count strictly exceeds threshold * capacity
  /// and stays confirmed until another label does.
  std::optional<int> push(int label);

  std::optional<int> confirmed() const { return confirmed_; }
  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return ring_.size(); }
  /// Smallest count that confirms: floor(threshold * capacity) + 1.
  std::size_t votes_needed() const { return needed_; }
  void reset();

 private:
  std::size_t capacity_;
  std::size_t needed_;
  std::deque<int> ring_;
  std::optional<int> confirmed_;
};

// ---- messages -----------------------------------------------------------------

struct ActionMessage {
  std::int64_t frame = 0;
  double timestamp = 0.0;
  int lower = label::kStanding;
  int upper = label::kIdle;
  std::optional<int> confirmed_lower;
  std::optional<int> confirmed_upper;

  bool operator==(const ActionMessage&) const = default;
};

inline constexpr std::size_t kMaxDatagram = 512;

/// Single-line JSON {"f","t","lo","up","clo","cup"}.
std::string encode(const ActionMessage& msg);
/// Throws kParse on malformed JSON, kInvalidArgument on out-of-range labels.
ActionMessage decode(std::string_view payload);

// ---- bounded queue ------------------------------------------------------------

/// Multi-producer queue that discards its oldest element when full.
template <class T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {}

  /// Returns true when an element had to be dropped.
  bool push(T value) {
    bool dropped = false;
    {
      std::lock_guard lock(mutex_);
      if (closed_) return false;
      if (items_.size() == capacity_) {
        items_.pop_front();
        dropped = true;
      }
      items_.push_back(std::move(value));
    }
    ready_.notify_one();
    return dropped;
  }

  /// Waits until an element arrives or the queue is closed and drained.
  std::optional<T> pop() {
    std::unique_lock lock(mutex_);
    ready_.wait(lock, [&] { return closed_ || !items_.empty(); });
    if (items_.empty()) return std::nullopt;
    T value = std::move(items_.front());
    items_.pop_front();
    return value;
  }

  void close() {
    {
      std::lock_guard lock(mutex_);
      closed_ = true;
    }
    ready_.notify_all();
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return items_.size();
  }

 private:
  std::size_t capacity_;
  mutable std::mutex mutex_;
  std::condition_variable ready_;
  std::deque<T> items_;
  bool closed_ = false;
};

// ---- UDP ------------------------------------------------------------------------

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
};

/// "host:port"; throws kInvalidArgument.
Endpoint parse_endpoint(std::string_view text);

/// Fire-and-forget sender. send() only enqueues; a worker thread owns the
/// socket. Send failures are logged and counted, never thrown.
class UdpBroadcaster {
 public:
  /// Throws kIo when the socket cannot be created or the host is unresolvable.
  explicit UdpBroadcaster(const Endpoint& dest, std::size_t queue_capacity = 64);
  ~UdpBroadcaster();
  UdpBroadcaster(const UdpBroadcaster&) = delete;
  UdpBroadcaster& operator=(const UdpBroadcaster&) = delete;

  void send(const ActionMessage& msg);
  /// Queues an already encoded payload.
  void send_encoded(std::string payload);
  /// Drains the queue and joins the worker.
  void stop();
  /// Closes the socket under the worker; later sends fail and are logged.
  void close_socket();

  std::uint64_t sent() const { return sent_; }
  std::uint64_t failed() const { return failed_; }
  std::uint64_t dropped() const { return dropped_; }

 private:
  void run();

  BoundedQueue<std::string> queue_;
  std::atomic<int> fd_{-1};
  std::vector<unsigned char> address_;
  std::atomic<std::uint64_t> sent_{0}, failed_{0}, dropped_{0};
  std::thread worker_;
};

class UdpReceiver {
 public:
  /// Binds 127.0.0.1:port (0 picks a free port). Throws kIo.
  explicit UdpReceiver(std::uint16_t port = 0, const std::string& host = "127.0.0.1");
  ~UdpReceiver();
  UdpReceiver(const UdpReceiver&) = delete;
  UdpReceiver& operator=(const UdpReceiver&) = delete;

  std::uint16_t port() const { return port_; }
  /// One datagram, or nullopt after `timeout`.
  std::optional<std::string> receive(std::chrono::milliseconds timeout);

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

// ---- session --------------------------------------------------------------------

struct HeadModel {
  act::ActConfig config;
  ad::ParameterSet params;

  HeadModel clone() const { return {config, params.clone()}; }
};

struct SessionOptions {
  std::size_t buffer_capacity = 20;
  double threshold = 0.5;
};

/// Single-owner recognition state for both heads.
class Session {
 public:
  Session(const biomech::BiomechModel& model, HeadModel lower, HeadModel upper,
          SessionOptions options = {});

  /// Throws kNonFinite for a frame with non-finite angles.
  ActionMessage step(const biomech::JointAngleFrame& frame);
  void reset();

  std::int64_t frames_seen() const { return frame_; }

 private:
  struct Head {
    HeadModel model;
    std::vector<int> mask;
    std::deque<Eigen::VectorXd> window;
    BufferFilter buffer;
  };
  int infer(Head& head, const biomech::JointAngleFrame& frame);

  Head lower_;
  Head upper_;
  std::int64_t frame_ = 0;
};

struct LatencyStats {
  double p50_ms = 0.0;
  double p95_ms = 0.0;
  double p99_ms = 0.0;
  double max_ms = 0.0;
};

/// Nearest-rank percentiles of samples in milliseconds.
LatencyStats latency_stats(std::vector<double> samples_ms);

struct SessionReport {
  std::vector<ActionMessage> messages;
  LatencyStats step;
  LatencyStats encode;
  std::size_t frames = 0;
};

struct RunOptions {
  /// Frames per second to pace the loop at; <= 0 runs as fast as possible.
  double rate_hz = 0.0;
  /// Optional sink; null skips broadcasting.
  UdpBroadcaster* broadcaster = nullptr;
};

/// Drives step (and broadcast) over a finite frame source.
SessionReport run_session(Session& session, std::span<const biomech::JointAngleFrame> frames,
                          const RunOptions& options = {});

// ---- virtual pen ------------------------------------------------------------------

enum class PenMode { kInit, kPenDown, kPenRight, kPenLeft, kPenBackward, kPenForward, kPenPause, kPenUpClear };

std::string_view pen_mode_name(PenMode mode);

struct PenOptions {
  /// Board units per frame.
  double speed = 0.02;
};

struct PenState {
  PenMode mode = PenMode::kInit;
  Eigen::Vector2d position{0.5, 0.5};
  bool down = false;
  /// Polylines drawn while the pen was down.
  std::vector<std::vector<Eigen::Vector2d>> trace;
  std::optional<int> last_lower;
  std::optional<int> last_upper;
};

/// Mode requested by a confirmed label, if it is one of the mapped labels.
std::optional<PenMode> pen_command(int label);

/// One frame: moves in the current mode, then applies newly confirmed
/// labels (lower first, then upper).
PenState pen_transition(PenState state, std::optional<int> confirmed_lower,
                        std::optional<int> confirmed_upper, const PenOptions& options = {});

nlohmann::json pen_trace_json(const PenState& state);

}  // namespace kinact::runtime
