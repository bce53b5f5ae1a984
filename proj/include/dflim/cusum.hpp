#pragma once

// One-sided CUSUM on the T² increments, the first-alarm stopping rule, and
// the restart-on-alarm loop used for long streams.

#include <algorithm>
#include <concepts>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dflim/calibration.hpp"
#include "dflim/features.hpp"

namespace dflim {

struct MonitorConfig {
  double drift = 0.0;            // E₀[T] + c·σ_T
  double control_limit_h = 0.0;  // H > 0; +∞ disables alarms
};

struct MonitorState {
  double s = 0.0;
  long t = 0;
  bool alarmed = false;
};

struct AlarmEvent {
  long time = 0;  // 1-based frame index
  double s_at_alarm = 0.0;
};

struct StepResult {
  MonitorState state;
  std::optional<AlarmEvent> alarm;
};

struct TraceRecord {
  long t = 0;
  double t_stat = 0.0;
  double s = 0.0;
  bool alarm = false;
};

using TraceSink = std::function<void(const TraceRecord&)>;

inline MonitorConfig monitor_config(const CalibrationParams& params) {
  return {params.drift(), params.control_limit_h};
}

inline void validate(const MonitorConfig& cfg) {
  if (!(cfg.control_limit_h > 0.0)) throw Error(ErrorKind::InvalidInput, "control limit H must be positive");
  if (!std::isfinite(cfg.drift)) throw Error(ErrorKind::InvalidInput, "drift must be finite");
}

/// S′ = max(0, S + T − drift); alarm when S′ ≥ H.
inline StepResult step(const MonitorState& state, double t_stat, const MonitorConfig& cfg) {
  if (state.alarmed) throw Error(ErrorKind::UsageError, "step called on an alarmed monitor without reset");
  StepResult out;
  out.state.s = std::max(0.0, state.s + t_stat - cfg.drift);
  out.state.t = state.t + 1;
  if (out.state.s >= cfg.control_limit_h) {
    out.state.alarmed = true;
    out.alarm = AlarmEvent{out.state.t, out.state.s};
  }
  return out;
}

/// Something that yields frames one at a time and std::nullopt at the end.
template <typename S>
concept FrameSource = requires(S& src) {
  { src.next() } -> std::same_as<std::optional<Matrix>>;
};

/// Adapts a contiguous batch of frames to FrameSource.
class SpanSource {
 public:
  explicit SpanSource(std::span<const Matrix> frames) : frames_(frames) {}
  std::optional<Matrix> next() {
    if (pos_ >= frames_.size()) return std::nullopt;
    return frames_[pos_++];
  }

 private:
  std::span<const Matrix> frames_;
  std::size_t pos_ = 0;
};

/**
 * Stateful monitor for a single stream.
 *
 * Time keeps counting across resets so alarm times stay absolute frame
 * indices; a reset only clears the CUSUM value and the alarm flag.
 */
class Monitor {
 public:
  Monitor(const InControlModel& model, const CalibrationParams& params)
      : model_(&model), params_(&params), cfg_(monitor_config(params)) {
    validate(cfg_);
  }

  const MonitorState& state() const { return state_; }
  const MonitorConfig& config() const { return cfg_; }

  void set_trace(TraceSink sink) { trace_ = std::move(sink); }

  /// Feeds one T value; returns the alarm if this step crossed H.
  std::optional<AlarmEvent> observe_statistic(double t_stat) {
    StepResult r = step(state_, t_stat, cfg_);
    state_ = r.state;
    if (trace_) trace_({state_.t, t_stat, state_.s, r.alarm.has_value()});
    return r.alarm;
  }

  std::optional<AlarmEvent> observe(const Matrix& frame) {
    double t_stat = 0.0;
    try {
      t_stat = t_statistic(feature_vector(frame, *model_), params_->mu0, params_->cov0_chol);
    } catch (const Error& e) {
      throw Error(e.kind(), "frame " + std::to_string(state_.t + 1) + ": " + e.detail());
    }
    return observe_statistic(t_stat);
  }

  void reset() {
    state_.s = 0.0;
    state_.alarmed = false;
  }

 private:
  const InControlModel* model_;
  const CalibrationParams* params_;
  MonitorConfig cfg_;
  MonitorState state_;
  TraceSink trace_;
};

/// First alarm on the stream, or nullopt if it runs out first.
template <FrameSource Source>
std::optional<AlarmEvent> run(Source& frames, const InControlModel& model, const CalibrationParams& params,
                              TraceSink trace = {}) {
  Monitor monitor(model, params);
  monitor.set_trace(std::move(trace));
  while (auto frame = frames.next()) {
    if (auto alarm = monitor.observe(*frame)) return alarm;
  }
  return std::nullopt;
}

inline std::optional<AlarmEvent> run(std::span<const Matrix> frames, const InControlModel& model,
                                     const CalibrationParams& params, TraceSink trace = {}) {
  SpanSource src(frames);
  return run(src, model, params, std::move(trace));
}

/// Monitors the whole stream, resetting S to 0 after every alarm.
template <FrameSource Source>
std::vector<AlarmEvent> run_with_restart(Source& frames, const InControlModel& model,
                                         const CalibrationParams& params, TraceSink trace = {}) {
  Monitor monitor(model, params);
  monitor.set_trace(std::move(trace));
  std::vector<AlarmEvent> alarms;
  while (auto frame = frames.next()) {
    if (auto alarm = monitor.observe(*frame)) {
      alarms.push_back(*alarm);
      monitor.reset();
    }
  }
  return alarms;
}

inline std::vector<AlarmEvent> run_with_restart(std::span<const Matrix> frames, const InControlModel& model,
                                                const CalibrationParams& params, TraceSink trace = {}) {
  SpanSource src(frames);
  return run_with_restart(src, model, params, std::move(trace));
}

/// CUSUM path over a precomputed T series, stopping at the first alarm.
inline std::vector<double> cusum_path(std::span<const double> ts, const MonitorConfig& cfg,
                                      std::optional<AlarmEvent>* first_alarm = nullptr) {
  std::vector<double> path;
  path.reserve(ts.size());
  MonitorState state;
  for (double t : ts) {
    StepResult r = step(state, t, cfg);
    state = r.state;
    path.push_back(state.s);
    if (r.alarm) {
      if (first_alarm) *first_alarm = r.alarm;
      break;
    }
  }
  return path;
}

}  // namespace dflim
