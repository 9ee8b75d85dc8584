#pragma once

// Recorded histories of version maintenance operations.
//
// Text form, one record per line:
//
//   seq kind proc op arg result
//
//   seq     global order stamp (strictly increasing across the file)
//   kind    inv | res
//   proc    process id
//   op      acquire | release | set
//   arg     set's data value, '-' otherwise
//   result  acquire's data value, release's true|false, '-' otherwise
//
// Lines starting with '#' are comments, except for one optional header
// "# swvm-history processes=N initial=D" that fixes the object's shape.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <istream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "swvm/errors.hpp"
#include "swvm/instrumentation.hpp"

namespace swvm {

enum class VmOpKind : std::uint8_t { acquire, release, set };
enum class EventPhase : std::uint8_t { invoke, respond };

inline const char* to_string(VmOpKind k) {
  switch (k) {
    case VmOpKind::acquire: return "acquire";
    case VmOpKind::release: return "release";
    default: return "set";
  }
}

struct VmEvent {
  std::uint64_t seq = 0;
  EventPhase phase = EventPhase::invoke;
  std::size_t process = 0;
  VmOpKind op = VmOpKind::acquire;
  std::optional<std::uint64_t> arg;     // set
  std::optional<std::uint64_t> result;  // acquire data, release 0/1
};

/// One operation reassembled from its invocation and (optional) response.
struct VmOperation {
  std::size_t process = 0;
  VmOpKind op = VmOpKind::acquire;
  std::uint64_t arg = 0;
  std::optional<std::uint64_t> result;
  std::uint64_t invoked = 0;
  std::optional<std::uint64_t> responded;

  bool complete() const noexcept { return responded.has_value(); }
};

class VmHistory {
 public:
  std::size_t processes = 0;
  std::uint64_t initial_data = 0;
  std::vector<VmEvent> events;

  /// Pairs invocations with responses; throws CheckerRefusal when malformed.
  std::vector<VmOperation> operations() const {
    std::vector<VmOperation> ops;
    std::vector<std::optional<std::size_t>> open(processes);
    std::uint64_t last_seq = 0;
    bool first = true;
    for (const VmEvent& e : events) {
      if (!first && e.seq <= last_seq) throw CheckerRefusal("history stamps are not increasing");
      first = false;
      last_seq = e.seq;
      if (e.process >= processes) throw CheckerRefusal("history names an unknown process");
      auto& pending = open[e.process];
      if (e.phase == EventPhase::invoke) {
        if (pending) throw CheckerRefusal("process invoked twice without a response");
        VmOperation op;
        op.process = e.process;
        op.op = e.op;
        op.arg = e.arg.value_or(0);
        op.invoked = e.seq;
        pending = ops.size();
        ops.push_back(op);
      } else {
        if (!pending || ops[*pending].op != e.op) throw CheckerRefusal("response without a matching invocation");
        ops[*pending].responded = e.seq;
        ops[*pending].result = e.result;
        pending.reset();
      }
    }
    return ops;
  }

  /// The first n events.
  VmHistory prefix(std::size_t n) const {
    VmHistory h{processes, initial_data, {}};
    h.events.assign(events.begin(), events.begin() + static_cast<std::ptrdiff_t>(std::min(n, events.size())));
    return h;
  }

  std::string to_text() const {
    std::ostringstream os;
    os << "# swvm-history processes=" << processes << " initial=" << initial_data << '\n';
    for (const VmEvent& e : events) {
      os << e.seq << ' ' << (e.phase == EventPhase::invoke ? "inv" : "res") << ' ' << e.process << ' '
         << to_string(e.op) << ' ';
      if (e.arg) os << *e.arg; else os << '-';
      os << ' ';
      if (!e.result || e.phase == EventPhase::invoke)
        os << '-';
      else if (e.op == VmOpKind::release)
        os << (*e.result ? "true" : "false");
      else
        os << *e.result;
      os << '\n';
    }
    return os.str();
  }

  static VmHistory parse(std::istream& in) {
    VmHistory h;
    std::string line;
    std::size_t max_proc = 0;
    bool header = false;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      if (line[0] == '#') {
        std::istringstream hs(line.substr(1));
        std::string tag;
        hs >> tag;
        if (tag != "swvm-history") continue;
        for (std::string kv; hs >> kv;) {
          const auto eq = kv.find('=');
          if (eq == std::string::npos) continue;
          const std::string key = kv.substr(0, eq);
          const std::uint64_t val = std::stoull(kv.substr(eq + 1));
          if (key == "processes") {
            h.processes = static_cast<std::size_t>(val);
            header = true;
          } else if (key == "initial") {
            h.initial_data = val;
          }
        }
        continue;
      }
      std::istringstream ls(line);
      std::string kind, op, arg, result;
      VmEvent e;
      if (!(ls >> e.seq >> kind >> e.process >> op >> arg >> result)) bad(lineno, "expected 6 fields");
      if (kind == "inv") e.phase = EventPhase::invoke;
      else if (kind == "res") e.phase = EventPhase::respond;
      else bad(lineno, "kind must be inv or res");
      if (op == "acquire") e.op = VmOpKind::acquire;
      else if (op == "release") e.op = VmOpKind::release;
      else if (op == "set") e.op = VmOpKind::set;
      else bad(lineno, "unknown op");
      if (arg != "-") e.arg = std::stoull(arg);
      if (result == "true") e.result = 1;
      else if (result == "false") e.result = 0;
      else if (result != "-") e.result = std::stoull(result);
      max_proc = std::max(max_proc, e.process + 1);
      h.events.push_back(e);
    }
    if (!header) h.processes = max_proc;
    return h;
  }

  static VmHistory parse(std::string_view text) {
    std::istringstream in{std::string(text)};
    return parse(in);
  }

 private:
  [[noreturn]] static void bad(std::size_t lineno, const char* why) {
    throw CheckerRefusal("history line " + std::to_string(lineno) + ": " + why);
  }
};

/// Thread-safe recording of VM calls. Each process appends to its own
/// buffer; stamps come from one shared counter, taken just before the call
/// and just after it returns.
class VmHistoryRecorder {
 public:
  VmHistoryRecorder(std::size_t processes, std::uint64_t initial_data)
      : buffers_(processes), initial_(initial_data) {}

  /// Runs between each invocation stamp and the call itself.
  std::function<void()> pause;

  template <class Vm>
  std::uint64_t acquire(Vm& vm, std::size_t k) {
    log(k, EventPhase::invoke, VmOpKind::acquire, std::nullopt, std::nullopt);
    if (pause) pause();
    const std::uint64_t d = static_cast<std::uint64_t>(vm.acquire(k));
    log(k, EventPhase::respond, VmOpKind::acquire, std::nullopt, d);
    return d;
  }

  template <class Vm>
  bool release(Vm& vm, std::size_t k) {
    log(k, EventPhase::invoke, VmOpKind::release, std::nullopt, std::nullopt);
    if (pause) pause();
    const bool last = vm.release(k);
    log(k, EventPhase::respond, VmOpKind::release, std::nullopt, last ? 1 : 0);
    return last;
  }

  template <class Vm>
  void set(Vm& vm, std::size_t k, std::uint64_t d) {
    log(k, EventPhase::invoke, VmOpKind::set, d, std::nullopt);
    if (pause) pause();
    vm.set(static_cast<typename Vm::data_type>(d));
    log(k, EventPhase::respond, VmOpKind::set, d, std::nullopt);
  }

  /// Merged history; call after the recording threads are joined.
  VmHistory history() const {
    VmHistory h{buffers_.size(), initial_, {}};
    for (const auto& b : buffers_) h.events.insert(h.events.end(), b.value.begin(), b.value.end());
    std::sort(h.events.begin(), h.events.end(), [](const VmEvent& a, const VmEvent& b) { return a.seq < b.seq; });
    return h;
  }

 private:
  void log(std::size_t k, EventPhase phase, VmOpKind op, std::optional<std::uint64_t> arg,
           std::optional<std::uint64_t> result) {
    const std::uint64_t seq = seq_.fetch_add(1, std::memory_order_seq_cst) + 1;
    buffers_[k].value.push_back(VmEvent{seq, phase, k, op, arg, result});
  }

  std::vector<detail::Padded<std::vector<VmEvent>>> buffers_;
  std::uint64_t initial_;
  alignas(64) std::atomic<std::uint64_t> seq_{0};
};

}  // namespace swvm
