#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <unordered_map>
#include <vector>

#include <gtest/gtest.h>

#include "swvm/ptree.hpp"
#include "swvm/verify/audit.hpp"
#include "swvm/verify/history.hpp"
#include "swvm/verify/linearizability.hpp"
#include "swvm/verify/online_serializability.hpp"
#include "swvm/verify/serializability.hpp"
#include "swvm/waitfree_vm.hpp"

using namespace swvm;

namespace {

// Minimal model of the object, kept apart from the library's oracle.
struct Model {
  std::uint64_t ts = 0;
  std::map<std::uint64_t, std::uint64_t> data{{0, 0}};
  std::vector<std::optional<std::uint64_t>> holds;
  std::optional<std::size_t> writer;

  explicit Model(std::size_t p, std::uint64_t init) : data{{0, init}}, holds(p) {}

  bool held(std::uint64_t v) const {
    return std::any_of(holds.begin(), holds.end(), [&](auto& h) { return h && *h == v; });
  }
  // false when the op is illegal here or its result disagrees
  bool step(const VmOperation& op) {
    auto& h = holds[op.process];
    switch (op.op) {
      case VmOpKind::acquire:
        if (h) return false;
        h = ts;
        return !op.result || *op.result == data.at(ts);
      case VmOpKind::release: {
        if (!h) return false;
        const std::uint64_t v = *h;
        h.reset();
        if (writer == op.process) writer.reset();
        const bool last = v != ts && !held(v);
        if (last) data.erase(v);
        return !op.result || *op.result == (last ? 1u : 0u);
      }
      case VmOpKind::set:
        if (!h || *h != ts || (writer && *writer != op.process)) return false;
        if (!held(ts)) data.erase(ts);
        data[++ts] = op.arg;
        writer = op.process;
        return true;
    }
    return false;
  }
};

// Exhaustive check: every subset of the pending operations, every ordering.
bool brute_linearizable(const VmHistory& h) {
  const auto all = h.operations();
  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < all.size(); ++i)
    if (!all[i].complete()) pending.push_back(i);
  for (std::uint32_t mask = 0; mask < (1U << pending.size()); ++mask) {
    std::vector<VmOperation> ops;
    for (std::size_t i = 0, p = 0; i < all.size(); ++i) {
      if (!all[i].complete() && !(mask >> p++ & 1U)) continue;
      ops.push_back(all[i]);
    }
    std::vector<std::size_t> perm(ops.size());
    std::iota(perm.begin(), perm.end(), 0);
    do {
      bool ok = true;
      for (std::size_t i = 0; i < perm.size() && ok; ++i)
        for (std::size_t j = i + 1; j < perm.size() && ok; ++j)
          if (ops[perm[j]].complete() && *ops[perm[j]].responded < ops[perm[i]].invoked) ok = false;
      Model m(h.processes, h.initial_data);
      for (std::size_t i = 0; i < perm.size() && ok; ++i) ok = m.step(ops[perm[i]]);
      if (ok) return true;
    } while (std::next_permutation(perm.begin(), perm.end()));
  }
  return false;
}

// A legal sequential run stretched into overlapping intervals around each
// operation's linearization point.
VmHistory random_linearizable(std::mt19937_64& rng, std::size_t P, std::size_t n_ops) {
  Model m(P, 0);
  std::vector<VmOperation> seq;
  std::uint64_t payload = 100;
  while (seq.size() < n_ops) {
    const std::size_t k = rng() % P;
    VmOperation op;
    op.process = k;
    if (!m.holds[k]) {
      op.op = VmOpKind::acquire;
      op.result = m.data.at(m.ts);
    } else if (*m.holds[k] == m.ts && (!m.writer || *m.writer == k) && rng() % 2) {
      op.op = VmOpKind::set;
      op.arg = payload++;
    } else {
      op.op = VmOpKind::release;
      const std::uint64_t v = *m.holds[k];
      bool other = false;
      for (std::size_t j = 0; j < P; ++j) other |= j != k && m.holds[j] && *m.holds[j] == v;
      op.result = v != m.ts && !other ? 1 : 0;
    }
    EXPECT_TRUE(m.step(op));
    seq.push_back(op);
  }
  struct Stamp {
    std::uint64_t t;
    std::uint64_t tie;
    VmEvent e;
  };
  std::vector<Stamp> st;
  std::vector<std::uint64_t> last_resp(P, 0);
  for (std::size_t i = 0; i < seq.size(); ++i) {
    const std::uint64_t lin = 100 + 10 * i;
    std::uint64_t next_lin = UINT64_MAX;
    for (std::size_t j = i + 1; j < seq.size(); ++j)
      if (seq[j].process == seq[i].process) {
        next_lin = 100 + 10 * j;
        break;
      }
    const std::uint64_t inv = std::max(lin - rng() % 30, last_resp[seq[i].process] + 1);
    const std::uint64_t resp = std::min(lin + rng() % 30, next_lin - 1);
    last_resp[seq[i].process] = resp;
    VmEvent a{0, EventPhase::invoke, seq[i].process, seq[i].op, std::nullopt, std::nullopt};
    if (seq[i].op == VmOpKind::set) a.arg = seq[i].arg;
    VmEvent b = a;
    b.phase = EventPhase::respond;
    b.result = seq[i].result;
    st.push_back({inv, rng(), a});
    st.push_back({resp, rng(), b});
  }
  std::sort(st.begin(), st.end(), [](const Stamp& x, const Stamp& y) { return std::tie(x.t, x.e.phase, x.tie) < std::tie(y.t, y.e.phase, y.tie); });
  VmHistory h{P, 0, {}};
  for (std::size_t i = 0; i < st.size(); ++i) {
    st[i].e.seq = i + 1;
    h.events.push_back(st[i].e);
  }
  return h;
}

VmEvent inv(std::uint64_t s, std::size_t p, VmOpKind op, std::optional<std::uint64_t> arg = {}) {
  return {s, EventPhase::invoke, p, op, arg, std::nullopt};
}
VmEvent res(std::uint64_t s, std::size_t p, VmOpKind op, std::optional<std::uint64_t> r = {},
            std::optional<std::uint64_t> arg = {}) {
  return {s, EventPhase::respond, p, op, arg, r};
}

}  // namespace

TEST(Linearizability, SequentialHistoryPasses) {
  VmHistory h{2, 0, {}};
  h.events = {inv(1, 0, VmOpKind::acquire), res(2, 0, VmOpKind::acquire, 0),
              inv(3, 0, VmOpKind::set, 5),  res(4, 0, VmOpKind::set, {}, 5),
              inv(5, 1, VmOpKind::acquire), res(6, 1, VmOpKind::acquire, 5),
              inv(7, 0, VmOpKind::release), res(8, 0, VmOpKind::release, 1),
              inv(9, 1, VmOpKind::release), res(10, 1, VmOpKind::release, 0)};
  const auto r = check_linearizable(h);
  EXPECT_TRUE(r.passed) << r.detail;
  EXPECT_EQ(r.witness.size(), 5u);
}

TEST(Linearizability, RealTimeOrderIsEnforced) {
  // Process 1 acquires after set returned yet sees the old data.
  VmHistory h{2, 0, {}};
  h.events = {inv(1, 0, VmOpKind::acquire), res(2, 0, VmOpKind::acquire, 0),
              inv(3, 0, VmOpKind::set, 5),  res(4, 0, VmOpKind::set, {}, 5),
              inv(5, 1, VmOpKind::acquire), res(6, 1, VmOpKind::acquire, 0)};
  const auto r = check_linearizable(h);
  EXPECT_FALSE(r.passed);
  ASSERT_TRUE(r.violating_prefix);
  EXPECT_EQ(r.violating_prefix->events.size(), 6u);
  // Overlapping the set, the same answer is fine.
  h.events = {inv(1, 0, VmOpKind::acquire), res(2, 0, VmOpKind::acquire, 0),
              inv(3, 0, VmOpKind::set, 5),  inv(4, 1, VmOpKind::acquire),
              res(5, 0, VmOpKind::set, {}, 5), res(6, 1, VmOpKind::acquire, 0)};
  EXPECT_TRUE(check_linearizable(h).passed);
}

TEST(Linearizability, PendingOperationsMayTakeEffect) {
  VmHistory h{2, 0, {}};
  h.events = {inv(1, 0, VmOpKind::acquire), res(2, 0, VmOpKind::acquire, 0), inv(3, 0, VmOpKind::set, 9),
              inv(4, 1, VmOpKind::acquire), res(5, 1, VmOpKind::acquire, 9)};
  EXPECT_TRUE(check_linearizable(h).passed);
  h.events.back().result = 0;
  EXPECT_TRUE(check_linearizable(h).passed);
  h.events.back().result = 7;
  EXPECT_FALSE(check_linearizable(h).passed);
}

TEST(Linearizability, RefusesLargeOrMalformedHistories) {
  VmHistory h{1, 0, {}};
  std::uint64_t s = 0;
  for (int i = 0; i < 8; ++i) {
    h.events.push_back(inv(++s, 0, VmOpKind::acquire));
    h.events.push_back(res(++s, 0, VmOpKind::acquire, 0));
    h.events.push_back(inv(++s, 0, VmOpKind::release));
    h.events.push_back(res(++s, 0, VmOpKind::release, 0));
  }
  EXPECT_THROW(check_linearizable(h), CheckerRefusal);
  EXPECT_TRUE(check_linearizable(h, {.max_ops = 16}).passed);
  VmHistory bad{1, 0, {res(1, 0, VmOpKind::acquire, 0)}};
  EXPECT_THROW(check_linearizable(bad), CheckerRefusal);
  VmHistory unordered{1, 0, {inv(2, 0, VmOpKind::acquire), res(1, 0, VmOpKind::acquire, 0)}};
  EXPECT_THROW(check_linearizable(unordered), CheckerRefusal);
}

TEST(Linearizability, GeneratedLinearizableHistoriesPass) {
  std::mt19937_64 rng(21);
  for (int i = 0; i < 400; ++i) {
    const VmHistory h = random_linearizable(rng, 2 + i % 2, 4 + i % 11);
    const auto r = check_linearizable(h);
    ASSERT_TRUE(r.passed) << h.to_text();
  }
}

// Single mutations of valid histories: the search agrees with brute force.
TEST(Linearizability, MutationsAgreeWithExhaustiveSearch) {
  std::mt19937_64 rng(33);
  int failures = 0;
  for (int i = 0; i < 600; ++i) {
    VmHistory h = random_linearizable(rng, 2 + i % 2, 4 + i % 4);
    auto& e = h.events[rng() % h.events.size()];
    switch (rng() % 3) {
      case 0:  // flip or perturb a result
        if (e.phase == EventPhase::respond && e.op == VmOpKind::release) e.result = 1 - *e.result;
        else if (e.phase == EventPhase::respond && e.op == VmOpKind::acquire) e.result = *e.result + 1;
        break;
      case 1: {  // move one event earlier, keeping stamps increasing
        const std::size_t j = 1 + rng() % (h.events.size() - 1);
        std::swap(h.events[j - 1].seq, h.events[j].seq);
        std::swap(h.events[j - 1], h.events[j]);
        break;
      }
      default:  // change a set payload
        for (auto& x : h.events)
          if (x.op == VmOpKind::set && x.process == e.process) x.arg = *x.arg + 50;
        break;
    }
    bool brute;
    try {
      brute = brute_linearizable(h);
    } catch (const CheckerRefusal&) {
      EXPECT_THROW(check_linearizable(h), CheckerRefusal);
      continue;
    }
    const auto r = check_linearizable(h);
    ASSERT_EQ(r.passed, brute) << h.to_text();
    failures += !brute;
  }
  EXPECT_GT(failures, 50);  // the mutations do produce violations
}

TEST(Linearizability, MinimalPrefixIsItselfFailingAndMinimal) {
  std::mt19937_64 rng(44);
  int seen = 0;
  for (int i = 0; i < 300 && seen < 40; ++i) {
    VmHistory h = random_linearizable(rng, 3, 10);
    for (auto& e : h.events)
      if (e.phase == EventPhase::respond && e.op == VmOpKind::release && rng() % 3 == 0) e.result = 1 - *e.result;
    const auto r = check_linearizable(h);
    if (r.passed) continue;
    ++seen;
    ASSERT_TRUE(r.violating_prefix);
    const VmHistory& p = *r.violating_prefix;
    const auto again = VmHistory::parse(p.to_text());
    EXPECT_FALSE(check_linearizable(again, {.find_minimal_prefix = false}).passed);
    for (std::size_t n = 1; n < p.events.size(); ++n) {
      if (p.events[n - 1].phase == EventPhase::respond) {
        EXPECT_TRUE(brute_linearizable(p.prefix(n)));
      }
    }
  }
  EXPECT_GT(seen, 10);
}

TEST(History, TextRoundTrip) {
  std::mt19937_64 rng(5);
  const VmHistory h = random_linearizable(rng, 3, 12);
  const std::string text = h.to_text();
  const VmHistory back = VmHistory::parse(text);
  EXPECT_EQ(back.processes, 3u);
  EXPECT_EQ(back.to_text(), text);
  EXPECT_THROW(VmHistory::parse("1 inv 0 frobnicate - -\n"), CheckerRefusal);
  EXPECT_THROW(VmHistory::parse("1 inv 0\n"), CheckerRefusal);
}

TEST(History, RecorderCapturesRealCalls) {
  WaitFreeVm<std::uint64_t> vm(2, 3);
  VmHistoryRecorder rec(2, 3);
  rec.acquire(vm, 0);
  rec.set(vm, 0, 4);
  rec.acquire(vm, 1);
  rec.release(vm, 0);
  rec.release(vm, 1);
  const VmHistory h = rec.history();
  ASSERT_EQ(h.events.size(), 10u);
  EXPECT_EQ(*h.events[5].result, 4u);
  EXPECT_EQ(*h.events[7].result, 1u);
  EXPECT_TRUE(check_linearizable(h).passed);
}

// ---- strict serializability ----

namespace {

struct TxnTrace {
  std::vector<TxnEvent> events;
  std::unordered_map<std::uint64_t, Digest> answers, commits;
  std::vector<std::uint64_t> read_ids;
};

// Independent rule: state i is acceptable when it is the current state at
// some instant of [begin, respond].
std::set<std::uint64_t> brute_failing(const TxnTrace& t, Digest initial) {
  struct W { std::uint64_t commit, visible; Digest d; };
  std::vector<W> ws{{0, 0, initial}};
  std::map<std::uint64_t, std::pair<std::uint64_t, std::uint64_t>> rd;
  std::map<std::uint64_t, W> by_id;
  for (const auto& e : t.events) {
    if (e.kind == TxnEventKind::write_commit) by_id[e.txn].commit = e.seq;
    if (e.kind == TxnEventKind::write_visible) by_id[e.txn].visible = e.seq;
    if (e.kind == TxnEventKind::read_begin) rd[e.txn].first = e.seq;
    if (e.kind == TxnEventKind::read_respond) rd[e.txn].second = e.seq;
  }
  for (auto& [id, w] : by_id) ws.push_back({w.commit, w.visible, t.commits.at(id)});
  std::sort(ws.begin() + 1, ws.end(), [](const W& a, const W& b) { return a.commit < b.commit; });
  std::set<std::uint64_t> bad;
  for (const auto& [id, be] : rd) {
    bool ok = false;
    for (std::size_t i = 0; i < ws.size(); ++i) {
      const bool started = i == 0 || ws[i].commit < be.second;
      const bool not_yet_replaced = i + 1 == ws.size() || ws[i + 1].visible > be.first;
      if (started && not_yet_replaced && ws[i].d == t.answers.at(id)) ok = true;
    }
    if (!ok) bad.insert(id);
  }
  return bad;
}

TxnTrace random_trace(std::mt19937_64& rng, std::size_t readers, std::size_t steps, double corrupt) {
  TxnTrace t;
  std::uint64_t seq = 0, txn = 0;
  const std::size_t P = readers + 1;
  auto ev = [&](TxnEventKind k, std::size_t p, std::uint64_t id) { t.events.push_back({k, p, id, VersionId{}, ++seq}); };
    std::vector<int> phase(P, 0);
  std::vector<std::uint64_t> id(P, 0);
  std::vector<std::vector<Digest>> window(P);
  std::vector<Digest> states{1000};
  Digest current = 1000;
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t k = rng() % P;
    if (k == 0) {
      switch (phase[0]) {
        case 0: id[0] = ++txn; ev(TxnEventKind::write_begin, 0, id[0]); break;
        case 1: t.commits[id[0]] = 1000 + id[0]; ev(TxnEventKind::write_commit, 0, id[0]); break;
        case 2:
          current = t.commits[id[0]];
          states.push_back(current);
          ev(TxnEventKind::write_visible, 0, id[0]);
          break;
        case 3: ev(TxnEventKind::write_end, 0, id[0]); break;
      }
      phase[0] = (phase[0] + 1) % 4;
      continue;
    }
    switch (phase[k]) {
      case 0:
        id[k] = ++txn;
        t.read_ids.push_back(id[k]);
        ev(TxnEventKind::read_begin, k, id[k]);
        window[k] = {current};
        if (phase[0] == 2) window[k].push_back(t.commits[id[0]]);  // commit stamped, not yet visible
        break;
      case 1: {
        if (phase[0] >= 2) window[k].push_back(t.commits[id[0]]);
        window[k].push_back(current);
        Digest a = window[k][rng() % window[k].size()];
        if (std::uniform_real_distribution<>(0, 1)(rng) < corrupt) a = states[rng() % states.size()];
        t.answers[id[k]] = a;
        ev(TxnEventKind::read_respond, k, id[k]);
        break;
      }
      case 2: ev(TxnEventKind::read_end, k, id[k]); break;
    }
    phase[k] = (phase[k] + 1) % 3;
  }
  // drain so every transaction is complete
  while (phase[0] != 0) {
    if (phase[0] == 1) t.commits[id[0]] = 1000 + id[0], ev(TxnEventKind::write_commit, 0, id[0]);
    else if (phase[0] == 2) ev(TxnEventKind::write_visible, 0, id[0]);
    else ev(TxnEventKind::write_end, 0, id[0]);
    phase[0] = (phase[0] + 1) % 4;
  }
  for (std::size_t k = 1; k < P; ++k) {
    if (phase[k] == 1) {
      t.answers[id[k]] = current;
      ev(TxnEventKind::read_respond, k, id[k]);
      phase[k] = 2;
    }
    if (phase[k] == 2) ev(TxnEventKind::read_end, k, id[k]);
  }
  return t;
}

}  // namespace

TEST(StrictSerializability, WindowRule) {
  TxnTrace t;
  // write 1: begin 1, commit 2, visible 5, end 6
  // read 2: 3..4 overlaps the publish; read 3: 7..8 begins after visible
  t.events = {{TxnEventKind::write_begin, 0, 1, {}, 1},  {TxnEventKind::write_commit, 0, 1, {}, 2},
              {TxnEventKind::read_begin, 1, 2, {}, 3},   {TxnEventKind::read_respond, 1, 2, {}, 4},
              {TxnEventKind::write_visible, 0, 1, {}, 5}, {TxnEventKind::write_end, 0, 1, {}, 6},
              {TxnEventKind::read_begin, 1, 3, {}, 7},   {TxnEventKind::read_respond, 1, 3, {}, 8}};
  t.commits = {{1, 77}};
  for (const Digest a2 : {Digest{10}, Digest{77}}) {
    t.answers = {{2, a2}, {3, 77}};
    EXPECT_TRUE(check_strict_serializable(t.events, t.answers, t.commits, 10).passed);
  }
  t.answers = {{2, 10}, {3, 10}};
  const auto r = check_strict_serializable(t.events, t.answers, t.commits, 10);
  EXPECT_FALSE(r.passed);
  EXPECT_EQ(r.failing_reads, std::vector<std::uint64_t>{3});
  t.answers = {{2, 10}};
  EXPECT_THROW(check_strict_serializable(t.events, t.answers, t.commits, 10), CheckerRefusal);
}

TEST(StrictSerializability, OfflineOnlineAndExhaustiveAgree) {
  std::mt19937_64 rng(8);
  std::size_t failing = 0;
  for (int i = 0; i < 300; ++i) {
    const TxnTrace t = random_trace(rng, 1 + i % 4, 50 + i, i % 3 == 0 ? 0.0 : 0.2);
    const auto want = brute_failing(t, 1000);
    const auto off = check_strict_serializable(t.events, t.answers, t.commits, 1000);
    const auto on = OnlineSerializabilityChecker::replay(t.events, t.answers, t.commits, 1000);
    ASSERT_EQ(std::set<std::uint64_t>(off.failing_reads.begin(), off.failing_reads.end()), want) << i;
    ASSERT_EQ(std::set<std::uint64_t>(on.failing_reads.begin(), on.failing_reads.end()), want) << i;
    ASSERT_EQ(off.reads_checked, on.reads_checked);
    if (i % 3 == 0) {
      ASSERT_TRUE(want.empty());
    }
    failing += want.size();
  }
  EXPECT_GT(failing, 0u);
}

TEST(StrictSerializability, OnlineCheckerSkipsAbandonedReads) {
  OnlineSerializabilityChecker c(2, 5, 2);
  const auto id = c.next_txn();
  c.record(TxnEventKind::read_begin, 1, id, {});
  c.abandon(1);
  const auto id2 = c.next_txn();
  c.record(TxnEventKind::read_begin, 1, id2, {});
  c.record(TxnEventKind::read_respond, 1, id2, {});
  c.answer(1, 6);
  const auto r = c.report();
  EXPECT_FALSE(r.passed);
  EXPECT_EQ(r.reads_checked, 1u);
}

// ---- reclamation audit ----

TEST(Audit, CleanAndLeakyHeaps) {
  TupleStore s;
  AugmentedTreap t(s);
  WaitFreeVm<TreeRoot> vm(2, TreeRoot::null());
  auto commit = [&](auto&& f, bool collect) {
    const TreeRoot old = vm.acquire(0);
    CreationLog log = s.open_log();
    const TreeRoot fresh = f(old, log);
    s.output(fresh, log);
    vm.set(fresh);
    if (vm.release(0) && collect) s.collect(old);
    return fresh;
  };
  commit([&](TreeRoot r, CreationLog& log) { return t.insert(r, 1, 1, log); }, true);
  auto rep = reclamation_audit(s, vm, vm.current_data());
  EXPECT_TRUE(rep.passed) << rep.detail;
  EXPECT_EQ(rep.allocated, 1u);

  vm.acquire(1);
  EXPECT_THROW(reclamation_audit(s, vm, vm.current_data()), CheckerRefusal);
  vm.release(1);
  CreationLog open = s.open_log();
  t.insert(TreeRoot::null(), 5, 5, open);
  EXPECT_THROW(reclamation_audit(s, vm, vm.current_data()), CheckerRefusal);
  s.discard(open);

  for (int i = 2; i < 40; ++i) commit([&](TreeRoot r, CreationLog& log) { return t.insert(r, i, i, log); }, true);
  const TreeRoot before = vm.current_data();
  commit([&](TreeRoot r, CreationLog& log) { return t.insert(r, 100, 1, log); }, false);  // skipped collect
  rep = reclamation_audit(s, vm, vm.current_data());
  EXPECT_FALSE(rep.passed);
  EXPECT_FALSE(rep.leaked.empty());
  EXPECT_NE(std::find(rep.leaked.begin(), rep.leaked.end(), before), rep.leaked.end());
  EXPECT_NE(rep.detail.find("leaked"), std::string::npos);

  s.collect(before);
  EXPECT_TRUE(reclamation_audit(s, vm, vm.current_data()).passed);
  s.retain(vm.current_data());
  rep = reclamation_audit(s, vm, vm.current_data());
  EXPECT_FALSE(rep.passed);
  EXPECT_EQ(rep.miscounted.size(), 1u);
}
