#pragma once

// Persistent augmented treap over the tuple store.
//
// Node layout (arity 5): [left, right, key, value, subtree sum]. Priorities
// are a hash of the key, so the shape is a function of the key set alone.
// Every update copies the nodes on its path and shares the rest; existing
// tuples are never modified. Sums wrap modulo 2^64.

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "swvm/tuple_store.hpp"

namespace swvm {

/// Root of one tree version; null for the empty tree.
using TreeRoot = TupleHandle;

class AugmentedTreap {
 public:
  using Key = std::int64_t;
  using Value = std::int64_t;

  enum Field : std::size_t { kLeft = 0, kRight = 1, kKey = 2, kValue = 3, kSum = 4, kArity = 5 };

  explicit AugmentedTreap(TupleStore& store) : store_(store) {
    if (store.arity() < kArity) throw ContractViolation("tree nodes need arity >= 5");
  }

  static std::uint64_t priority(Key k) noexcept {
    std::uint64_t z = static_cast<std::uint64_t>(k) + 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  TreeRoot insert(TreeRoot t, Key k, Value v, CreationLog& log) {
    if (t.is_null()) return node(TreeRoot::null(), TreeRoot::null(), k, v, log);
    const Key tk = key(t);
    if (tk == k) return node(left(t), right(t), k, v, log);
    if (above(k, tk)) {
      auto [l, r] = split(t, k, log);
      return node(l, r, k, v, log);
    }
    if (k < tk) return node(insert(left(t), k, v, log), right(t), tk, value(t), log);
    return node(left(t), insert(right(t), k, v, log), tk, value(t), log);
  }

  /// Returns t itself when k is absent. A changed, non-empty result always
  /// has a root created in log.
  TreeRoot erase(TreeRoot t, Key k, CreationLog& log) {
    const TreeRoot r = erase_path(t, k, log);
    if (r.is_null() || r == t || (!log.empty() && log.created().back() == r)) return r;
    return node(left(r), right(r), key(r), value(r), log);
  }

  std::optional<Value> lookup(TreeRoot t, Key k) const {
    while (!t.is_null()) {
      const Key tk = key(t);
      if (k == tk) return value(t);
      t = k < tk ? left(t) : right(t);
    }
    return std::nullopt;
  }

  /// Sum of values with lo <= key <= hi.
  Value range_sum(TreeRoot t, Key lo, Key hi) const {
    if (lo > hi || t.is_null()) return 0;
    return wrap_sub(sum_at_most(t, hi), sum_below(t, lo));
  }

  Value total(TreeRoot t) const { return t.is_null() ? 0 : store_.nth(t, kSum).as_prim(); }

  /// Builds the treap of the given pairs (last duplicate wins) bottom-up.
  TreeRoot build(std::vector<std::pair<Key, Value>> pairs, CreationLog& log) {
    std::stable_sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<std::pair<Key, Value>> uniq;
    uniq.reserve(pairs.size());
    for (const auto& p : pairs) {
      if (!uniq.empty() && uniq.back().first == p.first)
        uniq.back().second = p.second;
      else
        uniq.push_back(p);
    }
    const std::size_t n = uniq.size();
    if (n == 0) return TreeRoot::null();

    // Cartesian tree on priorities with a monotone stack.
    constexpr std::size_t none = static_cast<std::size_t>(-1);
    std::vector<std::size_t> lc(n, none), rc(n, none), stack;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t last = none;
      while (!stack.empty() && above(uniq[i].first, uniq[stack.back()].first)) {
        last = stack.back();
        stack.pop_back();
      }
      lc[i] = last;
      if (!stack.empty()) rc[stack.back()] = i;
      stack.push_back(i);
    }
    const std::size_t root = stack.front();

    // Post-order creation so children exist before parents.
    std::vector<TreeRoot> made(n);
    std::vector<std::pair<std::size_t, bool>> todo{{root, false}};
    while (!todo.empty()) {
      auto [i, expanded] = todo.back();
      todo.pop_back();
      if (!expanded) {
        todo.push_back({i, true});
        if (rc[i] != none) todo.push_back({rc[i], false});
        if (lc[i] != none) todo.push_back({lc[i], false});
        continue;
      }
      made[i] = node(lc[i] == none ? TreeRoot::null() : made[lc[i]],
                     rc[i] == none ? TreeRoot::null() : made[rc[i]], uniq[i].first, uniq[i].second, log);
    }
    return made[root];
  }

  /// In-order visit of (key, value).
  void for_each(TreeRoot t, const std::function<void(Key, Value)>& f) const {
    std::vector<TreeRoot> stack;
    while (!t.is_null() || !stack.empty()) {
      while (!t.is_null()) {
        stack.push_back(t);
        t = left(t);
      }
      t = stack.back();
      stack.pop_back();
      f(key(t), value(t));
      t = right(t);
    }
  }

  std::size_t size(TreeRoot t) const {
    std::size_t n = 0;
    for_each(t, [&](Key, Value) { ++n; });
    return n;
  }

  std::size_t height(TreeRoot t) const {
    if (t.is_null()) return 0;
    return 1 + std::max(height(left(t)), height(right(t)));
  }

  /// Checks key order, heap order on priorities, and every stored sum.
  bool validate(TreeRoot t) const { return check(t, nullptr, nullptr).has_value(); }

  TreeRoot left(TreeRoot t) const { return store_.nth(t, kLeft).as_ref(); }
  TreeRoot right(TreeRoot t) const { return store_.nth(t, kRight).as_ref(); }
  Key key(TreeRoot t) const { return store_.nth(t, kKey).as_prim(); }
  Value value(TreeRoot t) const { return store_.nth(t, kValue).as_prim(); }

  TupleStore& store() const noexcept { return store_; }

 private:
  TreeRoot erase_path(TreeRoot t, Key k, CreationLog& log) {
    if (t.is_null()) return t;
    const Key tk = key(t);
    if (k == tk) return join(left(t), right(t), log);
    if (k < tk) {
      const TreeRoot l = left(t);
      const TreeRoot nl = erase_path(l, k, log);
      return nl == l ? t : node(nl, right(t), tk, value(t), log);
    }
    const TreeRoot r = right(t);
    const TreeRoot nr = erase_path(r, k, log);
    return nr == r ? t : node(left(t), nr, tk, value(t), log);
  }

  static Value wrap_add(Value a, Value b) {
    return static_cast<Value>(static_cast<std::uint64_t>(a) + static_cast<std::uint64_t>(b));
  }
  static Value wrap_sub(Value a, Value b) {
    return static_cast<Value>(static_cast<std::uint64_t>(a) - static_cast<std::uint64_t>(b));
  }

  // Heap order: a sits above b.
  static bool above(Key a, Key b) noexcept {
    const std::uint64_t pa = priority(a), pb = priority(b);
    return pa != pb ? pa > pb : a > b;
  }

  TreeRoot node(TreeRoot l, TreeRoot r, Key k, Value v, CreationLog& log) {
    const Value s = wrap_add(v, wrap_add(total(l), total(r)));
    const TaggedValue fields[kArity] = {TaggedValue::ref(l), TaggedValue::ref(r), TaggedValue::prim(k),
                                        TaggedValue::prim(v), TaggedValue::prim(s)};
    if (store_.arity() == kArity) return store_.tuple(fields, log);
    std::vector<TaggedValue> padded(fields, fields + kArity);
    padded.resize(store_.arity());
    return store_.tuple(padded, log);
  }

  // (keys < k, keys > k)
  std::pair<TreeRoot, TreeRoot> split(TreeRoot t, Key k, CreationLog& log) {
    if (t.is_null()) return {t, t};
    const Key tk = key(t);
    if (tk == k) return {left(t), right(t)};
    if (tk < k) {
      auto [l, r] = split(right(t), k, log);
      return {node(left(t), l, tk, value(t), log), r};
    }
    auto [l, r] = split(left(t), k, log);
    return {l, node(r, right(t), tk, value(t), log)};
  }

  // every key of a below every key of b
  TreeRoot join(TreeRoot a, TreeRoot b, CreationLog& log) {
    if (a.is_null()) return b;
    if (b.is_null()) return a;
    if (above(key(a), key(b))) return node(left(a), join(right(a), b, log), key(a), value(a), log);
    return node(join(a, left(b), log), right(b), key(b), value(b), log);
  }

  Value sum_at_most(TreeRoot t, Key x) const {
    Value acc = 0;
    while (!t.is_null()) {
      if (key(t) <= x) {
        acc = wrap_add(acc, wrap_add(total(left(t)), value(t)));
        t = right(t);
      } else {
        t = left(t);
      }
    }
    return acc;
  }

  Value sum_below(TreeRoot t, Key x) const {
    Value acc = 0;
    while (!t.is_null()) {
      if (key(t) < x) {
        acc = wrap_add(acc, wrap_add(total(left(t)), value(t)));
        t = right(t);
      } else {
        t = left(t);
      }
    }
    return acc;
  }

  // Returns the recomputed sum, or nullopt on any violation.
  std::optional<Value> check(TreeRoot t, const Key* lo, const Key* hi) const {
    if (t.is_null()) return Value{0};
    const Key k = key(t);
    if ((lo && k <= *lo) || (hi && k >= *hi)) return std::nullopt;
    const TreeRoot l = left(t), r = right(t);
    if ((!l.is_null() && above(key(l), k)) || (!r.is_null() && above(key(r), k))) return std::nullopt;
    const auto ls = check(l, lo, &k);
    const auto rs = check(r, &k, hi);
    if (!ls || !rs) return std::nullopt;
    const Value s = wrap_add(value(t), wrap_add(*ls, *rs));
    if (s != total(t)) return std::nullopt;
    return s;
  }

  TupleStore& store_;
};

}  // namespace swvm
