// Metric-graph analog of the codimension-1 counterexample: two graphs with
// a reflection-symmetric core and four gadgets of distinct cycle rank,
// attached in arrangements that no graph isomorphism can relate, yet whose
// distance-difference data restricted to the marked cycle agree as exact
// integer multisets.
#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "distdiff/core.hpp"

namespace distdiff {

struct GraphManifold {
  struct Edge {
    std::size_t u, v;
    std::int64_t w;
  };
  std::size_t vertex_count = 0;
  std::vector<Edge> edges;
  std::vector<std::size_t> ftilde;         // the marked cycle, z_0 first
  std::vector<std::ptrdiff_t> reflection;  // involution on the core; -1 off it
  std::vector<std::string> labels;

  std::size_t add_vertex(const std::string& name) {
    labels.push_back(name);
    reflection.push_back(-1);
    return vertex_count++;
  }
  void add_edge(std::size_t u, std::size_t v, std::int64_t w) {
    require(w > 0, ErrorCode::InvalidRequest, "edge weights must be positive");
    edges.push_back({u, v, w});
  }
  std::vector<std::vector<std::pair<std::size_t, std::int64_t>>> adjacency()
      const {
    std::vector<std::vector<std::pair<std::size_t, std::int64_t>>> adj(
        vertex_count);
    for (const auto& e : edges) {
      adj[e.u].push_back({e.v, e.w});
      adj[e.v].push_back({e.u, e.w});
    }
    return adj;
  }
};

inline constexpr std::int64_t kUnreachable =
    std::numeric_limits<std::int64_t>::max() / 4;

/// Exact integer Dijkstra; optionally records predecessor vertices.
inline std::vector<std::int64_t> graph_distances(
    const GraphManifold& g, std::size_t src,
    std::vector<std::size_t>* parents = nullptr) {
  auto adj = g.adjacency();
  std::vector<std::int64_t> dist(g.vertex_count, kUnreachable);
  if (parents) parents->assign(g.vertex_count, std::size_t(-1));
  std::vector<bool> done(g.vertex_count, false);
  dist[src] = 0;
  for (;;) {
    std::size_t u = g.vertex_count;
    std::int64_t best = kUnreachable;
    for (std::size_t v = 0; v < g.vertex_count; ++v)
      if (!done[v] && dist[v] < best) {
        best = dist[v];
        u = v;
      }
    if (u == g.vertex_count) break;
    done[u] = true;
    for (auto [v, w] : adj[u])
      if (dist[u] + w < dist[v]) {
        dist[v] = dist[u] + w;
        if (parents) (*parents)[v] = u;
      }
  }
  return dist;
}

/// Centered distance-difference vector over the marked cycle for vertex x.
inline std::vector<std::int64_t> restricted_vector(const GraphManifold& g,
                                                   std::size_t x) {
  auto dist = graph_distances(g, x);
  std::vector<std::int64_t> out;
  out.reserve(g.ftilde.size());
  std::int64_t base = dist[g.ftilde[0]];
  require(base < kUnreachable, ErrorCode::InvalidRequest,
          "restricted_vector: graph not connected");
  for (std::size_t z : g.ftilde) out.push_back(dist[z] - base);
  return out;
}

/// The unindexed multiset of centered vectors, one per non-marked vertex,
/// sorted lexicographically for exact comparison.
inline std::vector<std::vector<std::int64_t>> restricted_dataset(
    const GraphManifold& g) {
  std::vector<std::vector<std::int64_t>> out;
  std::vector<bool> marked(g.vertex_count, false);
  for (std::size_t z : g.ftilde) marked[z] = true;
  for (std::size_t x = 0; x < g.vertex_count; ++x)
    if (!marked[x]) out.push_back(restricted_vector(g, x));
  std::sort(out.begin(), out.end());
  return out;
}

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

struct ExampleGraphOptions {
  bool identical_gadgets = false;  // degenerate control
  bool enforce_separation = true;  // require L > max gadget diameter + 10
};

namespace detail {

/// Gadgets of cycle rank 0..3, six vertices each, with distinct internal
/// anchor-to-far distances so through-gadget transit lengths differ.
/// Returns {anchor, far} local indices; vertices appended to g.
inline std::pair<std::size_t, std::size_t> attach_gadget(
    GraphManifold& g, int rank, const std::string& tag) {
  std::size_t v[6];
  const char* names = "abcdef";
  for (int i = 0; i < 6; ++i)
    v[i] = g.add_vertex(tag + "." + names[i]);
  auto E = [&](int a, int b, std::int64_t w = 1) { g.add_edge(v[a], v[b], w); };
  switch (rank) {
    case 0:  // path: rank 0, d(a,f) = 5
      E(0, 1);
      E(1, 2);
      E(2, 3);
      E(3, 4);
      E(4, 5);
      break;
    case 1:  // triangle + tail: rank 1, d(a,f) = 4
      E(0, 1);
      E(1, 2);
      E(2, 0);
      E(2, 3);
      E(3, 4);
      E(4, 5);
      break;
    case 2:  // two triangles sharing a vertex + pendant: rank 2, d(a,f) = 3
      E(0, 1);
      E(1, 2);
      E(2, 0);
      E(2, 3);
      E(3, 4);
      E(4, 2);
      E(4, 5);
      break;
    case 3:  // K4 + two pendants on one vertex: rank 3, d(a,f) = 2
      E(0, 1);
      E(0, 2);
      E(0, 3);
      E(1, 2);
      E(1, 3);
      E(2, 3);
      E(3, 4);
      E(3, 5);
      break;
    default:
      fail(ErrorCode::InvalidRequest, "attach_gadget: rank out of range");
  }
  return {v[0], v[5]};
}

inline int gadget_diameter(int rank) {
  // computed from the fixed templates above
  switch (rank) {
    case 0: return 5;
    case 1: return 4;
    case 2: return 3;
    case 3: return 2;
  }
  return 5;
}

}  // namespace detail

/// Two glued graphs sharing the reflection-symmetric core. G1 attaches the
/// rank-(0,1,2,3) gadgets at (TR, BR, TL, BL); G2 swaps the left pair to
/// (TR:0, BR:1, TL:3, BL:2). The over-the-top reach edges carry weight
/// max(1, 2L - 8): far above any competing route when the separation
/// condition holds, and the designed leak channel when it does not.
inline std::pair<GraphManifold, GraphManifold> build_example_graphs(
    std::int64_t L, ExampleGraphOptions opt = {}) {
  int max_diam = 0;
  for (int r = 0; r < 4; ++r)
    max_diam = std::max(max_diam, detail::gadget_diameter(r));
  if (opt.enforce_separation)
    require(L > max_diam + 10, ErrorCode::SeparationViolated,
            "build_example_graphs: L must exceed the max gadget diameter "
            "plus 10");
  require(L >= 2, ErrorCode::InvalidRequest, "build_example_graphs: L >= 2");

  auto build = [&](const std::array<int, 4>& arrangement) {
    // arrangement = ranks at {TR, BR, TL, BL}
    GraphManifold g;
    std::size_t f[8];
    for (int i = 0; i < 8; ++i)
      f[i] = g.add_vertex("f" + std::to_string(i));
    for (int i = 0; i < 8; ++i) g.add_edge(f[i], f[(i + 1) % 8], 1);
    g.ftilde.assign(f, f + 8);

    // right arms enter the cycle at f1, left arms at f5, so routes through
    // opposite arms shift the profile non-uniformly
    std::size_t k_tr = g.add_vertex("k_TR");
    std::size_t k_br = g.add_vertex("k_BR");
    std::size_t k_tl = g.add_vertex("k_TL");
    std::size_t k_bl = g.add_vertex("k_BL");
    g.add_edge(k_tr, f[1], 2);
    g.add_edge(k_br, f[1], 2);
    g.add_edge(k_tl, f[5], 2);
    g.add_edge(k_bl, f[5], 2);
    std::size_t p_tr = g.add_vertex("P_TR");
    std::size_t p_br = g.add_vertex("P_BR");
    std::size_t p_tl = g.add_vertex("P_TL");
    std::size_t p_bl = g.add_vertex("P_BL");
    g.add_edge(k_tr, p_tr, L);
    g.add_edge(k_br, p_br, L);
    g.add_edge(k_tl, p_tl, L);
    g.add_edge(k_bl, p_bl, L);

    // the reflection: swap top and bottom, fix the cycle pointwise
    for (int i = 0; i < 8; ++i) g.reflection[f[i]] = std::ptrdiff_t(f[i]);
    g.reflection[k_tr] = std::ptrdiff_t(k_br);
    g.reflection[k_br] = std::ptrdiff_t(k_tr);
    g.reflection[k_tl] = std::ptrdiff_t(k_bl);
    g.reflection[k_bl] = std::ptrdiff_t(k_tl);
    g.reflection[p_tr] = std::ptrdiff_t(p_br);
    g.reflection[p_br] = std::ptrdiff_t(p_tr);
    g.reflection[p_tl] = std::ptrdiff_t(p_bl);
    g.reflection[p_bl] = std::ptrdiff_t(p_tl);

    const char* port_tag[4] = {"TR", "BR", "TL", "BL"};
    std::size_t ports[4] = {p_tr, p_br, p_tl, p_bl};
    std::size_t far_v[4];
    for (int s = 0; s < 4; ++s) {
      auto [anchor, far] = detail::attach_gadget(
          g, arrangement[s], std::string(port_tag[s]) + ":g" +
                                 std::to_string(arrangement[s]));
      g.add_edge(ports[s], anchor, 1);
      far_v[s] = far;
    }
    std::int64_t w_top = std::max<std::int64_t>(1, 2 * L - 8);
    g.add_edge(far_v[0], far_v[2], w_top);  // TR <-> TL over the top
    g.add_edge(far_v[1], far_v[3], w_top);  // BR <-> BL underneath
    return g;
  };

  std::array<int, 4> a1{0, 1, 2, 3};
  std::array<int, 4> a2{0, 1, 3, 2};
  if (opt.identical_gadgets) {
    a1 = {1, 1, 1, 1};
    a2 = {1, 1, 1, 1};
  }
  return {build(a1), build(a2)};
}

// ---------------------------------------------------------------------------
// Exact isomorphism decision (weighted graphs, a few dozen vertices)
// ---------------------------------------------------------------------------

namespace detail {

// Iterated refinement: color <- (color, sorted multiset of (w, nbr color)).
inline std::vector<std::size_t> stable_colors(const GraphManifold& g) {
  auto adj = g.adjacency();
  std::vector<std::size_t> color(g.vertex_count, 0);
  for (std::size_t round = 0; round < g.vertex_count; ++round) {
    std::map<std::pair<std::size_t,
                       std::vector<std::pair<std::int64_t, std::size_t>>>,
             std::size_t>
        palette;
    std::vector<std::size_t> next(g.vertex_count);
    for (std::size_t v = 0; v < g.vertex_count; ++v) {
      std::vector<std::pair<std::int64_t, std::size_t>> sig;
      for (auto [u, w] : adj[v]) sig.push_back({w, color[u]});
      std::sort(sig.begin(), sig.end());
      auto key = std::make_pair(color[v], std::move(sig));
      auto it = palette.find(key);
      if (it == palette.end())
        it = palette.emplace(std::move(key), palette.size()).first;
      next[v] = it->second;
    }
    if (next == color) break;
    color = std::move(next);
  }
  return color;
}

struct IsoSearch {
  const GraphManifold *g1, *g2;
  std::vector<std::vector<std::pair<std::size_t, std::int64_t>>> adj1, adj2;
  std::vector<std::size_t> c1, c2;
  std::vector<std::size_t> map12;
  std::vector<bool> used2;

  bool compatible(std::size_t v1, std::size_t v2) const {
    if (c1[v1] != c2[v2]) return false;
    // every already-mapped neighbor must correspond with equal weight
    for (auto [u, w] : adj1[v1]) {
      if (map12[u] == std::size_t(-1)) continue;
      bool found = false;
      for (auto [x, w2] : adj2[v2])
        if (x == map12[u] && w2 == w) {
          found = true;
          break;
        }
      if (!found) return false;
    }
    // and the reverse direction for mapped neighbors of v2
    for (auto [x, w] : adj2[v2]) {
      auto it = std::find(map12.begin(), map12.end(), x);
      if (it == map12.end()) continue;
      std::size_t u = std::size_t(it - map12.begin());
      bool found = false;
      for (auto [y, w1] : adj1[u])
        if (y == v1 && w1 == w) {
          found = true;
          break;
        }
      if (!found) return false;
    }
    return true;
  }

  bool extend(std::size_t v1) {
    if (v1 == g1->vertex_count) return true;
    for (std::size_t v2 = 0; v2 < g2->vertex_count; ++v2) {
      if (used2[v2] || !compatible(v1, v2)) continue;
      map12[v1] = v2;
      used2[v2] = true;
      if (extend(v1 + 1)) return true;
      map12[v1] = std::size_t(-1);
      used2[v2] = false;
    }
    return false;
  }
};

}  // namespace detail

/// Exact isomorphism test: color refinement first (different stable color
/// multisets certify non-isomorphism), then exhaustive backtracking over
/// color-compatible assignments.
inline bool graphs_isomorphic(const GraphManifold& g1,
                              const GraphManifold& g2) {
  if (g1.vertex_count != g2.vertex_count ||
      g1.edges.size() != g2.edges.size())
    return false;
  auto c1 = detail::stable_colors(g1);
  auto c2 = detail::stable_colors(g2);
  // same palette construction on both: compare multisets of colors; the
  // palettes are keyed independently, so refine over the disjoint union
  {
    GraphManifold both;
    both.vertex_count = g1.vertex_count + g2.vertex_count;
    both.reflection.assign(both.vertex_count, -1);
    both.labels.assign(both.vertex_count, "");
    both.edges = g1.edges;
    for (const auto& e : g2.edges)
      both.edges.push_back(
          {e.u + g1.vertex_count, e.v + g1.vertex_count, e.w});
    auto c = detail::stable_colors(both);
    std::vector<std::size_t> m1(c.begin(), c.begin() + g1.vertex_count);
    std::vector<std::size_t> m2(c.begin() + g1.vertex_count, c.end());
    c1 = m1;
    c2 = m2;
    std::sort(m1.begin(), m1.end());
    std::sort(m2.begin(), m2.end());
    if (m1 != m2) return false;
  }
  detail::IsoSearch search;
  search.g1 = &g1;
  search.g2 = &g2;
  search.adj1 = g1.adjacency();
  search.adj2 = g2.adjacency();
  search.c1 = c1;
  search.c2 = c2;
  search.map12.assign(g1.vertex_count, std::size_t(-1));
  search.used2.assign(g2.vertex_count, false);
  return search.extend(0);
}

// ---------------------------------------------------------------------------
// The counterexample assertion
// ---------------------------------------------------------------------------

struct CounterexampleReport {
  bool datasets_equal = false;
  bool isomorphic = true;
  bool pass() const { return datasets_equal && !isomorphic; }
};

/// (a) restricted datasets equal as exact multisets, (b) graphs not
/// isomorphic. Throws ConstructionBroken unless both hold, with the report
/// available through the exception-free variant below.
inline CounterexampleReport check_counterexample(const GraphManifold& g1,
                                                 const GraphManifold& g2) {
  CounterexampleReport rep;
  rep.datasets_equal = restricted_dataset(g1) == restricted_dataset(g2);
  rep.isomorphic = graphs_isomorphic(g1, g2);
  return rep;
}

inline CounterexampleReport assert_counterexample(const GraphManifold& g1,
                                                  const GraphManifold& g2) {
  CounterexampleReport rep = check_counterexample(g1, g2);
  require(rep.datasets_equal, ErrorCode::ConstructionBroken,
          "counterexample: restricted datasets differ (leaking shortest "
          "paths?)");
  require(!rep.isomorphic, ErrorCode::ConstructionBroken,
          "counterexample: graphs are isomorphic (degenerate construction)");
  return rep;
}

/// Edge list as CSV (u, v, weight, labels).
inline std::string graph_to_csv(const GraphManifold& g) {
  std::ostringstream out;
  out << "u,v,weight,u_label,v_label\n";
  for (const auto& e : g.edges)
    out << e.u << ',' << e.v << ',' << e.w << ',' << g.labels[e.u] << ','
        << g.labels[e.v] << '\n';
  return out.str();
}

}  // namespace distdiff
