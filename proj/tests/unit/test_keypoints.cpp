#include <gtest/gtest.h>

#include <deque>
#include <map>
#include <random>
#include <set>

#include <json.hpp>

#include "test_support.hpp"
#include "threadrecon/errors.hpp"
#include "threadrecon/keypoints.hpp"

using namespace threadrecon;

namespace {

// Depth field over `mask` with the given reliable pixels (R = 0.99, others 0.1)
// and depth from `depth(x, y)`.
template <typename F>
DepthField make_field(const Mask& mask, const Mask& reliable, F depth) {
  DepthField f;
  f.samples = Raster<DepthSample>(mask.width(), mask.height());
  f.left_mask = mask;
  f.pixels = mask_pixels(mask);
  for (const Pixel p : f.pixels) {
    DepthSample& s = f.samples(p);
    s.d_min = 10;
    s.d_next = 20;
    s.valid = true;
    s.depth = depth(p.x, p.y);
    s.reliability = reliable(p) ? 0.99 : 0.1;
  }
  return f;
}

DepthField make_field(const Mask& mask, const Mask& reliable) {
  return make_field(mask, reliable, [](int, int) { return 100.0; });
}

Mask band(int width, int height, int x0, int x1, int y0, int y1) {
  Mask m(width, height, 0);
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) m(x, y) = 1;
  return m;
}

Cluster block(int id, int x0, int x1, int y0, int y1, double depth = 100.0) {
  Cluster c;
  c.id = id;
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      c.pixels.push_back({x, y});
      c.points3d.emplace_back(x, y, depth);
      c.centroid += c.points3d.back();
    }
  c.centroid /= static_cast<double>(c.pixels.size());
  return c;
}

AdjacencyGraph graph_from_edges(int n, const std::vector<std::pair<int, int>>& edges) {
  AdjacencyGraph g;
  g.neighbors.resize(static_cast<std::size_t>(n));
  for (auto [a, b] : edges) {
    g.neighbors[static_cast<std::size_t>(a)].insert(b);
    g.neighbors[static_cast<std::size_t>(b)].insert(a);
  }
  return g;
}

// Independent adjacency oracle: clusters are adjacent when they touch directly
// or both touch the same 8-connected component of unclustered mask pixels.
std::set<std::pair<int, int>> oracle_edges(const std::vector<Cluster>& clusters, const Mask& mask) {
  Raster<int> label(mask.width(), mask.height(), -1);
  for (const auto& c : clusters)
    for (const Pixel p : c.pixels) label(p) = c.id;
  Raster<int> comp(mask.width(), mask.height(), -1);
  int ncomp = 0;
  for (const Pixel s : mask_pixels(mask)) {
    if (label(s) != -1 || comp(s) != -1) continue;
    std::deque<Pixel> q{s};
    comp(s) = ncomp;
    while (!q.empty()) {
      const Pixel p = q.front();
      q.pop_front();
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const Pixel n{p.x + dx, p.y + dy};
          if (!mask.contains(n) || !mask(n) || label(n) != -1 || comp(n) != -1) continue;
          comp(n) = ncomp;
          q.push_back(n);
        }
    }
    ++ncomp;
  }
  std::set<std::pair<int, int>> edges;
  std::map<int, std::set<int>> comp_clusters;
  for (const Pixel p : mask_pixels(mask)) {
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const Pixel n{p.x + dx, p.y + dy};
        if (!mask.contains(n) || !mask(n)) continue;
        const int a = label(p), b = label(n);
        if (a != -1 && b != -1 && a != b) edges.insert({std::min(a, b), std::max(a, b)});
        if (a == -1 && b != -1) comp_clusters[comp(p)].insert(b);
      }
  }
  for (const auto& [c, ids] : comp_clusters)
    for (int a : ids)
      for (int b : ids)
        if (a < b) edges.insert({a, b});
  return edges;
}

std::set<std::pair<int, int>> edges_of(const AdjacencyGraph& g) {
  std::set<std::pair<int, int>> out;
  for (std::size_t a = 0; a < g.size(); ++a)
    for (int b : g.neighbors[a])
      if (static_cast<int>(a) < b) out.insert({static_cast<int>(a), b});
  return out;
}

}  // namespace

TEST(Prune, StrictThreshold) {
  Mask m(3, 1, 1);
  DepthField f = make_field(m, m);
  f.samples(0, 0).reliability = 0.95;
  f.samples(1, 0).reliability = 0.9;
  f.samples(2, 0).reliability = 0.99;
  f.samples(2, 0).valid = false;
  const auto r = prune_reliable(f, MatchParams{});
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0], (Pixel{0, 0}));
}

TEST(Prune, AmbiguousFieldFails) {
  Mask m(4, 4, 1);
  DepthField f = make_field(m, m);
  const double r = reliability(100, 100, MatchParams{});
  for (const Pixel p : f.pixels) f.samples(p).reliability = r;
  try {
    prune_reliable(f, MatchParams{});
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), Stage::KeypointGraph);
    EXPECT_STREQ(e.what(), "no reliable pixels");
  }
}

TEST(Cluster, ManhattanTwoIsNeighbor) {
  Mask m(10, 10, 0);
  m(2, 2) = m(3, 3) = 1;  // Manhattan distance 2
  ClusterParams params;
  params.min_cluster_size = 1;
  const auto f = make_field(m, m);
  const auto c = cluster(prune_reliable(f, MatchParams{}), f, params);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c[0].pixels.size(), 2u);
}

TEST(Cluster, ManhattanThreeIsNotNeighbor) {
  Mask m(10, 10, 0);
  m(2, 2) = m(4, 3) = 1;  // Manhattan distance 3
  ClusterParams params;
  params.min_cluster_size = 1;
  const auto f = make_field(m, m);
  const auto c = cluster(prune_reliable(f, MatchParams{}), f, params);
  EXPECT_EQ(c.size(), 2u);
}

TEST(Cluster, SmallBlobDiscarded) {
  Mask m(10, 10, 0);
  m(1, 1) = m(2, 1) = m(1, 2) = m(2, 2) = 1;
  const auto f = make_field(m, m);
  try {
    cluster(prune_reliable(f, MatchParams{}), f, ClusterParams{});
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), Stage::KeypointGraph);
    EXPECT_STREQ(e.what(), "no keypoints");
  }
}

TEST(Cluster, PartitionSizeBoundsAndCentroids) {
  std::mt19937_64 rng(40);
  Mask m(60, 40, 0);
  threadrecon::testing::draw_polyline(m, {{3, 3}, {50, 10}, {20, 35}}, 1.5);
  Mask rel = m;
  std::bernoulli_distribution keep(0.85);
  for (auto& v : rel.data()) v = v && keep(rng);
  const auto f = make_field(m, rel, [](int x, int y) { return 80.0 + 0.5 * x + 0.25 * y; });
  const auto reliable = prune_reliable(f, MatchParams{});
  const ClusterParams params;
  const auto clusters = cluster(reliable, f, params);
  Raster<int> owner(60, 40, -1);
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    const auto& c = clusters[i];
    EXPECT_EQ(c.id, static_cast<int>(i));
    EXPECT_GE(static_cast<int>(c.pixels.size()), params.min_cluster_size);
    EXPECT_LE(static_cast<int>(c.pixels.size()), params.max_cluster_size);
    Vec3 mean = Vec3::Zero();
    for (const auto& p : c.points3d) mean += p;
    mean /= static_cast<double>(c.points3d.size());
    EXPECT_LE((mean - c.centroid).norm(), 1e-9);
    for (const Pixel p : c.pixels) {
      EXPECT_TRUE(rel(p));
      EXPECT_EQ(owner(p), -1) << "pixel in two clusters";
      owner(p) = c.id;
    }
  }
  // Determinism.
  const auto again = cluster(reliable, f, params);
  ASSERT_EQ(again.size(), clusters.size());
  for (std::size_t i = 0; i < again.size(); ++i) EXPECT_EQ(again[i].pixels, clusters[i].pixels);
}

TEST(Solidify, RadiusAndTieBreak) {
  Mask m(30, 5, 1);
  // Cluster 5 listed first: the lower id must still win contested pixels.
  std::vector<Cluster> clusters{block(5, 14, 14, 2, 2), block(2, 10, 10, 2, 2)};
  const auto before_points = clusters[0].points3d;
  ClusterParams params;
  const auto s = solidify(clusters, m, params);
  const auto labels = cluster_labels(s, 30, 5);
  EXPECT_EQ(labels(11, 2), 2);  // 1 px from cluster 2
  EXPECT_EQ(labels(12, 2), 2);  // 2 px from both: lower id wins
  EXPECT_EQ(labels(13, 2), 5);
  EXPECT_EQ(labels(16, 2), 5);
  EXPECT_EQ(labels(17, 2), -1);  // 3 px away
  EXPECT_EQ(labels(7, 2), -1);
  EXPECT_EQ(s[0].points3d, before_points);
}

TEST(Solidify, OnlySegmentedPixelsAbsorbed) {
  Mask m(10, 10, 0);
  m(5, 5) = m(6, 5) = 1;
  const auto s = solidify({block(0, 5, 5, 5, 5)}, m, ClusterParams{});
  EXPECT_EQ(s[0].pixels.size(), 2u);
}

TEST(Adjacency, ThreeClustersAlongThread) {
  const Mask m = band(60, 5, 0, 59, 1, 3);
  const std::vector<Cluster> clusters{block(0, 0, 9, 1, 3), block(1, 20, 29, 1, 3), block(2, 40, 49, 1, 3)};
  const auto g = build_adjacency(clusters, m);
  EXPECT_EQ(edges_of(g), (std::set<std::pair<int, int>>{{0, 1}, {1, 2}}));
  EXPECT_EQ(edges_of(g), oracle_edges(clusters, m));
}

TEST(Adjacency, SingleClusterAndGap) {
  const Mask one = band(20, 5, 0, 19, 1, 3);
  EXPECT_EQ(build_adjacency({block(0, 5, 9, 1, 3)}, one).edge_count(), 0u);
  Mask gap = band(40, 5, 0, 39, 1, 3);
  for (int y = 0; y < 5; ++y) gap(20, y) = 0;
  const auto g = build_adjacency({block(0, 0, 9, 1, 3), block(1, 30, 39, 1, 3)}, gap);
  EXPECT_EQ(g.edge_count(), 0u);
}

TEST(Adjacency, NeverCrossesForeignCluster) {
  const Mask m = band(60, 5, 0, 59, 1, 3);
  // Cluster 1 blocks the whole width, so 0 and 2 must not be linked.
  const std::vector<Cluster> clusters{block(0, 0, 9, 1, 3), block(1, 25, 26, 1, 3), block(2, 40, 49, 1, 3)};
  const auto g = build_adjacency(clusters, m);
  EXPECT_FALSE(g.connected(0, 2));
  EXPECT_TRUE(g.connected(0, 1));
  EXPECT_TRUE(g.connected(1, 2));
}

TEST(Adjacency, MatchesComponentOracleOnRandomThreads) {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> coord(4, 76);
  std::bernoulli_distribution keep(0.6);
  for (int trial = 0; trial < 15; ++trial) {
    Mask m(80, 80, 0);
    threadrecon::testing::draw_polyline(m, {{coord(rng), coord(rng)}, {coord(rng), coord(rng)},
                                            {coord(rng), coord(rng)}, {coord(rng), coord(rng)}},
                                        1.5);
    Mask rel = m;
    for (auto& v : rel.data()) v = v && keep(rng);
    const auto f = make_field(m, rel);
    std::vector<Cluster> clusters;
    try {
      clusters = cluster(prune_reliable(f, MatchParams{}), f, ClusterParams{});
    } catch (const StageError&) {
      continue;
    }
    clusters = solidify(std::move(clusters), m, ClusterParams{});
    EXPECT_EQ(edges_of(build_adjacency(clusters, m)), oracle_edges(clusters, m)) << "trial " << trial;
  }
}

TEST(Order, PathGraph) {
  const auto g = graph_from_edges(3, {{0, 1}, {1, 2}});
  const std::vector<Vec3> k{{0, 0, 0}, {1, 0, 0}, {2, 0, 0}};
  EXPECT_EQ(order_keypoints(g, k), (std::vector<int>{0, 1, 2}));
}

TEST(Order, ChordCycleStillCoversChain) {
  // a-b-c-d plus chord b-d; c is closer to b than d is.
  const auto g = graph_from_edges(4, {{0, 1}, {1, 2}, {2, 3}, {1, 3}});
  const std::vector<Vec3> k{{0, 0, 0}, {1, 0, 0}, {2, 0.2, 0}, {2.2, 0, 0}};
  const auto order = order_keypoints(g, k);
  EXPECT_EQ(order, (std::vector<int>{0, 1, 2, 3}));
}

TEST(Order, SmallestEndpointStartsAndReversalReverses) {
  const std::vector<std::pair<int, int>> edges{{0, 1}, {1, 2}, {2, 3}, {3, 4}};
  const std::vector<Vec3> k{{0, 0, 0}, {1, 0, 0}, {2, 0, 0}, {3, 0, 0}, {4, 0, 0}};
  EXPECT_EQ(order_keypoints(graph_from_edges(5, edges), k), (std::vector<int>{0, 1, 2, 3, 4}));
  // Relabel i -> 4 - i: the walk now starts from the other physical end.
  std::vector<std::pair<int, int>> rev;
  for (auto [a, b] : edges) rev.push_back({4 - a, 4 - b});
  const std::vector<Vec3> kr(k.rbegin(), k.rend());
  const auto order = order_keypoints(graph_from_edges(5, rev), kr);
  EXPECT_EQ(order, (std::vector<int>{0, 1, 2, 3, 4}));
  for (std::size_t i = 0; i < order.size(); ++i) EXPECT_EQ(kr[static_cast<std::size_t>(order[i])], k[4 - i]);
}

TEST(Order, ClosedLoopHasNoEndpoint) {
  const auto g = graph_from_edges(4, {{0, 1}, {1, 2}, {2, 3}, {3, 0}});
  const std::vector<Vec3> k(4, Vec3::Zero());
  try {
    order_keypoints(g, k);
    FAIL();
  } catch (const StageError& e) {
    EXPECT_STREQ(e.what(), "no endpoint found");
  }
}

TEST(Order, DisconnectedIsFragmented) {
  const auto g = graph_from_edges(4, {{0, 1}, {2, 3}});
  const std::vector<Vec3> k(4, Vec3::Zero());
  try {
    order_keypoints(g, k);
    FAIL();
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), Stage::KeypointGraph);
    EXPECT_STREQ(e.what(), "fragmented thread");
  }
}

TEST(Order, SingleKeypoint) {
  const auto g = graph_from_edges(1, {});
  EXPECT_EQ(order_keypoints(g, {Vec3::Zero()}), (std::vector<int>{0}));
}

TEST(Order, ConsecutiveKeypointsAreAdjacent) {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> coord(4, 76);
  for (int trial = 0; trial < 15; ++trial) {
    Mask m(80, 80, 0);
    threadrecon::testing::draw_polyline(m, {{coord(rng), coord(rng)}, {coord(rng), coord(rng)},
                                            {coord(rng), coord(rng)}},
                                        1.5);
    const auto f = make_field(m, m);
    try {
      auto chain = build_chain(cluster(prune_reliable(f, MatchParams{}), f, ClusterParams{}), m, ClusterParams{});
      std::set<int> seen;
      for (std::size_t i = 0; i < chain.cluster_of.size(); ++i) {
        EXPECT_TRUE(seen.insert(chain.cluster_of[i]).second);
        if (i > 0) {
          EXPECT_TRUE(chain.adjacency.connected(chain.cluster_of[i - 1], chain.cluster_of[i]));
        }
        EXPECT_LE((chain.keypoints[i] - chain.clusters[static_cast<std::size_t>(chain.cluster_of[i])].centroid).norm(),
                  1e-9);
      }
      EXPECT_EQ(chain.keypoints.size() + chain.dropped_keypoints, chain.clusters.size());
    } catch (const StageError&) {
      // Self-crossing strokes may legitimately form loops.
    }
  }
}

TEST(Endpoints, LongTailGetsKeypointAtTip) {
  // 3-px-wide thread along x in [0, 59]; reliable pixels only from x = 7.
  // Solidification reaches x = 5, leaving a 5x3 = 15 px tail at the front.
  const Mask m = band(60, 5, 0, 59, 1, 3);
  const Mask rel = band(60, 5, 7, 59, 1, 3);
  const auto f = make_field(m, rel);
  const ClusterParams params;
  auto chain = build_chain(cluster(prune_reliable(f, MatchParams{}), f, params), m, params);
  const auto before = chain.keypoints.size();
  const Vec3 first = chain.keypoints.front();
  const Vec3 last = chain.keypoints.back();
  chain = extend_endpoints(std::move(chain), m, f, params);
  ASSERT_EQ(chain.keypoints.size(), before + 1);
  // Either orientation is acceptable; find the extended end.
  const bool at_front = chain.cluster_of.front() == -1;
  const Vec3 tip = at_front ? chain.keypoints.front() : chain.keypoints.back();
  const Vec3 anchor = at_front ? first : last;
  EXPECT_EQ(tip.x(), 0.0);
  EXPECT_EQ(tip.z(), anchor.z());
  EXPECT_EQ((at_front ? chain.front_tail : chain.back_tail).size(), 15u);
}

TEST(Endpoints, FlushAndShortTailsUnchanged) {
  const Mask m = band(60, 5, 0, 59, 1, 3);
  const ClusterParams params;
  {
    const auto f = make_field(m, m);
    auto chain = build_chain(cluster(prune_reliable(f, MatchParams{}), f, params), m, params);
    const auto n = chain.keypoints.size();
    chain = extend_endpoints(std::move(chain), m, f, params);
    EXPECT_EQ(chain.keypoints.size(), n);
  }
  {
    // Reliable from x = 4: solidification reaches x = 2, tail of 2x3 = 6 px.
    const auto f = make_field(m, band(60, 5, 4, 59, 1, 3));
    auto chain = build_chain(cluster(prune_reliable(f, MatchParams{}), f, params), m, params);
    const auto n = chain.keypoints.size();
    chain = extend_endpoints(std::move(chain), m, f, params);
    EXPECT_EQ(chain.keypoints.size(), n);
  }
}

TEST(ChainJson, ContainsKeypointsWithOrder) {
  const Mask m = band(60, 5, 0, 59, 1, 3);
  const auto f = make_field(m, m, [](int x, int) { return 100.0 + x; });
  const ClusterParams params;
  const auto chain = build_chain(cluster(prune_reliable(f, MatchParams{}), f, params), m, params);
  const auto j = nlohmann::json::parse(chain_to_json(chain));
  ASSERT_EQ(j["keypoints"].size(), chain.keypoints.size());
  for (std::size_t i = 0; i < chain.keypoints.size(); ++i) {
    EXPECT_EQ(j["keypoints"][i][3].get<int>(), static_cast<int>(i) + 1);
    EXPECT_DOUBLE_EQ(j["keypoints"][i][2].get<double>(), chain.keypoints[i].z());
  }
  EXPECT_EQ(j["clusters"].size(), chain.clusters.size());
}

TEST(ClusterParams, Validation) {
  ClusterParams p;
  EXPECT_NO_THROW(p.validate());
  p.min_cluster_size = 60;
  EXPECT_THROW(p.validate(), ConfigError);
  p = ClusterParams{};
  p.min_cluster_size = 0;
  EXPECT_THROW(p.validate(), ConfigError);
}
