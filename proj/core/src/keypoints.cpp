#include "threadrecon/keypoints.hpp"

#include <algorithm>
#include <cstdlib>
#include <deque>
#include <limits>

#include <json.hpp>

#include "threadrecon/errors.hpp"

namespace threadrecon {

void ClusterParams::validate() const {
  if (min_cluster_size < 1) throw ConfigError("min_cluster_size must be >= 1");
  if (max_cluster_size < min_cluster_size)
    throw ConfigError("max_cluster_size must be >= min_cluster_size");
  if (neighbor_manhattan_radius < 1) throw ConfigError("neighbor_manhattan_radius must be >= 1");
  if (solidify_radius < 0) throw ConfigError("solidify_radius must be >= 0");
  if (endpoint_unreached_min < 1) throw ConfigError("endpoint_unreached_min must be >= 1");
}

std::size_t AdjacencyGraph::edge_count() const {
  std::size_t n = 0;
  for (const auto& nb : neighbors) n += nb.size();
  return n / 2;
}

std::vector<Pixel> prune_reliable(const DepthField& field, const MatchParams& params) {
  std::vector<Pixel> out;
  for (const Pixel p : field.pixels) {
    const auto& s = field.at(p);
    if (s.valid && s.reliability > params.reliability_threshold) out.push_back(p);
  }
  if (out.empty()) throw StageError(Stage::KeypointGraph, "no reliable pixels");
  return out;
}

std::vector<Cluster> cluster(const std::vector<Pixel>& reliable, const DepthField& field,
                             const ClusterParams& params) {
  params.validate();
  const int w = field.width(), h = field.height();
  Raster<std::uint8_t> is_reliable(w, h, 0), explored(w, h, 0), queued(w, h, 0);
  for (const Pixel p : reliable) is_reliable(p) = 1;

  const int r = params.neighbor_manhattan_radius;
  std::vector<Pixel> offsets;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx)
      if ((dx || dy) && std::abs(dx) + std::abs(dy) <= r) offsets.push_back({dx, dy});

  std::vector<Cluster> clusters;
  for (const Pixel seed : reliable) {
    if (explored(seed)) continue;
    std::deque<Pixel> frontier{seed};
    std::vector<Pixel> touched{seed};
    std::vector<Pixel> members;
    queued(seed) = 1;
    while (!frontier.empty() && static_cast<int>(members.size()) < params.max_cluster_size) {
      const Pixel p = frontier.front();
      frontier.pop_front();
      explored(p) = 1;
      members.push_back(p);
      for (const Pixel o : offsets) {
        const Pixel q{p.x + o.x, p.y + o.y};
        if (!is_reliable.contains(q) || !is_reliable(q) || explored(q) || queued(q)) continue;
        queued(q) = 1;
        touched.push_back(q);
        frontier.push_back(q);
      }
    }
    for (const Pixel p : touched) queued(p) = 0;
    if (static_cast<int>(members.size()) < params.min_cluster_size) continue;

    Cluster c;
    c.id = static_cast<int>(clusters.size());
    c.pixels = members;
    for (const Pixel p : members) {
      c.points3d.emplace_back(p.x, p.y, field.at(p).depth);
      c.centroid += c.points3d.back();
    }
    c.centroid /= static_cast<double>(members.size());
    clusters.push_back(std::move(c));
  }
  if (clusters.empty()) throw StageError(Stage::KeypointGraph, "no keypoints");
  return clusters;
}

Raster<int> cluster_labels(const std::vector<Cluster>& clusters, int width, int height) {
  Raster<int> labels(width, height, -1);
  for (const auto& c : clusters)
    for (const Pixel p : c.pixels) labels(p) = c.id;
  return labels;
}

std::vector<Cluster> solidify(std::vector<Cluster> clusters, const Mask& segmented,
                              const ClusterParams& params) {
  auto labels = cluster_labels(clusters, segmented.width(), segmented.height());
  const int r = params.solidify_radius;
  std::vector<Cluster*> by_id;
  for (auto& c : clusters) by_id.push_back(&c);
  std::sort(by_id.begin(), by_id.end(), [](auto* a, auto* b) { return a->id < b->id; });
  for (Cluster* c : by_id) {
    const std::size_t core = c->pixels.size();
    for (std::size_t i = 0; i < core; ++i) {
      const Pixel p = c->pixels[i];
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          const Pixel q{p.x + dx, p.y + dy};
          if (!segmented.contains(q) || !segmented(q) || labels(q) != -1) continue;
          labels(q) = c->id;
          c->pixels.push_back(q);
        }
    }
  }
  return clusters;
}

Reach reach_from_cluster(const Cluster& c, const Raster<int>& labels, const Mask& segmented) {
  Reach out;
  Raster<std::uint8_t> visited(segmented.width(), segmented.height(), 0);
  std::deque<Pixel> frontier;
  for (const Pixel p : c.pixels) {
    visited(p) = 1;
    frontier.push_back(p);
  }
  while (!frontier.empty()) {
    const Pixel p = frontier.front();
    frontier.pop_front();
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        if (!dx && !dy) continue;
        const Pixel q{p.x + dx, p.y + dy};
        if (!segmented.contains(q) || !segmented(q) || visited(q)) continue;
        const int lab = labels(q);
        if (lab != -1 && lab != c.id) {
          out.touched.insert(lab);
          continue;
        }
        visited(q) = 1;
        if (lab == -1) out.unclustered.push_back(q);
        frontier.push_back(q);
      }
  }
  return out;
}

AdjacencyGraph build_adjacency(const std::vector<Cluster>& clusters, const Mask& segmented) {
  AdjacencyGraph g;
  g.neighbors.resize(clusters.size());
  const auto labels = cluster_labels(clusters, segmented.width(), segmented.height());
  for (const auto& c : clusters) {
    for (const int other : reach_from_cluster(c, labels, segmented).touched) {
      g.neighbors[static_cast<std::size_t>(c.id)].insert(other);
      g.neighbors[static_cast<std::size_t>(other)].insert(c.id);
    }
  }
  return g;
}

std::vector<int> order_keypoints(const AdjacencyGraph& graph, const std::vector<Vec3>& keypoints) {
  const int n = static_cast<int>(graph.size());
  if (n == 0) throw StageError(Stage::KeypointGraph, "no keypoints");
  if (n == 1) return {0};

  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  std::deque<int> q{0};
  seen[0] = 1;
  int reached = 1;
  while (!q.empty()) {
    const int k = q.front();
    q.pop_front();
    for (int nb : graph.neighbors[static_cast<std::size_t>(k)])
      if (!seen[static_cast<std::size_t>(nb)]) {
        seen[static_cast<std::size_t>(nb)] = 1;
        ++reached;
        q.push_back(nb);
      }
  }
  if (reached != n) throw StageError(Stage::KeypointGraph, "fragmented thread");

  int start = -1;
  for (int k = 0; k < n && start < 0; ++k)
    if (graph.degree(k) == 1) start = k;
  if (start < 0) throw StageError(Stage::KeypointGraph, "no endpoint found");

  std::vector<char> visited(static_cast<std::size_t>(n), 0);
  std::vector<int> order{start};
  visited[static_cast<std::size_t>(start)] = 1;
  int current = start;
  for (;;) {
    int best = -1;
    double best_dist = std::numeric_limits<double>::infinity();
    for (int nb : graph.neighbors[static_cast<std::size_t>(current)]) {
      if (visited[static_cast<std::size_t>(nb)]) continue;
      const double dist = (keypoints[static_cast<std::size_t>(nb)] -
                           keypoints[static_cast<std::size_t>(current)]).norm();
      if (dist < best_dist) {
        best_dist = dist;
        best = nb;
      }
    }
    if (best < 0) break;
    visited[static_cast<std::size_t>(best)] = 1;
    order.push_back(best);
    current = best;
  }
  return order;
}

KeypointChain build_chain(std::vector<Cluster> clusters, const Mask& segmented,
                          const ClusterParams& params) {
  KeypointChain chain;
  chain.clusters = solidify(std::move(clusters), segmented, params);
  chain.adjacency = build_adjacency(chain.clusters, segmented);
  std::vector<Vec3> centroids;
  for (const auto& c : chain.clusters) centroids.push_back(c.centroid);
  const auto order = order_keypoints(chain.adjacency, centroids);
  for (int id : order) {
    chain.keypoints.push_back(centroids[static_cast<std::size_t>(id)]);
    chain.cluster_of.push_back(id);
  }
  chain.dropped_keypoints = chain.clusters.size() - order.size();
  return chain;
}

namespace {

// Unclaimed pixels behind a terminal keypoint that none of its neighbors reach,
// and the farthest of them from the keypoint in the image plane.
std::vector<Pixel> unreached_tail(const KeypointChain& chain, int terminal,
                                  const Raster<int>& labels, const Mask& segmented) {
  const Cluster& c = chain.clusters[static_cast<std::size_t>(terminal)];
  const Reach own = reach_from_cluster(c, labels, segmented);
  Raster<std::uint8_t> other(segmented.width(), segmented.height(), 0);
  for (int nb : chain.adjacency.neighbors[static_cast<std::size_t>(terminal)])
    for (const Pixel p :
         reach_from_cluster(chain.clusters[static_cast<std::size_t>(nb)], labels, segmented).unclustered)
      other(p) = 1;
  std::vector<Pixel> tail;
  for (const Pixel p : own.unclustered)
    if (!other(p)) tail.push_back(p);
  return tail;
}

Pixel farthest_from(const std::vector<Pixel>& pixels, const Vec3& k) {
  Pixel best = pixels.front();
  double best_d = -1.0;
  for (const Pixel p : pixels) {
    const double d = std::hypot(p.x - k.x(), p.y - k.y());
    if (d > best_d) {
      best_d = d;
      best = p;
    }
  }
  return best;
}

}  // namespace

KeypointChain extend_endpoints(KeypointChain chain, const Mask& segmented, const DepthField&,
                               const ClusterParams& params) {
  if (chain.keypoints.size() < 2) return chain;
  const auto labels = cluster_labels(chain.clusters, segmented.width(), segmented.height());
  const int first = chain.cluster_of.front();
  const int last = chain.cluster_of.back();
  if (first < 0 || last < 0) return chain;  // already extended

  auto front_tail = unreached_tail(chain, first, labels, segmented);
  auto back_tail = unreached_tail(chain, last, labels, segmented);
  const auto min_tail = static_cast<std::size_t>(params.endpoint_unreached_min);

  if (back_tail.size() >= min_tail) {
    const Vec3 k = chain.keypoints.back();
    const Pixel tip = farthest_from(back_tail, k);
    chain.keypoints.emplace_back(tip.x, tip.y, k.z());
    chain.cluster_of.push_back(-1);
    chain.back_tail = std::move(back_tail);
  }
  if (front_tail.size() >= min_tail) {
    const Vec3 k = chain.keypoints.front();
    const Pixel tip = farthest_from(front_tail, k);
    chain.keypoints.insert(chain.keypoints.begin(), Vec3(tip.x, tip.y, k.z()));
    chain.cluster_of.insert(chain.cluster_of.begin(), -1);
    chain.front_tail = std::move(front_tail);
  }
  return chain;
}

std::string chain_to_json(const KeypointChain& chain) {
  nlohmann::ordered_json j;
  auto clusters = nlohmann::ordered_json::array();
  for (const auto& c : chain.clusters) {
    nlohmann::ordered_json cj;
    cj["id"] = c.id;
    auto px = nlohmann::ordered_json::array();
    for (const Pixel p : c.pixels) px.push_back({p.x, p.y});
    cj["pixels"] = px;
    clusters.push_back(cj);
  }
  j["clusters"] = clusters;
  auto edges = nlohmann::ordered_json::array();
  for (std::size_t a = 0; a < chain.adjacency.size(); ++a)
    for (int b : chain.adjacency.neighbors[a])
      if (static_cast<int>(a) < b) edges.push_back({static_cast<int>(a), b});
  j["edges"] = edges;
  auto kps = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < chain.keypoints.size(); ++i) {
    const auto& k = chain.keypoints[i];
    kps.push_back({k.x(), k.y(), k.z(), static_cast<int>(i) + 1});
  }
  j["keypoints"] = kps;
  j["keypoint_clusters"] = chain.cluster_of;
  auto dense = nlohmann::ordered_json::array();
  for (const auto& h : chain.dense) dense.push_back({h.x(), h.y(), h.z()});
  j["dense"] = dense;
  return j.dump(1) + "\n";
}

}  // namespace threadrecon
