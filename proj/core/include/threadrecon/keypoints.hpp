#pragma once

#include <set>
#include <string>
#include <vector>

#include "threadrecon/bspline.hpp"
#include "threadrecon/image.hpp"
#include "threadrecon/stereo.hpp"

namespace threadrecon {

struct ClusterParams {
  int max_cluster_size = 50;
  int min_cluster_size = 5;
  int neighbor_manhattan_radius = 2;
  int solidify_radius = 2;
  int endpoint_unreached_min = 10;

  void validate() const;
};

/// Group of left-image pixels whose reliable 3D points define one keypoint.
///
/// `pixels` grows during solidification; `points3d` and `centroid` keep the
/// reliable points the cluster was created from.
struct Cluster {
  int id = 0;
  std::vector<Pixel> pixels;
  std::vector<Vec3> points3d;
  Vec3 centroid = Vec3::Zero();
};

/// Undirected keypoint adjacency; neighbors[i] lists cluster ids adjacent to i.
struct AdjacencyGraph {
  std::vector<std::set<int>> neighbors;

  std::size_t size() const { return neighbors.size(); }
  std::size_t degree(int i) const { return neighbors[static_cast<std::size_t>(i)].size(); }
  bool connected(int a, int b) const { return neighbors[static_cast<std::size_t>(a)].count(b) > 0; }
  std::size_t edge_count() const;
};

/// Ordered keypoints along the thread.
///
/// keypoints[i] has order index i + 1. cluster_of[i] is the id of the cluster
/// the keypoint came from, or -1 for keypoints added at the thread ends.
/// `dense` is H (keypoints plus densified points) in order, and
/// keypoint_in_dense[i] is the position of keypoints[i] inside `dense`.
struct KeypointChain {
  std::vector<Cluster> clusters;
  AdjacencyGraph adjacency;
  std::vector<Vec3> keypoints;
  std::vector<int> cluster_of;
  std::vector<Pixel> front_tail;  // unclaimed pixels behind a prepended endpoint
  std::vector<Pixel> back_tail;   // unclaimed pixels behind an appended endpoint
  std::size_t dropped_keypoints = 0;

  std::vector<Vec3> dense;
  std::vector<int> keypoint_in_dense;
};

/// Valid pixels whose reliability strictly exceeds the threshold, row-major.
/// Throws StageError(KeypointGraph, "no reliable pixels") if none qualify.
std::vector<Pixel> prune_reliable(const DepthField& field, const MatchParams& params);

/// Repeated BFS over reliable pixels (Manhattan radius neighbors), seeded in
/// row-major order. Throws StageError(KeypointGraph, "no keypoints").
std::vector<Cluster> cluster(const std::vector<Pixel>& reliable, const DepthField& field,
                             const ClusterParams& params);

/// Grows each cluster by the unclaimed segmented pixels within Chebyshev
/// distance solidify_radius; lower ids claim contested pixels first.
std::vector<Cluster> solidify(std::vector<Cluster> clusters, const Mask& segmented,
                              const ClusterParams& params);

/// Per-pixel owning cluster id, or -1.
Raster<int> cluster_labels(const std::vector<Cluster>& clusters, int width, int height);

/// Unclustered segmented pixels reachable from cluster `id` by 8-connected BFS
/// that never enters another cluster. Also reports the foreign clusters met.
struct Reach {
  std::vector<Pixel> unclustered;
  std::set<int> touched;
};
Reach reach_from_cluster(const Cluster& c, const Raster<int>& labels, const Mask& segmented);

AdjacencyGraph build_adjacency(const std::vector<Cluster>& clusters, const Mask& segmented);

/// Nearest-neighbor walk from the lowest-index degree-1 keypoint. Returns
/// keypoint indices in visit order; keypoints the walk cannot reach without
/// revisiting are left out. Throws StageError(KeypointGraph, ...) with
/// "fragmented thread" or "no endpoint found".
std::vector<int> order_keypoints(const AdjacencyGraph& graph, const std::vector<Vec3>& keypoints);

/// Runs solidify/adjacency/ordering on clusters and assembles the chain.
KeypointChain build_chain(std::vector<Cluster> clusters, const Mask& segmented,
                          const ClusterParams& params);

/// Adds a keypoint at the far end of a long unclaimed tail behind either
/// terminal keypoint.
KeypointChain extend_endpoints(KeypointChain chain, const Mask& segmented, const DepthField& field,
                               const ClusterParams& params);

/// Clusters and ordered keypoints as JSON for diagnostics.
std::string chain_to_json(const KeypointChain& chain);

}  // namespace threadrecon
