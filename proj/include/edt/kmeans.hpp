#pragma once

#include <cstdint>
#include <vector>

#include "edt/common.hpp"

namespace edt {

struct KMeansResult {
  std::vector<int> assignment;                 // point -> cluster
  std::vector<std::vector<double>> centroids;  // k x dim
  int iterations = 0;
};

// Lloyd's algorithm with distance-weighted seeding. Deterministic under seed;
// ties in assignment go to the lowest cluster index. k is clamped to the
// number of points. Empty clusters re-seed from the farthest point.
KMeansResult kmeans(const std::vector<std::vector<double>>& points, int k,
                    uint64_t seed, int max_iters = 100, double tol = 1e-4);

// Index of the point nearest to a centroid, restricted to members of that
// cluster; lowest index wins ties.
int nearest_member(const std::vector<std::vector<double>>& points,
                   const KMeansResult& result, int cluster);

}  // namespace edt
