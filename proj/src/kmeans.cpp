#include "edt/kmeans.hpp"

#include <cmath>
#include <limits>

namespace edt {

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    double x = a[i] - b[i];
    d += x * x;
  }
  return d;
}

}  // namespace

KMeansResult kmeans(const std::vector<std::vector<double>>& points, int k,
                    uint64_t seed, int max_iters, double tol) {
  int n = static_cast<int>(points.size());
  if (n == 0) throw UsageError("k-means needs at least one point");
  if (k < 1) throw UsageError("k-means needs k >= 1");
  k = std::min(k, n);
  size_t dim = points[0].size();
  for (const auto& p : points) {
    if (p.size() != dim) throw UsageError("k-means points differ in dimension");
  }

  uint64_t rng = seed ^ 0x6b6d65616e73ULL;
  KMeansResult res;
  res.centroids.reserve(k);

  // distance-weighted seeding
  int first = static_cast<int>(splitmix_unit(rng) * n) % n;
  res.centroids.push_back(points[first]);
  std::vector<double> best_d(n, std::numeric_limits<double>::infinity());
  while (static_cast<int>(res.centroids.size()) < k) {
    double total = 0;
    for (int i = 0; i < n; ++i) {
      best_d[i] = std::min(best_d[i], sq_dist(points[i], res.centroids.back()));
      total += best_d[i];
    }
    int pick = 0;
    if (total <= 0) {
      // all points coincide with existing centroids; take the first unused
      pick = static_cast<int>(res.centroids.size()) % n;
    } else {
      double target = splitmix_unit(rng) * total;
      double run = 0;
      for (int i = 0; i < n; ++i) {
        run += best_d[i];
        if (run >= target) {
          pick = i;
          break;
        }
      }
    }
    res.centroids.push_back(points[pick]);
  }

  res.assignment.assign(n, 0);
  for (int iter = 1; iter <= max_iters; ++iter) {
    res.iterations = iter;
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      int who = 0;
      for (int c = 0; c < k; ++c) {
        double d = sq_dist(points[i], res.centroids[c]);
        if (d < best) {
          best = d;
          who = c;
        }
      }
      res.assignment[i] = who;
    }

    std::vector<std::vector<double>> next(k, std::vector<double>(dim, 0.0));
    std::vector<int> counts(k, 0);
    for (int i = 0; i < n; ++i) {
      counts[res.assignment[i]] += 1;
      for (size_t j = 0; j < dim; ++j) next[res.assignment[i]][j] += points[i][j];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] == 0) {
        // re-seed from the point farthest from its centroid
        double far_d = -1;
        int far_i = 0;
        for (int i = 0; i < n; ++i) {
          double d = sq_dist(points[i], res.centroids[res.assignment[i]]);
          if (d > far_d) {
            far_d = d;
            far_i = i;
          }
        }
        next[c] = points[far_i];
        counts[c] = 1;
        res.assignment[far_i] = c;
      } else {
        for (size_t j = 0; j < dim; ++j) next[c][j] /= counts[c];
      }
    }

    double moved = 0;
    for (int c = 0; c < k; ++c) moved = std::max(moved, sq_dist(next[c], res.centroids[c]));
    res.centroids = std::move(next);
    if (moved < tol * tol) break;
  }

  // final assignment against the settled centroids
  for (int i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    int who = 0;
    for (int c = 0; c < k; ++c) {
      double d = sq_dist(points[i], res.centroids[c]);
      if (d < best) {
        best = d;
        who = c;
      }
    }
    res.assignment[i] = who;
  }
  return res;
}

int nearest_member(const std::vector<std::vector<double>>& points,
                   const KMeansResult& result, int cluster) {
  double best = std::numeric_limits<double>::infinity();
  int who = -1;
  for (int i = 0; i < static_cast<int>(points.size()); ++i) {
    if (result.assignment[i] != cluster) continue;
    double d = sq_dist(points[i], result.centroids[cluster]);
    if (d < best) {
      best = d;
      who = i;
    }
  }
  return who;
}

}  // namespace edt
